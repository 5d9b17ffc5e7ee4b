//! Structural prior over skeletons and the closed-form KL divergence between
//! the mean-field variational family and that prior.

use serde::{Deserialize, Serialize};

use crate::autodiff::{log_softmax, softmax, Node, Tape};
use crate::conjugate::NigPrior;
use crate::numerics::log_mv_beta;
use crate::soft_relax::ParamNodes;
use crate::sym_tree::Topology;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub alpha: f64,
    pub delta: f64,
    pub eta_op: Vec<f64>,
    pub eta_ft: Vec<f64>,
    pub nig: NigPrior<f64>,
}

impl PriorConfig {
    /// `(α, δ) = (0.95, 2)`, unit Dirichlet concentrations and the default
    /// NIG prior for `k` trees.
    pub fn new(k: usize, n_ops: usize, p: usize) -> Self {
        Self {
            alpha: 0.95,
            delta: 2.0,
            eta_op: vec![1.0; n_ops],
            eta_ft: vec![1.0; p],
            nig: NigPrior::default_for(k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if self.eta_op.iter().chain(&self.eta_ft).any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::Config("Dirichlet concentrations must be positive".into()));
        }
        self.nig.validate()
    }
}

/// `α(1 + depth)^{−δ}`.
pub fn split_prob(depth: usize, cfg: &PriorConfig) -> f64 {
    cfg.alpha * (1.0 + depth as f64).powf(-cfg.delta)
}

/// `p̃ log(p̃/p) + (1−p̃) log((1−p̃)/(1−p))`.
pub fn kl_bernoulli<T: Real>(tape: &mut Tape<T>, p_tilde: Node<T>, p: T) -> Node<T> {
    let lp = tape.ln(p_tilde);
    let a = tape.add_const(lp, -p.ln());
    let t1 = tape.mul(p_tilde, a);
    let one = tape.constant(T::one());
    let q = tape.sub(one, p_tilde);
    let lq = tape.ln(q);
    let b = tape.add_const(lq, -(T::one() - p).ln());
    let t2 = tape.mul(q, b);
    tape.add(t1, t2)
}

/// Digamma nodes of a Dirichlet concentration vector, shared between the
/// Dirichlet KL and the expected categorical KLs.
#[derive(Debug, Clone)]
pub struct DirichletTerms<T> {
    pub eta: Vec<Node<T>>,
    pub sum: Node<T>,
    pub digamma: Vec<Node<T>>,
    pub digamma_sum: Node<T>,
}

impl<T: Real> DirichletTerms<T> {
    pub fn new(tape: &mut Tape<T>, eta: &[Node<T>]) -> Self {
        let sum = tape.sum(eta);
        let digamma = eta.iter().map(|&e| tape.digamma(e)).collect();
        let digamma_sum = tape.digamma(sum);
        Self {
            eta: eta.to_vec(),
            sum,
            digamma,
            digamma_sum,
        }
    }
}

/// `log B(η) − log B(η̃) + Σ (η̃ₖ − ηₖ)(Ψ(η̃ₖ) − Ψ(Ση̃))`.
pub fn kl_dirichlet_terms<T: Real>(
    tape: &mut Tape<T>,
    terms: &DirichletTerms<T>,
    eta: &[T],
) -> Result<Node<T>> {
    if eta.len() != terms.eta.len() {
        return Err(Error::DimensionMismatch {
            context: "Dirichlet concentrations",
            expected: eta.len(),
            found: terms.eta.len(),
        });
    }
    let log_b_prior = log_mv_beta(eta)?;
    let lg: Vec<_> = terms.eta.iter().map(|&e| tape.lgamma(e)).collect();
    let sum_lg = tape.sum(&lg);
    let lg_sum = tape.lgamma(terms.sum);
    // −log B(η̃) = lgamma(Ση̃) − Σ lgamma(η̃ₖ)
    let neg_log_b = tape.sub(lg_sum, sum_lg);
    let diffs: Vec<_> = terms
        .eta
        .iter()
        .zip(eta)
        .map(|(&et, &e)| tape.add_const(et, -e))
        .collect();
    let psis: Vec<_> = terms
        .digamma
        .iter()
        .map(|&d| tape.sub(d, terms.digamma_sum))
        .collect();
    let cross = tape.dot(&diffs, &psis);
    let s = tape.add(neg_log_b, cross);
    Ok(tape.add_const(s, log_b_prior))
}

pub fn kl_dirichlet<T: Real>(tape: &mut Tape<T>, eta_tilde: &[Node<T>], eta: &[T]) -> Result<Node<T>> {
    let terms = DirichletTerms::new(tape, eta_tilde);
    kl_dirichlet_terms(tape, &terms, eta)
}

/// `Σ π̃ₖ[log π̃ₖ − Ψ(η̃ₖ) + Ψ(Ση̃)]` given `log π̃` explicitly. Components with
/// `π̃ₖ = 0` contribute nothing.
pub fn expected_kl_categorical_with<T: Real>(
    tape: &mut Tape<T>,
    pi: &[Node<T>],
    log_pi: &[Node<T>],
    terms: &DirichletTerms<T>,
) -> Node<T> {
    let ent = tape.mix(pi, log_pi);
    let cross = tape.mix(pi, &terms.digamma);
    let mass = tape.sum(pi);
    let norm = tape.mul(mass, terms.digamma_sum);
    let a = tape.sub(ent, cross);
    tape.add(a, norm)
}

pub fn expected_kl_categorical<T: Real>(
    tape: &mut Tape<T>,
    pi_tilde: &[Node<T>],
    eta_tilde: &[Node<T>],
) -> Result<Node<T>> {
    if pi_tilde.len() != eta_tilde.len() {
        return Err(Error::DimensionMismatch {
            context: "categorical vs Dirichlet",
            expected: eta_tilde.len(),
            found: pi_tilde.len(),
        });
    }
    let terms = DirichletTerms::new(tape, eta_tilde);
    let log_pi: Vec<_> = pi_tilde.iter().map(|&p| tape.ln(p)).collect();
    Ok(expected_kl_categorical_with(tape, pi_tilde, &log_pi, &terms))
}

/// Full KL between the variational family and the prior. Maximal-depth nodes
/// contribute only their feature term (their expansion bit is fixed at 0 and
/// they carry no operator logits).
pub fn kl_total<T: Real>(
    tape: &mut Tape<T>,
    phi: &ParamNodes<T>,
    cfg: &PriorConfig,
    topo: Topology,
) -> Result<Node<T>> {
    let layout = phi.layout();
    let eta_op: Vec<Node<T>> = phi.log_eta_op().iter().map(|&l| tape.exp(l)).collect();
    let eta_ft: Vec<Node<T>> = phi.log_eta_ft().iter().map(|&l| tape.exp(l)).collect();
    let op_terms = DirichletTerms::new(tape, &eta_op);
    let ft_terms = DirichletTerms::new(tape, &eta_ft);
    let to_t = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
    let mut parts = vec![
        kl_dirichlet_terms(tape, &op_terms, &to_t(&cfg.eta_op))?,
        kl_dirichlet_terms(tape, &ft_terms, &to_t(&cfg.eta_ft))?,
    ];
    for j in 0..layout.k {
        for z in 0..topo.node_count() {
            if topo.is_internal(z) {
                let p = T::lit(split_prob(Topology::node_depth(z), cfg));
                let pt = tape.sigmoid(phi.ell(j, z));
                parts.push(kl_bernoulli(tape, pt, p));
                let logits = phi.a_op(j, z).to_vec();
                let pi = softmax(tape, &logits, T::one());
                let lp = log_softmax(tape, &logits);
                parts.push(expected_kl_categorical_with(tape, &pi, &lp, &op_terms));
            }
            let logits = phi.a_ft(j, z).to_vec();
            let pi = softmax(tape, &logits, T::one());
            let lp = log_softmax(tape, &logits);
            parts.push(expected_kl_categorical_with(tape, &pi, &lp, &ft_terms));
        }
    }
    Ok(tape.sum(&parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradient;
    use crate::numerics::{digamma, lgamma, RandomSource};
    use crate::soft_relax::{ParamLayout, VariationalParams};
    use approx::assert_abs_diff_eq;

    fn leaves(tape: &mut Tape<f64>, v: &[f64]) -> Vec<Node<f64>> {
        v.iter().map(|&x| tape.leaf(x).unwrap()).collect()
    }

    #[test]
    fn split_prob_examples() {
        let c = PriorConfig::new(3, 9, 3);
        assert_eq!(split_prob(0, &c), 0.95);
        assert_abs_diff_eq!(split_prob(1, &c), 0.2375, epsilon = 1e-15);
        assert_abs_diff_eq!(split_prob(3, &c), 0.059375, epsilon = 1e-15);
    }

    #[test]
    fn bernoulli_examples() {
        let mut t = Tape::new();
        for (pt, p, want) in [(0.3, 0.3, 0.0), (0.5, 0.25, 0.1438410), (0.9, 0.1, 1.7577796)] {
            let n = t.leaf(pt).unwrap();
            let kl = kl_bernoulli(&mut t, n, p);
            assert_abs_diff_eq!(kl.value(), want, epsilon = 1e-7);
        }
    }

    #[test]
    fn dirichlet_examples() {
        let mut t = Tape::new();
        let a = leaves(&mut t, &[1.0, 1.0, 1.0]);
        assert_abs_diff_eq!(kl_dirichlet(&mut t, &a, &[1.0, 1.0, 1.0]).unwrap().value(), 0.0, epsilon = 1e-14);
        let b = leaves(&mut t, &[2.0, 1.0]);
        assert_abs_diff_eq!(kl_dirichlet(&mut t, &b, &[1.0, 1.0]).unwrap().value(), 0.1931472, epsilon = 1e-7);
        let c = leaves(&mut t, &[1.0, 2.0]);
        assert_abs_diff_eq!(kl_dirichlet(&mut t, &c, &[1.0, 1.0]).unwrap().value(), 0.1931472, epsilon = 1e-7);
        assert!(kl_dirichlet(&mut t, &c, &[1.0]).is_err());
    }

    #[test]
    fn categorical_examples() {
        let mut t = Tape::new();
        let eta = leaves(&mut t, &[1.0, 1.0]);
        let pi = leaves(&mut t, &[0.5, 0.5]);
        let v = expected_kl_categorical(&mut t, &pi, &eta).unwrap().value();
        assert_abs_diff_eq!(v, 1.0 - 2f64.ln(), epsilon = 1e-12);
        let one_hot = vec![t.constant(1.0), t.constant(0.0)];
        let v = expected_kl_categorical(&mut t, &one_hot, &eta).unwrap().value();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        let single_eta = leaves(&mut t, &[1.0]);
        let single_pi = vec![t.constant(1.0)];
        let v = expected_kl_categorical(&mut t, &single_pi, &single_eta).unwrap().value();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-14);
    }

    fn kl_value(phi: &VariationalParams, cfg: &PriorConfig, topo: Topology) -> f64 {
        let mut t = Tape::new();
        let nodes = phi.to_tape(&mut t).unwrap();
        kl_total(&mut t, &nodes, cfg, topo).unwrap().value()
    }

    #[test]
    fn prior_matched_init_has_zero_dirichlet_and_positive_structure() {
        let topo = Topology::new(2);
        let cfg = PriorConfig::new(2, 4, 3);
        let layout = ParamLayout::new(2, 2, 4, 3);
        let phi = VariationalParams::prior_matched(layout, &cfg);
        let total = kl_value(&phi, &cfg, topo);
        // structural Jensen gap: uniform π̃ with unit η̃ gives Ψ(m) − Ψ(1) − log m > 0 per node
        let gap = |m: f64| digamma(m).unwrap() - digamma(1.0).unwrap() - m.ln();
        let expected = 2.0 * (3.0 * gap(4.0) + 7.0 * gap(3.0));
        assert_abs_diff_eq!(total, expected, epsilon = 1e-10);
        assert!(total > 0.0);

        let empty = VariationalParams::prior_matched(ParamLayout::new(0, 2, 4, 3), &cfg);
        assert_abs_diff_eq!(kl_value(&empty, &cfg, topo), 0.0, epsilon = 1e-12);
    }

    /// Literal transcription of the composite KL with plain floats.
    fn transcription(phi: &VariationalParams, cfg: &PriorConfig, topo: Topology) -> f64 {
        let lb = |v: &[f64]| v.iter().map(|&x| lgamma(x).unwrap()).sum::<f64>() - lgamma(v.iter().sum::<f64>()).unwrap();
        let et_op: Vec<f64> = phi.log_eta_op().iter().map(|v| v.exp()).collect();
        let et_ft: Vec<f64> = phi.log_eta_ft().iter().map(|v| v.exp()).collect();
        let dir = |et: &[f64], e: &[f64]| {
            let s: f64 = et.iter().sum();
            lb(e) - lb(et)
                + et.iter().zip(e).map(|(a, b)| (a - b) * (digamma(*a).unwrap() - digamma(s).unwrap())).sum::<f64>()
        };
        let cat = |a: &[f64], et: &[f64]| {
            let m = a.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = a.iter().map(|v| (v - m).exp()).sum();
            let s: f64 = et.iter().sum();
            a.iter()
                .zip(et)
                .map(|(ai, ek)| {
                    let pi = (ai - m).exp() / z;
                    pi * (pi.ln() - digamma(*ek).unwrap() + digamma(s).unwrap())
                })
                .sum::<f64>()
        };
        let mut total = dir(&et_op, &cfg.eta_op) + dir(&et_ft, &cfg.eta_ft);
        for j in 0..phi.layout.k {
            for z in 0..topo.node_count() {
                if topo.is_internal(z) {
                    let pt = 1.0 / (1.0 + (-phi.ell(j, z)).exp());
                    let p = split_prob(Topology::node_depth(z), cfg);
                    total += pt * (pt / p).ln() + (1.0 - pt) * ((1.0 - pt) / (1.0 - p)).ln();
                    total += cat(phi.a_op(j, z), &et_op);
                }
                total += cat(phi.a_ft(j, z), &et_ft);
            }
        }
        total
    }

    fn random_phi(src: &mut RandomSource, layout: ParamLayout) -> VariationalParams {
        let values = (0..layout.len()).map(|_| src.uniform(-2.0, 2.0)).collect();
        VariationalParams::from_values(layout, values).unwrap()
    }

    #[test]
    fn kl_total_matches_transcription() {
        let mut src = RandomSource::new(9, 0);
        for (k, d) in [(1, 1), (2, 2), (3, 3)] {
            let layout = ParamLayout::new(k, d, 9, 3);
            let cfg = PriorConfig::new(k, 9, 3);
            for _ in 0..20 {
                let phi = random_phi(&mut src, layout);
                let a = kl_value(&phi, &cfg, Topology::new(d));
                let b = transcription(&phi, &cfg, Topology::new(d));
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn kl_total_is_nonnegative() {
        let mut src = RandomSource::new(10, 0);
        let layout = ParamLayout::new(2, 2, 5, 3);
        let cfg = PriorConfig::new(2, 5, 3);
        for _ in 0..1000 {
            let phi = random_phi(&mut src, layout);
            assert!(kl_value(&phi, &cfg, Topology::new(2)) >= 0.0);
        }
    }

    #[test]
    fn kl_total_gradient() {
        let mut src = RandomSource::new(11, 0);
        let layout = ParamLayout::new(2, 2, 4, 3);
        let cfg = PriorConfig::new(2, 4, 3);
        for _ in 0..5 {
            let phi = random_phi(&mut src, layout);
            let f = |t: &mut Tape<f64>, xs: &[Node<f64>]| {
                let nodes = ParamNodes::from_nodes(layout, xs.to_vec());
                kl_total(t, &nodes, &cfg, Topology::new(2)).unwrap()
            };
            assert!(check_gradient(f, &phi.values, 1e-6).unwrap() <= 1e-5);
        }
    }
}
