//! Monte Carlo ELBO estimation and the AdamW optimization loop.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::bench::Dataset;
use crate::conjugate::{log_marginal_tape, PriorCache};
use crate::numerics::{stream_id, RandomSource};
use crate::soft_relax::{
    sample_soft, soft_eval, ParamLayout, TempOverrides, TempSchedule, Temperatures,
    VariationalParams,
};
use crate::sym_tree::OperatorSet;
use crate::tree_prior::{kl_total, PriorConfig};
use crate::{Error, Result};

pub(crate) const STREAM_INIT: u64 = 0x696e;
pub(crate) const STREAM_ELBO: u64 = 0x656c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub mc_samples: usize,
    pub learning_rate: f64,
    pub clip: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub schedule: TempSchedule,
    #[serde(default)]
    pub temp_overrides: TempOverrides,
    /// Standard deviation of the initial categorical logits.
    pub init_sd: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            mc_samples: 8,
            learning_rate: 5e-5,
            clip: 1.0,
            betas: (0.9, 0.99),
            adam_eps: 1e-8,
            weight_decay: 0.0,
            seed: 0,
            schedule: TempSchedule::default(),
            temp_overrides: TempOverrides::default(),
            init_sd: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.mc_samples == 0 {
            return bad("mc_samples must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad("Adam betas must lie in [0,1)");
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) || !(self.init_sd >= 0.0) {
            return bad("adam_eps must be positive; weight_decay and init_sd non-negative");
        }
        self.schedule.validate()
    }

    pub fn temperatures(&self, step: usize) -> Temperatures {
        self.temp_overrides.apply(self.schedule.temperature(step))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Bias-corrected Adam update with decoupled weight decay. Returns the
/// deltas to add to `params` when minimizing.
pub fn adamw_step(state: &mut OptimizerState, params: &[f64], grads: &[f64], cfg: &TrainConfig) -> Vec<f64> {
    let (b1, b2) = cfg.betas;
    state.t += 1;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let mut delta = Vec::with_capacity(grads.len());
    for i in 0..grads.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        delta.push(-cfg.learning_rate * (mh / (vh.sqrt() + cfg.adam_eps) + cfg.weight_decay * params[i]));
    }
    delta
}

/// Scales `g` in place so that its Euclidean norm is at most `c`; returns the
/// norm before clipping.
pub fn clip_global_norm(g: &mut [f64], c: f64) -> f64 {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > c {
        let s = c / norm;
        g.iter_mut().for_each(|v| *v *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboEstimate {
    pub value: f64,
    pub kl: f64,
    /// Per-sample log marginal likelihoods (stops early at the first
    /// non-finite sample).
    pub log_marginals: Vec<f64>,
    /// Gradient of the ELBO with respect to φ; `None` when not finite.
    pub grad: Option<Vec<f64>>,
}

/// Everything the estimator needs besides φ.
pub struct ElboContext<'a> {
    pub data: &'a Dataset,
    pub prior: &'a PriorConfig,
    pub cache: PriorCache<f64>,
    pub ops: &'a OperatorSet,
}

impl<'a> ElboContext<'a> {
    pub fn new(data: &'a Dataset, prior: &'a PriorConfig, ops: &'a OperatorSet) -> Result<Self> {
        Ok(Self {
            data,
            prior,
            cache: prior.nig.precompute()?,
            ops,
        })
    }
}

/// Reusable tapes for repeated ELBO evaluations.
#[derive(Default)]
pub struct Workspace {
    tape: Tape<f64>,
}

/// `(1/S) Σₛ log p(y | T_soft⁽ˢ⁾) − KL(q ∥ Π)` and its gradient. Sample `s`
/// draws its noise from stream `(step, s)` under `seed`.
pub fn approx_elbo(
    phi: &VariationalParams,
    ctx: &ElboContext<'_>,
    temps: Temperatures,
    mc_samples: usize,
    seed: u64,
    step: u64,
    ws: &mut Workspace,
) -> Result<ElboEstimate> {
    let layout = phi.layout;
    let topo = layout.topology();
    let tape = &mut ws.tape;

    tape.clear();
    let nodes = phi.to_tape(tape)?;
    let kl = kl_total(tape, &nodes, ctx.prior, topo)?;
    let kl_value = kl.value();
    let mut grad: Option<Vec<f64>> = tape
        .backward(kl)
        .ok()
        .map(|g| g.wrt(nodes.nodes()).into_iter().map(|v| -v).collect());

    let mut log_marginals = Vec::with_capacity(mc_samples);
    let mut sum = 0.0;
    if ctx.data.n() > 0 {
        let inv_s = 1.0 / mc_samples as f64;
        for s in 0..mc_samples {
            let mut src = RandomSource::new(seed, stream_id(&[STREAM_ELBO, step, s as u64]));
            tape.clear();
            let nodes = phi.to_tape(tape)?;
            let sample = sample_soft(tape, &nodes, temps, &mut src);
            let design = soft_eval(tape, &sample, &ctx.data.x, ctx.ops, topo);
            let lm = log_marginal_tape(tape, &design, &ctx.data.y, &ctx.prior.nig, &ctx.cache)?;
            log_marginals.push(lm.value());
            sum += lm.value();
            match (tape.backward(lm), grad.as_mut()) {
                (Ok(g), Some(acc)) => {
                    for (a, v) in acc.iter_mut().zip(g.wrt(nodes.nodes())) {
                        *a += inv_s * v;
                    }
                }
                _ => {
                    grad = None;
                    break;
                }
            }
        }
    }
    let value = if log_marginals.len() == mc_samples || ctx.data.n() == 0 {
        let mc = if ctx.data.n() > 0 { sum / mc_samples as f64 } else { 0.0 };
        mc - kl_value
    } else {
        f64::NAN
    };
    if let Some(g) = &grad {
        if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
            grad = None;
        }
    }
    Ok(ElboEstimate {
        value,
        kl: kl_value,
        log_marginals,
        grad,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub tau: f64,
    pub elbo: f64,
    pub grad_norm: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub init: VariationalParams,
    pub phi: VariationalParams,
    pub trace: Vec<TraceRow>,
    pub skipped: usize,
}

impl FitResult {
    pub fn applied(&self) -> usize {
        self.trace.len() - self.skipped
    }
}

pub fn write_trace_csv<W: std::io::Write>(trace: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "tau", "elbo", "grad_norm", "skipped"])?;
    for r in trace {
        w.write_record(&[
            r.step.to_string(),
            format!("{:?}", r.tau),
            format!("{:?}", r.elbo),
            format!("{:?}", r.grad_norm),
            (r.skipped as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Initial φ for a fit: prior-matched gates and small Gaussian categorical
/// logits drawn from the seed's initialization stream.
pub fn initial_params(layout: ParamLayout, prior: &PriorConfig, train: &TrainConfig) -> VariationalParams {
    let mut src = RandomSource::new(train.seed, stream_id(&[STREAM_INIT]));
    VariationalParams::init(layout, prior, train.init_sd, &mut src)
}

/// Runs `train.steps` AdamW steps on the negative ELBO. Steps with a
/// non-finite objective or gradient leave φ and the optimizer untouched.
pub fn fit(
    data: &Dataset,
    prior: &PriorConfig,
    train: &TrainConfig,
    ops: &OperatorSet,
    k: usize,
    depth: usize,
) -> Result<FitResult> {
    if data.n() == 0 || data.p() == 0 {
        return Err(Error::Data("training needs at least one row and one feature".into()));
    }
    train.validate()?;
    prior.validate()?;
    check_prior_shape(prior, k, ops.len(), data.p())?;
    let layout = ParamLayout::new(k, depth, ops.len(), data.p());
    let init = initial_params(layout, prior, train);
    let ctx = ElboContext::new(data, prior, ops)?;
    let mut ws = Workspace::default();
    let mut phi = init.clone();
    let mut opt = OptimizerState::new(layout.len());
    let mut trace = Vec::with_capacity(train.steps);
    let mut skipped = 0;
    for step in 1..=train.steps {
        let tau = train.schedule.temperature(step);
        let est = approx_elbo(&phi, &ctx, train.temperatures(step), train.mc_samples, train.seed, step as u64, &mut ws)?;
        match est.grad {
            Some(g) => {
                let mut gj: Vec<f64> = g.into_iter().map(|v| -v).collect();
                let norm = clip_global_norm(&mut gj, train.clip);
                let delta = adamw_step(&mut opt, &phi.values, &gj, train);
                for (p, d) in phi.values.iter_mut().zip(delta) {
                    *p += d;
                }
                trace.push(TraceRow { step, tau, elbo: est.value, grad_norm: norm, skipped: false });
            }
            None => {
                skipped += 1;
                trace.push(TraceRow { step, tau, elbo: est.value, grad_norm: f64::NAN, skipped: true });
            }
        }
    }
    if train.steps > 0 && skipped == train.steps {
        return Err(Error::NoValidStep);
    }
    Ok(FitResult { init, phi, trace, skipped })
}

pub(crate) fn check_prior_shape(prior: &PriorConfig, k: usize, n_ops: usize, p: usize) -> Result<()> {
    for (context, expected, found) in [
        ("prior dimension", k + 1, prior.nig.dim()),
        ("operator concentrations", n_ops, prior.eta_op.len()),
        ("feature concentrations", p, prior.eta_ft.len()),
    ] {
        if expected != found {
            return Err(Error::DimensionMismatch { context, expected, found });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{generate, GeneratorSpec, Model};
    use crate::numerics::DenseMatrix;
    use approx::assert_abs_diff_eq;

    fn small_sim1(n: usize) -> Dataset {
        generate(&GeneratorSpec::new(Model::Sim1, n, 0.0, 1)).unwrap()
    }

    #[test]
    fn adam_examples() {
        let cfg = TrainConfig::default();
        let mut s = OptimizerState::new(1);
        let d = adamw_step(&mut s, &[0.0], &[1.0], &cfg);
        assert_abs_diff_eq!(d[0], -5e-5 / (1.0 + 1e-8), epsilon = 1e-18);
        assert_eq!(s.t, 1);
        let mut s = OptimizerState::new(3);
        assert_eq!(adamw_step(&mut s, &[1.0, 2.0, 3.0], &[0.0; 3], &cfg), vec![0.0; 3]);
        let wd = TrainConfig { weight_decay: 0.01, ..TrainConfig::default() };
        let mut s = OptimizerState::new(1);
        let d = adamw_step(&mut s, &[1.0], &[0.0], &wd);
        assert_abs_diff_eq!(d[0], -5e-5 * 0.01, epsilon = 1e-20);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut src = RandomSource::new(1, 1);
        for _ in 0..1000 {
            let mut g: Vec<f64> = (0..20).map(|_| 10.0 * src.gaussian()).collect();
            clip_global_norm(&mut g, 1.0);
            assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1.0 + 1e-9);
        }
        let mut small = vec![0.1, 0.2];
        assert_abs_diff_eq!(clip_global_norm(&mut small, 1.0), 0.05f64.sqrt());
        assert_eq!(small, vec![0.1, 0.2]);
    }

    fn setup(n: usize) -> (Dataset, PriorConfig, OperatorSet) {
        let ops = OperatorSet::default();
        let data = small_sim1(n);
        let prior = PriorConfig::new(2, ops.len(), data.p());
        (data, prior, ops)
    }

    #[test]
    fn elbo_is_deterministic_and_kl_is_shared() {
        let (data, prior, ops) = setup(30);
        let layout = ParamLayout::new(2, 2, ops.len(), 3);
        let phi = initial_params(layout, &prior, &TrainConfig::default());
        let ctx = ElboContext::new(&data, &prior, &ops).unwrap();
        let mut ws = Workspace::default();
        let t = Temperatures::uniform(1.0);
        let a = approx_elbo(&phi, &ctx, t, 8, 3, 1, &mut ws).unwrap();
        let b = approx_elbo(&phi, &ctx, t, 8, 3, 1, &mut ws).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.grad, b.grad);
        let one = approx_elbo(&phi, &ctx, t, 1, 3, 1, &mut ws).unwrap();
        assert_eq!(one.kl, a.kl);
        assert_eq!(one.log_marginals.first(), a.log_marginals.first());
    }

    #[test]
    fn empty_data_gives_negative_kl() {
        let (data, prior, ops) = setup(5);
        let empty = Dataset::new(DenseMatrix::zeros(0, 3), vec![], data.feature_names.clone()).unwrap();
        let layout = ParamLayout::new(2, 2, ops.len(), 3);
        let phi = initial_params(layout, &prior, &TrainConfig::default());
        let ctx = ElboContext::new(&empty, &prior, &ops).unwrap();
        let e = approx_elbo(&phi, &ctx, Temperatures::uniform(1.0), 4, 0, 1, &mut Workspace::default()).unwrap();
        assert_eq!(e.value, -e.kl);
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let (data, prior, ops) = setup(20);
        let cfg = TrainConfig { steps: 0, ..TrainConfig::default() };
        let r = fit(&data, &prior, &cfg, &ops, 2, 2).unwrap();
        assert_eq!(r.phi, r.init);
        assert!(r.trace.is_empty());
    }

    #[test]
    fn log_of_negative_feature_skips_steps() {
        let ops = OperatorSet::parse("log,add").unwrap();
        let n = 30;
        let mut src = RandomSource::new(2, 0);
        let x = DenseMatrix::from_vec(n, 1, (0..n).map(|_| src.uniform(-5.0, -1.0)).collect()).unwrap();
        let data = Dataset::new(x, vec![1.0; n], vec!["x0".into()]).unwrap();
        let prior = PriorConfig::new(1, ops.len(), 1);
        let cfg = TrainConfig { steps: 5, mc_samples: 2, ..TrainConfig::default() };
        match fit(&data, &prior, &cfg, &ops, 1, 1) {
            Ok(r) => {
                assert!(r.skipped > 0);
                assert_eq!(r.trace.len(), 5);
            }
            Err(e) => assert!(matches!(e, Error::NoValidStep)),
        }
    }

    #[test]
    fn fit_is_deterministic_and_skips_do_not_mutate() {
        let (data, prior, ops) = setup(40);
        let cfg = TrainConfig { steps: 6, mc_samples: 2, seed: 9, ..TrainConfig::default() };
        let a = fit(&data, &prior, &cfg, &ops, 2, 2).unwrap();
        let b = fit(&data, &prior, &cfg, &ops, 2, 2).unwrap();
        assert_eq!(a, b);
        for r in &a.trace {
            assert_eq!(r.skipped, !r.elbo.is_finite() || r.grad_norm.is_nan());
        }
    }

    #[test]
    fn single_step_does_not_decrease_elbo_under_common_noise() {
        // smooth instance: only operators that are finite everywhere
        let ops = OperatorSet::parse("add,mul,sin,cos").unwrap();
        let data = generate(&GeneratorSpec::new(Model::Sim2, 60, 0.0, 4)).unwrap();
        let prior = PriorConfig::new(2, ops.len(), 3);
        let layout = ParamLayout::new(2, 2, ops.len(), 3);
        let cfg = TrainConfig { learning_rate: 1e-6, ..TrainConfig::default() };
        let phi = initial_params(layout, &prior, &cfg);
        let ctx = ElboContext::new(&data, &prior, &ops).unwrap();
        let mut ws = Workspace::default();
        let t = Temperatures::uniform(1.0);
        let before = approx_elbo(&phi, &ctx, t, 4, 5, 1, &mut ws).unwrap();
        let g = before.grad.clone().unwrap();
        let mut gj: Vec<f64> = g.iter().map(|v| -v).collect();
        clip_global_norm(&mut gj, cfg.clip);
        let delta = adamw_step(&mut OptimizerState::new(layout.len()), &phi.values, &gj, &cfg);
        let mut next = phi.clone();
        next.values.iter_mut().zip(delta).for_each(|(p, d)| *p += d);
        let after = approx_elbo(&next, &ctx, t, 4, 5, 1, &mut ws).unwrap();
        assert!(after.value >= before.value, "{} -> {}", before.value, after.value);
    }

    #[test]
    fn trace_csv_has_header() {
        let rows = vec![TraceRow { step: 1, tau: 1.0, elbo: -3.5, grad_norm: 0.5, skipped: false }];
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "step,tau,elbo,grad_norm,skipped\n1,1.0,-3.5,0.5,0\n");
    }
}
