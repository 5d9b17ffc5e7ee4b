//! Total KL between the mean-field family and the structure prior, checked
//! against a Monte Carlo estimate of E_q[log q − log prior] over the joint
//! (π_op, π_ft, e, o, h).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use vasst::autodiff::Tape;
use vasst::numerics::lgamma;
use vasst::tree_prior::{kl_total, split_prob};
use vasst::{ParamLayout, PriorConfig, Topology, VariationalParams};

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|a| (a - m).exp()).sum::<f64>().ln();
    logits.iter().map(|a| a - lse).collect()
}

fn log_dirichlet(log_pi: &[f64], eta: &[f64]) -> f64 {
    let norm = lgamma(eta.iter().sum::<f64>()).unwrap() - eta.iter().map(|&e| lgamma(e).unwrap()).sum::<f64>();
    norm + eta.iter().zip(log_pi).map(|(e, l)| (e - 1.0) * l).sum::<f64>()
}

fn draw_dirichlet(rng: &mut ChaCha8Rng, dists: &[Gamma<f64>]) -> Vec<f64> {
    let g: Vec<f64> = dists.iter().map(|d| d.sample(rng)).collect();
    let lt = g.iter().sum::<f64>().ln();
    g.iter().map(|v| v.ln() - lt).collect()
}

fn draw_index(rng: &mut ChaCha8Rng, log_p: &[f64]) -> usize {
    let mut u: f64 = rng.random();
    for (i, l) in log_p.iter().enumerate() {
        u -= l.exp();
        if u < 0.0 {
            return i;
        }
    }
    log_p.len() - 1
}

#[test]
fn kl_total_matches_joint_monte_carlo() {
    const DRAWS: usize = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (k, depth, n_ops, p) = (2, 2, 3, 2);
    let layout = ParamLayout::new(k, depth, n_ops, p);
    let topo = Topology::new(depth);
    let mut prior = PriorConfig::new(k, n_ops, p);
    prior.eta_op = vec![1.0, 2.0, 0.7];
    prior.eta_ft = vec![1.5, 0.8];
    let values: Vec<f64> = (0..layout.len())
        .map(|_| 0.8 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let phi = VariationalParams::from_values(layout, values).unwrap();

    let mut tape = Tape::new();
    let nodes = phi.to_tape(&mut tape).unwrap();
    let analytic: f64 = kl_total(&mut tape, &nodes, &prior, topo).unwrap().value();

    let eta_op_t: Vec<f64> = phi.log_eta_op().iter().map(|v| v.exp()).collect();
    let eta_ft_t: Vec<f64> = phi.log_eta_ft().iter().map(|v| v.exp()).collect();
    let g_op: Vec<Gamma<f64>> = eta_op_t.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
    let g_ft: Vec<Gamma<f64>> = eta_ft_t.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
    let q_op: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|j| (0..topo.internal_count()).map(|z| log_softmax(phi.a_op(j, z))).collect())
        .collect();
    let q_ft: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|j| (0..topo.node_count()).map(|z| log_softmax(phi.a_ft(j, z))).collect())
        .collect();

    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..DRAWS {
        let lp_op = draw_dirichlet(&mut rng, &g_op);
        let lp_ft = draw_dirichlet(&mut rng, &g_ft);
        let mut f = log_dirichlet(&lp_op, &eta_op_t) - log_dirichlet(&lp_op, &prior.eta_op)
            + log_dirichlet(&lp_ft, &eta_ft_t)
            - log_dirichlet(&lp_ft, &prior.eta_ft);
        for j in 0..k {
            for z in 0..topo.node_count() {
                if topo.is_internal(z) {
                    let qe = 1.0 / (1.0 + (-phi.ell(j, z)).exp());
                    let pe = split_prob(Topology::node_depth(z), &prior);
                    f += if rng.random::<f64>() < qe {
                        (qe / pe).ln()
                    } else {
                        ((1.0 - qe) / (1.0 - pe)).ln()
                    };
                    let o = draw_index(&mut rng, &q_op[j][z]);
                    f += q_op[j][z][o] - lp_op[o];
                }
                let h = draw_index(&mut rng, &q_ft[j][z]);
                f += q_ft[j][z][h] - lp_ft[h];
            }
        }
        sum += f;
        sum2 += f * f;
    }
    let n = DRAWS as f64;
    let mean = sum / n;
    let se = ((sum2 / n - mean * mean) / n).sqrt();
    assert!(
        (analytic - mean).abs() <= 4.0 * se,
        "analytic {analytic} vs Monte Carlo {mean} ± {se}"
    );
}
