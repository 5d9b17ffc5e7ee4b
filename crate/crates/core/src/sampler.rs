//! Hard ensembles drawn from the fitted variational distribution, scored with
//! posterior-mean coefficients and ranked by in-sample RMSE.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bench::{rmse, Dataset};
use crate::conjugate::{nig_update_cached, posterior_means, predict};
use crate::numerics::RandomSource;
use crate::soft_relax::VariationalParams;
use crate::sym_tree::{canonicalize, design_matrix, prune, render_ensemble, HardSkeleton, OperatorSet, SymbolicTree, Topology};
use crate::tree_prior::PriorConfig;
use crate::{Error, Result};

fn softmax_probs(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-node label probabilities of one tree.
struct NodeProbs {
    expand: f64,
    op: Vec<f64>,
    feature: Vec<f64>,
}

/// Draws `h` ensembles of `K` skeletons. Within a draw, trees and nodes are
/// visited in order and each internal node consumes its expansion bit, then
/// its operator; every node then draws its feature. Maximal-depth nodes are
/// forced to be leaves and carry operator index 0.
pub fn sample_hard(
    phi: &VariationalParams,
    h: usize,
    ops: &OperatorSet,
    src: &mut RandomSource,
) -> Result<Vec<Vec<HardSkeleton>>> {
    let layout = phi.layout;
    if layout.n_ops != ops.len() {
        return Err(Error::DimensionMismatch {
            context: "operator logits",
            expected: ops.len(),
            found: layout.n_ops,
        });
    }
    let topo = layout.topology();
    let probs: Vec<Vec<NodeProbs>> = (0..layout.k)
        .map(|j| {
            (0..topo.node_count())
                .map(|z| {
                    let internal = topo.is_internal(z);
                    NodeProbs {
                        expand: if internal { sigmoid(phi.ell(j, z)) } else { 0.0 },
                        op: if internal { softmax_probs(phi.a_op(j, z)) } else { Vec::new() },
                        feature: softmax_probs(phi.a_ft(j, z)),
                    }
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(h);
    for _ in 0..h {
        let ensemble = probs
            .iter()
            .map(|tree| {
                let mut s = HardSkeleton::leaves(topo);
                for (z, np) in tree.iter().enumerate() {
                    if topo.is_internal(z) {
                        s.expand[z] = src.bernoulli(np.expand);
                        s.op[z] = src.categorical(&np.op);
                    }
                    s.feature[z] = src.categorical(&np.feature);
                }
                s
            })
            .collect();
        out.push(ensemble);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Position of the draw in the sampled batch.
    pub index: usize,
    /// 1-based position in the ranking.
    pub rank: usize,
    pub trees: Vec<SymbolicTree>,
    pub canonical: Vec<String>,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub in_rmse: f64,
    pub out_rmse: Option<f64>,
    pub expression: String,
}

impl Candidate {
    pub fn render(&self, names: &[String], decimals: usize) -> String {
        render_ensemble(&self.trees, &self.beta, names, decimals)
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        let t = design_matrix(&self.trees, &data.x)?;
        predict(&t, &self.beta)
    }

    /// RMSE on `data`; non-finite predictions give a non-finite value.
    pub fn rmse_on(&self, data: &Dataset) -> f64 {
        match self.predict(data) {
            Ok(yhat) => rmse(&data.y, &yhat).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        }
    }
}

struct Scored {
    beta: Vec<f64>,
    sigma2: f64,
    in_rmse: f64,
}

fn score_one(trees: &[SymbolicTree], data: &Dataset, prior: &PriorConfig, cache: &crate::conjugate::PriorCache<f64>) -> Option<Scored> {
    let t = design_matrix(trees, &data.x).ok()?;
    let post = nig_update_cached(&t, &data.y, &prior.nig, cache).ok()?;
    let (beta, sigma2) = posterior_means(&post).ok()?;
    let yhat = predict(&t, &beta).ok()?;
    let in_rmse = rmse(&data.y, &yhat).ok()?;
    in_rmse.is_finite().then_some(Scored { beta, sigma2, in_rmse })
}

/// Prunes, fits and ranks each ensemble. Ensembles whose design matrix is not
/// finite (or whose posterior cannot be formed) are discarded. Ties keep draw
/// order.
pub fn score_candidates(
    ensembles: &[Vec<HardSkeleton>],
    topo: Topology,
    ops: &OperatorSet,
    data: &Dataset,
    prior: &PriorConfig,
) -> Result<Vec<Candidate>> {
    let cache = prior.nig.precompute()?;
    let mut memo: HashMap<Vec<SymbolicTree>, Option<Scored>> = HashMap::new();
    let mut out = Vec::new();
    for (index, ens) in ensembles.iter().enumerate() {
        let trees: Vec<SymbolicTree> = ens.iter().map(|s| prune(s, topo, ops)).collect();
        let scored = memo
            .entry(trees.clone())
            .or_insert_with(|| score_one(&trees, data, prior, &cache));
        if let Some(s) = scored {
            let expression = render_ensemble(&trees, &s.beta, &data.feature_names, 3);
            out.push(Candidate {
                index,
                rank: 0,
                canonical: trees.iter().map(canonicalize).collect(),
                trees,
                beta: s.beta.clone(),
                sigma2: s.sigma2,
                in_rmse: s.in_rmse,
                out_rmse: None,
                expression,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::NoValidCandidate);
    }
    out.sort_by(|a, b| a.in_rmse.total_cmp(&b.in_rmse).then(a.index.cmp(&b.index)));
    for (r, c) in out.iter_mut().enumerate() {
        c.rank = r + 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub rows: Vec<Candidate>,
    pub note: Option<String>,
}

/// First `k` candidates with expressions re-rendered at `decimals` places.
pub fn top_k(candidates: &[Candidate], k: usize, names: &[String], decimals: usize) -> Result<TopK> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let take = k.min(candidates.len());
    let rows = candidates[..take]
        .iter()
        .map(|c| Candidate {
            expression: c.render(names, decimals),
            ..c.clone()
        })
        .collect();
    let note = (k > candidates.len())
        .then(|| format!("requested {k} candidates, only {} available", candidates.len()));
    Ok(TopK { rows, note })
}

/// First occurrence of each distinct canonical tuple, in ranking order.
pub fn dedup(candidates: &[Candidate]) -> Vec<&Candidate> {
    let mut seen = std::collections::HashSet::new();
    candidates
        .iter()
        .filter(|c| seen.insert(c.canonical.clone()))
        .collect()
}
