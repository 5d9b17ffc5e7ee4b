//! End-to-end run: fit, sample hard ensembles, score and rank.

use serde::{Deserialize, Serialize};

use crate::bench::Dataset;
use crate::numerics::{stream_id, RandomSource};
use crate::sampler::{sample_hard, score_candidates, Candidate};
use crate::sym_tree::{OperatorSet, Topology};
use crate::trainer::{check_prior_shape, fit, FitResult, TrainConfig};
use crate::tree_prior::PriorConfig;
use crate::{Error, Result};

const STREAM_HARD: u64 = 0x6861;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub trees: usize,
    pub depth: usize,
    pub ops: OperatorSet,
    pub prior: PriorConfig,
    pub train: TrainConfig,
    pub hard_samples: usize,
}

impl RunConfig {
    /// Defaults: three trees of depth three, the nine-operator set, 2000
    /// hard samples.
    pub fn new(p: usize) -> Self {
        Self::with_shape(3, 3, OperatorSet::default(), p)
    }

    pub fn with_shape(trees: usize, depth: usize, ops: OperatorSet, p: usize) -> Self {
        Self {
            trees,
            depth,
            prior: PriorConfig::new(trees, ops.len(), p),
            ops,
            train: TrainConfig::default(),
            hard_samples: 2000,
        }
    }

    pub fn topology(&self) -> Topology {
        Topology::new(self.depth)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.hard_samples == 0 {
            return Err(Error::Config("hard_samples must be at least 1".into()));
        }
        self.train.validate()?;
        self.prior.validate()?;
        check_prior_shape(&self.prior, self.trees, self.ops.len(), p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub fit: FitResult,
    /// All valid candidates in ranking order.
    pub candidates: Vec<Candidate>,
    pub sampled: usize,
}

impl RunOutcome {
    pub fn best(&self) -> &Candidate {
        &self.candidates[0]
    }
}

/// Fits on `train`, draws `hard_samples` ensembles, ranks them by in-sample
/// RMSE and, when `test` is given, fills in held-out RMSEs.
pub fn run(train: &Dataset, test: Option<&Dataset>, cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate(train.p())?;
    let fit = fit(train, &cfg.prior, &cfg.train, &cfg.ops, cfg.trees, cfg.depth)?;
    let mut src = RandomSource::new(cfg.train.seed, stream_id(&[STREAM_HARD]));
    let ensembles = sample_hard(&fit.phi, cfg.hard_samples, &cfg.ops, &mut src)?;
    let mut candidates = score_candidates(&ensembles, cfg.topology(), &cfg.ops, train, &cfg.prior)?;
    if let Some(test) = test {
        for c in &mut candidates {
            c.out_rmse = Some(c.rmse_on(test));
        }
    }
    Ok(RunOutcome {
        fit,
        candidates,
        sampled: ensembles.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{generate, split, GeneratorSpec, Model};

    #[test]
    fn small_run_is_deterministic() {
        let data = generate(&GeneratorSpec::new(Model::Sim1, 60, 0.0, 1)).unwrap();
        let (tr, te) = split(&data, 0.2, 1).unwrap();
        let mut cfg = RunConfig::with_shape(2, 2, OperatorSet::default(), 3);
        cfg.train.steps = 3;
        cfg.train.mc_samples = 2;
        cfg.hard_samples = 50;
        let a = run(&tr, Some(&te), &cfg).unwrap();
        let b = run(&tr, Some(&te), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sampled, 50);
        assert!(a.best().out_rmse.is_some());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let data = generate(&GeneratorSpec::new(Model::Sim1, 20, 0.0, 1)).unwrap();
        let mut cfg = RunConfig::new(3);
        cfg.trees = 2;
        assert!(run(&data, None, &cfg).is_err());
    }
}
