//! Serialized report formats.

use serde::{Deserialize, Serialize};
use vasst::sym_tree::{infix, EXP_CLAMP};
use vasst::{Candidate, RunConfig};

use crate::config::Settings;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub path: String,
    pub rows: usize,
    pub feature_names: Vec<String>,
    pub train_rows: usize,
    pub test_rows: usize,
}

/// Settings that have no config key but shape the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedSettings {
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub init_logit_sd: f64,
    pub mu0: f64,
    pub eta_op: f64,
    pub eta_ft: f64,
    pub exp_clamp: f64,
    pub gate_init: String,
    pub kl_note: String,
}

impl FixedSettings {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            adam_betas: cfg.train.betas,
            adam_eps: cfg.train.adam_eps,
            weight_decay: cfg.train.weight_decay,
            init_logit_sd: cfg.train.init_sd,
            mu0: cfg.prior.nig.mu0.first().copied().unwrap_or(0.0),
            eta_op: cfg.prior.eta_op.first().copied().unwrap_or(1.0),
            eta_ft: cfg.prior.eta_ft.first().copied().unwrap_or(1.0),
            exp_clamp: EXP_CLAMP,
            gate_init: "logit(alpha*(1+depth)^-delta)".into(),
            kl_note: "expansion and operator KL terms at depth-D nodes are constants and omitted".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub steps: usize,
    pub applied: usize,
    pub skipped: usize,
    pub initial_elbo: Option<f64>,
    pub final_elbo: Option<f64>,
    pub max_elbo: Option<f64>,
    pub final_tau: Option<f64>,
}

impl TraceSummary {
    pub fn from_trace(trace: &[vasst::trainer::TraceRow]) -> Self {
        let applied: Vec<f64> = trace.iter().filter(|r| !r.skipped).map(|r| r.elbo).collect();
        Self {
            steps: trace.len(),
            applied: applied.len(),
            skipped: trace.len() - applied.len(),
            initial_elbo: applied.first().copied(),
            final_elbo: applied.last().copied(),
            max_elbo: applied.iter().copied().reduce(f64::max),
            final_tau: trace.last().map(|r| r.tau),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub rank: usize,
    pub draw: usize,
    pub canonical: Vec<String>,
    pub infix: Vec<String>,
    pub expression: String,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub in_rmse: f64,
    pub out_rmse: Option<f64>,
}

impl CandidateRow {
    pub fn new(c: &Candidate, names: &[String], decimals: usize) -> Self {
        Self {
            rank: c.rank,
            draw: c.index,
            canonical: c.canonical.clone(),
            infix: c.trees.iter().map(|t| infix(t, names)).collect(),
            expression: c.render(names, decimals),
            beta: c.beta.clone(),
            sigma2: c.sigma2,
            in_rmse: c.in_rmse,
            out_rmse: c.out_rmse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub command: String,
    pub data: DataSummary,
    pub config: Settings,
    pub fixed: FixedSettings,
    pub seed: u64,
    pub trace: TraceSummary,
    pub sampled: usize,
    pub valid_candidates: usize,
    pub distinct_candidates: usize,
    /// Top distinct candidates in ranking order.
    pub candidates: Vec<CandidateRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

impl FitReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummaryRow {
    pub model: String,
    pub noise: f64,
    pub repeats: usize,
    pub mean_rmse: f64,
    pub sd_rmse: f64,
    pub mean_seconds: Option<f64>,
    pub single_run: bool,
}

impl BenchSummaryRow {
    pub const HEADER: &'static str = "model,noise,repeats,mean_rmse,sd_rmse,mean_seconds,single_run";

    pub fn to_csv(&self) -> String {
        let secs = self.mean_seconds.map(|s| format!("{s:.3}")).unwrap_or_default();
        format!(
            "{}\n{},{},{},{:e},{:e},{},{}\n",
            Self::HEADER,
            self.model,
            self.noise,
            self.repeats,
            self.mean_rmse,
            self.sd_rmse,
            secs,
            self.single_run
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_csv_shape() {
        let row = BenchSummaryRow {
            model: "sim1".into(),
            noise: 0.1,
            repeats: 1,
            mean_rmse: 0.1,
            sd_rmse: 0.0,
            mean_seconds: None,
            single_run: true,
        };
        let csv = row.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], BenchSummaryRow::HEADER);
        assert_eq!(lines[1], "sim1,0.1,1,1e-1,0e0,,true");
    }

    #[test]
    fn trace_summary_ignores_skipped_rows() {
        use vasst::trainer::TraceRow;
        let row = |step, elbo, skipped| TraceRow {
            step,
            tau: 1.0,
            elbo,
            grad_norm: 0.0,
            skipped,
        };
        let s = TraceSummary::from_trace(&[row(0, f64::NAN, true), row(1, -3.0, false), row(2, -2.0, false)]);
        assert_eq!((s.steps, s.applied, s.skipped), (3, 2, 1));
        assert_eq!(s.initial_elbo, Some(-3.0));
        assert_eq!(s.max_elbo, Some(-2.0));
    }
}
