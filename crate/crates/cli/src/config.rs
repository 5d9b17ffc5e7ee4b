//! Flat `key=value` run configuration.
//!
//! Resolution order: built-in defaults, then the config file, then flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vasst::{NigPrior, OperatorSet, PriorConfig, RunConfig, TempSchedule, TrainConfig};

use crate::CliError;

pub const KEYS: [&str; 18] = [
    "trees",
    "depth",
    "steps",
    "mc_samples",
    "lr",
    "clip",
    "alpha",
    "delta",
    "a0",
    "b0",
    "sigma0_scale",
    "tau_start",
    "tau_end",
    "tau_steps",
    "hard_samples",
    "seed",
    "operators",
    "test_fraction",
];

/// Partial settings: every key optional.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub trees: Option<usize>,
    pub depth: Option<usize>,
    pub steps: Option<usize>,
    pub mc_samples: Option<usize>,
    pub lr: Option<f64>,
    pub clip: Option<f64>,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub a0: Option<f64>,
    pub b0: Option<f64>,
    pub sigma0_scale: Option<f64>,
    pub tau_start: Option<f64>,
    pub tau_end: Option<f64>,
    pub tau_steps: Option<usize>,
    pub hard_samples: Option<usize>,
    pub seed: Option<u64>,
    pub operators: Option<String>,
    pub test_fraction: Option<f64>,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Input(format!("config key `{key}`: cannot parse `{value}`")))
}

impl Overrides {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "trees" => self.trees = Some(parse_value(key, v)?),
            "depth" => self.depth = Some(parse_value(key, v)?),
            "steps" => self.steps = Some(parse_value(key, v)?),
            "mc_samples" => self.mc_samples = Some(parse_value(key, v)?),
            "lr" => self.lr = Some(parse_value(key, v)?),
            "clip" => self.clip = Some(parse_value(key, v)?),
            "alpha" => self.alpha = Some(parse_value(key, v)?),
            "delta" => self.delta = Some(parse_value(key, v)?),
            "a0" => self.a0 = Some(parse_value(key, v)?),
            "b0" => self.b0 = Some(parse_value(key, v)?),
            "sigma0_scale" => self.sigma0_scale = Some(parse_value(key, v)?),
            "tau_start" => self.tau_start = Some(parse_value(key, v)?),
            "tau_end" => self.tau_end = Some(parse_value(key, v)?),
            "tau_steps" => self.tau_steps = Some(parse_value(key, v)?),
            "hard_samples" => self.hard_samples = Some(parse_value(key, v)?),
            "seed" => self.seed = Some(parse_value(key, v)?),
            "operators" => {
                OperatorSet::parse(v).map_err(|e| CliError::Input(format!("config key `operators`: {e}")))?;
                self.operators = Some(v.to_string());
            }
            "test_fraction" => self.test_fraction = Some(parse_value(key, v)?),
            _ => {
                return Err(CliError::Input(format!(
                    "unknown config key `{key}`; valid keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Values present in `other` win.
    pub fn merge(self, other: Overrides) -> Overrides {
        Overrides {
            trees: other.trees.or(self.trees),
            depth: other.depth.or(self.depth),
            steps: other.steps.or(self.steps),
            mc_samples: other.mc_samples.or(self.mc_samples),
            lr: other.lr.or(self.lr),
            clip: other.clip.or(self.clip),
            alpha: other.alpha.or(self.alpha),
            delta: other.delta.or(self.delta),
            a0: other.a0.or(self.a0),
            b0: other.b0.or(self.b0),
            sigma0_scale: other.sigma0_scale.or(self.sigma0_scale),
            tau_start: other.tau_start.or(self.tau_start),
            tau_end: other.tau_end.or(self.tau_end),
            tau_steps: other.tau_steps.or(self.tau_steps),
            hard_samples: other.hard_samples.or(self.hard_samples),
            seed: other.seed.or(self.seed),
            operators: other.operators.or(self.operators),
            test_fraction: other.test_fraction.or(self.test_fraction),
        }
    }
}

pub fn parse_config(text: &str) -> Result<Overrides, CliError> {
    let mut out = Overrides::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("config line {}: expected key=value", lineno + 1)))?;
        out.set(key.trim(), value)?;
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<Overrides, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub trees: usize,
    pub depth: usize,
    pub steps: usize,
    pub mc_samples: usize,
    pub lr: f64,
    pub clip: f64,
    pub alpha: f64,
    pub delta: f64,
    pub a0: f64,
    pub b0: f64,
    pub sigma0_scale: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub tau_steps: usize,
    pub hard_samples: usize,
    pub seed: u64,
    pub operators: String,
    /// Held-out fraction; `None` means no split.
    pub test_fraction: Option<f64>,
}

impl Default for Settings {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            trees: 3,
            depth: 3,
            steps: train.steps,
            mc_samples: train.mc_samples,
            lr: train.learning_rate,
            clip: train.clip,
            alpha: 0.95,
            delta: 2.0,
            a0: 2.0,
            b0: 2.0,
            sigma0_scale: 10.0,
            tau_start: train.schedule.tau_start,
            tau_end: train.schedule.tau_end,
            tau_steps: train.schedule.steps,
            hard_samples: 2000,
            seed: 0,
            operators: OperatorSet::default().to_string(),
            test_fraction: None,
        }
    }
}

impl Settings {
    pub fn resolve(base: Settings, o: &Overrides) -> Settings {
        Settings {
            trees: o.trees.unwrap_or(base.trees),
            depth: o.depth.unwrap_or(base.depth),
            steps: o.steps.unwrap_or(base.steps),
            mc_samples: o.mc_samples.unwrap_or(base.mc_samples),
            lr: o.lr.unwrap_or(base.lr),
            clip: o.clip.unwrap_or(base.clip),
            alpha: o.alpha.unwrap_or(base.alpha),
            delta: o.delta.unwrap_or(base.delta),
            a0: o.a0.unwrap_or(base.a0),
            b0: o.b0.unwrap_or(base.b0),
            sigma0_scale: o.sigma0_scale.unwrap_or(base.sigma0_scale),
            tau_start: o.tau_start.unwrap_or(base.tau_start),
            tau_end: o.tau_end.unwrap_or(base.tau_end),
            tau_steps: o.tau_steps.unwrap_or(base.tau_steps),
            hard_samples: o.hard_samples.unwrap_or(base.hard_samples),
            seed: o.seed.unwrap_or(base.seed),
            operators: o.operators.clone().unwrap_or(base.operators),
            test_fraction: o.test_fraction.or(base.test_fraction),
        }
    }

    /// The settings as a config file that resolves back to `self`.
    pub fn to_config_text(&self) -> String {
        let mut s = format!(
            "trees={}\ndepth={}\nsteps={}\nmc_samples={}\nlr={:?}\nclip={:?}\nalpha={:?}\ndelta={:?}\n\
             a0={:?}\nb0={:?}\nsigma0_scale={:?}\ntau_start={:?}\ntau_end={:?}\ntau_steps={}\n\
             hard_samples={}\nseed={}\noperators={}\n",
            self.trees,
            self.depth,
            self.steps,
            self.mc_samples,
            self.lr,
            self.clip,
            self.alpha,
            self.delta,
            self.a0,
            self.b0,
            self.sigma0_scale,
            self.tau_start,
            self.tau_end,
            self.tau_steps,
            self.hard_samples,
            self.seed,
            self.operators,
        );
        if let Some(f) = self.test_fraction {
            s.push_str(&format!("test_fraction={f:?}\n"));
        }
        s
    }

    pub fn operator_set(&self) -> Result<OperatorSet, CliError> {
        OperatorSet::parse(&self.operators).map_err(|e| CliError::Input(e.to_string()))
    }

    pub fn run_config(&self, p: usize) -> Result<RunConfig, CliError> {
        let ops = self.operator_set()?;
        let mut prior = PriorConfig::new(self.trees, ops.len(), p);
        prior.alpha = self.alpha;
        prior.delta = self.delta;
        prior.nig = NigPrior::isotropic(self.trees + 1, self.sigma0_scale, self.a0, self.b0);
        let train = TrainConfig {
            steps: self.steps,
            mc_samples: self.mc_samples,
            learning_rate: self.lr,
            clip: self.clip,
            seed: self.seed,
            schedule: TempSchedule {
                tau_start: self.tau_start,
                tau_end: self.tau_end,
                steps: self.tau_steps,
            },
            ..TrainConfig::default()
        };
        let cfg = RunConfig {
            trees: self.trees,
            depth: self.depth,
            ops,
            prior,
            train,
            hard_samples: self.hard_samples,
        };
        cfg.validate(p).map_err(|e| CliError::Input(e.to_string()))?;
        if let Some(f) = self.test_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(CliError::Input(format!("test_fraction must lie in (0,1), got {f}")));
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let s = Settings::resolve(Settings::default(), &parse_config("").unwrap());
        assert_eq!(s, Settings::default());
        assert_eq!((s.alpha, s.delta), (0.95, 2.0));
        assert_eq!((s.trees, s.depth, s.steps, s.mc_samples), (3, 3, 2000, 8));
        assert_eq!(s.lr, 5e-5);
        assert_eq!(s.hard_samples, 2000);
    }

    #[test]
    fn operator_restriction() {
        let o = parse_config("operators=add,mul,sin,cos\n").unwrap();
        let s = Settings::resolve(Settings::default(), &o);
        assert_eq!(s.operator_set().unwrap().len(), 4);
        assert_eq!(s.run_config(3).unwrap().prior.eta_op.len(), 4);
    }

    #[test]
    fn flags_override_file() {
        let file = parse_config("lr=5e-5\nsteps=10").unwrap();
        let mut flags = Overrides::default();
        flags.set("lr", "1e-4").unwrap();
        let s = Settings::resolve(Settings::default(), &file.merge(flags));
        assert_eq!(s.lr, 1e-4);
        assert_eq!(s.steps, 10);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = parse_config("learning_rate=1").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        for k in KEYS {
            assert!(msg.contains(k), "{k} missing from {msg}");
        }
    }

    #[test]
    fn comments_blank_lines_and_bad_values() {
        assert!(parse_config("# c\n\n  seed = 4 \n").unwrap().seed == Some(4));
        assert!(parse_config("seed=x").is_err());
        assert!(parse_config("operators=add,foo").is_err());
        assert!(parse_config("seed").is_err());
    }

    #[test]
    fn config_text_round_trips() {
        let mut s = Settings::default();
        s.lr = 1.0 / 3.0;
        s.test_fraction = Some(0.1);
        s.operators = "add,sin".into();
        let back = Settings::resolve(Settings::default(), &parse_config(&s.to_config_text()).unwrap());
        assert_eq!(back, s);
    }

    #[test]
    fn sigma0_scale_reaches_prior() {
        let mut s = Settings::default();
        s.sigma0_scale = 4.0;
        let cfg = s.run_config(2).unwrap();
        assert_eq!(cfg.prior.nig.sigma0.row(1)[1], 4.0);
        assert_eq!(cfg.prior.eta_ft.len(), 2);
    }
}
