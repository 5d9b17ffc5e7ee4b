//! Datasets, synthetic generators, splitting and the benchmark loop.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::numerics::{stream_id, DenseMatrix, RandomSource};
use crate::pipeline::{run, RunConfig};
use crate::{Error, Matrix, Result};

const STREAM_FEATURES: u64 = 0x6665;
const STREAM_NOISE: u64 = 0x6e6f;
const STREAM_SPLIT: u64 = 0x7370;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Data(format!(
                "{} feature rows but {} responses",
                x.rows(),
                y.len()
            )));
        }
        if feature_names.len() != x.cols() {
            return Err(Error::Data(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                x.cols()
            )));
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in dataset".into()));
        }
        Ok(Self { x, y, feature_names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let p = self.p();
        let mut data = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            data.extend_from_slice(self.x.row(i));
        }
        Self {
            x: DenseMatrix::from_vec(rows.len(), p, data).expect("subset shape"),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Reads a headed CSV. The response is the column named `y` or `target`,
    /// otherwise the last column; every other column is a feature.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 2 {
            return Err(Error::Data("need at least one feature and one response column".into()));
        }
        let target = header
            .iter()
            .position(|h| h == "y" || h == "target")
            .unwrap_or(header.len() - 1);
        let names: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != target)
            .map(|(_, h)| h.clone())
            .collect();
        let mut data = Vec::new();
        let mut y = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Data(format!(
                    "row {} has {} cells, expected {}",
                    line + 1,
                    rec.len(),
                    header.len()
                )));
            }
            for (i, cell) in rec.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Data(format!("row {}: cannot parse '{cell}' as a number", line + 1))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!("row {}: non-finite value", line + 1)));
                }
                if i == target {
                    y.push(v);
                } else {
                    data.push(v);
                }
            }
        }
        if y.is_empty() {
            return Err(Error::Data("no data rows".into()));
        }
        let x = DenseMatrix::from_vec(y.len(), names.len(), data)?;
        Self::new(x, y, names)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.feature_names.clone();
        header.push(if self.feature_names.iter().any(|n| n == "y") {
            "target".into()
        } else {
            "y".into()
        });
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{:?}", self.y[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    Sim1,
    Sim2,
    Cl,
    Cpe,
    Fce,
    Ftc,
}

impl Model {
    pub const ALL: [Model; 6] = [Model::Sim1, Model::Sim2, Model::Cl, Model::Cpe, Model::Fce, Model::Ftc];

    pub fn name(self) -> &'static str {
        match self {
            Model::Sim1 => "sim1",
            Model::Sim2 => "sim2",
            Model::Cl => "CL",
            Model::Cpe => "CPE",
            Model::Fce => "FCE",
            Model::Ftc => "FTC",
        }
    }

    pub fn feature_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            Model::Sim1 => &["x0", "x1", "x2"],
            Model::Sim2 => &["x0", "x1", "x2"],
            Model::Cl => &["q1", "q2", "r", "epsilon"],
            Model::Cpe => &["m1", "m2", "r1", "r2", "G"],
            Model::Fce => &["q", "Ef", "v", "B", "theta"],
            Model::Ftc => &["A", "T1", "T2", "d", "kappa"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Default sampling interval of each feature.
    pub fn default_ranges(self) -> Vec<(f64, f64)> {
        match self {
            Model::Sim1 | Model::Sim2 => (0..3).map(|j| (2.0 * j as f64, 2.0 * j as f64 + 1.0)).collect(),
            m => vec![(1.0, 5.0); m.feature_names().len()],
        }
    }

    /// Noiseless response.
    pub fn response(self, x: &[f64]) -> f64 {
        match self {
            Model::Sim1 => x[0] * x[0] - x[1] + 0.5 * x[2] * x[2],
            Model::Sim2 => 6.0 * x[0].sin() * x[1].cos(),
            Model::Cl => 0.08 * x[0] * x[1] / (x[3] * x[2] * x[2]),
            Model::Cpe => x[4] * x[0] * x[1] * (1.0 / x[3] - 1.0 / x[2]),
            Model::Fce => x[0] * (x[1] + x[2] * x[3] * x[4].sin()),
            Model::Ftc => x[4] * x[0] * (x[2] - x[1]) / x[3],
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Model::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let names: Vec<_> = Model::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown model '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub model: Model,
    pub n: usize,
    pub noise_sd: f64,
    pub seed: u64,
    /// Per-feature sampling intervals; `None` uses the model defaults.
    pub ranges: Option<Vec<(f64, f64)>>,
}

impl GeneratorSpec {
    pub fn new(model: Model, n: usize, noise_sd: f64, seed: u64) -> Self {
        Self {
            model,
            n,
            noise_sd,
            seed,
            ranges: None,
        }
    }
}

/// Samples features uniformly on their ranges and adds Gaussian noise to the
/// response only.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    let ranges = spec.ranges.clone().unwrap_or_else(|| spec.model.default_ranges());
    let names = spec.model.feature_names();
    if ranges.len() != names.len() {
        return Err(Error::DimensionMismatch {
            context: "feature ranges",
            expected: names.len(),
            found: ranges.len(),
        });
    }
    if spec.n == 0 {
        return Err(Error::Data("sample size must be at least 1".into()));
    }
    if !(spec.noise_sd >= 0.0) {
        return Err(Error::Config("noise sd must be non-negative".into()));
    }
    let mut fx = RandomSource::new(spec.seed, stream_id(&[STREAM_FEATURES]));
    let mut fe = RandomSource::new(spec.seed, stream_id(&[STREAM_NOISE]));
    let p = names.len();
    let mut data = Vec::with_capacity(spec.n * p);
    let mut y = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let row: Vec<f64> = ranges.iter().map(|&(lo, hi)| fx.uniform(lo, hi)).collect();
        let clean = spec.model.response(&row);
        let eps = if spec.noise_sd > 0.0 {
            spec.noise_sd * fe.gaussian()
        } else {
            0.0
        };
        y.push(clean + eps);
        data.extend(row);
    }
    Dataset::new(DenseMatrix::from_vec(spec.n, p, data)?, y, names)
}

/// Random partition into `(train, test)` with `round(n·fraction)` test rows.
/// Rows keep their original order within each part.
pub fn split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = data.n();
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0,1), got {test_fraction}"
        )));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::EmptySplit {
            n,
            fraction: test_fraction,
        });
    }
    let mut src = RandomSource::new(seed, stream_id(&[STREAM_SPLIT]));
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = src.below(i + 1);
        idx.swap(i, j);
    }
    let mut test: Vec<usize> = idx[..n_test].to_vec();
    let mut train: Vec<usize> = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((data.subset(&train), data.subset(&test)))
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch {
            context: "rmse",
            expected: y.len(),
            found: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::Data("rmse of an empty vector".into()));
    }
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatRecord {
    pub repeat: usize,
    pub seed: u64,
    pub test_rmse: f64,
    pub in_rmse: f64,
    pub canonical: Vec<String>,
    pub expression: String,
    pub skipped_steps: usize,
    /// Wall-clock seconds, present only when timing is requested.
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub model: Model,
    pub noise_sd: f64,
    pub n: usize,
    pub test_fraction: f64,
    pub repeats: Vec<RepeatRecord>,
    pub mean_rmse: f64,
    pub sd_rmse: f64,
    pub mean_seconds: Option<f64>,
    pub single_run: bool,
}

/// Sample mean and standard deviation (0 for a single value).
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Repeat `repeats` times: generate, split, fit, sample, rank and record the
/// held-out RMSE of the top candidate. Repeat `r` uses seed `spec.seed + r`.
pub fn run_benchmark(
    spec: &GeneratorSpec,
    cfg: &RunConfig,
    test_fraction: f64,
    repeats: usize,
    timing: bool,
) -> Result<BenchmarkReport> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let mut records = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let seed = spec.seed.wrapping_add(r as u64);
        let started = Instant::now();
        let data = generate(&GeneratorSpec { seed, ..spec.clone() })?;
        let (train, test) = split(&data, test_fraction, seed)?;
        let mut run_cfg = cfg.clone();
        run_cfg.train.seed = seed;
        let out = run(&train, Some(&test), &run_cfg)?;
        let best = &out.candidates[0];
        records.push(RepeatRecord {
            repeat: r,
            seed,
            test_rmse: best.out_rmse.unwrap_or(f64::NAN),
            in_rmse: best.in_rmse,
            canonical: best.canonical.clone(),
            expression: best.expression.clone(),
            skipped_steps: out.fit.skipped,
            seconds: timing.then(|| started.elapsed().as_secs_f64()),
        });
    }
    let rmses: Vec<f64> = records.iter().map(|r| r.test_rmse).collect();
    let (mean_rmse, sd_rmse) = mean_sd(&rmses);
    let mean_seconds = if timing {
        Some(records.iter().filter_map(|r| r.seconds).sum::<f64>() / repeats as f64)
    } else {
        None
    };
    Ok(BenchmarkReport {
        model: spec.model,
        noise_sd: spec.noise_sd,
        n: spec.n,
        test_fraction,
        repeats: records,
        mean_rmse,
        sd_rmse,
        mean_seconds,
        single_run: repeats == 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn formula_examples() {
        assert_eq!(Model::Sim1.response(&[0.5, 2.5, 4.5]), 7.875);
        // q1 = q2 = r = ε = 1
        assert_abs_diff_eq!(Model::Cl.response(&[1.0, 1.0, 1.0, 1.0]), 0.08, epsilon = 1e-15);
        // A = d = κ = 1, T2 − T1 = 3
        assert_abs_diff_eq!(Model::Ftc.response(&[1.0, 1.0, 4.0, 1.0, 1.0]), 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(Model::Sim2.response(&[0.0, 0.0, 0.0]), 0.0);
        assert_abs_diff_eq!(Model::Fce.response(&[2.0, 1.0, 1.0, 1.0, 0.0]), 2.0);
        assert_abs_diff_eq!(Model::Cpe.response(&[1.0, 1.0, 2.0, 1.0, 1.0]), 0.5);
    }

    #[test]
    fn noiseless_data_satisfies_formula() {
        for model in Model::ALL {
            let d = generate(&GeneratorSpec::new(model, 500, 0.0, 3)).unwrap();
            let ranges = model.default_ranges();
            for i in 0..d.n() {
                let row = d.x.row(i);
                assert!((d.y[i] - model.response(row)).abs() <= 1e-12);
                for (v, (lo, hi)) in row.iter().zip(&ranges) {
                    assert!(v > lo && v < hi);
                }
            }
        }
    }

    #[test]
    fn noise_is_added_to_response() {
        let spec = GeneratorSpec::new(Model::Sim1, 20_000, 0.1, 5);
        let d = generate(&spec).unwrap();
        let clean: Vec<f64> = (0..d.n()).map(|i| Model::Sim1.response(d.x.row(i))).collect();
        let r = rmse(&d.y, &clean).unwrap();
        assert!((r - 0.1).abs() < 0.003, "{r}");
    }

    #[test]
    fn split_examples() {
        let d = generate(&GeneratorSpec::new(Model::Sim1, 2000, 0.0, 1)).unwrap();
        let (tr, te) = split(&d, 0.1, 4).unwrap();
        assert_eq!((tr.n(), te.n()), (1800, 200));
        let two = d.subset(&[0, 1]);
        let (a, b) = split(&two, 0.5, 1).unwrap();
        assert_eq!((a.n(), b.n()), (1, 1));
        assert_eq!(split(&d, 0.1, 4).unwrap(), split(&d, 0.1, 4).unwrap());
        assert!(matches!(split(&two, 0.1, 1), Err(Error::EmptySplit { .. })));
        assert!(split(&d, 1.0, 1).is_err());
    }

    #[test]
    fn split_is_partition() {
        let n = 137;
        let x = DenseMatrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let d = Dataset::new(x, vec![0.0; n], vec!["i".into()]).unwrap();
        for seed in 0..20 {
            let (tr, te) = split(&d, 0.3, seed).unwrap();
            let mut all: Vec<f64> = tr.x.col_vec(0);
            all.extend(te.x.col_vec(0));
            all.sort_by(f64::total_cmp);
            assert_eq!(all, (0..n).map(|i| i as f64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert!(rmse(&[0.0], &[]).is_err());
    }

    #[test]
    fn mean_sd_single_run() {
        assert_eq!(mean_sd(&[0.3]), (0.3, 0.0));
        let (m, s) = mean_sd(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_abs_diff_eq!(s, 2f64.sqrt());
    }

    #[test]
    fn csv_round_trip_and_target_column() {
        let d = generate(&GeneratorSpec::new(Model::Cl, 10, 0.0, 2)).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::from_csv_reader(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        let named = "a,target,b\n1,2,3\n4,5,6\n";
        let t = Dataset::from_csv_reader(named.as_bytes()).unwrap();
        assert_eq!(t.feature_names, vec!["a", "b"]);
        assert_eq!(t.y, vec![2.0, 5.0]);
        assert!(Dataset::from_csv_reader("x0,y\n1,zz\n".as_bytes()).is_err());
        assert!(Dataset::from_csv_reader("x0,y\n".as_bytes()).is_err());
        assert!(Dataset::from_csv_reader("x0,y\n1,2,3\n".as_bytes()).is_err());
    }

    #[test]
    fn model_names_parse() {
        for m in Model::ALL {
            assert_eq!(m.name().parse::<Model>().unwrap(), m);
        }
        assert_eq!("cl".parse::<Model>().unwrap(), Model::Cl);
        assert!("nope".parse::<Model>().is_err());
    }
}
