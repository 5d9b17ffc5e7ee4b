use vasst::bench::{run_benchmark, BenchmarkReport};
use vasst::{GeneratorSpec, Model};

use crate::args::BenchArgs;
use crate::config::Settings;
use crate::report::BenchSummaryRow;
use crate::{write_atomic, CliError};

/// Bench runs default to a held-out tenth.
pub const DEFAULT_TEST_FRACTION: f64 = 0.1;

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchmarkReport, CliError> {
    let model: Model = args
        .model
        .parse()
        .map_err(|_| CliError::Input(format!("unknown model `{}`; expected sim1, sim2, CL, CPE, FCE or FTC", args.model)))?;
    if args.repeats == 0 {
        return Err(CliError::Input("--repeats must be at least 1".into()));
    }
    if !(args.noise >= 0.0 && args.noise.is_finite()) {
        return Err(CliError::Input(format!("--noise must be a finite value >= 0, got {}", args.noise)));
    }
    let settings = args.run.settings(Settings {
        test_fraction: Some(DEFAULT_TEST_FRACTION),
        ..Settings::default()
    })?;
    let p = model.feature_names().len();
    let cfg = settings.run_config(p)?;
    let spec = GeneratorSpec::new(model, args.n, args.noise, settings.seed);
    let fraction = settings.test_fraction.unwrap_or(DEFAULT_TEST_FRACTION);

    let report = run_benchmark(&spec, &cfg, fraction, args.repeats, !args.no_timing).map_err(CliError::from_run)?;

    let row = BenchSummaryRow {
        model: model.name().to_string(),
        noise: args.noise,
        repeats: args.repeats,
        mean_rmse: report.mean_rmse,
        sd_rmse: report.sd_rmse,
        mean_seconds: report.mean_seconds,
        single_run: report.single_run,
    };
    let json_path = args.json.clone().unwrap_or_else(|| args.out.with_extension("json"));
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    json.push('\n');
    write_atomic(&json_path, json.as_bytes())?;
    write_atomic(&args.out, row.to_csv().as_bytes())?;
    Ok(report)
}
