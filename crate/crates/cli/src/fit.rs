use std::fmt::Write as _;
use std::time::Instant;

use vasst::bench::split;
use vasst::pipeline::run;
use vasst::sampler::dedup;
use vasst::trainer::write_trace_csv;
use vasst::Dataset;

use crate::args::FitArgs;
use crate::config::Settings;
use crate::report::{CandidateRow, DataSummary, FitReport, FixedSettings, TraceSummary, SCHEMA_VERSION};
use crate::{write_atomic, CliError};

pub fn cmd_fit(args: &FitArgs) -> Result<FitReport, CliError> {
    let started = Instant::now();
    let settings = args.run.settings(Settings::default())?;
    if args.top_k == 0 {
        return Err(CliError::Input("--top-k must be at least 1".into()));
    }
    let data = Dataset::from_csv_path(&args.data)
        .map_err(|e| CliError::Input(format!("cannot load {}: {e}", args.data.display())))?;
    let cfg = settings.run_config(data.p())?;

    let (train, test) = match settings.test_fraction {
        Some(f) => {
            let (tr, te) = split(&data, f, settings.seed).map_err(CliError::from_run)?;
            (tr, Some(te))
        }
        None => (data.clone(), None),
    };

    let outcome = run(&train, test.as_ref(), &cfg).map_err(CliError::from_run)?;
    let names = &data.feature_names;
    let distinct = dedup(&outcome.candidates);
    let shown: Vec<CandidateRow> = distinct
        .iter()
        .take(args.top_k)
        .map(|c| CandidateRow::new(c, names, args.decimals))
        .collect();
    let note = (args.top_k > distinct.len()).then(|| {
        format!("requested {} candidates, only {} distinct available", args.top_k, distinct.len())
    });

    let report = FitReport {
        schema_version: SCHEMA_VERSION,
        command: "fit".into(),
        data: DataSummary {
            path: args.data.display().to_string(),
            rows: data.n(),
            feature_names: names.clone(),
            train_rows: train.n(),
            test_rows: test.as_ref().map_or(0, Dataset::n),
        },
        config: settings.clone(),
        fixed: FixedSettings::from_run(&cfg),
        seed: settings.seed,
        trace: TraceSummary::from_trace(&outcome.fit.trace),
        sampled: outcome.sampled,
        valid_candidates: outcome.candidates.len(),
        distinct_candidates: distinct.len(),
        candidates: shown,
        note,
        wall_seconds: args.timing.then(|| started.elapsed().as_secs_f64()),
    };

    if let Some(path) = &args.trace {
        let mut buf = Vec::new();
        write_trace_csv(&outcome.fit.trace, &mut buf).map_err(|e| CliError::Io(e.to_string()))?;
        write_atomic(path, &buf)?;
    }
    if let Some(path) = &args.expressions {
        let mut text = String::new();
        for row in &report.candidates {
            let out = row.out_rmse.map(|r| format!("{r:.6}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(text, "{}\t{:.6}\t{}\t{}", row.rank, row.in_rmse, out, row.expression);
        }
        write_atomic(path, text.as_bytes())?;
    }
    write_atomic(&args.out, report.to_json().as_bytes())?;
    Ok(report)
}
