use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::thread;

use scorebreak_core::breakdown::{
    contributions, fit, BreakdownError, BreakdownReport, ContributionTable, FitOptions, ReportFormat, SvgOptions,
};
use scorebreak_core::compound::DeltaPolicy;
use scorebreak_core::dataset::{
    export_csv, export_raw_csv, parse_csv, records_from_json, records_to_json, Dataset, DatasetError, IngestOptions,
    RawSystem, SystemRecord, RAW_HEADER,
};
use scorebreak_core::microbench::{self, MicrobenchError};
use scorebreak_core::synth::{
    evaluate_recovery, generate, generate_raw, CheckSpec, Metric, RawOptions, RecoveryReport, SynthError, SynthSpec,
};
use scorebreak_core::BreakdownModel;

use crate::args::{CheckArgs, FitArgs, MeasureArgs, ReportArgs, SvgArgs, SynthArgs};
use crate::host;

/// A failed command. Bad input and environment problems exit 1, defects 2.
#[derive(Debug)]
pub enum Failure {
    Data(String),
    Internal(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Data(_) => 1,
            Failure::Internal(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Data(m) => f.write_str(m),
            Failure::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<BreakdownError> for Failure {
    fn from(e: BreakdownError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<MicrobenchError> for Failure {
    fn from(e: MicrobenchError) -> Self {
        let internal = |e: &MicrobenchError| {
            matches!(e, MicrobenchError::ChecksumMismatch { .. } | MicrobenchError::TimerUnavailable(_))
        };
        match &e {
            MicrobenchError::InConfig { source, .. } if internal(source) => Failure::Internal(e.to_string()),
            e if internal(e) => Failure::Internal(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn svg_options(args: &SvgArgs) -> Result<SvgOptions, Failure> {
    if !(args.svg_width > 0.0 && args.svg_height > 0.0 && args.svg_width.is_finite() && args.svg_height.is_finite()) {
        return Err(Failure::Data("--svg-width and --svg-height must be positive".into()));
    }
    Ok(SvgOptions { width: args.svg_width, height: args.svg_height })
}

fn report_format(path: &Path) -> Result<ReportFormat, Failure> {
    ReportFormat::from_path(path).ok_or_else(|| {
        Failure::Data(format!("{}: cannot tell the report format; use a .csv, .json or .svg extension", path.display()))
    })
}

pub fn measure(args: MeasureArgs) -> Result<(), Failure> {
    if args.trials == 0 {
        return Err(Failure::Data("--trials must be at least 1".into()));
    }
    let plan = match args.plan.trim() {
        "default" => microbench::default_plan(),
        other => {
            let shift = other
                .strip_prefix("shift=")
                .and_then(|s| s.parse::<u32>().ok())
                .ok_or_else(|| Failure::Data(format!("unknown plan '{other}' (expected default or shift=N)")))?;
            microbench::scaled_plan(shift)?
        }
    };
    // Fail on an unwritable destination before spending time measuring.
    if let Some(path) = &args.out {
        fs::File::create(path).map_err(|e| io_failure(path, e))?;
    }

    let micro = microbench::run_suite(&plan, args.trials)?;
    let mut metadata = host::metadata();
    metadata.insert("plan".into(), args.plan.trim().to_string());
    metadata.insert("trials".into(), args.trials.to_string());
    metadata.insert("clock".into(), microbench::clock_source().to_string());
    let system = RawSystem { system_id: args.system_id, metadata, micro, targets: Vec::new() };
    let text = export_raw_csv(std::slice::from_ref(&system))?;
    match &args.out {
        Some(path) => write_file(path, &text),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::Data(format!("stdout: {e}"))),
    }
}

fn in_file(path: &Path, e: DatasetError) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn is_raw_layout(text: &str) -> bool {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .is_some_and(|header| header.split(',').map(str::trim).eq(RAW_HEADER))
}

/// Reads every input. Raw files are concatenated first so one system's
/// microbenchmark and target rows may live in different files.
fn load_dataset(paths: &[PathBuf], options: &IngestOptions) -> Result<Dataset, Failure> {
    let mut records: Vec<SystemRecord> = Vec::new();
    let mut raw = String::new();
    for path in paths {
        let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            records.extend(records_from_json(&text).map_err(|e| in_file(path, e))?);
        } else if is_raw_layout(&text) {
            let mut header_seen = false;
            for line in text.lines() {
                let is_header = !header_seen && !line.trim().is_empty() && !line.trim_start().starts_with('#');
                if is_header {
                    header_seen = true;
                } else {
                    raw.push_str(line);
                    raw.push('\n');
                }
            }
        } else {
            records.extend(parse_csv(&text, options).map_err(|e| in_file(path, e))?);
        }
    }
    if !raw.is_empty() {
        let text = format!("{}\n{raw}", RAW_HEADER.join(","));
        records.extend(parse_csv(&text, options).map_err(|e| Failure::Data(format!("raw input: {e}")))?);
    }
    Ok(Dataset::new(records)?)
}

/// `out.csv` becomes `out.<target>.csv` when several targets share one path.
fn per_target_path(path: &Path, target: &str, several: bool) -> PathBuf {
    if !several {
        return path.to_path_buf();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{target}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{target}"),
    };
    path.with_file_name(name)
}

fn print_model(out: &mut impl std::io::Write, model: &BreakdownModel) -> std::io::Result<()> {
    writeln!(
        out,
        "target {}: {} systems, R^2 = {:.6}, {} solver iterations",
        model.target,
        model.system_ids.len(),
        model.r_squared,
        model.solution.iterations
    )?;
    let width = model.regressor_names.iter().map(String::len).max().unwrap_or(0).max(9);
    writeln!(out, "  {:<width$}  coefficient", "regressor")?;
    for (name, c) in model.regressor_names.iter().zip(&model.coefficients) {
        writeln!(out, "  {name:<width$}  {c}")?;
    }
    Ok(())
}

pub fn fit_cmd(args: FitArgs) -> Result<(), Failure> {
    let policy = if args.allow_nonpositive { DeltaPolicy::Clamp } else { DeltaPolicy::Strict };
    let dataset = load_dataset(&args.data, &IngestOptions { summarizer: args.summarizer, policy })?;
    let targets = if args.targets.is_empty() { dataset.target_names().to_vec() } else { args.targets.clone() };
    if targets.is_empty() {
        return Err(Failure::Data("no target score is present for every system; pass --target".into()));
    }
    if let Some(tol) = args.tol {
        if !(tol >= 0.0 && tol.is_finite()) {
            return Err(Failure::Data("--tol must be nonnegative".into()));
        }
    }
    let formats = args.reports.iter().map(|p| report_format(p)).collect::<Result<Vec<_>, _>>()?;
    let svg = svg_options(&args.svg)?;
    let options = FitOptions { tol: args.tol, max_iter: args.max_iter, intercept: args.intercept };

    type Fitted = (BreakdownModel, ContributionTable<f64>);
    let results: Vec<thread::Result<Result<Fitted, BreakdownError>>> = thread::scope(|s| {
        let handles: Vec<_> = targets
            .iter()
            .map(|t| {
                let (dataset, options) = (&dataset, &options);
                s.spawn(move || {
                    let model = fit(dataset, t, options)?;
                    let table = contributions(&model, dataset)?;
                    Ok((model, table))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join()).collect()
    });

    let several = targets.len() > 1;
    let mut stdout = std::io::stdout().lock();
    for result in results {
        let (model, table) = result.map_err(|_| Failure::Internal("a fitting thread panicked".into()))??;
        print_model(&mut stdout, &model).map_err(|e| Failure::Data(format!("stdout: {e}")))?;
        let report = BreakdownReport::new(&model, &table)?;
        for warning in &report.warnings {
            eprintln!("warning: {}: {warning}", model.target);
        }
        for (path, &format) in args.reports.iter().zip(&formats) {
            let path = per_target_path(path, &model.target, several);
            report.write(&path, format, &svg)?;
        }
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<(), Failure> {
    let spec = SynthSpec::load(&args.spec)?;
    let (dataset, truth) = generate(&spec)?;
    fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    let mut written = vec![
        ("dataset.csv", export_csv(dataset.records())?),
        ("records.json", records_to_json(dataset.records())?),
        ("truth.json", serde_json::to_string_pretty(&truth).map_err(|e| Failure::Internal(e.to_string()))? + "\n"),
    ];
    if args.raw {
        let (raw, _) = generate_raw(&spec, &RawOptions::default())?;
        written.push(("raw.csv", export_raw_csv(&raw)?));
    }
    for (name, text) in &written {
        let path = args.out.join(name);
        write_file(&path, text)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn metric_name(metric: Metric) -> &'static str {
    match metric {
        Metric::CoefficientRmse => "coefficient_rmse",
        Metric::MaxContributionRelError => "max_contribution_rel_error",
        Metric::MaxFittedRelError => "max_fitted_rel_error",
    }
}

pub fn check(args: CheckArgs) -> Result<(), Failure> {
    let spec = SynthSpec::load(&args.spec)?;
    let check = spec.check.clone().unwrap_or(CheckSpec {
        metric: Metric::CoefficientRmse,
        tolerance: 1e-6,
        require_active_set: false,
    });
    let tolerance = args.tol.unwrap_or(check.tolerance);
    if !(tolerance >= 0.0 && tolerance.is_finite()) {
        return Err(Failure::Data("tolerance must be nonnegative".into()));
    }
    let (dataset, truth) = generate(&spec)?;
    let mut per_target = Vec::new();
    for target in truth.keys() {
        let model = fit::<f64>(&dataset, target, &FitOptions::default())?;
        let r = evaluate_recovery(&model, &dataset, &truth)?;
        println!(
            "{target}: coefficient_rmse {:.3e}, max_contribution_rel_error {:.3e}, max_fitted_rel_error {:.3e}, active set {}",
            r.coefficient_rmse,
            r.max_contribution_rel_error,
            r.max_fitted_rel_error,
            if r.active_set_match { "matches" } else { "differs" }
        );
        if !r.active_set_match {
            eprintln!(
                "note: {target}: active set differs from the truth (true [{}], recovered [{}])",
                r.true_active.join(", "),
                r.recovered_active.join(", ")
            );
        }
        per_target.push(r);
    }
    let report = RecoveryReport::combine(per_target);
    let value = report.metric(check.metric);
    let name = metric_name(check.metric);
    let ok = value <= tolerance && (report.active_set_match || !check.require_active_set);
    println!("{name} = {value:.3e} (tolerance {tolerance:.3e}): {}", if ok { "pass" } else { "FAIL" });
    if value > tolerance {
        return Err(Failure::Data(format!("recovery check failed: {name} {value:.3e} exceeds {tolerance:.3e}")));
    }
    if check.require_active_set && !report.active_set_match {
        return Err(Failure::Data("recovery check failed: active set differs from the truth".into()));
    }
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<(), Failure> {
    let report = BreakdownReport::read_json(&args.input)?;
    let svg = svg_options(&args.svg)?;
    for path in &args.outs {
        report.write(path, report_format(path)?, &svg)?;
    }
    Ok(())
}
