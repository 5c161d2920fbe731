//! Command line front end for monotone reshaping of trained prediction
//! rules.
//!
//! Exit codes: 0 success, 1 audit found violations, 2 invalid arguments,
//! 3 unreadable or malformed input files, 4 solver failure. Reports go to
//! standard output (or `--out`); progress notes go to standard error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use reshape_core::audit::{
    accuracy, audit_monotonicity, forest_threshold_augment, mape, mse, AuditConfig,
};
use reshape_core::blackbox::{from_tensor, reshape_grid, reshape_streaming, reshaped_predictions};
use reshape_core::forest_reshape::{reshape_forest, ReshapeMethod};
use reshape_core::io::{read_data_matrix, read_tensor, read_vector};
use reshape_core::tree::{ForestModel, Task};
use reshape_core::{Error, ShapeSpec};

/// Grid entries held at once before the streaming solver is worth a note.
const MEMORY_BUDGET_ENTRIES: f64 = 2e8;

#[derive(Parser)]
#[command(
    name = "reshape",
    version,
    about = "Enforce per-variable monotonicity on trained prediction rules"
)]
struct Cli {
    /// Seed for all randomized steps.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker thread cap; defaults to the available hardware parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ShapeArgs {
    /// Shape constraints, e.g. "0:inc,3:dec" (0-based feature indices).
    #[arg(long)]
    shape: String,

    /// Comma-separated feature names; lets --shape refer to features by
    /// name, e.g. "bmi:inc".
    #[arg(long)]
    feature_names: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Rewrite a forest's leaf values so the model respects the shape.
    Reshape {
        /// Forest model JSON file.
        #[arg(long)]
        model: PathBuf,

        #[command(flatten)]
        shape: ShapeArgs,

        /// "exact" (overlap constraints only) or "oc" (all pairs per split).
        #[arg(long, default_value = "exact")]
        method: String,

        /// Where to write the reshaped model; the run report goes to
        /// standard output.
        #[arg(long)]
        out: PathBuf,
    },

    /// Reshape grid predictions of an arbitrary predictor and emit one
    /// consistent prediction and adjustment size per data row.
    Blackbox {
        /// Data matrix file, one row per observation.
        #[arg(long)]
        data: PathBuf,

        /// Forest model JSON file to query for grid predictions.
        #[arg(long)]
        model: Option<PathBuf>,

        /// Precomputed prediction tensor file (columns i, k, v, value).
        #[arg(long)]
        tensor: Option<PathBuf>,

        #[command(flatten)]
        shape: ShapeArgs,

        /// Data file starts with a header row.
        #[arg(long)]
        header: bool,

        /// Output file for the prediction,objective rows.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Probe a model for monotonicity violations. Exits 1 if any are found.
    Audit {
        /// Forest model JSON file.
        #[arg(long)]
        model: PathBuf,

        #[command(flatten)]
        shape: ShapeArgs,

        /// Data matrix whose per-feature min/max define the probe box.
        #[arg(long)]
        data: Option<PathBuf>,

        /// Explicit probe box, "lo:hi" per feature, comma separated.
        #[arg(long)]
        ranges: Option<String>,

        /// Random base points to sweep from.
        #[arg(long, default_value_t = 100)]
        probes: usize,

        /// Grid values per swept coordinate, before threshold augmentation.
        #[arg(long, default_value_t = 64)]
        grid: usize,

        /// Data file starts with a header row.
        #[arg(long)]
        header: bool,

        /// Output file for the audit report.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Score predictions against ground truth.
    Eval {
        /// Predictions file, one value per line.
        #[arg(long)]
        pred: Option<PathBuf>,

        /// Model to produce predictions with (needs --data).
        #[arg(long)]
        model: Option<PathBuf>,

        /// Data matrix to predict on.
        #[arg(long)]
        data: Option<PathBuf>,

        /// Ground-truth file, one value per line.
        #[arg(long)]
        truth: PathBuf,

        /// Classification threshold for the accuracy metric.
        #[arg(long)]
        threshold: Option<f64>,

        /// Data file starts with a header row.
        #[arg(long)]
        header: bool,

        /// Output file for the metrics report.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Predict rows of a data file, or sweep one feature over a range.
    Predict {
        /// Forest model JSON file.
        #[arg(long)]
        model: PathBuf,

        /// Data matrix to predict on, one prediction line per row.
        #[arg(long)]
        data: Option<PathBuf>,

        /// Sweep one feature: "feature,lo,hi,steps" emits value,prediction
        /// rows with the other coordinates held at --at.
        #[arg(long)]
        sweep: Option<String>,

        /// Base point for --sweep, comma-separated coordinates; defaults to
        /// the origin.
        #[arg(long)]
        at: Option<String>,

        /// Comma-separated feature names usable in --sweep.
        #[arg(long)]
        feature_names: Option<String>,

        /// Data file starts with a header row.
        #[arg(long)]
        header: bool,

        /// Output file for the prediction rows.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("note: thread pool already configured: {e}");
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::InvalidInput(_) => 2,
                Error::Parse(_) | Error::InvalidModel(_) | Error::Io(_) => 3,
                Error::Solver(_) => 4,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Reshape {
            model,
            shape,
            method,
            out,
        } => cmd_reshape(&model, &shape, &method, &out),
        Command::Blackbox {
            data,
            model,
            tensor,
            shape,
            header,
            out,
        } => cmd_blackbox(&data, model.as_deref(), tensor.as_deref(), &shape, header, out.as_deref()),
        Command::Audit {
            model,
            shape,
            data,
            ranges,
            probes,
            grid,
            header,
            out,
        } => cmd_audit(
            &model,
            &shape,
            data.as_deref(),
            ranges.as_deref(),
            probes,
            grid,
            header,
            cli.seed,
            out.as_deref(),
        ),
        Command::Eval {
            pred,
            model,
            data,
            truth,
            threshold,
            header,
            out,
        } => cmd_eval(
            pred.as_deref(),
            model.as_deref(),
            data.as_deref(),
            &truth,
            threshold,
            header,
            out.as_deref(),
        ),
        Command::Predict {
            model,
            data,
            sweep,
            at,
            feature_names,
            header,
            out,
        } => cmd_predict(
            &model,
            data.as_deref(),
            sweep.as_deref(),
            at.as_deref(),
            feature_names.as_deref(),
            header,
            out.as_deref(),
        ),
    }
}

/// Translates named features in the shape string to indices, then parses it.
fn resolve_shape(shape: &ShapeArgs) -> Result<ShapeSpec, Error> {
    resolve_shape_str(&shape.shape, shape.feature_names.as_deref())
}

fn resolve_shape_str(shape: &str, names: Option<&str>) -> Result<ShapeSpec, Error> {
    let Some(names) = names else {
        return ShapeSpec::parse(shape);
    };
    let names: Vec<&str> = names.split(',').map(str::trim).collect();
    let mut translated = Vec::new();
    for token in shape.split(',') {
        let token = token.trim();
        let Some((key, dir)) = token.split_once(':') else {
            translated.push(token.to_string());
            continue;
        };
        let key = key.trim();
        if key.parse::<usize>().is_ok() {
            translated.push(token.to_string());
        } else {
            let index = resolve_feature(key, &names)?;
            translated.push(format!("{index}:{dir}"));
        }
    }
    ShapeSpec::parse(&translated.join(","))
}

fn resolve_feature(key: &str, names: &[&str]) -> Result<usize, Error> {
    if let Ok(index) = key.parse::<usize>() {
        return Ok(index);
    }
    names.iter().position(|n| *n == key).ok_or_else(|| {
        Error::InvalidInput(format!(
            "unknown feature name {key:?}; --feature-names lists: {}",
            names.join(", ")
        ))
    })
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(Error::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_reshape(
    model_path: &Path,
    shape: &ShapeArgs,
    method: &str,
    out: &Path,
) -> Result<ExitCode, Error> {
    let method = ReshapeMethod::from_str(method)?;
    let model = ForestModel::load(model_path)?;
    let spec = resolve_shape(shape)?;
    let (reshaped, report) = reshape_forest(&model, &spec, method)?;
    reshaped.save(out)?;
    eprintln!(
        "reshaped {} trees ({} constrained nodes, {} constraints) in {:.2} ms; model written to {}",
        model.trees().len(),
        report.nodes_solved,
        report.edges,
        report.wall_ms,
        out.display()
    );
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(ExitCode::SUCCESS)
}

fn cmd_blackbox(
    data_path: &Path,
    model_path: Option<&Path>,
    tensor_path: Option<&Path>,
    shape: &ShapeArgs,
    header: bool,
    out: Option<&Path>,
) -> Result<ExitCode, Error> {
    let data = read_data_matrix(data_path, header)?;
    let spec = resolve_shape(shape)?;
    let n = data.len();
    let entries = n as f64 * n as f64 * spec.len() as f64;
    let start = Instant::now();
    let (predictions, objectives) = match (model_path, tensor_path) {
        (Some(model_path), None) => {
            let model = ForestModel::load(model_path)?;
            if entries > MEMORY_BUDGET_ENTRIES {
                eprintln!(
                    "note: grid would hold {entries:.0} entries; streaming one row's fibers at a time"
                );
            }
            reshape_streaming(&data, |x| model.predict_unchecked(x), &spec)?
        }
        (None, Some(tensor_path)) => {
            if entries > MEMORY_BUDGET_ENTRIES {
                eprintln!(
                    "warning: tensor grid holds {entries:.0} entries, above the {MEMORY_BUDGET_ENTRIES:.0} budget"
                );
            }
            let tensor = read_tensor(tensor_path)?;
            let grid = from_tensor(&tensor, &data, &spec)?;
            let rg = reshape_grid(&grid);
            let predictions = reshaped_predictions(&rg)?;
            (predictions, rg.objectives().to_vec())
        }
        _ => {
            return Err(Error::InvalidInput(
                "pass exactly one of --model and --tensor".into(),
            ))
        }
    };
    eprintln!(
        "reshaped grid predictions for {n} rows x {} constrained variables in {:.2} ms",
        spec.len(),
        start.elapsed().as_secs_f64() * 1e3
    );
    let mut text = String::from("prediction,objective\n");
    for (p, o) in predictions.iter().zip(&objectives) {
        let _ = writeln!(text, "{p},{o}");
    }
    emit(&text, out)?;
    Ok(ExitCode::SUCCESS)
}

fn parse_ranges(text: &str) -> Result<Vec<(f64, f64)>, Error> {
    text.split(',')
        .map(|token| {
            let token = token.trim();
            let parts = token
                .split_once(':')
                .ok_or_else(|| Error::InvalidInput(format!("range {token:?} is not lo:hi")))?;
            let lo: f64 = parts.0.trim().parse().map_err(|_| {
                Error::InvalidInput(format!("range {token:?} has a non-numeric bound"))
            })?;
            let hi: f64 = parts.1.trim().parse().map_err(|_| {
                Error::InvalidInput(format!("range {token:?} has a non-numeric bound"))
            })?;
            Ok((lo, hi))
        })
        .collect()
}

fn data_ranges(data: &[Vec<f64>]) -> Result<Vec<(f64, f64)>, Error> {
    let d = data
        .first()
        .ok_or_else(|| Error::InvalidInput("data file is empty".into()))?
        .len();
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
    for row in data {
        for (r, &x) in ranges.iter_mut().zip(row) {
            r.0 = r.0.min(x);
            r.1 = r.1.max(x);
        }
    }
    for r in &mut ranges {
        if r.0 >= r.1 {
            let pad = r.0.abs().max(1.0) * 0.5;
            r.0 -= pad;
            r.1 += pad;
        }
    }
    Ok(ranges)
}

#[allow(clippy::too_many_arguments)]
fn cmd_audit(
    model_path: &Path,
    shape: &ShapeArgs,
    data_path: Option<&Path>,
    ranges: Option<&str>,
    probes: usize,
    grid: usize,
    header: bool,
    seed: u64,
    out: Option<&Path>,
) -> Result<ExitCode, Error> {
    let model = ForestModel::load(model_path)?;
    let spec = resolve_shape(shape)?;
    let feature_ranges = match (data_path, ranges) {
        (Some(path), None) => data_ranges(&read_data_matrix(path, header)?)?,
        (None, Some(text)) => parse_ranges(text)?,
        _ => {
            return Err(Error::InvalidInput(
                "pass exactly one of --data and --ranges".into(),
            ))
        }
    };
    if feature_ranges.len() != model.n_features() {
        return Err(Error::InvalidInput(format!(
            "got {} feature ranges for a model with {} features",
            feature_ranges.len(),
            model.n_features()
        )));
    }
    let config = AuditConfig {
        spec: spec.clone(),
        probes,
        grid_size: grid,
        seed,
        feature_ranges,
        grid_augment: forest_threshold_augment(&model, &spec),
    };
    let result = audit_monotonicity(|x| model.predict_unchecked(x), &config)?;
    eprintln!(
        "audited {} adjacent steps: {} violations, worst adverse step {:e}",
        result.total_checks, result.violations, result.worst_violation
    );
    let mut text = serde_json::to_string_pretty(&result).unwrap();
    text.push('\n');
    emit(&text, out)?;
    Ok(if result.violations > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_eval(
    pred_path: Option<&Path>,
    model_path: Option<&Path>,
    data_path: Option<&Path>,
    truth_path: &Path,
    threshold: Option<f64>,
    header: bool,
    out: Option<&Path>,
) -> Result<ExitCode, Error> {
    let truth = read_vector(truth_path)?;
    let (predictions, task) = match (pred_path, model_path) {
        (Some(path), None) => (read_vector(path)?, None),
        (None, Some(model_path)) => {
            let data_path = data_path.ok_or_else(|| {
                Error::InvalidInput("--model needs --data to predict on".into())
            })?;
            let model = ForestModel::load(model_path)?;
            let data = read_data_matrix(data_path, header)?;
            let predictions = data
                .iter()
                .map(|row| model.predict(row))
                .collect::<Result<Vec<f64>, Error>>()?;
            (predictions, Some(model.task()))
        }
        _ => {
            return Err(Error::InvalidInput(
                "pass exactly one of --pred and --model".into(),
            ))
        }
    };
    let mse_value = mse(&predictions, &truth)?;
    let mape_value = match mape(&predictions, &truth) {
        Ok(v) => Some(v),
        Err(e) => {
            eprintln!("note: mape unavailable: {e}");
            None
        }
    };
    let threshold = threshold.or(match task {
        Some(Task::Probability) => Some(0.5),
        _ => None,
    });
    let accuracy_value = match threshold {
        Some(t) => Some(accuracy(&predictions, &truth, t)?),
        None => None,
    };
    let report = serde_json::json!({
        "n": truth.len(),
        "mse": mse_value,
        "mape": mape_value,
        "accuracy": accuracy_value,
        "threshold": threshold,
    });
    let mut text = serde_json::to_string_pretty(&report).unwrap();
    text.push('\n');
    emit(&text, out)?;
    Ok(ExitCode::SUCCESS)
}

fn parse_at(text: Option<&str>, d: usize) -> Result<Vec<f64>, Error> {
    let Some(text) = text else {
        return Ok(vec![0.0; d]);
    };
    let values = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("--at coordinate {t:?} is not a number")))
        })
        .collect::<Result<Vec<f64>, Error>>()?;
    if values.len() != d {
        return Err(Error::InvalidInput(format!(
            "--at has {} coordinates, model expects {d}",
            values.len()
        )));
    }
    Ok(values)
}

fn cmd_predict(
    model_path: &Path,
    data_path: Option<&Path>,
    sweep: Option<&str>,
    at: Option<&str>,
    feature_names: Option<&str>,
    header: bool,
    out: Option<&Path>,
) -> Result<ExitCode, Error> {
    let model = ForestModel::load(model_path)?;
    match (data_path, sweep) {
        (Some(data_path), None) => {
            let data = read_data_matrix(data_path, header)?;
            let mut text = String::new();
            for row in &data {
                let _ = writeln!(text, "{}", model.predict(row)?);
            }
            eprintln!("predicted {} rows", data.len());
            emit(&text, out)?;
        }
        (None, Some(sweep)) => {
            let parts: Vec<&str> = sweep.split(',').map(str::trim).collect();
            if parts.len() != 4 {
                return Err(Error::InvalidInput(format!(
                    "--sweep {sweep:?} is not feature,lo,hi,steps"
                )));
            }
            let names: Vec<&str> = feature_names
                .map(|n| n.split(',').map(str::trim).collect())
                .unwrap_or_default();
            let feature = resolve_feature(parts[0], &names)?;
            if feature >= model.n_features() {
                return Err(Error::InvalidInput(format!(
                    "sweep feature {feature} out of range for {} features",
                    model.n_features()
                )));
            }
            let lo: f64 = parts[1]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("sweep bound {:?} is not a number", parts[1])))?;
            let hi: f64 = parts[2]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("sweep bound {:?} is not a number", parts[2])))?;
            let steps: usize = parts[3]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("sweep steps {:?} is not a count", parts[3])))?;
            if steps < 2 || !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidInput(
                    "sweep needs finite lo < hi and at least 2 steps".into(),
                ));
            }
            let mut x = parse_at(at, model.n_features())?;
            let mut text = String::from("value,prediction\n");
            for j in 0..steps {
                let v = if j == steps - 1 {
                    hi
                } else {
                    lo + (hi - lo) * j as f64 / (steps - 1) as f64
                };
                x[feature] = v;
                let _ = writeln!(text, "{v},{}", model.predict(&x)?);
            }
            eprintln!("swept feature {feature} over [{lo}, {hi}] in {steps} steps");
            emit(&text, out)?;
        }
        _ => {
            return Err(Error::InvalidInput(
                "pass exactly one of --data and --sweep".into(),
            ))
        }
    }
    Ok(ExitCode::SUCCESS)
}
