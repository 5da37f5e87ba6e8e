//! The `pie` command-line tool.
//!
//! Every subcommand writes its data to files and its diagnostics to stderr.
//! JSON outputs embed the resolved flags and model configuration; CSV
//! outputs get a `.run.json` sidecar carrying the same record.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use pie_core::basis::BasisKind;
use pie_core::dataio::{load_csv, load_csv_features, load_schema, one_hot_encode, Dataset, Preprocessing, ScalerParams};
use pie_core::gam::InterceptStep;
use pie_core::loss::LossKind;
use pie_core::metrics::{
    best_selection, cross_validate, default_lambda1_grid, default_lambda2_grid, evaluate, nested_cross_validate,
    sensitivity_grid, sparse_select, CvTable, Selection,
};
use pie_core::penalty_serde::parse_penalty;
use pie_core::persist::{load_model, save_model};
use pie_core::trainer::{fit_pie, PieConfig, PieModel};

#[derive(Debug, Parser)]
#[command(name = "pie", version, about = "Partially interpretable estimators: spline GAM plus boosted trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write it as `.pie.json`.
    Train(TrainArgs),
    /// Score a CSV with a saved model.
    Predict(PredictArgs),
    /// Break predictions into intercept, pie values and crust value.
    Explain(ExplainArgs),
    /// Cross-validate a grid of penalties.
    Cv(CvArgs),
    /// Holdout metrics over a grid of penalties.
    Sensitivity(SensitivityArgs),
}

/// A penalty given on the command line: a number, `inf`, or `auto`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    Value(f64),
    Auto,
}

impl Serialize for Penalty {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Penalty::Auto => s.serialize_str("auto"),
            Penalty::Value(v) => pie_core::penalty_serde::serialize(v, s),
        }
    }
}

fn parse_penalty_arg(s: &str) -> std::result::Result<Penalty, String> {
    if s == "auto" {
        Ok(Penalty::Auto)
    } else {
        parse_penalty(s).map(Penalty::Value)
    }
}

fn serialize_grid<S: serde::Serializer>(grid: &Option<Vec<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match grid {
        None => s.serialize_none(),
        Some(v) => {
            let strings: Vec<String> = v.iter().map(|x| format_float(*x)).collect();
            strings.serialize(s)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    Squared,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisArg {
    Bspline,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InterceptArg {
    Curvature,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Training or evaluation CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON schema listing each column's name and kind.
    #[arg(long)]
    pub schema: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "squared")]
    pub loss: LossArg,
    /// Maximum outer iterations.
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Relative objective change that counts as converged.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 0.1)]
    pub shrinkage: f64,
    #[arg(long, default_value_t = 8)]
    pub max_leaves: usize,
    #[arg(long, default_value_t = 5)]
    pub min_leaf: usize,
    /// Basis functions per numeric feature.
    #[arg(long, default_value_t = 8)]
    pub n_basis: usize,
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
    #[arg(long, value_enum, default_value = "bspline")]
    pub basis: BasisArg,
    #[arg(long, value_enum, default_value = "curvature")]
    pub intercept_step: InterceptArg,
    #[arg(long, env = "PIE_SEED", default_value_t = 0)]
    pub seed: u64,
}

impl ModelArgs {
    pub fn config(&self, lambda1: f64, lambda2: f64) -> PieConfig {
        PieConfig {
            loss: match self.loss {
                LossArg::Squared => LossKind::Squared,
                LossArg::Logistic => LossKind::Logistic,
            },
            lambda1,
            lambda2,
            max_iter: self.max_iter,
            tol: self.tol,
            shrinkage: self.shrinkage,
            max_leaves: self.max_leaves,
            min_leaf: self.min_leaf,
            n_basis: self.n_basis,
            degree: self.degree,
            basis: match self.basis {
                BasisArg::Bspline => BasisKind::Bspline,
                BasisArg::Identity => BasisKind::Identity,
            },
            intercept_step: match self.intercept_step {
                InterceptArg::Curvature => InterceptStep::Curvature,
                InterceptArg::Fixed => InterceptStep::Fixed,
            },
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    /// Comma-separated lambda1 values; `inf` allowed.
    #[arg(long, value_delimiter = ',', value_parser = parse_penalty)]
    #[serde(serialize_with = "serialize_grid")]
    pub lambda1_grid: Option<Vec<f64>>,
    /// Comma-separated lambda2 values; `inf` allowed.
    #[arg(long, value_delimiter = ',', value_parser = parse_penalty)]
    #[serde(serialize_with = "serialize_grid")]
    pub lambda2_grid: Option<Vec<f64>>,
}

impl GridArgs {
    fn lambda1(&self) -> Vec<f64> {
        self.lambda1_grid.clone().unwrap_or_else(default_lambda1_grid)
    }

    fn lambda2(&self) -> Vec<f64> {
        self.lambda2_grid.clone().unwrap_or_else(default_lambda2_grid)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Group-lasso penalty: a number, `inf`, or `auto` to cross-validate.
    #[arg(long, default_value = "0.01", value_parser = parse_penalty_arg)]
    pub lambda1: Penalty,
    /// Tree penalty: a number, `inf` to disable boosting, or `auto`.
    #[arg(long, default_value = "0.01", value_parser = parse_penalty_arg)]
    pub lambda2: Penalty,
    /// Folds used when a penalty is `auto`.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Restrict automatic selection to models with at most this many active features.
    #[arg(long)]
    pub max_active: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Model output path, conventionally `name.pie.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with the model's feature columns; a target column is optional.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Zero-based data rows to explain; all rows by default.
    #[arg(long, value_delimiter = ',')]
    pub rows: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    pub max_active: Option<usize>,
    /// Report an outer-fold estimate with penalties tuned inside each fold.
    #[arg(long)]
    pub nested: bool,
    /// Inner holdout fraction for `--nested`.
    #[arg(long, default_value_t = 0.25)]
    pub inner_holdout: f64,
    #[command(flatten)]
    pub model: ModelArgs,
    /// JSON output; a CSV table is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Fraction of rows held out for evaluation.
    #[arg(long, default_value_t = 0.25)]
    pub holdout: f64,
    #[command(flatten)]
    pub model: ModelArgs,
    /// JSON output; a long-format CSV is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Predict(a) => cmd_predict(&a),
        Command::Explain(a) => cmd_explain(&a),
        Command::Cv(a) => cmd_cv(&a),
        Command::Sensitivity(a) => cmd_sensitivity(&a),
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

fn opt_float(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

/// `dir/name.pie.json` -> `dir/name`; otherwise the extension is dropped.
pub fn output_stem(out: &Path) -> PathBuf {
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name
        .strip_suffix(".pie.json")
        .map(str::to_string)
        .or_else(|| out.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or(name);
    out.with_file_name(stem)
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn run_record(command: &str, args: &impl Serialize) -> serde_json::Value {
    json!({
        "command": command,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "args": args,
    })
}

/// Loads, one-hot encodes and standardizes a labelled CSV.
pub fn load_training_data(data: &DataArgs) -> Result<(Dataset, Preprocessing)> {
    let schema = load_schema(&data.schema)?;
    let raw = load_csv(&data.data, &schema)?;
    for w in raw.warnings() {
        eprintln!("warning: {w}");
    }
    let encoded = one_hot_encode(&raw);
    let scaler = ScalerParams::fit(&encoded);
    for w in &scaler.warnings {
        eprintln!("warning: {w}");
    }
    let ds = scaler.apply(&encoded)?;
    Ok((ds, Preprocessing { schema, scaler }))
}

/// Loads a CSV with a saved model's schema and preprocessing.
pub fn load_for_model(model: &PieModel, path: &Path) -> Result<Dataset> {
    let Some(pre) = &model.preprocessing else {
        bail!("model file carries no schema; it cannot read raw CSV input");
    };
    let raw = load_csv_features(path, &pre.schema)?;
    let ds = pre.transform(&raw)?;
    model.check_columns(&ds)?;
    Ok(ds)
}

fn cv_rows(table: &CvTable) -> Vec<Vec<String>> {
    table
        .cells
        .iter()
        .map(|c| {
            vec![
                format_float(c.lambda1),
                format_float(c.lambda2),
                opt_float(c.criterion.map(|s| s.mean)),
                opt_float(c.criterion.map(|s| s.std)),
                opt_float(c.rpe.map(|s| s.mean)),
                opt_float(c.rpe.map(|s| s.std)),
                opt_float(c.pi_score.map(|s| s.mean)),
                opt_float(c.pi_score.map(|s| s.std)),
                opt_float(c.mean_active),
                c.error.clone().unwrap_or_default(),
            ]
        })
        .collect()
}

const CV_HEADER: [&str; 10] = [
    "lambda1",
    "lambda2",
    "mean_criterion",
    "std_criterion",
    "mean_rpe",
    "std_rpe",
    "mean_pi_score",
    "std_pi_score",
    "mean_active",
    "error",
];

fn select(table: &CvTable, max_active: Option<usize>) -> Result<Selection> {
    let s = match max_active {
        Some(m) => sparse_select(table, m)?,
        None => best_selection(table)?,
    };
    if let Some(w) = &s.warning {
        eprintln!("warning: {w}");
    }
    Ok(s)
}

/// Paths written by `train`.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub model: PathBuf,
    pub log: PathBuf,
    pub cv: Option<(PathBuf, PathBuf)>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutputs> {
    let (ds, pre) = load_training_data(&args.data)?;
    let stem = output_stem(&args.out);
    let mut selection = None;
    let mut cv_paths = None;
    let (lambda1, lambda2) = match (args.lambda1, args.lambda2) {
        (Penalty::Value(a), Penalty::Value(b)) => (a, b),
        (l1, l2) => {
            let grid1 = match l1 {
                Penalty::Value(v) => vec![v],
                Penalty::Auto => args.grid.lambda1(),
            };
            let grid2 = match l2 {
                Penalty::Value(v) => vec![v],
                Penalty::Auto => args.grid.lambda2(),
            };
            let base = args.model.config(grid1[0], grid2[0]);
            let table = cross_validate(&ds, &grid1, &grid2, args.folds, args.model.seed, &base)?;
            let s = select(&table, args.max_active)?;
            let csv_path = with_suffix(&stem, ".cv.csv");
            let json_path = with_suffix(&stem, ".cv.json");
            write_csv(&csv_path, &CV_HEADER, &cv_rows(&table))?;
            write_json(
                &json_path,
                &json!({ "run": run_record("train", args), "selection": s, "table": table }),
            )?;
            cv_paths = Some((csv_path, json_path));
            let chosen = (s.lambda1, s.lambda2);
            selection = Some(s);
            chosen
        }
    };
    let cfg = args.model.config(lambda1, lambda2);
    let model = fit_pie(&ds, &cfg)?.with_preprocessing(pre);
    for w in &model.meta.warnings {
        eprintln!("warning: {w}");
    }
    save_model(&model, &args.out)?;

    let report = evaluate(&model, &ds)?;
    let log_path = with_suffix(&stem, ".train.json");
    write_json(
        &log_path,
        &json!({
            "run": run_record("train", args),
            "config": cfg,
            "selection": selection,
            "iterations": model.meta.iterations,
            "converged": model.meta.converged,
            "objective_trace": model.meta.objective_trace,
            "trees": model.boost.trees.len(),
            "trees_rejected": model.meta.trees_rejected,
            "active_count": report.active,
            "active_features": model.active_features(),
            "train": report,
            "warnings": model.meta.warnings,
        }),
    )?;
    let pi = match (report.pi_score, &report.pi_note) {
        (Some(p), _) => format!("pi-score {}", format_float(p)),
        (None, Some(note)) => format!("pi-score n/a ({note})"),
        (None, None) => "pi-score n/a".to_string(),
    };
    let fit = match (report.rpe, report.log_loss) {
        (Some(r), _) => format!("train RPE {}", format_float(r)),
        (None, Some(l)) => format!("train log-loss {}", format_float(l)),
        _ => String::new(),
    };
    eprintln!(
        "trained: lambda1 {} lambda2 {}, {} iterations, |S| = {}, {fit}, {pi}",
        format_float(lambda1),
        format_float(lambda2),
        model.meta.iterations,
        report.active
    );
    Ok(TrainOutputs {
        model: args.out.clone(),
        log: log_path,
        cv: cv_paths,
    })
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let ds = load_for_model(&model, &args.data)?;
    let preds = model.predict_dataset(&ds)?;
    let logistic = model.loss() == LossKind::Logistic;
    let header: &[&str] = if logistic {
        &["row", "prediction", "probability"]
    } else {
        &["row", "prediction"]
    };
    let rows: Vec<Vec<String>> = preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut r = vec![i.to_string(), format_float(p.score)];
            if logistic {
                r.push(opt_float(p.probability));
            }
            r
        })
        .collect();
    write_csv(&args.out, header, &rows)?;
    write_json(&with_suffix(&args.out, ".run.json"), &run_record("predict", args))?;
    eprintln!("predicted {} rows", rows.len());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct Contribution {
    term: String,
    kind: &'static str,
    value: f64,
}

#[derive(Debug, Clone, Serialize)]
struct RowExplanation {
    row: usize,
    contributions: Vec<Contribution>,
    intercept: f64,
    crust: f64,
    total: f64,
    crust_share: f64,
}

fn explain_row(model: &PieModel, ds: &Dataset, row: usize) -> RowExplanation {
    let b = model.explain(ds.row(row));
    let mut contributions = vec![Contribution {
        term: "intercept".into(),
        kind: "intercept",
        value: b.intercept,
    }];
    contributions.extend(b.pie_values.iter().map(|p| Contribution {
        term: p.feature.clone(),
        kind: "pie",
        value: p.value,
    }));
    contributions.push(Contribution {
        term: "crust".into(),
        kind: "crust",
        value: b.crust,
    });
    contributions.sort_by(|a, b| b.value.abs().total_cmp(&a.value.abs()));
    RowExplanation {
        row,
        contributions,
        intercept: b.intercept,
        crust: b.crust,
        total: b.total,
        crust_share: b.crust_share,
    }
}

pub fn cmd_explain(args: &ExplainArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let ds = load_for_model(&model, &args.data)?;
    let rows: Vec<usize> = match &args.rows {
        Some(r) => r.clone(),
        None => (0..ds.n_rows()).collect(),
    };
    if let Some(&bad) = rows.iter().find(|&&r| r >= ds.n_rows()) {
        bail!("row {bad} out of range (data has {} rows)", ds.n_rows());
    }
    let explained: Vec<RowExplanation> = rows.iter().map(|&r| explain_row(&model, &ds, r)).collect();
    match args.format {
        Format::Json => {
            write_json(&args.out, &json!({ "run": run_record("explain", args), "rows": explained }))?;
        }
        Format::Csv => {
            let mut out = Vec::new();
            for e in &explained {
                for (rank, c) in e.contributions.iter().enumerate() {
                    out.push(vec![
                        e.row.to_string(),
                        (rank + 1).to_string(),
                        c.term.clone(),
                        c.kind.to_string(),
                        format_float(c.value),
                    ]);
                }
                out.push(vec![e.row.to_string(), String::new(), "total".into(), "total".into(), format_float(e.total)]);
                out.push(vec![
                    e.row.to_string(),
                    String::new(),
                    "crust_share".into(),
                    "crust_share".into(),
                    format_float(e.crust_share),
                ]);
            }
            write_csv(&args.out, &["row", "rank", "term", "kind", "value"], &out)?;
            write_json(&with_suffix(&args.out, ".run.json"), &run_record("explain", args))?;
        }
    }
    eprintln!("explained {} rows", explained.len());
    Ok(())
}

pub fn cmd_cv(args: &CvArgs) -> Result<()> {
    let (ds, _) = load_training_data(&args.data)?;
    let (grid1, grid2) = (args.grid.lambda1(), args.grid.lambda2());
    let base = args.model.config(grid1[0], grid2[0]);
    let table = cross_validate(&ds, &grid1, &grid2, args.folds, args.model.seed, &base)?;
    let selection = select(&table, args.max_active)?;
    let nested = if args.nested {
        Some(nested_cross_validate(
            &ds,
            &grid1,
            &grid2,
            args.folds,
            args.inner_holdout,
            args.model.seed,
            args.max_active,
            &base,
        )?)
    } else {
        None
    };
    write_json(
        &args.out,
        &json!({
            "run": run_record("cv", args),
            "config": base,
            "selection": selection,
            "table": table,
            "nested": nested,
        }),
    )?;
    write_csv(&with_suffix(&output_stem(&args.out), ".csv"), &CV_HEADER, &cv_rows(&table))?;
    eprintln!(
        "selected lambda1 {} lambda2 {}",
        format_float(selection.lambda1),
        format_float(selection.lambda2)
    );
    Ok(())
}

pub fn cmd_sensitivity(args: &SensitivityArgs) -> Result<()> {
    let (ds, _) = load_training_data(&args.data)?;
    let (grid1, grid2) = (args.grid.lambda1(), args.grid.lambda2());
    let base = args.model.config(grid1[0], grid2[0]);
    let grid = sensitivity_grid(&ds, &grid1, &grid2, args.holdout, args.model.seed, &base)?;
    write_json(
        &args.out,
        &json!({ "run": run_record("sensitivity", args), "config": base, "grid": grid }),
    )?;
    let mut rows = Vec::new();
    for (i, &l1) in grid.lambda1.iter().enumerate() {
        for (j, &l2) in grid.lambda2.iter().enumerate() {
            rows.push(vec![
                format_float(l1),
                format_float(l2),
                opt_float(grid.rpe[i][j]),
                opt_float(grid.pi_score[i][j]),
                grid.active[i][j].map(|a| a.to_string()).unwrap_or_default(),
                grid.errors[i][j].clone().unwrap_or_default(),
            ]);
        }
    }
    write_csv(
        &with_suffix(&output_stem(&args.out), ".csv"),
        &["lambda1", "lambda2", "rpe", "pi_score", "active", "error"],
        &rows,
    )?;
    eprintln!("sensitivity grid {}x{} written", grid1.len(), grid2.len());
    Ok(())
}
