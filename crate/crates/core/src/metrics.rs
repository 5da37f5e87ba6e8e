//! Evaluation metrics, cross-validation over penalty grids, sparse model
//! selection and sensitivity grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{holdout_split, kfold_split, Dataset};
use crate::error::{PieError, Result};
use crate::loss::LossKind;
use crate::penalty_serde;
use crate::trainer::{fit_pie, PieConfig, PieModel};

/// Relative prediction error `sum (y - yhat)^2 / sum (y - ybar)^2`, with
/// `ybar` the mean of the evaluation targets.
pub fn rpe(pred: &[f64], y: &[f64]) -> Result<f64> {
    if pred.len() != y.len() {
        return Err(PieError::InvalidArgument(format!(
            "{} predictions for {} targets",
            pred.len(),
            y.len()
        )));
    }
    if y.len() < 2 {
        return Err(PieError::UndefinedRpe);
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let total: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if total == 0.0 {
        return Err(PieError::UndefinedRpe);
    }
    let resid: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(resid / total)
}

pub fn r_squared(pred: &[f64], y: &[f64]) -> Result<f64> {
    Ok(1.0 - rpe(pred, y)?)
}

/// `R^2(g) / R^2(f)` on `ds`; only defined for squared-loss models that
/// explain some variance.
pub fn pi_score(model: &PieModel, ds: &Dataset) -> Result<f64> {
    if model.loss() != LossKind::Squared {
        return Err(PieError::UndefinedPiScore(
            "only defined for squared-loss models".into(),
        ));
    }
    let y = ds.y()?.to_vec();
    let full: Vec<f64> = model.predict_dataset(ds)?.iter().map(|p| p.score).collect();
    let r2_full = r_squared(&full, &y)?;
    if r2_full <= 0.0 {
        return Err(PieError::UndefinedPiScore("model explains no variance".into()));
    }
    if model.boost.is_empty() {
        return Ok(1.0);
    }
    let gam = model.gam_scores(ds)?;
    Ok(r_squared(&gam, &y)? / r2_full)
}

/// Metrics of one model on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rpe: Option<f64>,
    pub r_squared: Option<f64>,
    pub pi_score: Option<f64>,
    /// Set when the pi-score is undefined or exceeds 1.
    pub pi_note: Option<String>,
    pub log_loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub active: usize,
}

impl EvalReport {
    /// Selection criterion: RPE for regression, log-loss for classification.
    pub fn criterion(&self) -> f64 {
        self.rpe.or(self.log_loss).unwrap_or(f64::INFINITY)
    }
}

pub fn evaluate(model: &PieModel, ds: &Dataset) -> Result<EvalReport> {
    let y = ds.y()?.to_vec();
    let preds = model.predict_dataset(ds)?;
    let active = model.active_set().len();
    match model.loss() {
        LossKind::Squared => {
            let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
            let rpe = rpe(&scores, &y)?;
            let (pi, note) = match pi_score(model, ds) {
                Ok(p) if p > 1.0 => (
                    Some(p),
                    Some("pi-score above 1: the boosted part lowers R^2".to_string()),
                ),
                Ok(p) => (Some(p), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Ok(EvalReport {
                rpe: Some(rpe),
                r_squared: Some(1.0 - rpe),
                pi_score: pi,
                pi_note: note,
                log_loss: None,
                accuracy: None,
                active,
            })
        }
        LossKind::Logistic => {
            let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
            let correct = y
                .iter()
                .zip(&scores)
                .filter(|(y, s)| (**s >= 0.0) == (**y > 0.0))
                .count();
            Ok(EvalReport {
                rpe: None,
                r_squared: None,
                pi_score: None,
                pi_note: Some("pi-score undefined for logistic models".into()),
                log_loss: Some(LossKind::Logistic.mean_loss(&y, &scores)),
                accuracy: Some(correct as f64 / y.len() as f64),
                active,
            })
        }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation of a column of fold metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(values);
        Some(Summary { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    #[serde(with = "penalty_serde")]
    pub lambda1: f64,
    #[serde(with = "penalty_serde")]
    pub lambda2: f64,
    pub folds: Vec<EvalReport>,
    pub criterion: Option<Summary>,
    pub rpe: Option<Summary>,
    pub pi_score: Option<Summary>,
    pub mean_active: Option<f64>,
    pub error: Option<String>,
}

impl CvCell {
    fn from_folds(lambda1: f64, lambda2: f64, results: Vec<Result<EvalReport>>) -> Self {
        let mut folds = Vec::new();
        let mut error = None;
        for r in results {
            match r {
                Ok(report) => folds.push(report),
                Err(e) => {
                    error.get_or_insert_with(|| e.to_string());
                }
            }
        }
        if error.is_some() {
            return CvCell {
                lambda1,
                lambda2,
                folds,
                criterion: None,
                rpe: None,
                pi_score: None,
                mean_active: None,
                error,
            };
        }
        let crit: Vec<f64> = folds.iter().map(EvalReport::criterion).collect();
        let rpes: Vec<f64> = folds.iter().filter_map(|f| f.rpe).collect();
        let pis: Vec<f64> = folds.iter().filter_map(|f| f.pi_score).collect();
        let active: Vec<f64> = folds.iter().map(|f| f.active as f64).collect();
        CvCell {
            lambda1,
            lambda2,
            criterion: Summary::of(&crit),
            rpe: Summary::of(&rpes),
            pi_score: Summary::of(&pis),
            mean_active: Summary::of(&active).map(|s| s.mean),
            folds,
            error: None,
        }
    }

    fn mean_criterion(&self) -> Option<f64> {
        self.criterion.map(|s| s.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub folds: usize,
    pub seed: u64,
    pub cells: Vec<CvCell>,
    /// Index of the cell with the lowest mean criterion.
    pub best: Option<usize>,
}

/// `a` is preferred over `b`: lower criterion, then larger lambda1, then
/// larger lambda2.
fn preferred(a: &CvCell, b: &CvCell) -> bool {
    let (ca, cb) = (a.mean_criterion().unwrap(), b.mean_criterion().unwrap());
    if ca != cb {
        return ca < cb;
    }
    if a.lambda1 != b.lambda1 {
        return a.lambda1 > b.lambda1;
    }
    a.lambda2 > b.lambda2
}

fn best_cell(cells: &[CvCell], admissible: impl Fn(&CvCell) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        if c.mean_criterion().is_none() || !admissible(c) {
            continue;
        }
        if best.is_none_or(|b| preferred(c, &cells[b])) {
            best = Some(i);
        }
    }
    best
}

fn grid_pairs(lambda1: &[f64], lambda2: &[f64]) -> Result<Vec<(f64, f64)>> {
    if lambda1.is_empty() || lambda2.is_empty() {
        return Err(PieError::InvalidArgument("penalty grids must be non-empty".into()));
    }
    Ok(lambda1
        .iter()
        .flat_map(|&a| lambda2.iter().map(move |&b| (a, b)))
        .collect())
}

fn fit_and_evaluate(ds: &Dataset, train: &[usize], test: &[usize], cfg: &PieConfig) -> Result<EvalReport> {
    let model = fit_pie(&ds.subset(train), cfg)?;
    evaluate(&model, &ds.subset(test))
}

/// k-fold cross-validation of every `(lambda1, lambda2)` pair. Cells are
/// ordered lambda1-major; failures are recorded per cell.
pub fn cross_validate(
    ds: &Dataset,
    lambda1_grid: &[f64],
    lambda2_grid: &[f64],
    k: usize,
    seed: u64,
    cfg: &PieConfig,
) -> Result<CvTable> {
    let pairs = grid_pairs(lambda1_grid, lambda2_grid)?;
    let folds = kfold_split(ds.n_rows(), k, seed)?;
    let jobs: Vec<(usize, usize)> = (0..pairs.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let mut results: Vec<Result<EvalReport>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (l1, l2) = pairs[c];
            fit_and_evaluate(ds, &folds[f].train, &folds[f].test, &cfg.with_lambdas(l1, l2))
        })
        .collect();
    let mut cells = Vec::with_capacity(pairs.len());
    for &(l1, l2) in pairs.iter().rev() {
        let tail = results.split_off(results.len() - folds.len());
        cells.push(CvCell::from_folds(l1, l2, tail));
    }
    cells.reverse();
    let best = best_cell(&cells, |_| true);
    Ok(CvTable {
        folds: k,
        seed,
        cells,
        best,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    #[serde(with = "penalty_serde")]
    pub lambda1: f64,
    #[serde(with = "penalty_serde")]
    pub lambda2: f64,
    pub max_active: Option<usize>,
    pub warning: Option<String>,
}

/// Best cell among those whose mean active-feature count is at most
/// `max_active`; falls back to the sparsest cell with a warning.
pub fn sparse_select(table: &CvTable, max_active: usize) -> Result<Selection> {
    let usable: Vec<&CvCell> = table.cells.iter().filter(|c| c.mean_criterion().is_some()).collect();
    if usable.is_empty() {
        return Err(PieError::InvalidArgument("no successful cells to select from".into()));
    }
    let limit = max_active as f64;
    let pick = |index: usize, warning: Option<String>| {
        let c = &table.cells[index];
        Selection {
            index,
            lambda1: c.lambda1,
            lambda2: c.lambda2,
            max_active: Some(max_active),
            warning,
        }
    };
    if let Some(i) = best_cell(&table.cells, |c| c.mean_active.is_some_and(|a| a <= limit)) {
        return Ok(pick(i, None));
    }
    let mut sparsest: Option<usize> = None;
    for (i, c) in table.cells.iter().enumerate() {
        let Some(a) = c.mean_active else { continue };
        let better = match sparsest {
            None => true,
            Some(s) => {
                let b = table.cells[s].mean_active.unwrap();
                a < b || (a == b && preferred(c, &table.cells[s]))
            }
        };
        if better {
            sparsest = Some(i);
        }
    }
    let i = sparsest.expect("at least one usable cell");
    Ok(pick(
        i,
        Some(format!(
            "no cell has at most {max_active} active features; chose the sparsest ({:.2})",
            table.cells[i].mean_active.unwrap()
        )),
    ))
}

/// Unconstrained selection from a table.
pub fn best_selection(table: &CvTable) -> Result<Selection> {
    let index = table
        .best
        .ok_or_else(|| PieError::InvalidArgument("no successful cells to select from".into()))?;
    let c = &table.cells[index];
    Ok(Selection {
        index,
        lambda1: c.lambda1,
        lambda2: c.lambda2,
        max_active: None,
        warning: None,
    })
}

/// Plot-ready metric matrices; rows follow `lambda1`, columns `lambda2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGrid {
    #[serde(with = "penalty_vec")]
    pub lambda1: Vec<f64>,
    #[serde(with = "penalty_vec")]
    pub lambda2: Vec<f64>,
    pub holdout_fraction: f64,
    pub seed: u64,
    pub rpe: Vec<Vec<Option<f64>>>,
    pub pi_score: Vec<Vec<Option<f64>>>,
    pub active: Vec<Vec<Option<usize>>>,
    pub errors: Vec<Vec<Option<String>>>,
}

/// One fit per grid cell on a shuffled train split, metrics on the holdout.
pub fn sensitivity_grid(
    ds: &Dataset,
    lambda1: &[f64],
    lambda2: &[f64],
    holdout_fraction: f64,
    seed: u64,
    cfg: &PieConfig,
) -> Result<SensitivityGrid> {
    let pairs = grid_pairs(lambda1, lambda2)?;
    let split = holdout_split(ds.n_rows(), holdout_fraction, seed)?;
    let (train, test) = (ds.subset(&split.train), ds.subset(&split.test));
    let results: Vec<Result<EvalReport>> = pairs
        .par_iter()
        .map(|&(l1, l2)| {
            let model = fit_pie(&train, &cfg.with_lambdas(l1, l2))?;
            evaluate(&model, &test)
        })
        .collect();
    let cols = lambda2.len();
    let mut grid = SensitivityGrid {
        lambda1: lambda1.to_vec(),
        lambda2: lambda2.to_vec(),
        holdout_fraction,
        seed,
        rpe: vec![vec![None; cols]; lambda1.len()],
        pi_score: vec![vec![None; cols]; lambda1.len()],
        active: vec![vec![None; cols]; lambda1.len()],
        errors: vec![vec![None; cols]; lambda1.len()],
    };
    for (idx, r) in results.into_iter().enumerate() {
        let (i, j) = (idx / cols, idx % cols);
        match r {
            Ok(report) => {
                grid.rpe[i][j] = report.rpe.or(report.log_loss);
                grid.pi_score[i][j] = report.pi_score;
                grid.active[i][j] = Some(report.active);
            }
            Err(e) => grid.errors[i][j] = Some(e.to_string()),
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedFold {
    pub selection: Selection,
    pub report: EvalReport,
}

/// Outer k-fold evaluation; within each outer training split the penalties
/// are tuned on an inner holdout, then the model is refit on the whole
/// outer training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedReport {
    pub protocol: String,
    pub folds: Vec<NestedFold>,
    pub criterion: Summary,
    pub rpe: Option<Summary>,
    pub pi_score: Option<Summary>,
}

#[allow(clippy::too_many_arguments)]
pub fn nested_cross_validate(
    ds: &Dataset,
    lambda1_grid: &[f64],
    lambda2_grid: &[f64],
    k: usize,
    inner_holdout: f64,
    seed: u64,
    max_active: Option<usize>,
    cfg: &PieConfig,
) -> Result<NestedReport> {
    let pairs = grid_pairs(lambda1_grid, lambda2_grid)?;
    let outer = kfold_split(ds.n_rows(), k, seed)?;
    let mut folds = Vec::with_capacity(k);
    for (f, fold) in outer.iter().enumerate() {
        let train = ds.subset(&fold.train);
        let inner = holdout_split(train.n_rows(), inner_holdout, seed.wrapping_add(f as u64 + 1))?;
        let results: Vec<Result<EvalReport>> = pairs
            .par_iter()
            .map(|&(l1, l2)| fit_and_evaluate(&train, &inner.train, &inner.test, &cfg.with_lambdas(l1, l2)))
            .collect();
        let cells: Vec<CvCell> = pairs
            .iter()
            .zip(results)
            .map(|(&(l1, l2), r)| CvCell::from_folds(l1, l2, vec![r]))
            .collect();
        let best = best_cell(&cells, |_| true);
        let table = CvTable {
            folds: 1,
            seed,
            cells,
            best,
        };
        let selection = match max_active {
            Some(m) => sparse_select(&table, m)?,
            None => best_selection(&table)?,
        };
        let model = fit_pie(&train, &cfg.with_lambdas(selection.lambda1, selection.lambda2))?;
        let report = evaluate(&model, &ds.subset(&fold.test))?;
        folds.push(NestedFold { selection, report });
    }
    let crit: Vec<f64> = folds.iter().map(|f| f.report.criterion()).collect();
    let rpes: Vec<f64> = folds.iter().filter_map(|f| f.report.rpe).collect();
    let pis: Vec<f64> = folds.iter().filter_map(|f| f.report.pi_score).collect();
    Ok(NestedReport {
        protocol: format!(
            "{k}-fold outer split; penalties tuned on a {:.0}% inner holdout of each outer training split, then refit",
            inner_holdout * 100.0
        ),
        folds,
        criterion: Summary::of(&crit).expect("k >= 2 folds"),
        rpe: Summary::of(&rpes),
        pi_score: Summary::of(&pis),
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let rank = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                out[k] = rank;
            }
            i = j + 1;
        }
        out
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Default penalty grids: five log-spaced values in [1e-4, 1], and for
/// lambda2 also `inf`.
pub fn default_lambda1_grid() -> Vec<f64> {
    vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0]
}

pub fn default_lambda2_grid() -> Vec<f64> {
    vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0, f64::INFINITY]
}

mod penalty_vec {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(serde::Serialize, Deserialize)]
    struct Wrap(#[serde(with = "crate::penalty_serde")] f64);

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&Wrap(*x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Wrap>::deserialize(d)?.into_iter().map(|w| w.0).collect())
    }
}
