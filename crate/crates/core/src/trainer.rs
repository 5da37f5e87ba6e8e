//! Joint training of the interpretable and boosted pieces.
//!
//! Starting from the zero model, every outer iteration runs one GAM cycle
//! with the boosted part held fixed, then fits one penalized tree to the
//! negative gradient of the current fit and appends it with shrinkage. A
//! tree that would raise the global objective is discarded, so the
//! objective trace never increases.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::basis::{build_design, specs_for_dataset, BasisKind};
use crate::boost::{fit_tree_presorted, BoostModel, FeatureOrder, TreeParams};
use crate::dataio::{Dataset, Preprocessing};
use crate::error::{PieError, Result};
use crate::gam::{gam_pass, penalty, GamModel, GamProblem, GamState, InterceptStep};
use crate::loss::{negative_gradient, LossKind};
use crate::penalty_serde;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieConfig {
    pub loss: LossKind,
    /// Grouped-lasso weight; `inf` disables the additive blocks.
    #[serde(with = "penalty_serde")]
    pub lambda1: f64,
    /// Tree penalty weight; `inf` disables boosting.
    #[serde(with = "penalty_serde")]
    pub lambda2: f64,
    pub max_iter: usize,
    /// Relative objective change that ends training.
    pub tol: f64,
    pub shrinkage: f64,
    pub max_leaves: usize,
    pub min_leaf: usize,
    /// Basis functions per spline block (K).
    pub n_basis: usize,
    pub degree: usize,
    pub basis: BasisKind,
    pub intercept_step: InterceptStep,
    pub seed: u64,
}

impl Default for PieConfig {
    fn default() -> Self {
        PieConfig {
            loss: LossKind::Squared,
            lambda1: 0.01,
            lambda2: 0.01,
            max_iter: 500,
            tol: 1e-6,
            shrinkage: 0.1,
            max_leaves: 8,
            min_leaf: 5,
            n_basis: 8,
            degree: 3,
            basis: BasisKind::Bspline,
            intercept_step: InterceptStep::Curvature,
            seed: 0,
        }
    }
}

impl PieConfig {
    pub fn with_lambdas(&self, lambda1: f64, lambda2: f64) -> Self {
        PieConfig {
            lambda1,
            lambda2,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PieError::InvalidArgument(msg));
        if self.lambda1.is_nan() || self.lambda1 < 0.0 {
            return bad(format!("lambda1 must be non-negative, got {}", self.lambda1));
        }
        if self.lambda2.is_nan() || self.lambda2 < 0.0 {
            return bad(format!("lambda2 must be non-negative, got {}", self.lambda2));
        }
        if self.max_iter == 0 || self.max_leaves == 0 || self.min_leaf == 0 || self.n_basis == 0 {
            return bad("max_iter, max_leaves, min_leaf and n_basis must be at least 1".into());
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return bad(format!("shrinkage must lie in (0, 1], got {}", self.shrinkage));
        }
        Ok(())
    }

    pub fn boosting_enabled(&self) -> bool {
        self.lambda2.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    /// Objective at initialization followed by one value per iteration.
    pub objective_trace: Vec<f64>,
    pub trees_rejected: usize,
    pub stalls: usize,
    pub n_train: usize,
    /// Targets are used as given.
    pub target_transform: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PieModel {
    pub gam: GamModel,
    pub boost: BoostModel,
    pub config: PieConfig,
    pub meta: TrainingMeta,
    pub preprocessing: Option<Preprocessing>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// `g(x) + kappa(x)`.
    pub score: f64,
    /// `sigmoid(score)` for logistic models.
    pub probability: Option<f64>,
}

impl Prediction {
    /// Prediction on the response scale.
    pub fn value(&self) -> f64 {
        self.probability.unwrap_or(self.score)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieValue {
    pub feature: String,
    pub value: f64,
}

/// Additive decomposition of one prediction (on the score scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub intercept: f64,
    pub pie_values: Vec<PieValue>,
    /// Boosted contribution.
    pub crust: f64,
    pub total: f64,
    /// `|crust| / (sum |pie| + |crust|)`; a per-instance summary, not the
    /// dataset-level pi-score.
    pub crust_share: f64,
}

impl PieModel {
    pub fn loss(&self) -> LossKind {
        self.config.loss
    }

    pub fn columns(&self) -> &[String] {
        &self.gam.columns
    }

    pub fn active_set(&self) -> Vec<usize> {
        self.gam.active_set()
    }

    pub fn active_features(&self) -> Vec<String> {
        self.active_set()
            .into_iter()
            .map(|j| self.gam.feature_names[j].clone())
            .collect()
    }

    pub fn with_preprocessing(mut self, preprocessing: Preprocessing) -> Self {
        self.preprocessing = Some(preprocessing);
        self
    }

    pub fn score(&self, row: ArrayView1<'_, f64>) -> f64 {
        self.gam.predict(row) + self.boost.predict(row)
    }

    pub fn predict(&self, row: ArrayView1<'_, f64>) -> Prediction {
        let score = self.score(row);
        Prediction {
            score,
            probability: match self.config.loss {
                LossKind::Squared => None,
                LossKind::Logistic => Some(self.config.loss.link(score)),
            },
        }
    }

    /// Checks that `ds` carries exactly the encoded columns used at fit time.
    pub fn check_columns(&self, ds: &Dataset) -> Result<()> {
        let got = ds.column_names();
        if got == self.gam.columns {
            return Ok(());
        }
        let missing = self
            .gam
            .columns
            .iter()
            .filter(|c| !got.contains(c))
            .cloned()
            .collect();
        let extra = got
            .iter()
            .filter(|c| !self.gam.columns.contains(c))
            .cloned()
            .collect();
        Err(PieError::ColumnMismatch { missing, extra })
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<Prediction>> {
        self.check_columns(ds)?;
        Ok((0..ds.n_rows()).map(|i| self.predict(ds.row(i))).collect())
    }

    /// Scores of the interpretable piece alone.
    pub fn gam_scores(&self, ds: &Dataset) -> Result<Vec<f64>> {
        self.check_columns(ds)?;
        Ok((0..ds.n_rows()).map(|i| self.gam.predict(ds.row(i))).collect())
    }

    pub fn explain(&self, row: ArrayView1<'_, f64>) -> Breakdown {
        let pies = self.gam.pie_values(row);
        let g = self.gam.intercept + pies.iter().sum::<f64>();
        let crust = self.boost.predict(row);
        let denom = pies.iter().map(|p| p.abs()).sum::<f64>() + crust.abs();
        Breakdown {
            intercept: self.gam.intercept,
            pie_values: self
                .gam
                .feature_names
                .iter()
                .zip(pies)
                .map(|(name, value)| PieValue {
                    feature: name.clone(),
                    value,
                })
                .collect(),
            crust,
            total: g + crust,
            crust_share: if denom > 0.0 { crust.abs() / denom } else { 0.0 },
        }
    }

    /// Global objective on a labeled dataset.
    pub fn objective(&self, ds: &Dataset) -> Result<f64> {
        let y = ds.y()?;
        let scores: Vec<f64> = self.predict_dataset(ds)?.iter().map(|p| p.score).collect();
        let norms: f64 = self.gam.coefficients.iter().map(|a| crate::gam::l2_norm(a)).sum();
        Ok(objective_value(
            self.config.loss,
            y.as_slice().expect("contiguous targets"),
            &scores,
            self.config.lambda1,
            norms,
            self.config.lambda2,
            self.boost.penalty(),
        ))
    }
}

/// `(1/n) sum L(y, f) + lambda1 * sum ||alpha_j|| + lambda2 * sum_t sum_leaves (1 + w^2)`.
pub fn objective_value(
    loss: LossKind,
    y: &[f64],
    scores: &[f64],
    lambda1: f64,
    group_norms: f64,
    lambda2: f64,
    tree_penalty: f64,
) -> f64 {
    loss.mean_loss(y, scores) + penalty(lambda1, group_norms) + penalty(lambda2, tree_penalty)
}

/// The interpretable piece of a fitted model, with the boosted part dropped.
pub fn extract_gam(model: &PieModel) -> GamModel {
    model.gam.clone()
}

fn check_targets(y: &[f64], loss: LossKind) -> Result<()> {
    if loss == LossKind::Logistic {
        if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(PieError::InvalidData(format!(
                "logistic loss needs targets in {{-1, +1}}, found {bad}"
            )));
        }
    }
    Ok(())
}

/// Fits a model on an encoded, standardized dataset.
pub fn fit_pie(ds: &Dataset, cfg: &PieConfig) -> Result<PieModel> {
    cfg.validate()?;
    if let Some(c) = ds
        .columns()
        .iter()
        .find(|c| matches!(c.kind, crate::dataio::ColumnKind::Categorical { .. }))
    {
        return Err(PieError::NotEncoded(c.name.clone()));
    }
    if ds.n_rows() < 2 {
        return Err(PieError::InvalidData(format!("need at least 2 training rows, got {}", ds.n_rows())));
    }
    let y_arr = ds.y()?;
    let y = y_arr.as_slice().expect("contiguous targets");
    check_targets(y, cfg.loss)?;
    let n = ds.n_rows();
    let loss = cfg.loss;

    let (mut specs, mut warnings) = specs_for_dataset(ds, cfg.basis, cfg.n_basis, cfg.degree)?;
    warnings.extend(ds.warnings().iter().cloned());
    let designs = build_design(ds, &mut specs)?;
    let x = ds.x();

    let mut state = GamState::zeros(&designs, n);
    let mut kappa = vec![0.0; n];
    let mut boost = BoostModel::new(cfg.shrinkage, cfg.lambda2);
    let order = cfg.boosting_enabled().then(|| FeatureOrder::new(x));
    let tree_params = TreeParams {
        lambda2: cfg.lambda2,
        max_leaves: cfg.max_leaves,
        min_leaf: cfg.min_leaf,
    };

    let total = |state: &GamState, kappa: &[f64], tree_penalty: f64| {
        let scores: Vec<f64> = state.fit.iter().zip(kappa).map(|(g, k)| g + k).collect();
        objective_value(
            loss,
            y,
            &scores,
            cfg.lambda1,
            state.group_norm_sum(),
            cfg.lambda2,
            tree_penalty,
        )
    };

    let mut prev = total(&state, &kappa, 0.0);
    let mut trace = vec![prev];
    let mut iterations = 0;
    let mut converged = false;
    let mut trees_rejected = 0;

    for t in 1..=cfg.max_iter {
        iterations = t;
        let problem = GamProblem {
            y,
            offset: &kappa,
            designs: &designs,
            loss,
            lambda1: cfg.lambda1,
            intercept_step: cfg.intercept_step,
        };
        gam_pass(&problem, &mut state);

        if let Some(order) = &order {
            let current = total(&state, &kappa, boost.penalty());
            let fit: Vec<f64> = state.fit.iter().zip(&kappa).map(|(g, k)| g + k).collect();
            let r = negative_gradient(y, &fit, loss);
            let tree = fit_tree_presorted(&r, x, order, &tree_params);
            let candidate = crate::boost::append_tree(&boost, &tree);
            let added = candidate.trees.last().expect("tree appended");
            let cand_kappa: Vec<f64> = kappa
                .iter()
                .enumerate()
                .map(|(i, k)| k + added.predict(x.row(i)))
                .collect();
            if total(&state, &cand_kappa, candidate.penalty()) < current {
                boost = candidate;
                kappa = cand_kappa;
            } else {
                trees_rejected += 1;
            }
        }

        let obj = total(&state, &kappa, boost.penalty());
        if !obj.is_finite() {
            return Err(PieError::NonFiniteObjective {
                iteration: t,
                detail: format!("objective = {obj}"),
            });
        }
        trace.push(obj);
        let change = (prev - obj).abs();
        prev = obj;
        if change < cfg.tol * obj.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    if state.stalls > 0 {
        warnings.push(format!("{} block updates stalled in backtracking", state.stalls));
    }
    let (feature_names, columns) = (ds.feature_names().to_vec(), ds.column_names());
    Ok(PieModel {
        gam: GamModel {
            intercept: state.intercept,
            specs,
            coefficients: state.coefficients,
            feature_names,
            columns,
        },
        boost,
        config: cfg.clone(),
        meta: TrainingMeta {
            iterations,
            converged,
            final_objective: prev,
            objective_trace: trace,
            trees_rejected,
            stalls: state.stalls,
            n_train: n,
            target_transform: "none".to_string(),
            warnings,
        },
        preprocessing: None,
    })
}
