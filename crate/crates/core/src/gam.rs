//! Grouped-lasso spline GAM, the interpretable piece of the estimator.
//!
//! Coefficient blocks are updated one at a time in ascending group order
//! (one Gauss-Seidel cycle per call to [`gam_pass`]) by a proximal gradient
//! step with step size `1 / L_j`, followed by a gradient step on the
//! intercept. Each step is guarded by backtracking on the penalized
//! objective, so a pass never increases it.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::basis::{block_lipschitz, BasisMatrix, SplineSpec};
use crate::loss::LossKind;

const MAX_HALVINGS: usize = 50;

/// Step size rule for the intercept update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InterceptStep {
    /// `1 / M`, the exact curvature bound of the intercept coordinate.
    #[default]
    Curvature,
    /// `1 / n` for squared loss, `1 / (4 n)` for logistic loss.
    Fixed,
}

impl InterceptStep {
    fn step(self, loss: LossKind, n: usize) -> f64 {
        match self {
            InterceptStep::Curvature => 1.0 / loss.curvature_bound(),
            InterceptStep::Fixed => match loss {
                LossKind::Squared => 1.0 / n as f64,
                LossKind::Logistic => 1.0 / (4.0 * n as f64),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamModel {
    pub intercept: f64,
    /// One block per group, `specs[j].group == j`.
    pub specs: Vec<SplineSpec>,
    pub coefficients: Vec<Vec<f64>>,
    /// Original feature name of each group.
    pub feature_names: Vec<String>,
    /// Encoded input columns the specs index into.
    pub columns: Vec<String>,
}

impl GamModel {
    pub fn n_groups(&self) -> usize {
        self.specs.len()
    }

    /// Groups with a non-zero coefficient block.
    pub fn active_set(&self) -> Vec<usize> {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, a)| a.iter().any(|&v| v != 0.0))
            .map(|(j, _)| j)
            .collect()
    }

    /// Per-group contributions at one encoded row; exactly 0 for inactive groups.
    pub fn pie_values(&self, row: ArrayView1<'_, f64>) -> Vec<f64> {
        let mut buf = Vec::new();
        self.specs
            .iter()
            .zip(&self.coefficients)
            .map(|(spec, alpha)| {
                if alpha.iter().all(|&v| v == 0.0) {
                    return 0.0;
                }
                buf.resize(spec.n_basis(), 0.0);
                spec.eval_centered(row, &mut buf);
                buf.iter().zip(alpha).map(|(b, a)| b * a).sum()
            })
            .collect()
    }

    pub fn predict(&self, row: ArrayView1<'_, f64>) -> f64 {
        self.intercept + self.pie_values(row).iter().sum::<f64>()
    }
}

/// Block soft-threshold: the minimizer of `tau ||a|| + ||a - gamma||^2 / 2`.
pub fn group_prox(gamma: &[f64], tau: f64) -> Vec<f64> {
    let norm = l2_norm(gamma);
    if norm <= tau || tau.is_infinite() {
        return vec![0.0; gamma.len()];
    }
    let scale = 1.0 - tau / norm;
    gamma.iter().map(|g| g * scale).collect()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `lambda * value`, with `inf * 0 = 0` so disabled components cost nothing.
pub fn penalty(lambda: f64, value: f64) -> f64 {
    if value == 0.0 {
        0.0
    } else {
        lambda * value
    }
}

/// `(1/n) psi' L'(y, fit)` for one block, where `fit` is the full current
/// prediction (interpretable plus boosted part).
pub fn block_gradient(psi: &BasisMatrix, y: &[f64], fit: &[f64], loss: LossKind) -> Vec<f64> {
    let n = y.len();
    let dloss: Vec<f64> = y.iter().zip(fit).map(|(&y, &f)| loss.derivative(y, f)).collect();
    gradient_from_dloss(psi, &dloss, n)
}

fn gradient_from_dloss(psi: &BasisMatrix, dloss: &[f64], n: usize) -> Vec<f64> {
    let mut grad = vec![0.0; psi.n_basis()];
    for (row, d) in psi.values().rows().into_iter().zip(dloss) {
        for (g, v) in grad.iter_mut().zip(row) {
            *g += v * d;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n as f64);
    grad
}

/// Everything held fixed while the GAM blocks move.
#[derive(Debug, Clone, Copy)]
pub struct GamProblem<'a> {
    pub y: &'a [f64],
    /// Current boosted contribution per training row.
    pub offset: &'a [f64],
    pub designs: &'a [BasisMatrix],
    pub loss: LossKind,
    pub lambda1: f64,
    pub intercept_step: InterceptStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GamState {
    pub intercept: f64,
    pub coefficients: Vec<Vec<f64>>,
    /// `g(x_i)` on the training rows, kept in sync with the coefficients.
    pub fit: Vec<f64>,
    /// Count of updates abandoned after exhausting backtracking.
    pub stalls: usize,
}

impl GamState {
    pub fn zeros(designs: &[BasisMatrix], n: usize) -> Self {
        GamState {
            intercept: 0.0,
            coefficients: designs.iter().map(|d| vec![0.0; d.n_basis()]).collect(),
            fit: vec![0.0; n],
            stalls: 0,
        }
    }

    pub fn group_norm_sum(&self) -> f64 {
        self.coefficients.iter().map(|a| l2_norm(a)).sum()
    }
}

impl GamProblem<'_> {
    fn n(&self) -> usize {
        self.y.len()
    }

    fn mean_loss(&self, fit: &[f64]) -> f64 {
        let total: f64 = self
            .y
            .iter()
            .zip(fit)
            .zip(self.offset)
            .map(|((&y, &g), &k)| self.loss.loss(y, g + k))
            .sum();
        total / self.n() as f64
    }

    /// Average loss plus the grouped-lasso penalty, boosted part held fixed.
    pub fn objective(&self, state: &GamState) -> f64 {
        self.mean_loss(&state.fit) + penalty(self.lambda1, state.group_norm_sum())
    }

    fn dloss(&self, state: &GamState) -> Vec<f64> {
        self.y
            .iter()
            .zip(&state.fit)
            .zip(self.offset)
            .map(|((&y, &g), &k)| self.loss.derivative(y, g + k))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Accepted { halvings: usize },
    Unchanged,
    Stalled,
}

/// Proximal gradient update of block `j`.
pub fn update_block(problem: &GamProblem<'_>, state: &mut GamState, j: usize) -> StepOutcome {
    let design = &problem.designs[j];
    let psi = design.values();
    let n = problem.n();
    let alpha = state.coefficients[j].clone();

    if problem.lambda1.is_infinite() {
        if alpha.iter().all(|&a| a == 0.0) {
            return StepOutcome::Unchanged;
        }
        let delta: Vec<f64> = alpha.iter().map(|a| -a).collect();
        apply_delta(psi, &delta, &mut state.fit);
        state.coefficients[j] = vec![0.0; alpha.len()];
        return StepOutcome::Accepted { halvings: 0 };
    }

    let current = problem.objective(state);
    let grad = gradient_from_dloss(design, &problem.dloss(state), n);
    let other_norms = state.group_norm_sum() - l2_norm(&alpha);
    let mut step = 1.0 / block_lipschitz(design, problem.loss.curvature_bound(), n);
    let mut cand_fit = state.fit.clone();

    for halvings in 0..=MAX_HALVINGS {
        let gamma: Vec<f64> = alpha.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
        let cand = group_prox(&gamma, problem.lambda1 * step);
        let delta: Vec<f64> = cand.iter().zip(&alpha).map(|(c, a)| c - a).collect();
        if delta.iter().all(|&d| d == 0.0) {
            return StepOutcome::Unchanged;
        }
        cand_fit.copy_from_slice(&state.fit);
        apply_delta(psi, &delta, &mut cand_fit);
        let obj = problem.mean_loss(&cand_fit)
            + penalty(problem.lambda1, other_norms + l2_norm(&cand));
        if obj <= current {
            state.coefficients[j] = cand;
            state.fit = cand_fit;
            return StepOutcome::Accepted { halvings };
        }
        step *= 0.5;
    }
    state.stalls += 1;
    StepOutcome::Stalled
}

fn apply_delta(psi: &ndarray::Array2<f64>, delta: &[f64], fit: &mut [f64]) {
    for (row, f) in psi.rows().into_iter().zip(fit.iter_mut()) {
        *f += row.iter().zip(delta).map(|(p, d)| p * d).sum::<f64>();
    }
}

/// One gradient step on the unpenalized intercept.
pub fn update_intercept(problem: &GamProblem<'_>, state: &mut GamState) -> StepOutcome {
    let n = problem.n();
    let grad = problem.dloss(state).iter().sum::<f64>() / n as f64;
    if grad == 0.0 {
        return StepOutcome::Unchanged;
    }
    let current = problem.objective(state);
    let penalty_part = penalty(problem.lambda1, state.group_norm_sum());
    let mut step = problem.intercept_step.step(problem.loss, n);
    let mut cand_fit = state.fit.clone();
    for halvings in 0..=MAX_HALVINGS {
        let shift = -step * grad;
        for (c, f) in cand_fit.iter_mut().zip(&state.fit) {
            *c = f + shift;
        }
        if problem.mean_loss(&cand_fit) + penalty_part <= current {
            state.intercept += shift;
            state.fit = cand_fit;
            return StepOutcome::Accepted { halvings };
        }
        step *= 0.5;
    }
    state.stalls += 1;
    StepOutcome::Stalled
}

/// Summary of one Gauss-Seidel cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PassSummary {
    pub accepted: usize,
    pub stalled: usize,
}

/// Updates every block in ascending order, then the intercept.
pub fn gam_pass(problem: &GamProblem<'_>, state: &mut GamState) -> PassSummary {
    let mut summary = PassSummary::default();
    let mut record = |o: StepOutcome| match o {
        StepOutcome::Accepted { .. } => summary.accepted += 1,
        StepOutcome::Stalled => summary.stalled += 1,
        StepOutcome::Unchanged => {}
    };
    for j in 0..problem.designs.len() {
        record(update_block(problem, state, j));
    }
    record(update_intercept(problem, state));
    summary
}
