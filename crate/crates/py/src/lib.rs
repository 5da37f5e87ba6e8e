//! Python bindings: fit, predict, explain and persist PIE models from
//! plain lists of floats.

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pie_core::dataio::{ColumnSchema, Dataset, Preprocessing, ScalerParams};
use pie_core::error::PieError;
use pie_core::loss::LossKind;
use pie_core::trainer::{fit_pie, PieConfig, PieModel};
use pie_core::{boost, gam, metrics, persist};

fn to_py(e: PieError) -> PyErr {
    match e {
        PieError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyclass(name = "PieModel", module = "pie_py")]
pub struct PyPieModel {
    inner: PieModel,
}

impl PyPieModel {
    /// Raw rows to model inputs, applying the stored scaler when present.
    fn dataset(&self, x: &[Vec<f64>], y: Option<Vec<f64>>) -> PyResult<Dataset> {
        let names = self.inner.gam.columns.clone();
        let ds = Dataset::from_numeric(matrix(x)?, y.map(Array1::from), &names).map_err(to_py)?;
        match &self.inner.preprocessing {
            Some(p) => p.transform(&ds).map_err(to_py),
            None => Ok(ds),
        }
    }
}

#[pymethods]
impl PyPieModel {
    /// Fits on numeric rows `x` and targets `y` (`-1`/`+1` for logistic).
    #[staticmethod]
    #[pyo3(signature = (x, y, feature_names=None, loss="squared", lambda1=0.01, lambda2=0.01, max_iter=500, seed=0, standardize=true))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        feature_names: Option<Vec<String>>,
        loss: &str,
        lambda1: f64,
        lambda2: f64,
        max_iter: usize,
        seed: u64,
        standardize: bool,
    ) -> PyResult<Self> {
        let x = matrix(&x)?;
        let names = feature_names.unwrap_or_else(|| (0..x.ncols()).map(|j| format!("x{j}")).collect());
        let raw = Dataset::from_numeric(x, Some(Array1::from(y)), &names).map_err(to_py)?;
        let loss: LossKind = loss.parse().map_err(PyValueError::new_err)?;
        let cfg = PieConfig { loss, max_iter, seed, ..PieConfig::default() }.with_lambdas(lambda1, lambda2);
        let inner = if standardize {
            let scaler = ScalerParams::fit(&raw);
            let ds = scaler.apply(&raw).map_err(to_py)?;
            let mut schema: Vec<ColumnSchema> = names.iter().map(ColumnSchema::numeric).collect();
            schema.push(ColumnSchema::target("y"));
            fit_pie(&ds, &cfg).map_err(to_py)?.with_preprocessing(Preprocessing { schema, scaler })
        } else {
            fit_pie(&raw, &cfg).map_err(to_py)?
        };
        Ok(PyPieModel { inner })
    }

    /// Raw scores `f(x)`.
    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let ds = self.dataset(&x, None)?;
        Ok(self.inner.predict_dataset(&ds).map_err(to_py)?.iter().map(|p| p.score).collect())
    }

    /// Class-+1 probabilities; logistic models only.
    fn predict_proba(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        if self.inner.loss() != LossKind::Logistic {
            return Err(PyValueError::new_err("probabilities need a logistic model"));
        }
        let ds = self.dataset(&x, None)?;
        Ok(self
            .inner
            .predict_dataset(&ds)
            .map_err(to_py)?
            .iter()
            .map(|p| p.value())
            .collect())
    }

    /// Per-feature contributions for each row, in column order.
    fn pie_values(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let ds = self.dataset(&x, None)?;
        Ok((0..ds.n_rows()).map(|i| self.inner.gam.pie_values(ds.row(i))).collect())
    }

    /// Breakdown of one row as a dict.
    fn explain<'py>(&self, py: Python<'py>, row: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let ds = self.dataset(&[row], None)?;
        let b = self.inner.explain(ds.row(0));
        let out = PyDict::new(py);
        out.set_item("intercept", b.intercept)?;
        let pie = PyDict::new(py);
        for p in &b.pie_values {
            pie.set_item(&p.feature, p.value)?;
        }
        out.set_item("pie_values", pie)?;
        out.set_item("crust", b.crust)?;
        out.set_item("total", b.total)?;
        out.set_item("crust_share", b.crust_share)?;
        Ok(out)
    }

    fn pi_score(&self, x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<f64> {
        let ds = self.dataset(&x, Some(y))?;
        metrics::pi_score(&self.inner, &ds).map_err(to_py)
    }

    fn rpe(&self, x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<f64> {
        let pred = self.predict(x)?;
        metrics::rpe(&pred, &y).map_err(to_py)
    }

    #[getter]
    fn active_features(&self) -> Vec<String> {
        self.inner.active_features()
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.boost.trees.len()
    }

    #[getter]
    fn objective_trace(&self) -> Vec<f64> {
        self.inner.meta.objective_trace.clone()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        persist::save_model(&self.inner, path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyPieModel { inner: persist::load_model(path).map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        persist::to_json_string(&self.inner).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyPieModel { inner: persist::from_json_str(text).map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        format!(
            "PieModel(loss={}, active={}, trees={})",
            self.inner.loss().name(),
            self.inner.active_set().len(),
            self.inner.boost.trees.len()
        )
    }
}

/// Relative prediction error.
#[pyfunction]
fn rpe(pred: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::rpe(&pred, &y).map_err(to_py)
}

/// Block soft-threshold `gamma * max(0, 1 - tau / |gamma|)`.
#[pyfunction]
fn group_prox(gamma: Vec<f64>, tau: f64) -> Vec<f64> {
    gam::group_prox(&gamma, tau)
}

/// Penalized leaf weight `S / (m + n lambda2)`.
#[pyfunction]
fn leaf_weight(residual_sum: f64, leaf_count: usize, n: usize, lambda2: f64) -> PyResult<f64> {
    if leaf_count == 0 {
        return Err(PyValueError::new_err("leaf_count must be positive"));
    }
    Ok(boost::leaf_weight(residual_sum, leaf_count, n, lambda2))
}

#[pymodule]
fn pie_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPieModel>()?;
    m.add_function(wrap_pyfunction!(rpe, m)?)?;
    m.add_function(wrap_pyfunction!(group_prox, m)?)?;
    m.add_function(wrap_pyfunction!(leaf_weight, m)?)?;
    Ok(())
}
