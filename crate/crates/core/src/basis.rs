//! Per-feature basis expansions.
//!
//! Numeric features get clamped cubic B-splines with knots at empirical
//! quantiles; binary, one-hot and explicitly linear features get the
//! identity basis. Design matrices are centered with training means, and
//! the same offsets are stored in the [`SplineSpec`] so that prediction
//! reproduces the training rows bit for bit.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataio::{ColumnKind, Dataset};
use crate::error::{PieError, Result};

/// Lower bound returned for an all-zero design block.
pub const LIPSCHITZ_FLOOR: f64 = 1e-12;

const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    #[default]
    Bspline,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    /// Group (original feature) this block belongs to.
    pub group: usize,
    /// Matrix columns read by the block. A B-spline reads exactly one;
    /// an identity block reads one column per basis function.
    pub columns: Vec<usize>,
    pub kind: BasisKind,
    pub degree: usize,
    /// Full knot vector, boundary knots repeated `degree + 1` times.
    pub knots: Vec<f64>,
    /// Training means of the raw basis functions.
    pub offsets: Vec<f64>,
}

impl SplineSpec {
    pub fn identity(group: usize, columns: Vec<usize>) -> Self {
        let k = columns.len();
        SplineSpec {
            group,
            columns,
            kind: BasisKind::Identity,
            degree: 0,
            knots: Vec::new(),
            offsets: vec![0.0; k],
        }
    }

    pub fn bspline(group: usize, column: usize, degree: usize, knots: Vec<f64>) -> Self {
        let k = knots.len() - degree - 1;
        SplineSpec {
            group,
            columns: vec![column],
            kind: BasisKind::Bspline,
            degree,
            knots,
            offsets: vec![0.0; k],
        }
    }

    /// Number of basis functions K.
    pub fn n_basis(&self) -> usize {
        match self.kind {
            BasisKind::Bspline => self.knots.len() - self.degree - 1,
            BasisKind::Identity => self.columns.len(),
        }
    }

    /// Uncentered basis values for one feature row.
    pub fn eval_raw(&self, row: ArrayView1<'_, f64>, out: &mut [f64]) {
        match self.kind {
            BasisKind::Bspline => eval_bspline(row[self.columns[0]], self.degree, &self.knots, out),
            BasisKind::Identity => {
                for (o, &c) in out.iter_mut().zip(&self.columns) {
                    *o = row[c];
                }
            }
        }
    }

    /// Centered basis row, the quantity multiplied by the coefficients.
    pub fn eval_centered(&self, row: ArrayView1<'_, f64>, out: &mut [f64]) {
        self.eval_raw(row, out);
        for (o, m) in out.iter_mut().zip(&self.offsets) {
            *o -= m;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == BasisKind::Bspline {
            if self.columns.len() != 1 || self.knots.len() < 2 * (self.degree + 1) {
                return Err(PieError::InvalidArgument(format!(
                    "malformed B-spline spec for group {}",
                    self.group
                )));
            }
            if self.knots.windows(2).any(|w| w[0] > w[1]) {
                return Err(PieError::InvalidArgument("knots must be non-decreasing".into()));
            }
        }
        Ok(())
    }
}

/// Evaluates a single-column basis at a scalar.
pub fn eval_basis(x: f64, spec: &SplineSpec) -> Vec<f64> {
    let mut out = vec![0.0; spec.n_basis()];
    match spec.kind {
        BasisKind::Bspline => eval_bspline(x, spec.degree, &spec.knots, &mut out),
        BasisKind::Identity => out.fill(x),
    }
    out
}

/// Clamped B-spline basis values at `x` via the Cox-de Boor triangle.
/// Inputs outside the knot span are clamped to the boundary first.
pub fn eval_bspline(x: f64, degree: usize, knots: &[f64], out: &mut [f64]) {
    let k = knots.len() - degree - 1;
    debug_assert_eq!(out.len(), k);
    out.fill(0.0);
    let lo = knots[degree];
    let hi = knots[k];
    let x = x.clamp(lo, hi);

    // knot span: largest i in [degree, k-1] with knots[i] <= x < knots[i+1]
    let span = if x >= hi {
        let mut i = k - 1;
        while i > degree && knots[i] >= hi {
            i -= 1;
        }
        i
    } else {
        let mut low = degree;
        let mut high = k;
        while high - low > 1 {
            let mid = (low + high) / 2;
            if x < knots[mid] {
                high = mid;
            } else {
                low = mid;
            }
        }
        low
    };

    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    for (r, v) in n.into_iter().enumerate() {
        out[span - degree + r] = v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KnotPlacement {
    /// Full clamped knot vector.
    Spline { knots: Vec<f64>, warning: Option<String> },
    /// Too few distinct values for a spline: use the identity basis.
    Linear,
}

/// Places interior knots at equally spaced quantiles of the distinct values
/// of a sorted column, with boundary knots at min and max.
pub fn make_knots(sorted: &[f64], n_interior: usize, degree: usize) -> Result<KnotPlacement> {
    if sorted.is_empty() {
        return Err(PieError::InvalidArgument("cannot place knots on an empty column".into()));
    }
    let mut distinct: Vec<f64> = sorted.to_vec();
    distinct.dedup();
    let m = distinct.len();
    if m <= 2 {
        return Ok(KnotPlacement::Linear);
    }
    let mut warning = None;
    let mut n_int = n_interior;
    if m < n_int + 2 {
        n_int = m - 2;
        warning = Some(format!(
            "only {m} distinct values; reduced interior knots from {n_interior} to {n_int}"
        ));
    }
    let (lo, hi) = (distinct[0], distinct[m - 1]);
    let mut knots = vec![lo; degree + 1];
    for i in 1..=n_int {
        let pos = i as f64 / (n_int + 1) as f64 * (m - 1) as f64;
        let base = pos.floor() as usize;
        let frac = pos - base as f64;
        let q = if base + 1 < m {
            distinct[base] + frac * (distinct[base + 1] - distinct[base])
        } else {
            distinct[m - 1]
        };
        knots.push(q);
    }
    knots.extend(std::iter::repeat_n(hi, degree + 1));
    Ok(KnotPlacement::Spline { knots, warning })
}

/// Builds one spec per group of an encoded dataset. `n_basis` is K for
/// spline blocks, giving `K - degree - 1` interior knots.
pub fn specs_for_dataset(
    ds: &Dataset,
    kind: BasisKind,
    n_basis: usize,
    degree: usize,
) -> Result<(Vec<SplineSpec>, Vec<String>)> {
    if kind == BasisKind::Bspline && n_basis < degree + 1 {
        return Err(PieError::InvalidArgument(format!(
            "n_basis {n_basis} is smaller than degree + 1 = {}",
            degree + 1
        )));
    }
    let n_interior = n_basis.saturating_sub(degree + 1);
    let mut specs = Vec::new();
    let mut warnings = Vec::new();
    for (group, cols) in ds.group_columns().into_iter().enumerate() {
        if cols.is_empty() {
            continue;
        }
        let column = &ds.columns()[cols[0]];
        match column.kind {
            ColumnKind::Categorical { .. } => {
                return Err(PieError::NotEncoded(column.name.clone()));
            }
            ColumnKind::Indicator { .. } => specs.push(SplineSpec::identity(group, cols)),
            ColumnKind::Numeric => {
                let c = cols[0];
                if kind == BasisKind::Identity {
                    specs.push(SplineSpec::identity(group, vec![c]));
                    continue;
                }
                let mut values = ds.x().column(c).to_vec();
                values.sort_by(f64::total_cmp);
                match make_knots(&values, n_interior, degree)? {
                    KnotPlacement::Linear => specs.push(SplineSpec::identity(group, vec![c])),
                    KnotPlacement::Spline { knots, warning } => {
                        if let Some(w) = warning {
                            warnings.push(format!("{}: {w}", column.name));
                        }
                        specs.push(SplineSpec::bspline(group, c, degree, knots));
                    }
                }
            }
        }
    }
    Ok((specs, warnings))
}

/// Centered design block for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    values: Array2<f64>,
    max_eigenvalue: f64,
}

impl BasisMatrix {
    pub fn from_values(values: Array2<f64>) -> Self {
        let max_eigenvalue = gram_max_eigenvalue(&values);
        BasisMatrix {
            values,
            max_eigenvalue,
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_basis(&self) -> usize {
        self.values.ncols()
    }

    /// Cached largest eigenvalue of the Gram matrix.
    pub fn max_eigenvalue(&self) -> f64 {
        self.max_eigenvalue
    }
}

/// Evaluates every spec on the rows of `ds`, stores the column means as the
/// spec offsets and returns the centered blocks.
pub fn build_design(ds: &Dataset, specs: &mut [SplineSpec]) -> Result<Vec<BasisMatrix>> {
    let n = ds.n_rows();
    specs
        .iter_mut()
        .map(|spec| {
            spec.validate()?;
            let k = spec.n_basis();
            let mut raw = Array2::zeros((n, k));
            let mut buf = vec![0.0; k];
            for i in 0..n {
                spec.eval_raw(ds.row(i), &mut buf);
                raw.row_mut(i).assign(&ArrayView1::from(&buf[..]));
            }
            let means: Array1<f64> = raw.sum_axis(ndarray::Axis(0)) / n as f64;
            spec.offsets = means.to_vec();
            // same subtraction as `eval_centered`
            for mut row in raw.rows_mut() {
                for (v, m) in row.iter_mut().zip(&spec.offsets) {
                    *v -= m;
                }
            }
            Ok(BasisMatrix::from_values(raw))
        })
        .collect()
}

/// Largest eigenvalue of `psi' psi` by power iteration on the K x K Gram.
pub fn gram_max_eigenvalue(psi: &Array2<f64>) -> f64 {
    let gram = psi.t().dot(psi);
    let k = gram.nrows();
    if k == 0 {
        return 0.0;
    }
    let mut v: Array1<f64> = (0..k).map(|i| 1.0 + 1e-3 * i as f64).collect();
    v /= v.dot(&v).sqrt();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = gram.dot(&v);
        let next = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lambda).abs() <= POWER_TOL * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Per-block curvature bound `(M / n) * lambda_max(psi' psi)`.
pub fn block_lipschitz(psi: &BasisMatrix, curvature: f64, n: usize) -> f64 {
    let l = curvature / n as f64 * psi.max_eigenvalue();
    if l > 0.0 {
        l
    } else {
        LIPSCHITZ_FLOOR
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    /// Textbook recursive Cox-de Boor, valid for x strictly inside the span.
    fn cox_de_boor(i: usize, p: usize, x: f64, t: &[f64]) -> f64 {
        if p == 0 {
            return if t[i] <= x && x < t[i + 1] { 1.0 } else { 0.0 };
        }
        let a = if t[i + p] > t[i] {
            (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(i, p - 1, x, t)
        } else {
            0.0
        };
        let b = if t[i + p + 1] > t[i + 1] {
            (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(i + 1, p - 1, x, t)
        } else {
            0.0
        };
        a + b
    }

    fn cubic_knots() -> Vec<f64> {
        vec![0.0, 0.0, 0.0, 0.0, 0.2, 0.45, 0.5, 0.8, 1.0, 1.0, 1.0, 1.0]
    }

    #[test]
    fn matches_recursive_definition() {
        let knots = cubic_knots();
        let k = knots.len() - 4;
        let mut out = vec![0.0; k];
        for step in 0..200 {
            let x = step as f64 / 200.0;
            eval_bspline(x, 3, &knots, &mut out);
            for (i, v) in out.iter().enumerate() {
                assert!((v - cox_de_boor(i, 3, x, &knots)).abs() < 1e-12, "x={x} i={i}");
            }
        }
    }

    #[test]
    fn clamps_out_of_range_inputs() {
        let knots = cubic_knots();
        let mut below = vec![0.0; 8];
        let mut at_min = vec![0.0; 8];
        eval_bspline(-5.0, 3, &knots, &mut below);
        eval_bspline(0.0, 3, &knots, &mut at_min);
        assert_eq!(below, at_min);
        let mut above = vec![0.0; 8];
        eval_bspline(7.0, 3, &knots, &mut above);
        assert_eq!(above[7], 1.0);
        assert_eq!(above.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn identity_basis_returns_input() {
        let spec = SplineSpec::identity(0, vec![0]);
        assert_eq!(eval_basis(0.7, &spec), vec![0.7]);
    }

    #[test]
    fn quantile_knots_on_uniform_column() {
        let values: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        match make_knots(&values, 3, 3).unwrap() {
            KnotPlacement::Spline { knots, warning } => {
                assert!(warning.is_none());
                assert_eq!(&knots[..4], &[0.0; 4]);
                assert_eq!(&knots[7..], &[1.0; 4]);
                for (got, want) in knots[4..7].iter().zip([0.25, 0.5, 0.75]) {
                    assert!((got - want).abs() < 1e-12);
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn knot_edge_cases() {
        let values = [0.0, 0.5, 1.0, 2.0];
        match make_knots(&values, 0, 3).unwrap() {
            KnotPlacement::Spline { knots, .. } => assert_eq!(knots, vec![0., 0., 0., 0., 2., 2., 2., 2.]),
            other => panic!("{other:?}"),
        }
        assert_eq!(make_knots(&[0.0, 0.0, 1.0, 1.0], 4, 3).unwrap(), KnotPlacement::Linear);
        match make_knots(&values, 4, 3).unwrap() {
            KnotPlacement::Spline { knots, warning } => {
                assert!(warning.is_some());
                assert_eq!(knots.len() - 4, 2 + 4);
            }
            other => panic!("{other:?}"),
        }
        assert!(make_knots(&[], 3, 3).is_err());
    }

    #[test]
    fn identity_design_is_centered() {
        let ds = Dataset::from_numeric(
            array![[1.0], [2.0], [3.0], [4.0]],
            Some(array![0.0, 0.0, 0.0, 0.0]),
            &["x".into()],
        )
        .unwrap();
        let mut specs = vec![SplineSpec::identity(0, vec![0])];
        let design = build_design(&ds, &mut specs).unwrap();
        assert_eq!(design[0].values(), &array![[-1.5], [-0.5], [0.5], [1.5]]);
        assert_eq!(block_lipschitz(&design[0], 1.0, 4), 1.25);
        assert_eq!(block_lipschitz(&design[0], 0.25, 4), 0.3125);
    }

    #[test]
    fn spline_design_centered_and_reproducible() {
        let n = 50;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| ((i * 37) % n) as f64 / 7.0);
        let ds = Dataset::from_numeric(x, None, &["x".into()]).unwrap();
        let (mut specs, _) = specs_for_dataset(&ds, BasisKind::Bspline, 8, 3).unwrap();
        assert_eq!(specs[0].n_basis(), 8);
        let design = build_design(&ds, &mut specs).unwrap();
        for col in design[0].values().columns() {
            assert!(col.sum().abs() / (n as f64) < 1e-12);
        }
        let mut buf = vec![0.0; 8];
        for i in 0..n {
            specs[0].eval_centered(ds.row(i), &mut buf);
            assert_eq!(buf.as_slice(), design[0].values().row(i).as_slice().unwrap());
        }
    }

    #[test]
    fn binary_numeric_column_falls_back_to_identity() {
        let x = array![[0.0], [1.0], [1.0], [0.0]];
        let ds = Dataset::from_numeric(x, None, &["b".into()]).unwrap();
        let (specs, _) = specs_for_dataset(&ds, BasisKind::Bspline, 8, 3).unwrap();
        assert_eq!(specs[0].kind, BasisKind::Identity);
        assert_eq!(specs[0].n_basis(), 1);
    }

    #[test]
    fn zero_block_gets_floor() {
        let bm = BasisMatrix::from_values(Array2::zeros((5, 2)));
        assert_eq!(block_lipschitz(&bm, 1.0, 5), LIPSCHITZ_FLOOR);
    }

    #[test]
    fn power_iteration_matches_dense_eigensolver() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = Array2::from_shape_fn((20, 5), |_| rng.random_range(-1.0..1.0));
            let dense = nalgebra::DMatrix::from_fn(20, 5, |i, j| m[(i, j)]);
            let gram = dense.transpose() * dense;
            let oracle = gram.symmetric_eigen().eigenvalues.max();
            let bm = BasisMatrix::from_values(m);
            let got = block_lipschitz(&bm, 1.0, 20) * 20.0;
            assert!((got - oracle).abs() <= 1e-6 * oracle, "{got} vs {oracle}");
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(x in -0.5f64..1.5) {
            let mut out = vec![0.0; 8];
            eval_bspline(x, 3, &cubic_knots(), &mut out);
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(out.iter().all(|v| *v >= -1e-15));
        }

        #[test]
        fn basis_is_continuous(x in 0.0f64..1.0) {
            let knots = cubic_knots();
            let (mut a, mut b) = (vec![0.0; 8], vec![0.0; 8]);
            eval_bspline(x, 3, &knots, &mut a);
            eval_bspline(x + 1e-6, 3, &knots, &mut b);
            let diff = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            prop_assert!(diff < 1e-4);
        }

        #[test]
        fn lipschitz_bounds_rayleigh_quotient(
            seed in 0u64..500,
            probe in proptest::collection::vec(-1.0f64..1.0, 4)
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Array2::from_shape_fn((15, 4), |_| rng.random_range(-2.0..2.0));
            let v = Array1::from(probe);
            let vv = v.dot(&v);
            prop_assume!(vv > 1e-6);
            let pv = m.dot(&v);
            let rayleigh = 0.5 / 15.0 * pv.dot(&pv) / vv;
            let bm = BasisMatrix::from_values(m);
            prop_assert!(block_lipschitz(&bm, 0.5, 15) >= rayleigh * (1.0 - 1e-12));
        }
    }
}
