//! Synthetic regression data with additive effects and one interaction:
//! `y = 2 x1 + sin(2 pi x2) + 3 x3 x4 + noise`, features uniform on [0, 1].

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::{standardize, Dataset};

/// Names of the four relevant features, in column order.
pub const RELEVANT: [&str; 4] = ["x1", "x2", "x3", "x4"];

/// `n` rows with the four relevant features followed by `n_noise`
/// irrelevant uniform features `z1..`.
pub fn interaction(n: usize, n_noise: usize, noise_sd: f64, seed: u64) -> Dataset {
    let d = 4 + n_noise;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).expect("finite noise sd");
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(0.0..1.0));
    let y: Array1<f64> = (0..n)
        .map(|i| {
            2.0 * x[(i, 0)]
                + (2.0 * std::f64::consts::PI * x[(i, 1)]).sin()
                + 3.0 * x[(i, 2)] * x[(i, 3)]
                + noise.sample(&mut rng)
        })
        .collect();
    let names: Vec<String> = RELEVANT
        .iter()
        .map(|s| s.to_string())
        .chain((1..=n_noise).map(|j| format!("z{j}")))
        .collect();
    Dataset::from_numeric(x, Some(y), &names).expect("valid synthetic dataset")
}

/// Standardizes a dataset with its own statistics.
pub fn standardized(ds: &Dataset) -> Dataset {
    standardize(ds, ds).expect("same columns").0
}

/// Relabels targets as +1 above the median and -1 otherwise.
pub fn to_binary(ds: &Dataset) -> Dataset {
    let y = ds.y().expect("labeled dataset");
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let labels = y.mapv(|v| if v > median { 1.0 } else { -1.0 });
    Dataset::from_numeric(ds.x().clone(), Some(labels), &ds.column_names())
        .expect("valid relabeled dataset")
}
