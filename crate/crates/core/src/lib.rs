//! PIE: a sparse spline GAM fitted jointly with penalized gradient boosting.
//!
//! The fitted score is `f(x) = g(x) + kappa(x)`, where `g` is an additive
//! model with one B-spline block per feature and a group-lasso penalty, and
//! `kappa` is a sum of shrunken regression trees that captures what the
//! additive part cannot.

pub mod basis;
pub mod boost;
pub mod dataio;
pub mod error;
pub mod gam;
pub mod loss;
pub mod metrics;
pub mod penalty_serde;
pub mod persist;
pub mod synthetic;
pub mod trainer;

pub use basis::{BasisKind, SplineSpec};
pub use boost::{BoostModel, RegressionTree, TreeParams};
pub use dataio::{load_csv, load_csv_features, load_schema, one_hot_encode, standardize, Dataset, Preprocessing};
pub use error::{PieError, Result};
pub use gam::{group_prox, GamModel, InterceptStep};
pub use loss::LossKind;
pub use metrics::{cross_validate, evaluate, pi_score, rpe, sparse_select, CvTable, EvalReport};
pub use persist::{load_model, save_model};
pub use trainer::{fit_pie, Breakdown, PieConfig, PieModel, Prediction};
