use serde::{Deserialize, Serialize};

/// Training loss and its link.
///
/// The squared loss is `(y - f)^2 / 2`, so its derivative is 1-Lipschitz
/// in `f`. The logistic loss `log(1 + exp(-y f))` takes targets in
/// `{-1, +1}` and has curvature at most 1/4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Squared,
    Logistic,
}

impl LossKind {
    pub fn loss(self, y: f64, f: f64) -> f64 {
        match self {
            LossKind::Squared => 0.5 * (y - f) * (y - f),
            LossKind::Logistic => softplus(-y * f),
        }
    }

    /// dL/df.
    pub fn derivative(self, y: f64, f: f64) -> f64 {
        match self {
            LossKind::Squared => f - y,
            LossKind::Logistic => -y * sigmoid(-y * f),
        }
    }

    pub fn negative_gradient(self, y: f64, f: f64) -> f64 {
        -self.derivative(y, f)
    }

    /// Bound M on |L''|.
    pub fn curvature_bound(self) -> f64 {
        match self {
            LossKind::Squared => 1.0,
            LossKind::Logistic => 0.25,
        }
    }

    /// Maps a raw score to the prediction scale.
    pub fn link(self, score: f64) -> f64 {
        match self {
            LossKind::Squared => score,
            LossKind::Logistic => sigmoid(score),
        }
    }

    pub fn link_name(self) -> &'static str {
        match self {
            LossKind::Squared => "identity",
            LossKind::Logistic => "sigmoid",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Squared => "squared",
            LossKind::Logistic => "logistic",
        }
    }

    /// Mean loss over paired targets and scores.
    pub fn mean_loss(self, y: &[f64], f: &[f64]) -> f64 {
        y.iter().zip(f).map(|(&y, &f)| self.loss(y, f)).sum::<f64>() / y.len() as f64
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "squared" => Ok(LossKind::Squared),
            "logistic" => Ok(LossKind::Logistic),
            other => Err(format!("unknown loss {other:?} (expected squared or logistic)")),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(z)) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Pointwise negative gradient `r_i = -dL(y_i, f_i)/df_i`.
pub fn negative_gradient(y: &[f64], fit: &[f64], loss: LossKind) -> Vec<f64> {
    y.iter()
        .zip(fit)
        .map(|(&y, &f)| loss.negative_gradient(y, f))
        .collect()
}
