use ndarray::{Array1, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_SHARPNESS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(f - y)^2 / 2`
    Quadratic,
    /// Epsilon-insensitive gamma-logistic loss.
    EpsilonIgll,
}

/// Per-sample regression loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_sharpness")]
    pub gamma: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_sharpness() -> f64 {
    DEFAULT_SHARPNESS
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::epsilon_igll(DEFAULT_EPSILON, DEFAULT_SHARPNESS)
    }
}

impl LossSpec {
    pub fn quadratic() -> Self {
        LossSpec {
            kind: LossKind::Quadratic,
            epsilon: 0.0,
            gamma: 1.0,
        }
    }

    pub fn epsilon_igll(epsilon: f64, gamma: f64) -> Self {
        LossSpec {
            kind: LossKind::EpsilonIgll,
            epsilon,
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == LossKind::EpsilonIgll
            && !(self.gamma > 0.0 && self.gamma.is_finite() && self.epsilon >= 0.0 && self.epsilon.is_finite())
        {
            return Err(Error::Parameter(format!(
                "loss needs gamma > 0 and epsilon >= 0, got gamma = {}, epsilon = {}",
                self.gamma, self.epsilon
            )));
        }
        Ok(())
    }

    pub fn value(&self, y: f64, f: f64) -> f64 {
        match self.kind {
            LossKind::Quadratic => 0.5 * (f - y) * (f - y),
            LossKind::EpsilonIgll => igll_loss(y, f, self.epsilon, self.gamma),
        }
    }

    pub fn derivative(&self, y: f64, f: f64) -> f64 {
        match self.kind {
            LossKind::Quadratic => f - y,
            LossKind::EpsilonIgll => igll_gradient(y, f, self.epsilon, self.gamma),
        }
    }

    pub fn second_derivative(&self, y: f64, f: f64) -> f64 {
        match self.kind {
            LossKind::Quadratic => 1.0,
            LossKind::EpsilonIgll => {
                let g = self.gamma;
                let a = logistic(g * (f - y - self.epsilon));
                let b = logistic(g * (y - f - self.epsilon));
                g * (a * (1.0 - a) + b * (1.0 - b))
            }
        }
    }

    /// Upper bound on the second derivative.
    pub fn curvature_bound(&self) -> f64 {
        match self.kind {
            LossKind::Quadratic => 1.0,
            LossKind::EpsilonIgll => 0.5 * self.gamma,
        }
    }

    /// Summed loss over samples.
    pub fn total(&self, y: ArrayView1<'_, f64>, f: ArrayView1<'_, f64>) -> f64 {
        y.iter().zip(f.iter()).map(|(&yi, &fi)| self.value(yi, fi)).sum()
    }

    /// Per-sample derivatives with respect to the prediction.
    pub fn derivatives(&self, y: ArrayView1<'_, f64>, f: ArrayView1<'_, f64>) -> Array1<f64> {
        Zip::from(&y).and(&f).map_collect(|&yi, &fi| self.derivative(yi, fi))
    }

    pub fn second_derivatives(&self, y: ArrayView1<'_, f64>, f: ArrayView1<'_, f64>) -> Array1<f64> {
        Zip::from(&y)
            .and(&f)
            .map_collect(|&yi, &fi| self.second_derivative(yi, fi))
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Epsilon-insensitive gamma-logistic loss:
///
/// ```text
/// [ softplus(g (f - y - eps)) + softplus(g (y - f - eps)) - 2 softplus(-g eps) ] / g
/// ```
pub fn igll_loss(y: f64, f: f64, epsilon: f64, gamma: f64) -> f64 {
    let r = f - y;
    (softplus(gamma * (r - epsilon)) + softplus(gamma * (-r - epsilon)) - 2.0 * softplus(-gamma * epsilon)) / gamma
}

/// Derivative of [`igll_loss`] in `f`.
pub fn igll_gradient(y: f64, f: f64, epsilon: f64, gamma: f64) -> f64 {
    let r = f - y;
    logistic(gamma * (r - epsilon)) - logistic(gamma * (-r - epsilon))
}

/// The exact epsilon-insensitive loss `max(0, |f - y| - eps)`.
pub fn epsilon_insensitive(y: f64, f: f64, epsilon: f64) -> f64 {
    ((f - y).abs() - epsilon).max(0.0)
}
