//! Loss functions, gradients, domain projection, and the hyperparameter
//! record shared by the learner, the odometer, and the bound calculators.

use serde::{Deserialize, Serialize};

use crate::error::{MpError, Result};
use crate::vecops;

/// Model parameters constrained to an origin-centered ball of diameter
/// `diameter` (the learner projects after every update).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    values: Vec<f64>,
}

impl WeightVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        vecops::norm2(&self.values)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl From<Vec<f64>> for WeightVector {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

/// Euclidean projection onto the origin-centered ball of diameter `diameter`.
/// Idempotent; interior points pass through unchanged.
pub fn project(w: &WeightVector, diameter: f64) -> WeightVector {
    let mut out = w.clone();
    project_in_place(out.values_mut(), diameter);
    out
}

pub(crate) fn project_in_place(values: &mut [f64], diameter: f64) {
    let radius = diameter / 2.0;
    let norm = vecops::norm2(values);
    if norm > radius {
        let scale = radius / norm;
        for v in values.iter_mut() {
            *v *= scale;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    Logistic,
}

/// Per-event loss: squared `½(wᵀx − y)²` or logistic `ln(1 + e^{−y·wᵀx})`
/// (labels in {−1, +1}), plus an explicit L2 term `(reg_lambda/2)‖w‖²` that
/// supplies strong convexity. Emitted gradients are norm-clipped at `clip_grad`
/// by rescaling, so the gradient bound is a real, enforced constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub kind: LossKind,
    pub reg_lambda: f64,
    pub clip_grad: f64,
}

impl LossModel {
    pub fn new(kind: LossKind, reg_lambda: f64, clip_grad: f64) -> Result<Self> {
        if reg_lambda < 0.0 || !reg_lambda.is_finite() {
            return Err(MpError::InvalidParameter(format!(
                "reg_lambda must be finite and >= 0, got {reg_lambda}"
            )));
        }
        if clip_grad <= 0.0 || !clip_grad.is_finite() {
            return Err(MpError::InvalidParameter(format!(
                "clip_grad must be finite and > 0, got {clip_grad}"
            )));
        }
        Ok(Self {
            kind,
            reg_lambda,
            clip_grad,
        })
    }

    fn check_dims(&self, w: &WeightVector, x: &[f64]) -> Result<()> {
        if w.dim() != x.len() {
            return Err(MpError::DimensionMismatch {
                expected: w.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn loss_value(&self, w: &WeightVector, x: &[f64], y: f64) -> Result<f64> {
        self.check_dims(w, x)?;
        let score = vecops::dot(w.as_slice(), x);
        let base = match self.kind {
            LossKind::Squared => 0.5 * (score - y) * (score - y),
            // stable ln(1 + e^z) with z = -y*score
            LossKind::Logistic => {
                let z = -y * score;
                z.max(0.0) + (-z.abs()).exp().ln_1p()
            }
        };
        let reg = 0.5 * self.reg_lambda * vecops::dot(w.as_slice(), w.as_slice());
        Ok(base + reg)
    }

    /// Analytic gradient of [`loss_value`](Self::loss_value), rescaled so that
    /// `‖g‖₂ ≤ clip_grad` (direction preserved).
    pub fn loss_gradient(&self, w: &WeightVector, x: &[f64], y: f64) -> Result<Vec<f64>> {
        self.check_dims(w, x)?;
        let score = vecops::dot(w.as_slice(), x);
        let coeff = match self.kind {
            LossKind::Squared => score - y,
            LossKind::Logistic => -y * sigmoid(-y * score),
        };
        let mut g = vecops::scaled(coeff, x);
        vecops::axpy(self.reg_lambda, w.as_slice(), &mut g);
        let norm = vecops::norm2(&g);
        if norm > self.clip_grad {
            let scale = self.clip_grad / norm;
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
        Ok(g)
    }

    /// Point prediction: the linear score for squared loss, the positive-class
    /// probability for logistic loss.
    pub fn predict_score(&self, w: &WeightVector, x: &[f64]) -> Result<f64> {
        self.check_dims(w, x)?;
        let score = vecops::dot(w.as_slice(), x);
        Ok(match self.kind {
            LossKind::Squared => score,
            LossKind::Logistic => sigmoid(score),
        })
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Every constant the regret, capacity, and sample-complexity analysis needs.
///
/// `precond_eig_min`/`precond_eig_max` bound the spectrum of the inverse
/// curvature estimate applied to gradients; `hess_eig_min`/`hess_eig_max`
/// bound the instantaneous loss Hessian and drive both the curvature-pair
/// admission rule and the trace/determinant diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub dim: usize,
    pub diameter: f64,
    pub grad_bound: f64,
    pub lambda: f64,
    pub precond_eig_min: f64,
    pub precond_eig_max: f64,
    pub hess_eig_min: f64,
    pub hess_eig_max: f64,
    pub window: usize,
    pub gamma: f64,
    pub delta_b: f64,
    pub eps_budget: f64,
    pub delta_budget: f64,
    pub rho_total: f64,
    pub max_deletions: u64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("diameter", self.diameter),
            ("grad_bound", self.grad_bound),
            ("precond_eig_min", self.precond_eig_min),
            ("hess_eig_min", self.hess_eig_min),
            ("gamma", self.gamma),
            ("rho_total", self.rho_total),
        ];
        for (name, v) in positive {
            if v <= 0.0 || !v.is_finite() {
                return Err(MpError::InvalidParameter(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if self.dim == 0 {
            return Err(MpError::InvalidParameter("dim must be >= 1".into()));
        }
        if self.window == 0 {
            return Err(MpError::InvalidParameter("window must be >= 1".into()));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(MpError::InvalidParameter(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.precond_eig_max < self.precond_eig_min {
            return Err(MpError::InvalidParameter(
                "precond_eig_max must be >= precond_eig_min".into(),
            ));
        }
        if self.hess_eig_max < self.hess_eig_min {
            return Err(MpError::InvalidParameter(
                "hess_eig_max must be >= hess_eig_min".into(),
            ));
        }
        for (name, p) in [
            ("delta_b", self.delta_b),
            ("eps_budget", self.eps_budget),
            ("delta_budget", self.delta_budget),
        ] {
            if !(p > 0.0 && p < 1.0) {
                return Err(MpError::InvalidParameter(format!(
                    "{name} must lie in (0, 1), got {p}"
                )));
            }
        }
        Ok(())
    }
}
