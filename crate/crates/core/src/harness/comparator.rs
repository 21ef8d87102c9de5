//! Offline comparator solvers. The primary path is deterministic projected
//! full-batch gradient descent; an independent cyclic coordinate-descent
//! solver exists so regret reports can be cross-checked against a second
//! method.

use crate::error::{MpError, Result};
use crate::model::{project_in_place, sigmoid, LossKind, LossModel, WeightVector};
use crate::vecops;

const MAX_ITERS: usize = 500_000;

/// Mean objective over the realized insert sequence:
/// `(1/n)·Σ ℓ(w; x_i, y_i) + (reg/2)‖w‖²`. Gradients here are unclipped; the
/// comparator targets the analytic optimum of the losses themselves.
fn mean_gradient(model: &LossModel, w: &[f64], points: &[(Vec<f64>, f64)]) -> Vec<f64> {
    let d = w.len();
    let mut g = vec![0.0; d];
    for (x, y) in points {
        let score = vecops::dot(w, x);
        let coeff = match model.kind {
            LossKind::Squared => score - y,
            LossKind::Logistic => -y * sigmoid(-y * score),
        };
        vecops::axpy(coeff, x, &mut g);
    }
    let n = points.len() as f64;
    for v in g.iter_mut() {
        *v /= n;
    }
    vecops::axpy(model.reg_lambda, w, &mut g);
    g
}

/// Upper bound on the mean-objective smoothness: `λ_max` of the mean Gram
/// matrix (squared) or a quarter of it (logistic), plus the regularizer,
/// estimated by deterministic power iteration.
fn smoothness_bound(model: &LossModel, points: &[(Vec<f64>, f64)], d: usize) -> f64 {
    let n = points.len() as f64;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut eig = 0.0;
    for _ in 0..100 {
        // u = (1/n) Σ x (xᵀv)
        let mut u = vec![0.0; d];
        for (x, _) in points {
            let s = vecops::dot(x, &v);
            vecops::axpy(s / n, x, &mut u);
        }
        let norm = vecops::norm2(&u);
        if norm < 1e-300 {
            eig = 0.0;
            break;
        }
        eig = norm;
        for (vi, ui) in v.iter_mut().zip(&u) {
            *vi = ui / norm;
        }
    }
    let data_term = match model.kind {
        LossKind::Squared => eig,
        LossKind::Logistic => 0.25 * eig,
    };
    data_term + model.reg_lambda
}

/// Solve `min_{‖w‖ ≤ D/2} (1/n)·Σ ℓ(w) + (reg/2)‖w‖²` by projected gradient
/// descent to projected-gradient norm `tol`.
pub fn offline_comparator_with_tol(
    model: &LossModel,
    diameter: f64,
    points: &[(Vec<f64>, f64)],
    tol: f64,
) -> Result<WeightVector> {
    if points.is_empty() {
        return Err(MpError::InvalidParameter(
            "offline comparator needs at least one insert".into(),
        ));
    }
    let d = points[0].0.len();
    let smoothness = smoothness_bound(model, points, d).max(1e-12);
    let step = 1.0 / smoothness;
    let mut w = vec![0.0; d];
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let g = mean_gradient(model, &w, points);
        let mut next = w.clone();
        vecops::axpy(-step, &g, &mut next);
        project_in_place(&mut next, diameter);
        residual = vecops::dist(&w, &next) / step;
        w = next;
        if residual <= tol {
            return Ok(WeightVector::new(w));
        }
    }
    Err(MpError::NonConvergence {
        iters: MAX_ITERS,
        residual,
    })
}

/// Comparator at the default tolerance 1e-10.
pub fn offline_comparator(
    model: &LossModel,
    diameter: f64,
    points: &[(Vec<f64>, f64)],
) -> Result<WeightVector> {
    offline_comparator_with_tol(model, diameter, points, 1e-10)
}

/// Independent second solver: cyclic coordinate descent (exact coordinate
/// minimization for squared loss, coordinate Newton for logistic), projected
/// at the end of every sweep.
pub fn offline_comparator_coordinate(
    model: &LossModel,
    diameter: f64,
    points: &[(Vec<f64>, f64)],
) -> Result<WeightVector> {
    if points.is_empty() {
        return Err(MpError::InvalidParameter(
            "offline comparator needs at least one insert".into(),
        ));
    }
    let d = points[0].0.len();
    let n = points.len() as f64;
    let mut w = vec![0.0; d];
    let max_sweeps = 200_000;
    let mut last_change = f64::INFINITY;
    for _ in 0..max_sweeps {
        last_change = 0.0;
        for j in 0..d {
            let (grad_j, curv_j) = match model.kind {
                LossKind::Squared => {
                    let mut g = 0.0;
                    let mut h = 0.0;
                    for (x, y) in points {
                        let score = vecops::dot(&w, x);
                        g += (score - y) * x[j];
                        h += x[j] * x[j];
                    }
                    (g / n + model.reg_lambda * w[j], h / n + model.reg_lambda)
                }
                LossKind::Logistic => {
                    let mut g = 0.0;
                    let mut h = 0.0;
                    for (x, y) in points {
                        let score = vecops::dot(&w, x);
                        let p = sigmoid(-y * score);
                        g += -y * p * x[j];
                        h += x[j] * x[j] * p * (1.0 - p);
                    }
                    (g / n + model.reg_lambda * w[j], h / n + model.reg_lambda)
                }
            };
            if curv_j > 1e-14 {
                let delta = grad_j / curv_j;
                w[j] -= delta;
                last_change = last_change.max(delta.abs());
            }
        }
        project_in_place(&mut w, diameter);
        if last_change <= 1e-12 {
            return Ok(WeightVector::new(w));
        }
    }
    Err(MpError::NonConvergence {
        iters: max_sweeps,
        residual: last_change,
    })
}
