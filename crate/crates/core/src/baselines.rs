//! Reference online learners for regret comparisons: online gradient descent
//! with the strongly convex schedule, diagonal AdaGrad, and Online Newton Step
//! with a generalized (norm-weighted) ball projection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{project, project_in_place, LossModel, WeightVector};
use crate::vecops;

/// Interface shared by every baseline. Learners own their model, stay inside
/// the configured domain, and are deterministic given their construction.
pub trait OnlineLearner: Send {
    fn step(&mut self, x: &[f64], y: f64) -> Result<()>;
    fn weights(&self) -> &WeightVector;
    fn name(&self) -> &str;
}

/// Projected online gradient descent with step size `1/(λt)`.
pub struct OgdLearner {
    model: LossModel,
    lambda: f64,
    diameter: f64,
    w: WeightVector,
    t: u64,
}

impl OgdLearner {
    pub fn new(model: LossModel, lambda: f64, diameter: f64, dim: usize) -> Self {
        assert!(lambda > 0.0, "OGD schedule requires lambda > 0");
        Self {
            model,
            lambda,
            diameter,
            w: WeightVector::zeros(dim),
            t: 0,
        }
    }
}

impl OnlineLearner for OgdLearner {
    fn step(&mut self, x: &[f64], y: f64) -> Result<()> {
        let g = self.model.loss_gradient(&self.w, x, y)?;
        self.t += 1;
        let eta = 1.0 / (self.lambda * self.t as f64);
        let mut values = self.w.as_slice().to_vec();
        vecops::axpy(-eta, &g, &mut values);
        project_in_place(&mut values, self.diameter);
        self.w = WeightVector::new(values);
        Ok(())
    }

    fn weights(&self) -> &WeightVector {
        &self.w
    }

    fn name(&self) -> &str {
        "ogd"
    }
}

/// Diagonal AdaGrad: per-coordinate step `D·g_i/√(S_i + ε)` with the
/// accumulator updated before the step.
pub struct AdagradLearner {
    model: LossModel,
    diameter: f64,
    eps_num: f64,
    w: WeightVector,
    accumulator: Vec<f64>,
}

impl AdagradLearner {
    pub fn new(model: LossModel, diameter: f64, dim: usize, eps_num: f64) -> Self {
        Self {
            model,
            diameter,
            eps_num,
            w: WeightVector::zeros(dim),
            accumulator: vec![0.0; dim],
        }
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.accumulator
    }
}

impl OnlineLearner for AdagradLearner {
    fn step(&mut self, x: &[f64], y: f64) -> Result<()> {
        let g = self.model.loss_gradient(&self.w, x, y)?;
        let mut values = self.w.as_slice().to_vec();
        for i in 0..values.len() {
            self.accumulator[i] += g[i] * g[i];
            values[i] -= self.diameter * g[i] / (self.accumulator[i] + self.eps_num).sqrt();
        }
        project_in_place(&mut values, self.diameter);
        self.w = WeightVector::new(values);
        Ok(())
    }

    fn weights(&self) -> &WeightVector {
        &self.w
    }

    fn name(&self) -> &str {
        "adagrad"
    }
}

/// Online Newton Step over a dense curvature matrix (desk-scale dimensions).
///
/// The move `−A⁻¹g/γ` uses the current matrix; the rank-one update `A += ggᵀ`
/// follows it. Feasibility is restored with the generalized projection under
/// the A-norm.
pub struct OnsLearner {
    model: LossModel,
    diameter: f64,
    gamma_ons: f64,
    w: WeightVector,
    a: DMatrix<f64>,
}

impl OnsLearner {
    pub fn new(model: LossModel, diameter: f64, dim: usize, gamma_ons: f64) -> Self {
        assert!(gamma_ons > 0.0, "gamma_ons must be > 0");
        Self {
            model,
            diameter,
            gamma_ons,
            w: WeightVector::zeros(dim),
            a: DMatrix::identity(dim, dim),
        }
    }

    pub fn curvature(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl OnlineLearner for OnsLearner {
    fn step(&mut self, x: &[f64], y: f64) -> Result<()> {
        let g = self.model.loss_gradient(&self.w, x, y)?;
        let gv = DVector::from_column_slice(&g);
        let move_vec = self
            .a
            .clone()
            .lu()
            .solve(&gv)
            .expect("curvature matrix is positive definite by construction");
        let mut values = self.w.as_slice().to_vec();
        for i in 0..values.len() {
            values[i] -= move_vec[i] / self.gamma_ons;
        }
        let projected = generalized_project_ball(&self.a, &values, self.diameter / 2.0);
        self.w = WeightVector::new(projected);
        self.a += &gv * gv.transpose();
        Ok(())
    }

    fn weights(&self) -> &WeightVector {
        &self.w
    }

    fn name(&self) -> &str {
        "ons"
    }
}

/// Minimize `(u − z)ᵀA(u − z)` over `‖u‖ ≤ radius` for symmetric positive
/// definite `A`. Interior points are returned unchanged; otherwise the KKT
/// system `(A + μI)u = Az` is solved by bisection on the multiplier μ.
pub fn generalized_project_ball(a: &DMatrix<f64>, z: &[f64], radius: f64) -> Vec<f64> {
    if vecops::norm2(z) <= radius {
        return z.to_vec();
    }
    let zv = DVector::from_column_slice(z);
    let az = a * &zv;
    let eig = a.clone().symmetric_eigen();
    // coordinates of Az in the eigenbasis
    let coeffs = eig.eigenvectors.transpose() * &az;
    let norm_at = |mu: f64| -> f64 {
        let mut sq = 0.0;
        for i in 0..coeffs.len() {
            let u = coeffs[i] / (eig.eigenvalues[i] + mu);
            sq += u * u;
        }
        sq.sqrt()
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while norm_at(hi) > radius {
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm_at(mid) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = hi;
    let mut u = vec![0.0; z.len()];
    for i in 0..coeffs.len() {
        let c = coeffs[i] / (eig.eigenvalues[i] + mu);
        for (j, uj) in u.iter_mut().enumerate() {
            *uj += c * eig.eigenvectors[(j, i)];
        }
    }
    // guard against bisection leaving a hair of infeasibility
    let w = WeightVector::new(u);
    project(&w, 2.0 * radius).into_values()
}

/// Baseline hyperparameters resolved from experiment configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum BaselineSpec {
    Ogd { lambda: f64 },
    Adagrad { eps_num: f64 },
    Ons { gamma_ons: f64 },
}

impl BaselineSpec {
    pub fn build(
        &self,
        model: LossModel,
        diameter: f64,
        dim: usize,
    ) -> Box<dyn OnlineLearner + Send> {
        match self {
            BaselineSpec::Ogd { lambda } => {
                Box::new(OgdLearner::new(model, *lambda, diameter, dim))
            }
            BaselineSpec::Adagrad { eps_num } => {
                Box::new(AdagradLearner::new(model, diameter, dim, *eps_num))
            }
            BaselineSpec::Ons { gamma_ons } => {
                Box::new(OnsLearner::new(model, diameter, dim, *gamma_ons))
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineSpec::Ogd { .. } => "ogd",
            BaselineSpec::Adagrad { .. } => "adagrad",
            BaselineSpec::Ons { .. } => "ons",
        }
    }
}
