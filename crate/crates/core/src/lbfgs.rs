//! Limited-memory inverse-curvature estimate: a bounded window of curvature
//! pairs, the two-loop direction computation, the positive-curvature admission
//! rule, and dense spectral diagnostics for desk-scale dimensions.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MpError, Result};
use crate::model::HyperParams;
use crate::vecops;

/// Default cap on the dimension for which [`LbfgsMemory::spectral_diagnostics`]
/// will materialize the dense estimate.
pub const DENSE_DIM_CAP: usize = 64;

/// One admitted curvature observation: `s` is the realized parameter change,
/// `y` the gradient change across the same step, `rho = 1/(sᵀy)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvaturePair {
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub rho: f64,
}

/// How the seed matrix scale is chosen: a fixed scalar, or the classical
/// `sᵀy / yᵀy` ratio of the newest admitted pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum B0Mode {
    #[default]
    Fixed,
    NewestPairRatio,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdmissionOutcome {
    Admitted,
    Rejected(RejectReason),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    /// `‖s‖ = 0`: the step did not move the parameters.
    DegenerateStep,
    /// `yᵀs < m̃·‖s‖²`: curvature along the step is below the admission floor.
    InsufficientCurvature,
}

/// Spectral summary of the dense inverse-curvature estimate.
///
/// `trace_est` and `logdet_est` describe its inverse (the curvature estimate
/// itself); `precond_eig_min`/`precond_eig_max` are the extreme eigenvalues of
/// the estimate as applied to gradients.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SpectralDiagnostics {
    pub trace_est: f64,
    pub logdet_est: f64,
    pub within_bounds: bool,
    pub precond_eig_min: f64,
    pub precond_eig_max: f64,
}

/// Bounded window of curvature pairs plus the seed-matrix scale.
///
/// The window holds at most `capacity` pairs; admission evicts the oldest
/// entry first. Every stored pair satisfies the admission rule, so `rho` is
/// finite and positive throughout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbfgsMemory {
    window: VecDeque<CurvaturePair>,
    capacity: usize,
    dim: usize,
    b0_scale: f64,
    b0_mode: B0Mode,
}

impl LbfgsMemory {
    pub fn new(dim: usize, capacity: usize) -> Self {
        Self::with_b0(dim, capacity, 1.0, B0Mode::Fixed)
    }

    pub fn with_b0(dim: usize, capacity: usize, b0_scale: f64, b0_mode: B0Mode) -> Self {
        assert!(capacity >= 1, "window capacity must be >= 1");
        assert!(b0_scale > 0.0, "b0_scale must be > 0");
        Self {
            window: VecDeque::with_capacity(capacity),
            capacity,
            dim,
            b0_scale,
            b0_mode,
        }
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn b0_scale(&self) -> f64 {
        self.b0_scale
    }

    pub fn window(&self) -> impl Iterator<Item = &CurvaturePair> {
        self.window.iter()
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(MpError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Two-loop evaluation of the inverse-curvature estimate applied to `g`.
    /// An empty window returns `b0_scale * g`.
    pub fn direction(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(g)?;
        let k = self.window.len();
        let mut q = g.to_vec();
        let mut alphas = vec![0.0; k];
        // newest to oldest
        for (i, pair) in self.window.iter().enumerate().rev() {
            let a = pair.rho * vecops::dot(&pair.s, &q);
            alphas[i] = a;
            vecops::axpy(-a, &pair.y, &mut q);
        }
        let mut r = vecops::scaled(self.b0_scale, &q);
        // oldest to newest
        for (i, pair) in self.window.iter().enumerate() {
            let b = pair.rho * vecops::dot(&pair.y, &r);
            vecops::axpy(alphas[i] - b, &pair.s, &mut r);
        }
        Ok(r)
    }

    /// Admission rule: accept iff `‖s‖ > 0` and `yᵀs ≥ m̃·‖s‖²`. On admit the
    /// oldest pair is evicted when the window is full; on reject the memory is
    /// unchanged.
    pub fn try_add_pair(&mut self, s: &[f64], y: &[f64], hess_eig_min: f64) -> Result<AdmissionOutcome> {
        self.check_dim(s)?;
        self.check_dim(y)?;
        let s_sq = vecops::dot(s, s);
        if s_sq == 0.0 {
            return Ok(AdmissionOutcome::Rejected(RejectReason::DegenerateStep));
        }
        let sy = vecops::dot(s, y);
        if sy < hess_eig_min * s_sq {
            return Ok(AdmissionOutcome::Rejected(RejectReason::InsufficientCurvature));
        }
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        if self.b0_mode == B0Mode::NewestPairRatio {
            let yy = vecops::dot(y, y);
            if yy > 0.0 {
                self.b0_scale = sy / yy;
            }
        }
        self.window.push_back(CurvaturePair {
            s: s.to_vec(),
            y: y.to_vec(),
            rho: 1.0 / sy,
        });
        Ok(AdmissionOutcome::Admitted)
    }

    /// Evict the oldest pair without adding a new one (the optional delete-time
    /// "downdate" maintenance mode).
    pub fn evict_oldest(&mut self) -> Option<CurvaturePair> {
        self.window.pop_front()
    }

    /// Materialize the dense estimate by applying the two-loop recursion to
    /// each basis vector, symmetrized to absorb round-off.
    pub fn dense_estimate(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut m = DMatrix::zeros(d, d);
        let mut e = vec![0.0; d];
        for j in 0..d {
            e[j] = 1.0;
            let col = self.direction(&e).expect("basis vector has the right dim");
            for i in 0..d {
                m[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        let mt = m.transpose();
        (m + mt) * 0.5
    }

    pub fn spectral_diagnostics(&self, hp: &HyperParams) -> Result<SpectralDiagnostics> {
        self.spectral_diagnostics_with_cap(hp, DENSE_DIM_CAP)
    }

    /// Dense spectral diagnostics. The estimate's eigenvalues `μ_i` give the
    /// curvature eigenvalues `1/μ_i`, hence `trace_est = Σ 1/μ_i` and
    /// `logdet_est = −Σ ln μ_i`. `within_bounds` checks the trace and
    /// determinant envelopes `tr ≤ (d+τ)·M̃` and
    /// `ln det ≥ (d+τ)·ln m̃ − τ·ln((d+τ)·M̃)`.
    pub fn spectral_diagnostics_with_cap(
        &self,
        hp: &HyperParams,
        cap: usize,
    ) -> Result<SpectralDiagnostics> {
        if self.dim > cap {
            return Err(MpError::DenseCapExceeded {
                dim: self.dim,
                cap,
            });
        }
        let dense = self.dense_estimate();
        let eig = dense.symmetric_eigenvalues();
        let mut eig_min = f64::INFINITY;
        let mut eig_max = f64::NEG_INFINITY;
        let mut trace = 0.0;
        let mut logdet = 0.0;
        for &mu in eig.iter() {
            eig_min = eig_min.min(mu);
            eig_max = eig_max.max(mu);
            trace += 1.0 / mu;
            logdet -= mu.ln();
        }
        let d = self.dim as f64;
        let tau = self.capacity as f64;
        let trace_cap = (d + tau) * hp.hess_eig_max;
        let logdet_floor = (d + tau) * hp.hess_eig_min.ln() - tau * ((d + tau) * hp.hess_eig_max).ln();
        let within_bounds =
            eig_min > 0.0 && trace <= trace_cap && logdet >= logdet_floor;
        Ok(SpectralDiagnostics {
            trace_est: trace,
            logdet_est: logdet,
            within_bounds,
            precond_eig_min: eig_min,
            precond_eig_max: eig_max,
        })
    }
}

/// Apply the dense estimate to a vector; used by the diagnostics consumers
/// that already hold the materialized matrix.
pub fn apply_dense(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v)).iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn hp(dim: usize, window: usize, hess_min: f64, hess_max: f64) -> HyperParams {
        HyperParams {
            dim,
            diameter: 10.0,
            grad_bound: 10.0,
            lambda: 0.1,
            precond_eig_min: 1e-3,
            precond_eig_max: 1e3,
            hess_eig_min: hess_min,
            hess_eig_max: hess_max,
            window,
            gamma: 0.5,
            delta_b: 0.05,
            eps_budget: 0.5,
            delta_budget: 0.05,
            rho_total: 1.0,
            max_deletions: 4,
        }
    }

    #[test]
    fn empty_window_is_scaled_identity() {
        let mem = LbfgsMemory::new(2, 4);
        let d = mem.direction(&[3.0, -1.0]).unwrap();
        assert_eq!(d, vec![3.0, -1.0]);
        let mem2 = LbfgsMemory::with_b0(2, 4, 2.5, B0Mode::Fixed);
        let d2 = mem2.direction(&[3.0, -1.0]).unwrap();
        assert_eq!(d2, vec![7.5, -2.5]);
    }

    #[test]
    fn single_pair_matches_dense_formula() {
        // s = y = e1 so rho = 1; dense update: (I - s s')(I - s s') + s s'
        let mut mem = LbfgsMemory::new(2, 4);
        assert_eq!(
            mem.try_add_pair(&[1.0, 0.0], &[1.0, 0.0], 1e-8).unwrap(),
            AdmissionOutcome::Admitted
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let g: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let got = mem.direction(&g).unwrap();
            // V = I - rho*y*s' = I - e11; V'V = I - e11; + rho s s' = I
            let want = g.clone();
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn admission_rule_rejects_and_accepts() {
        let mut mem = LbfgsMemory::new(2, 4);
        assert_eq!(
            mem.try_add_pair(&[1.0, 0.0], &[-1.0, 0.0], 1e-8).unwrap(),
            AdmissionOutcome::Rejected(RejectReason::InsufficientCurvature)
        );
        assert_eq!(
            mem.try_add_pair(&[0.0, 0.0], &[1.0, 0.0], 1e-8).unwrap(),
            AdmissionOutcome::Rejected(RejectReason::DegenerateStep)
        );
        assert_eq!(mem.len(), 0);
        assert_eq!(
            mem.try_add_pair(&[1.0, 0.0], &[2.0, 0.0], 1.0).unwrap(),
            AdmissionOutcome::Admitted
        );
        assert_eq!(mem.len(), 1);
        assert!((mem.window().next().unwrap().rho - 0.5).abs() < 1e-15);
    }

    #[test]
    fn eviction_is_fifo_and_capacity_holds() {
        let mut mem = LbfgsMemory::new(1, 3);
        for i in 1..=5 {
            let v = i as f64;
            mem.try_add_pair(&[v], &[v], 1e-8).unwrap();
            assert!(mem.len() <= 3);
        }
        let firsts: Vec<f64> = mem.window().map(|p| p.s[0]).collect();
        assert_eq!(firsts, vec![3.0, 4.0, 5.0]);
        let evicted = mem.evict_oldest().unwrap();
        assert_eq!(evicted.s[0], 3.0);
    }

    #[test]
    fn direction_is_linear_in_gradient() {
        let mut mem = LbfgsMemory::new(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        while mem.len() < 3 {
            let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = s.iter().map(|v| v * 1.5 + 0.1).collect();
            let _ = mem.try_add_pair(&s, &y, 1e-8).unwrap();
        }
        for _ in 0..50 {
            let g1: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g2: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let combo: Vec<f64> = g1.iter().zip(&g2).map(|(u, v)| a * u + b * v).collect();
            let d_combo = mem.direction(&combo).unwrap();
            let d1 = mem.direction(&g1).unwrap();
            let d2 = mem.direction(&g2).unwrap();
            for i in 0..3 {
                assert!((d_combo[i] - (a * d1[i] + b * d2[i])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn diagnostics_identity_window() {
        let mem = LbfgsMemory::new(4, 3);
        let diag = mem.spectral_diagnostics(&hp(4, 3, 0.5, 1.0)).unwrap();
        assert!((diag.trace_est - 4.0).abs() < 1e-12);
        assert!(diag.logdet_est.abs() < 1e-12);
        assert!(diag.within_bounds);
        assert!((diag.precond_eig_min - 1.0).abs() < 1e-12);
        assert!((diag.precond_eig_max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagnostics_flags_excess_curvature() {
        // y = 100 s forces a curvature eigenvalue of 100 against hess_eig_max 1
        let mut mem = LbfgsMemory::new(2, 1);
        mem.try_add_pair(&[1.0, 0.0], &[100.0, 0.0], 1e-8).unwrap();
        let diag = mem.spectral_diagnostics(&hp(2, 1, 0.5, 1.0)).unwrap();
        assert!(!diag.within_bounds);
        assert!(diag.trace_est > 3.0 * 1.0);
    }

    #[test]
    fn diagnostics_dense_cap_enforced() {
        let mem = LbfgsMemory::new(65, 3);
        assert!(matches!(
            mem.spectral_diagnostics(&hp(65, 3, 0.5, 1.0)),
            Err(MpError::DenseCapExceeded { .. })
        ));
    }
}
