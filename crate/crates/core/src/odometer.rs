//! Deletion-capacity accounting: a zCDP budget ledger with uniform per-delete
//! allocation, Gaussian noise calibration, (ε, δ) reporting, and re-evaluation
//! of the utility capacity as the stream grows.
//!
//! Budgets are monotone: nothing an odometer does ever refunds spent budget.
//! "Replenishment" exists only as utility-capacity recomputation.

use serde::{Deserialize, Serialize};

use crate::error::{MpError, Result};
use crate::model::HyperParams;
use crate::theory::{self, BoundInputs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdometerMode {
    Zcdp,
    EpsDelta,
}

/// Budget ledger for a single learner.
///
/// In zCDP mode the per-delete allocation is `rho_step = rho_total/max_deletions`
/// and the noise scale is `sigma_step = sensitivity/√(2·rho_step)`. In (ε, δ)
/// mode the per-step budgets are `ε* / m` and `δ* / m` with the Gaussian
/// mechanism scale `sigma_step = sensitivity·√(2·ln(1.25/δ_step))/ε_step`.
///
/// The spend gate is tracked on the integer deletion count: with the uniform
/// allocation, `rho_spent + rho_step ≤ rho_total` holds exactly when
/// `deletions < max_deletions`, and counting keeps `rho_spent = deletions ×
/// rho_step` exact in floating point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Odometer {
    pub mode: OdometerMode,
    pub rho_total: f64,
    pub rho_step: f64,
    pub rho_spent: f64,
    pub max_deletions: u64,
    pub deletions: u64,
    pub sensitivity: f64,
    pub sigma_step: f64,
    pub eps_step: f64,
    pub delta_step: f64,
}

/// Human-readable budget summary, serialized as-is into experiment reports.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BudgetReport {
    pub rho_tot: f64,
    pub rho_spent: f64,
    pub deletions: u64,
    pub m_max: u64,
    pub sigma_step: f64,
    pub utility_capacity: u64,
    pub eps_reported: f64,
}

impl Odometer {
    pub fn new_zcdp(rho_total: f64, max_deletions: u64, sensitivity: f64) -> Result<Self> {
        if rho_total <= 0.0 || !rho_total.is_finite() {
            return Err(MpError::InvalidParameter(format!(
                "rho_total must be finite and > 0, got {rho_total}"
            )));
        }
        if max_deletions == 0 {
            return Err(MpError::InvalidParameter("max_deletions must be >= 1".into()));
        }
        if sensitivity <= 0.0 || !sensitivity.is_finite() {
            return Err(MpError::InvalidParameter(format!(
                "sensitivity must be finite and > 0, got {sensitivity}"
            )));
        }
        let rho_step = rho_total / max_deletions as f64;
        Ok(Self {
            mode: OdometerMode::Zcdp,
            rho_total,
            rho_step,
            rho_spent: 0.0,
            max_deletions,
            deletions: 0,
            sensitivity,
            sigma_step: sensitivity / (2.0 * rho_step).sqrt(),
            eps_step: 0.0,
            delta_step: 0.0,
        })
    }

    /// Global-sensitivity default `sensitivity = grad_bound/lambda`.
    pub fn new_zcdp_default_sensitivity(
        rho_total: f64,
        max_deletions: u64,
        grad_bound: f64,
        lambda: f64,
    ) -> Result<Self> {
        if lambda <= 0.0 {
            return Err(MpError::InvalidParameter(
                "default sensitivity grad_bound/lambda requires lambda > 0".into(),
            ));
        }
        Self::new_zcdp(rho_total, max_deletions, grad_bound / lambda)
    }

    pub fn new_eps_delta(
        eps_budget: f64,
        delta_budget: f64,
        max_deletions: u64,
        grad_bound: f64,
        lambda: f64,
    ) -> Result<Self> {
        for (name, v) in [("eps_budget", eps_budget), ("delta_budget", delta_budget)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(MpError::InvalidParameter(format!(
                    "{name} must lie in (0, 1], got {v}"
                )));
            }
        }
        if max_deletions == 0 {
            return Err(MpError::InvalidParameter("max_deletions must be >= 1".into()));
        }
        if lambda <= 0.0 || grad_bound <= 0.0 {
            return Err(MpError::InvalidParameter(
                "eps-delta calibration requires grad_bound > 0 and lambda > 0".into(),
            ));
        }
        let m = max_deletions as f64;
        let eps_step = eps_budget / m;
        let delta_step = delta_budget / m;
        let sensitivity = grad_bound / lambda;
        let sigma_step = sensitivity * (2.0 * (1.25 / delta_step).ln()).sqrt() / eps_step;
        Ok(Self {
            mode: OdometerMode::EpsDelta,
            rho_total: 0.0,
            rho_step: 0.0,
            rho_spent: 0.0,
            max_deletions,
            deletions: 0,
            sensitivity,
            sigma_step,
            eps_step,
            delta_step,
        })
    }

    /// Spend one deletion's budget. Returns the noise scale to inject, or
    /// `CapacityExhausted` without mutating the ledger.
    pub fn spend(&mut self) -> Result<f64> {
        if self.deletions >= self.max_deletions {
            return Err(MpError::CapacityExhausted {
                deletions: self.deletions,
                max_deletions: self.max_deletions,
            });
        }
        self.deletions += 1;
        self.rho_spent = self.deletions as f64 * self.rho_step;
        Ok(self.sigma_step)
    }

    pub fn remaining_deletions(&self) -> u64 {
        self.max_deletions - self.deletions
    }

    /// Convert the cumulative spent ρ to an (ε, δ)-style ε for reporting, via
    /// `ε = ρ + 2√(ρ·ln(1/δ))`.
    pub fn report_eps_delta(&self, delta: f64) -> Result<f64> {
        if self.mode != OdometerMode::Zcdp {
            return Err(MpError::WrongMode {
                required: "zcdp",
                actual: "eps_delta",
            });
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(MpError::InvalidParameter(format!(
                "report delta must lie in (0, 1), got {delta}"
            )));
        }
        Ok(self.rho_spent + 2.0 * (self.rho_spent * (1.0 / delta).ln()).sqrt())
    }

    /// Re-evaluate the utility capacity for the current stream statistics.
    /// This never raises the privacy cap: it reports how many deletions the
    /// regret target tolerates, while `effective_remaining` intersects it with
    /// the unspent privacy allocation.
    pub fn recompute_capacity(&self, hp: &HyperParams, samples: u64, grad_sq_sum: f64) -> u64 {
        let inputs = BoundInputs {
            grad_bound: hp.grad_bound,
            lambda: hp.lambda,
            precond_eig_min: hp.precond_eig_min,
            precond_eig_max: hp.precond_eig_max,
            diameter: hp.diameter,
            gamma: hp.gamma,
            delta_b: hp.delta_b,
            sigma_step: self.sigma_step,
            samples,
            grad_sq_sum,
            ..BoundInputs::default()
        };
        theory::deletion_capacity(&inputs)
    }

    /// Deletions still admissible under both the utility capacity and the
    /// privacy cap.
    pub fn effective_remaining(&self, utility_capacity: u64) -> u64 {
        let by_utility = utility_capacity.saturating_sub(self.deletions);
        let by_privacy = self.max_deletions - self.deletions;
        by_utility.min(by_privacy)
    }

    pub fn budget_report(
        &self,
        hp: &HyperParams,
        samples: u64,
        grad_sq_sum: f64,
        report_delta: f64,
    ) -> BudgetReport {
        let utility_capacity = self.recompute_capacity(hp, samples, grad_sq_sum);
        let eps_reported = match self.mode {
            OdometerMode::Zcdp => self.report_eps_delta(report_delta).unwrap_or(f64::NAN),
            OdometerMode::EpsDelta => self.deletions as f64 * self.eps_step,
        };
        BudgetReport {
            rho_tot: self.rho_total,
            rho_spent: self.rho_spent,
            deletions: self.deletions,
            m_max: self.max_deletions,
            sigma_step: self.sigma_step,
            utility_capacity,
            eps_reported,
        }
    }
}
