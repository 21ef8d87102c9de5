//! Closed-form bound calculators: static and dynamic regret, the adaptive
//! gradient-statistic regret bound, deletion capacity, sample complexity, and
//! comparator path length.

use serde::{Deserialize, Serialize};

use crate::error::{MpError, Result};
use crate::model::WeightVector;
use crate::vecops;

/// Inputs shared by every calculator. Unused fields are ignored by each bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundInputs {
    pub grad_bound: f64,
    pub lambda: f64,
    pub precond_eig_min: f64,
    pub precond_eig_max: f64,
    pub diameter: f64,
    pub gamma: f64,
    pub delta_b: f64,
    pub sigma_step: f64,
    /// Loss rounds T for regret bounds.
    pub horizon: u64,
    /// Inserts N for capacity and sample-complexity bounds.
    pub samples: u64,
    /// Deletions m.
    pub deletions: u64,
    /// Cumulative squared gradient norm S_N.
    pub grad_sq_sum: f64,
    /// Comparator path length P_T.
    pub path_len: f64,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self {
            grad_bound: 1.0,
            lambda: 1.0,
            precond_eig_min: 1.0,
            precond_eig_max: 1.0,
            diameter: 1.0,
            gamma: 1.0,
            delta_b: 0.05,
            sigma_step: 0.0,
            horizon: 1,
            samples: 1,
            deletions: 0,
            grad_sq_sum: 0.0,
            path_len: 0.0,
        }
    }
}

/// Aggregate regret contribution of `m` noise-calibrated deletions:
/// `Δ_m = m·G·σ_step·√(2·ln(1/δ_B))`.
pub fn deletion_noise_term(deletions: u64, grad_bound: f64, sigma_step: f64, delta_b: f64) -> f64 {
    deletions as f64 * grad_bound * sigma_step * (2.0 * (1.0 / delta_b).ln()).sqrt()
}

/// Static-comparator regret bound under strong convexity with the 1/(λt)
/// schedule: `(G²/(λc))·(1 + ln T) + Δ_m`.
pub fn static_regret_bound(inputs: &BoundInputs) -> f64 {
    let g = inputs.grad_bound;
    let harmonic = 1.0 + (inputs.horizon as f64).ln();
    g * g / (inputs.lambda * inputs.precond_eig_min) * harmonic
        + deletion_noise_term(inputs.deletions, g, inputs.sigma_step, inputs.delta_b)
}

/// Pathwise regret bound: the static term (no deletion contribution) plus the
/// drift term `G·P_T`.
pub fn dynamic_regret_bound(inputs: &BoundInputs) -> f64 {
    let static_only = BoundInputs {
        deletions: 0,
        ..inputs.clone()
    };
    static_regret_bound(&static_only) + inputs.grad_bound * inputs.path_len
}

/// Adaptive regret bound driven by the cumulative squared-gradient statistic:
/// `G·D·√(c·C·S_N)`.
pub fn adagrad_regret_bound(inputs: &BoundInputs) -> f64 {
    inputs.grad_bound
        * inputs.diameter
        * (inputs.precond_eig_min * inputs.precond_eig_max * inputs.grad_sq_sum).sqrt()
}

/// Real-valued deletion capacity before integer clamping:
/// `(γN − GD√(cC·S_N)) / (G·σ_step·√(2·ln(1/δ_B)))`. Infinite when the
/// denominator vanishes (no injected noise) and the target is reachable.
pub fn deletion_capacity_real(inputs: &BoundInputs) -> f64 {
    let numerator = inputs.gamma * inputs.samples as f64 - adagrad_regret_bound(inputs);
    let denominator = deletion_noise_term(1, inputs.grad_bound, inputs.sigma_step, inputs.delta_b);
    if denominator <= 0.0 {
        return if numerator < 0.0 { 0.0 } else { f64::INFINITY };
    }
    numerator / denominator
}

/// Real-valued worst-case capacity at `S_N = G²N`:
/// `√N·(γ√N − G²D√(cC)) / (G·σ_step·√(2·ln(1/δ_B)))`.
pub fn deletion_capacity_worstcase_real(inputs: &BoundInputs) -> f64 {
    let root_n = (inputs.samples as f64).sqrt();
    let g = inputs.grad_bound;
    let a = g * g
        * inputs.diameter
        * (inputs.precond_eig_min * inputs.precond_eig_max).sqrt();
    let numerator = root_n * (inputs.gamma * root_n - a);
    let denominator = deletion_noise_term(1, g, inputs.sigma_step, inputs.delta_b);
    if denominator <= 0.0 {
        return if numerator < 0.0 { 0.0 } else { f64::INFINITY };
    }
    numerator / denominator
}

fn clamp_capacity(real: f64) -> u64 {
    if real < 0.0 {
        0
    } else if real.is_infinite() || real >= u64::MAX as f64 {
        u64::MAX
    } else {
        real.floor() as u64
    }
}

/// Deletion capacity for a target average regret, floored and clamped at zero.
pub fn deletion_capacity(inputs: &BoundInputs) -> u64 {
    clamp_capacity(deletion_capacity_real(inputs))
}

/// Worst-case deletion capacity at `S_N = G²N`, floored and clamped at zero.
pub fn deletion_capacity_worstcase(inputs: &BoundInputs) -> u64 {
    clamp_capacity(deletion_capacity_worstcase_real(inputs))
}

/// Smallest insert count N with `A·√N + B ≤ γ·N`, where `A = G²D√(cC)` and
/// `B = Δ_m`. Computed from the positive root `x* = (A + √(A² + 4γB))/(2γ)`
/// of `γx² − Ax − B`, then nudged by at most a step to absorb the floating
/// boundary so the returned N is the exact integer threshold.
pub fn sample_complexity(inputs: &BoundInputs) -> u64 {
    let g = inputs.grad_bound;
    let a = g * g
        * inputs.diameter
        * (inputs.precond_eig_min * inputs.precond_eig_max).sqrt();
    let b = deletion_noise_term(inputs.deletions, g, inputs.sigma_step, inputs.delta_b);
    let gamma = inputs.gamma;
    let root = (a + (a * a + 4.0 * gamma * b).sqrt()) / (2.0 * gamma);
    let satisfies = |n: u64| a * (n as f64).sqrt() + b <= gamma * n as f64;
    let mut n = (root * root).ceil().max(1.0) as u64;
    while !satisfies(n) {
        n += 1;
    }
    while n > 1 && satisfies(n - 1) {
        n -= 1;
    }
    n
}

/// Total movement of a comparator path: the sum of consecutive Euclidean
/// distances. A single-element path has length zero; an empty path is an error.
pub fn path_length(path: &[WeightVector]) -> Result<f64> {
    if path.is_empty() {
        return Err(MpError::InvalidParameter(
            "path_length requires a nonempty path".into(),
        ));
    }
    Ok(path
        .windows(2)
        .map(|w| vecops::dist(w[0].as_slice(), w[1].as_slice()))
        .sum())
}
