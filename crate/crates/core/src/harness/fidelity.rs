//! Delete-versus-retrain fidelity experiment: insert a small dataset, delete
//! one point through the unlearner, and compare against the model retrained
//! from scratch without that point. With noise on, the trial spread is checked
//! against the calibrated scale.

use serde::{Deserialize, Serialize};

use crate::error::{MpError, Result};
use crate::pair::{MemoryPairConfig, MemoryPairState};
use crate::vecops;

const MAX_POINTS: usize = 200;
const MAX_DIM: usize = 16;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FidelityReport {
    pub trials: u64,
    pub noise: bool,
    pub sigma_step: f64,
    /// Per-trial distance between the post-delete model and the retrained one.
    pub distances: Vec<f64>,
    pub mean_distance: f64,
    pub max_distance: f64,
    /// Pooled per-coordinate standard deviation of the post-delete model
    /// across trials (noise mode only).
    pub empirical_noise_std: Option<f64>,
    pub retrained: Vec<f64>,
}

/// Insert every point in order, then delete the point at `delete_index`;
/// retrain by replaying the remaining points in order with the same seed.
pub fn fidelity_experiment(
    points: &[(Vec<f64>, f64)],
    delete_index: usize,
    trials: u64,
    noise: bool,
    base: &MemoryPairConfig,
) -> Result<FidelityReport> {
    if points.is_empty() || points.len() > MAX_POINTS {
        return Err(MpError::InvalidParameter(format!(
            "fidelity fixture must hold 1..={MAX_POINTS} points, got {}",
            points.len()
        )));
    }
    if points[0].0.len() > MAX_DIM {
        return Err(MpError::InvalidParameter(format!(
            "fidelity fixture dimension must be <= {MAX_DIM}"
        )));
    }
    if delete_index >= points.len() {
        return Err(MpError::InvalidParameter(format!(
            "delete_index {delete_index} out of range for {} points",
            points.len()
        )));
    }
    if trials == 0 {
        return Err(MpError::InvalidParameter("trials must be >= 1".into()));
    }

    let retrained = retrain_without(points, delete_index, base)?;
    let dim = points[0].0.len();
    let mut distances = Vec::with_capacity(trials as usize);
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let mut sigma_step = 0.0;
    for trial in 0..trials {
        let mut config = base.clone();
        config.seed = base.seed.wrapping_add(trial);
        config.noise_enabled = noise;
        let mut state = MemoryPairState::new(config)?;
        for (x, y) in points {
            state.insert(x, *y)?;
        }
        let (x, y) = &points[delete_index];
        state.delete(x, *y)?;
        sigma_step = state.odometer().sigma_step;
        let w = state.weights().as_slice();
        distances.push(vecops::dist(w, retrained.as_slice()));
        for i in 0..dim {
            sum[i] += w[i];
            sum_sq[i] += w[i] * w[i];
        }
    }
    let empirical_noise_std = if noise && trials > 1 {
        let n = trials as f64;
        let pooled_var = (0..dim)
            .map(|i| {
                let mean = sum[i] / n;
                (sum_sq[i] / n - mean * mean).max(0.0)
            })
            .sum::<f64>()
            / dim as f64;
        Some(pooled_var.sqrt())
    } else {
        None
    };
    let mean_distance = distances.iter().sum::<f64>() / distances.len() as f64;
    let max_distance = distances.iter().cloned().fold(0.0, f64::max);
    Ok(FidelityReport {
        trials,
        noise,
        sigma_step,
        distances,
        mean_distance,
        max_distance,
        empirical_noise_std,
        retrained: retrained.into_values(),
    })
}

/// The ideal replay: insert everything except `skip_index`, in order, with the
/// base seed. Inserts draw no noise, so this is deterministic.
pub fn retrain_without(
    points: &[(Vec<f64>, f64)],
    skip_index: usize,
    base: &MemoryPairConfig,
) -> Result<crate::model::WeightVector> {
    let mut config = base.clone();
    config.noise_enabled = false;
    let mut state = MemoryPairState::new(config)?;
    for (i, (x, y)) in points.iter().enumerate() {
        if i == skip_index {
            continue;
        }
        state.insert(x, *y)?;
    }
    Ok(state.weights().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lbfgs::B0Mode;
    use crate::model::{HyperParams, LossKind, LossModel};
    use crate::pair::{GateSetting, NoiseCalibration, StepSchedule, UnlearnDirection};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn base_config(dim: usize) -> MemoryPairConfig {
        MemoryPairConfig {
            hyper: HyperParams {
                dim,
                diameter: 10.0,
                grad_bound: 5.0,
                lambda: 0.5,
                precond_eig_min: 1e-3,
                precond_eig_max: 1e3,
                hess_eig_min: 1e-8,
                hess_eig_max: 10.0,
                window: 5,
                gamma: 0.5,
                delta_b: 0.05,
                eps_budget: 0.5,
                delta_budget: 0.05,
                rho_total: 50.0,
                max_deletions: 5,
            },
            model: LossModel::new(LossKind::Squared, 0.5, 5.0).unwrap(),
            schedule: StepSchedule::StronglyConvex,
            seed: 1000,
            gate: GateSetting::Off,
            noise_calibration: NoiseCalibration::Global,
            unlearn_direction: UnlearnDirection::QuasiNewton,
            downdate_on_delete: false,
            noise_enabled: true,
            b0_mode: B0Mode::Fixed,
            b0_scale: 1.0,
            sensitivity_override: None,
        }
    }

    fn fixture(seed: u64, n: usize, dim: usize) -> Vec<(Vec<f64>, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y = vecops::dot(&x, &target) + 0.05 * rng.gen_range(-1.0..1.0);
                (x, y)
            })
            .collect()
    }

    #[test]
    fn invalid_index_rejected() {
        let points = fixture(1, 10, 3);
        let cfg = base_config(3);
        assert!(fidelity_experiment(&points, 10, 1, false, &cfg).is_err());
    }

    #[test]
    fn noise_off_runs_are_identical_across_trials() {
        let points = fixture(2, 20, 3);
        let cfg = base_config(3);
        let report = fidelity_experiment(&points, 5, 3, false, &cfg).unwrap();
        assert!(report.distances.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn deleting_one_of_two_duplicates_lands_between_replays() {
        // distance to retrain-on-one-copy must be smaller than distance to
        // retrain-on-zero-copies
        let mut points = fixture(3, 30, 3);
        let dup = (vec![0.9, -0.4, 0.2], 0.7);
        points.push(dup.clone());
        points.push(dup.clone());
        let last = points.len() - 1;
        let cfg = base_config(3);

        let report = fidelity_experiment(&points, last, 1, false, &cfg).unwrap();
        // replay with zero copies: skip both duplicates
        let mut no_copies = points.clone();
        no_copies.remove(last);
        let zero_copy = retrain_without(&no_copies, last - 1, &cfg).unwrap();

        let mut config = cfg.clone();
        config.noise_enabled = false;
        let mut state = MemoryPairState::new(config).unwrap();
        for (x, y) in &points {
            state.insert(x, *y).unwrap();
        }
        state.delete(&dup.0, dup.1).unwrap();
        let dist_one_copy = report.distances[0];
        let dist_zero_copy = vecops::dist(state.weights().as_slice(), zero_copy.as_slice());
        assert!(
            dist_one_copy < dist_zero_copy,
            "one-copy {dist_one_copy} vs zero-copy {dist_zero_copy}"
        );
    }
}
