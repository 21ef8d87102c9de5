//! Stream replay with exact regret accounting against a static or pathwise
//! comparator, bound overlays from the theory module, and the live capacity
//! trace.

use serde::{Deserialize, Serialize};

use crate::baselines::OnlineLearner;
use crate::error::{MpError, Result};
use crate::lbfgs::DENSE_DIM_CAP;
use crate::model::{LossModel, WeightVector};
use crate::odometer::BudgetReport;
use crate::pair::MemoryPairState;
use crate::stream::{Event, EventOp};
use crate::theory::{self, BoundInputs};
use crate::vecops;

/// Regret reference: one fixed weight vector, or one comparator per loss round.
pub enum ComparatorSpec {
    Static(WeightVector),
    Path(Vec<WeightVector>),
}

impl ComparatorSpec {
    fn describe(&self) -> String {
        match self {
            ComparatorSpec::Static(_) => "static".into(),
            ComparatorSpec::Path(p) => format!("path[{}]", p.len()),
        }
    }
}

/// A replayable algorithm: the memory pair (handles deletes) or a baseline
/// (deletes are skipped).
pub enum AlgoInstance {
    Pair(Box<MemoryPairState>),
    Baseline(Box<dyn OnlineLearner + Send>),
}

impl AlgoInstance {
    pub fn name(&self) -> String {
        match self {
            AlgoInstance::Pair(_) => "memory_pair".into(),
            AlgoInstance::Baseline(b) => b.name().into(),
        }
    }

    pub fn weights(&self) -> &WeightVector {
        match self {
            AlgoInstance::Pair(p) => p.weights(),
            AlgoInstance::Baseline(b) => b.weights(),
        }
    }

    pub fn pair(&self) -> Option<&MemoryPairState> {
        match self {
            AlgoInstance::Pair(p) => Some(p),
            AlgoInstance::Baseline(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub t: u64,
    pub cumulative_regret: f64,
    pub instantaneous_regret: f64,
    pub bound_overlay: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CapacityPoint {
    pub t: u64,
    pub utility_capacity: u64,
    pub effective_remaining: u64,
}

/// Everything one replay produced: checkpoint rows with raw (unmonotonized)
/// cumulative regret, measured constants for the bound overlays, deletion
/// accounting, and the budget report when the algorithm carries an odometer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegretReport {
    pub algorithm: String,
    pub comparator: String,
    pub rows: Vec<CheckpointRow>,
    pub rounds: u64,
    pub final_cumulative: f64,
    pub final_average: f64,
    pub measured_grad_bound: f64,
    pub measured_precond_min: f64,
    pub measured_precond_max: f64,
    pub grad_sq_sum: f64,
    pub path_len_total: f64,
    pub deletions_applied: u64,
    pub deletions_rejected: u64,
    pub predictions_ready: u64,
    pub predictions_deferred: u64,
    pub capacity_trace: Vec<CapacityPoint>,
    pub budget: Option<BudgetReport>,
}

struct OverlayInputs {
    lambda: f64,
    delta_b: f64,
    sigma_step: f64,
}

fn bound_overlay(
    algo: &AlgoInstance,
    comparator: &ComparatorSpec,
    rounds: u64,
    measured_g: f64,
    measured_c: f64,
    grad_sq_sum: f64,
    path_len: f64,
    deletions: u64,
    extra: &OverlayInputs,
) -> f64 {
    match algo {
        AlgoInstance::Pair(state) => {
            let hp = state.hyper();
            let inputs = BoundInputs {
                grad_bound: measured_g,
                lambda: hp.lambda,
                precond_eig_min: measured_c,
                precond_eig_max: 1.0,
                diameter: hp.diameter,
                delta_b: hp.delta_b,
                sigma_step: state.odometer().sigma_step,
                horizon: rounds.max(1),
                deletions,
                path_len,
                ..BoundInputs::default()
            };
            match comparator {
                ComparatorSpec::Static(_) => theory::static_regret_bound(&inputs),
                ComparatorSpec::Path(_) => {
                    theory::dynamic_regret_bound(&inputs)
                        + theory::deletion_noise_term(
                            deletions,
                            measured_g,
                            state.odometer().sigma_step,
                            hp.delta_b,
                        )
                }
            }
        }
        AlgoInstance::Baseline(b) => {
            let inputs = BoundInputs {
                grad_bound: measured_g,
                lambda: extra.lambda,
                precond_eig_min: 1.0,
                precond_eig_max: 1.0,
                diameter: 1.0,
                delta_b: extra.delta_b,
                sigma_step: extra.sigma_step,
                horizon: rounds.max(1),
                deletions,
                grad_sq_sum,
                path_len,
                ..BoundInputs::default()
            };
            match b.name() {
                "adagrad" => theory::adagrad_regret_bound(&inputs),
                _ => match comparator {
                    ComparatorSpec::Static(_) => theory::static_regret_bound(&inputs),
                    ComparatorSpec::Path(_) => theory::dynamic_regret_bound(&inputs),
                },
            }
        }
    }
}

/// Replay `events` through `algo`, scoring losses at the pre-update iterate of
/// every insert round. Deletes and predicts contribute no loss terms; baselines
/// skip them. Emits one row per checkpoint (in rounds) that the stream reaches.
pub fn regret_series(
    events: &[Event],
    eval_model: &LossModel,
    algo: &mut AlgoInstance,
    comparator: &ComparatorSpec,
    checkpoints: &[u64],
    halt_on_exhaustion: bool,
    overlay_lambda: f64,
) -> Result<RegretReport> {
    if let ComparatorSpec::Path(path) = comparator {
        let loss_rounds = events.iter().filter(|e| e.op == EventOp::Insert).count();
        if path.len() != loss_rounds {
            return Err(MpError::Config(format!(
                "comparator path has {} entries for {} loss rounds",
                path.len(),
                loss_rounds
            )));
        }
    }

    let mut rows = Vec::new();
    let mut checkpoint_iter = checkpoints.iter().peekable();
    let mut rounds = 0u64;
    let mut cumulative = 0.0;
    let mut last_gap: Option<f64> = None;
    let mut measured_g: f64 = 0.0;
    let mut measured_c = f64::INFINITY;
    let mut measured_c_max: f64 = 0.0;
    let mut grad_sq_sum = 0.0;
    let mut path_len = 0.0;
    let mut prev_comp: Option<&WeightVector> = None;
    let mut deletions_applied = 0u64;
    let mut deletions_rejected = 0u64;
    let mut predictions_ready = 0u64;
    let mut predictions_deferred = 0u64;
    let mut capacity_trace = Vec::new();

    let collect_diag = matches!(algo, AlgoInstance::Pair(p) if p.hyper().dim <= DENSE_DIM_CAP);
    let sigma_step = algo.pair().map_or(0.0, |p| p.odometer().sigma_step);
    let overlay_extra = OverlayInputs {
        lambda: overlay_lambda,
        delta_b: 0.05,
        sigma_step,
    };

    for event in events {
        match event.op {
            EventOp::Insert => {
                let y = event.y.ok_or_else(|| MpError::Config("insert without label".into()))?;
                // spectrum of the preconditioner the step is about to use
                if collect_diag {
                    if let AlgoInstance::Pair(state) = &*algo {
                        let diag = state.memory().spectral_diagnostics(state.hyper())?;
                        measured_c = measured_c.min(diag.precond_eig_min);
                        measured_c_max = measured_c_max.max(diag.precond_eig_max);
                    }
                }
                let w_pre = algo.weights().clone();
                let loss_here = eval_model.loss_value(&w_pre, &event.x, y)?;
                let comp_w = match comparator {
                    ComparatorSpec::Static(w) => w,
                    ComparatorSpec::Path(p) => &p[rounds as usize],
                };
                if let Some(prev) = prev_comp {
                    path_len += vecops::dist(prev.as_slice(), comp_w.as_slice());
                }
                prev_comp = Some(comp_w);
                let loss_comp = eval_model.loss_value(comp_w, &event.x, y)?;
                let gap = loss_here - loss_comp;
                cumulative += gap;
                last_gap = Some(gap);
                let g = eval_model.loss_gradient(&w_pre, &event.x, y)?;
                let g_norm = vecops::norm2(&g);
                measured_g = measured_g.max(g_norm);
                grad_sq_sum += g_norm * g_norm;

                match algo {
                    AlgoInstance::Pair(state) => {
                        state.insert(&event.x, y)?;
                    }
                    AlgoInstance::Baseline(b) => b.step(&event.x, y)?,
                }
                rounds += 1;

                while checkpoint_iter.peek() == Some(&&rounds) {
                    checkpoint_iter.next();
                    let overlay = bound_overlay(
                        algo,
                        comparator,
                        rounds,
                        measured_g,
                        if measured_c.is_finite() { measured_c } else { 1.0 },
                        grad_sq_sum,
                        path_len,
                        deletions_applied,
                        &overlay_extra,
                    );
                    rows.push(CheckpointRow {
                        t: rounds,
                        cumulative_regret: cumulative,
                        instantaneous_regret: last_gap.unwrap_or(0.0),
                        bound_overlay: overlay,
                    });
                    if let AlgoInstance::Pair(state) = &*algo {
                        let cap = state.odometer().recompute_capacity(
                            state.hyper(),
                            state.inserts(),
                            state.stats().sq_sum,
                        );
                        capacity_trace.push(CapacityPoint {
                            t: rounds,
                            utility_capacity: cap,
                            effective_remaining: state.odometer().effective_remaining(cap),
                        });
                    }
                }
            }
            EventOp::Delete => {
                let y = event.y.ok_or_else(|| MpError::Config("delete without label".into()))?;
                if let AlgoInstance::Pair(state) = algo {
                    if collect_diag {
                        let diag = state.memory().spectral_diagnostics(state.hyper())?;
                        measured_c = measured_c.min(diag.precond_eig_min);
                        measured_c_max = measured_c_max.max(diag.precond_eig_max);
                    }
                    match state.delete(&event.x, y) {
                        Ok(_) => deletions_applied += 1,
                        Err(e @ MpError::CapacityExhausted { .. }) => {
                            if halt_on_exhaustion {
                                return Err(e);
                            }
                            deletions_rejected += 1;
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            EventOp::Predict => {
                if let AlgoInstance::Pair(state) = algo {
                    match state.predict(&event.x)? {
                        crate::pair::PredictOutcome::Ready(_) => predictions_ready += 1,
                        crate::pair::PredictOutcome::NotReady { .. } => predictions_deferred += 1,
                    }
                }
            }
        }
    }

    let budget = algo.pair().map(|state| {
        state.odometer().budget_report(
            state.hyper(),
            state.inserts(),
            state.stats().sq_sum,
            state.hyper().delta_budget,
        )
    });

    Ok(RegretReport {
        algorithm: algo.name(),
        comparator: comparator.describe(),
        rows,
        rounds,
        final_cumulative: cumulative,
        final_average: if rounds > 0 {
            cumulative / rounds as f64
        } else {
            0.0
        },
        measured_grad_bound: measured_g,
        measured_precond_min: if measured_c.is_finite() { measured_c } else { 1.0 },
        measured_precond_max: measured_c_max,
        grad_sq_sum,
        path_len_total: path_len,
        deletions_applied,
        deletions_rejected,
        predictions_ready,
        predictions_deferred,
        capacity_trace,
        budget,
    })
}
