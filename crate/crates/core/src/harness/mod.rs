//! Experiment runner: replays stream files through the memory pair and the
//! baselines, computes regret against offline or pathwise comparators, and
//! writes CSV series plus a JSON summary. Cells (stream × algorithm × seed)
//! run in parallel; output assembly is deterministic.

pub mod comparator;
pub mod fidelity;
pub mod regret;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::BaselineSpec;
use crate::error::{MpError, Result};
use crate::lbfgs::B0Mode;
use crate::model::{LossKind, LossModel};
use crate::pair::{
    GateSetting, MemoryPairConfig, MemoryPairState, NoiseCalibration, StepSchedule,
    UnlearnDirection,
};
use crate::stream::{self, Event, EventOp, StreamManifest};

pub use comparator::{offline_comparator, offline_comparator_coordinate, offline_comparator_with_tol};
pub use fidelity::{fidelity_experiment, retrain_without, FidelityReport};
pub use regret::{regret_series, AlgoInstance, CheckpointRow, ComparatorSpec, RegretReport};

/// Memory-pair construction knobs exposed to experiment configs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MemoryPairParams {
    pub hyper: crate::model::HyperParams,
    pub schedule: StepSchedule,
    #[serde(default)]
    pub gate: GateSetting,
    #[serde(default)]
    pub noise_calibration: NoiseCalibration,
    #[serde(default)]
    pub unlearn_direction: UnlearnDirection,
    #[serde(default)]
    pub downdate_on_delete: bool,
    #[serde(default = "default_true")]
    pub noise_enabled: bool,
    #[serde(default)]
    pub b0_mode: B0Mode,
    #[serde(default = "default_b0")]
    pub b0_scale: f64,
    #[serde(default)]
    pub sensitivity_override: Option<f64>,
}

fn default_true() -> bool {
    true
}

fn default_b0() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum AlgorithmConfig {
    MemoryPair(MemoryPairParams),
    Ogd { lambda: f64 },
    Adagrad { #[serde(default = "default_eps_num")] eps_num: f64 },
    Ons { gamma_ons: f64 },
}

fn default_eps_num() -> f64 {
    1e-8
}

impl AlgorithmConfig {
    pub fn label(&self) -> &'static str {
        match self {
            AlgorithmConfig::MemoryPair(_) => "memory_pair",
            AlgorithmConfig::Ogd { .. } => "ogd",
            AlgorithmConfig::Adagrad { .. } => "adagrad",
            AlgorithmConfig::Ons { .. } => "ons",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparatorKind {
    #[default]
    Static,
    Path,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub loss: LossKind,
    pub reg_lambda: f64,
    pub clip_grad: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub streams: Vec<PathBuf>,
    pub model: ModelConfig,
    pub algorithms: Vec<AlgorithmConfig>,
    pub checkpoints: Vec<u64>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub comparator: ComparatorKind,
    #[serde(default = "default_true")]
    pub halt_on_exhaustion: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.streams.is_empty() {
            return Err(MpError::Config("at least one stream is required".into()));
        }
        if self.algorithms.is_empty() {
            return Err(MpError::Config("at least one algorithm is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(MpError::Config("at least one seed is required".into()));
        }
        if self.checkpoints.is_empty() {
            return Err(MpError::Config("at least one checkpoint is required".into()));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MpError::Config(
                "checkpoints must be strictly ascending".into(),
            ));
        }
        if self.model.reg_lambda < 0.0 || self.model.clip_grad <= 0.0 {
            return Err(MpError::Config(
                "model requires reg_lambda >= 0 and clip_grad > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn eval_model(&self) -> Result<LossModel> {
        LossModel::new(self.model.loss, self.model.reg_lambda, self.model.clip_grad)
    }
}

/// Insert payloads of a stream, in order.
pub fn insert_points(events: &[Event]) -> Vec<(Vec<f64>, f64)> {
    events
        .iter()
        .filter(|e| e.op == EventOp::Insert)
        .map(|e| (e.x.clone(), e.y.expect("validated insert carries a label")))
        .collect()
}

/// Build the comparator for a stream: the offline minimizer of the realized
/// inserts, or the per-round path of segment minimizers for drift fixtures.
pub fn build_comparator(
    kind: ComparatorKind,
    manifest: &StreamManifest,
    events: &[Event],
    eval_model: &LossModel,
) -> Result<ComparatorSpec> {
    match kind {
        ComparatorKind::Static => {
            let points = insert_points(events);
            let w = offline_comparator(eval_model, manifest.diameter, &points)?;
            Ok(ComparatorSpec::Static(w))
        }
        ComparatorKind::Path => {
            let segments = manifest.segments.as_ref().ok_or_else(|| {
                MpError::Config("path comparator requires a drift manifest with segments".into())
            })?;
            let points = insert_points(events);
            let mut path = Vec::with_capacity(points.len());
            let mut offset = 0usize;
            for seg in segments {
                let len = seg.length as usize;
                let slice = &points[offset..offset + len];
                let w = offline_comparator(eval_model, manifest.diameter, slice)?;
                path.extend(std::iter::repeat_n(w, len));
                offset += len;
            }
            if offset != points.len() {
                return Err(MpError::Config(
                    "segment lengths do not cover the stream".into(),
                ));
            }
            Ok(ComparatorSpec::Path(path))
        }
    }
}

pub fn build_algo(
    config: &AlgorithmConfig,
    eval_model: &LossModel,
    manifest: &StreamManifest,
    seed: u64,
) -> Result<AlgoInstance> {
    let dim = manifest.d;
    Ok(match config {
        AlgorithmConfig::MemoryPair(params) => {
            if params.hyper.dim != dim {
                return Err(MpError::Config(format!(
                    "memory pair dim {} does not match stream d = {}",
                    params.hyper.dim, dim
                )));
            }
            let pair_config = MemoryPairConfig {
                hyper: params.hyper.clone(),
                model: eval_model.clone(),
                schedule: params.schedule,
                seed,
                gate: params.gate,
                noise_calibration: params.noise_calibration,
                unlearn_direction: params.unlearn_direction,
                downdate_on_delete: params.downdate_on_delete,
                noise_enabled: params.noise_enabled,
                b0_mode: params.b0_mode,
                b0_scale: params.b0_scale,
                sensitivity_override: params.sensitivity_override,
            };
            AlgoInstance::Pair(Box::new(MemoryPairState::new(pair_config)?))
        }
        AlgorithmConfig::Ogd { lambda } => AlgoInstance::Baseline(
            BaselineSpec::Ogd { lambda: *lambda }.build(eval_model.clone(), manifest.diameter, dim),
        ),
        AlgorithmConfig::Adagrad { eps_num } => AlgoInstance::Baseline(
            BaselineSpec::Adagrad { eps_num: *eps_num }.build(
                eval_model.clone(),
                manifest.diameter,
                dim,
            ),
        ),
        AlgorithmConfig::Ons { gamma_ons } => AlgoInstance::Baseline(
            BaselineSpec::Ons {
                gamma_ons: *gamma_ons,
            }
            .build(eval_model.clone(), manifest.diameter, dim),
        ),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellResult {
    pub stream: String,
    pub algorithm: String,
    pub seed: u64,
    pub report: RegretReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
    /// Mean final average regret per algorithm across seeds and streams.
    pub final_average_regret: Vec<(String, f64)>,
}

fn csv_for(report: &RegretReport) -> String {
    let mut out = String::from("t,cumulative_regret,instantaneous_regret,bound_overlay\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.t, row.cumulative_regret, row.instantaneous_regret, row.bound_overlay
        ));
    }
    out
}

fn stream_stem(path: &Path) -> String {
    let mut name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "stream".into());
    for suffix in [".gz", ".mps"] {
        if let Some(stripped) = name.strip_suffix(suffix) {
            name = stripped.to_string();
        }
    }
    name
}

/// Run every (stream × algorithm × seed) cell, in parallel, and write one CSV
/// per cell plus `summary.json` and the resolved config. Nothing is written
/// until every cell has succeeded, so failures leave no partial outputs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let eval_model = config.eval_model()?;

    struct StreamData {
        name: String,
        manifest: StreamManifest,
        events: Vec<Event>,
        comparator: ComparatorSpec,
    }

    let mut streams = Vec::new();
    for path in &config.streams {
        let (manifest, events) = stream::read_stream(path)?;
        stream::validate_stream(&manifest, &events)?;
        let comparator = build_comparator(config.comparator, &manifest, &events, &eval_model)?;
        streams.push(StreamData {
            name: stream_stem(path),
            manifest,
            events,
            comparator,
        });
    }

    let overlay_lambda = if config.model.reg_lambda > 0.0 {
        config.model.reg_lambda
    } else {
        1.0
    };

    let mut cells: Vec<(usize, &AlgorithmConfig, u64)> = Vec::new();
    for (si, _) in streams.iter().enumerate() {
        for algo in &config.algorithms {
            for &seed in &config.seeds {
                cells.push((si, algo, seed));
            }
        }
    }

    let results: Vec<Result<CellResult>> = cells
        .par_iter()
        .map(|(si, algo_cfg, seed)| {
            let data = &streams[*si];
            let mut algo = build_algo(algo_cfg, &eval_model, &data.manifest, *seed)?;
            let report = regret_series(
                &data.events,
                &eval_model,
                &mut algo,
                &data.comparator,
                &config.checkpoints,
                config.halt_on_exhaustion,
                overlay_lambda,
            )?;
            Ok(CellResult {
                stream: data.name.clone(),
                algorithm: algo_cfg.label().into(),
                seed: *seed,
                report,
            })
        })
        .collect();

    let mut cell_results = Vec::with_capacity(results.len());
    for r in results {
        cell_results.push(r?);
    }

    let mut averages: Vec<(String, f64)> = Vec::new();
    for algo in &config.algorithms {
        let label = algo.label().to_string();
        let vals: Vec<f64> = cell_results
            .iter()
            .filter(|c| c.algorithm == label)
            .map(|c| c.report.final_average)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
        averages.push((label, mean));
    }

    fs::create_dir_all(&config.out_dir)?;
    for cell in &cell_results {
        let file = config.out_dir.join(format!(
            "{}_{}_seed{}.csv",
            cell.stream, cell.algorithm, cell.seed
        ));
        fs::write(file, csv_for(&cell.report))?;
    }
    let summary = ExperimentSummary {
        config: config.clone(),
        cells: cell_results,
        final_average_regret: averages,
    };
    fs::write(
        config.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    fs::write(
        config.out_dir.join("config.resolved.json"),
        serde_json::to_string_pretty(config)?,
    )?;
    Ok(summary)
}
