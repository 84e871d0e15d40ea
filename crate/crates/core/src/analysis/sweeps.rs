//! Generalization sweeps over physical parameters and hyper-parameter scans.

use super::{run_suite, SuitePredictor, TestSuite};
use crate::curriculum::{build_curriculum, WindowConfig};
use crate::error::{CoreError, Result};
use crate::models::{train, Model, ModelSpec, TrainConfig};
use crate::rollout::{rollout, RolloutConfig};
use crate::sim::{run_simulation, GaussianPacketSpec, PotentialSpec, SimGrid, Trajectory};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Physical axis varied while everything else stays at the base case.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PacketSpread,
    PacketEnergy,
    BarrierWidth,
    BarrierHeight,
}

/// Base case for generalization sweeps: one packet against one rectangular
/// barrier, matching the fixed-width training curriculum.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBase {
    pub packet: GaussianPacketSpec,
    pub barrier_height: f64,
    pub barrier_width: f64,
}

impl Default for SweepBase {
    fn default() -> Self {
        Self {
            packet: GaussianPacketSpec::new(30.0, 2.0, 5.0),
            barrier_height: 7.0,
            barrier_width: 7.0,
        }
    }
}

impl SweepBase {
    fn case_for(&self, axis: SweepAxis, value: f64) -> (GaussianPacketSpec, PotentialSpec) {
        let mut packet = self.packet;
        let mut height = self.barrier_height;
        let mut width = self.barrier_width;
        match axis {
            SweepAxis::PacketSpread => packet.s0 = value,
            SweepAxis::PacketEnergy => packet.e0 = value,
            SweepAxis::BarrierWidth => width = value,
            SweepAxis::BarrierHeight => height = value,
        }
        (packet, PotentialSpec::rectangular(height, width))
    }
}

/// Default sweep grids, bracketing the training ranges on both sides.
pub fn default_axis_values(axis: SweepAxis) -> Vec<f64> {
    match axis {
        SweepAxis::PacketSpread => vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 7.0, 9.0],
        SweepAxis::PacketEnergy => vec![0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0, 14.0],
        SweepAxis::BarrierWidth => vec![0.25, 0.5, 1.0, 2.0, 4.0, 7.0, 10.0, 14.0, 20.0],
        SweepAxis::BarrierHeight => vec![0.5, 1.0, 3.0, 5.0, 7.0, 10.0, 14.0, 17.0, 20.0],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPointResult {
    pub value: f64,
    pub n_models: usize,
    /// Models that produced no usable rollout at this value.
    pub failures: usize,
    pub mean_corr: f64,
    pub min_corr: f64,
    pub max_corr: f64,
    pub mean_mae: f64,
}

/// Rolls every model out against one simulated case per axis value and
/// reports per-value statistics over the model ensemble. Per-model failures
/// are counted, not fatal; a value whose simulation fails marks every model
/// as failed there.
pub fn generalization_sweep(
    models: &[Model],
    axis: SweepAxis,
    values: &[f64],
    base: &SweepBase,
    grid: &SimGrid,
    window: &WindowConfig,
    cfg: &RolloutConfig,
) -> Result<Vec<SweepPointResult>> {
    if models.is_empty() {
        return Err(CoreError::EmptyInput("sweep model ensemble".into()));
    }
    if values.is_empty() {
        return Err(CoreError::EmptyInput("sweep value grid".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let (packet, potential) = base.case_for(axis, value);
        let traj = match run_simulation(&packet, &potential, grid) {
            Ok(t) => t,
            Err(_) => {
                points.push(SweepPointResult {
                    value,
                    n_models: models.len(),
                    failures: models.len(),
                    mean_corr: f64::NAN,
                    min_corr: f64::NAN,
                    max_corr: f64::NAN,
                    mean_mae: f64::NAN,
                });
                continue;
            }
        };
        let mut corrs = Vec::with_capacity(models.len());
        let mut maes = Vec::with_capacity(models.len());
        let mut failures = 0usize;
        for model in models {
            match rollout(model, &traj, window, cfg) {
                Ok(result) if result.produced_steps() > 0 => {
                    corrs.push(result.mean_corr());
                    maes.push(result.mean_mae());
                }
                _ => failures += 1,
            }
        }
        let (mean_corr, min_corr, max_corr, mean_mae) = if corrs.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let n = corrs.len() as f64;
            (
                corrs.iter().sum::<f64>() / n,
                corrs.iter().copied().fold(f64::INFINITY, f64::min),
                corrs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                maes.iter().sum::<f64>() / n,
            )
        };
        points.push(SweepPointResult {
            value,
            n_models: models.len(),
            failures,
            mean_corr,
            min_corr,
            max_corr,
            mean_mae,
        });
    }
    Ok(points)
}

pub fn write_sweep_csv(points: &[SweepPointResult], path: &Path) -> Result<()> {
    let mut out = String::from("value,mean_corr,min_corr,max_corr,mean_mae,n_models,failures\n");
    for p in points {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9e},{},{}\n",
            p.value, p.mean_corr, p.min_corr, p.max_corr, p.mean_mae, p.n_models, p.failures
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Architecture axis varied in a hyper-parameter scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperAxis {
    /// History depth H (also re-windows the curriculum).
    History,
    /// Window width W (also re-windows the curriculum).
    Width,
    /// Hidden size K.
    Hidden,
}

/// Everything a hyper-parameter scan holds fixed.
pub struct HyperSweepContext<'a> {
    pub trajs: &'a [Trajectory],
    pub base_window: WindowConfig,
    pub base_spec: ModelSpec,
    pub train: TrainConfig,
    pub suite: &'a TestSuite,
    pub grid: SimGrid,
    pub rollout: RolloutConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HyperPointResult {
    pub value: usize,
    pub n_seeds: usize,
    pub failures: usize,
    pub mean_mae: f64,
    pub best_mae: f64,
    pub mean_corr: f64,
    pub best_corr: f64,
    /// Set when the whole point failed before any seed could run.
    pub error: Option<String>,
}

impl HyperPointResult {
    fn failed(value: usize, n_seeds: usize, err: &CoreError) -> Self {
        Self {
            value,
            n_seeds,
            failures: n_seeds,
            mean_mae: f64::NAN,
            best_mae: f64::NAN,
            mean_corr: f64::NAN,
            best_corr: f64::NAN,
            error: Some(err.to_string()),
        }
    }
}

/// Re-windows, retrains with `n_seeds` seeds, and re-evaluates the suite for
/// every axis value. Per-seed scores are averaged and the best seed (highest
/// ⟨C⟩, lowest ⟨|ε|⟩) is reported alongside. Point and seed failures are
/// recorded, not fatal.
pub fn hyperparameter_sweep(
    ctx: &HyperSweepContext,
    axis: HyperAxis,
    values: &[usize],
    n_seeds: usize,
) -> Result<Vec<HyperPointResult>> {
    if values.is_empty() {
        return Err(CoreError::EmptyInput("hyper-parameter value grid".into()));
    }
    if n_seeds == 0 {
        return Err(CoreError::InvalidParameter(
            "hyper-parameter sweep needs at least one seed".into(),
        ));
    }
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let mut window = ctx.base_window;
        let mut spec = ctx.base_spec.clone();
        match axis {
            HyperAxis::History => {
                window.h = value;
                spec.h = value;
            }
            HyperAxis::Width => {
                window.w = value;
                spec.w = value;
            }
            HyperAxis::Hidden => spec.k = value,
        }
        let mut rollout_cfg = ctx.rollout.clone();
        rollout_cfg.seed_steps = window.h;

        let dataset = match build_curriculum(ctx.trajs, &window) {
            Ok(d) => d,
            Err(err) => {
                points.push(HyperPointResult::failed(value, n_seeds, &err));
                continue;
            }
        };

        let mut corrs = Vec::with_capacity(n_seeds);
        let mut maes = Vec::with_capacity(n_seeds);
        let mut failures = 0usize;
        for seed in 0..n_seeds as u64 {
            let mut train_cfg = ctx.train.clone();
            train_cfg.seed = ctx.train.seed + seed;
            let scored = train(&dataset, &spec, &train_cfg).and_then(|outcome| {
                if let Some(step) = outcome.diverged_at {
                    return Err(CoreError::Diverged {
                        step,
                        detail: "training loss became non-finite".into(),
                    });
                }
                run_suite(
                    SuitePredictor::Model(&outcome.model),
                    ctx.suite,
                    &ctx.grid,
                    &window,
                    &rollout_cfg,
                )
            });
            match scored {
                Ok(report) if report.mean_corr.is_finite() => {
                    corrs.push(report.mean_corr);
                    maes.push(report.mean_mae);
                }
                _ => failures += 1,
            }
        }
        let (mean_mae, best_mae, mean_corr, best_corr) = if corrs.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let n = corrs.len() as f64;
            (
                maes.iter().sum::<f64>() / n,
                maes.iter().copied().fold(f64::INFINITY, f64::min),
                corrs.iter().sum::<f64>() / n,
                corrs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )
        };
        points.push(HyperPointResult {
            value,
            n_seeds,
            failures,
            mean_mae,
            best_mae,
            mean_corr,
            best_corr,
            error: None,
        });
    }
    Ok(points)
}

pub fn write_hyper_csv(points: &[HyperPointResult], path: &Path) -> Result<()> {
    let mut out =
        String::from("value,mean_mae,best_mae,mean_corr,best_corr,n_seeds,failures,error\n");
    for p in points {
        out.push_str(&format!(
            "{},{:.9e},{:.9e},{:.9},{:.9},{},{},{}\n",
            p.value,
            p.mean_mae,
            p.best_mae,
            p.mean_corr,
            p.best_corr,
            p.n_seeds,
            p.failures,
            p.error.as_deref().unwrap_or("").replace(',', ";"),
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}
