//! Configuration documents. A run is configured by defaults, overlaid by an
//! optional TOML file, overlaid by command-line flags. The fully resolved
//! document is written beside every run's outputs and can itself be loaded
//! as a config file, so any run is reproducible from its snapshot alone.

use anyhow::{Context, Result};
use qdyn_core::curriculum::WindowConfig;
use qdyn_core::models::{GruConventionTag, ModelKind, ModelSpec, TrainConfig};
use qdyn_core::rollout::RolloutConfig;
use qdyn_core::sim::SimGrid;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

macro_rules! overlay {
    ($dst:expr, $src:expr, { $($field:ident),* $(,)? }) => {
        $( if $src.$field.is_some() { $dst.$field.clone_from(&$src.$field); } )*
    };
}

/// Which set of cases `simulate` generates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CaseSet {
    /// 189 freely dispersing packets (X0 × S0 × E0 grid).
    TrainingFree,
    /// The same packets crossed with 14 barrier heights (2646 cases).
    TrainingBarrier,
    /// The 12-case free benchmark suite.
    SuiteFree,
    /// The 25-case potential benchmark suite.
    SuitePotential,
    /// All 37 benchmark cases.
    SuiteFull,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SuiteChoice {
    Free,
    Potential,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Roll trained checkpoints against cases off the training grid.
    Generalization,
    /// Retrain at each axis value and re-score the suite.
    Hyper,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
    pub grid: GridFile,
    pub window: WindowFile,
    pub model: ModelFile,
    pub train: TrainFile,
    pub rollout: RolloutFile,
    pub simulate: SimulateFile,
    pub evaluate: EvaluateFile,
    pub sweep: SweepFile,
    pub interpret: InterpretFile,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridFile {
    pub l_x: Option<f64>,
    pub n_x: Option<usize>,
    pub dt_int: Option<f64>,
    pub snapshot_stride: Option<usize>,
    pub n_t: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowFile {
    pub w: Option<usize>,
    pub h: Option<usize>,
    pub c: Option<usize>,
    pub spatial_keep_prob: Option<f64>,
    pub temporal_keep_prob: Option<f64>,
    pub barrier_boost: Option<f64>,
    pub v_scale: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelFile {
    pub kind: Option<ModelKind>,
    pub k: Option<usize>,
    pub gru_convention: Option<GruConventionTag>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainFile {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_peak: Option<f64>,
    pub lr_final: Option<f64>,
    pub warmup_fraction: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub weight_decay: Option<f64>,
    pub clip_norm: Option<f64>,
    pub seed: Option<u64>,
    pub log_every: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutFile {
    pub delta: Option<f64>,
    pub n_steps: Option<usize>,
    pub stride: Option<usize>,
    pub renormalize: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateFile {
    pub set: Option<CaseSet>,
    pub limit: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateFile {
    pub suite: Option<SuiteChoice>,
    pub oracle: Option<bool>,
    pub limit: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepFile {
    pub kind: Option<SweepKind>,
    pub axis: Option<String>,
    pub values: Option<Vec<f64>>,
    pub n_seeds: Option<usize>,
    pub base_x0: Option<f64>,
    pub base_s0: Option<f64>,
    pub base_e0: Option<f64>,
    pub base_height: Option<f64>,
    pub base_width: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpretFile {
    pub n_windows: Option<usize>,
}

/// Every leaf key of the config document as an optional flag; set flags
/// override file values.
#[derive(clap::Args, Clone, Debug, Default)]
pub struct ConfigOverrides {
    /// TOML configuration file to overlay onto the defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts, snapshots, and manifests.
    #[arg(long, value_name = "DIR")]
    pub output: Option<PathBuf>,
    /// Master seed (also the training seed unless --train-seed is given).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for simulate/evaluate/sweep; defaults to all cores.
    #[arg(long)]
    pub workers: Option<usize>,

    /// Box length L_x.
    #[arg(long, help_heading = "Grid")]
    pub l_x: Option<f64>,
    /// Spatial points N_x.
    #[arg(long, help_heading = "Grid")]
    pub n_x: Option<usize>,
    /// Internal integrator step.
    #[arg(long, help_heading = "Grid")]
    pub dt_int: Option<f64>,
    /// Internal steps per snapshot.
    #[arg(long, help_heading = "Grid")]
    pub snapshot_stride: Option<usize>,
    /// Snapshots per trajectory.
    #[arg(long, help_heading = "Grid")]
    pub n_t: Option<usize>,

    /// Window width W (odd).
    #[arg(long, help_heading = "Window")]
    pub window_width: Option<usize>,
    /// History length H.
    #[arg(long, help_heading = "Window")]
    pub history: Option<usize>,
    /// Input channels: 2 = Re/Im, 3 = Re/Im plus potential.
    #[arg(long, help_heading = "Window")]
    pub channels: Option<usize>,
    /// Spatial keep probability.
    #[arg(long, help_heading = "Window")]
    pub spatial_keep_prob: Option<f64>,
    /// Temporal keep probability.
    #[arg(long, help_heading = "Window")]
    pub temporal_keep_prob: Option<f64>,
    /// Keep-probability boost over barrier-overlapping windows.
    #[arg(long, help_heading = "Window")]
    pub barrier_boost: Option<f64>,
    /// Potential normalization divisor.
    #[arg(long, help_heading = "Window")]
    pub v_scale: Option<f64>,
    /// Window subsampling seed.
    #[arg(long, help_heading = "Window")]
    pub window_seed: Option<u64>,

    /// Architecture: linear | dense | conv | gru.
    #[arg(long, value_parser = parse_model_kind, help_heading = "Model")]
    pub model: Option<ModelKind>,
    /// Hidden size K (defaults to W·C).
    #[arg(long, help_heading = "Model")]
    pub k: Option<usize>,
    /// GRU gate convention: single-bias | reset-after.
    #[arg(long, value_parser = parse_gru_convention, help_heading = "Model")]
    pub gru_convention: Option<GruConventionTag>,

    #[arg(long, help_heading = "Training")]
    pub epochs: Option<usize>,
    #[arg(long, help_heading = "Training")]
    pub batch_size: Option<usize>,
    #[arg(long, help_heading = "Training")]
    pub lr_peak: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub lr_final: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub warmup_fraction: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub beta1: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub beta2: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub weight_decay: Option<f64>,
    #[arg(long, help_heading = "Training")]
    pub clip_norm: Option<f64>,
    /// Training seed; defaults to the master seed.
    #[arg(long, help_heading = "Training")]
    pub train_seed: Option<u64>,
    #[arg(long, help_heading = "Training")]
    pub log_every: Option<usize>,

    /// Reassembly spread δ in grid points.
    #[arg(long, help_heading = "Rollout")]
    pub delta: Option<f64>,
    /// Emulated steps beyond the seed frames.
    #[arg(long, help_heading = "Rollout")]
    pub rollout_steps: Option<usize>,
    /// Window center spacing.
    #[arg(long, help_heading = "Rollout")]
    pub stride: Option<usize>,
    /// Rescale each predicted frame to unit norm.
    #[arg(long, help_heading = "Rollout")]
    pub renormalize: bool,

    /// Case set for simulate.
    #[arg(long, value_enum, help_heading = "Simulate")]
    pub set: Option<CaseSet>,
    /// Generate only the first N cases of the set.
    #[arg(long, help_heading = "Simulate")]
    pub limit: Option<usize>,

    /// Benchmark suite for evaluate.
    #[arg(long, value_enum, help_heading = "Evaluate")]
    pub suite: Option<SuiteChoice>,
    /// Score the simulator against itself instead of a checkpoint.
    #[arg(long, help_heading = "Evaluate")]
    pub oracle: bool,
    /// Evaluate only the first N suite cases.
    #[arg(long, help_heading = "Evaluate")]
    pub eval_limit: Option<usize>,

    /// Sweep kind.
    #[arg(long, value_enum, help_heading = "Sweep")]
    pub sweep_kind: Option<SweepKind>,
    /// Sweep axis: s0 | e0 | barrier-width | barrier-height, or h | w | k.
    #[arg(long, help_heading = "Sweep")]
    pub axis: Option<String>,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', help_heading = "Sweep")]
    pub values: Option<Vec<f64>>,
    /// Seeds per hyper-sweep point.
    #[arg(long, help_heading = "Sweep")]
    pub n_seeds: Option<usize>,
    #[arg(long, help_heading = "Sweep")]
    pub base_x0: Option<f64>,
    #[arg(long, help_heading = "Sweep")]
    pub base_s0: Option<f64>,
    #[arg(long, help_heading = "Sweep")]
    pub base_e0: Option<f64>,
    #[arg(long, help_heading = "Sweep")]
    pub base_height: Option<f64>,
    #[arg(long, help_heading = "Sweep")]
    pub base_width: Option<f64>,

    /// Windows to draw for attribution averaging.
    #[arg(long, help_heading = "Interpret")]
    pub n_windows: Option<usize>,
}

fn parse_model_kind(s: &str) -> std::result::Result<ModelKind, String> {
    match s {
        "linear" => Ok(ModelKind::Linear),
        "dense" => Ok(ModelKind::Dense),
        "conv" => Ok(ModelKind::Conv),
        "gru" => Ok(ModelKind::Gru),
        other => Err(format!(
            "unknown model kind {other:?} (expected linear, dense, conv, or gru)"
        )),
    }
}

fn parse_gru_convention(s: &str) -> std::result::Result<GruConventionTag, String> {
    match s {
        "single-bias" | "single_bias" => Ok(GruConventionTag::SingleBias),
        "reset-after" | "reset_after" => Ok(GruConventionTag::ResetAfter),
        other => Err(format!(
            "unknown GRU convention {other:?} (expected single-bias or reset-after)"
        )),
    }
}

impl ConfigOverrides {
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        resolve(self)
    }

    fn as_file(&self) -> FileConfig {
        FileConfig {
            seed: self.seed,
            workers: self.workers,
            output: self.output.clone(),
            grid: GridFile {
                l_x: self.l_x,
                n_x: self.n_x,
                dt_int: self.dt_int,
                snapshot_stride: self.snapshot_stride,
                n_t: self.n_t,
            },
            window: WindowFile {
                w: self.window_width,
                h: self.history,
                c: self.channels,
                spatial_keep_prob: self.spatial_keep_prob,
                temporal_keep_prob: self.temporal_keep_prob,
                barrier_boost: self.barrier_boost,
                v_scale: self.v_scale,
                seed: self.window_seed,
            },
            model: ModelFile {
                kind: self.model,
                k: self.k,
                gru_convention: self.gru_convention,
            },
            train: TrainFile {
                epochs: self.epochs,
                batch_size: self.batch_size,
                lr_peak: self.lr_peak,
                lr_final: self.lr_final,
                warmup_fraction: self.warmup_fraction,
                beta1: self.beta1,
                beta2: self.beta2,
                weight_decay: self.weight_decay,
                clip_norm: self.clip_norm,
                seed: self.train_seed,
                log_every: self.log_every,
            },
            rollout: RolloutFile {
                delta: self.delta,
                n_steps: self.rollout_steps,
                stride: self.stride,
                renormalize: self.renormalize.then_some(true),
            },
            simulate: SimulateFile {
                set: self.set,
                limit: self.limit,
            },
            evaluate: EvaluateFile {
                suite: self.suite,
                oracle: self.oracle.then_some(true),
                limit: self.eval_limit,
            },
            sweep: SweepFile {
                kind: self.sweep_kind,
                axis: self.axis.clone(),
                values: self.values.clone(),
                n_seeds: self.n_seeds,
                base_x0: self.base_x0,
                base_s0: self.base_s0,
                base_e0: self.base_e0,
                base_height: self.base_height,
                base_width: self.base_width,
            },
            interpret: InterpretFile {
                n_windows: self.n_windows,
            },
        }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }

    fn merge(mut self, over: FileConfig) -> FileConfig {
        overlay!(self, over, { seed, workers, output });
        overlay!(self.grid, over.grid, { l_x, n_x, dt_int, snapshot_stride, n_t });
        overlay!(self.window, over.window, {
            w, h, c, spatial_keep_prob, temporal_keep_prob, barrier_boost, v_scale, seed,
        });
        overlay!(self.model, over.model, { kind, k, gru_convention });
        overlay!(self.train, over.train, {
            epochs, batch_size, lr_peak, lr_final, warmup_fraction,
            beta1, beta2, weight_decay, clip_norm, seed, log_every,
        });
        overlay!(self.rollout, over.rollout, { delta, n_steps, stride, renormalize });
        overlay!(self.simulate, over.simulate, { set, limit });
        overlay!(self.evaluate, over.evaluate, { suite, oracle, limit });
        overlay!(self.sweep, over.sweep, {
            kind, axis, values, n_seeds, base_x0, base_s0, base_e0, base_height, base_width,
        });
        overlay!(self.interpret, over.interpret, { n_windows });
        self
    }
}

/// Fully concrete run document; serializes to the same TOML shape the file
/// schema accepts.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub workers: usize,
    pub output: PathBuf,
    pub grid: SimGrid,
    pub window: WindowConfig,
    pub model: ModelResolved,
    pub train: TrainConfig,
    pub rollout: RolloutResolved,
    pub simulate: SimulateResolved,
    pub evaluate: EvaluateResolved,
    pub sweep: SweepResolved,
    pub interpret: InterpretResolved,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelResolved {
    pub kind: ModelKind,
    pub k: usize,
    pub gru_convention: GruConventionTag,
}

#[derive(Clone, Debug, Serialize)]
pub struct RolloutResolved {
    pub delta: f64,
    pub n_steps: usize,
    pub stride: usize,
    pub renormalize: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateResolved {
    pub set: CaseSet,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvaluateResolved {
    pub suite: SuiteChoice,
    pub oracle: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResolved {
    pub kind: SweepKind,
    pub axis: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    pub n_seeds: usize,
    pub base_x0: f64,
    pub base_s0: f64,
    pub base_e0: f64,
    pub base_height: f64,
    pub base_width: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InterpretResolved {
    pub n_windows: usize,
}

impl ResolvedConfig {
    /// ModelSpec whose geometry comes from a window layout (normally the
    /// producing dataset's) and whose kind, hidden size, and convention come
    /// from this config.
    pub fn model_spec(&self, window: &WindowConfig) -> ModelSpec {
        let mut spec = ModelSpec::new(self.model.kind, window.w, window.h, window.c);
        spec.k = self.model.k;
        spec.gru_convention = self.model.gru_convention;
        spec
    }

    /// Rollout settings with the seed-frame count pinned to a window's
    /// history length.
    pub fn rollout_config(&self, window: &WindowConfig) -> RolloutConfig {
        RolloutConfig {
            delta: self.rollout.delta,
            n_steps: self.rollout.n_steps,
            seed_steps: window.h,
            stride: self.rollout.stride,
            renormalize: self.rollout.renormalize,
        }
    }
}

/// defaults ← file (when given) ← flags.
pub fn resolve(flags: &ConfigOverrides) -> Result<ResolvedConfig> {
    let mut file = FileConfig::default();
    if let Some(path) = &flags.config {
        file = file.merge(FileConfig::load(path)?);
    }
    let cfg = file.merge(flags.as_file());

    let grid_defaults = SimGrid::default();
    let grid = SimGrid {
        l_x: cfg.grid.l_x.unwrap_or(grid_defaults.l_x),
        n_x: cfg.grid.n_x.unwrap_or(grid_defaults.n_x),
        dt_int: cfg.grid.dt_int.unwrap_or(grid_defaults.dt_int),
        snapshot_stride: cfg
            .grid
            .snapshot_stride
            .unwrap_or(grid_defaults.snapshot_stride),
        n_t: cfg.grid.n_t.unwrap_or(grid_defaults.n_t),
    };

    let window_defaults = WindowConfig::default();
    let window = WindowConfig {
        w: cfg.window.w.unwrap_or(window_defaults.w),
        h: cfg.window.h.unwrap_or(window_defaults.h),
        c: cfg.window.c.unwrap_or(window_defaults.c),
        spatial_keep_prob: cfg
            .window
            .spatial_keep_prob
            .unwrap_or(window_defaults.spatial_keep_prob),
        temporal_keep_prob: cfg
            .window
            .temporal_keep_prob
            .unwrap_or(window_defaults.temporal_keep_prob),
        barrier_boost: cfg
            .window
            .barrier_boost
            .unwrap_or(window_defaults.barrier_boost),
        v_scale: cfg.window.v_scale.unwrap_or(window_defaults.v_scale),
        seed: cfg.window.seed.unwrap_or(window_defaults.seed),
    };

    let seed = cfg.seed.unwrap_or(0);
    let model = ModelResolved {
        kind: cfg.model.kind.unwrap_or(ModelKind::Gru),
        k: cfg.model.k.unwrap_or(window.w * window.c),
        gru_convention: cfg
            .model
            .gru_convention
            .unwrap_or(GruConventionTag::SingleBias),
    };

    let train_defaults = TrainConfig::default();
    let train = TrainConfig {
        epochs: cfg.train.epochs.unwrap_or(train_defaults.epochs),
        batch_size: cfg.train.batch_size.unwrap_or(train_defaults.batch_size),
        lr_peak: cfg.train.lr_peak.unwrap_or(train_defaults.lr_peak),
        lr_final: cfg.train.lr_final.unwrap_or(train_defaults.lr_final),
        warmup_fraction: cfg
            .train
            .warmup_fraction
            .unwrap_or(train_defaults.warmup_fraction),
        beta1: cfg.train.beta1.unwrap_or(train_defaults.beta1),
        beta2: cfg.train.beta2.unwrap_or(train_defaults.beta2),
        weight_decay: cfg
            .train
            .weight_decay
            .unwrap_or(train_defaults.weight_decay),
        clip_norm: cfg.train.clip_norm.unwrap_or(train_defaults.clip_norm),
        seed: cfg.train.seed.unwrap_or(seed),
        log_every: cfg.train.log_every.unwrap_or(train_defaults.log_every),
    };

    let rollout_defaults = RolloutConfig::default();
    let rollout = RolloutResolved {
        delta: cfg.rollout.delta.unwrap_or(rollout_defaults.delta),
        n_steps: cfg.rollout.n_steps.unwrap_or(rollout_defaults.n_steps),
        stride: cfg.rollout.stride.unwrap_or(rollout_defaults.stride),
        renormalize: cfg
            .rollout
            .renormalize
            .unwrap_or(rollout_defaults.renormalize),
    };

    let resolved = ResolvedConfig {
        seed,
        workers: cfg.workers.unwrap_or_else(default_workers),
        output: cfg.output.unwrap_or_else(|| PathBuf::from("runs/latest")),
        grid,
        window,
        model,
        train,
        rollout,
        simulate: SimulateResolved {
            set: cfg.simulate.set.unwrap_or(CaseSet::TrainingFree),
            limit: cfg.simulate.limit,
        },
        evaluate: EvaluateResolved {
            suite: cfg.evaluate.suite.unwrap_or(SuiteChoice::Free),
            oracle: cfg.evaluate.oracle.unwrap_or(false),
            limit: cfg.evaluate.limit,
        },
        sweep: SweepResolved {
            kind: cfg.sweep.kind.unwrap_or(SweepKind::Generalization),
            axis: cfg.sweep.axis.unwrap_or_else(|| "e0".into()),
            values: cfg.sweep.values,
            n_seeds: cfg.sweep.n_seeds.unwrap_or(3),
            base_x0: cfg.sweep.base_x0.unwrap_or(30.0),
            base_s0: cfg.sweep.base_s0.unwrap_or(2.0),
            base_e0: cfg.sweep.base_e0.unwrap_or(5.0),
            base_height: cfg.sweep.base_height.unwrap_or(7.0),
            base_width: cfg.sweep.base_width.unwrap_or(7.0),
        },
        interpret: InterpretResolved {
            n_windows: cfg.interpret.n_windows.unwrap_or(200),
        },
    };

    resolved.grid.validate().context("invalid grid settings")?;
    resolved
        .window
        .validate()
        .context("invalid window settings")?;
    resolved
        .model_spec(&resolved.window)
        .validate()
        .context("invalid model settings")?;
    Ok(resolved)
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
