//! Distillation of trajectories into windowed training samples: periodic
//! window extraction, probabilistic easy/hard balancing, channel
//! normalization, the standard training grids, and dataset persistence.

mod store;

pub use store::{
    read_dataset, read_dataset_manifest, write_dataset, DatasetManifest, DATASET_FORMAT_VERSION,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::sim::{GaussianPacketSpec, PotentialSpec, Trajectory, TrajectoryManifest};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    /// Window width in grid points (odd).
    pub w: usize,
    /// History length in time steps.
    pub h: usize,
    /// Channels: 2 = Re/Im, 3 = Re/Im plus normalized potential.
    pub c: usize,
    pub spatial_keep_prob: f64,
    pub temporal_keep_prob: f64,
    /// Multiplicative keep-probability factor for windows whose span overlaps
    /// nonzero potential; the product is capped at 1.
    pub barrier_boost: f64,
    /// Global divisor mapping potential values into [0, 1].
    pub v_scale: f64,
    pub seed: u64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            w: 23,
            h: 4,
            c: 3,
            spatial_keep_prob: 0.1,
            temporal_keep_prob: 0.9,
            barrier_boost: 5.0,
            v_scale: 15.0,
            seed: 0,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w == 0 || self.w % 2 == 0 {
            return Err(CoreError::InvalidParameter(format!(
                "window width must be odd, got {}",
                self.w
            )));
        }
        if self.h == 0 {
            return Err(CoreError::InvalidParameter(
                "history length must be at least 1".into(),
            ));
        }
        if !(self.c == 2 || self.c == 3) {
            return Err(CoreError::InvalidParameter(format!(
                "channels must be 2 or 3, got {}",
                self.c
            )));
        }
        for (name, p) in [
            ("spatial_keep_prob", self.spatial_keep_prob),
            ("temporal_keep_prob", self.temporal_keep_prob),
        ] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(CoreError::InvalidParameter(format!(
                    "{name} must be in (0, 1], got {p}"
                )));
            }
        }
        if !(self.barrier_boost.is_finite() && self.barrier_boost > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "barrier_boost must be positive, got {}",
                self.barrier_boost
            )));
        }
        if !(self.v_scale.is_finite() && self.v_scale > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "v_scale must be positive, got {}",
                self.v_scale
            )));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn target_len(&self) -> usize {
        self.w * 2
    }

    /// Window span around a center: offsets −⌊W/2⌋ ..= +⌊(W−1)/2⌋.
    pub fn half_width(&self) -> usize {
        self.w / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOrigin {
    /// Index of the source trajectory within the dataset's provenance list.
    pub trajectory: u32,
    pub center: u32,
    pub step: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// Row-major [H][W][C].
    pub input: Vec<f32>,
    /// Row-major [W][2] (Re, Im) at step j + H.
    pub target: Vec<f32>,
    pub origin: SampleOrigin,
}

/// Sample-major flat storage; `input(k)`/`target(k)` give per-sample views.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: WindowConfig,
    pub inputs: Vec<f32>,
    pub targets: Vec<f32>,
    pub origins: Vec<SampleOrigin>,
    pub provenance: Vec<TrajectoryManifest>,
}

impl Dataset {
    pub fn empty(config: WindowConfig) -> Self {
        Self {
            config,
            inputs: Vec::new(),
            targets: Vec::new(),
            origins: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn input(&self, k: usize) -> &[f32] {
        let n = self.config.input_len();
        &self.inputs[k * n..(k + 1) * n]
    }

    pub fn target(&self, k: usize) -> &[f32] {
        let n = self.config.target_len();
        &self.targets[k * n..(k + 1) * n]
    }

    pub fn sample(&self, k: usize) -> WindowSample {
        WindowSample {
            input: self.input(k).to_vec(),
            target: self.target(k).to_vec(),
            origin: self.origins[k],
        }
    }

    pub fn push(&mut self, sample: WindowSample) {
        debug_assert_eq!(sample.input.len(), self.config.input_len());
        debug_assert_eq!(sample.target.len(), self.config.target_len());
        self.inputs.extend_from_slice(&sample.input);
        self.targets.extend_from_slice(&sample.target);
        self.origins.push(sample.origin);
    }

    pub fn from_samples(
        config: WindowConfig,
        samples: impl IntoIterator<Item = WindowSample>,
        provenance: Vec<TrajectoryManifest>,
    ) -> Self {
        let mut ds = Self::empty(config);
        for s in samples {
            ds.push(s);
        }
        ds.provenance = provenance;
        ds
    }
}

/// Highest valid start step: windows need H history rows plus a target row.
pub fn last_start_step(n_t: usize, h: usize) -> Option<usize> {
    n_t.checked_sub(h + 1)
}

pub fn extract_window(
    traj: &Trajectory,
    center: usize,
    step: usize,
    cfg: &WindowConfig,
) -> Result<WindowSample> {
    cfg.validate()?;
    let n_x = traj.grid.n_x;
    if cfg.w > n_x {
        return Err(CoreError::InvalidParameter(format!(
            "window width {} exceeds grid size {n_x}",
            cfg.w
        )));
    }
    let last = last_start_step(traj.grid.n_t, cfg.h).ok_or_else(|| {
        CoreError::OutOfRange(format!(
            "trajectory has {} snapshots, need at least {}",
            traj.grid.n_t,
            cfg.h + 1
        ))
    })?;
    if step > last {
        return Err(CoreError::OutOfRange(format!(
            "start step {step} exceeds last valid step {last}"
        )));
    }
    let half = cfg.half_width() as isize;
    let wrap = |off: isize| -> usize {
        (center as isize + off).rem_euclid(n_x as isize) as usize
    };

    let mut input = Vec::with_capacity(cfg.input_len());
    for row in 0..cfg.h {
        let frame = traj.frame(step + row);
        for off in -half..=half {
            let idx = wrap(off);
            input.push(frame[idx].re as f32);
            input.push(frame[idx].im as f32);
            if cfg.c == 3 {
                input.push((traj.v[idx] / cfg.v_scale) as f32);
            }
        }
    }
    let target_frame = traj.frame(step + cfg.h);
    let mut target = Vec::with_capacity(cfg.target_len());
    for off in -half..=half {
        let idx = wrap(off);
        target.push(target_frame[idx].re as f32);
        target.push(target_frame[idx].im as f32);
    }
    Ok(WindowSample {
        input,
        target,
        origin: SampleOrigin {
            trajectory: 0,
            center: center as u32,
            step: step as u32,
        },
    })
}

/// True wherever a window centered at that index spans any nonzero potential
/// point (circular dilation of the support by the window half-width).
fn barrier_overlap_mask(v: &[f64], half: usize) -> Vec<bool> {
    let n = v.len();
    let mut mask = vec![false; n];
    for (i, &vi) in v.iter().enumerate() {
        if vi != 0.0 {
            for off in -(half as isize)..=(half as isize) {
                mask[(i as isize + off).rem_euclid(n as isize) as usize] = true;
            }
        }
    }
    mask
}

/// Incremental curriculum assembly so trajectories can be simulated, sliced
/// and dropped one at a time. Sampling draws from a per-trajectory RNG stream
/// keyed by (seed, trajectory index), so the result does not depend on how
/// trajectories are batched.
pub struct CurriculumBuilder {
    cfg: WindowConfig,
    dataset: Dataset,
    next_id: u32,
}

impl CurriculumBuilder {
    pub fn new(cfg: WindowConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            dataset: Dataset::empty(cfg),
            next_id: 0,
        })
    }

    pub fn add_trajectory(&mut self, traj: &Trajectory) -> Result<usize> {
        if let Some(first) = self.dataset.provenance.first() {
            if first.grid.n_x != traj.grid.n_x
                || first.grid.snapshot_dt() != traj.grid.snapshot_dt()
            {
                return Err(CoreError::ShapeMismatch(
                    "trajectories must share N_x and snapshot spacing".into(),
                ));
            }
        }
        let cfg = &self.cfg;
        let id = self.next_id;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(id as u64);

        let last = last_start_step(traj.grid.n_t, cfg.h).ok_or_else(|| {
            CoreError::OutOfRange(format!(
                "trajectory has {} snapshots, need at least {}",
                traj.grid.n_t,
                cfg.h + 1
            ))
        })?;
        let overlap = barrier_overlap_mask(&traj.v, cfg.half_width());
        let base = cfg.spatial_keep_prob * cfg.temporal_keep_prob;
        let boosted = (base * cfg.barrier_boost).min(1.0);

        let mut kept = 0;
        for step in 0..=last {
            for center in 0..traj.grid.n_x {
                let p = if overlap[center] { boosted } else { base };
                if rng.gen::<f64>() < p {
                    let mut sample = extract_window(traj, center, step, cfg)?;
                    sample.origin.trajectory = id;
                    self.dataset.push(sample);
                    kept += 1;
                }
            }
        }
        self.dataset.provenance.push(TrajectoryManifest {
            format_version: crate::sim::TRAJECTORY_FORMAT_VERSION,
            grid: traj.grid,
            packet: traj.packet,
            potential: traj.potential.clone(),
            seed: None,
        });
        self.next_id += 1;
        Ok(kept)
    }

    pub fn finish(self) -> Result<Dataset> {
        if self.dataset.provenance.is_empty() {
            return Err(CoreError::EmptyInput("no trajectories supplied".into()));
        }
        Ok(self.dataset)
    }
}

pub fn build_curriculum(trajs: &[Trajectory], cfg: &WindowConfig) -> Result<Dataset> {
    let mut builder = CurriculumBuilder::new(*cfg)?;
    for traj in trajs {
        builder.add_trajectory(traj)?;
    }
    builder.finish()
}

/// The standard training grids: 189 free packets (X0 × S0 × E0) and the same
/// packets crossed with 14 barrier heights at fixed width 7 (2646 pairs).
pub fn standard_training_grids() -> (
    Vec<GaussianPacketSpec>,
    Vec<(GaussianPacketSpec, PotentialSpec)>,
) {
    let x0s = [10.0, 40.0, 70.0];
    let s0s = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];
    let e0s = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
    let mut free = Vec::with_capacity(189);
    for &x0 in &x0s {
        for &s0 in &s0s {
            for &e0 in &e0s {
                free.push(GaussianPacketSpec::new(x0, s0, e0));
            }
        }
    }
    let mut barrier = Vec::with_capacity(free.len() * 14);
    for packet in &free {
        for hb in 1..=14 {
            barrier.push((*packet, PotentialSpec::rectangular(hb as f64, 7.0)));
        }
    }
    (free, barrier)
}
