//! Recurrent window-based emulation: evaluate a window model at every
//! center, blend the overlapping per-window estimates with Gaussian weights
//! into a full frame, and feed predicted frames back as inputs for
//! multi-step rollouts with per-step metrics against the simulator.

use crate::analysis::{mae_per_step, normalized_correlation};
use crate::autodiff::Tensor;
use crate::curriculum::WindowConfig;
use crate::error::{CoreError, Result};
use crate::models::Model;
use crate::sim::{field_norm_sqr, Trajectory};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    /// Gaussian reassembly spread in grid points.
    pub delta: f64,
    /// Frames to emulate beyond the seed.
    pub n_steps: usize,
    /// Ground-truth snapshots fed in as the initial condition; must equal
    /// the window history length H.
    pub seed_steps: usize,
    /// Window center spacing; 1 puts a window on every grid point.
    pub stride: usize,
    /// Rescale each predicted frame to unit norm before feeding it back.
    pub renormalize: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            delta: 4.0,
            n_steps: 400,
            seed_steps: 4,
            stride: 1,
            renormalize: false,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "reassembly delta must be positive, got {}",
                self.delta
            )));
        }
        if self.n_steps == 0 {
            return Err(CoreError::InvalidParameter(
                "rollout needs at least one step".into(),
            ));
        }
        if self.seed_steps == 0 {
            return Err(CoreError::InvalidParameter(
                "rollout needs at least one seed frame".into(),
            ));
        }
        if self.stride == 0 {
            return Err(CoreError::InvalidParameter(
                "window stride must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Normalized blending weights A·exp(−k²/2δ²) over window offsets
/// k ∈ −⌊W/2⌋ ..= +⌊W/2⌋, with A chosen so the weights sum to 1.
pub fn reassembly_weights(w: usize, delta: f64) -> Result<Vec<f64>> {
    if w == 0 || w % 2 == 0 {
        return Err(CoreError::InvalidParameter(format!(
            "window width must be odd, got {w}"
        )));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(CoreError::InvalidParameter(format!(
            "reassembly delta must be positive, got {delta}"
        )));
    }
    let half = (w / 2) as isize;
    let raw: Vec<f64> = (-half..=half)
        .map(|k| (-((k * k) as f64) / (2.0 * delta * delta)).exp())
        .collect();
    let norm: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / norm).collect())
}

/// A source of next-step window estimates. `inputs` is a
/// [n_windows, H·W·C] batch in curriculum layout, `centers[i]` the grid
/// index of row i's window center, and `target_step` the absolute snapshot
/// index being predicted. Returns [n_windows, W·2] (Re, Im per point).
pub trait WindowPredictor {
    fn predict_windows(
        &self,
        inputs: &Tensor,
        centers: &[usize],
        target_step: usize,
    ) -> Result<Tensor>;
}

impl WindowPredictor for Model {
    fn predict_windows(
        &self,
        inputs: &Tensor,
        _centers: &[usize],
        _target_step: usize,
    ) -> Result<Tensor> {
        self.predict(inputs)
    }
}

/// Ignores the window inputs and answers with the simulator's own frame at
/// the requested step, rounded to f32 like any model output. Reassembling
/// these estimates must reproduce the ground truth pointwise.
pub struct OraclePredictor<'a> {
    pub traj: &'a Trajectory,
    pub window: WindowConfig,
}

impl WindowPredictor for OraclePredictor<'_> {
    fn predict_windows(
        &self,
        _inputs: &Tensor,
        centers: &[usize],
        target_step: usize,
    ) -> Result<Tensor> {
        if target_step >= self.traj.grid.n_t {
            return Err(CoreError::OutOfRange(format!(
                "oracle asked for snapshot {target_step} of {}",
                self.traj.grid.n_t
            )));
        }
        let n_x = self.traj.grid.n_x;
        let frame = self.traj.frame(target_step);
        let half = self.window.half_width() as isize;
        let mut out = Vec::with_capacity(centers.len() * self.window.target_len());
        for &m in centers {
            for off in -half..=half {
                let idx = (m as isize + off).rem_euclid(n_x as isize) as usize;
                out.push(frame[idx].re as f32);
                out.push(frame[idx].im as f32);
            }
        }
        Tensor::new(vec![centers.len(), self.window.target_len()], out)
    }
}

/// Window inputs for every center, in curriculum layout: rows of
/// [H][W][C] with channels (Re, Im[, V/v_scale]).
fn build_inputs(
    frames: &VecDeque<Vec<Complex64>>,
    v_norm: &[f32],
    window: &WindowConfig,
    centers: &[usize],
) -> Result<Tensor> {
    let n_x = v_norm.len();
    let half = window.half_width() as isize;
    let mut data = Vec::with_capacity(centers.len() * window.input_len());
    for &m in centers {
        for frame in frames {
            for off in -half..=half {
                let idx = (m as isize + off).rem_euclid(n_x as isize) as usize;
                data.push(frame[idx].re as f32);
                data.push(frame[idx].im as f32);
                if window.c == 3 {
                    data.push(v_norm[idx]);
                }
            }
        }
    }
    Tensor::new(vec![centers.len(), window.input_len()], data)
}

/// Blends per-window estimates into one frame. Gathers contributions per
/// grid point in fixed offset order, so the arithmetic is independent of
/// where the wrap boundary sits and circular shifts commute bit-exactly
/// with reassembly at stride 1.
fn reassemble(
    outputs: &Tensor,
    weights: &[f64],
    n_x: usize,
    stride: usize,
) -> Result<Vec<Complex64>> {
    let w = weights.len();
    let half = (w / 2) as isize;
    let data = outputs.data();
    let mut frame = Vec::with_capacity(n_x);
    for p in 0..n_x {
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = 0.0f64;
        for (j, &wgt) in weights.iter().enumerate() {
            let k = j as isize - half;
            let m = (p as isize - k).rem_euclid(n_x as isize) as usize;
            if m % stride != 0 {
                continue;
            }
            let row = m / stride;
            let re = data[row * 2 * w + 2 * j] as f64;
            let im = data[row * 2 * w + 2 * j + 1] as f64;
            num += wgt * Complex64::new(re, im);
            den += wgt;
        }
        if den == 0.0 {
            return Err(CoreError::InvalidParameter(format!(
                "stride {stride} leaves grid point {p} outside every window"
            )));
        }
        frame.push(num / den);
    }
    Ok(frame)
}

/// One emulation step: evaluate the predictor on the window at every
/// center and reassemble the next frame. `frames` holds the last H frames
/// oldest-first; `v_norm` is the potential already divided by v_scale.
pub fn predict_step(
    predictor: &dyn WindowPredictor,
    frames: &VecDeque<Vec<Complex64>>,
    v_norm: &[f32],
    window: &WindowConfig,
    cfg: &RolloutConfig,
    target_step: usize,
) -> Result<Vec<Complex64>> {
    let n_x = v_norm.len();
    if frames.len() != window.h {
        return Err(CoreError::InvalidParameter(format!(
            "predict_step got {} frames, window history is {}",
            frames.len(),
            window.h
        )));
    }
    if frames.iter().any(|f| f.len() != n_x) {
        return Err(CoreError::ShapeMismatch(format!(
            "seed frames must all have {n_x} points"
        )));
    }
    let centers: Vec<usize> = (0..n_x).step_by(cfg.stride).collect();
    let inputs = build_inputs(frames, v_norm, window, &centers)?;
    let outputs = predictor.predict_windows(&inputs, &centers, target_step)?;
    let expected = vec![centers.len(), window.target_len()];
    if outputs.shape() != expected {
        return Err(CoreError::ShapeMismatch(format!(
            "predictor returned {:?}, expected {:?}",
            outputs.shape(),
            expected
        )));
    }
    let weights = reassembly_weights(window.w, cfg.delta)?;
    reassemble(&outputs, &weights, n_x, cfg.stride)
}

#[derive(Clone, Debug)]
pub struct RolloutResult {
    pub n_x: usize,
    /// Emulated frames after the seed, time-major [produced][n_x].
    pub predicted: Vec<Complex64>,
    /// Per-step mean absolute error against truth, while truth frames exist.
    pub mae: Vec<f64>,
    /// Per-step normalized correlation against truth.
    pub corr: Vec<f64>,
    /// Emulation step at which a non-finite frame appeared; the bad frame
    /// is dropped and the result ends just before it.
    pub truncated_at: Option<usize>,
}

impl RolloutResult {
    pub fn produced_steps(&self) -> usize {
        self.predicted.len() / self.n_x
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.predicted[t * self.n_x..(t + 1) * self.n_x]
    }

    pub fn mean_mae(&self) -> f64 {
        mean(&self.mae)
    }

    pub fn mean_corr(&self) -> f64 {
        mean(&self.corr)
    }

    /// metrics.csv with one row per emulated step.
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,mae,correlation\n");
        for (i, (mae, corr)) in self.mae.iter().zip(&self.corr).enumerate() {
            out.push_str(&format!("{},{:.9e},{:.9e}\n", i + 1, mae, corr));
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Seeds the predictor with the trajectory's first `seed_steps` frames and
/// recurrently emulates `n_steps` more, scoring each predicted frame
/// against the simulator while truth snapshots remain.
pub fn rollout(
    predictor: &dyn WindowPredictor,
    traj: &Trajectory,
    window: &WindowConfig,
    cfg: &RolloutConfig,
) -> Result<RolloutResult> {
    window.validate()?;
    cfg.validate()?;
    if cfg.seed_steps != window.h {
        return Err(CoreError::InvalidParameter(format!(
            "seed_steps {} must equal the window history length {}",
            cfg.seed_steps, window.h
        )));
    }
    let n_x = traj.grid.n_x;
    if window.w > n_x {
        return Err(CoreError::InvalidParameter(format!(
            "window width {} exceeds grid size {n_x}",
            window.w
        )));
    }
    if traj.grid.n_t < cfg.seed_steps {
        return Err(CoreError::OutOfRange(format!(
            "trajectory has {} snapshots, rollout needs {} seed frames",
            traj.grid.n_t, cfg.seed_steps
        )));
    }

    let v_norm: Vec<f32> = traj.v.iter().map(|&v| (v / window.v_scale) as f32).collect();
    let mut frames: VecDeque<Vec<Complex64>> = (0..cfg.seed_steps)
        .map(|j| traj.frame(j).to_vec())
        .collect();
    let dx = traj.grid.dx();

    let mut result = RolloutResult {
        n_x,
        predicted: Vec::with_capacity(cfg.n_steps * n_x),
        mae: Vec::new(),
        corr: Vec::new(),
        truncated_at: None,
    };

    for t in 0..cfg.n_steps {
        let target_step = cfg.seed_steps + t;
        let mut next = predict_step(predictor, &frames, &v_norm, window, cfg, target_step)?;
        if next.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            result.truncated_at = Some(t);
            break;
        }
        if cfg.renormalize {
            let norm = field_norm_sqr(&next, dx).sqrt();
            if norm == 0.0 {
                result.truncated_at = Some(t);
                break;
            }
            for c in next.iter_mut() {
                *c /= norm;
            }
        }
        if target_step < traj.grid.n_t {
            let truth = traj.frame(target_step);
            result.mae.push(mae_per_step(&next, truth)?);
            result.corr.push(normalized_correlation(&next, truth)?);
        }
        result.predicted.extend_from_slice(&next);
        frames.pop_front();
        frames.push_back(next);
    }
    Ok(result)
}

/// Persists the emulated frames in the trajectory store layout
/// (psi_re.f32 / psi_im.f32, time-major) plus metrics.csv.
pub fn write_rollout(dir: &Path, result: &RolloutResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::sim::write_f32_file(
        &dir.join("psi_re.f32"),
        result.predicted.iter().map(|c| c.re as f32),
    )?;
    crate::sim::write_f32_file(
        &dir.join("psi_im.f32"),
        result.predicted.iter().map(|c| c.im as f32),
    )?;
    result.write_metrics_csv(&dir.join("metrics.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_simulation, GaussianPacketSpec, PotentialSpec, SimGrid};

    fn small_trajectory(potential: PotentialSpec) -> Trajectory {
        let grid = SimGrid {
            n_x: 128,
            n_t: 24,
            ..SimGrid::default()
        };
        let packet = GaussianPacketSpec::new(30.0, 2.0, 5.0);
        run_simulation(&packet, &potential, &grid).unwrap()
    }

    fn small_window() -> WindowConfig {
        WindowConfig {
            w: 11,
            h: 4,
            c: 3,
            ..WindowConfig::default()
        }
    }

    #[test]
    fn weights_sum_to_one_for_any_delta() {
        for &delta in &[2.0, 4.0, 8.0, 0.7, 23.0] {
            for &w in &[11usize, 23, 5] {
                let weights = reassembly_weights(w, delta).unwrap();
                assert_eq!(weights.len(), w);
                let sum: f64 = weights.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9, "w={w} delta={delta} sum={sum}");
                let half = w / 2;
                assert!(weights[half] >= *weights.iter().last().unwrap());
            }
        }
        assert!(reassembly_weights(10, 4.0).is_err());
        assert!(reassembly_weights(11, 0.0).is_err());
    }

    #[test]
    fn oracle_rollout_reproduces_ground_truth() {
        let traj = small_trajectory(PotentialSpec::rectangular(7.0, 3.0));
        let window = small_window();
        let oracle = OraclePredictor {
            traj: &traj,
            window,
        };
        for &delta in &[2.0, 4.0, 8.0] {
            let cfg = RolloutConfig {
                delta,
                n_steps: 12,
                ..RolloutConfig::default()
            };
            let result = rollout(&oracle, &traj, &window, &cfg).unwrap();
            assert_eq!(result.produced_steps(), 12);
            assert!(result.truncated_at.is_none());
            for t in 0..12 {
                let truth = traj.frame(cfg.seed_steps + t);
                let max_err = result
                    .frame(t)
                    .iter()
                    .zip(truth)
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0f64, f64::max);
                assert!(max_err < 1e-6, "delta={delta} step {t}: {max_err:.2e}");
            }
            assert!(result.corr.iter().all(|&c| c > 1.0 - 1e-9));
            assert!(result.mean_mae() < 1e-7);
        }
    }

    #[test]
    fn prediction_is_translation_equivariant() {
        use crate::models::{build_model, ModelKind, ModelSpec};
        let traj = small_trajectory(PotentialSpec::rectangular(6.0, 4.0));
        let window = small_window();
        let spec = ModelSpec::new(ModelKind::Dense, window.w, window.h, window.c);
        let model = build_model(&spec, 11).unwrap();
        let cfg = RolloutConfig {
            n_steps: 1,
            ..RolloutConfig::default()
        };
        let n_x = traj.grid.n_x;
        let v_norm: Vec<f32> = traj.v.iter().map(|&v| (v / window.v_scale) as f32).collect();
        let frames: VecDeque<Vec<Complex64>> =
            (0..window.h).map(|j| traj.frame(j).to_vec()).collect();
        let base = predict_step(&model, &frames, &v_norm, &window, &cfg, window.h).unwrap();

        for shift in [1usize, 17, 64, 127] {
            let rot = |src: &[Complex64]| -> Vec<Complex64> {
                (0..n_x).map(|i| src[(i + n_x - shift) % n_x]).collect()
            };
            let shifted_frames: VecDeque<Vec<Complex64>> =
                frames.iter().map(|f| rot(f)).collect();
            let shifted_v: Vec<f32> = (0..n_x).map(|i| v_norm[(i + n_x - shift) % n_x]).collect();
            let moved =
                predict_step(&model, &shifted_frames, &shifted_v, &window, &cfg, window.h)
                    .unwrap();
            for i in 0..n_x {
                let expect = base[(i + n_x - shift) % n_x];
                assert_eq!(moved[i], expect, "shift {shift}, point {i}");
            }
        }
    }

    #[test]
    fn batched_inference_matches_one_window_at_a_time() {
        use crate::models::{build_model, ModelKind, ModelSpec};

        /// Runs the wrapped model on each window row separately.
        struct OneByOne<'a>(&'a Model);
        impl WindowPredictor for OneByOne<'_> {
            fn predict_windows(
                &self,
                inputs: &Tensor,
                _centers: &[usize],
                _target_step: usize,
            ) -> Result<Tensor> {
                let n = inputs.shape()[0];
                let width = inputs.shape()[1];
                let mut data = Vec::new();
                for i in 0..n {
                    let row = Tensor::new(
                        vec![1, width],
                        inputs.data()[i * width..(i + 1) * width].to_vec(),
                    )?;
                    let out = self.0.predict(&row)?;
                    data.extend_from_slice(out.data());
                }
                let w2 = data.len() / n;
                Tensor::new(vec![n, w2], data)
            }
        }

        let traj = small_trajectory(PotentialSpec::Free);
        let window = small_window();
        let spec = ModelSpec::new(ModelKind::Gru, window.w, window.h, window.c);
        let model = build_model(&spec, 21).unwrap();
        let cfg = RolloutConfig {
            n_steps: 2,
            ..RolloutConfig::default()
        };
        let batched = rollout(&model, &traj, &window, &cfg).unwrap();
        let single = rollout(&OneByOne(&model), &traj, &window, &cfg).unwrap();
        assert_eq!(batched.predicted, single.predicted);
    }

    #[test]
    fn nan_outputs_truncate_with_partial_result() {
        /// Healthy for two steps, then NaN.
        struct Poisoned {
            window: WindowConfig,
        }
        impl WindowPredictor for Poisoned {
            fn predict_windows(
                &self,
                inputs: &Tensor,
                _centers: &[usize],
                target_step: usize,
            ) -> Result<Tensor> {
                let n = inputs.shape()[0];
                let fill = if target_step >= self.window.h + 2 {
                    f32::NAN
                } else {
                    0.25
                };
                Ok(Tensor::filled(vec![n, self.window.target_len()], fill))
            }
        }

        let traj = small_trajectory(PotentialSpec::Free);
        let window = small_window();
        let predictor = Poisoned { window };
        let cfg = RolloutConfig {
            n_steps: 10,
            ..RolloutConfig::default()
        };
        let result = rollout(&predictor, &traj, &window, &cfg).unwrap();
        assert_eq!(result.truncated_at, Some(2));
        assert_eq!(result.produced_steps(), 2);
        assert_eq!(result.mae.len(), 2);
        assert!(result.predicted.iter().all(|c| c.re.is_finite()));
    }

    #[test]
    fn renormalization_keeps_unit_norm() {
        use crate::models::{build_model, ModelKind, ModelSpec};
        let traj = small_trajectory(PotentialSpec::Free);
        let window = small_window();
        let spec = ModelSpec::new(ModelKind::Linear, window.w, window.h, window.c);
        let model = build_model(&spec, 3).unwrap();
        let cfg = RolloutConfig {
            n_steps: 5,
            renormalize: true,
            ..RolloutConfig::default()
        };
        let result = rollout(&model, &traj, &window, &cfg).unwrap();
        let dx = traj.grid.dx();
        for t in 0..result.produced_steps() {
            let norm = field_norm_sqr(result.frame(t), dx);
            assert!((norm - 1.0).abs() < 1e-12, "step {t}: norm {norm}");
        }
    }

    #[test]
    fn stride_two_covers_every_point_and_larger_strides_can_fail() {
        let traj = small_trajectory(PotentialSpec::Free);
        let window = small_window();
        let oracle = OraclePredictor {
            traj: &traj,
            window,
        };
        let cfg = RolloutConfig {
            stride: 2,
            n_steps: 3,
            ..RolloutConfig::default()
        };
        let result = rollout(&oracle, &traj, &window, &cfg).unwrap();
        assert_eq!(result.produced_steps(), 3);
        // Window spans 11 points; stride 16 leaves gaps between centers.
        let cfg = RolloutConfig {
            stride: 16,
            n_steps: 1,
            ..RolloutConfig::default()
        };
        assert!(rollout(&oracle, &traj, &window, &cfg).is_err());
    }

    #[test]
    fn seed_step_mismatch_is_rejected() {
        let traj = small_trajectory(PotentialSpec::Free);
        let window = small_window();
        let oracle = OraclePredictor {
            traj: &traj,
            window,
        };
        let cfg = RolloutConfig {
            seed_steps: 3,
            ..RolloutConfig::default()
        };
        assert!(rollout(&oracle, &traj, &window, &cfg).is_err());
    }

    #[test]
    fn metrics_csv_has_a_row_per_step() {
        let traj = small_trajectory(PotentialSpec::Free);
        let window = small_window();
        let oracle = OraclePredictor {
            traj: &traj,
            window,
        };
        let cfg = RolloutConfig {
            n_steps: 6,
            ..RolloutConfig::default()
        };
        let result = rollout(&oracle, &traj, &window, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_rollout(dir.path(), &result).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,mae,correlation");
        assert_eq!(lines.len(), 7);
        let re = std::fs::metadata(dir.path().join("psi_re.f32")).unwrap();
        assert_eq!(re.len() as usize, 6 * traj.grid.n_x * 4);
    }
}
