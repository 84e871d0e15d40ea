use crate::autodiff::Tensor;
use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Decoupled decay coefficient; the effective per-step shrink factor is
    /// 1 − lr_t·λ, so λ=1 decays by at most lr_peak per step.
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Loss-curve sampling period in optimizer steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 128,
            lr_peak: 1e-3,
            lr_final: 1e-6,
            warmup_fraction: 0.01,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 1.0,
            clip_norm: 1.0,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::InvalidParameter(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(CoreError::InvalidParameter(format!(
                "warmup_fraction {} outside [0, 1)",
                self.warmup_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(CoreError::InvalidParameter(
                "betas must lie in [0, 1)".into(),
            ));
        }
        if self.lr_peak <= 0.0 || self.lr_final < 0.0 || self.clip_norm <= 0.0 {
            return Err(CoreError::InvalidParameter(
                "learning rates and clip_norm must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Piecewise-linear schedule: 0 → lr_peak over the warmup fraction of
/// steps, then lr_peak → lr_final over the remainder.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    if total_steps == 0 {
        return Err(CoreError::InvalidParameter(
            "schedule needs total_steps > 0".into(),
        ));
    }
    if step > total_steps {
        return Err(CoreError::OutOfRange(format!(
            "step {step} past total {total_steps}"
        )));
    }
    let s = step as f64;
    let total = total_steps as f64;
    let warm = cfg.warmup_fraction * total;
    Ok(if s <= warm && warm > 0.0 {
        cfg.lr_peak * s / warm
    } else {
        cfg.lr_peak + (cfg.lr_final - cfg.lr_peak) * (s - warm) / (total - warm)
    })
}

/// Scales all gradients by a common factor so the global L2 norm does not
/// exceed `clip_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], clip_norm: f64) -> f64 {
    let norm_sqr: f64 = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| v as f64 * v as f64)
        .sum();
    let norm = norm_sqr.sqrt();
    if norm > clip_norm {
        let scale = (clip_norm / norm) as f32;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// First and second moment accumulators plus the 1-based step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new_like<'a>(params: impl Iterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        let v = m.clone();
        Self { m, v, t: 0 }
    }
}

const ADAM_EPS: f64 = 1e-8;

/// One decoupled-decay Adam update: θ ← θ·(1 − lr·λ) first, then the
/// bias-corrected moment step. Gradients must already be clipped.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for g in grads {
        if !g.all_finite() {
            return Err(CoreError::NonFinite(
                "gradient became non-finite before the optimizer step".into(),
            ));
        }
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let decay = (1.0 - lr * cfg.weight_decay) as f32;
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..g.len() {
            let gj = g[j] as f64;
            let theta = p.data()[j] as f64 * decay as f64;
            let mj = cfg.beta1 * m[j] as f64 + (1.0 - cfg.beta1) * gj;
            let vj = cfg.beta2 * v[j] as f64 + (1.0 - cfg.beta2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let m_hat = mj / bc1;
            let v_hat = vj / bc2;
            p.data_mut()[j] = (theta - lr * m_hat / (v_hat.sqrt() + ADAM_EPS)) as f32;
        }
    }
    Ok(())
}
