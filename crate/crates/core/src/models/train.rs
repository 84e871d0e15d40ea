use super::optim::{adamw_step, clip_global_norm, lr_at, AdamState, TrainConfig};
use super::{build_model, mse_loss, Model, ModelSpec};
use crate::autodiff::{Tape, Tensor};
use crate::curriculum::Dataset;
use crate::error::{CoreError, Result};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub struct LossPoint {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub state: AdamState,
    pub loss_curve: Vec<LossPoint>,
    pub total_steps: usize,
    pub completed_steps: usize,
    /// Largest global gradient norm observed after clipping.
    pub max_post_clip_norm: f64,
    /// Step at which the loss or a gradient became non-finite; the model
    /// holds the parameters from just before that step.
    pub diverged_at: Option<usize>,
}

fn gather_batch(dataset: &Dataset, idx: &[usize]) -> (Tensor, Tensor) {
    let in_len = dataset.config.input_len();
    let out_len = dataset.config.target_len();
    let mut bx = Vec::with_capacity(idx.len() * in_len);
    let mut by = Vec::with_capacity(idx.len() * out_len);
    for &k in idx {
        bx.extend_from_slice(dataset.input(k));
        by.extend_from_slice(dataset.target(k));
    }
    (
        Tensor::new(vec![idx.len(), in_len], bx).expect("batch input shape"),
        Tensor::new(vec![idx.len(), out_len], by).expect("batch target shape"),
    )
}

/// Trains a freshly initialized model on the dataset: seeded shuffle each
/// epoch, then clip → decoupled-decay Adam → schedule per step. A
/// non-finite loss or gradient stops training; the returned model holds
/// the last finite parameters.
pub fn train(dataset: &Dataset, spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    if dataset.is_empty() {
        return Err(CoreError::EmptyInput("training dataset".into()));
    }
    if dataset.config.input_len() != spec.input_len()
        || dataset.config.target_len() != spec.output_len()
    {
        return Err(CoreError::ShapeMismatch(format!(
            "dataset samples are {}→{}, model expects {}→{}",
            dataset.config.input_len(),
            dataset.config.target_len(),
            spec.input_len(),
            spec.output_len()
        )));
    }

    let mut model = build_model(spec, cfg.seed)?;
    let mut state = AdamState::new_like(model.param_tensors());
    let n = dataset.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut indices: Vec<usize> = (0..n).collect();

    let mut loss_curve = Vec::new();
    let mut completed_steps = 0usize;
    let mut max_post_clip_norm = 0.0f64;
    let mut diverged_at = None;

    'epochs: for _epoch in 0..cfg.epochs {
        indices.shuffle(&mut shuffle_rng);
        for chunk in indices.chunks(cfg.batch_size) {
            let step = completed_steps;
            let lr = lr_at(step + 1, total_steps, cfg)?;
            let (bx, by) = gather_batch(dataset, chunk);

            let mut tape = Tape::new();
            let input = tape.constant(bx);
            let target = tape.constant(by);
            let pass = model.forward_from(&mut tape, input)?;
            let loss = mse_loss(&mut tape, pass.prediction, target, spec.w)?;
            let loss_val = tape.value(loss).data()[0] as f64;
            if !loss_val.is_finite() {
                diverged_at = Some(step);
                break 'epochs;
            }

            let mut all_grads = tape.backward(loss)?;
            let mut grads = Vec::with_capacity(pass.param_vars.len());
            let mut finite = true;
            for (i, v) in pass.param_vars.iter().enumerate() {
                let g = all_grads
                    .take(*v)
                    .unwrap_or_else(|| Tensor::zeros(model.params()[i].1.shape().to_vec()));
                finite &= g.all_finite();
                grads.push(g);
            }
            if !finite {
                diverged_at = Some(step);
                break 'epochs;
            }

            let pre_clip = clip_global_norm(&mut grads, cfg.clip_norm);
            max_post_clip_norm = max_post_clip_norm.max(pre_clip.min(cfg.clip_norm));

            let mut param_refs: Vec<&mut Tensor> = model.param_tensors_mut().collect();
            adamw_step(&mut param_refs, &grads, &mut state, lr, cfg)?;

            if step % cfg.log_every == 0 || step + 1 == total_steps {
                loss_curve.push(LossPoint {
                    step,
                    lr,
                    loss: loss_val,
                });
            }
            completed_steps += 1;
        }
    }

    Ok(TrainOutcome {
        model,
        state,
        loss_curve,
        total_steps,
        completed_steps,
        max_post_clip_norm,
        diverged_at,
    })
}
