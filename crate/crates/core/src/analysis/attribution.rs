//! Gradient attribution: how each input pixel influences the predicted
//! center point, plus structural checks on the resulting maps.

use crate::autodiff::{Tape, Tensor};
use crate::curriculum::Dataset;
use crate::error::{CoreError, Result};
use crate::models::Model;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// Gradients of the predicted center pixel with respect to every input
/// entry, in the input's own [H][W][C] layout. Step index 0 is the oldest
/// history row; the last step is the newest.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    /// ∂Re(prediction at the window center)/∂input.
    pub d_re: Vec<f32>,
    /// ∂Im(prediction at the window center)/∂input.
    pub d_im: Vec<f32>,
}

impl AttributionMap {
    pub fn idx(&self, t: usize, j: usize, ch: usize) -> usize {
        (t * self.w + j) * self.c + ch
    }

    /// Mean |∂Re| + |∂Im| over the window at each history step,
    /// oldest first.
    pub fn step_profile(&self) -> Vec<f64> {
        let per_step = self.w * self.c;
        (0..self.h)
            .map(|t| {
                let span = t * per_step..(t + 1) * per_step;
                let total: f64 = self.d_re[span.clone()]
                    .iter()
                    .zip(&self.d_im[span])
                    .map(|(re, im)| (re.abs() + im.abs()) as f64)
                    .sum();
                total / per_step as f64
            })
            .collect()
    }
}

/// True when the two newest history steps carry more attribution weight
/// than all older steps combined.
pub fn recent_steps_dominate(profile: &[f64]) -> bool {
    if profile.len() < 3 {
        return true;
    }
    let split = profile.len() - 2;
    let newest: f64 = profile[split..].iter().sum();
    let older: f64 = profile[..split].iter().sum();
    newest > older
}

/// Differentiates the model's center-pixel outputs with respect to one
/// input window by running the backward sweep once per output component.
pub fn direct_gradients(model: &Model, input: &[f32]) -> Result<AttributionMap> {
    let spec = model.spec();
    if input.len() != spec.input_len() {
        return Err(CoreError::ShapeMismatch(format!(
            "attribution input has {} values, model expects {}",
            input.len(),
            spec.input_len()
        )));
    }
    let mut tape = Tape::new();
    let x = tape.input(Tensor::new(vec![1, input.len()], input.to_vec())?);
    let pass = model.forward_from(&mut tape, x)?;
    let center = spec.w / 2;
    let re_out = tape.slice(pass.prediction, 2 * center, 1)?;
    let im_out = tape.slice(pass.prediction, 2 * center + 1, 1)?;

    let take = |loss| -> Result<Vec<f32>> {
        let mut grads = tape.backward(loss)?;
        let g = grads.take(x).ok_or_else(|| {
            CoreError::InvalidParameter("center output does not depend on the input".into())
        })?;
        Ok(g.into_data())
    };
    Ok(AttributionMap {
        h: spec.h,
        w: spec.w,
        c: spec.c,
        d_re: take(re_out)?,
        d_im: take(im_out)?,
    })
}

/// Attribution maps averaged over `n` dataset windows drawn without
/// replacement with a seeded generator. Returns the per-entry mean map and
/// the per-entry population standard deviation map.
pub fn averaged_gradients(
    model: &Model,
    dataset: &Dataset,
    n: usize,
    seed: u64,
) -> Result<(AttributionMap, AttributionMap)> {
    if n == 0 {
        return Err(CoreError::EmptyInput("attribution sample draw".into()));
    }
    if n > dataset.len() {
        return Err(CoreError::InvalidParameter(format!(
            "cannot draw {n} windows from a dataset of {}",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = rand::seq::index::sample(&mut rng, dataset.len(), n).into_vec();
    indices.sort_unstable();

    let len = dataset.config.input_len();
    let mut sum_re = vec![0.0f64; len];
    let mut sum_im = vec![0.0f64; len];
    let mut sq_re = vec![0.0f64; len];
    let mut sq_im = vec![0.0f64; len];
    let mut template = None;
    for k in indices {
        let map = direct_gradients(model, dataset.input(k))?;
        for i in 0..len {
            let (re, im) = (map.d_re[i] as f64, map.d_im[i] as f64);
            sum_re[i] += re;
            sum_im[i] += im;
            sq_re[i] += re * re;
            sq_im[i] += im * im;
        }
        template = Some(map);
    }
    let template = template.expect("n >= 1 windows were drawn");

    let nf = n as f64;
    let finish = |sum: &[f64], sq: &[f64]| -> (Vec<f32>, Vec<f32>) {
        let mean: Vec<f32> = sum.iter().map(|&s| (s / nf) as f32).collect();
        let std: Vec<f32> = sum
            .iter()
            .zip(sq)
            .map(|(&s, &q)| {
                let m = s / nf;
                (q / nf - m * m).max(0.0).sqrt() as f32
            })
            .collect();
        (mean, std)
    };
    let (mean_re, std_re) = finish(&sum_re, &sq_re);
    let (mean_im, std_im) = finish(&sum_im, &sq_im);
    let mean = AttributionMap {
        d_re: mean_re,
        d_im: mean_im,
        ..template.clone()
    };
    let std = AttributionMap {
        d_re: std_re,
        d_im: std_im,
        ..template
    };
    Ok((mean, std))
}

/// Window-level diagnostics aggregated over `n` seeded dataset draws:
/// mean symmetry deviations and the fraction of windows whose two newest
/// history steps dominate the attribution.
#[derive(Clone, Debug, Serialize)]
pub struct AttributionSummary {
    pub n_windows: usize,
    pub mean_equal_pair_deviation: f64,
    pub mean_opposite_pair_deviation: f64,
    pub recency_fraction: f64,
    /// Windows whose field-channel gradients vanished, so the symmetry
    /// residual was undefined there.
    pub skipped_symmetry_checks: usize,
}

pub fn summarize_windows(
    model: &Model,
    dataset: &Dataset,
    n: usize,
    seed: u64,
) -> Result<AttributionSummary> {
    if n == 0 {
        return Err(CoreError::EmptyInput("attribution sample draw".into()));
    }
    if n > dataset.len() {
        return Err(CoreError::InvalidParameter(format!(
            "cannot draw {n} windows from a dataset of {}",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = rand::seq::index::sample(&mut rng, dataset.len(), n).into_vec();
    indices.sort_unstable();

    let mut equal_sum = 0.0f64;
    let mut opposite_sum = 0.0f64;
    let mut symmetry_count = 0usize;
    let mut recent_count = 0usize;
    for k in indices {
        let map = direct_gradients(model, dataset.input(k))?;
        if let Ok(report) = cauchy_riemann_check(&map) {
            equal_sum += report.equal_pair_deviation;
            opposite_sum += report.opposite_pair_deviation;
            symmetry_count += 1;
        }
        if recent_steps_dominate(&map.step_profile()) {
            recent_count += 1;
        }
    }
    if symmetry_count == 0 {
        return Err(CoreError::InvalidParameter(
            "every drawn window had vanishing field-channel gradients".into(),
        ));
    }
    Ok(AttributionSummary {
        n_windows: n,
        mean_equal_pair_deviation: equal_sum / symmetry_count as f64,
        mean_opposite_pair_deviation: opposite_sum / symmetry_count as f64,
        recency_fraction: recent_count as f64 / n as f64,
        skipped_symmetry_checks: n - symmetry_count,
    })
}

/// How far the map sits from the two symmetries of a complex-differentiable
/// response: ∂Re/∂Re = ∂Im/∂Im and ∂Re/∂Im = −∂Im/∂Re. Each deviation is
/// the Frobenius norm of the residual over the pair's joint norm, so 0 is
/// an exact match and an unstructured map scores O(1).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CauchyRiemannReport {
    pub equal_pair_deviation: f64,
    pub opposite_pair_deviation: f64,
}

impl CauchyRiemannReport {
    pub fn max(&self) -> f64 {
        self.equal_pair_deviation.max(self.opposite_pair_deviation)
    }
}

pub fn cauchy_riemann_check(map: &AttributionMap) -> Result<CauchyRiemannReport> {
    if map.c < 2 {
        return Err(CoreError::InvalidParameter(
            "attribution map needs Re and Im input channels".into(),
        ));
    }
    let mut diff_sq = 0.0f64;
    let mut equal_sq = 0.0f64;
    let mut sum_sq = 0.0f64;
    let mut opp_sq = 0.0f64;
    for t in 0..map.h {
        for j in 0..map.w {
            let a = map.d_re[map.idx(t, j, 0)] as f64;
            let d = map.d_im[map.idx(t, j, 1)] as f64;
            let b = map.d_re[map.idx(t, j, 1)] as f64;
            let c = map.d_im[map.idx(t, j, 0)] as f64;
            diff_sq += (a - d) * (a - d);
            equal_sq += a * a + d * d;
            sum_sq += (b + c) * (b + c);
            opp_sq += b * b + c * c;
        }
    }
    if equal_sq == 0.0 || opp_sq == 0.0 {
        return Err(CoreError::InvalidParameter(
            "attribution map is identically zero on a field channel".into(),
        ));
    }
    Ok(CauchyRiemannReport {
        equal_pair_deviation: (diff_sq / equal_sq).sqrt(),
        opposite_pair_deviation: (sum_sq / opp_sq).sqrt(),
    })
}

/// One row per input entry: step, signed spatial offset, channel, mean
/// gradients, and optionally their standard deviations.
pub fn write_attribution_csv(
    mean: &AttributionMap,
    std: Option<&AttributionMap>,
    path: &Path,
) -> Result<()> {
    let mut out = String::from("step,offset,channel,d_re,d_im");
    if std.is_some() {
        out.push_str(",std_re,std_im");
    }
    out.push('\n');
    let half = mean.w as isize / 2;
    for t in 0..mean.h {
        for j in 0..mean.w {
            for ch in 0..mean.c {
                let i = mean.idx(t, j, ch);
                out.push_str(&format!(
                    "{},{},{},{:.9e},{:.9e}",
                    t,
                    j as isize - half,
                    ch,
                    mean.d_re[i],
                    mean.d_im[i]
                ));
                if let Some(s) = std {
                    out.push_str(&format!(",{:.9e},{:.9e}", s.d_re[i], s.d_im[i]));
                }
                out.push('\n');
            }
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}
