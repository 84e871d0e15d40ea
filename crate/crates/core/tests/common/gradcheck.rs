//! Finite-difference gradient oracle shared by the per-architecture unit
//! checks and the acceptance gate. Analytic gradients come from the 32-bit
//! tape; the reference loss is an independent f64 re-implementation of each
//! forward pass, so central differences (h = 1e-5) carry truncation and
//! rounding noise far below the 1e-3 tolerance.

use qdyn_core::autodiff::{Tape, Tensor};
use qdyn_core::models::{build_model, mse_loss, GruConventionTag, ModelKind, ModelSpec};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const REL_TOL: f64 = 1e-3;
const FD_H: f64 = 1e-5;
/// Smallest |relu preactivation| a seed may have; keeps the central
/// difference on one side of every kink.
const MARGIN: f64 = 1e-3;

mod reference {
    #[derive(Clone, Copy, PartialEq)]
    pub enum Kind {
        Linear,
        Dense,
        Conv,
        GruSingle,
        GruResetAfter,
    }

    #[derive(Clone, Copy)]
    pub struct Net {
        pub kind: Kind,
        pub w: usize,
        pub h: usize,
        pub c: usize,
        pub k: usize,
    }

    pub struct Eval {
        pub loss: f64,
        pub margin: f64,
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn dense(x: &[f64], w: &[f64], b: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
        assert_eq!(x.len(), n_in);
        assert_eq!(w.len(), n_in * n_out);
        assert_eq!(b.len(), n_out);
        let mut y = b.to_vec();
        for (i, &xi) in x.iter().enumerate() {
            for (j, v) in y.iter_mut().enumerate() {
                *v += xi * w[i * n_out + j];
            }
        }
        y
    }

    fn relu(v: &mut [f64], margin: &mut f64) {
        for x in v.iter_mut() {
            *margin = margin.min(x.abs());
            if *x < 0.0 {
                *x = 0.0;
            }
        }
    }

    fn forward_sample(net: &Net, p: &[Vec<f64>], x: &[f64], margin: &mut f64) -> Vec<f64> {
        let (w, h, c, k) = (net.w, net.h, net.c, net.k);
        let wc = w * c;
        let two_w = 2 * w;
        match net.kind {
            Kind::Linear => dense(&x[(h - 1) * wc..], &p[0], &p[1], wc, two_w),
            Kind::Dense => {
                let mut flat = Vec::with_capacity(h * k);
                for t in 0..h {
                    let mut s = dense(&x[t * wc..(t + 1) * wc], &p[0], &p[1], wc, k);
                    relu(&mut s, margin);
                    flat.extend_from_slice(&s);
                }
                let mut m = dense(&flat, &p[2], &p[3], h * k, k);
                relu(&mut m, margin);
                dense(&m, &p[4], &p[5], k, two_w)
            }
            Kind::Conv => {
                let f = k / 4;
                let mut flat = Vec::with_capacity(w * f);
                for j in 0..w {
                    let col: Vec<f64> = (0..h)
                        .flat_map(|t| (0..c).map(move |ch| x[t * wc + j * c + ch]))
                        .collect();
                    let mut fm = dense(&col, &p[0], &p[1], h * c, f);
                    relu(&mut fm, margin);
                    flat.extend_from_slice(&fm);
                }
                let mut m = dense(&flat, &p[2], &p[3], w * f, k);
                relu(&mut m, margin);
                dense(&m, &p[4], &p[5], k, two_w)
            }
            Kind::GruSingle | Kind::GruResetAfter => {
                let reset_after = net.kind == Kind::GruResetAfter;
                // x·W + h·U + b with all of W, U square.
                let lin = |wm: &[f64], um: &[f64], b: &[f64], xin: &[f64], hin: &[f64]| {
                    let mut y = b.to_vec();
                    for i in 0..k {
                        for (j, v) in y.iter_mut().enumerate() {
                            *v += xin[i] * wm[i * k + j] + hin[i] * um[i * k + j];
                        }
                    }
                    y
                };
                let mut hs = vec![0.0f64; k];
                for t in 0..h {
                    let mut u = dense(&x[t * wc..(t + 1) * wc], &p[0], &p[1], wc, k);
                    relu(&mut u, margin);
                    let z: Vec<f64> =
                        lin(&p[2], &p[3], &p[4], &u, &hs).iter().map(|&v| sig(v)).collect();
                    let r: Vec<f64> =
                        lin(&p[5], &p[6], &p[7], &u, &hs).iter().map(|&v| sig(v)).collect();
                    let mut cand = if reset_after {
                        let mut a = p[10].clone();
                        let mut g = p[11].clone();
                        for i in 0..k {
                            for j in 0..k {
                                a[j] += u[i] * p[8][i * k + j];
                                g[j] += hs[i] * p[9][i * k + j];
                            }
                        }
                        (0..k).map(|j| a[j] + r[j] * g[j]).collect::<Vec<f64>>()
                    } else {
                        let rh: Vec<f64> = (0..k).map(|j| r[j] * hs[j]).collect();
                        lin(&p[8], &p[9], &p[10], &u, &rh)
                    };
                    relu(&mut cand, margin);
                    hs = (0..k).map(|j| hs[j] + z[j] * (cand[j] - hs[j])).collect();
                }
                let base = if reset_after { 12 } else { 11 };
                dense(&hs, &p[base], &p[base + 1], k, two_w)
            }
        }
    }

    /// Batch loss 2·mean((pred − target)²) with the per-seed relu margin.
    pub fn loss(net: &Net, p: &[Vec<f64>], inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Eval {
        let mut margin = f64::INFINITY;
        let mut acc = 0.0;
        let mut n = 0usize;
        for (x, y) in inputs.iter().zip(targets) {
            let pred = forward_sample(net, p, x, &mut margin);
            for (a, b) in pred.iter().zip(y) {
                acc += (a - b) * (a - b);
            }
            n += y.len();
        }
        Eval {
            loss: 2.0 * acc / n as f64,
            margin,
        }
    }
}

fn net_for(spec: &ModelSpec) -> reference::Net {
    let kind = match spec.kind {
        ModelKind::Linear => reference::Kind::Linear,
        ModelKind::Dense => reference::Kind::Dense,
        ModelKind::Conv => reference::Kind::Conv,
        ModelKind::Gru => match spec.gru_convention {
            GruConventionTag::SingleBias => reference::Kind::GruSingle,
            GruConventionTag::ResetAfter => reference::Kind::GruResetAfter,
        },
    };
    reference::Net {
        kind,
        w: spec.w,
        h: spec.h,
        c: spec.c,
        k: spec.k,
    }
}

fn rows_f64(t: &Tensor) -> Vec<Vec<f64>> {
    let width = *t.shape().last().unwrap();
    t.data()
        .chunks(width)
        .map(|row| row.iter().map(|&v| v as f64).collect())
        .collect()
}

fn max_normalized_err(analytic: &[f32], fd: &[f64]) -> f64 {
    assert_eq!(analytic.len(), fd.len());
    let scale = analytic
        .iter()
        .map(|v| v.abs() as f64)
        .chain(fd.iter().map(|v| v.abs()))
        .fold(1e-8f64, f64::max);
    analytic
        .iter()
        .zip(fd)
        .map(|(&a, &f)| (a as f64 - f).abs())
        .fold(0.0f64, f64::max)
        / scale
}

/// Indices to probe: all of a small tensor, a fixed-stride subsample of a
/// large one, so full-size architectures stay affordable.
fn probe_indices(len: usize, cap: usize) -> Vec<usize> {
    if len <= cap {
        (0..len).collect()
    } else {
        let stride = len.div_ceil(cap);
        (0..len).step_by(stride).collect()
    }
}

pub struct CheckSummary {
    /// Worst normalized error over every probed coordinate of every tensor.
    pub worst_err: f64,
    /// Parameter tensors compared (input gradients are checked on top).
    pub tensors_checked: usize,
    pub seeds: usize,
}

/// Compares tape gradients against the f64 reference for `want_seeds`
/// accepted seeds (seeds whose relu margin would straddle a kink are
/// redrawn). Errors describe the first coordinate set that misses `REL_TOL`.
pub fn check_architecture(
    spec: &ModelSpec,
    batch: usize,
    want_seeds: usize,
    probe_cap: usize,
) -> Result<CheckSummary, String> {
    let net = net_for(spec);
    let mut accepted = 0usize;
    let mut worst = 0.0f64;
    let mut tensors_checked = 0usize;
    for seed in 0..(10 * want_seeds) as u64 {
        if accepted == want_seeds {
            break;
        }
        let model = build_model(spec, seed).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let bx = Tensor::uniform(vec![batch, spec.input_len()], 1.0, &mut rng);
        let by = Tensor::uniform(vec![batch, spec.output_len()], 1.0, &mut rng);

        let mut params64: Vec<Vec<f64>> = model
            .params()
            .iter()
            .map(|(_, t)| t.data().iter().map(|&v| v as f64).collect())
            .collect();
        let inputs64 = rows_f64(&bx);
        let targets64 = rows_f64(&by);

        let base = reference::loss(&net, &params64, &inputs64, &targets64);
        if base.margin < MARGIN {
            continue;
        }

        let mut tape = Tape::new();
        let input = tape.input(bx.clone());
        let pass = model
            .forward_from(&mut tape, input)
            .map_err(|e| e.to_string())?;
        let target = tape.constant(by.clone());
        let loss =
            mse_loss(&mut tape, pass.prediction, target, spec.w).map_err(|e| e.to_string())?;
        let loss_f32 = tape.value(loss).data()[0] as f64;
        if (loss_f32 - base.loss).abs() > 1e-4 * base.loss.abs().max(1.0) {
            return Err(format!(
                "{:?} seed {seed}: forward disagrees, tape {loss_f32} vs reference {}",
                spec.kind, base.loss
            ));
        }

        let mut grads = tape.backward(loss).map_err(|e| e.to_string())?;

        for (pi, (name, tensor)) in model.params().iter().enumerate() {
            let analytic = grads
                .take(pass.param_vars[pi])
                .unwrap_or_else(|| Tensor::zeros(tensor.shape().to_vec()));
            let probes = probe_indices(tensor.len(), probe_cap);
            let mut sub_analytic = Vec::with_capacity(probes.len());
            let mut sub_fd = Vec::with_capacity(probes.len());
            for &e in &probes {
                let orig = params64[pi][e];
                params64[pi][e] = orig + FD_H;
                let lp = reference::loss(&net, &params64, &inputs64, &targets64).loss;
                params64[pi][e] = orig - FD_H;
                let lm = reference::loss(&net, &params64, &inputs64, &targets64).loss;
                params64[pi][e] = orig;
                sub_analytic.push(analytic.data()[e]);
                sub_fd.push((lp - lm) / (2.0 * FD_H));
            }
            let err = max_normalized_err(&sub_analytic, &sub_fd);
            worst = worst.max(err);
            tensors_checked += 1;
            if err >= REL_TOL {
                return Err(format!(
                    "{:?} parameter {name} seed {seed}: normalized err {err:.3e}",
                    spec.kind
                ));
            }
        }

        let analytic_in = grads.take(input).ok_or("input gradient missing")?;
        let width = spec.input_len();
        let probes = probe_indices(batch * width, probe_cap);
        let mut sub_analytic = Vec::with_capacity(probes.len());
        let mut sub_fd = Vec::with_capacity(probes.len());
        let mut inputs_pert = inputs64.clone();
        for &e in &probes {
            let (row, col) = (e / width, e % width);
            let orig = inputs_pert[row][col];
            inputs_pert[row][col] = orig + FD_H;
            let lp = reference::loss(&net, &params64, &inputs_pert, &targets64).loss;
            inputs_pert[row][col] = orig - FD_H;
            let lm = reference::loss(&net, &params64, &inputs_pert, &targets64).loss;
            inputs_pert[row][col] = orig;
            sub_analytic.push(analytic_in.data()[e]);
            sub_fd.push((lp - lm) / (2.0 * FD_H));
        }
        let err = max_normalized_err(&sub_analytic, &sub_fd);
        worst = worst.max(err);
        if err >= REL_TOL {
            return Err(format!(
                "{:?} input gradient seed {seed}: normalized err {err:.3e}",
                spec.kind
            ));
        }

        accepted += 1;
    }
    if accepted != want_seeds {
        return Err(format!(
            "{:?}: only {accepted} of {want_seeds} seeds had relu margin >= {MARGIN}",
            spec.kind
        ));
    }
    Ok(CheckSummary {
        worst_err: worst,
        tensors_checked,
        seeds: accepted,
    })
}
