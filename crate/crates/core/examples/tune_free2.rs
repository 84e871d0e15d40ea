//! Scratch diagnostics: effective transfer function of the trained linear
//! stencil, and the exact f64 least-squares optimum of the same window
//! regression evaluated on the free suite.

use num_complex::Complex64;
use qdyn_core::analysis::free_suite;
use qdyn_core::autodiff::Tensor;
use qdyn_core::curriculum::{CurriculumBuilder, WindowConfig};
use qdyn_core::models::{build_model, train, Model, ModelKind, ModelSpec, TrainConfig};
use qdyn_core::rollout::{predict_step, rollout, RolloutConfig};
use qdyn_core::sim::{run_simulation, GaussianPacketSpec, PotentialSpec, SimGrid};
use std::collections::VecDeque;

/// Gain |T(k)| and phase error of one emulation step on plane waves; the
/// stencil is circulant at stride 1 so plane waves are its eigenvectors.
fn transfer_probe(model: &Model, window: &WindowConfig, grid: &SimGrid, label: &str) {
    let n_x = grid.n_x;
    let v_norm = vec![0.0f32; n_x];
    let cfg = RolloutConfig { n_steps: 1, seed_steps: window.h, ..RolloutConfig::default() };
    let dt = grid.snapshot_dt();
    let mut worst_gain = (0.0f64, 0.0f64);
    let mut rows = Vec::new();
    for m in (0..=n_x / 2).step_by(4) {
        for sign in [1.0f64, -1.0] {
            if m == 0 && sign < 0.0 {
                continue;
            }
            let kk = sign * 2.0 * std::f64::consts::PI * m as f64 / grid.l_x;
            let omega = 0.5 * kk * kk;
            let frames: VecDeque<Vec<Complex64>> = (0..window.h)
                .map(|j| {
                    let t = j as f64 * dt;
                    (0..n_x)
                        .map(|i| Complex64::from_polar(0.1, kk * grid.x(i) - omega * t))
                        .collect()
                })
                .collect();
            let next = predict_step(model, &frames, &v_norm, window, &cfg, window.h).unwrap();
            let project = |field: &[Complex64]| {
                field
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * Complex64::from_polar(1.0, -kk * grid.x(i)))
                    .sum::<Complex64>()
            };
            let t_eff = project(&next) / project(frames.back().unwrap());
            let gain = t_eff.norm();
            let phase_err = (t_eff * Complex64::from_polar(1.0, omega * dt)).arg();
            if gain > worst_gain.0 {
                worst_gain = (gain, kk);
            }
            if gain > 1.001 {
                rows.push(format!("k {kk:+.2} gain {gain:.4} dphase {phase_err:+.3}"));
            }
        }
    }
    eprintln!(
        "{label}: worst gain {:.4} at k {:+.2}; unstable modes: {}",
        worst_gain.0,
        worst_gain.1,
        if rows.is_empty() { "none".into() } else { rows.join(" | ") }
    );
}

fn solve_normal_equations(xtx: &mut [f64], xty: &mut [f64], n: usize, m: usize) {
    // Gaussian elimination with partial pivoting on [xtx | xty].
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if xtx[r * n + col].abs() > xtx[piv * n + col].abs() {
                piv = r;
            }
        }
        if piv != col {
            for c in 0..n {
                xtx.swap(col * n + c, piv * n + c);
            }
            for c in 0..m {
                xty.swap(col * m + c, piv * m + c);
            }
        }
        let d = xtx[col * n + col];
        for r in 0..n {
            if r == col || xtx[r * n + col] == 0.0 {
                continue;
            }
            let f = xtx[r * n + col] / d;
            for c in col..n {
                xtx[r * n + c] -= f * xtx[col * n + c];
            }
            for c in 0..m {
                xty[r * m + c] -= f * xty[col * m + c];
            }
        }
    }
    for r in 0..n {
        let d = xtx[r * n + r];
        for c in 0..m {
            xty[r * m + c] /= d;
        }
    }
}

fn main() {
    let grid = SimGrid::default();
    let window = WindowConfig {
        c: 2,
        spatial_keep_prob: 0.1,
        ..WindowConfig::default()
    };
    let suite = free_suite();
    let suite_trajs: Vec<_> = suite
        .cases
        .iter()
        .map(|case| run_simulation(&case.packet, &case.potential, &grid).unwrap())
        .collect();
    eprintln!("suite cached");

    let x0s = [10.0, 40.0, 70.0];
    let mut builder = CurriculumBuilder::new(window).unwrap();
    let mut i = 0usize;
    for &s0 in &[1.0, 2.0, 4.0] {
        for e0 in 1..=9 {
            let packet = GaussianPacketSpec::new(x0s[i % 3], s0, f64::from(e0));
            let traj = run_simulation(&packet, &PotentialSpec::Free, &grid).unwrap();
            builder.add_trajectory(&traj).unwrap();
            i += 1;
        }
    }
    let ds = builder.finish().unwrap();
    eprintln!("{} windows", ds.len());

    let spec = ModelSpec::new(ModelKind::Linear, window.w, window.h, window.c);

    // Exact least squares in f64 over the same samples (with bias column).
    let d_in = window.w * window.c;
    let d_out = 2 * window.w;
    let n = d_in + 1;
    let mut xtx = vec![0.0f64; n * n];
    let mut xty = vec![0.0f64; n * d_out];
    let newest = (window.h - 1) * d_in;
    for s in 0..ds.len() {
        let (input, target) = ds.sample(s);
        let x: Vec<f64> = input[newest..newest + d_in]
            .iter()
            .map(|&v| f64::from(v))
            .chain(std::iter::once(1.0))
            .collect();
        for a in 0..n {
            let xa = x[a];
            if xa == 0.0 {
                continue;
            }
            for b in a..n {
                xtx[a * n + b] += xa * x[b];
            }
            for (c, &t) in target.iter().enumerate() {
                xty[a * d_out + c] += xa * f64::from(t);
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            xtx[a * n + b] = xtx[b * n + a];
        }
    }
    solve_normal_equations(&mut xtx, &mut xty, n, d_out);

    let template = build_model(&spec, 0).unwrap();
    let mut parts = template.params().to_vec();
    eprintln!(
        "param layout: {:?}",
        parts
            .iter()
            .map(|(name, t)| format!("{name} {:?}", t.shape()))
            .collect::<Vec<_>>()
    );
    {
        let w_data = parts[0].1.data_mut();
        for r in 0..d_in {
            for c in 0..d_out {
                w_data[r * d_out + c] = xty[r * d_out + c] as f32;
            }
        }
    }
    {
        let b_data = parts[1].1.data_mut();
        for c in 0..d_out {
            b_data[c] = xty[d_in * d_out + c] as f32;
        }
    }
    let exact = Model::from_parts(spec, parts).unwrap();

    let trained = train(&ds, &spec, &TrainConfig { epochs: 1, ..TrainConfig::default() })
        .unwrap()
        .model;

    let rcfg = RolloutConfig { n_steps: 400, seed_steps: window.h, ..RolloutConfig::default() };
    for (label, model) in [("exact-ls", &exact), ("adamw", &trained)] {
        let mut sum = 0.0f64;
        let mut count = 0usize;
        let mut per_case = Vec::new();
        for (case, traj) in suite.cases.iter().zip(&suite_trajs) {
            let r = rollout(model, traj, &window, &rcfg).unwrap();
            sum += r.corr.iter().sum::<f64>();
            count += r.corr.len();
            per_case.push(format!("{} {:.3}", case.name, r.mean_corr()));
        }
        eprintln!("{label}: corr {:.4} | {}", sum / count as f64, per_case.join(", "));
        transfer_probe(model, &window, &grid, label);
    }
}
