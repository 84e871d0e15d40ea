//! Scratch experiment for sizing the free-regime desk-scale gate.

use qdyn_core::analysis::free_suite;
use qdyn_core::curriculum::{CurriculumBuilder, WindowConfig};
use qdyn_core::models::{train, ModelKind, ModelSpec, TrainConfig};
use qdyn_core::rollout::{rollout, RolloutConfig};
use qdyn_core::sim::{run_simulation, GaussianPacketSpec, PotentialSpec, SimGrid};

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

    for batch in [128usize, 32] {
        let spec = ModelSpec::new(ModelKind::Linear, window.w, window.h, window.c);
        let cfg = TrainConfig { epochs: 1, batch_size: batch, ..TrainConfig::default() };
        let outcome = train(&ds, &spec, &cfg).unwrap();
        for delta in [4.0f64, 8.0] {
            let rcfg = RolloutConfig {
                delta,
                n_steps: 400,
                seed_steps: window.h,
                ..RolloutConfig::default()
            };
            let mut sum = 0.0f64;
            let mut n = 0usize;
            let mut per_case = Vec::new();
            for (case, traj) in suite.cases.iter().zip(&suite_trajs) {
                let r = rollout(&outcome.model, traj, &window, &rcfg).unwrap();
                sum += r.corr.iter().sum::<f64>();
                n += r.corr.len();
                per_case.push(format!("{} {:.3}", case.name, r.mean_corr()));
            }
            eprintln!(
                "batch {batch} delta {delta}: corr {:.4} | {}",
                sum / n as f64,
                per_case.join(", ")
            );
        }
    }
}
