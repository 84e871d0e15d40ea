//! Workbench acceptance gates. Each test prints one `acceptance NN/12
//! [PASS|FAIL]` line (visible with `--nocapture`) and asserts the same
//! condition, so this target doubles as a checklist and a regression gate.
//!
//! Tests c07 through c11 share one expensive fixture: four architectures
//! trained on the same reduced barrier curriculum (315 configurations, two
//! epochs) and scored on the rectangular-barrier benchmark cases. With the
//! default single test thread the numbered order keeps the cheap gates
//! first; expect the full binary to take on the order of 15 minutes.

mod common;

use qdyn_core::analysis::{
    free_suite, generalization_sweep, potential_suite, run_suite, summarize_windows,
    CaseCategory, SuitePredictor, SweepAxis, SweepBase, TestSuite,
};
use qdyn_core::curriculum::{standard_training_grids, CurriculumBuilder, WindowConfig};
use qdyn_core::models::{
    build_model, train, GruConventionTag, Model, ModelKind, ModelSpec, TrainConfig,
};
use qdyn_core::rollout::{rollout, OraclePredictor, RolloutConfig};
use qdyn_core::sim::{
    run_simulation, run_simulation_with, GaussianPacketSpec, PotentialSpec, PropagationMethod,
    SimGrid,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

fn report(n: usize, what: &str, pass: bool, detail: &str) -> bool {
    println!(
        "acceptance {n:>2}/12 [{}] {what}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn steps_rollout(n_steps: usize, h: usize) -> RolloutConfig {
    RolloutConfig {
        n_steps,
        seed_steps: h,
        ..RolloutConfig::default()
    }
}

#[test]
fn c01_norm_is_conserved_on_fifty_random_training_configurations() {
    let grid = SimGrid::default();
    let (free, barrier) = standard_training_grids();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let mut worst = 0.0f64;
    for i in rand::seq::index::sample(&mut rng, free.len(), 10) {
        let traj = run_simulation(&free[i], &PotentialSpec::Free, &grid).unwrap();
        worst = worst.max(traj.max_norm_drift());
    }
    for i in rand::seq::index::sample(&mut rng, barrier.len(), 40) {
        let (packet, potential) = &barrier[i];
        let traj = run_simulation(packet, potential, &grid).unwrap();
        worst = worst.max(traj.max_norm_drift());
    }
    let pass = worst < 1e-8;
    let detail = format!("max norm drift {worst:.3e} across 50 draws, 500 snapshots each");
    assert!(report(1, "simulator unitarity", pass, &detail), "{detail}");
}

#[test]
fn c02_free_packet_matches_the_closed_form_dispersing_gaussian() {
    let grid = SimGrid::default();
    let packet = GaussianPacketSpec::new(50.0, 2.0, 5.0);
    let traj = run_simulation(&packet, &PotentialSpec::Free, &grid).unwrap();
    let mut min_corr = f64::MAX;
    for (j, frame) in traj.frames().enumerate() {
        let reference =
            common::free_gaussian_frame(&grid, &packet, j as f64 * grid.snapshot_dt());
        min_corr = min_corr.min(common::correlation(frame, &reference));
    }
    let pass = min_corr >= 0.999999;
    let detail = format!("worst snapshot correlation {min_corr:.9} vs analytic form");
    assert!(report(2, "closed-form free packet", pass, &detail), "{detail}");
}

#[test]
fn c03_spectral_and_tridiagonal_routes_agree_on_barrier_cases() {
    let grid = SimGrid::default();
    let e0s = [3.0, 5.0, 7.0];
    let mut min_corr = f64::MAX;
    for height in 1..=10u32 {
        let packet = GaussianPacketSpec::new(30.0, 2.0, e0s[height as usize % 3]);
        let potential = PotentialSpec::rectangular(f64::from(height), 7.0);
        let spectral =
            run_simulation_with(&packet, &potential, &grid, PropagationMethod::Spectral).unwrap();
        let tridiag =
            run_simulation_with(&packet, &potential, &grid, PropagationMethod::Tridiagonal)
                .unwrap();
        let last = grid.n_t - 1;
        min_corr = min_corr.min(common::correlation(spectral.frame(last), tridiag.frame(last)));
    }
    let pass = min_corr >= 0.9999;
    let detail =
        format!("min final-frame correlation {min_corr:.6} across 10 barrier heights");
    assert!(report(3, "independent propagator routes", pass, &detail), "{detail}");
}

#[test]
fn c04_parameter_counts_match_the_published_totals() {
    let count = |kind: ModelKind, c: usize, convention: GruConventionTag| {
        let mut spec = ModelSpec::new(kind, 23, 4, c);
        spec.gru_convention = convention;
        let built = build_model(&spec, 0).unwrap().n_params();
        assert_eq!(built, spec.param_count(), "{kind:?} count formula vs built");
        built
    };
    let single = GruConventionTag::SingleBias;
    let lin3 = count(ModelKind::Linear, 3, single);
    let lin2 = count(ModelKind::Linear, 2, single);
    let den3 = count(ModelKind::Dense, 3, single);
    let den2 = count(ModelKind::Dense, 2, single);
    let conv3 = count(ModelKind::Conv, 3, single);
    let gru3 = count(ModelKind::Gru, 3, single);
    let gru3_ra = count(ModelKind::Gru, 3, GruConventionTag::ResetAfter);
    let pass = lin3 == 3220 && lin2 == 2162 && den3 == 27163 && den2 == 12834;
    let detail = format!(
        "linear {lin3}/{lin2}, dense {den3}/{den2} exact; \
         conv {conv3}, gru {gru3} (single-bias) / {gru3_ra} (reset-after) reported"
    );
    assert!(report(4, "parameter-count reproduction", pass, &detail), "{detail}");
}

#[test]
fn c05_tape_gradients_match_finite_differences_on_every_layer() {
    let t0 = Instant::now();
    let mut specs: Vec<ModelSpec> = [
        ModelKind::Linear,
        ModelKind::Dense,
        ModelKind::Conv,
        ModelKind::Gru,
    ]
    .iter()
    .map(|&kind| ModelSpec::new(kind, 5, 4, 2))
    .collect();
    let mut reset_after = ModelSpec::new(ModelKind::Gru, 5, 4, 2);
    reset_after.gru_convention = GruConventionTag::ResetAfter;
    specs.push(reset_after);

    let mut worst = 0.0f64;
    let mut layers_checked = 0usize;
    for spec in &specs {
        let summary = common::gradcheck::check_architecture(spec, 2, 20, usize::MAX)
            .unwrap_or_else(|e| panic!("{e}"));
        worst = worst.max(summary.worst_err);
        layers_checked += summary.tensors_checked;
    }
    let elapsed = t0.elapsed();
    let pass = worst < common::gradcheck::REL_TOL && elapsed < Duration::from_secs(60);
    let detail = format!(
        "max rel err {worst:.2e}, 32-bit tape vs f64 reference, over {layers_checked} \
         layer tensors plus inputs (5 architectures x 20 seeds) in {elapsed:.1?}"
    );
    assert!(report(5, "gradient checks", pass, &detail), "{detail}");
}

#[test]
fn c06_linear_model_trained_on_free_packets_emulates_the_free_suite() {
    let grid = SimGrid::default();
    let window = WindowConfig {
        c: 2,
        spatial_keep_prob: 0.01,
        ..WindowConfig::default()
    };
    let mut builder = CurriculumBuilder::new(window).unwrap();
    for &x0 in &[10.0, 40.0, 70.0] {
        for &s0 in &[1.0, 2.0, 3.0] {
            for &e0 in &[2.0, 5.0, 8.0] {
                let packet = GaussianPacketSpec::new(x0, s0, e0);
                let traj = run_simulation(&packet, &PotentialSpec::Free, &grid).unwrap();
                builder.add_trajectory(&traj).unwrap();
            }
        }
    }
    let ds = builder.finish().unwrap();
    let spec = ModelSpec::new(ModelKind::Linear, window.w, window.h, window.c);
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let outcome = train(&ds, &spec, &cfg).unwrap();
    assert!(outcome.diverged_at.is_none(), "free training diverged");

    let suite_report = run_suite(
        SuitePredictor::Model(&outcome.model),
        &free_suite(),
        &grid,
        &window,
        &steps_rollout(400, window.h),
    )
    .unwrap();
    let full_length = suite_report
        .cases
        .iter()
        .all(|c| c.error.is_none() && c.scored_steps == 400);
    let pass = suite_report.mean_corr >= 0.95 && full_length;
    let detail = format!(
        "27 packets, {} windows, 1 epoch -> mean correlation {:.4} (mae {:.2e}) \
         over 12 free cases x 400 steps",
        ds.len(),
        suite_report.mean_corr,
        suite_report.mean_mae,
    );
    assert!(report(6, "desk-scale free training", pass, &detail), "{detail}");
}

/// Shared desk-scale barrier study: one curriculum (315 configurations, two
/// epochs), all four architectures trained on it, and per-architecture flat
/// correlation means over the 11 rectangular-barrier cases (400 emulation
/// steps each; steps lost to truncation count as zero correlation).
struct BarrierFixture {
    window: WindowConfig,
    models: Vec<(ModelKind, Model)>,
    corr: Vec<(ModelKind, f64)>,
    mae_scored: Vec<(ModelKind, f64)>,
    n_configs: usize,
    n_samples: usize,
}

impl BarrierFixture {
    fn model(&self, kind: ModelKind) -> &Model {
        &self.models.iter().find(|(k, _)| *k == kind).unwrap().1
    }

    fn corr_of(&self, kind: ModelKind) -> f64 {
        self.corr.iter().find(|(k, _)| *k == kind).unwrap().1
    }

    fn mae_of(&self, kind: ModelKind) -> f64 {
        self.mae_scored.iter().find(|(k, _)| *k == kind).unwrap().1
    }
}

static BARRIER: OnceLock<Result<BarrierFixture, String>> = OnceLock::new();

fn barrier_fixture() -> &'static BarrierFixture {
    BARRIER
        .get_or_init(build_barrier_fixture)
        .as_ref()
        .unwrap_or_else(|e| panic!("shared barrier fixture failed: {e}"))
}

fn context(what: &'static str) -> impl Fn(qdyn_core::CoreError) -> String {
    move |e| format!("{what}: {e}")
}

fn build_barrier_fixture() -> Result<BarrierFixture, String> {
    let train_grid = SimGrid {
        n_t: 300,
        ..SimGrid::default()
    };
    let window = WindowConfig {
        spatial_keep_prob: 0.0015,
        ..WindowConfig::default()
    };
    let mut builder = CurriculumBuilder::new(window).map_err(context("window"))?;
    let mut n_configs = 0usize;
    for &x0 in &[10.0, 40.0, 70.0] {
        for &s0 in &[1.0, 2.0, 3.0] {
            for &e0 in &[1.0, 3.0, 5.0, 7.0, 9.0] {
                for &height in &[1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0] {
                    let packet = GaussianPacketSpec::new(x0, s0, e0);
                    let potential = PotentialSpec::rectangular(height, 7.0);
                    let traj = run_simulation(&packet, &potential, &train_grid)
                        .map_err(context("training simulation"))?;
                    builder
                        .add_trajectory(&traj)
                        .map_err(context("curriculum"))?;
                    n_configs += 1;
                }
            }
        }
    }
    let ds = builder.finish().map_err(context("curriculum"))?;

    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let kinds = [
        ModelKind::Linear,
        ModelKind::Dense,
        ModelKind::Conv,
        ModelKind::Gru,
    ];
    let mut models = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let spec = ModelSpec::new(kind, window.w, window.h, window.c);
        let outcome = train(&ds, &spec, &cfg).map_err(context("training"))?;
        if let Some(step) = outcome.diverged_at {
            return Err(format!("{kind:?} training diverged at step {step}"));
        }
        models.push((kind, outcome.model));
    }

    let eval_grid = SimGrid::default();
    let rcfg = steps_rollout(400, window.h);
    let rect = potential_suite().filtered(CaseCategory::Rect);
    if rect.len() != 11 {
        return Err(format!("expected 11 rectangular cases, found {}", rect.len()));
    }
    let total_slots = (rect.len() * rcfg.n_steps) as f64;
    let mut corr_sum = vec![0.0f64; models.len()];
    let mut mae_sum = vec![(0.0f64, 0usize); models.len()];
    for case in &rect.cases {
        let traj = run_simulation(&case.packet, &case.potential, &eval_grid)
            .map_err(context("benchmark simulation"))?;
        for (mi, (_, model)) in models.iter().enumerate() {
            let result =
                rollout(model, &traj, &window, &rcfg).map_err(context("benchmark rollout"))?;
            corr_sum[mi] += result.corr.iter().sum::<f64>();
            mae_sum[mi].0 += result.mae.iter().sum::<f64>();
            mae_sum[mi].1 += result.mae.len();
        }
    }
    let corr = kinds
        .iter()
        .zip(&corr_sum)
        .map(|(&k, &s)| (k, s / total_slots))
        .collect();
    let mae_scored = kinds
        .iter()
        .zip(&mae_sum)
        .map(|(&k, &(s, n))| (k, s / n.max(1) as f64))
        .collect();
    Ok(BarrierFixture {
        window,
        models,
        corr,
        mae_scored,
        n_configs,
        n_samples: ds.len(),
    })
}

#[test]
fn c07_gru_trained_on_barrier_data_emulates_rectangular_cases() {
    let fix = barrier_fixture();
    let corr = fix.corr_of(ModelKind::Gru);
    let pass = corr >= 0.90;
    let detail = format!(
        "{} configurations, {} windows, 2 epochs -> gru mean correlation {corr:.4} \
         (mae {:.2e}) over 11 rectangular cases x 400 steps",
        fix.n_configs,
        fix.n_samples,
        fix.mae_of(ModelKind::Gru),
    );
    assert!(report(7, "desk-scale barrier training", pass, &detail), "{detail}");
}

#[test]
fn c08_gru_outranks_the_other_architectures_on_barrier_cases() {
    let fix = barrier_fixture();
    let gru = fix.corr_of(ModelKind::Gru);
    let dense = fix.corr_of(ModelKind::Dense);
    let conv = fix.corr_of(ModelKind::Conv);
    let linear = fix.corr_of(ModelKind::Linear);
    let pass = gru > dense && gru > conv && gru > linear;
    let detail = format!(
        "mean correlation gru {gru:.4} vs dense {dense:.4}, conv {conv:.4}, linear {linear:.4}"
    );
    assert!(report(8, "architecture ordering", pass, &detail), "{detail}");
}

#[test]
fn c09_energy_sweep_peaks_inside_the_training_range() {
    let fix = barrier_fixture();
    let values = [0.5, 5.0, 14.0];
    let points = generalization_sweep(
        &[fix.model(ModelKind::Gru).clone()],
        SweepAxis::PacketEnergy,
        &values,
        &SweepBase::default(),
        &SimGrid::default(),
        &fix.window,
        &steps_rollout(400, fix.window.h),
    )
    .unwrap();
    let low = points[0].mean_corr;
    let center = points[1].mean_corr;
    let high = points[2].mean_corr;
    let pass = low.is_finite()
        && center.is_finite()
        && high.is_finite()
        && center - low >= 0.05
        && center - high >= 0.05;
    let detail = format!(
        "correlation at energy 0.5 / 5 / 14 = {low:.4} / {center:.4} / {high:.4} \
         (center margin {:.3} and {:.3})",
        center - low,
        center - high,
    );
    assert!(report(9, "interpolation-shaped generalization", pass, &detail), "{detail}");
}

#[test]
fn c10_gru_holds_up_on_pyramid_and_half_circle_profiles() {
    let fix = barrier_fixture();
    let cases: Vec<_> = potential_suite()
        .cases
        .into_iter()
        .filter(|c| matches!(c.category, CaseCategory::Pyramid | CaseCategory::HalfCircle))
        .collect();
    let suite = TestSuite {
        name: "curved_profiles".into(),
        cases,
    };
    assert_eq!(suite.len(), 4, "curved-profile census");
    let suite_report = run_suite(
        SuitePredictor::Model(fix.model(ModelKind::Gru)),
        &suite,
        &SimGrid::default(),
        &fix.window,
        &steps_rollout(350, fix.window.h),
    )
    .unwrap();
    let full_length = suite_report
        .cases
        .iter()
        .all(|c| c.error.is_none() && c.scored_steps == 350);
    let pass = suite_report.mean_corr >= 0.85 && full_length;
    let detail = format!(
        "mean correlation {:.4} over 2 pyramid + 2 half-circle cases x 350 steps",
        suite_report.mean_corr
    );
    assert!(report(10, "out-of-domain profiles", pass, &detail), "{detail}");
}

#[test]
fn c11_attributions_recover_symmetry_and_recency_structure() {
    let fix = barrier_fixture();
    let grid = SimGrid {
        n_t: 300,
        ..SimGrid::default()
    };
    let window = WindowConfig {
        spatial_keep_prob: 0.02,
        ..fix.window
    };
    let mut builder = CurriculumBuilder::new(window).unwrap();
    for (x0, s0, e0) in [(30.0, 2.0, 5.0), (60.0, 3.0, 3.0), (20.0, 1.5, 7.0)] {
        let packet = GaussianPacketSpec::new(x0, s0, e0);
        let traj = run_simulation(&packet, &PotentialSpec::Free, &grid).unwrap();
        builder.add_trajectory(&traj).unwrap();
    }
    let ds = builder.finish().unwrap();

    let trained = summarize_windows(fix.model(ModelKind::Gru), &ds, 200, 17).unwrap();
    let control_model = build_model(fix.model(ModelKind::Gru).spec(), 0xC0).unwrap();
    let control = summarize_windows(&control_model, &ds, 200, 17).unwrap();

    let pass = trained.mean_equal_pair_deviation <= 0.5 * control.mean_equal_pair_deviation
        && trained.mean_opposite_pair_deviation <= 0.5 * control.mean_opposite_pair_deviation
        && trained.recency_fraction >= 0.80;
    let detail = format!(
        "symmetry deviations {:.3}/{:.3} vs random control {:.3}/{:.3}; \
         newest-two-steps dominance on {:.0}% of 200 free windows",
        trained.mean_equal_pair_deviation,
        trained.mean_opposite_pair_deviation,
        control.mean_equal_pair_deviation,
        control.mean_opposite_pair_deviation,
        trained.recency_fraction * 100.0,
    );
    assert!(report(11, "gradient-attribution structure", pass, &detail), "{detail}");
}

#[test]
fn c12_oracle_rollout_reproduces_truth_for_any_blending_spread() {
    let grid = SimGrid::default();
    let packet = GaussianPacketSpec::new(30.0, 2.0, 5.0);
    let traj = run_simulation(&packet, &PotentialSpec::rectangular(7.0, 7.0), &grid).unwrap();
    let window = WindowConfig::default();
    let mut worst = 0.0f64;
    for &delta in &[2.0, 3.0, 4.0, 5.5, 6.75, 8.0] {
        let cfg = RolloutConfig {
            delta,
            ..steps_rollout(400, window.h)
        };
        let oracle = OraclePredictor {
            traj: &traj,
            window,
        };
        let result = rollout(&oracle, &traj, &window, &cfg).unwrap();
        assert_eq!(result.produced_steps(), 400, "delta {delta} truncated");
        for step in 0..result.produced_steps() {
            let truth = traj.frame(window.h + step);
            for (p, t) in result.frame(step).iter().zip(truth) {
                worst = worst.max((p - t).norm());
            }
        }
    }
    let pass = worst < 1e-6;
    let detail = format!(
        "max pointwise deviation {worst:.3e} across spreads 2 through 8, 400 steps each"
    );
    assert!(report(12, "window reassembly exactness", pass, &detail), "{detail}");
}
