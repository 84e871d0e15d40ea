//! Subcommand implementations. Every run writes a resolved-config snapshot
//! (`<command>.config.toml`) and a manifest (`<command>.run.json`) beside
//! its artifacts in the output directory.

use crate::config::{CaseSet, ResolvedConfig, SuiteChoice, SweepKind};
use anyhow::{bail, Context, Result};
use qdyn_core::analysis::{
    averaged_gradients, default_axis_values, free_suite, full_suite, generalization_sweep,
    hyperparameter_sweep, potential_suite, run_suite, summarize_windows, write_attribution_csv,
    write_hyper_csv, write_sweep_csv, CaseResult, HyperAxis, HyperSweepContext, SuitePredictor,
    SuiteReport, SweepAxis, SweepBase, TestSuite,
};
use qdyn_core::curriculum::{
    read_dataset, read_dataset_manifest, standard_training_grids, write_dataset,
    CurriculumBuilder,
};
use qdyn_core::models::{config_hash, train, Checkpoint, LossPoint, Model, ModelKind};
use qdyn_core::rollout::{rollout, write_rollout};
use qdyn_core::sim::{
    read_trajectory, read_trajectory_manifest, run_simulation, write_trajectory,
    GaussianPacketSpec, PotentialSpec, Trajectory,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};

fn kind_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Linear => "linear",
        ModelKind::Dense => "dense",
        ModelKind::Conv => "conv",
        ModelKind::Gru => "gru",
    }
}

fn write_run_records(cfg: &ResolvedConfig, record: &str, summary: &Value) -> Result<()> {
    fs::create_dir_all(&cfg.output)?;
    let snapshot = toml::to_string_pretty(cfg).context("serializing resolved config")?;
    fs::write(cfg.output.join(format!("{record}.config.toml")), snapshot)?;
    let manifest = json!({
        "command": record,
        "config_hash": config_hash(cfg),
        "config_snapshot": format!("{record}.config.toml"),
        "summary": summary,
    });
    fs::write(
        cfg.output.join(format!("{record}.run.json")),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaseEntry {
    pub name: String,
    pub packet: GaussianPacketSpec,
    pub potential: PotentialSpec,
}

fn suite_entries(suite: TestSuite) -> Vec<CaseEntry> {
    suite
        .cases
        .into_iter()
        .map(|c| CaseEntry {
            name: c.name,
            packet: c.packet,
            potential: c.potential,
        })
        .collect()
}

fn case_list(cfg: &ResolvedConfig) -> Vec<CaseEntry> {
    let mut cases = match cfg.simulate.set {
        CaseSet::TrainingFree => standard_training_grids()
            .0
            .into_iter()
            .enumerate()
            .map(|(i, packet)| CaseEntry {
                name: format!("free_{i:04}"),
                packet,
                potential: PotentialSpec::Free,
            })
            .collect(),
        CaseSet::TrainingBarrier => standard_training_grids()
            .1
            .into_iter()
            .enumerate()
            .map(|(i, (packet, potential))| CaseEntry {
                name: format!("barrier_{i:04}"),
                packet,
                potential,
            })
            .collect(),
        CaseSet::SuiteFree => suite_entries(free_suite()),
        CaseSet::SuitePotential => suite_entries(potential_suite()),
        CaseSet::SuiteFull => suite_entries(full_suite()),
    };
    if let Some(limit) = cfg.simulate.limit {
        cases.truncate(limit);
    }
    cases
}

fn read_case_list(root: &Path) -> Result<Vec<CaseEntry>> {
    let path = root.join("cases.json");
    let bytes = fs::read(&path).with_context(|| {
        format!(
            "no case listing at {} (produce trajectories with `qdyn simulate`)",
            path.display()
        )
    })?;
    serde_json::from_slice(&bytes).with_context(|| format!("corrupt listing {}", path.display()))
}

/// Ground-truth generation. Already simulated cases (matching manifest) are
/// skipped, so an interrupted run picks up where it stopped.
pub fn simulate(cfg: &ResolvedConfig) -> Result<Value> {
    let root = cfg.output.join("trajectories");
    fs::create_dir_all(&root)?;
    let cases = case_list(cfg);
    fs::write(
        root.join("cases.json"),
        serde_json::to_string_pretty(&cases)?,
    )?;

    let pool = worker_pool(cfg.workers)?;
    let outcomes: Vec<Result<bool>> = pool.install(|| {
        cases
            .par_iter()
            .map(|case| simulate_case(cfg, &root, case))
            .collect()
    });
    let mut written = 0usize;
    let mut skipped = 0usize;
    for (case, outcome) in cases.iter().zip(outcomes) {
        if outcome.with_context(|| format!("case {}", case.name))? {
            written += 1;
        } else {
            skipped += 1;
        }
    }
    let summary = json!({
        "cases": cases.len(),
        "written": written,
        "skipped": skipped,
        "directory": root,
    });
    write_run_records(cfg, "simulate", &summary)?;
    Ok(summary)
}

fn simulate_case(cfg: &ResolvedConfig, root: &Path, case: &CaseEntry) -> Result<bool> {
    let dir = root.join(&case.name);
    if let Ok(manifest) = read_trajectory_manifest(&dir) {
        if manifest.grid == cfg.grid
            && manifest.packet == case.packet
            && manifest.potential == case.potential
        {
            return Ok(false);
        }
        bail!(
            "{} already holds a different trajectory; use a fresh output directory",
            dir.display()
        );
    }
    let traj = run_simulation(&case.packet, &case.potential, &cfg.grid)?;
    write_trajectory(&dir, &traj, None)?;
    Ok(true)
}

/// Windowed-dataset distillation from a directory of trajectories.
pub fn curriculum(cfg: &ResolvedConfig, trajectories: Option<&Path>) -> Result<Value> {
    let root = trajectories
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.join("trajectories"));
    let cases = read_case_list(&root)?;
    let mut builder = CurriculumBuilder::new(cfg.window)?;
    for case in &cases {
        let traj = read_trajectory(&root.join(&case.name)).with_context(|| {
            format!(
                "missing trajectory {} (produce it with `qdyn simulate`)",
                case.name
            )
        })?;
        builder.add_trajectory(&traj)?;
    }
    let dataset = builder.finish()?;
    let dir = cfg.output.join("dataset");
    write_dataset(&dir, &dataset)?;
    let summary = json!({
        "trajectories": cases.len(),
        "samples": dataset.len(),
        "input_len": dataset.config.input_len(),
        "directory": dir,
    });
    write_run_records(cfg, "curriculum", &summary)?;
    Ok(summary)
}

fn write_loss_curve(path: &Path, curve: &[LossPoint]) -> Result<()> {
    let mut out = String::from("step,lr,loss\n");
    for p in curve {
        out.push_str(&format!("{},{:.9e},{:.9e}\n", p.step, p.lr, p.loss));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Training. The checkpoint directory is `model-<kind>` under the output
/// root; `record` names the snapshot/manifest pair so chained runs keep one
/// per architecture.
pub fn train_model(cfg: &ResolvedConfig, dataset: Option<&Path>, record: &str) -> Result<Value> {
    let dir = dataset
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.join("dataset"));
    let ds = read_dataset(&dir).with_context(|| {
        format!(
            "no dataset at {} (distill one with `qdyn curriculum`)",
            dir.display()
        )
    })?;
    let spec = cfg.model_spec(&ds.config);
    let outcome = train(&ds, &spec, &cfg.train)?;

    let ckpt_dir = cfg.output.join(format!("model-{}", kind_name(spec.kind)));
    let checkpoint = Checkpoint::new(outcome.model, outcome.state, ds.config, config_hash(cfg));
    checkpoint.save(&ckpt_dir)?;
    write_loss_curve(&ckpt_dir.join("loss_curve.csv"), &outcome.loss_curve)?;

    let summary = json!({
        "kind": kind_name(spec.kind),
        "params": checkpoint.model.n_params(),
        "completed_steps": outcome.completed_steps,
        "total_steps": outcome.total_steps,
        "final_loss": outcome.loss_curve.last().map(|p| p.loss),
        "diverged_at": outcome.diverged_at,
        "checkpoint": ckpt_dir,
    });
    write_run_records(cfg, record, &summary)?;
    if let Some(step) = outcome.diverged_at {
        return Err(qdyn_core::CoreError::Diverged {
            step,
            detail: format!(
                "last finite parameters kept at {}",
                ckpt_dir.display()
            ),
        }
        .into());
    }
    Ok(summary)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| {
        format!(
            "cannot load checkpoint {} (train one with `qdyn train`)",
            path.display()
        )
    })
}

/// Closed-loop emulation of one recorded trajectory.
pub fn rollout_trajectory(
    cfg: &ResolvedConfig,
    checkpoint: &Path,
    trajectory: &Path,
) -> Result<Value> {
    let ckpt = load_checkpoint(checkpoint)?;
    let traj = read_trajectory(trajectory).with_context(|| {
        format!(
            "cannot load trajectory {} (produce one with `qdyn simulate`)",
            trajectory.display()
        )
    })?;
    let rcfg = cfg.rollout_config(&ckpt.window);
    let result = rollout(&ckpt.model, &traj, &ckpt.window, &rcfg)?;
    let dir = cfg.output.join("rollout");
    write_rollout(&dir, &result)?;
    let summary = json!({
        "steps": result.produced_steps(),
        "scored_steps": result.corr.len(),
        "mean_mae": result.mean_mae(),
        "mean_corr": result.mean_corr(),
        "truncated_at": result.truncated_at,
        "directory": dir,
    });
    write_run_records(cfg, "rollout", &summary)?;
    Ok(summary)
}

fn chosen_suite(cfg: &ResolvedConfig) -> TestSuite {
    let mut suite = match cfg.evaluate.suite {
        SuiteChoice::Free => free_suite(),
        SuiteChoice::Potential => potential_suite(),
        SuiteChoice::Full => full_suite(),
    };
    if let Some(limit) = cfg.evaluate.limit {
        suite.cases.truncate(limit);
    }
    suite
}

fn merge_case_results(cases: Vec<CaseResult>) -> SuiteReport {
    let mut sum_mae = 0.0f64;
    let mut sum_corr = 0.0f64;
    let mut steps = 0usize;
    for c in &cases {
        if c.error.is_none() && c.scored_steps > 0 {
            sum_mae += c.mean_mae * c.scored_steps as f64;
            sum_corr += c.mean_corr * c.scored_steps as f64;
            steps += c.scored_steps;
        }
    }
    let (mean_mae, mean_corr) = if steps == 0 {
        (f64::NAN, f64::NAN)
    } else {
        (sum_mae / steps as f64, sum_corr / steps as f64)
    };
    SuiteReport {
        cases,
        mean_mae,
        mean_corr,
    }
}

fn run_suite_parallel(
    model: Option<&Model>,
    suite: &TestSuite,
    cfg: &ResolvedConfig,
    window: &qdyn_core::curriculum::WindowConfig,
) -> Result<SuiteReport> {
    let rcfg = cfg.rollout_config(window);
    let pool = worker_pool(cfg.workers)?;
    let cases: Vec<CaseResult> = pool.install(|| {
        suite
            .cases
            .par_iter()
            .map(|case| {
                let single = TestSuite {
                    name: case.name.clone(),
                    cases: vec![case.clone()],
                };
                let predictor = match model {
                    Some(m) => SuitePredictor::Model(m),
                    None => SuitePredictor::Oracle,
                };
                match run_suite(predictor, &single, &cfg.grid, window, &rcfg) {
                    Ok(mut report) => report.cases.remove(0),
                    Err(err) => CaseResult {
                        name: case.name.clone(),
                        category: case.category,
                        steps: 0,
                        scored_steps: 0,
                        mean_mae: f64::NAN,
                        mean_corr: f64::NAN,
                        final_corr: f64::NAN,
                        truncated_at: None,
                        error: Some(err.to_string()),
                    },
                }
            })
            .collect()
    });
    Ok(merge_case_results(cases))
}

/// Benchmark-suite scoring for a checkpoint, or for the simulator itself
/// when the oracle flag is set. `record` names the artifact subdirectory
/// and manifest pair.
pub fn evaluate_suite(
    cfg: &ResolvedConfig,
    checkpoint: Option<&Path>,
    record: &str,
) -> Result<Value> {
    let suite = chosen_suite(cfg);
    let (window, model) = if cfg.evaluate.oracle {
        (cfg.window, None)
    } else {
        let path = checkpoint.ok_or_else(|| {
            anyhow::anyhow!(
                "evaluate needs --checkpoint <dir> (train one with `qdyn train`) or --oracle"
            )
        })?;
        let ckpt = load_checkpoint(path)?;
        (ckpt.window, Some(ckpt.model))
    };
    let report = run_suite_parallel(model.as_ref(), &suite, cfg, &window)?;
    let dir = cfg.output.join(record);
    fs::create_dir_all(&dir)?;
    report.write_csv(&dir.join("suite.csv"))?;
    let summary = json!({
        "suite": suite.name,
        "oracle": cfg.evaluate.oracle,
        "cases": suite.len(),
        "failed": report.n_failed(),
        "mean_mae": report.mean_mae,
        "mean_corr": report.mean_corr,
        "directory": dir,
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    write_run_records(cfg, record, &summary)?;
    Ok(summary)
}

fn parse_phys_axis(s: &str) -> Result<SweepAxis> {
    Ok(match s {
        "s0" | "spread" | "packet_spread" => SweepAxis::PacketSpread,
        "e0" | "energy" | "packet_energy" => SweepAxis::PacketEnergy,
        "w_b" | "barrier-width" | "barrier_width" => SweepAxis::BarrierWidth,
        "h_b" | "barrier-height" | "barrier_height" => SweepAxis::BarrierHeight,
        other => bail!(
            "unknown generalization axis {other:?} (expected s0, e0, barrier-width, or barrier-height)"
        ),
    })
}

fn parse_hyper_axis(s: &str) -> Result<HyperAxis> {
    Ok(match s {
        "h" | "history" => HyperAxis::History,
        "w" | "width" => HyperAxis::Width,
        "k" | "hidden" => HyperAxis::Hidden,
        other => bail!("unknown hyper axis {other:?} (expected h, w, or k)"),
    })
}

/// Generalization sweeps over physics parameters, or hyper-parameter scans
/// that retrain per point. Values are computed per axis point in parallel.
pub fn sweep(
    cfg: &ResolvedConfig,
    checkpoints: &[PathBuf],
    trajectories: Option<&Path>,
) -> Result<Value> {
    let dir = cfg.output.join("sweep");
    fs::create_dir_all(&dir)?;
    let summary = match cfg.sweep.kind {
        SweepKind::Generalization => {
            if checkpoints.is_empty() {
                bail!("generalization sweep needs at least one --checkpoint (train one with `qdyn train`)");
            }
            let ckpts: Vec<Checkpoint> = checkpoints
                .iter()
                .map(|p| load_checkpoint(p))
                .collect::<Result<_>>()?;
            let window = ckpts[0].window;
            if ckpts.iter().any(|c| c.window != window) {
                bail!("checkpoints disagree on window layout; sweep them separately");
            }
            let models: Vec<Model> = ckpts.into_iter().map(|c| c.model).collect();
            let axis = parse_phys_axis(&cfg.sweep.axis)?;
            let values = cfg
                .sweep
                .values
                .clone()
                .unwrap_or_else(|| default_axis_values(axis));
            let base = SweepBase {
                packet: GaussianPacketSpec::new(
                    cfg.sweep.base_x0,
                    cfg.sweep.base_s0,
                    cfg.sweep.base_e0,
                ),
                barrier_height: cfg.sweep.base_height,
                barrier_width: cfg.sweep.base_width,
            };
            let rcfg = cfg.rollout_config(&window);
            let pool = worker_pool(cfg.workers)?;
            let points = pool.install(|| {
                values
                    .par_iter()
                    .map(|&v| {
                        generalization_sweep(
                            &models,
                            axis,
                            &[v],
                            &base,
                            &cfg.grid,
                            &window,
                            &rcfg,
                        )
                        .map(|mut pts| pts.remove(0))
                    })
                    .collect::<qdyn_core::Result<Vec<_>>>()
            })?;
            let csv = dir.join("generalization.csv");
            write_sweep_csv(&points, &csv)?;
            json!({
                "kind": "generalization",
                "axis": cfg.sweep.axis,
                "points": points.len(),
                "models": models.len(),
                "csv": csv,
            })
        }
        SweepKind::Hyper => {
            let root = trajectories
                .map(Path::to_path_buf)
                .unwrap_or_else(|| cfg.output.join("trajectories"));
            let cases = read_case_list(&root)?;
            let trajs: Vec<Trajectory> = cases
                .iter()
                .map(|c| {
                    read_trajectory(&root.join(&c.name)).with_context(|| {
                        format!(
                            "missing trajectory {} (produce it with `qdyn simulate`)",
                            c.name
                        )
                    })
                })
                .collect::<Result<_>>()?;
            let axis = parse_hyper_axis(&cfg.sweep.axis)?;
            let raw = cfg.sweep.values.clone().ok_or_else(|| {
                anyhow::anyhow!("hyper sweep needs explicit --values (integers for h, w, or k)")
            })?;
            let values: Vec<usize> = raw
                .iter()
                .map(|&v| {
                    if v.fract() == 0.0 && v >= 1.0 {
                        Ok(v as usize)
                    } else {
                        bail!("hyper axis values must be positive integers, got {v}")
                    }
                })
                .collect::<Result<_>>()?;
            let suite = chosen_suite(cfg);
            let ctx = HyperSweepContext {
                trajs: &trajs,
                base_window: cfg.window,
                base_spec: cfg.model_spec(&cfg.window),
                train: cfg.train.clone(),
                suite: &suite,
                grid: cfg.grid,
                rollout: cfg.rollout_config(&cfg.window),
            };
            let pool = worker_pool(cfg.workers)?;
            let points = pool.install(|| {
                values
                    .par_iter()
                    .map(|&v| {
                        hyperparameter_sweep(&ctx, axis, &[v], cfg.sweep.n_seeds)
                            .map(|mut pts| pts.remove(0))
                    })
                    .collect::<qdyn_core::Result<Vec<_>>>()
            })?;
            let csv = dir.join("hyper.csv");
            write_hyper_csv(&points, &csv)?;
            json!({
                "kind": "hyper",
                "axis": cfg.sweep.axis,
                "points": points.len(),
                "n_seeds": cfg.sweep.n_seeds,
                "csv": csv,
            })
        }
    };
    write_run_records(cfg, "sweep", &summary)?;
    Ok(summary)
}

/// Attribution maps and symmetry/recency diagnostics for a checkpoint.
pub fn interpret(cfg: &ResolvedConfig, checkpoint: &Path, dataset: Option<&Path>) -> Result<Value> {
    let ckpt = load_checkpoint(checkpoint)?;
    let dir = dataset
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.join("dataset"));
    let ds = read_dataset(&dir).with_context(|| {
        format!(
            "no dataset at {} (distill one with `qdyn curriculum`)",
            dir.display()
        )
    })?;
    let n = cfg.interpret.n_windows.min(ds.len());
    let (mean, std) = averaged_gradients(&ckpt.model, &ds, n, cfg.seed)?;
    let window_stats = summarize_windows(&ckpt.model, &ds, n, cfg.seed)?;

    let out = cfg.output.join("interpret");
    fs::create_dir_all(&out)?;
    write_attribution_csv(&mean, Some(&std), &out.join("attribution.csv"))?;
    let summary = json!({
        "windows": serde_json::to_value(&window_stats)?,
        "step_profile": mean.step_profile(),
        "directory": out,
    });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    write_run_records(cfg, "interpret", &summary)?;
    Ok(summary)
}

/// End-to-end pipelines. `table1` regenerates the architecture comparison:
/// simulate, distill, train all four kinds on the same dataset, score each
/// on the configured suite, and tabulate parameters and accuracy.
pub fn reproduce(cfg: &ResolvedConfig, target: &str) -> Result<Value> {
    match target {
        "table1" => reproduce_table1(cfg),
        other => bail!("unknown reproduce target {other:?} (available: table1)"),
    }
}

fn reproduce_table1(cfg: &ResolvedConfig) -> Result<Value> {
    simulate(cfg)?;
    curriculum(cfg, None)?;
    let mut rows = Vec::new();
    for kind in [
        ModelKind::Linear,
        ModelKind::Dense,
        ModelKind::Conv,
        ModelKind::Gru,
    ] {
        let name = kind_name(kind);
        let mut sub = cfg.clone();
        sub.model.kind = kind;
        let trained = train_model(&sub, None, &format!("train-{name}"))?;
        let ckpt_dir = cfg.output.join(format!("model-{name}"));
        let scored = evaluate_suite(&sub, Some(&ckpt_dir), &format!("evaluate-{name}"))?;
        rows.push(json!({
            "model": name,
            "params": trained["params"],
            "mean_mae": scored["mean_mae"],
            "mean_corr": scored["mean_corr"],
        }));
    }

    let mut csv = String::from("model,params,mean_mae,mean_corr\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{:.9e},{:.9}\n",
            row["model"].as_str().unwrap_or(""),
            row["params"],
            row["mean_mae"].as_f64().unwrap_or(f64::NAN),
            row["mean_corr"].as_f64().unwrap_or(f64::NAN),
        ));
    }
    let table = cfg.output.join("table1.csv");
    fs::write(&table, csv)?;
    let summary = json!({"target": "table1", "rows": rows, "csv": table});
    write_run_records(cfg, "reproduce", &summary)?;
    Ok(summary)
}

/// Summarizes an artifact directory: checkpoint, dataset, or trajectory.
pub fn inspect(path: &Path) -> Result<Value> {
    if path.join("params.json").exists() {
        let ckpt = load_checkpoint(path)?;
        let spec = *ckpt.model.spec();
        return Ok(json!({
            "artifact": "checkpoint",
            "kind": kind_name(spec.kind),
            "params": ckpt.model.n_params(),
            "spec": spec,
            "window": ckpt.window,
            "step": ckpt.step,
            "config_hash": ckpt.config_hash,
        }));
    }
    if path.join("samples.f32").exists() {
        let manifest = read_dataset_manifest(path)?;
        return Ok(json!({
            "artifact": "dataset",
            "samples": manifest.n_samples,
            "input_len": manifest.input_len,
            "target_len": manifest.target_len,
            "window": manifest.config,
            "trajectories": manifest.provenance.len(),
        }));
    }
    if path.join("psi_re.f32").exists() {
        let manifest = read_trajectory_manifest(path)?;
        let traj = read_trajectory(path)?;
        return Ok(json!({
            "artifact": "trajectory",
            "grid": manifest.grid,
            "packet": manifest.packet,
            "potential": manifest.potential,
            "max_norm_drift": traj.max_norm_drift(),
        }));
    }
    bail!(
        "{} is not a checkpoint, dataset, or trajectory directory",
        path.display()
    );
}
