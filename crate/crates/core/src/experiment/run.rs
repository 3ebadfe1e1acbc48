use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::submodels::instantiate_submodels;
use crate::dynamics::{estimate_lipschitz, explicit_step, Volumes};
use crate::engine::{simulate, train, CouplingMatrix, NudgeMode, SimulationRun, SubModelEnsemble, TrainingConfig, TrainingReport};
use crate::error::{Error, Result};
use crate::field::{GridSpec, State};
use crate::ground_truth::{error_metrics, generate_gt, sign_changes, ErrorPoint, GroundTruth};
use crate::io::{fmt_f64, CsvTable, KvDocument};
use crate::theory::{contraction_csv, training_contraction, ContractionReport, Tolerances};
use crate::tumor::{stability_monitor, ModelState, StabilityStatus, TumorParams, TumorSystem};

pub const COUPLED_VARIABLE: &str = "b";

/// Summary of one experiment; the full record is on disk.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub submodels: Vec<TumorParams>,
    pub initial_coupling: CouplingMatrix,
    pub final_coupling: CouplingMatrix,
    pub converged: bool,
    pub epochs_used: usize,
    /// `max |ΔC|` over the last completed epoch.
    pub last_delta: f64,
    pub blow_up: Option<String>,
    pub lipschitz_max: f64,
    /// Volume difference `GT − F_S` per step of the trained prediction run.
    pub volume_difference: Vec<f64>,
    pub sign_changes: usize,
    /// Mean `|GT − F_S|` total-volume error over steps `1..=M`.
    pub mean_volume_error_before: f64,
    pub mean_volume_error_after: f64,
    pub final_l2_before: f64,
    pub final_l2_after: f64,
    pub contraction: Vec<ContractionReport>,
}

fn coupling_headers(n: usize, off_diagonal_only: bool) -> Vec<String> {
    let mut h = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if !(off_diagonal_only && i == j) {
                h.push(format!("C_{}_{}", i + 1, j + 1));
            }
        }
    }
    h
}

/// Per-step record of a training run.
pub fn training_csv(report: &TrainingReport, n: usize) -> CsvTable {
    let mut header = vec!["epoch".to_string(), "step".to_string()];
    header.extend(coupling_headers(n, false));
    header.extend(
        ["l2_error", "gt_total", "supermodel_total", "total", "proliferating", "quiescent"]
            .map(String::from),
    );
    let mut t = CsvTable::new(header);
    for s in &report.steps {
        let mut vals = s.coupling.clone();
        vals.extend([s.error, s.gt_total, s.supermodel_total]);
        let v = s.volumes.unwrap_or(Volumes {
            total: f64::NAN,
            proliferating: f64::NAN,
            quiescent: f64::NAN,
        });
        vals.extend([v.total, v.proliferating, v.quiescent]);
        t.push_row(&[s.epoch, s.step], &vals);
    }
    t
}

/// Coupling coefficients at the end of every epoch.
pub fn coupling_csv(initial: &CouplingMatrix, report: &TrainingReport) -> CsvTable {
    let n = initial.n();
    let mut header = vec!["epoch".to_string()];
    header.extend(coupling_headers(n, true));
    header.push("max_delta".into());
    let mut t = CsvTable::new(header);
    let mut prev = initial;
    let mut row = |label: usize, c: &CouplingMatrix, delta: f64| {
        let mut vals: Vec<f64> = c.off_diagonal().map(|(_, _, v)| v).collect();
        vals.push(delta);
        t.push_row(&[label], &vals);
    };
    row(0, initial, 0.0);
    for (k, c) in report.c_history.iter().enumerate() {
        row(k + 1, c, c.max_abs_diff(prev));
        prev = c;
    }
    t
}

fn volumes_csv(gt: &GroundTruth<TumorParams>, run: &SimulationRun<ModelState>, dt: f64) -> CsvTable {
    let n = run.member_volumes.first().map_or(0, Vec::len);
    let mut header: Vec<String> = [
        "step",
        "t",
        "gt_total",
        "gt_proliferating",
        "gt_quiescent",
        "supermodel_total",
        "supermodel_proliferating",
        "supermodel_quiescent",
    ]
    .map(String::from)
    .to_vec();
    for i in 1..=n {
        header.extend(["total", "proliferating", "quiescent"].map(|s| format!("m{i}_{s}")));
    }
    let mut t = CsvTable::new(header);
    for (step, members) in run.member_volumes.iter().enumerate() {
        let g = gt.volumes[step];
        let s = Volumes::mean(members);
        let mut cells = vec![step.to_string(), fmt_f64(step as f64 * dt)];
        for v in [g.total, g.proliferating, g.quiescent, s.total, s.proliferating, s.quiescent] {
            cells.push(fmt_f64(v));
        }
        for m in members {
            cells.extend([m.total, m.proliferating, m.quiescent].map(fmt_f64));
        }
        t.push_cells(&cells);
    }
    t
}

fn before_after_csv(before: &[ErrorPoint], after: &[ErrorPoint], dt: f64) -> CsvTable {
    let mut t = CsvTable::new([
        "step",
        "t",
        "l2_before",
        "l2_after",
        "volume_difference_before",
        "volume_difference_after",
    ]);
    for (b, a) in before.iter().zip(after) {
        t.push_cells(&[
            b.step.to_string(),
            fmt_f64(b.step as f64 * dt),
            fmt_f64(b.l2),
            fmt_f64(a.l2),
            fmt_f64(b.volume_difference),
            fmt_f64(a.volume_difference),
        ]);
    }
    t
}

fn mean_abs_after_start(points: &[ErrorPoint]) -> f64 {
    let tail = &points[1.min(points.len())..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(|p| p.volume_difference.abs()).sum::<f64>() / tail.len() as f64
}

fn submodels_csv(params: &[TumorParams]) -> CsvTable {
    let mut header = vec!["member".to_string()];
    header.extend(TumorParams::NAMES.map(String::from));
    let mut t = CsvTable::new(header);
    for (i, p) in params.iter().enumerate() {
        t.push_row(&[i + 1], &p.to_array());
    }
    t
}

fn write_manifest(cfg: &ExperimentConfig, outcome: &[(&str, String)], dir: &Path) -> Result<()> {
    let mut doc = cfg.to_doc();
    for (k, v) in outcome {
        doc.set(format!("outcome.{k}"), v.clone());
    }
    doc.write(&dir.join("manifest.txt"))
}

fn build_ensemble(cfg: &ExperimentConfig, params: Vec<TumorParams>) -> Result<SubModelEnsemble<TumorSystem>> {
    let system = TumorSystem::new(cfg.grid);
    let initial = cfg.initial.build(cfg.grid, &cfg.reference);
    let mode = if cfg.exclude_self_in_nudge {
        NudgeMode::ExcludeSelf
    } else {
        NudgeMode::AllMembers
    };
    Ok(SubModelEnsemble::new(system, params, initial, COUPLED_VARIABLE)?.with_nudge_mode(mode))
}

/// Ground truth from the reference parameters and the configured initial
/// condition.
pub fn experiment_ground_truth(cfg: &ExperimentConfig) -> Result<GroundTruth<TumorParams>> {
    let system = TumorSystem::new(cfg.grid);
    let initial = cfg.initial.build(cfg.grid, &cfg.reference);
    Ok(generate_gt(
        &system,
        &cfg.reference,
        &initial,
        COUPLED_VARIABLE,
        cfg.dt,
        cfg.steps,
        cfg.keep_every,
    )?
    .with_grid(cfg.grid))
}

/// Everything the training half of an experiment produces.
#[derive(Clone, Debug)]
pub struct TrainingStage {
    pub gt: GroundTruth<TumorParams>,
    pub ensemble: SubModelEnsemble<TumorSystem>,
    pub submodels: Vec<TumorParams>,
    pub initial_coupling: CouplingMatrix,
    /// Last completed epoch's coefficients when training blew up.
    pub final_coupling: CouplingMatrix,
    pub report: TrainingReport,
    pub blow_up: Option<String>,
    pub lipschitz_max: f64,
    pub contraction: Vec<ContractionReport>,
}

/// Prediction-mode comparison of the untrained and trained supermodels.
#[derive(Clone, Debug, Default)]
pub struct PredictionStage {
    /// Volume difference `GT − F_S` per step of the trained run.
    pub volume_difference: Vec<f64>,
    pub sign_changes: usize,
    /// Mean `|GT − F_S|` total-volume error over steps `1..=M`.
    pub mean_volume_error_before: f64,
    pub mean_volume_error_after: f64,
    pub final_l2_before: f64,
    pub final_l2_after: f64,
}

/// Reads a coupling matrix written by [`write_coupling`].
pub fn read_coupling(path: &Path) -> Result<CouplingMatrix> {
    let doc = KvDocument::read(path)?;
    let loc = path.display().to_string();
    let get = |k: &str| {
        doc.get(&format!("coupling.{k}"))
            .ok_or_else(|| Error::parse(&loc, format!("missing coupling.{k}")))
    };
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|e| Error::parse(&loc, format!("coupling.{k}: {e}"))) };
    let n: usize = get("n")?.parse().map_err(|e| Error::parse(&loc, format!("coupling.n: {e}")))?;
    let entries = get("entries")?
        .split_whitespace()
        .map(|v| v.parse().map_err(|e| Error::parse(&loc, format!("coupling.entries: {e}"))))
        .collect::<Result<Vec<f64>>>()?;
    CouplingMatrix::from_entries(n, entries, num("k")?, num("a")?, num("c_min")?, num("c_max")?)
}

pub fn write_coupling(cm: &CouplingMatrix, path: &Path) -> Result<()> {
    let mut d = KvDocument::default();
    d.set("coupling.n", cm.n().to_string());
    d.set("coupling.k", fmt_f64(cm.k_nudge));
    d.set("coupling.a", fmt_f64(cm.a_rate));
    d.set("coupling.c_min", fmt_f64(cm.c_min));
    d.set("coupling.c_max", fmt_f64(cm.c_max));
    d.set(
        "coupling.entries",
        cm.entries().iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" "),
    );
    d.write(path)
}

/// Ground truth, sub-models, ensemble and initial coefficients for `cfg`.
/// Ground truth, member parameters, ensemble and initial coefficients.
pub type Prepared = (GroundTruth<TumorParams>, Vec<TumorParams>, SubModelEnsemble<TumorSystem>, CouplingMatrix);

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let gt = experiment_ground_truth(cfg)?;
    let params = instantiate_submodels(&cfg.reference, cfg, cfg.seed)?;
    let ens = build_ensemble(cfg, params.clone())?;
    let cm0 = CouplingMatrix::uniform(cfg.n, cfg.c_init, cfg.k_nudge, cfg.a_rate, cfg.c_min, cfg.c_max)?;
    Ok((gt, params, ens, cm0))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains the coefficients and writes `submodels.csv`, `training.csv`,
/// `coupling.csv`, `contraction.csv` and `coupling_final.txt` into
/// `cfg.out`. A blow-up is recorded in the stage, not returned as an
/// error; the partial record is still written.
pub fn training_stage(cfg: &ExperimentConfig) -> Result<TrainingStage> {
    let (gt, params, mut ens, cm0) = prepare(cfg)?;
    let dir = &cfg.out;
    ensure_dir(dir)?;
    submodels_csv(&params).write(&dir.join("submodels.csv"))?;

    let lipschitz_max = params
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            estimate_lipschitz(
                &ens.system,
                p,
                &ens.initial,
                cfg.lipschitz_samples,
                cfg.lipschitz_scale,
                cfg.seed.wrapping_add(i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let tcfg = TrainingConfig {
        dt: cfg.dt,
        steps_per_epoch: cfg.steps,
        max_epochs: cfg.epochs,
        tol: cfg.tol,
        record_trajectories: false,
    };
    let (trained, report, blow_up) = match train(&mut ens, &cm0, &gt, &tcfg) {
        Ok((c, r)) => (c, r, None),
        Err(Error::TrainingBlowUp {
            epoch,
            step,
            variable,
            report,
        }) => {
            let msg = format!("epoch {epoch} step {step} variable {variable}");
            let last = report.c_history.last().cloned().unwrap_or_else(|| cm0.clone());
            (last, *report, Some(msg))
        }
        Err(e) => return Err(e),
    };
    let tol = Tolerances {
        beta_tol: cfg.beta_tol,
        gamma_tol: cfg.gamma_tol,
    };
    let contraction = training_contraction(&report, &cm0, cfg.dt, lipschitz_max, &tol);
    training_csv(&report, cfg.n).write(&dir.join("training.csv"))?;
    coupling_csv(&cm0, &report).write(&dir.join("coupling.csv"))?;
    contraction_csv(&contraction).write(&dir.join("contraction.csv"))?;
    write_coupling(&trained, &dir.join("coupling_final.txt"))?;
    Ok(TrainingStage {
        gt,
        ensemble: ens,
        submodels: params,
        initial_coupling: cm0,
        final_coupling: trained,
        report,
        blow_up,
        lipschitz_max,
        contraction,
    })
}

/// Runs the supermodel in prediction mode with `before` and `after`
/// coefficients and writes `volumes.csv` (for the `after` run),
/// `error_before_after.csv` and `volume_difference.csv` into `dir`.
pub fn prediction_stage(
    cfg: &ExperimentConfig,
    gt: &GroundTruth<TumorParams>,
    ens: &mut SubModelEnsemble<TumorSystem>,
    before: &CouplingMatrix,
    after: &CouplingMatrix,
) -> Result<PredictionStage> {
    let dir = &cfg.out;
    ensure_dir(dir)?;
    let b = ens.coupled_index();
    let before_run = simulate(ens, before, gt, cfg.dt, cfg.steps, cfg.nudge_in_prediction)?;
    let after_run = simulate(ens, after, gt, cfg.dt, cfg.steps, cfg.nudge_in_prediction)?;
    let e_before = error_metrics(gt, &before_run.coupled_trajectory(b))?;
    let e_after = error_metrics(gt, &after_run.coupled_trajectory(b))?;
    volumes_csv(gt, &after_run, cfg.dt).write(&dir.join("volumes.csv"))?;
    before_after_csv(&e_before, &e_after, cfg.dt).write(&dir.join("error_before_after.csv"))?;

    let mut vd = CsvTable::new(["step", "t", "volume_difference"]);
    for p in &e_after {
        vd.push_cells(&[
            p.step.to_string(),
            fmt_f64(p.step as f64 * cfg.dt),
            fmt_f64(p.volume_difference),
        ]);
    }
    vd.write(&dir.join("volume_difference.csv"))?;

    let volume_difference: Vec<f64> = e_after.iter().map(|p| p.volume_difference).collect();
    Ok(PredictionStage {
        sign_changes: sign_changes(&volume_difference),
        volume_difference,
        mean_volume_error_before: mean_abs_after_start(&e_before),
        mean_volume_error_after: mean_abs_after_start(&e_after),
        final_l2_before: e_before.last().map_or(0.0, |p| p.l2),
        final_l2_after: e_after.last().map_or(0.0, |p| p.l2),
    })
}

/// Runs one full experiment and writes its artifacts into `cfg.out`:
///
/// * `submodels.csv`: the drawn parameter sets
/// * `training.csv`: every training step (coefficients, error, volumes)
/// * `coupling.csv`: coefficients at the end of each epoch
/// * `coupling_final.txt`: the trained coefficients
/// * `contraction.csv`: per-epoch contraction diagnostics
/// * `volumes.csv`: GT, supermodel and member volumes of the trained run
/// * `error_before_after.csv`: untrained against trained prediction error
/// * `volume_difference.csv`: `GT − F_S` total volume of the trained run
/// * `manifest.txt`: the configuration plus an `[outcome]` section
///
/// A blow-up is not an error: the partial record is written and the
/// outcome carries the message.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let mut stage = training_stage(cfg)?;
    let report = &stage.report;
    let cm0 = &stage.initial_coupling;
    let last_delta = match report.c_history.len() {
        0 => 0.0,
        1 => report.c_history[0].max_abs_diff(cm0),
        k => report.c_history[k - 1].max_abs_diff(&report.c_history[k - 2]),
    };
    let mut blow_up = stage.blow_up.clone();
    let mut pred = PredictionStage {
        mean_volume_error_before: f64::NAN,
        mean_volume_error_after: f64::NAN,
        final_l2_before: f64::NAN,
        final_l2_after: f64::NAN,
        ..PredictionStage::default()
    };
    if blow_up.is_none() {
        let (before, after) = (stage.initial_coupling.clone(), stage.final_coupling.clone());
        match prediction_stage(cfg, &stage.gt, &mut stage.ensemble, &before, &after) {
            Ok(p) => pred = p,
            Err(e @ Error::BlowUp { .. }) => blow_up = Some(format!("prediction: {e}")),
            Err(e) => return Err(e),
        }
    }

    let outcome = ExperimentOutcome {
        dir: cfg.out.clone(),
        submodels: stage.submodels,
        initial_coupling: stage.initial_coupling,
        final_coupling: stage.final_coupling,
        converged: stage.report.converged,
        epochs_used: stage.report.iterations_used,
        last_delta,
        blow_up,
        lipschitz_max: stage.lipschitz_max,
        volume_difference: pred.volume_difference,
        sign_changes: pred.sign_changes,
        mean_volume_error_before: pred.mean_volume_error_before,
        mean_volume_error_after: pred.mean_volume_error_after,
        final_l2_before: pred.final_l2_before,
        final_l2_after: pred.final_l2_after,
        contraction: stage.contraction,
    };
    let c_final: Vec<String> = outcome.final_coupling.off_diagonal().map(|(_, _, v)| fmt_f64(v)).collect();
    write_manifest(
        cfg,
        &[
            ("converged", outcome.converged.to_string()),
            ("epochs_used", outcome.epochs_used.to_string()),
            ("last_delta", fmt_f64(outcome.last_delta)),
            ("final_coupling", c_final.join(" ")),
            ("blow_up", outcome.blow_up.clone().unwrap_or_else(|| "none".into())),
            ("lipschitz_max", fmt_f64(outcome.lipschitz_max)),
            ("sign_changes", outcome.sign_changes.to_string()),
            ("mean_volume_error_before", fmt_f64(outcome.mean_volume_error_before)),
            ("mean_volume_error_after", fmt_f64(outcome.mean_volume_error_after)),
            ("final_l2_before", fmt_f64(outcome.final_l2_before)),
            ("final_l2_after", fmt_f64(outcome.final_l2_after)),
        ],
        &cfg.out,
    )?;
    Ok(outcome)
}

/// Stability of the free model at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct CflRow {
    pub dt: f64,
    /// Full-state L2 norm after each completed step, starting at step 0.
    pub norms: Vec<f64>,
    pub status: StabilityStatus,
    /// First step at which the monitor fired.
    pub diverged_at: Option<usize>,
}

/// Runs the free reference model for `steps` steps at each `dt` and
/// monitors the full-state norm. Runs stop at the first diverging step.
pub fn cfl_sweep(
    grid: GridSpec,
    params: &TumorParams,
    initial: &ModelState,
    dts: &[f64],
    steps: usize,
    factor: f64,
) -> Result<Vec<CflRow>> {
    if dts.is_empty() {
        return Err(Error::Empty("dt list"));
    }
    stability_monitor(&[], factor)?;
    let system = TumorSystem::new(grid);
    dts.par_iter()
        .map(|&dt| {
            let mut state = initial.clone();
            let mut norms = vec![state.norm()?];
            let mut diverged_at = None;
            for n in 1..=steps {
                match explicit_step(&system, &state, params, dt) {
                    Ok(s) => {
                        state = s;
                        norms.push(state.norm().unwrap_or(f64::INFINITY));
                    }
                    Err(Error::BlowUp { .. }) => norms.push(f64::INFINITY),
                    Err(e) => return Err(e),
                }
                if stability_monitor(&norms, factor)? == StabilityStatus::Diverging {
                    diverged_at = Some(n);
                    break;
                }
            }
            Ok(CflRow {
                dt,
                norms,
                status: if diverged_at.is_some() {
                    StabilityStatus::Diverging
                } else {
                    StabilityStatus::Stable
                },
                diverged_at,
            })
        })
        .collect()
}

/// Largest `dt` such that it and every smaller swept value are stable.
pub fn stability_threshold(rows: &[CflRow]) -> Option<f64> {
    let mut sorted: Vec<&CflRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.dt.total_cmp(&b.dt));
    sorted
        .iter()
        .take_while(|r| r.status == StabilityStatus::Stable)
        .last()
        .map(|r| r.dt)
}

/// Long format: one row per (dt, step).
pub fn cfl_csv(rows: &[CflRow]) -> CsvTable {
    let mut t = CsvTable::new(["dt", "step", "l2_norm", "status"]);
    for r in rows {
        for (n, v) in r.norms.iter().enumerate() {
            let status = match r.diverged_at {
                Some(d) if n >= d => "diverging",
                _ => "stable",
            };
            t.push_cells(&[fmt_f64(r.dt), n.to_string(), fmt_f64(*v), status.to_string()]);
        }
    }
    t
}

pub fn cfl_summary_csv(rows: &[CflRow]) -> CsvTable {
    let mut t = CsvTable::new(["dt", "status", "steps_run", "diverged_at"]);
    for r in rows {
        t.push_cells(&[
            fmt_f64(r.dt),
            match r.status {
                StabilityStatus::Stable => "stable".into(),
                StabilityStatus::Diverging => "diverging".into(),
            },
            (r.norms.len() - 1).to_string(),
            r.diverged_at.map_or_else(String::new, |d| d.to_string()),
        ]);
    }
    t
}

/// Sweeps `dts`, then re-runs `dt*/2` and `10·dt*` around the detected
/// threshold, and writes `cfl.csv` and `cfl_summary.csv` into `dir`.
pub fn cfl_experiment(cfg: &ExperimentConfig, dts: &[f64], steps: usize, factor: f64, dir: &Path) -> Result<(Option<f64>, Vec<CflRow>)> {
    let initial = cfg.initial.build(cfg.grid, &cfg.reference);
    let mut rows = cfl_sweep(cfg.grid, &cfg.reference, &initial, dts, steps, factor)?;
    let threshold = stability_threshold(&rows);
    if let Some(t) = threshold {
        rows.extend(cfl_sweep(cfg.grid, &cfg.reference, &initial, &[0.5 * t, 10.0 * t], steps, factor)?);
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    cfl_csv(&rows).write(&dir.join("cfl.csv"))?;
    cfl_summary_csv(&rows).write(&dir.join("cfl_summary.csv"))?;
    let mut doc = KvDocument::default();
    doc.set("cfl.steps", steps.to_string());
    doc.set("cfl.factor", fmt_f64(factor));
    doc.set(
        "cfl.threshold",
        threshold.map_or_else(|| "none".to_string(), fmt_f64),
    );
    for (k, v) in cfg.to_doc().entries {
        doc.set(k, v);
    }
    doc.write(&dir.join("manifest.txt"))?;
    Ok((threshold, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_overrides(&["grid.n=6", "run.steps=8", "run.epochs=2", "supermodel.n=2"])
            .unwrap();
        cfg.out = dir.to_path_buf();
        cfg
    }

    #[test]
    fn experiment_writes_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let out = run_experiment(&cfg).unwrap();
        assert!(out.blow_up.is_none());
        for f in [
            "submodels.csv",
            "training.csv",
            "coupling.csv",
            "contraction.csv",
            "volumes.csv",
            "error_before_after.csv",
            "volume_difference.csv",
            "manifest.txt",
        ] {
            let text = fs::read_to_string(dir.path().join(f)).unwrap();
            assert!(text.lines().count() >= 2, "{f}");
        }
        let manifest = KvDocument::read(&dir.path().join("manifest.txt")).unwrap();
        assert_eq!(manifest.get("outcome.blow_up"), Some("none"));
        assert_eq!(manifest.get("supermodel.n"), Some("2"));
        let vd = fs::read_to_string(dir.path().join("volume_difference.csv")).unwrap();
        assert_eq!(vd.lines().count(), 1 + 9);
    }

    #[test]
    fn blow_up_keeps_partial_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        // the ground truth is unaffected; the nudged members overflow
        cfg.apply_overrides(&["supermodel.k=1e100"]).unwrap();
        let o = run_experiment(&cfg).unwrap();
        assert!(o.blow_up.as_deref().unwrap().starts_with("epoch 0 step"));
        assert!(dir.path().join("training.csv").exists());
        assert!(!dir.path().join("volumes.csv").exists());
        let m = KvDocument::read(&dir.path().join("manifest.txt")).unwrap();
        assert_ne!(m.get("outcome.blow_up"), Some("none"));
    }

    #[test]
    fn cfl_sweep_flags_large_steps() {
        let g = GridSpec::cube(6, 1.0).unwrap();
        let p = TumorParams::default();
        let init = crate::tumor::InitialCondition::default().build(g, &p);
        let rows = cfl_sweep(g, &p, &init, &[0.05, 0.1, 100.0], 30, 10.0).unwrap();
        assert_eq!(rows[0].status, StabilityStatus::Stable);
        assert_eq!(rows[2].status, StabilityStatus::Diverging);
        assert_eq!(stability_threshold(&rows), Some(0.1));
        assert!(cfl_sweep(g, &p, &init, &[], 3, 10.0).is_err());
        let csv = cfl_csv(&rows).render();
        assert!(csv.starts_with("dt,step,l2_norm,status\n"));
        assert!(csv.contains("diverging"));
    }
}
