//! Supermodel engine.
//!
//! `N` sub-models share one dynamical system but carry their own parameter
//! sets. After every model step the coupled variable of sub-model `i` is
//! corrected by
//!
//! ```text
//! B_i += (1/N) Σ_j C_ij (B_j − B_i) + (K/N) Σ_j (GT − B_j)
//! ```
//!
//! using the pre-step values of every `B_j`. Training adjusts the coupling
//! coefficients after each step with
//!
//! ```text
//! C_ij ← clamp(A·C_ij + A·∫ (GT − B_i)(B_i − B_j) dΩ, c_min, c_max)
//! ```
//!
//! and the supermodel output is the member average.

use rayon::prelude::*;

use crate::dynamics::{explicit_step, DynamicalSystem, Volumes};
use crate::error::{Error, Result};
use crate::field::{weighted_dot, weighted_l2_distance, EnsembleState, State};
use crate::ground_truth::GroundTruth;

/// Coupling coefficients `C_ij` plus the nudging strength `K` and the
/// correction factor `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingMatrix {
    n: usize,
    c: Vec<f64>,
    pub k_nudge: f64,
    pub a_rate: f64,
    pub c_min: f64,
    pub c_max: f64,
}

impl CouplingMatrix {
    /// All off-diagonal entries set to `c_init`, diagonal zero.
    pub fn uniform(n: usize, c_init: f64, k_nudge: f64, a_rate: f64, c_min: f64, c_max: f64) -> Result<Self> {
        let mut c = vec![c_init; n * n];
        for i in 0..n {
            c[i * n + i] = 0.0;
        }
        Self::from_entries(n, c, k_nudge, a_rate, c_min, c_max)
    }

    /// Row-major `n × n` entries; the diagonal is ignored and zeroed.
    pub fn from_entries(n: usize, mut c: Vec<f64>, k_nudge: f64, a_rate: f64, c_min: f64, c_max: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("coupling matrix needs n >= 1".into()));
        }
        if c.len() != n * n {
            return Err(Error::ShapeMismatch(format!("expected {} entries, got {}", n * n, c.len())));
        }
        if !(a_rate > 0.0 && a_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!("correction factor A must lie in (0, 1], got {a_rate}")));
        }
        if !(k_nudge >= 0.0 && k_nudge.is_finite()) {
            return Err(Error::InvalidArgument(format!("nudging K must be non-negative, got {k_nudge}")));
        }
        if !(c_min <= c_max) {
            return Err(Error::InvalidArgument(format!("clamp bounds reversed: [{c_min}, {c_max}]")));
        }
        for i in 0..n {
            c[i * n + i] = 0.0;
        }
        let cm = Self {
            n,
            c,
            k_nudge,
            a_rate,
            c_min,
            c_max,
        };
        if cm.off_diagonal().any(|(_, _, v)| v < c_min || v > c_max || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "coupling entries must lie in [{c_min}, {c_max}]"
            )));
        }
        Ok(cm)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.n + j]
    }

    /// Row-major entries including the zero diagonal.
    pub fn entries(&self) -> &[f64] {
        &self.c
    }

    pub fn off_diagonal(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n;
        (0..n)
            .flat_map(move |i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(move |(i, j)| (i, j, self.c[i * n + j]))
    }

    /// `max_ij |C_ij − E_ij|` over off-diagonal entries.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.off_diagonal()
            .map(|(i, j, v)| (v - other.get(i, j)).abs())
            .fold(0.0, f64::max)
    }

    /// Copy with new off-diagonal entries, each clamped into `[c_min, c_max]`.
    pub fn with_entries_clamped(&self, raw: impl Fn(usize, usize) -> f64) -> Self {
        let mut next = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    next.c[i * self.n + j] = raw(i, j).clamp(self.c_min, self.c_max);
                }
            }
        }
        next
    }

    pub fn with_nudge(&self, k_nudge: f64) -> Self {
        Self {
            k_nudge,
            ..self.clone()
        }
    }
}

/// Which members enter the nudging sum of member `i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NudgeMode {
    /// `Σ_{j=1..N} (GT − B_j)`: every member is nudged by the mean misfit.
    #[default]
    AllMembers,
    /// `Σ_{j≠i} (GT − B_j)`.
    ExcludeSelf,
}

/// `N` parameterizations of one system, stepped in lockstep.
#[derive(Clone, Debug)]
pub struct SubModelEnsemble<S: DynamicalSystem> {
    pub system: S,
    pub params: Vec<S::Params>,
    pub states: EnsembleState<S::State>,
    pub initial: S::State,
    coupled: usize,
    pub nudge_mode: NudgeMode,
}

impl<S: DynamicalSystem> SubModelEnsemble<S> {
    /// Every member starts from `initial`.
    pub fn new(system: S, params: Vec<S::Params>, initial: S::State, coupled_variable: &str) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Empty("sub-model parameter sets"));
        }
        if !system.couplable().contains(&coupled_variable) {
            return Err(Error::InvalidArgument(format!(
                "`{coupled_variable}` is not a couplable variable of this system"
            )));
        }
        let coupled = initial
            .variable_index(coupled_variable)
            .ok_or_else(|| Error::InvalidArgument(format!("state has no variable `{coupled_variable}`")))?;
        let states = EnsembleState::replicate(&initial, params.len())?;
        Ok(Self {
            system,
            params,
            states,
            initial,
            coupled,
            nudge_mode: NudgeMode::AllMembers,
        })
    }

    pub fn with_nudge_mode(mut self, mode: NudgeMode) -> Self {
        self.nudge_mode = mode;
        self
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn coupled_index(&self) -> usize {
        self.coupled
    }

    pub fn coupled_name(&self) -> &'static str {
        self.initial.variable_names()[self.coupled]
    }

    /// Resets all members to the shared initial condition.
    pub fn reset(&mut self) {
        for m in &mut self.states.members {
            m.clone_from(&self.initial);
        }
    }

    pub fn coupled_values(&self, member: usize) -> &[f64] {
        self.states.members[member].values(self.coupled)
    }

    /// One synchronized, nudged step of every member.
    pub fn coupled_step(&mut self, cm: &CouplingMatrix, gt_now: &[f64], dt: f64) -> Result<()> {
        self.states = coupled_step(
            &self.system,
            &self.params,
            &self.states,
            self.coupled,
            self.nudge_mode,
            cm,
            gt_now,
            dt,
        )?;
        Ok(())
    }

    pub fn output(&self) -> S::State {
        supermodel_output(&self.states)
    }

    pub fn member_volumes(&self) -> Option<Vec<Volumes>> {
        self.states
            .members
            .iter()
            .zip(&self.params)
            .map(|(s, p)| self.system.volumes(s, p))
            .collect()
    }
}

/// Advances every member by one model step and applies coupling and
/// nudging to the coupled variable. `dt = 0` freezes the model and applies
/// only the corrections.
#[allow(clippy::too_many_arguments)]
pub fn coupled_step<S: DynamicalSystem>(
    system: &S,
    params: &[S::Params],
    states: &EnsembleState<S::State>,
    coupled: usize,
    mode: NudgeMode,
    cm: &CouplingMatrix,
    gt_now: &[f64],
    dt: f64,
) -> Result<EnsembleState<S::State>> {
    let n = states.len();
    if params.len() != n || cm.n() != n {
        return Err(Error::ShapeMismatch(format!(
            "ensemble has {n} members, {} parameter sets and a {}x{} coupling matrix",
            params.len(),
            cm.n(),
            cm.n()
        )));
    }
    let len = states.members[0].values(coupled).len();
    if gt_now.len() != len {
        return Err(Error::ShapeMismatch(format!(
            "ground truth has {} values, coupled variable has {len}",
            gt_now.len()
        )));
    }
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be non-negative, got {dt}")));
    }

    let mut next: Vec<S::State> = if dt == 0.0 {
        states.members.clone()
    } else {
        states
            .members
            .par_iter()
            .zip(params.par_iter())
            .map(|(s, p)| explicit_step(system, s, p, dt))
            .collect::<Result<_>>()?
    };

    let inv_n = 1.0 / n as f64;
    let k = cm.k_nudge;
    let before: Vec<&[f64]> = states.members.iter().map(|s| s.values(coupled)).collect();
    for (i, member) in next.iter_mut().enumerate() {
        let out = member.values_mut(coupled);
        let bi = before[i];
        for x in 0..len {
            let mut coupling = 0.0;
            let mut misfit = 0.0;
            for (j, bj) in before.iter().enumerate() {
                if j != i {
                    coupling += cm.get(i, j) * (bj[x] - bi[x]);
                }
                if j != i || mode == NudgeMode::AllMembers {
                    misfit += gt_now[x] - bj[x];
                }
            }
            out[x] += (coupling + k * misfit) * inv_n;
        }
        member.check_finite()?;
    }
    EnsembleState::new(next)
}

/// `C_ij ← clamp(A·C_ij + A·⟨GT − B_i, B_i − B_j⟩)` for every `i ≠ j`, with
/// the inner product weighted by `cell_volume`.
pub fn update_coupling(cm: &CouplingMatrix, coupled: &[&[f64]], gt_now: &[f64], cell_volume: f64) -> Result<CouplingMatrix> {
    let n = cm.n();
    if coupled.len() != n || coupled.iter().any(|b| b.len() != gt_now.len()) {
        return Err(Error::ShapeMismatch("coupling update inputs disagree in shape".into()));
    }
    let misfit: Vec<Vec<f64>> = coupled
        .iter()
        .map(|b| gt_now.iter().zip(b.iter()).map(|(g, v)| g - v).collect())
        .collect();
    let mut raw = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let spread: Vec<f64> = coupled[i].iter().zip(coupled[j]).map(|(a, b)| a - b).collect();
            let ip = weighted_dot(&misfit[i], &spread, cell_volume);
            let v = cm.a_rate * cm.get(i, j) + cm.a_rate * ip;
            if !v.is_finite() {
                return Err(Error::BlowUp {
                    variable: format!("C[{i}][{j}]"),
                });
            }
            raw[i * n + j] = v;
        }
    }
    Ok(cm.with_entries_clamped(|i, j| raw[i * n + j]))
}

/// Member average of every variable.
///
/// Accumulated as a running mean so that `N` identical members average to
/// exactly that member.
pub fn supermodel_output<St: State>(states: &EnsembleState<St>) -> St {
    let mut mean = states.members[0].clone();
    for (k, member) in states.members.iter().enumerate().skip(1) {
        let w = 1.0 / (k + 1) as f64;
        for var in 0..mean.variable_count() {
            for (m, &x) in mean.values_mut(var).iter_mut().zip(member.values(var)) {
                *m += (x - *m) * w;
            }
        }
    }
    mean
}

/// Coupled-variable values of every member at steps `0..=M` of one epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnsembleTrajectory {
    pub cell_volume: f64,
    /// `steps[n][i]` is member `i` at step `n`.
    pub steps: Vec<Vec<Vec<f64>>>,
}

impl EnsembleTrajectory {
    pub fn snapshot<St: State>(states: &EnsembleState<St>, coupled: usize) -> Vec<Vec<f64>> {
        states.members.iter().map(|m| m.values(coupled).to_vec()).collect()
    }
}

/// What happened at one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    /// Step index reached, `1..=M`.
    pub step: usize,
    /// Row-major coupling entries after the correction at this step.
    pub coupling: Vec<f64>,
    /// `‖GT − F_S‖` on the coupled variable.
    pub error: f64,
    pub gt_total: f64,
    pub supermodel_total: f64,
    /// Mean of member volume triples, for systems that define them.
    pub volumes: Option<Volumes>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingReport {
    /// Coupling matrix at the end of every completed epoch.
    pub c_history: Vec<CouplingMatrix>,
    pub steps: Vec<StepRecord>,
    /// Per epoch, `max_{n,i} ‖GT^n − B_i^n‖` over steps `1..=M`.
    pub epoch_gt_distance: Vec<f64>,
    /// Per epoch coupled-variable trajectories, when requested.
    pub trajectories: Vec<EnsembleTrajectory>,
    pub converged: bool,
    pub iterations_used: usize,
}

impl TrainingReport {
    pub fn error_history(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.error).collect()
    }

    pub fn epoch_steps(&self, epoch: usize) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(move |s| s.epoch == epoch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingConfig {
    pub dt: f64,
    pub steps_per_epoch: usize,
    pub max_epochs: usize,
    /// Converged once `max_ij |ΔC_ij|` between epochs falls below this.
    pub tol: f64,
    pub record_trajectories: bool,
}

/// Trains the coupling coefficients against `gt`.
///
/// Each epoch resets the members to the shared initial condition and runs
/// `steps_per_epoch` coupled steps; after every step the ground truth at
/// the new time is fetched and the coefficients are corrected.
pub fn train<S: DynamicalSystem>(
    ens: &mut SubModelEnsemble<S>,
    cm: &CouplingMatrix,
    gt: &GroundTruth<S::Params>,
    cfg: &TrainingConfig,
) -> Result<(CouplingMatrix, TrainingReport)> {
    if gt.final_step() < cfg.steps_per_epoch {
        return Err(Error::InvalidArgument(format!(
            "ground truth covers {} steps, training needs {}",
            gt.final_step(),
            cfg.steps_per_epoch
        )));
    }
    if cm.n() != ens.len() {
        return Err(Error::ShapeMismatch("coupling matrix size differs from ensemble size".into()));
    }
    let mut cm = cm.clone();
    let mut report = TrainingReport::default();
    let vol = ens.initial.cell_volume();
    let coupled = ens.coupled_index();

    for epoch in 0..cfg.max_epochs {
        ens.reset();
        let start = cm.clone();
        let mut worst_gt = 0.0f64;
        let mut traj = cfg.record_trajectories.then(|| EnsembleTrajectory {
            cell_volume: vol,
            steps: vec![EnsembleTrajectory::snapshot(&ens.states, coupled)],
        });

        for n in 0..cfg.steps_per_epoch {
            let fail = |e: Error, report: &TrainingReport| match e {
                Error::BlowUp { variable } => Error::TrainingBlowUp {
                    epoch,
                    step: n + 1,
                    variable,
                    report: Box::new(report.clone()),
                },
                other => other,
            };
            let gt_now = gt.at(n)?;
            if let Err(e) = ens.coupled_step(&cm, &gt_now, dt_of(cfg)) {
                return Err(fail(e, &report));
            }
            let gt_next = gt.at(n + 1)?;
            let members: Vec<&[f64]> = (0..ens.len()).map(|i| ens.coupled_values(i)).collect();
            cm = match update_coupling(&cm, &members, &gt_next, vol) {
                Ok(c) => c,
                Err(e) => return Err(fail(e, &report)),
            };
            for m in &members {
                worst_gt = worst_gt.max(weighted_l2_distance(&gt_next, m, vol).map_err(|e| fail(e, &report))?);
            }

            let out = ens.output();
            let fs = out.values(coupled);
            let error = weighted_l2_distance(&gt_next, fs, vol).map_err(|e| fail(e, &report))?;
            report.steps.push(StepRecord {
                epoch,
                step: n + 1,
                coupling: cm.entries().to_vec(),
                error,
                gt_total: gt_next.iter().sum::<f64>() * vol,
                supermodel_total: fs.iter().sum::<f64>() * vol,
                volumes: ens.member_volumes().map(|v| Volumes::mean(&v)),
            });
            if let Some(t) = traj.as_mut() {
                t.steps.push(EnsembleTrajectory::snapshot(&ens.states, coupled));
            }
        }

        report.c_history.push(cm.clone());
        report.epoch_gt_distance.push(worst_gt);
        if let Some(t) = traj {
            report.trajectories.push(t);
        }
        report.iterations_used = epoch + 1;
        if cm.max_abs_diff(&start) < cfg.tol {
            report.converged = true;
            break;
        }
    }
    Ok((cm, report))
}

#[inline]
fn dt_of(cfg: &TrainingConfig) -> f64 {
    cfg.dt
}

/// Prediction-mode run with frozen coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationRun<St> {
    /// Supermodel output `F_S` at steps `0..=steps`.
    pub outputs: Vec<St>,
    /// Per step, the volume triple of each member (empty for systems
    /// without volume metrics).
    pub member_volumes: Vec<Vec<Volumes>>,
}

impl<St: State> SimulationRun<St> {
    /// Coupled-variable trajectory of the supermodel output.
    pub fn coupled_trajectory(&self, coupled: usize) -> Vec<Vec<f64>> {
        self.outputs.iter().map(|s| s.values(coupled).to_vec()).collect()
    }
}

/// Runs the supermodel from the shared initial condition for `steps`
/// steps with fixed coefficients. With `nudge` false the `K` term is
/// dropped, turning the run into a free forecast.
pub fn simulate<S: DynamicalSystem>(
    ens: &mut SubModelEnsemble<S>,
    cm: &CouplingMatrix,
    gt: &GroundTruth<S::Params>,
    dt: f64,
    steps: usize,
    nudge: bool,
) -> Result<SimulationRun<S::State>> {
    let cm = if nudge { cm.clone() } else { cm.with_nudge(0.0) };
    ens.reset();
    let len = ens.coupled_values(0).len();
    let mut run = SimulationRun {
        outputs: vec![ens.output()],
        member_volumes: vec![ens.member_volumes().unwrap_or_default()],
    };
    for n in 0..steps {
        let gt_now = if nudge { gt.at(n)? } else { vec![0.0; len] };
        ens.coupled_step(&cm, &gt_now, dt)?;
        run.outputs.push(ens.output());
        run.member_volumes.push(ens.member_volumes().unwrap_or_default());
    }
    Ok(run)
}
