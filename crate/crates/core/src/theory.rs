//! Contraction diagnostics for the training operator `G`.
//!
//! One application of `G` maps an iterate `(B^k, C^k)`, a trajectory of
//! every member's coupled variable over steps `0..=M` plus the coupling
//! matrix, to `(B^{k+1}, C^{k+1})`. The map contracts when
//!
//! ```text
//! α = (1 − K) + dt·max_i L_i + 2·max_ij |C_ij − E_ij| < 1,  A ≤ 1,  β ≈ 0,  γ ≈ 0
//! ```
//!
//! with `β = 4·max(d_B², d_D²)` and `γ = 2A·d_B² + 2A·d_D²`, where `d_B` is
//! the largest distance of any member from the ground truth over time.
//! `(1 − K)` turns negative for `K > 1`, so α is also reported with
//! `|1 − K|`; the `contracting` flag uses the latter.

use crate::dynamics::DynamicalSystem;
use crate::engine::{coupled_step, CouplingMatrix, EnsembleTrajectory, SubModelEnsemble, TrainingReport};
use crate::error::{Error, Result};
use crate::field::{weighted_dot, weighted_l2_distance, EnsembleState, State};
use crate::ground_truth::GroundTruth;
use crate::io::{fmt_f64, CsvTable};

pub fn alpha_const(k_nudge: f64, dt: f64, lipschitz_max: f64, coupling_spread: f64) -> f64 {
    ((1.0 - k_nudge) + dt * lipschitz_max) + 2.0 * coupling_spread
}

/// α with `|1 − K|` in place of `(1 − K)`.
pub fn alpha_const_abs(k_nudge: f64, dt: f64, lipschitz_max: f64, coupling_spread: f64) -> f64 {
    ((1.0 - k_nudge).abs() + dt * lipschitz_max) + 2.0 * coupling_spread
}

pub fn beta_const(gt_dist_b: f64, gt_dist_d: f64) -> f64 {
    4.0 * (gt_dist_b * gt_dist_b).max(gt_dist_d * gt_dist_d)
}

pub fn gamma_const(a_rate: f64, gt_dist_b: f64, gt_dist_d: f64) -> f64 {
    2.0 * a_rate * gt_dist_b * gt_dist_b + 2.0 * a_rate * gt_dist_d * gt_dist_d
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateBound {
    Finite(f64),
    /// `α ≥ 1`: the bound says nothing.
    Vacuous,
}

impl std::fmt::Display for RateBound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RateBound::Finite(v) => write!(f, "{}", fmt_f64(*v)),
            RateBound::Vacuous => f.write_str("vacuous"),
        }
    }
}

pub fn rate_bound(a_rate: f64, alpha: f64) -> RateBound {
    if alpha < 1.0 {
        RateBound::Finite(a_rate / (1.0 - alpha))
    } else {
        RateBound::Vacuous
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub beta_tol: f64,
    pub gamma_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            beta_tol: 1e-2,
            gamma_tol: 1e-2,
        }
    }
}

/// Inputs to one contraction check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionInputs {
    pub k_nudge: f64,
    pub dt: f64,
    pub a_rate: f64,
    pub lipschitz_max: f64,
    pub coupling_spread: f64,
    pub gt_dist_b: f64,
    pub gt_dist_d: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionReport {
    pub alpha: f64,
    pub alpha_abs: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lipschitz_max: f64,
    /// Computed from `alpha_abs`.
    pub rate_bound: RateBound,
    pub contracting: bool,
}

impl ContractionReport {
    pub fn evaluate(x: &ContractionInputs, tol: &Tolerances) -> Self {
        let alpha = alpha_const(x.k_nudge, x.dt, x.lipschitz_max, x.coupling_spread);
        let alpha_abs = alpha_const_abs(x.k_nudge, x.dt, x.lipschitz_max, x.coupling_spread);
        let beta = beta_const(x.gt_dist_b, x.gt_dist_d);
        let gamma = gamma_const(x.a_rate, x.gt_dist_b, x.gt_dist_d);
        let contracting = alpha_abs < 1.0 && x.a_rate <= 1.0 && beta <= tol.beta_tol && gamma <= tol.gamma_tol;
        Self {
            alpha,
            alpha_abs,
            beta,
            gamma,
            lipschitz_max: x.lipschitz_max,
            rate_bound: rate_bound(x.a_rate, alpha_abs),
            contracting,
        }
    }
}

/// One row per epoch.
pub fn contraction_csv(reports: &[ContractionReport]) -> CsvTable {
    let mut t = CsvTable::new([
        "epoch",
        "alpha",
        "alpha_abs",
        "beta",
        "gamma",
        "lipschitz_max",
        "rate_bound",
        "contracting",
    ]);
    for (k, r) in reports.iter().enumerate() {
        t.push_cells(&[
            k.to_string(),
            fmt_f64(r.alpha),
            fmt_f64(r.alpha_abs),
            fmt_f64(r.beta),
            fmt_f64(r.gamma),
            fmt_f64(r.lipschitz_max),
            r.rate_bound.to_string(),
            r.contracting.to_string(),
        ]);
    }
    t
}

/// Per-epoch reports for a single training run. Each epoch is compared
/// with the one before it: `E` is the previous epoch's coupling matrix and
/// `d_D` the previous epoch's distance to the ground truth. Epoch 0 is
/// compared with the initial coefficients and with itself.
pub fn training_contraction(
    report: &TrainingReport,
    initial: &CouplingMatrix,
    dt: f64,
    lipschitz_max: f64,
    tol: &Tolerances,
) -> Vec<ContractionReport> {
    let mut out = Vec::with_capacity(report.c_history.len());
    for (k, c) in report.c_history.iter().enumerate() {
        let prev = if k == 0 { initial } else { &report.c_history[k - 1] };
        let d_b = report.epoch_gt_distance[k];
        let d_d = if k == 0 { d_b } else { report.epoch_gt_distance[k - 1] };
        out.push(ContractionReport::evaluate(
            &ContractionInputs {
                k_nudge: c.k_nudge,
                dt,
                a_rate: c.a_rate,
                lipschitz_max,
                coupling_spread: c.max_abs_diff(prev),
                gt_dist_b: d_b,
                gt_dist_d: d_d,
            },
            tol,
        ));
    }
    out
}

/// `C_ij ← clamp(A·C_ij + A·max_{n=1..M} ⟨GT^n − B_i^n, B_i^n − B_j^n⟩)`.
///
/// `trajectory.steps[n]` holds every member at step `n`; step 0 is not
/// used. `gt[n]` is the ground truth at the same step.
pub fn cij_update_max_form(cm: &CouplingMatrix, trajectory: &EnsembleTrajectory, gt: &[Vec<f64>]) -> Result<CouplingMatrix> {
    let steps = trajectory.steps.len();
    if steps < 2 {
        return Err(Error::InvalidArgument("trajectory must cover at least one step".into()));
    }
    if gt.len() < steps {
        return Err(Error::ShapeMismatch(format!(
            "ground truth has {} steps, trajectory {steps}",
            gt.len()
        )));
    }
    let n = cm.n();
    let vol = trajectory.cell_volume;
    let mut best = vec![f64::NEG_INFINITY; n * n];
    for (b, g) in trajectory.steps.iter().zip(gt).skip(1) {
        if b.len() != n {
            return Err(Error::ShapeMismatch("trajectory member count differs from coupling size".into()));
        }
        for i in 0..n {
            let misfit: Vec<f64> = g.iter().zip(&b[i]).map(|(x, y)| x - y).collect();
            for j in 0..n {
                if i == j {
                    continue;
                }
                let spread: Vec<f64> = b[i].iter().zip(&b[j]).map(|(x, y)| x - y).collect();
                let ip = weighted_dot(&misfit, &spread, vol);
                best[i * n + j] = best[i * n + j].max(ip);
            }
        }
    }
    Ok(cm.with_entries_clamped(|i, j| cm.a_rate * cm.get(i, j) + cm.a_rate * best[i * n + j]))
}

/// A point `(B, C)` in the space `G` acts on.
#[derive(Clone, Debug, PartialEq)]
pub struct Iterate {
    pub trajectory: EnsembleTrajectory,
    pub coupling: CouplingMatrix,
}

/// Pairs a training run's recorded trajectories with its coupling history.
pub fn iterates_from_report(report: &TrainingReport) -> Result<Vec<Iterate>> {
    if report.trajectories.len() != report.c_history.len() {
        return Err(Error::InvalidArgument(
            "training report lacks per-epoch trajectories; enable record_trajectories".into(),
        ));
    }
    Ok(report
        .trajectories
        .iter()
        .zip(&report.c_history)
        .map(|(t, c)| Iterate {
            trajectory: t.clone(),
            coupling: c.clone(),
        })
        .collect())
}

/// `max_{n≥1} Σ_i ‖B_i^n − D_i^n‖ + max_ij |C_ij − E_ij|`.
pub fn iterate_distance(a: &Iterate, b: &Iterate) -> Result<f64> {
    let (ta, tb) = (&a.trajectory.steps, &b.trajectory.steps);
    if ta.len() != tb.len() || a.coupling.n() != b.coupling.n() {
        return Err(Error::ShapeMismatch("iterates differ in length or member count".into()));
    }
    let vol = a.trajectory.cell_volume;
    let mut worst = 0.0f64;
    for (sa, sb) in ta.iter().zip(tb).skip(1) {
        if sa.len() != sb.len() {
            return Err(Error::ShapeMismatch("iterates differ in member count".into()));
        }
        let mut taxi = 0.0;
        for (x, y) in sa.iter().zip(sb) {
            taxi += weighted_l2_distance(x, y, vol)?;
        }
        worst = worst.max(taxi);
    }
    Ok(worst + a.coupling.max_abs_diff(&b.coupling))
}

/// Ratios `d_{k+1} / d_k` of the distances between two sequences of
/// iterates. A step from zero distance to zero distance counts as 0.
pub fn empirical_contraction_ratio(run1: &[Iterate], run2: &[Iterate]) -> Result<Vec<f64>> {
    let len = run1.len().min(run2.len());
    if len < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two iterates per run, got {len}"
        )));
    }
    let d = (0..len)
        .map(|k| iterate_distance(&run1[k], &run2[k]))
        .collect::<Result<Vec<_>>>()?;
    Ok(d.windows(2)
        .map(|w| if w[0] == 0.0 && w[1] == 0.0 { 0.0 } else { w[1] / w[0] })
        .collect())
}

/// Full states of every member over steps `0..=M`, paired with `C`.
#[derive(Clone, Debug)]
pub struct StateIterate<St> {
    pub states: Vec<EnsembleState<St>>,
    pub coupling: CouplingMatrix,
}

impl<St: State> StateIterate<St> {
    /// Every step equal to the ensemble's initial condition.
    pub fn constant<S: DynamicalSystem<State = St>>(ens: &SubModelEnsemble<S>, cm: &CouplingMatrix, steps: usize) -> Result<Self> {
        let init = EnsembleState::replicate(&ens.initial, ens.len())?;
        Ok(Self {
            states: vec![init; steps + 1],
            coupling: cm.clone(),
        })
    }

    pub fn project(&self, coupled: usize) -> Iterate {
        Iterate {
            trajectory: EnsembleTrajectory {
                cell_volume: self.states[0].members[0].cell_volume(),
                steps: self.states.iter().map(|s| EnsembleTrajectory::snapshot(s, coupled)).collect(),
            },
            coupling: self.coupling.clone(),
        }
    }
}

/// Applies `G` once.
///
/// The new coefficients come from the max-form update over the current
/// trajectory, and the new trajectory advances each step of the current
/// one under those coefficients: `B^{n+1} ← F(B^n; C^{k+1}, GT^n)`, with
/// step 0 kept at the shared initial condition.
pub fn apply_correction<S: DynamicalSystem>(
    ens: &SubModelEnsemble<S>,
    it: &StateIterate<S::State>,
    gt: &GroundTruth<S::Params>,
    dt: f64,
) -> Result<StateIterate<S::State>> {
    let steps = it.states.len() - 1;
    let coupled = ens.coupled_index();
    let gts = (0..=steps).map(|n| gt.at(n)).collect::<Result<Vec<_>>>()?;
    let coupling = cij_update_max_form(&it.coupling, &it.project(coupled).trajectory, &gts)?;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(EnsembleState::replicate(&ens.initial, ens.len())?);
    for (prev, g) in it.states.iter().zip(&gts).take(steps) {
        states.push(coupled_step(
            &ens.system,
            &ens.params,
            prev,
            coupled,
            ens.nudge_mode,
            &coupling,
            g,
            dt,
        )?);
    }
    Ok(StateIterate { states, coupling })
}

/// `start` followed by `iterations` applications of `G`, projected onto
/// the coupled variable.
pub fn iterate_correction<S: DynamicalSystem>(
    ens: &SubModelEnsemble<S>,
    start: StateIterate<S::State>,
    gt: &GroundTruth<S::Params>,
    dt: f64,
    iterations: usize,
) -> Result<Vec<Iterate>> {
    let coupled = ens.coupled_index();
    let mut out = vec![start.project(coupled)];
    let mut cur = start;
    for _ in 0..iterations {
        cur = apply_correction(ens, &cur, gt, dt)?;
        out.push(cur.project(coupled));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LogisticParams, LogisticSystem, VectorState};
    use crate::engine::update_coupling;
    use crate::ground_truth::generate_gt;
    use proptest::prelude::*;

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha_const(1.0, 0.0, 5.0, 0.0), 0.0);
        assert!((alpha_const(0.9, 0.1, 1.0, 0.35) - 0.9).abs() < 1e-15);
        assert!((alpha_const(2.0, 0.1, 1.0, 0.35) + 0.2).abs() < 1e-15);
        assert!((alpha_const_abs(2.0, 0.1, 1.0, 0.35) - 1.8).abs() < 1e-15);
    }

    #[test]
    fn beta_gamma_examples() {
        assert_eq!(beta_const(0.0, 0.0), 0.0);
        assert_eq!(beta_const(0.5, 0.3), 1.0);
        assert_eq!(beta_const(0.3, 0.5), beta_const(0.5, 0.3));
        assert_eq!(gamma_const(1.0, 0.0, 0.0), 0.0);
        assert!((gamma_const(1.0, 0.5, 0.3) - 0.68).abs() < 1e-15);
        assert_eq!(gamma_const(0.5, 1.0, 1.0), 2.0);
    }

    #[test]
    fn rate_bound_examples() {
        assert_eq!(rate_bound(1.0, 0.9), RateBound::Finite(1.0 / (1.0 - 0.9)));
        assert!(matches!(rate_bound(1.0, 0.9), RateBound::Finite(v) if (v - 10.0).abs() < 1e-12));
        assert_eq!(rate_bound(0.5, 0.5), RateBound::Finite(1.0));
        assert_eq!(rate_bound(1.0, 1.0), RateBound::Vacuous);
        assert_eq!(RateBound::Vacuous.to_string(), "vacuous");
    }

    #[test]
    fn contracting_flag_uses_absolute_alpha() {
        let x = ContractionInputs {
            k_nudge: 2.0,
            dt: 0.1,
            a_rate: 1.0,
            lipschitz_max: 1.0,
            coupling_spread: 0.35,
            gt_dist_b: 0.0,
            gt_dist_d: 0.0,
        };
        let r = ContractionReport::evaluate(&x, &Tolerances::default());
        assert!(r.alpha < 1.0 && r.alpha_abs > 1.0);
        assert!(!r.contracting);
        assert_eq!(r.rate_bound, RateBound::Vacuous);

        let ok = ContractionReport::evaluate(
            &ContractionInputs {
                k_nudge: 0.9,
                coupling_spread: 0.1,
                ..x
            },
            &Tolerances::default(),
        );
        assert!(ok.contracting);
    }

    fn cm(c: f64, a: f64) -> CouplingMatrix {
        CouplingMatrix::uniform(2, c, 0.9, a, 0.0, 1.0).unwrap()
    }

    #[test]
    fn max_form_examples() {
        // member values chosen so that ⟨GT − B_0, B_0 − B_1⟩ is 0.1 then 0.3
        let traj = EnsembleTrajectory {
            cell_volume: 1.0,
            steps: vec![vec![vec![0.0], vec![0.0]], vec![vec![0.5], vec![0.3]], vec![vec![0.5], vec![-0.1]]],
        };
        let gt = vec![vec![0.0], vec![1.0], vec![1.0]];
        let up = cij_update_max_form(&cm(0.5, 1.0), &traj, &gt).unwrap();
        assert!((up.get(0, 1) - 0.8).abs() < 1e-15);

        let exact = EnsembleTrajectory {
            cell_volume: 1.0,
            steps: vec![vec![vec![1.0], vec![1.0]]; 3],
        };
        let fixed = cij_update_max_form(&cm(0.5, 0.5), &exact, &vec![vec![1.0]; 3]).unwrap();
        assert_eq!(fixed.get(0, 1), 0.25);
        assert!(cij_update_max_form(&cm(0.5, 1.0), &EnsembleTrajectory::default(), &gt).is_err());
    }

    #[test]
    fn max_form_with_one_step_matches_integral_form() {
        let b0 = vec![0.2, 0.7, 1.1];
        let b1 = vec![0.4, 0.5, 0.9];
        let g = vec![0.3, 0.8, 1.0];
        let traj = EnsembleTrajectory {
            cell_volume: 0.125,
            steps: vec![vec![b0.clone(), b1.clone()], vec![b0.clone(), b1.clone()]],
        };
        let m = cij_update_max_form(&cm(0.5, 0.7), &traj, &[g.clone(), g.clone()]).unwrap();
        let i = update_coupling(&cm(0.5, 0.7), &[&b0, &b1], &g, 0.125).unwrap();
        assert_eq!(m, i);
    }

    fn toy_setup(rs: &[f64], k: f64, a: f64, c: f64) -> (SubModelEnsemble<LogisticSystem>, CouplingMatrix, GroundTruth<LogisticParams>) {
        let init = VectorState::new(vec![1.2, 1.5, 0.8]);
        let gt = generate_gt(&LogisticSystem, &LogisticParams::new(1.0, 2.0).unwrap(), &init, "u", 0.1, 10, 1).unwrap();
        let params = rs.iter().map(|&r| LogisticParams::new(r, 2.0).unwrap()).collect();
        let ens = SubModelEnsemble::new(LogisticSystem, params, init, "u").unwrap();
        let cm = CouplingMatrix::uniform(rs.len(), c, k, a, 0.1, 0.9).unwrap();
        (ens, cm, gt)
    }

    #[test]
    fn identical_starts_give_zero_ratios() {
        let (ens, cm, gt) = toy_setup(&[0.9, 1.0, 1.1], 0.9, 0.9, 0.5);
        let start = StateIterate::constant(&ens, &cm, 10).unwrap();
        let a = iterate_correction(&ens, start.clone(), &gt, 0.1, 4).unwrap();
        let b = iterate_correction(&ens, start, &gt, 0.1, 4).unwrap();
        assert!(empirical_contraction_ratio(&a, &b).unwrap().iter().all(|&r| r == 0.0));
        assert!(empirical_contraction_ratio(&a[..1], &b[..1]).is_err());
    }

    #[test]
    fn correction_keeps_step_zero_and_clamp() {
        let (ens, cm, gt) = toy_setup(&[0.6, 1.0, 1.4], 2.0, 1.0, 0.5);
        let start = StateIterate::constant(&ens, &cm, 10).unwrap();
        let its = iterate_correction(&ens, start, &gt, 0.1, 6).unwrap();
        for it in &its {
            assert_eq!(it.trajectory.steps[0][0], vec![1.2, 1.5, 0.8]);
            assert!(it.coupling.off_diagonal().all(|(_, _, v)| (0.1..=0.9).contains(&v)));
        }
    }

    #[test]
    fn training_contraction_has_one_row_per_epoch() {
        let (mut ens, cm, gt) = toy_setup(&[0.95, 1.0, 1.05], 0.9, 1.0, 0.5);
        let cfg = crate::engine::TrainingConfig {
            dt: 0.1,
            steps_per_epoch: 10,
            max_epochs: 4,
            tol: 0.0,
            record_trajectories: false,
        };
        let (_, report) = crate::engine::train(&mut ens, &cm, &gt, &cfg).unwrap();
        let rows = training_contraction(&report, &cm, 0.1, 1.0, &Tolerances::default());
        assert_eq!(rows.len(), 4);
        let csv = contraction_csv(&rows).render();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("epoch,alpha,alpha_abs"));
    }

    proptest! {
        #[test]
        fn alpha_is_affine_in_dt(k in 0.0..3.0f64, dt in 0.0..1.0f64, l in 0.0..10.0f64, s in 0.0..1.0f64) {
            let d = alpha_const(k, 2.0 * dt, l, s) - alpha_const(k, dt, l, s);
            prop_assert!((d - dt * l).abs() < 1e-12);
        }

        #[test]
        fn beta_gamma_are_monotone(a in 0.0..2.0f64, b in 0.0..2.0f64, da in 0.0..1.0f64, rate in 0.01..1.0f64) {
            prop_assert!(beta_const(a + da, b) >= beta_const(a, b));
            prop_assert!(beta_const(a, b + da) >= beta_const(a, b));
            prop_assert!(gamma_const(rate, a + da, b) >= gamma_const(rate, a, b));
            prop_assert!(gamma_const(rate, a, b + da) >= gamma_const(rate, a, b));
        }

        #[test]
        fn never_contracting_when_alpha_reaches_one(
            k in 0.0..3.0f64, dt in 0.0..1.0f64, l in 0.0..10.0f64, s in 0.0..1.0f64,
            a in 0.01..1.0f64, db in 0.0..0.01f64,
        ) {
            let x = ContractionInputs { k_nudge: k, dt, a_rate: a, lipschitz_max: l, coupling_spread: s, gt_dist_b: db, gt_dist_d: db };
            let r = ContractionReport::evaluate(&x, &Tolerances::default());
            if r.alpha_abs >= 1.0 || r.alpha >= 1.0 {
                prop_assert!(!r.contracting);
            }
        }
    }
}
