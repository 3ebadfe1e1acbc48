//! Synthetic ground truth: a reference run of the free model, stored as
//! sparse snapshots of the coupled variable and linearly interpolated in
//! time on demand.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::dynamics::{explicit_step, DynamicalSystem, Volumes};
use crate::error::{Error, Result};
use crate::field::{weighted_l2_distance, GridSpec, ScalarField, State};
use crate::io::{self, fmt_f64, KvDocument};
use crate::tumor::TumorParams;

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<P> {
    snapshots: BTreeMap<usize, Vec<f64>>,
    /// Volume triples for every generated step, when the system defines them.
    pub volumes: Vec<Volumes>,
    pub step_dt: f64,
    pub reference_params: P,
    pub coupled_variable: String,
    pub cell_volume: f64,
    /// Present for grid-based systems; required for archiving.
    pub grid: Option<GridSpec>,
}

/// Runs the free model from `initial` with `params` and keeps every
/// `keep_every`-th snapshot of `coupled_variable`, plus both endpoints.
pub fn generate_gt<S: DynamicalSystem>(
    system: &S,
    params: &S::Params,
    initial: &S::State,
    coupled_variable: &str,
    dt: f64,
    steps: usize,
    keep_every: usize,
) -> Result<GroundTruth<S::Params>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("ground truth needs at least one step".into()));
    }
    if keep_every == 0 {
        return Err(Error::InvalidArgument("keep_every must be positive".into()));
    }
    let var = initial
        .variable_index(coupled_variable)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown variable `{coupled_variable}`")))?;

    let mut snapshots = BTreeMap::new();
    let mut volumes = Vec::new();
    let mut state = initial.clone();
    for n in 0..=steps {
        if n > 0 {
            state = explicit_step(system, &state, params, dt)?;
        }
        if n % keep_every == 0 || n == steps {
            snapshots.insert(n, state.values(var).to_vec());
        }
        if let Some(v) = system.volumes(&state, params) {
            volumes.push(v);
        }
    }
    Ok(GroundTruth {
        snapshots,
        volumes,
        step_dt: dt,
        reference_params: params.clone(),
        coupled_variable: coupled_variable.to_string(),
        cell_volume: initial.cell_volume(),
        grid: None,
    })
}

impl<P> GroundTruth<P> {
    pub fn from_snapshots(
        snapshots: BTreeMap<usize, Vec<f64>>,
        step_dt: f64,
        reference_params: P,
        coupled_variable: &str,
        cell_volume: f64,
    ) -> Result<Self> {
        if !snapshots.contains_key(&0) {
            return Err(Error::InvalidArgument("ground truth must store step 0".into()));
        }
        let len = snapshots[&0].len();
        if snapshots.values().any(|s| s.len() != len) {
            return Err(Error::ShapeMismatch("snapshots have different sizes".into()));
        }
        Ok(Self {
            snapshots,
            volumes: Vec::new(),
            step_dt,
            reference_params,
            coupled_variable: coupled_variable.to_string(),
            cell_volume,
            grid: None,
        })
    }

    pub fn with_grid(mut self, grid: GridSpec) -> Self {
        self.grid = Some(grid);
        self
    }

    pub fn final_step(&self) -> usize {
        *self.snapshots.keys().next_back().expect("step 0 always stored")
    }

    pub fn stored_steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.snapshots.keys().copied()
    }

    pub fn stored(&self, n: usize) -> Option<&[f64]> {
        self.snapshots.get(&n).map(Vec::as_slice)
    }

    /// Snapshot at step `n`, linearly interpolated between the neighbouring
    /// stored snapshots when `n` itself is not stored.
    pub fn at(&self, n: usize) -> Result<Vec<f64>> {
        if let Some(s) = self.snapshots.get(&n) {
            return Ok(s.clone());
        }
        let last = self.final_step();
        if n > last {
            return Err(Error::OutOfRange { step: n, last });
        }
        let (&lo, f0) = self.snapshots.range(..n).next_back().expect("step 0 stored");
        let (&hi, f1) = self.snapshots.range(n..).next().expect("final step stored");
        let w = (n - lo) as f64 / (hi - lo) as f64;
        Ok(f0
            .iter()
            .zip(f1)
            .map(|(&a, &b)| ((1.0 - w) * a + w * b).clamp(a.min(b), a.max(b)))
            .collect())
    }

    /// `∫ GT dΩ` at step `n`.
    pub fn total(&self, n: usize) -> Result<f64> {
        Ok(self.at(n)?.iter().sum::<f64>() * self.cell_volume)
    }
}

/// Per-step supermodel error against the ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorPoint {
    pub step: usize,
    pub l2: f64,
    /// `∫GT − ∫supermodel`.
    pub volume_difference: f64,
}

/// Compares a trajectory of coupled-variable fields, indexed from step 0,
/// with the ground truth.
pub fn error_metrics<P>(gt: &GroundTruth<P>, trajectory: &[Vec<f64>]) -> Result<Vec<ErrorPoint>> {
    trajectory
        .iter()
        .enumerate()
        .map(|(step, field)| {
            let truth = gt.at(step)?;
            let l2 = weighted_l2_distance(&truth, field, gt.cell_volume)?;
            let diff: f64 = truth.iter().zip(field).map(|(t, f)| t - f).sum::<f64>() * gt.cell_volume;
            Ok(ErrorPoint {
                step,
                l2,
                volume_difference: diff,
            })
        })
        .collect()
}

/// Number of sign changes in a series, ignoring exact zeros.
pub fn sign_changes(series: &[f64]) -> usize {
    let mut last = 0.0f64;
    let mut count = 0;
    for &v in series {
        if v == 0.0 || !v.is_finite() {
            continue;
        }
        if last != 0.0 && (v > 0.0) != (last > 0.0) {
            count += 1;
        }
        last = v;
    }
    count
}

const MANIFEST: &str = "manifest.txt";

fn snapshot_name(n: usize) -> String {
    format!("b_{n:06}.bin")
}

/// Writes a manifest plus one binary field file per stored snapshot.
pub fn save_archive(gt: &GroundTruth<TumorParams>, dir: &Path) -> Result<()> {
    let grid = gt
        .grid
        .ok_or_else(|| Error::InvalidArgument("archiving needs a grid-based ground truth".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut doc = KvDocument::default();
    doc.set("ground_truth.step_dt", fmt_f64(gt.step_dt));
    doc.set("ground_truth.coupled_variable", gt.coupled_variable.clone());
    doc.set(
        "ground_truth.stored_steps",
        gt.stored_steps().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
    );
    doc.set("grid.nx", grid.nx.to_string());
    doc.set("grid.ny", grid.ny.to_string());
    doc.set("grid.nz", grid.nz.to_string());
    doc.set("grid.h", fmt_f64(grid.h));
    for (name, value) in TumorParams::NAMES.iter().zip(gt.reference_params.to_array()) {
        doc.set(format!("reference.{name}"), fmt_f64(value));
    }
    doc.write(&dir.join(MANIFEST))?;

    for (&n, values) in &gt.snapshots {
        let field = ScalarField::from_vec(grid, values.clone())?;
        io::write_field(&dir.join(snapshot_name(n)), &field, n as f64 * gt.step_dt)?;
    }
    if !gt.volumes.is_empty() {
        let mut table = io::CsvTable::new(["step", "t", "total", "proliferating", "quiescent"]);
        for (n, v) in gt.volumes.iter().enumerate() {
            table.push_row(&[n], &[n as f64 * gt.step_dt, v.total, v.proliferating, v.quiescent]);
        }
        table.write(&dir.join("volumes.csv"))?;
    }
    Ok(())
}

pub fn load_archive(dir: &Path) -> Result<GroundTruth<TumorParams>> {
    let doc = KvDocument::read(&dir.join(MANIFEST))?;
    let src = dir.join(MANIFEST).display().to_string();
    let req = |key: &str| {
        doc.get(key)
            .ok_or_else(|| Error::parse(&src, format!("missing key `{key}`")))
    };
    let real = |key: &str| -> Result<f64> {
        req(key)?
            .parse()
            .map_err(|e| Error::parse(&src, format!("{key}: {e}")))
    };
    let int = |key: &str| -> Result<usize> {
        req(key)?
            .parse()
            .map_err(|e| Error::parse(&src, format!("{key}: {e}")))
    };
    let grid = GridSpec::new(int("grid.nx")?, int("grid.ny")?, int("grid.nz")?, real("grid.h")?)?;
    let mut params = [0.0; 21];
    for (slot, name) in params.iter_mut().zip(TumorParams::NAMES) {
        *slot = real(&format!("reference.{name}"))?;
    }
    let mut snapshots = BTreeMap::new();
    for tok in req("ground_truth.stored_steps")?.split(',') {
        let n: usize = tok
            .trim()
            .parse()
            .map_err(|e| Error::parse(&src, format!("stored_steps: {e}")))?;
        let (field, _) = io::read_field(&dir.join(snapshot_name(n)))?;
        if *field.spec() != grid {
            return Err(Error::ShapeMismatch(format!("snapshot {n} grid differs from manifest")));
        }
        snapshots.insert(n, field.into_vec());
    }
    let gt = GroundTruth::from_snapshots(
        snapshots,
        real("ground_truth.step_dt")?,
        TumorParams::from_array(params),
        req("ground_truth.coupled_variable")?,
        grid.cell_volume(),
    )?;
    Ok(gt.with_grid(grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LogisticParams, LogisticSystem, VectorState};
    use crate::tumor::{InitialCondition, TumorSystem};

    fn toy_gt(steps: usize, keep_every: usize) -> GroundTruth<LogisticParams> {
        let p = LogisticParams::new(1.0, 2.0).unwrap();
        generate_gt(&LogisticSystem, &p, &VectorState::new(vec![0.1, 0.5]), "u", 0.1, steps, keep_every).unwrap()
    }

    #[test]
    fn stride_extremes() {
        assert!(generate_gt(
            &LogisticSystem,
            &LogisticParams::new(1.0, 2.0).unwrap(),
            &VectorState::scalar(0.1),
            "u",
            0.1,
            0,
            1
        )
        .is_err());
        let one = toy_gt(1, 1);
        assert_eq!(one.stored_steps().collect::<Vec<_>>(), vec![0, 1]);
        let all = toy_gt(7, 1);
        assert_eq!(all.stored_steps().count(), 8);
        let ends = toy_gt(7, 7);
        assert_eq!(ends.stored_steps().collect::<Vec<_>>(), vec![0, 7]);
        let odd = toy_gt(7, 3);
        assert_eq!(odd.stored_steps().collect::<Vec<_>>(), vec![0, 3, 6, 7]);
    }

    #[test]
    fn interpolation_examples() {
        let full = toy_gt(6, 1);
        let sparse = toy_gt(6, 2);
        assert_eq!(sparse.at(2).unwrap(), full.at(2).unwrap());
        let mid = sparse.at(1).unwrap();
        let (f0, f2) = (full.at(0).unwrap(), full.at(2).unwrap());
        for i in 0..mid.len() {
            assert_eq!(mid[i], (f0[i] + f2[i]) / 2.0);
        }
        assert!(matches!(sparse.at(7), Err(Error::OutOfRange { step: 7, last: 6 })));
    }

    #[test]
    fn error_metrics_examples() {
        let gt = toy_gt(4, 1);
        let exact: Vec<Vec<f64>> = (0..=4).map(|n| gt.at(n).unwrap()).collect();
        for p in error_metrics(&gt, &exact).unwrap() {
            assert_eq!((p.l2, p.volume_difference), (0.0, 0.0));
        }
        let shifted: Vec<Vec<f64>> = exact.iter().map(|f| f.iter().map(|v| v + 0.25).collect()).collect();
        for p in error_metrics(&gt, &shifted).unwrap() {
            // two unit cells
            assert!((p.volume_difference + 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn sign_change_counting() {
        assert_eq!(sign_changes(&[]), 0);
        assert_eq!(sign_changes(&[1.0, 2.0, 3.0]), 0);
        assert_eq!(sign_changes(&[1.0, -1.0, 1.0, -1.0]), 3);
        assert_eq!(sign_changes(&[1.0, 0.0, -1.0, 0.0, -2.0]), 1);
    }

    #[test]
    fn tumor_ground_truth_grows_and_round_trips_through_archive() {
        let g = GridSpec::cube(16, 1.0).unwrap();
        let p = TumorParams::default();
        let sys = TumorSystem::new(g);
        let s0 = InitialCondition::default().build(g, &p);
        let gt = generate_gt(&sys, &p, &s0, "b", 0.1, 60, 10).unwrap().with_grid(g);
        assert_eq!(gt.volumes.len(), 61);
        for w in gt.volumes.windows(2) {
            assert!(w[1].total > w[0].total);
        }

        let again = generate_gt(&sys, &p, &s0, "b", 0.1, 60, 10).unwrap().with_grid(g);
        assert_eq!(again, gt);

        let dir = tempfile::tempdir().unwrap();
        save_archive(&gt, dir.path()).unwrap();
        let back = load_archive(dir.path()).unwrap();
        assert_eq!(back.reference_params, p);
        assert_eq!(back.stored_steps().collect::<Vec<_>>(), gt.stored_steps().collect::<Vec<_>>());
        for n in 0..=60 {
            assert_eq!(back.at(n).unwrap(), gt.at(n).unwrap());
        }
    }

    proptest::proptest! {
        #[test]
        fn interpolation_is_convex(
            a in proptest::collection::vec(-5.0..5.0f64, 6),
            b in proptest::collection::vec(-5.0..5.0f64, 6),
            gap in 2usize..9,
        ) {
            let mut snaps = BTreeMap::new();
            snaps.insert(0, a.clone());
            snaps.insert(gap, b.clone());
            let gt = GroundTruth::from_snapshots(snaps, 0.1, (), "u", 1.0).unwrap();
            for n in 0..=gap {
                let f = gt.at(n).unwrap();
                for i in 0..6 {
                    proptest::prop_assert!(f[i] >= a[i].min(b[i]) && f[i] <= a[i].max(b[i]));
                }
            }
            proptest::prop_assert_eq!(gt.at(0).unwrap(), a);
            proptest::prop_assert_eq!(gt.at(gap).unwrap(), b);
        }
    }
}
