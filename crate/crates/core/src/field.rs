//! Grid-based field containers, discrete norms and ensemble distances.
//!
//! Storage is flat and row-major with `x` varying fastest, so the value at
//! `(i, j, k)` lives at `i + nx * (j + ny * k)`. All norms carry the cell
//! volume `h^3` so that values stay comparable under grid refinement.

use crate::error::{Error, Result};

/// Uniform 3-D grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub h: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, nz: usize, h: f64) -> Result<Self> {
        if nx < 3 || ny < 3 || nz < 3 {
            return Err(Error::InvalidGrid(format!(
                "every axis needs at least 3 cells, got {nx}x{ny}x{nz}"
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {h}")));
        }
        Ok(Self { nx, ny, nz, h })
    }

    pub fn cube(n: usize, h: f64) -> Result<Self> {
        Self::new(n, n, n, h)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.h * self.h * self.h
    }

    /// Total measure of the domain.
    pub fn domain_volume(&self) -> f64 {
        self.len() as f64 * self.cell_volume()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    /// Cell-center coordinates of `(i, j, k)`, origin at the domain corner.
    #[inline]
    pub fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            (i as f64 + 0.5) * self.h,
            (j as f64 + 0.5) * self.h,
            (k as f64 + 0.5) * self.h,
        ]
    }
}

/// One scalar quantity sampled on every cell of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(spec: GridSpec) -> Self {
        Self::constant(spec, 0.0)
    }

    pub fn constant(spec: GridSpec, value: f64) -> Self {
        Self {
            spec,
            values: vec![value; spec.len()],
        }
    }

    pub fn from_vec(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::ShapeMismatch(format!(
                "grid has {} cells but {} values were given",
                spec.len(),
                values.len()
            )));
        }
        Ok(Self { spec, values })
    }

    /// Fill from a function of the cell-center coordinates.
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut([f64; 3]) -> f64) -> Self {
        let mut values = Vec::with_capacity(spec.len());
        for k in 0..spec.nz {
            for j in 0..spec.ny {
                for i in 0..spec.nx {
                    values.push(f(spec.center(i, j, k)));
                }
            }
        }
        Self { spec, values }
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.spec.index(i, j, k)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `∫ f dΩ` as a cell-volume weighted sum.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_volume()
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::ShapeMismatch(format!(
                "grids differ: {:?} vs {:?}",
                self.spec, other.spec
            )));
        }
        Ok(())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            spec: self.spec,
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            spec: self.spec,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }
}

/// Discrete L2 norm `sqrt(Σ v² · vol)` of a flat array.
///
/// Fails on non-finite entries, which is how callers detect blow-up.
pub fn weighted_l2(values: &[f64], cell_volume: f64) -> Result<f64> {
    let mut acc = 0.0;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::BlowUp {
                variable: "norm input".into(),
            });
        }
        acc += v * v;
    }
    Ok((acc * cell_volume).sqrt())
}

/// Discrete L2 norm of the difference of two flat arrays.
pub fn weighted_l2_distance(a: &[f64], b: &[f64], cell_volume: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        if !d.is_finite() {
            return Err(Error::BlowUp {
                variable: "norm input".into(),
            });
        }
        acc += d * d;
    }
    Ok((acc * cell_volume).sqrt())
}

/// Cell-volume weighted inner product `Σ a·b·vol`.
pub fn weighted_dot(a: &[f64], b: &[f64], cell_volume: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * cell_volume
}

pub fn l2_norm(f: &ScalarField) -> Result<f64> {
    weighted_l2(f.values(), f.spec().cell_volume())
}

/// A model state made of one or more named variables on a common discretization.
///
/// Every dynamical system in the crate steps a type implementing this trait;
/// the engine only ever touches states through it.
pub trait State: Clone + Send + Sync + std::fmt::Debug {
    fn variable_names(&self) -> &'static [&'static str];
    fn values(&self, var: usize) -> &[f64];
    fn values_mut(&mut self, var: usize) -> &mut [f64];
    /// Quadrature weight of one degree of freedom.
    fn cell_volume(&self) -> f64;

    fn variable_count(&self) -> usize {
        self.variable_names().len()
    }

    fn variable_index(&self, name: &str) -> Option<usize> {
        self.variable_names().iter().position(|&n| n == name)
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.variable_count() == other.variable_count()
            && self.cell_volume() == other.cell_volume()
            && (0..self.variable_count()).all(|v| self.values(v).len() == other.values(v).len())
    }

    /// `self += alpha * other`, variable by variable.
    fn axpy(&mut self, alpha: f64, other: &Self) {
        for var in 0..self.variable_count() {
            for (d, &s) in self.values_mut(var).iter_mut().zip(other.values(var)) {
                *d += alpha * s;
            }
        }
    }

    /// First variable holding a non-finite entry, if any.
    fn check_finite(&self) -> Result<()> {
        for var in 0..self.variable_count() {
            if !self.values(var).iter().all(|v| v.is_finite()) {
                return Err(Error::BlowUp {
                    variable: self.variable_names()[var].to_string(),
                });
            }
        }
        Ok(())
    }

    /// L2 norm over all variables.
    fn norm(&self) -> Result<f64> {
        let mut acc = 0.0;
        for var in 0..self.variable_count() {
            let n = weighted_l2(self.values(var), self.cell_volume()).map_err(|_| {
                Error::BlowUp {
                    variable: self.variable_names()[var].to_string(),
                }
            })?;
            acc += n * n;
        }
        Ok(acc.sqrt())
    }

    /// L2 distance over all variables.
    fn distance(&self, other: &Self) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch("states have different shapes".into()));
        }
        let mut acc = 0.0;
        for var in 0..self.variable_count() {
            let d = weighted_l2_distance(self.values(var), other.values(var), self.cell_volume())?;
            acc += d * d;
        }
        Ok(acc.sqrt())
    }
}

/// The states of all `N` sub-models at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleState<S> {
    pub members: Vec<S>,
}

impl<S: State> EnsembleState<S> {
    pub fn new(members: Vec<S>) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("ensemble"))?;
        if !members.iter().all(|m| m.same_shape(first)) {
            return Err(Error::ShapeMismatch(
                "ensemble members have different shapes".into(),
            ));
        }
        Ok(Self { members })
    }

    /// `N` copies of one state.
    pub fn replicate(state: &S, n: usize) -> Result<Self> {
        Self::new(vec![state.clone(); n])
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Taxi norm over ensemble members: `Σ_i ‖a_i − b_i‖`.
pub fn taxi_ensemble_distance<S: State>(a: &EnsembleState<S>, b: &EnsembleState<S>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "ensembles have {} and {} members",
            a.len(),
            b.len()
        )));
    }
    a.members
        .iter()
        .zip(&b.members)
        .map(|(x, y)| x.distance(y))
        .sum()
}

pub fn max_over_time(d: &[f64]) -> Result<f64> {
    d.iter()
        .copied()
        .reduce(f64::max)
        .ok_or(Error::Empty("time series"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::VectorState;

    #[test]
    fn grid_rejects_thin_axes_and_bad_spacing() {
        assert!(GridSpec::new(2, 4, 4, 1.0).is_err());
        assert!(GridSpec::new(4, 4, 4, 0.0).is_err());
        assert!(GridSpec::new(4, 4, 4, f64::NAN).is_err());
        assert!(GridSpec::new(3, 3, 3, 0.1).is_ok());
    }

    #[test]
    fn l2_norm_examples() {
        let g = GridSpec::cube(4, 0.5).unwrap();
        assert_eq!(l2_norm(&ScalarField::zeros(g)).unwrap(), 0.0);

        let g16 = GridSpec::cube(16, 1.0).unwrap();
        let mut f = ScalarField::zeros(g16);
        f.values_mut()[123] = 3.0;
        assert_eq!(l2_norm(&f).unwrap(), 3.0);

        // 64 cells * 2^2 * 0.125
        let u = ScalarField::constant(g, 2.0);
        assert!((l2_norm(&u).unwrap() - 32f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn l2_norm_reports_blow_up() {
        let g = GridSpec::cube(3, 1.0).unwrap();
        let mut f = ScalarField::zeros(g);
        f.values_mut()[0] = f64::INFINITY;
        assert!(matches!(l2_norm(&f), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn taxi_distance_examples() {
        let a = EnsembleState::new(vec![VectorState::scalar(1.0), VectorState::scalar(2.0)]).unwrap();
        let b = EnsembleState::new(vec![VectorState::scalar(0.0), VectorState::scalar(0.0)]).unwrap();
        assert_eq!(taxi_ensemble_distance(&a, &b).unwrap(), 3.0);
        assert_eq!(taxi_ensemble_distance(&a, &a).unwrap(), 0.0);

        let one = EnsembleState::new(vec![VectorState::new(vec![3.0, 4.0])]).unwrap();
        let zero = EnsembleState::new(vec![VectorState::new(vec![0.0, 0.0])]).unwrap();
        assert_eq!(taxi_ensemble_distance(&one, &zero).unwrap(), 5.0);

        let short = EnsembleState::new(vec![VectorState::scalar(0.0)]).unwrap();
        assert!(taxi_ensemble_distance(&a, &short).is_err());
    }

    #[test]
    fn max_over_time_examples() {
        assert_eq!(max_over_time(&[0.0]).unwrap(), 0.0);
        assert_eq!(max_over_time(&[1.0, 5.0, 3.0]).unwrap(), 5.0);
        assert_eq!(max_over_time(&[2.5; 7]).unwrap(), 2.5);
        assert!(max_over_time(&[]).is_err());
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = ScalarField::zeros(GridSpec::cube(3, 1.0).unwrap());
        let b = ScalarField::zeros(GridSpec::cube(4, 1.0).unwrap());
        assert!(a.add(&b).is_err());
        assert!(ScalarField::from_vec(*a.spec(), vec![0.0; 5]).is_err());
    }

    #[test]
    fn integer_arithmetic_is_exact() {
        let g = GridSpec::cube(3, 1.0).unwrap();
        let a = ScalarField::from_fn(g, |[x, y, z]| (x + 2.0 * y - z).floor());
        let b = ScalarField::from_fn(g, |[x, _, z]| (3.0 * x * z).floor());
        let s = a.add(&b).unwrap();
        let d = s.sub(&b).unwrap();
        assert_eq!(d, a);
        let p = a.mul(&b).unwrap();
        for ((&pa, &x), &y) in p.values().iter().zip(a.values()).zip(b.values()) {
            assert_eq!(pa, x * y);
        }
        assert_eq!(a.scale(-2.0).scale(-0.5), a);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn field(n: usize) -> impl Strategy<Value = ScalarField> {
            proptest::collection::vec(-10.0..10.0f64, n * n * n).prop_map(move |v| {
                ScalarField::from_vec(GridSpec::cube(n, 0.7).unwrap(), v).unwrap()
            })
        }

        fn ensemble(members: usize, len: usize) -> impl Strategy<Value = EnsembleState<VectorState>> {
            proptest::collection::vec(proptest::collection::vec(-5.0..5.0f64, len), members)
                .prop_map(|ms| EnsembleState::new(ms.into_iter().map(VectorState::new).collect()).unwrap())
        }

        proptest! {
            #[test]
            fn norm_axioms(f in field(4), g in field(4), alpha in -3.0..3.0f64) {
                let nf = l2_norm(&f).unwrap();
                let ng = l2_norm(&g).unwrap();
                prop_assert!((l2_norm(&f.scale(alpha)).unwrap() - alpha.abs() * nf).abs() <= 1e-12 * (1.0 + nf));
                prop_assert!(l2_norm(&f.add(&g).unwrap()).unwrap() <= nf + ng + 1e-12);
                prop_assert_eq!(nf == 0.0, f.values().iter().all(|&v| v == 0.0));
            }

            #[test]
            fn taxi_is_a_metric(
                (a, b, c) in (1usize..=4, 1usize..=8).prop_flat_map(|(m, l)| (ensemble(m, l), ensemble(m, l), ensemble(m, l)))
            ) {
                let ab = taxi_ensemble_distance(&a, &b).unwrap();
                let ba = taxi_ensemble_distance(&b, &a).unwrap();
                let bc = taxi_ensemble_distance(&b, &c).unwrap();
                let ac = taxi_ensemble_distance(&a, &c).unwrap();
                prop_assert!((ab - ba).abs() < 1e-12);
                prop_assert!(ac <= ab + bc + 1e-12);
            }
        }
    }
}
