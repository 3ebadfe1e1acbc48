//! The dynamical-system contract stepped by the supermodel engine, plus two
//! small vector-valued systems used as oracles.

use std::fmt::Debug;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::State;

/// Tumor volume split into proliferating and quiescent parts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Volumes {
    pub total: f64,
    pub proliferating: f64,
    pub quiescent: f64,
}

impl Volumes {
    pub fn mean(items: &[Volumes]) -> Volumes {
        let n = items.len().max(1) as f64;
        let mut acc = Volumes::default();
        for v in items {
            acc.total += v.total;
            acc.proliferating += v.proliferating;
            acc.quiescent += v.quiescent;
        }
        Volumes {
            total: acc.total / n,
            proliferating: acc.proliferating / n,
            quiescent: acc.quiescent / n,
        }
    }
}

/// A deterministic model `dS/dt = tendency(state, params)`.
pub trait DynamicalSystem: Sync {
    type State: State;
    type Params: Clone + Debug + Send + Sync;

    /// Right-hand side evaluated at `state`. Output has the shape of the input.
    fn tendency(&self, state: &Self::State, params: &Self::Params) -> Result<Self::State>;

    /// Variables that may serve as the coupling variable of an ensemble.
    fn couplable(&self) -> &'static [&'static str];

    /// Plausible value range of a variable, used to draw random states.
    fn sample_range(&self, var: usize, params: &Self::Params) -> (f64, f64);

    /// Tumor-style volume metrics, for systems that define them.
    fn volumes(&self, _state: &Self::State, _params: &Self::Params) -> Option<Volumes> {
        None
    }
}

/// Forward Euler: `state + dt * tendency(state, params)`.
pub fn explicit_step<S: DynamicalSystem>(
    sys: &S,
    state: &S::State,
    params: &S::Params,
    dt: f64,
) -> Result<S::State> {
    check_dt(dt)?;
    let tendency = sys.tendency(state, params)?;
    let mut next = state.clone();
    next.axpy(dt, &tendency);
    next.check_finite()?;
    Ok(next)
}

pub(crate) fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "time step must be positive, got {dt}"
        )));
    }
    Ok(())
}

/// Empirical Lipschitz constant of the tendency operator.
///
/// Draws `samples` random pairs `(B, D)` where `B` is uniform over each
/// variable's plausible range and `D` is `B` perturbed by at most
/// `scale` times that range, and returns the largest observed ratio
/// `‖S(B) − S(D)‖ / ‖B − D‖`. This is a lower bound on the true constant.
/// `template` only supplies the shape of the states.
pub fn estimate_lipschitz<S: DynamicalSystem>(
    sys: &S,
    params: &S::Params,
    template: &S::State,
    samples: usize,
    scale: f64,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    const RESAMPLE_LIMIT: usize = 16;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<f64> = None;
    for _ in 0..samples {
        for _ in 0..RESAMPLE_LIMIT {
            let mut b = template.clone();
            let mut d = template.clone();
            for var in 0..template.variable_count() {
                let (lo, hi) = sys.sample_range(var, params);
                let width = hi - lo;
                for (bv, dv) in b.values_mut(var).iter_mut().zip(d.values_mut(var)) {
                    let base = lo + width * rng.random::<f64>();
                    *bv = base;
                    *dv = base + scale * width * (2.0 * rng.random::<f64>() - 1.0);
                }
            }
            let gap = b.distance(&d)?;
            if gap == 0.0 {
                continue;
            }
            let sb = sys.tendency(&b, params)?;
            let sd = sys.tendency(&d, params)?;
            let ratio = sb.distance(&sd)? / gap;
            best = Some(best.map_or(ratio, |m: f64| m.max(ratio)));
            break;
        }
    }
    best.ok_or(Error::DegenerateSamples(samples))
}

/// A plain vector of reals with a single variable `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorState {
    pub values: Vec<f64>,
    pub cell_volume: f64,
}

impl VectorState {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            cell_volume: 1.0,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(vec![value])
    }
}

impl State for VectorState {
    fn variable_names(&self) -> &'static [&'static str] {
        &["u"]
    }

    fn values(&self, var: usize) -> &[f64] {
        assert_eq!(var, 0, "vector state has a single variable");
        &self.values
    }

    fn values_mut(&mut self, var: usize) -> &mut [f64] {
        assert_eq!(var, 0, "vector state has a single variable");
        &mut self.values
    }

    fn cell_volume(&self) -> f64 {
        self.cell_volume
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticParams {
    /// Growth rate.
    pub r: f64,
    /// Carrying capacity, positive.
    pub cap: f64,
}

impl LogisticParams {
    pub fn new(r: f64, cap: f64) -> Result<Self> {
        if !(cap > 0.0) {
            return Err(Error::InvalidArgument(format!("capacity must be positive, got {cap}")));
        }
        Ok(Self { r, cap })
    }
}

#[inline]
pub fn logistic_tendency(b: f64, p: &LogisticParams) -> f64 {
    p.r * b * (1.0 - b / p.cap)
}

/// Independent logistic growth in every component.
#[derive(Clone, Copy, Debug, Default)]
pub struct LogisticSystem;

impl DynamicalSystem for LogisticSystem {
    type State = VectorState;
    type Params = LogisticParams;

    fn tendency(&self, state: &VectorState, params: &LogisticParams) -> Result<VectorState> {
        Ok(VectorState {
            values: state.values.iter().map(|&b| logistic_tendency(b, params)).collect(),
            cell_volume: state.cell_volume,
        })
    }

    fn couplable(&self) -> &'static [&'static str] {
        &["u"]
    }

    fn sample_range(&self, _var: usize, params: &LogisticParams) -> (f64, f64) {
        (0.0, params.cap)
    }
}

/// `S(u) = λ u`; the parameter is `λ`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearSystem;

impl DynamicalSystem for LinearSystem {
    type State = VectorState;
    type Params = f64;

    fn tendency(&self, state: &VectorState, lambda: &f64) -> Result<VectorState> {
        Ok(VectorState {
            values: state.values.iter().map(|&u| lambda * u).collect(),
            cell_volume: state.cell_volume,
        })
    }

    fn couplable(&self) -> &'static [&'static str] {
        &["u"]
    }

    fn sample_range(&self, _var: usize, _lambda: &f64) -> (f64, f64) {
        (-1.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn logistic_examples() {
        let p = LogisticParams::new(1.0, 2.0).unwrap();
        assert_eq!(logistic_tendency(0.0, &p), 0.0);
        assert_eq!(logistic_tendency(2.0, &p), 0.0);
        assert_eq!(logistic_tendency(1.0, &p), 0.5);
        assert!(LogisticParams::new(1.0, 0.0).is_err());
    }

    #[test]
    fn explicit_step_examples() {
        let p = LogisticParams::new(1.0, 2.0).unwrap();
        let s = VectorState::scalar(1.0);
        let next = explicit_step(&LogisticSystem, &s, &p, 0.1).unwrap();
        assert!((next.values[0] - 1.05).abs() < 1e-15);

        let still = explicit_step(&LinearSystem, &VectorState::new(vec![1.0, -2.0]), &0.0, 0.3).unwrap();
        assert_eq!(still.values, vec![1.0, -2.0]);

        assert!(explicit_step(&LogisticSystem, &s, &p, 0.0).is_err());
        assert!(explicit_step(&LogisticSystem, &s, &p, -0.1).is_err());
    }

    #[test]
    fn explicit_step_flags_blow_up() {
        let err = explicit_step(&LinearSystem, &VectorState::scalar(1e300), &1e300, 1.0).unwrap_err();
        assert!(matches!(err, Error::BlowUp { ref variable } if variable == "u"));
    }

    #[test]
    fn lipschitz_of_linear_and_zero_systems() {
        let template = VectorState::new(vec![0.0; 6]);
        for lambda in [0.5, 2.0, -3.0] {
            for seed in [0, 1, 99] {
                let l = estimate_lipschitz(&LinearSystem, &lambda, &template, 3, 1e-2, seed).unwrap();
                assert!((l - f64::abs(lambda)).abs() < 1e-6, "λ={lambda} seed={seed} got {l}");
            }
        }
        let z = estimate_lipschitz(&LinearSystem, &0.0, &template, 4, 1e-2, 7).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn lipschitz_rejects_bad_arguments() {
        let t = VectorState::scalar(0.0);
        assert!(estimate_lipschitz(&LinearSystem, &1.0, &t, 0, 1e-2, 0).is_err());
        assert!(estimate_lipschitz(&LinearSystem, &1.0, &t, 1, 0.0, 0).is_err());
        // zero-width sampling range makes every pair degenerate
        let p = LogisticParams { r: 1.0, cap: 0.0 };
        assert!(matches!(
            estimate_lipschitz(&LogisticSystem, &p, &t, 2, 1e-2, 0),
            Err(Error::DegenerateSamples(2))
        ));
    }

    #[test]
    fn lipschitz_is_deterministic() {
        let p = LogisticParams::new(1.3, 2.0).unwrap();
        let t = VectorState::new(vec![0.0; 10]);
        let a = estimate_lipschitz(&LogisticSystem, &p, &t, 20, 1e-2, 5).unwrap();
        let b = estimate_lipschitz(&LogisticSystem, &p, &t, 20, 1e-2, 5).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        // |r (1 - 2b/cap)| <= r on [0, cap]
        assert!(a > 0.0 && a <= 1.3 * 1.01);
    }

    proptest! {
        #[test]
        fn lipschitz_recovers_linear_rate(lambda in -5.0..5.0f64, samples in 1usize..6, seed in any::<u64>()) {
            let t = VectorState::new(vec![0.0; 4]);
            let l = estimate_lipschitz(&LinearSystem, &lambda, &t, samples, 1e-2, seed).unwrap();
            prop_assert!((l - lambda.abs()).abs() < 1e-6);
        }

        #[test]
        fn explicit_step_is_linear_in_dt(b in 0.0..2.0f64, dt1 in 0.001..0.5f64, dt2 in 0.001..0.5f64) {
            let p = LogisticParams::new(0.8, 2.0).unwrap();
            let s = VectorState::scalar(b);
            let stepped = explicit_step(&LogisticSystem, &s, &p, dt1 + dt2).unwrap();
            prop_assert_eq!(stepped.values[0], b + (dt1 + dt2) * logistic_tendency(b, &p));
        }
    }
}
