use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, Scheme, Variant};
use crate::error::{Error, Result};
use crate::tumor::TumorParams;

/// Redraws allowed per sub-model before giving up.
pub const DRAW_BUDGET: usize = 1000;

/// Relative interval `[lo, hi]`, applied as `ref·(1 + U[lo, hi])`.
type Band = (f64, f64);

fn scheme_band(scheme: Scheme, member: usize, s: f64) -> Band {
    let scheme = match scheme {
        Scheme::Mixed => [Scheme::Around, Scheme::Below, Scheme::Above][member % 3],
        other => other,
    };
    match scheme {
        Scheme::Around | Scheme::Mixed => (-s, s),
        Scheme::Below => (-s, 0.0),
        Scheme::Above => (0.0, s),
    }
}

fn bands(cfg: &ExperimentConfig, member: usize) -> [Band; 21] {
    let sensitive = scheme_band(cfg.scheme, member, cfg.spread);
    let rest = match cfg.variant {
        Variant::V0 => (0.0, 0.0),
        Variant::V1 => (-0.1, 0.1),
        Variant::V2 => (-0.3, 0.3),
        Variant::V3 => {
            let all = [(-0.1, 0.1), (-0.2, -0.1), (0.1, 0.2)][member];
            return [all; 21];
        }
    };
    std::array::from_fn(|k| {
        if TumorParams::SENSITIVE.contains(&TumorParams::NAMES[k]) {
            sensitive
        } else {
            rest
        }
    })
}

/// Draws `cfg.n` parameter sets around `reference`, uniformly within the
/// intervals of the configured variant and scheme. Draws that violate the
/// parameter invariants are repeated.
pub fn instantiate_submodels(reference: &TumorParams, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<TumorParams>> {
    if cfg.n == 0 {
        return Err(Error::InvalidArgument("need at least one sub-model".into()));
    }
    if cfg.variant == Variant::V3 && cfg.n != 3 {
        return Err(Error::InvalidArgument("variant v3 needs exactly 3 sub-models".into()));
    }
    reference.validate()?;
    let base = reference.to_array();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cfg.n);
    for member in 0..cfg.n {
        let b = bands(cfg, member);
        let mut accepted = None;
        for _ in 0..DRAW_BUDGET {
            let values: [f64; 21] = std::array::from_fn(|k| {
                let (lo, hi) = b[k];
                let u = if lo == hi { lo } else { rng.random_range(lo..=hi) };
                base[k] * (1.0 + u)
            });
            let p = TumorParams::from_array(values);
            if p.validate().is_ok() {
                accepted = Some(p);
                break;
            }
        }
        out.push(accepted.ok_or(Error::DrawBudgetExhausted(DRAW_BUDGET))?);
    }
    Ok(out)
}
