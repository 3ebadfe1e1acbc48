use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::GridSpec;
use crate::io::{fmt_f64, KvDocument};
use crate::tumor::{InitialCondition, TumorParams};

/// How sub-model parameters deviate from the reference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Variant {
    /// Only the sensitive parameters are perturbed.
    #[default]
    V0,
    /// Sensitive as in V0, everything else ±10% around the reference.
    V1,
    /// Sensitive as in V0, everything else ±30% around the reference.
    V2,
    /// Three sub-models: ±10% around, 10–20% below and 10–20% above the
    /// reference, applied to every parameter.
    V3,
}

/// Where sensitive-parameter draws fall relative to the reference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scheme {
    /// `[ref·(1 − s), ref·(1 + s)]`
    #[default]
    Around,
    /// `[ref·(1 − s), ref]`
    Below,
    /// `[ref, ref·(1 + s)]`
    Above,
    /// Members cycle through around, below, above.
    Mixed,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(Error::InvalidArgument(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
    };
}

keyword_enum!(Variant, "variant", Variant::V0 => "v0", Variant::V1 => "v1", Variant::V2 => "v2", Variant::V3 => "v3");
keyword_enum!(Scheme, "scheme", Scheme::Around => "around", Scheme::Below => "below", Scheme::Above => "above", Scheme::Mixed => "mixed");

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub reference: TumorParams,
    pub initial: InitialCondition,

    pub dt: f64,
    /// Steps per training epoch; also the length of the ground truth and of
    /// the prediction runs.
    pub steps: usize,
    pub epochs: usize,
    pub tol: f64,
    pub keep_every: usize,
    pub seed: u64,

    pub n: usize,
    pub k_nudge: f64,
    pub a_rate: f64,
    pub c_init: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub exclude_self_in_nudge: bool,
    pub nudge_in_prediction: bool,

    pub spread: f64,
    pub variant: Variant,
    pub scheme: Scheme,

    pub lipschitz_samples: usize,
    pub lipschitz_scale: f64,
    pub beta_tol: f64,
    pub gamma_tol: f64,

    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::cube(16, 1.0).expect("valid default grid"),
            reference: TumorParams::default(),
            initial: InitialCondition::default(),
            dt: 0.1,
            steps: 300,
            epochs: 30,
            tol: 1e-3,
            keep_every: 1,
            seed: 1,
            n: 3,
            k_nudge: 0.9,
            a_rate: 1.0,
            c_init: 0.5,
            c_min: 0.1,
            c_max: 0.9,
            exclude_self_in_nudge: false,
            nudge_in_prediction: true,
            spread: 0.4,
            variant: Variant::V0,
            scheme: Scheme::Around,
            lipschitz_samples: 8,
            lipschitz_scale: 1e-2,
            beta_tol: 1e-2,
            gamma_tol: 1e-2,
            out: PathBuf::from("runs/default"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::parse(key, format!("bad value `{value}`: {e}")))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        self.reference.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.steps == 0 || self.keep_every == 0 {
            return bad("steps and keep_every must be positive".into());
        }
        if self.n == 0 {
            return bad("need at least one sub-model".into());
        }
        if !(0.0..1.0).contains(&self.spread) {
            return bad(format!("spread must lie in [0, 1), got {}", self.spread));
        }
        if self.variant == Variant::V3 && self.n != 3 {
            return bad(format!("variant v3 is defined for exactly 3 sub-models, got {}", self.n));
        }
        if !(self.a_rate > 0.0 && self.a_rate <= 1.0) {
            return bad(format!("a must lie in (0, 1], got {}", self.a_rate));
        }
        if !(self.c_min <= self.c_init && self.c_init <= self.c_max) {
            return bad(format!(
                "c_init {} outside [{}, {}]",
                self.c_init, self.c_min, self.c_max
            ));
        }
        if !(self.initial.width > 0.0) {
            return bad("initial width must be positive".into());
        }
        if self.lipschitz_samples == 0 {
            return bad("lipschitz_samples must be positive".into());
        }
        Ok(())
    }

    pub fn to_doc(&self) -> KvDocument {
        let mut d = KvDocument::default();
        let g = &self.grid;
        d.set("grid.nx", g.nx.to_string());
        d.set("grid.ny", g.ny.to_string());
        d.set("grid.nz", g.nz.to_string());
        d.set("grid.h", fmt_f64(g.h));
        d.set("initial.width", fmt_f64(self.initial.width));
        d.set(
            "initial.amplitude",
            self.initial.amplitude.map_or_else(|| "b_norm".to_string(), fmt_f64),
        );
        d.set("run.dt", fmt_f64(self.dt));
        d.set("run.steps", self.steps.to_string());
        d.set("run.epochs", self.epochs.to_string());
        d.set("run.tol", fmt_f64(self.tol));
        d.set("run.keep_every", self.keep_every.to_string());
        d.set("run.seed", self.seed.to_string());
        d.set("run.out", self.out.display().to_string());
        d.set("supermodel.n", self.n.to_string());
        d.set("supermodel.k", fmt_f64(self.k_nudge));
        d.set("supermodel.a", fmt_f64(self.a_rate));
        d.set("supermodel.c_init", fmt_f64(self.c_init));
        d.set("supermodel.c_min", fmt_f64(self.c_min));
        d.set("supermodel.c_max", fmt_f64(self.c_max));
        d.set("supermodel.exclude_self_in_nudge", self.exclude_self_in_nudge.to_string());
        d.set("supermodel.nudge_in_prediction", self.nudge_in_prediction.to_string());
        d.set("submodels.spread", fmt_f64(self.spread));
        d.set("submodels.variant", self.variant.to_string());
        d.set("submodels.scheme", self.scheme.to_string());
        d.set("diagnostics.lipschitz_samples", self.lipschitz_samples.to_string());
        d.set("diagnostics.lipschitz_scale", fmt_f64(self.lipschitz_scale));
        d.set("diagnostics.beta_tol", fmt_f64(self.beta_tol));
        d.set("diagnostics.gamma_tol", fmt_f64(self.gamma_tol));
        for (name, v) in TumorParams::NAMES.iter().zip(self.reference.to_array()) {
            d.set(format!("reference.{name}"), fmt_f64(v));
        }
        d
    }

    /// Applies one `section.key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "grid.nx" | "grid.ny" | "grid.nz" | "grid.h" | "grid.n" => {
                let g = self.grid;
                self.grid = match key {
                    "grid.nx" => GridSpec::new(parse_value(key, v)?, g.ny, g.nz, g.h)?,
                    "grid.ny" => GridSpec::new(g.nx, parse_value(key, v)?, g.nz, g.h)?,
                    "grid.nz" => GridSpec::new(g.nx, g.ny, parse_value(key, v)?, g.h)?,
                    "grid.n" => GridSpec::cube(parse_value(key, v)?, g.h)?,
                    _ => GridSpec::new(g.nx, g.ny, g.nz, parse_value(key, v)?)?,
                };
            }
            "initial.width" => self.initial.width = parse_value(key, v)?,
            "initial.amplitude" => {
                self.initial.amplitude = if v == "b_norm" { None } else { Some(parse_value(key, v)?) }
            }
            "run.dt" => self.dt = parse_value(key, v)?,
            "run.steps" => self.steps = parse_value(key, v)?,
            "run.epochs" => self.epochs = parse_value(key, v)?,
            "run.tol" => self.tol = parse_value(key, v)?,
            "run.keep_every" => self.keep_every = parse_value(key, v)?,
            "run.seed" => self.seed = parse_value(key, v)?,
            "run.out" => self.out = PathBuf::from(v),
            "supermodel.n" => self.n = parse_value(key, v)?,
            "supermodel.k" => self.k_nudge = parse_value(key, v)?,
            "supermodel.a" => self.a_rate = parse_value(key, v)?,
            "supermodel.c_init" => self.c_init = parse_value(key, v)?,
            "supermodel.c_min" => self.c_min = parse_value(key, v)?,
            "supermodel.c_max" => self.c_max = parse_value(key, v)?,
            "supermodel.exclude_self_in_nudge" => self.exclude_self_in_nudge = parse_value(key, v)?,
            "supermodel.nudge_in_prediction" => self.nudge_in_prediction = parse_value(key, v)?,
            "submodels.spread" => self.spread = parse_value(key, v)?,
            "submodels.variant" => self.variant = v.parse()?,
            "submodels.scheme" => self.scheme = v.parse()?,
            "diagnostics.lipschitz_samples" => self.lipschitz_samples = parse_value(key, v)?,
            "diagnostics.lipschitz_scale" => self.lipschitz_scale = parse_value(key, v)?,
            "diagnostics.beta_tol" => self.beta_tol = parse_value(key, v)?,
            "diagnostics.gamma_tol" => self.gamma_tol = parse_value(key, v)?,
            _ => match key.strip_prefix("reference.") {
                Some(name) => self.reference.set(name, parse_value(key, v)?)?,
                None => return Err(Error::InvalidArgument(format!("unknown config key `{key}`"))),
            },
        }
        Ok(())
    }

    pub fn from_doc(doc: &KvDocument) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in &doc.entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_doc(&KvDocument::read(path)?)
    }

    /// Applies `key=value` strings in order, then re-validates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v)?;
        }
        self.validate()
    }

    pub fn emit(&self) -> String {
        self.to_doc().emit()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn emit_parse_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_overrides(&[
            "grid.n=8",
            "supermodel.k=2.0",
            "submodels.variant=V2",
            "submodels.scheme=below",
            "reference.d_b=0.05",
            "initial.amplitude=0.75",
            "run.dt=0.030000000000000002",
        ])
        .unwrap();
        let doc = KvDocument::parse(&cfg.emit(), "emit").unwrap();
        assert_eq!(ExperimentConfig::from_doc(&doc).unwrap(), cfg);
        assert_eq!(cfg.grid.nx, 8);
        assert_eq!(cfg.reference.d_b, 0.05);
    }

    #[test]
    fn bad_settings_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.apply_overrides(&["nope=1"]).is_err());
        assert!(ExperimentConfig::default().apply_overrides(&["submodels.spread=1.0"]).is_err());
        assert!(ExperimentConfig::default().apply_overrides(&["submodels.variant=v9"]).is_err());
        assert!(ExperimentConfig::default()
            .apply_overrides(&["submodels.variant=v3", "supermodel.n=4"])
            .is_err());
        assert!(ExperimentConfig::default().apply_overrides(&["run.dt"]).is_err());
        assert!(ExperimentConfig::default().apply_overrides(&["supermodel.c_init=0.95"]).is_err());
    }
}
