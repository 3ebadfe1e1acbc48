//! Five-field tumor progression model: tumor cell density `b`, angiogenic
//! factor `c`, oxygen `o`, extracellular matrix `M` and attractant `A`,
//! advanced by forward Euler with the cross-diffusion term split through an
//! explicit auxiliary flux `J`.

pub mod stencil;

use crate::dynamics::{explicit_step, DynamicalSystem, Volumes};
use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField, State};

/// Model coefficients. Defaults are the reference parametrization.
#[derive(Clone, Debug, PartialEq)]
pub struct TumorParams {
    /// Minimum tumor cell density.
    pub b_min: f64,
    /// Maximum tumor cell density.
    pub b_max: f64,
    /// Normal tumor cell density.
    pub b_norm: f64,
    /// Tumor cell diffusion rate.
    pub d_b: f64,
    /// Chemoattractant sensitivity.
    pub r_b: f64,
    /// Oxygen level above which cells proliferate.
    pub o_prol: f64,
    /// Oxygen level below which cells die of hypoxia.
    pub o_death: f64,
    /// Proliferation time.
    pub t_prol: f64,
    /// Survival time under hypoxia.
    pub t_death: f64,
    /// Maximum stimulated mitosis rate.
    pub p_b: f64,
    /// Instantaneous reaction rate of the attractant stimulus.
    pub tau_b: f64,
    /// ECM decay rate.
    pub beta_m: f64,
    /// Attractant production rate.
    pub gamma_a: f64,
    /// Attractant (digested ECM) diffusion coefficient.
    pub chi_aa: f64,
    /// Attractant (digested ECM) decay coefficient.
    pub gamma_oa: f64,
    /// TAF diffusion rate.
    pub chi_c: f64,
    /// TAF decay rate.
    pub gamma_c: f64,
    /// Oxygen diffusion rate.
    pub alpha_o: f64,
    /// Oxygen consumption rate.
    pub gamma_o: f64,
    /// Oxygen delivery rate.
    pub delta_o: f64,
    /// Maximal oxygen concentration.
    pub o_max: f64,
}

impl Default for TumorParams {
    fn default() -> Self {
        Self {
            b_min: 0.0,
            b_max: 2.0,
            b_norm: 1.0,
            d_b: 0.1,
            r_b: 0.3,
            o_prol: 10.0,
            o_death: 2.0,
            t_prol: 10.0,
            t_death: 100.0,
            p_b: 0.001,
            tau_b: 0.5,
            beta_m: 0.0625,
            gamma_a: 0.032,
            chi_aa: 0.000641,
            gamma_oa: 0.000641,
            chi_c: 0.0000555,
            gamma_c: 0.01,
            alpha_o: 0.0000555,
            gamma_o: 0.01,
            delta_o: 0.4,
            o_max: 60.0,
        }
    }
}

impl TumorParams {
    pub const NAMES: [&'static str; 21] = [
        "b_min", "b_max", "b_norm", "d_b", "r_b", "o_prol", "o_death", "t_prol", "t_death", "p_b",
        "tau_b", "beta_m", "gamma_a", "chi_aa", "gamma_oa", "chi_c", "gamma_c", "alpha_o",
        "gamma_o", "delta_o", "o_max",
    ];

    /// The four parameters the model output is most sensitive to.
    pub const SENSITIVE: [&'static str; 4] = ["o_prol", "o_death", "t_prol", "t_death"];

    pub fn to_array(&self) -> [f64; 21] {
        [
            self.b_min, self.b_max, self.b_norm, self.d_b, self.r_b, self.o_prol, self.o_death,
            self.t_prol, self.t_death, self.p_b, self.tau_b, self.beta_m, self.gamma_a,
            self.chi_aa, self.gamma_oa, self.chi_c, self.gamma_c, self.alpha_o, self.gamma_o,
            self.delta_o, self.o_max,
        ]
    }

    pub fn from_array(a: [f64; 21]) -> Self {
        Self {
            b_min: a[0],
            b_max: a[1],
            b_norm: a[2],
            d_b: a[3],
            r_b: a[4],
            o_prol: a[5],
            o_death: a[6],
            t_prol: a[7],
            t_death: a[8],
            p_b: a[9],
            tau_b: a[10],
            beta_m: a[11],
            gamma_a: a[12],
            chi_aa: a[13],
            gamma_oa: a[14],
            chi_c: a[15],
            gamma_c: a[16],
            alpha_o: a[17],
            gamma_o: a[18],
            delta_o: a[19],
            o_max: a[20],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::NAMES
            .iter()
            .position(|&n| n == name)
            .map(|i| self.to_array()[i])
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = Self::NAMES
            .iter()
            .position(|&n| n == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown tumor parameter `{name}`")))?;
        let mut a = self.to_array();
        a[i] = value;
        *self = Self::from_array(a);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return bad("parameters must be finite".into());
        }
        if !(self.b_min < self.b_norm && self.b_norm < self.b_max) {
            return bad(format!(
                "need b_min < b_norm < b_max, got {} / {} / {}",
                self.b_min, self.b_norm, self.b_max
            ));
        }
        if !(self.o_death < self.o_prol && self.o_prol <= self.o_max) {
            return bad(format!(
                "need o_death < o_prol <= o_max, got {} / {} / {}",
                self.o_death, self.o_prol, self.o_max
            ));
        }
        if !(self.t_prol > 0.0 && self.t_death > 0.0) {
            return bad("proliferation and survival times must be positive".into());
        }
        let rates = [
            self.d_b, self.r_b, self.p_b, self.tau_b, self.beta_m, self.gamma_a, self.chi_aa,
            self.gamma_oa, self.chi_c, self.gamma_c, self.alpha_o, self.gamma_o, self.delta_o,
        ];
        if rates.iter().any(|&r| r < 0.0) {
            return bad("rates must be non-negative".into());
        }
        Ok(())
    }
}

/// The five coupled fields of one model instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub b: ScalarField,
    pub c: ScalarField,
    pub o: ScalarField,
    pub m: ScalarField,
    pub a: ScalarField,
}

impl ModelState {
    pub const VARIABLES: [&'static str; 5] = ["b", "c", "o", "M", "A"];

    pub fn new(b: ScalarField, c: ScalarField, o: ScalarField, m: ScalarField, a: ScalarField) -> Result<Self> {
        let g = *b.spec();
        if [&c, &o, &m, &a].iter().any(|f| *f.spec() != g) {
            return Err(Error::ShapeMismatch("all five fields must share one grid".into()));
        }
        Ok(Self { b, c, o, m, a })
    }

    /// Spatially uniform state.
    pub fn uniform(grid: GridSpec, b: f64, c: f64, o: f64, m: f64, a: f64) -> Self {
        Self {
            b: ScalarField::constant(grid, b),
            c: ScalarField::constant(grid, c),
            o: ScalarField::constant(grid, o),
            m: ScalarField::constant(grid, m),
            a: ScalarField::constant(grid, a),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.b.spec()
    }

    pub fn fields(&self) -> [&ScalarField; 5] {
        [&self.b, &self.c, &self.o, &self.m, &self.a]
    }

    fn field_mut(&mut self, var: usize) -> &mut ScalarField {
        match var {
            0 => &mut self.b,
            1 => &mut self.c,
            2 => &mut self.o,
            3 => &mut self.m,
            4 => &mut self.a,
            _ => panic!("tumor state has 5 variables, asked for {var}"),
        }
    }
}

impl State for ModelState {
    fn variable_names(&self) -> &'static [&'static str] {
        &Self::VARIABLES
    }

    fn values(&self, var: usize) -> &[f64] {
        self.fields()[var].values()
    }

    fn values_mut(&mut self, var: usize) -> &mut [f64] {
        self.field_mut(var).values_mut()
    }

    fn cell_volume(&self) -> f64 {
        self.grid().cell_volume()
    }
}

/// Auxiliary flux `J` of the split cross-diffusion term.
#[derive(Clone, Debug, PartialEq)]
pub struct FluxField {
    pub jx: ScalarField,
    pub jy: ScalarField,
    pub jz: ScalarField,
}

/// `J = −D_b b (∇((b − b_norm)/(b_max − b_norm)·[b_norm ≤ b ≤ b_max]) + r_b ∇A)`.
pub fn compute_flux(s: &ModelState, p: &TumorParams) -> FluxField {
    let g = *s.grid();
    let span = p.b_max - p.b_norm;
    let gated: Vec<f64> = s
        .b
        .values()
        .iter()
        .map(|&b| {
            if p.b_norm <= b && b <= p.b_max {
                (b - p.b_norm) / span
            } else {
                0.0
            }
        })
        .collect();
    let gb = stencil::gradient(&g, &gated);
    let ga = stencil::gradient(&g, s.a.values());
    let comp = |axis: usize| -> ScalarField {
        let v = s
            .b
            .values()
            .iter()
            .enumerate()
            .map(|(c, &b)| -p.d_b * b * (gb[axis][c] + p.r_b * ga[axis][c]))
            .collect();
        ScalarField::from_vec(g, v).expect("flux matches grid")
    };
    FluxField {
        jx: comp(0),
        jy: comp(1),
        jz: comp(2),
    }
}

/// Right-hand side of all five equations. `source_mask` (0/1 per cell)
/// restricts oxygen delivery; `None` delivers everywhere.
pub fn tumor_tendency(s: &ModelState, p: &TumorParams, source_mask: Option<&ScalarField>) -> Result<ModelState> {
    let g = *s.grid();
    let flux = compute_flux(s, p);
    let div_j = stencil::divergence(&g, &[flux.jx.into_vec(), flux.jy.into_vec(), flux.jz.into_vec()]);
    let lap_c = stencil::laplacian(&g, s.c.values());
    let lap_o = stencil::laplacian(&g, s.o.values());
    let lap_a = stencil::laplacian(&g, s.a.values());

    let n = g.len();
    let mut db = vec![0.0; n];
    let mut dc = vec![0.0; n];
    let mut d_o = vec![0.0; n];
    let mut dm = vec![0.0; n];
    let mut da = vec![0.0; n];
    let (bv, cv, ov, mv, av) = (s.b.values(), s.c.values(), s.o.values(), s.m.values(), s.a.values());
    for i in 0..n {
        let (b, c, o, m, a) = (bv[i], cv[i], ov[i], mv[i], av[i]);
        let hypoxic = o < p.o_death;
        let proliferating = o > p.o_prol;

        let mut rate_b = -div_j[i];
        if hypoxic {
            rate_b -= b / p.t_death;
        }
        if proliferating {
            let stim = p.tau_b * a / (p.tau_b * a + 1.0);
            rate_b += b / p.t_prol * (1.0 + stim * p.p_b) * (1.0 - b / p.b_max);
        }
        db[i] = rate_b;

        let mut rate_c = p.chi_c * lap_c[i] - p.gamma_c * o * c;
        if hypoxic {
            rate_c += b * (1.0 - c);
        }
        dc[i] = rate_c;

        let delivery = source_mask.map_or(1.0, |mask| mask.values()[i]);
        d_o[i] = p.alpha_o * lap_o[i] - p.gamma_o * b * o + p.delta_o * delivery * (p.o_max - o);
        dm[i] = -p.beta_m * m * b;
        da[i] = p.gamma_a * m * b + p.chi_aa * lap_a[i] - p.gamma_oa * a;
    }

    let field = |v: Vec<f64>| ScalarField::from_vec(g, v).expect("tendency matches grid");
    let out = ModelState {
        b: field(db),
        c: field(dc),
        o: field(d_o),
        m: field(dm),
        a: field(da),
    };
    out.check_finite()?;
    Ok(out)
}

/// Tumor model on a fixed grid with an optional static oxygen source mask.
#[derive(Clone, Debug)]
pub struct TumorSystem {
    pub grid: GridSpec,
    pub source_mask: Option<ScalarField>,
}

impl TumorSystem {
    pub fn new(grid: GridSpec) -> Self {
        Self {
            grid,
            source_mask: None,
        }
    }

    pub fn with_source_mask(grid: GridSpec, mask: ScalarField) -> Result<Self> {
        if *mask.spec() != grid {
            return Err(Error::ShapeMismatch("source mask grid differs from model grid".into()));
        }
        Ok(Self {
            grid,
            source_mask: Some(mask),
        })
    }
}

impl DynamicalSystem for TumorSystem {
    type State = ModelState;
    type Params = TumorParams;

    fn tendency(&self, state: &ModelState, params: &TumorParams) -> Result<ModelState> {
        tumor_tendency(state, params, self.source_mask.as_ref())
    }

    fn couplable(&self) -> &'static [&'static str] {
        &ModelState::VARIABLES
    }

    fn sample_range(&self, var: usize, p: &TumorParams) -> (f64, f64) {
        match var {
            0 => (p.b_min, p.b_max),
            2 => (0.0, p.o_max),
            _ => (0.0, 1.0),
        }
    }

    fn volumes(&self, state: &ModelState, params: &TumorParams) -> Option<Volumes> {
        Some(tumor_volumes(state, params))
    }
}

/// One forward-Euler step of the whole split system.
pub fn tumor_step(sys: &TumorSystem, s: &ModelState, p: &TumorParams, dt: f64) -> Result<ModelState> {
    explicit_step(sys, s, p, dt)
}

/// Total, proliferating (`o > o_prol`) and quiescent (the rest) tumor volume.
pub fn tumor_volumes(s: &ModelState, p: &TumorParams) -> Volumes {
    let vol = s.grid().cell_volume();
    let mut total = 0.0;
    let mut prolif = 0.0;
    for (&b, &o) in s.b.values().iter().zip(s.o.values()) {
        total += b;
        if o > p.o_prol {
            prolif += b;
        }
    }
    let total = total * vol;
    let proliferating = prolif * vol;
    Volumes {
        total,
        proliferating,
        quiescent: total - proliferating,
    }
}

/// Gaussian tumor seed in the middle of the domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialCondition {
    /// Standard deviation as a fraction of the domain edge length.
    pub width: f64,
    /// Peak density; `None` uses `b_norm`.
    pub amplitude: Option<f64>,
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self {
            width: 0.15,
            amplitude: None,
        }
    }
}

impl InitialCondition {
    /// `b` = Gaussian bump, `c = 0`, `o = o_max`, `M = 1`, `A = 0`.
    pub fn build(&self, grid: GridSpec, p: &TumorParams) -> ModelState {
        let amp = self.amplitude.unwrap_or(p.b_norm);
        let lx = grid.nx as f64 * grid.h;
        let ly = grid.ny as f64 * grid.h;
        let lz = grid.nz as f64 * grid.h;
        let sigma = self.width * lx.min(ly).min(lz);
        let two_s2 = 2.0 * sigma * sigma;
        let b = ScalarField::from_fn(grid, |[x, y, z]| {
            let r2 = (x - 0.5 * lx).powi(2) + (y - 0.5 * ly).powi(2) + (z - 0.5 * lz).powi(2);
            amp * (-r2 / two_s2).exp()
        });
        ModelState {
            b,
            c: ScalarField::zeros(grid),
            o: ScalarField::constant(grid, p.o_max),
            m: ScalarField::constant(grid, 1.0),
            a: ScalarField::zeros(grid),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StabilityStatus {
    Stable,
    Diverging,
}

/// Flags a run whose latest norm exceeds `factor` times the smallest norm
/// seen so far, or whose history contains a non-finite value.
pub fn stability_monitor(history: &[f64], factor: f64) -> Result<StabilityStatus> {
    if !(factor > 1.0) {
        return Err(Error::InvalidArgument(format!("factor must exceed 1, got {factor}")));
    }
    let Some(&latest) = history.last() else {
        return Ok(StabilityStatus::Stable);
    };
    if history.iter().any(|v| !v.is_finite()) {
        return Ok(StabilityStatus::Diverging);
    }
    let min = history.iter().copied().fold(f64::INFINITY, f64::min);
    if latest > factor * min {
        Ok(StabilityStatus::Diverging)
    } else {
        Ok(StabilityStatus::Stable)
    }
}
