//! Finite-volume discretization with explicit time stepping.
//!
//! Diffusion is the Laplacian of the primitive `Phi`; the drift is an upwind
//! flux whose mobility `rho sigma(rho)` is split into a donor density and a
//! receiver saturation, so neither an empty cell loses mass nor a full cell
//! gains any.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mesh::{divergence, neumaier_sum, DensityField, FaceField, Grid, Point, Trajectory};
use crate::model::{
    face_mobility, DiffusionPrimitive, EnergyDensity, GridPotentials, PotentialSpec, SaturationSpec,
};

/// Deterministic initial data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Constant {
        value: f64,
    },
    /// `base + height exp(-|x - center|^2 / (2 width^2))`.
    GaussianBump(Bump),
    TwoBumps {
        first: Bump,
        second: Bump,
    },
    /// Cell values in row-major order.
    Tabulated {
        values: Vec<f64>,
    },
    /// `mean + amplitude cos(pi (x - a) / (b - a))` along the first axis.
    CosineMode {
        mean: f64,
        amplitude: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: Vec<f64>,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub base: f64,
}

impl Bump {
    fn eval(&self, x: &Point, dim: usize) -> f64 {
        let r2: f64 = (0..dim)
            .map(|a| {
                let d = x[a] - self.center.get(a).copied().unwrap_or(0.0);
                d * d
            })
            .sum();
        self.base + self.height * (-r2 / (2.0 * self.width * self.width)).exp()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.center.len() != dim {
            return Err(Error::Config(format!(
                "bump centre has {} coordinates on a {dim}-d grid",
                self.center.len()
            )));
        }
        if !(self.width > 0.0) {
            return Err(domain("bump width", self.width, "(0, inf)"));
        }
        Ok(())
    }
}

impl InitialCondition {
    pub fn build(&self, grid: &Grid) -> Result<DensityField> {
        let dim = grid.dim();
        match self {
            InitialCondition::Constant { value } => DensityField::constant(grid.clone(), *value),
            InitialCondition::GaussianBump(b) => {
                b.validate(dim)?;
                DensityField::from_fn(grid.clone(), |x| b.eval(x, dim))
            }
            InitialCondition::TwoBumps { first, second } => {
                first.validate(dim)?;
                second.validate(dim)?;
                DensityField::from_fn(grid.clone(), |x| {
                    first.eval(x, dim) + second.eval(x, dim) - second.base
                })
            }
            InitialCondition::Tabulated { values } => {
                DensityField::new(grid.clone(), values.clone())
            }
            InitialCondition::CosineMode { mean, amplitude } => {
                let (a, b) = grid.extent(0);
                DensityField::from_fn(grid.clone(), |x| {
                    mean + amplitude * (std::f64::consts::PI * (x[0] - a) / (b - a)).cos()
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub grid: Grid,
    pub saturation: SaturationSpec,
    pub energy: EnergyDensity,
    pub potentials: PotentialSpec,
    pub initial: InitialCondition,
    pub t_end: f64,
    pub cfl: f64,
    pub snapshot_every: usize,
    pub dt_override: Option<f64>,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.saturation.validate()?;
        self.energy.validate()?;
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(domain("cfl", self.cfl, "(0, 1]"));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(domain("t_end", self.t_end, "[0, inf)"));
        }
        if self.snapshot_every == 0 {
            return Err(Error::Config("snapshot_every must be at least 1".into()));
        }
        if let Some(dt) = self.dt_override {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(domain("dt_override", dt, "(0, inf)"));
            }
        }
        self.initial
            .build(&self.grid)?
            .check_admissible(self.saturation.rho_max)
    }
}

/// One ledger row per accepted step; row 0 holds the initial state with `dt = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub t: f64,
    pub dt: f64,
    pub mass: f64,
    pub free_energy: f64,
    pub dissipation: f64,
    pub min_rho: f64,
    pub max_rho: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub rows: Vec<LedgerRow>,
}

impl EnergyLedger {
    /// Largest relative mass drift between consecutive rows.
    pub fn max_relative_mass_step(&self) -> f64 {
        self.rows
            .windows(2)
            .map(|w| (w[1].mass - w[0].mass).abs() / w[0].mass.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }

    /// Number of steps where the free energy grew by more than `tol`.
    pub fn energy_increases(&self, tol: f64) -> usize {
        self.rows
            .windows(2)
            .filter(|w| w[1].free_energy - w[0].free_energy > tol)
            .count()
    }

    pub fn max_energy_increase(&self) -> f64 {
        self.rows
            .windows(2)
            .map(|w| w[1].free_energy - w[0].free_energy)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub struct RunOutput {
    pub trajectory: Trajectory,
    pub ledger: EnergyLedger,
    pub rejections: usize,
}

/// Upwind drift flux across a face with velocity `v`, from low to high cell.
pub fn face_flux(rho_l: f64, rho_r: f64, v: f64, spec: &SaturationSpec) -> Result<f64> {
    let range = || format!("[0, {}]", spec.rho_max);
    if !(0.0..=spec.rho_max).contains(&rho_l) {
        return Err(domain("donor density", rho_l, range()));
    }
    if !(0.0..=spec.rho_max).contains(&rho_r) {
        return Err(domain("receiver density", rho_r, range()));
    }
    Ok(upwind(rho_l, rho_r, v, spec))
}

#[inline]
fn upwind(rho_l: f64, rho_r: f64, v: f64, spec: &SaturationSpec) -> f64 {
    if v > 0.0 {
        v * rho_l * spec.sigma_unchecked(rho_r)
    } else if v < 0.0 {
        v * rho_r * spec.sigma_unchecked(rho_l)
    } else {
        0.0
    }
}

/// Rejection threshold for bound violations; smaller excursions are clamped.
pub const BOUND_TOL: f64 = 1e-12;
/// Maximum number of step halvings before a run aborts.
pub const MAX_HALVINGS: u32 = 40;

/// A validated configuration with its grid-dependent tables built.
pub struct Solver {
    config: SimulationConfig,
    pots: GridPotentials,
    phi: DiffusionPrimitive,
}

impl Solver {
    pub fn new(config: SimulationConfig) -> Result<Self> {
        config.validate()?;
        let pots = config.potentials.discretize(&config.grid)?;
        let phi = DiffusionPrimitive::new(&config.energy, &config.saturation);
        Ok(Self { config, pots, phi })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn potentials(&self) -> &GridPotentials {
        &self.pots
    }

    pub fn grid(&self) -> &Grid {
        &self.config.grid
    }

    pub fn initial_field(&self) -> Result<DensityField> {
        self.config.initial.build(&self.config.grid)
    }

    fn velocity_from_potential(&self, p: &[f64]) -> FaceField {
        let grid = &self.config.grid;
        let mut v = FaceField::zeros(grid);
        for axis in 0..grid.dim() {
            let h = grid.spacing(axis);
            for (f, lo, hi) in grid.interior_faces(axis) {
                v.axes[axis][f] = -(p[hi] - p[lo]) / h;
            }
        }
        v
    }

    /// `-(V + W * rho)` differenced across interior faces; zero on the boundary.
    pub fn drift_velocity(&self, field: &DensityField) -> Result<FaceField> {
        field.grid().ensure_same(self.grid())?;
        Ok(self.velocity_from_potential(&self.pots.potential(field.values())))
    }

    fn flux_with_velocity(&self, rho: &[f64], v: &FaceField) -> FaceField {
        let grid = &self.config.grid;
        let spec = &self.config.saturation;
        let phi: Vec<f64> = rho.iter().map(|&r| self.phi.eval(r)).collect();
        let mut j = FaceField::zeros(grid);
        for axis in 0..grid.dim() {
            let h = grid.spacing(axis);
            for (f, lo, hi) in grid.interior_faces(axis) {
                let diffusive = -(phi[hi] - phi[lo]) / h;
                j.axes[axis][f] = diffusive + upwind(rho[lo], rho[hi], v.axes[axis][f], spec);
            }
        }
        j
    }

    /// Physical face flux `J`, so that `d rho / dt = -div J`.
    pub fn flux(&self, field: &DensityField) -> Result<FaceField> {
        field.check_admissible(self.config.saturation.rho_max)?;
        let v = self.drift_velocity(field)?;
        Ok(self.flux_with_velocity(field.values(), &v))
    }

    /// Per-cell rate of change.
    pub fn rhs(&self, field: &DensityField) -> Result<Vec<f64>> {
        let j = self.flux(field)?;
        Ok(divergence(self.grid(), &j)?
            .into_iter()
            .map(|r| -r)
            .collect())
    }

    fn dt_for_velocity(&self, v: &FaceField) -> Result<f64> {
        let grid = &self.config.grid;
        let spec = &self.config.saturation;
        let diff = self.phi.lipschitz();
        let drift = spec.sigma_max().max(spec.rho_max * spec.lipschitz());
        let mut denom = 0.0;
        for axis in 0..grid.dim() {
            let h = grid.spacing(axis);
            let vmax = v.axes[axis].iter().fold(0.0f64, |m, x| m.max(x.abs()));
            denom += 2.0 * diff / (h * h);
            if vmax > 0.0 {
                denom += 2.0 * vmax * drift / h;
            }
        }
        if !denom.is_finite() {
            return Err(Error::Config(
                "saturation is not Lipschitz at rho_max; the explicit drift step is unbounded"
                    .into(),
            ));
        }
        if denom == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(self.config.cfl / denom)
    }

    /// Largest step for which the forward-Euler update keeps `0 <= rho <= rho_max`.
    ///
    /// `dt = cfl / sum_a (2 L / h_a^2 + 2 |v|_a K / h_a)` with `L = max Phi'` and
    /// `K = max(sigma_max, rho_max Lip(sigma))`.
    pub fn cfl_dt(&self, field: &DensityField) -> Result<f64> {
        let v = self.drift_velocity(field)?;
        self.dt_for_velocity(&v)
    }

    fn advance(&self, rho: &[f64], v: &FaceField, dt: f64) -> Result<Vec<f64>> {
        let grid = &self.config.grid;
        let rho_max = self.config.saturation.rho_max;
        let j = self.flux_with_velocity(rho, v);
        let div = divergence(grid, &j)?;
        let mut next = Vec::with_capacity(rho.len());
        for (cell, (&r, d)) in rho.iter().zip(div).enumerate() {
            let value = r - dt * d;
            if !(value >= -BOUND_TOL && value <= rho_max + BOUND_TOL) {
                return Err(Error::BoundViolation {
                    cell,
                    value,
                    rho_max,
                });
            }
            next.push(value.clamp(0.0, rho_max));
        }
        Ok(next)
    }

    /// One forward-Euler step of size `dt`.
    pub fn step(&self, field: &DensityField, dt: f64) -> Result<DensityField> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(domain("dt", dt, "(0, inf)"));
        }
        field.check_admissible(self.config.saturation.rho_max)?;
        let v = self.drift_velocity(field)?;
        DensityField::new(field.grid().clone(), self.advance(field.values(), &v, dt)?)
    }

    fn ledger_row(&self, t: f64, dt: f64, rho: &[f64], p: &[f64]) -> LedgerRow {
        let energy = &self.config.energy;
        let vol = self.config.grid.cell_volume();
        let v = self.pots.v();
        let free = neumaier_sum(
            rho.iter()
                .zip(v)
                .zip(p)
                .map(|((&r, &v), &p)| energy.u(r) + 0.5 * r * (v + p)),
        ) * vol;
        LedgerRow {
            t,
            dt,
            mass: neumaier_sum(rho.iter().copied()) * vol,
            free_energy: free,
            dissipation: self.dissipation_from(rho, p),
            min_rho: rho.iter().copied().fold(f64::INFINITY, f64::min),
            max_rho: rho.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn dissipation_from(&self, rho: &[f64], p: &[f64]) -> f64 {
        let grid = &self.config.grid;
        let energy = &self.config.energy;
        let spec = &self.config.saturation;
        let xi: Vec<f64> = rho.iter().zip(p).map(|(&r, &p)| energy.du(r) + p).collect();
        let vol = grid.cell_volume();
        let boltzmann = matches!(energy, EnergyDensity::Boltzmann);
        let mut terms = Vec::new();
        for axis in 0..grid.dim() {
            let h = grid.spacing(axis);
            for (_, lo, hi) in grid.interior_faces(axis) {
                if boltzmann && (rho[lo] == 0.0 || rho[hi] == 0.0) {
                    continue;
                }
                let dxi = xi[hi] - xi[lo];
                if dxi != 0.0 {
                    let m = face_mobility(rho[lo], rho[hi], xi[lo], xi[hi], spec);
                    terms.push(m * (dxi / h).powi(2) * vol);
                }
            }
        }
        neumaier_sum(terms)
    }

    /// Integrates to `t_end`, halving rejected steps up to [`MAX_HALVINGS`] times.
    pub fn run(&self) -> Result<RunOutput> {
        let grid = self.config.grid.clone();
        let t_end = self.config.t_end;
        let mut rho = self.initial_field()?.into_values();
        let mut t = 0.0;
        let mut trajectory = Trajectory::new(grid.clone());
        trajectory.push(0.0, rho.clone())?;
        let mut p = self.pots.potential(&rho);
        let mut ledger = EnergyLedger {
            rows: vec![self.ledger_row(0.0, 0.0, &rho, &p)],
        };
        let mut steps = 0usize;
        let mut rejections = 0usize;
        let mut last_snapshot = 0usize;

        while t < t_end {
            let v = self.velocity_from_potential(&p);
            let base = match self.config.dt_override {
                Some(dt) => dt,
                None => self.dt_for_velocity(&v)?,
            };
            let mut dt = base.min(t_end - t);
            let mut halvings = 0;
            let next = loop {
                match self.advance(&rho, &v, dt) {
                    Ok(next) => break next,
                    Err(Error::BoundViolation { cell, value, .. }) => {
                        rejections += 1;
                        halvings += 1;
                        log::debug!("t = {t}: rejected dt = {dt} (cell {cell} -> {value})");
                        if halvings > MAX_HALVINGS {
                            let dump = std::env::temp_dir().join(format!("satflow-abort-{t}.json"));
                            let _ = std::fs::write(
                                &dump,
                                serde_json::to_string(&rho).unwrap_or_default(),
                            );
                            return Err(Error::Abort {
                                time: t,
                                reason: format!(
                                    "step rejected {MAX_HALVINGS} times at cell {cell}; last state in {}",
                                    dump.display()
                                ),
                            });
                        }
                        dt *= 0.5;
                    }
                    Err(e) => return Err(e),
                }
            };
            rho = next;
            t = if t_end - t <= dt { t_end } else { t + dt };
            steps += 1;
            p = self.pots.potential(&rho);
            ledger.rows.push(self.ledger_row(t, dt, &rho, &p));
            if steps.is_multiple_of(self.config.snapshot_every) || t >= t_end {
                trajectory.push(t, rho.clone())?;
                last_snapshot = steps;
            }
        }
        debug_assert!(steps == 0 || last_snapshot == steps);
        Ok(RunOutput {
            trajectory,
            ledger,
            rejections,
        })
    }

    /// Dissipation plus the sup norm of the rate: zero exactly at discrete stationary states.
    pub fn stationary_residual(&self, field: &DensityField) -> Result<f64> {
        let rate = self.rhs(field)?;
        let p = self.pots.potential(field.values());
        let sup = rate.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        Ok(self.dissipation_from(field.values(), &p) + sup)
    }
}
