//! Discrete versions of the local energy inequalities, DeGiorgi's
//! isoperimetric inequality, the fast geometric convergence recursion and the
//! weak-form residual.
//!
//! Integrals use cell-centre quadrature in space and the trapezoid rule over
//! snapshot times. Gradients of truncations are differences of truncated
//! values across faces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{cells_in_ball, cylinder_samples, Cylinder};
use crate::error::{domain, Error, Result};
use crate::mesh::{distance, DensityField, Grid, Point, Trajectory, MAX_DIM};
use crate::model::{GridPotentials, SaturationSpec};
use crate::solver::Solver;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    /// `(s - k)_+` or `(s - k)_-`.
    #[inline]
    pub fn part(self, s: f64, k: f64) -> f64 {
        match self {
            Sign::Plus => (s - k).max(0.0),
            Sign::Minus => (k - s).max(0.0),
        }
    }

    /// Membership in `A^+ = {rho > k}` or `A^- = {rho < k}`.
    #[inline]
    pub fn above(self, s: f64, k: f64) -> bool {
        match self {
            Sign::Plus => s > k,
            Sign::Minus => s < k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub level: f64,
    pub sign: Sign,
}

pub fn truncate(field: &DensityField, trunc: Truncation) -> Result<DensityField> {
    let values = field
        .values()
        .iter()
        .map(|&r| trunc.sign.part(r, trunc.level))
        .collect();
    DensityField::new(field.grid().clone(), values)
}

/// Space-time measure of `A^{+-}_k` inside a cylinder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSetMeasure {
    pub total: f64,
    /// `(t, |A(t)|)` per sampled snapshot.
    pub per_slice: Vec<(f64, f64)>,
}

pub fn level_set_measure(
    traj: &Trajectory,
    cyl: &Cylinder,
    k: f64,
    sign: Sign,
) -> Result<LevelSetMeasure> {
    let s = cylinder_samples(traj, cyl)?;
    let vol = traj.grid().cell_volume();
    let per_slice: Vec<(f64, f64)> = s
        .slices
        .iter()
        .map(|&j| {
            let f = &traj.fields()[j];
            let count = s.cells.iter().filter(|&&i| sign.above(f[i], k)).count();
            (traj.times()[j], count as f64 * vol)
        })
        .collect();
    let dt = traj.snapshot_spacing();
    let total = per_slice.iter().map(|p| p.1).sum::<f64>() * dt;
    Ok(LevelSetMeasure { total, per_slice })
}

fn check_log_params(a: f64, c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(domain("log-function c", c, "(0, a)"));
    }
    if !(a > c) {
        return Err(domain("log-function a", a, format!("({c}, inf)")));
    }
    Ok(())
}

fn log_denominator(a: f64, b: f64, c: f64, sign: Sign, s: f64) -> Result<f64> {
    let den = (a + c) - sign.part(s, b);
    if den <= 0.0 {
        return Err(domain(
            "log-function argument",
            s,
            "a region with (a + c) - (s - b)_{+-} > 0",
        ));
    }
    Ok(den)
}

/// `psi(s) = (log(a / ((a + c) - (s - b)_{+-})))_+`.
pub fn psi_log(a: f64, b: f64, c: f64, sign: Sign, s: f64) -> Result<f64> {
    check_log_params(a, c)?;
    let den = log_denominator(a, b, c, sign, s)?;
    Ok((a / den).ln().max(0.0))
}

/// Derivative of [`psi_log`] in `s`; zero on the flat branch.
pub fn psi_log_derivative(a: f64, b: f64, c: f64, sign: Sign, s: f64) -> Result<f64> {
    check_log_params(a, c)?;
    let den = log_denominator(a, b, c, sign, s)?;
    if den >= a {
        return Ok(0.0);
    }
    Ok(match sign {
        Sign::Plus => 1.0 / den,
        Sign::Minus => -1.0 / den,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampProfile {
    Linear,
    /// `3u^2 - 2u^3`, continuously differentiable.
    Smoothed,
}

impl RampProfile {
    /// Value, first and second derivative in `u in [0, 1]`.
    fn eval(self, u: f64) -> (f64, f64, f64) {
        if u <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        if u >= 1.0 {
            return (1.0, 0.0, 0.0);
        }
        match self {
            RampProfile::Linear => (u, 1.0, 0.0),
            RampProfile::Smoothed => (u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u), 6.0 - 12.0 * u),
        }
    }

    fn max_slope(self) -> f64 {
        match self {
            RampProfile::Linear => 1.0,
            RampProfile::Smoothed => 1.5,
        }
    }
}

/// Smooth test functions for weak-form checks.
pub trait TestFunction {
    fn value(&self, x: &Point, t: f64) -> f64;
    fn time_derivative(&self, x: &Point, t: f64) -> f64;
    fn gradient(&self, x: &Point, t: f64) -> Point;
}

/// `zeta(x, t) = g(|x - x0|) h(t)`, equal to 1 on the inner cylinder and 0 on
/// the parabolic boundary of the outer one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffFunction {
    pub outer: Cylinder,
    pub inner: Cylinder,
    pub profile: RampProfile,
    /// When false the time factor is identically 1.
    pub time_dependent: bool,
    pub dim: usize,
    /// Largest face difference quotient of the sampled values.
    pub grad_max: f64,
    pub dt_max: f64,
    pub laplacian_max: f64,
}

impl CutoffFunction {
    fn space(&self, x: &Point) -> (f64, f64, f64, f64) {
        let r = distance(x, &self.outer.center);
        let width = self.outer.radius - self.inner.radius;
        let (g, dg, d2g) = self.profile.eval((self.outer.radius - r) / width);
        (r, g, -dg / width, d2g / (width * width))
    }

    fn time(&self, t: f64) -> (f64, f64) {
        if !self.time_dependent {
            return (1.0, 0.0);
        }
        let span = self.outer.height - self.inner.height;
        let (h, dh, _) = self.profile.eval((t - self.outer.bottom()) / span);
        (h, dh / span)
    }

    /// `Delta zeta = h(t) (g'' + (N - 1) g' / r)`.
    pub fn laplacian(&self, x: &Point, t: f64) -> f64 {
        let (r, _, dg, d2g) = self.space(x);
        let (h, _) = self.time(t);
        let radial = if self.dim > 1 && r > 0.0 {
            (self.dim - 1) as f64 * dg / r
        } else {
            0.0
        };
        h * (d2g + radial)
    }
}

impl TestFunction for CutoffFunction {
    fn value(&self, x: &Point, t: f64) -> f64 {
        self.space(x).1 * self.time(t).0
    }

    fn time_derivative(&self, x: &Point, t: f64) -> f64 {
        self.space(x).1 * self.time(t).1
    }

    fn gradient(&self, x: &Point, t: f64) -> Point {
        let (r, _, dg, _) = self.space(x);
        let (h, _) = self.time(t);
        let mut out = [0.0; MAX_DIM];
        if r > 0.0 {
            for (a, o) in out.iter_mut().enumerate().take(self.dim) {
                *o = h * dg * (x[a] - self.outer.center[a]) / r;
            }
        }
        out
    }
}

/// Builds a separable cutoff between `inner` and `outer` and records its
/// derivative bounds on `grid`.
pub fn build_cutoff(
    outer: &Cylinder,
    inner: &Cylinder,
    profile: RampProfile,
    time_dependent: bool,
    grid: &Grid,
) -> Result<CutoffFunction> {
    if outer.center != inner.center || outer.t0 != inner.t0 {
        return Err(Error::Geometry(
            "cutoff cylinders must share their vertex".into(),
        ));
    }
    if !(inner.radius < outer.radius) {
        return Err(Error::Geometry(format!(
            "inner radius {} is not below outer radius {}",
            inner.radius, outer.radius
        )));
    }
    if time_dependent && !(inner.height < outer.height) {
        return Err(Error::Geometry(format!(
            "inner height {} is not below outer height {}",
            inner.height, outer.height
        )));
    }
    let mut zeta = CutoffFunction {
        outer: outer.clone(),
        inner: inner.clone(),
        profile,
        time_dependent,
        dim: grid.dim(),
        grad_max: 0.0,
        dt_max: 0.0,
        laplacian_max: 0.0,
    };
    let t = outer.t0;
    let samples: Vec<f64> = (0..grid.len())
        .map(|i| zeta.value(&grid.center(i), t))
        .collect();
    let mut grad_max: f64 = 0.0;
    for axis in 0..grid.dim() {
        let h = grid.spacing(axis);
        for (_, lo, hi) in grid.interior_faces(axis) {
            grad_max = grad_max.max((samples[hi] - samples[lo]).abs() / h);
        }
    }
    zeta.grad_max = grad_max;
    zeta.dt_max = if time_dependent {
        profile.max_slope() / (outer.height - inner.height)
    } else {
        0.0
    };
    zeta.laplacian_max = (0..grid.len())
        .map(|i| zeta.laplacian(&grid.center(i), t).abs())
        .fold(0.0, f64::max);
    Ok(zeta)
}

/// Derivative targets for the `n`-th cutoff of a shrinking family on `Q(theta R^2, R)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffTargets {
    pub grad: f64,
    pub dt: f64,
    pub laplacian: f64,
}

impl CutoffTargets {
    pub fn level(n: u32, big_r: f64, theta: f64) -> Self {
        let g = 2f64.powi(n as i32 + 2);
        Self {
            grad: g / big_r,
            dt: g * g / (theta * big_r * big_r),
            laplacian: g * g / (big_r * big_r),
        }
    }

    pub fn admits(&self, zeta: &CutoffFunction) -> bool {
        let tol = 1.0 + 1e-12;
        zeta.grad_max <= self.grad * tol
            && zeta.dt_max <= self.dt * tol
            && zeta.laplacian_max <= self.laplacian * tol
    }
}

/// Radius `R_n = R/2 + R/2^{n+1}` of the shrinking family.
pub fn family_radius(n: u32, big_r: f64) -> f64 {
    big_r / 2.0 + big_r / 2f64.powi(n as i32 + 1)
}

/// Cutoff between `Q(theta R_n^2, R_n)` and `Q(theta R_{n+1}^2, R_{n+1})`.
pub fn family_cutoff(
    n: u32,
    vertex: Point,
    t0: f64,
    big_r: f64,
    theta: f64,
    profile: RampProfile,
    grid: &Grid,
) -> Result<CutoffFunction> {
    let outer = Cylinder::intrinsic(vertex, t0, family_radius(n, big_r), theta)?;
    let inner = Cylinder::intrinsic(vertex, t0, family_radius(n + 1, big_r), theta)?;
    build_cutoff(&outer, &inner, profile, true, grid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
    /// `lhs / rhs`; absent when `rhs = 0`.
    pub ratio: Option<f64>,
    pub slack: f64,
    pub pass: bool,
    pub terms: BTreeMap<String, f64>,
}

impl EstimateReport {
    fn new(
        name: &str,
        lhs: f64,
        rhs: f64,
        constant: f64,
        slack: f64,
        terms: BTreeMap<String, f64>,
    ) -> Self {
        let ratio = (rhs > 0.0).then(|| lhs / rhs);
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            constant,
            ratio,
            slack,
            pass: lhs <= rhs * (1.0 + slack),
            terms,
        }
    }
}

/// Default relative slack for discrete inequality checks.
pub const DEFAULT_SLACK: f64 = 0.10;

/// `kappa = 1 + 4/N`.
pub fn kappa_default(dim: usize) -> f64 {
    1.0 + 4.0 / dim as f64
}

/// `b_hat = 2 / (N + 4)`.
pub fn b_hat_default(dim: usize) -> f64 {
    2.0 / (dim as f64 + 4.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaccioppoliConstants {
    #[serde(default = "ten")]
    pub gradient: f64,
    #[serde(default = "ten")]
    pub time: f64,
    /// Multiplies `sigma_max Lambda`.
    #[serde(default = "four")]
    pub level_set: f64,
    #[serde(default = "default_slack")]
    pub slack: f64,
}

fn ten() -> f64 {
    10.0
}
fn four() -> f64 {
    4.0
}
fn six() -> f64 {
    6.0
}
fn three() -> f64 {
    3.0
}
fn two() -> f64 {
    2.0
}
fn default_slack() -> f64 {
    DEFAULT_SLACK
}

impl Default for CaccioppoliConstants {
    fn default() -> Self {
        Self {
            gradient: 10.0,
            time: 10.0,
            level_set: 4.0,
            slack: DEFAULT_SLACK,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogConstants {
    #[serde(default = "six")]
    pub gradient: f64,
    /// Multiplies `sigma_max Lambda^2`.
    #[serde(default = "three")]
    pub level_set: f64,
    /// Used only when the cutoff depends on time.
    #[serde(default = "two")]
    pub time: f64,
    #[serde(default = "default_slack")]
    pub slack: f64,
}

impl Default for LogConstants {
    fn default() -> Self {
        Self {
            gradient: 6.0,
            level_set: 3.0,
            time: 2.0,
            slack: DEFAULT_SLACK,
        }
    }
}

/// Snapshots in the closed window `[t0 - tau, t0]` with trapezoid weights.
struct Window {
    slices: Vec<usize>,
    weights: Vec<f64>,
    cells: Vec<usize>,
    /// Interior faces with both cells in the ball, `(axis, face, lo, hi)`.
    faces: Vec<(usize, usize, usize, usize)>,
}

impl Window {
    fn new(traj: &Trajectory, cyl: &Cylinder) -> Result<Self> {
        let grid = traj.grid();
        let h = grid.min_spacing();
        if cyl.radius < 2.0 * h {
            return Err(Error::Geometry(format!(
                "radius {} spans fewer than 4 cells of width {h}",
                cyl.radius
            )));
        }
        let tol = 1e-12 * cyl.t0.abs().max(cyl.height).max(1.0);
        let slices: Vec<usize> = (0..traj.len())
            .filter(|&k| {
                let t = traj.times()[k];
                t >= cyl.bottom() - tol && t <= cyl.t0 + tol
            })
            .collect();
        if slices.is_empty() {
            return Err(Error::EmptySample(format!(
                "no snapshots in [{}, {}]",
                cyl.bottom(),
                cyl.t0
            )));
        }
        let times: Vec<f64> = slices.iter().map(|&k| traj.times()[k]).collect();
        let mut weights = vec![0.0; times.len()];
        for j in 0..times.len().saturating_sub(1) {
            let half = 0.5 * (times[j + 1] - times[j]);
            weights[j] += half;
            weights[j + 1] += half;
        }
        let cells = cells_in_ball(grid, &cyl.center, cyl.radius);
        let inside: std::collections::HashSet<usize> = cells.iter().copied().collect();
        let mut faces = Vec::new();
        for axis in 0..grid.dim() {
            for (f, lo, hi) in grid.interior_faces(axis) {
                if inside.contains(&lo) && inside.contains(&hi) {
                    faces.push((axis, f, lo, hi));
                }
            }
        }
        Ok(Self {
            slices,
            weights,
            cells,
            faces,
        })
    }

    fn integrate(&self, series: &[f64]) -> f64 {
        series.iter().zip(&self.weights).map(|(s, w)| s * w).sum()
    }

    /// Running trapezoid integral up to each slice.
    fn cumulative(&self, series: &[f64], traj: &Trajectory) -> Vec<f64> {
        let mut out = vec![0.0; series.len()];
        for j in 1..series.len() {
            let dt = traj.times()[self.slices[j]] - traj.times()[self.slices[j - 1]];
            out[j] = out[j - 1] + 0.5 * dt * (series[j] + series[j - 1]);
        }
        out
    }
}

fn norm2(p: &Point) -> f64 {
    p[0] * p[0] + p[1] * p[1]
}

/// Caccioppoli-type energy inequality on `cyl` for `(rho - k)_{+-}`.
///
/// The left side is the largest value over snapshots `t` of
/// `int (rho-k)^2 zeta^2 (t) + int_{bottom}^{t} int sigma |grad (rho-k)|^2 zeta^2`.
#[allow(clippy::too_many_arguments)]
pub fn caccioppoli_check(
    traj: &Trajectory,
    cyl: &Cylinder,
    k: f64,
    sign: Sign,
    zeta: &CutoffFunction,
    spec: &SaturationSpec,
    pots: &GridPotentials,
    consts: &CaccioppoliConstants,
) -> Result<EstimateReport> {
    let grid = traj.grid();
    let w = Window::new(traj, cyl)?;
    let vol = grid.cell_volume();
    let centers: Vec<Point> = grid.centers();
    let n = w.slices.len();
    let (mut energy, mut grad, mut lateral, mut timewise, mut level) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    for (j, &s) in w.slices.iter().enumerate() {
        let t = traj.times()[s];
        let rho = &traj.fields()[s];
        for &i in &w.cells {
            let x = &centers[i];
            let v = sign.part(rho[i], k);
            let z = zeta.value(x, t);
            energy[j] += v * v * z * z * vol;
            lateral[j] += spec.sigma_unchecked(rho[i]) * v * v * norm2(&zeta.gradient(x, t)) * vol;
            timewise[j] += v * v * z * zeta.time_derivative(x, t) * vol;
            if sign.above(rho[i], k) {
                level[j] += vol;
            }
        }
        for &(axis, f, lo, hi) in &w.faces {
            let h = grid.spacing(axis);
            let d = (sign.part(rho[hi], k) - sign.part(rho[lo], k)) / h;
            if d == 0.0 {
                continue;
            }
            let sig = 0.5 * (spec.sigma_unchecked(rho[lo]) + spec.sigma_unchecked(rho[hi]));
            let z = zeta.value(&grid.face_center(axis, f), t);
            grad[j] += sig * d * d * z * z * vol;
        }
    }
    let running = w.cumulative(&grad, traj);
    let lhs = energy
        .iter()
        .zip(&running)
        .map(|(e, g)| e + g)
        .fold(0.0, f64::max);
    let c3 = consts.level_set * spec.sigma_max() * pots.lambda;
    let mut terms = BTreeMap::new();
    terms.insert("initial".to_string(), energy[0]);
    terms.insert(
        "gradient".to_string(),
        consts.gradient * w.integrate(&lateral),
    );
    terms.insert("time".to_string(), consts.time * w.integrate(&timewise));
    terms.insert("level_set".to_string(), c3 * w.integrate(&level));
    let rhs = terms.values().sum();
    terms.insert(
        "lhs_sup".to_string(),
        energy.iter().copied().fold(0.0, f64::max),
    );
    terms.insert("lhs_gradient".to_string(), running[n - 1]);
    Ok(EstimateReport::new(
        "caccioppoli",
        lhs,
        rhs,
        c3,
        consts.slack,
        terms,
    ))
}

/// Logarithmic energy inequality on `cyl` with `psi = psi_{H, k, c}(rho)`,
/// `H = max (rho - k)_{+-}` over the cylinder.
#[allow(clippy::too_many_arguments)]
pub fn log_estimate_check(
    traj: &Trajectory,
    cyl: &Cylinder,
    k: f64,
    c: f64,
    sign: Sign,
    zeta: &CutoffFunction,
    spec: &SaturationSpec,
    pots: &GridPotentials,
    consts: &LogConstants,
) -> Result<EstimateReport> {
    let grid = traj.grid();
    let w = Window::new(traj, cyl)?;
    let vol = grid.cell_volume();
    let big_h = w
        .slices
        .iter()
        .flat_map(|&s| {
            w.cells
                .iter()
                .map(move |&i| sign.part(traj.fields()[s][i], k))
        })
        .fold(0.0, f64::max);
    let c3 = consts.level_set * spec.sigma_max() * pots.lambda * pots.lambda;
    if big_h == 0.0 {
        let mut terms = BTreeMap::new();
        terms.insert("H".to_string(), 0.0);
        return Ok(EstimateReport::new(
            "log_energy",
            0.0,
            0.0,
            c3,
            consts.slack,
            terms,
        ));
    }
    if !(c > 0.0 && c < big_h) {
        return Err(domain("log-estimate c", c, format!("(0, {big_h})")));
    }
    let centers: Vec<Point> = grid.centers();
    let n = w.slices.len();
    let (mut energy, mut lateral, mut timewise, mut level) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (j, &s) in w.slices.iter().enumerate() {
        let t = traj.times()[s];
        let rho = &traj.fields()[s];
        for &i in &w.cells {
            let x = &centers[i];
            let psi = psi_log(big_h, k, c, sign, rho[i])?;
            let z = zeta.value(x, t);
            energy[j] += psi * psi * z * z * vol;
            lateral[j] += spec.sigma_unchecked(rho[i]) * psi * norm2(&zeta.gradient(x, t)) * vol;
            timewise[j] += psi * psi * z * zeta.time_derivative(x, t) * vol;
            if sign.above(rho[i], k) {
                level[j] += vol;
            }
        }
    }
    let lhs = energy.iter().copied().fold(0.0, f64::max);
    let mut terms = BTreeMap::new();
    terms.insert("H".to_string(), big_h);
    terms.insert("initial".to_string(), energy[0]);
    terms.insert(
        "gradient".to_string(),
        consts.gradient * w.integrate(&lateral),
    );
    terms.insert(
        "level_set".to_string(),
        c3 / (c * c) * (1.0 + (big_h / c).ln()) * w.integrate(&level),
    );
    if zeta.time_dependent {
        terms.insert("time".to_string(), consts.time * w.integrate(&timewise));
    }
    let rhs = terms
        .iter()
        .filter(|(k, _)| k.as_str() != "H")
        .map(|(_, v)| v)
        .sum();
    Ok(EstimateReport::new(
        "log_energy",
        lhs,
        rhs,
        c3,
        consts.slack,
        terms,
    ))
}

/// `(k0 - k1) |v > k0| <= C r^{N+1} / |v < k1| int_{[k1 < v < k0]} |grad v|` on `B_r(x0)`.
pub fn degiorgi_check(
    field: &DensityField,
    center: Point,
    radius: f64,
    k0: f64,
    k1: f64,
    constant: Option<f64>,
    slack: f64,
) -> Result<EstimateReport> {
    if !(k1 < k0) {
        return Err(domain("k1", k1, format!("(-inf, {k0})")));
    }
    let grid = field.grid();
    let v = field.values();
    let vol = grid.cell_volume();
    let cells = cells_in_ball(grid, &center, radius);
    if cells.is_empty() {
        return Err(Error::EmptySample(format!("ball of radius {radius}")));
    }
    let above = cells.iter().filter(|&&i| v[i] > k0).count() as f64 * vol;
    let below = cells.iter().filter(|&&i| v[i] < k1).count() as f64 * vol;
    if below == 0.0 {
        return Err(Error::Contract(format!(
            "|v < {k1}| = 0 in the ball; the inequality is vacuous"
        )));
    }
    let inside: std::collections::HashSet<usize> = cells.iter().copied().collect();
    let clamped: Vec<f64> = v.iter().map(|&x| x.clamp(k1, k0)).collect();
    let mut total_variation = 0.0;
    for &i in &cells {
        let mut g2 = 0.0;
        for axis in 0..grid.dim() {
            let h = grid.spacing(axis);
            let (flo, fhi) = grid.cell_faces(axis, i);
            let mut acc = 0.0;
            let mut count = 0.0;
            for f in [flo, fhi] {
                if let Some((lo, hi)) = grid.face_neighbors(axis, f) {
                    if inside.contains(&lo) && inside.contains(&hi) {
                        acc += (clamped[hi] - clamped[lo]) / h;
                        count += 1.0;
                    }
                }
            }
            if count > 0.0 {
                let g = acc / count;
                g2 += g * g;
            }
        }
        total_variation += g2.sqrt() * vol;
    }
    let dim = grid.dim();
    let c = constant.unwrap_or(4.0 * dim as f64);
    let lhs = (k0 - k1) * above;
    let rhs = c * radius.powi(dim as i32 + 1) / below * total_variation;
    let mut terms = BTreeMap::new();
    terms.insert("measure_above".to_string(), above);
    terms.insert("measure_below".to_string(), below);
    terms.insert("gradient_integral".to_string(), total_variation);
    Ok(EstimateReport::new("degiorgi", lhs, rhs, c, slack, terms))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricConvergence {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub threshold: f64,
    /// `Y_0 + Z_0^{1+kappa}`.
    pub start: f64,
    pub converged: bool,
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m.is_infinite() {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Iterates `Y_{n+1} = C b^n (Y_n^{1+u} + Y_n^u Z_n^{1+k})`,
/// `Z_{n+1} = C b^n (Y_n + Z_n^{1+k})` in log space.
pub fn geometric_convergence(
    y0: f64,
    z0: f64,
    c: f64,
    b: f64,
    kappa: f64,
    upsilon: f64,
    n_max: usize,
) -> Result<GeometricConvergence> {
    if !(c > 1.0) {
        return Err(domain("C", c, "(1, inf)"));
    }
    if !(b > 1.0) {
        return Err(domain("b", b, "(1, inf)"));
    }
    if !(kappa > 0.0) {
        return Err(domain("kappa", kappa, "(0, inf)"));
    }
    if !(upsilon > 0.0) {
        return Err(domain("upsilon", upsilon, "(0, inf)"));
    }
    if !(y0 >= 0.0 && z0 >= 0.0) {
        return Err(domain("Y0 or Z0", y0.min(z0), "[0, inf)"));
    }
    let d = kappa.min(upsilon);
    let threshold =
        ((-(1.0 + kappa) / d) * (2.0 * c).ln() - (1.0 + kappa) / (d * d) * b.ln()).exp();
    let (lc, lb) = (c.ln(), b.ln());
    let (mut ly, mut lz) = (y0.ln(), z0.ln());
    let mut y = vec![y0];
    let mut z = vec![z0];
    for n in 0..n_max {
        let scale = lc + n as f64 * lb;
        let ny = scale + log_add((1.0 + upsilon) * ly, upsilon * ly + (1.0 + kappa) * lz);
        let nz = scale + log_add(ly, (1.0 + kappa) * lz);
        ly = ny;
        lz = nz;
        y.push(ly.exp());
        z.push(lz.exp());
    }
    let converged = ly.exp() < 1e-8 && lz.exp() < 1e-8;
    Ok(GeometricConvergence {
        y,
        z,
        threshold,
        start: y0 + z0.powf(1.0 + kappa),
        converged,
    })
}

/// `(T - t)^2 prod_a cos(k_a pi (x_a - lower_a) / L_a)`, vanishing at `t = T`
/// with zero normal derivative on the box boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineTest {
    pub lower: Point,
    pub length: Point,
    pub modes: [f64; MAX_DIM],
    pub dim: usize,
    pub horizon: f64,
}

impl CosineTest {
    pub fn new(grid: &Grid, modes: [f64; MAX_DIM], horizon: f64) -> Self {
        let mut lower = [0.0; MAX_DIM];
        let mut length = [1.0; MAX_DIM];
        for a in 0..grid.dim() {
            let (lo, hi) = grid.extent(a);
            lower[a] = lo;
            length[a] = hi - lo;
        }
        Self {
            lower,
            length,
            modes,
            dim: grid.dim(),
            horizon,
        }
    }

    fn factors(&self, x: &Point) -> ([f64; MAX_DIM], [f64; MAX_DIM]) {
        let mut c = [1.0; MAX_DIM];
        let mut d = [0.0; MAX_DIM];
        for a in 0..self.dim {
            let w = self.modes[a] * std::f64::consts::PI / self.length[a];
            let arg = w * (x[a] - self.lower[a]);
            c[a] = arg.cos();
            d[a] = -w * arg.sin();
        }
        (c, d)
    }
}

impl TestFunction for CosineTest {
    fn value(&self, x: &Point, t: f64) -> f64 {
        let (c, _) = self.factors(x);
        (self.horizon - t).powi(2) * c[0] * c[1]
    }

    fn time_derivative(&self, x: &Point, t: f64) -> f64 {
        let (c, _) = self.factors(x);
        -2.0 * (self.horizon - t) * c[0] * c[1]
    }

    fn gradient(&self, x: &Point, t: f64) -> Point {
        let (c, d) = self.factors(x);
        let s = (self.horizon - t).powi(2);
        [s * d[0] * c[1], s * c[0] * d[1]]
    }
}

/// `int rho_0 phi(0) + int int rho phi_t + int int J . grad phi`, with `J` the
/// scheme's face flux; zero for weak solutions.
pub fn weak_form_residual(
    traj: &Trajectory,
    solver: &Solver,
    test: &dyn TestFunction,
) -> Result<f64> {
    let grid = traj.grid();
    if traj.is_empty() {
        return Err(Error::Contract("empty trajectory".into()));
    }
    let (t_start, t_end) = traj.time_span();
    let centers = grid.centers();
    let scale = centers
        .iter()
        .map(|x| test.value(x, t_start).abs())
        .fold(0.0, f64::max)
        .max(1.0);
    if let Some(x) = centers
        .iter()
        .find(|x| test.value(x, t_end).abs() > 1e-12 * scale)
    {
        return Err(Error::Contract(format!(
            "test function is {} at the final time t = {t_end}",
            test.value(x, t_end)
        )));
    }
    let vol = grid.cell_volume();
    let mut series = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let t = traj.times()[k];
        let field = traj.snapshot(k);
        let rho = field.values();
        let mut acc = 0.0;
        for (i, x) in centers.iter().enumerate() {
            acc += rho[i] * test.time_derivative(x, t) * vol;
        }
        let flux = solver.flux(&field)?;
        for axis in 0..grid.dim() {
            for (f, _, _) in grid.interior_faces(axis) {
                let g = test.gradient(&grid.face_center(axis, f), t);
                acc += flux.axes[axis][f] * g[axis] * vol;
            }
        }
        series.push(acc);
    }
    let mut integral = 0.0;
    for k in 1..series.len() {
        integral += 0.5 * (traj.times()[k] - traj.times()[k - 1]) * (series[k] + series[k - 1]);
    }
    let rho0 = &traj.fields()[0];
    let initial: f64 = centers
        .iter()
        .zip(rho0)
        .map(|(x, r)| r * test.value(x, t_start) * vol)
        .sum();
    Ok(initial + integral)
}
