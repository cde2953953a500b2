//! Intrinsic cylinders and the measurements made on them.
//!
//! A trajectory is treated as the sample set of its cell centres at its
//! snapshot times; essential extrema are exact extrema over that set.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mesh::{distance, sup_distance, DensityField, Grid, Point, Trajectory};
use crate::model::SaturationSpec;
use crate::solver::Solver;

/// Relative tolerance for deciding whether a snapshot time lies in a window.
const TIME_TOL: f64 = 1e-12;

/// `B_r(x0) x (t0 - tau, t0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub center: Point,
    pub t0: f64,
    pub radius: f64,
    pub height: f64,
    /// Set when `height = theta r^2`.
    pub theta: Option<f64>,
}

impl Cylinder {
    pub fn new(center: Point, t0: f64, radius: f64, height: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(domain("cylinder radius", radius, "(0, inf)"));
        }
        if !(height > 0.0 && height.is_finite()) {
            return Err(domain("cylinder height", height, "(0, inf)"));
        }
        Ok(Self {
            center,
            t0,
            radius,
            height,
            theta: None,
        })
    }

    /// `Q(theta r^2, r)`.
    pub fn intrinsic(center: Point, t0: f64, radius: f64, theta: f64) -> Result<Self> {
        let mut c = Self::new(center, t0, radius, theta * radius * radius)?;
        c.theta = Some(theta);
        Ok(c)
    }

    pub fn bottom(&self) -> f64 {
        self.t0 - self.height
    }

    pub fn contains_point(&self, x: &Point) -> bool {
        distance(x, &self.center) < self.radius
    }

    /// Half-open window `(t0 - tau, t0]`.
    pub fn contains_time(&self, t: f64) -> bool {
        let tol = TIME_TOL * self.t0.abs().max(self.height).max(1.0);
        t > self.bottom() + tol && t <= self.t0 + tol
    }

    /// Lebesgue measure `tau |B_r|` in dimension `dim`.
    pub fn measure(&self, dim: usize) -> f64 {
        let ball = match dim {
            1 => 2.0 * self.radius,
            _ => std::f64::consts::PI * self.radius * self.radius,
        };
        self.height * ball
    }

    /// True when `self` is contained in `other`.
    pub fn is_inside(&self, other: &Cylinder) -> bool {
        let tol = TIME_TOL * other.t0.abs().max(other.height).max(1.0);
        distance(&self.center, &other.center) + self.radius <= other.radius * (1.0 + TIME_TOL)
            && self.t0 <= other.t0 + tol
            && self.bottom() >= other.bottom() - tol
    }

    fn describe(&self) -> String {
        format!(
            "cylinder at x0 = ({}, {}), t0 = {}, r = {}, tau = {}",
            self.center[0], self.center[1], self.t0, self.radius, self.height
        )
    }
}

/// Cells and snapshots whose sample points lie in a cylinder.
#[derive(Clone, Debug, PartialEq)]
pub struct CylinderSamples {
    pub cells: Vec<usize>,
    pub slices: Vec<usize>,
}

impl CylinderSamples {
    pub fn count(&self) -> usize {
        self.cells.len() * self.slices.len()
    }
}

pub fn cells_in_ball(grid: &Grid, center: &Point, radius: f64) -> Vec<usize> {
    (0..grid.len())
        .filter(|&i| distance(&grid.center(i), center) < radius)
        .collect()
}

/// Samples of `cyl`; errors when there are none.
pub fn cylinder_samples(traj: &Trajectory, cyl: &Cylinder) -> Result<CylinderSamples> {
    let cells = cells_in_ball(traj.grid(), &cyl.center, cyl.radius);
    let slices: Vec<usize> = (0..traj.len())
        .filter(|&k| cyl.contains_time(traj.times()[k]))
        .collect();
    if cells.is_empty() || slices.is_empty() {
        return Err(Error::EmptySample(cyl.describe()));
    }
    Ok(CylinderSamples { cells, slices })
}

/// Measure carried by one space-time sample: `h^N` times the mean snapshot spacing.
pub fn sample_weight(traj: &Trajectory) -> f64 {
    traj.grid().cell_volume() * traj.snapshot_spacing()
}

fn extrema(traj: &Trajectory, s: &CylinderSamples) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &k in &s.slices {
        let f = &traj.fields()[k];
        for &i in &s.cells {
            lo = lo.min(f[i]);
            hi = hi.max(f[i]);
        }
    }
    (lo, hi)
}

/// Sample extrema `(min, max)` of `traj` over `cyl`.
pub fn ess_extrema(traj: &Trajectory, cyl: &Cylinder) -> Result<(f64, f64)> {
    Ok(extrema(traj, &cylinder_samples(traj, cyl)?))
}

/// `max - min` of the samples in `cyl`.
pub fn ess_osc(traj: &Trajectory, cyl: &Cylinder) -> Result<f64> {
    let (lo, hi) = ess_extrema(traj, cyl)?;
    Ok(hi - lo)
}

/// `theta = 1 / (c0 (omega / 4)^beta)`.
pub fn intrinsic_theta(omega: f64, spec: &SaturationSpec) -> Result<f64> {
    if !(omega > 0.0 && omega <= spec.rho_max * (1.0 + 1e-12)) {
        return Err(domain(
            "oscillation",
            omega,
            format!("(0, {}]", spec.rho_max),
        ));
    }
    Ok(1.0 / (spec.c0 * spec.theta(omega / 4.0)))
}

/// Whether `R^eps <= 1/theta <= c0`; a failure means the oscillation is
/// dominated by the radius.
pub fn theta_in_range(theta: f64, radius: f64, epsilon: f64, spec: &SaturationSpec) -> bool {
    let inv = 1.0 / theta;
    radius.powf(epsilon) <= inv && inv <= spec.c0 * (1.0 + 1e-12)
}

/// Default number of snapshots-times-cells below which a cascade stops.
pub const MIN_CASCADE_SAMPLES: usize = 8;

/// Parameters of the nested-cylinder construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeOptions {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_s_star")]
    pub s_star: f64,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_max_levels")]
    pub max_levels: usize,
    #[serde(default = "default_min_samples")]
    pub min_samples: usize,
}

fn default_epsilon() -> f64 {
    0.5
}
fn default_s_star() -> f64 {
    4.0
}
fn default_max_levels() -> usize {
    12
}
fn default_min_samples() -> usize {
    MIN_CASCADE_SAMPLES
}

impl Default for CascadeOptions {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            s_star: default_s_star(),
            gamma: None,
            eta: None,
            max_levels: default_max_levels(),
            min_samples: default_min_samples(),
        }
    }
}

/// First-alternative reduction factor.
pub const GAMMA_FIRST: f64 = 0.75;

/// Second-alternative reduction factor `1 - 2^{-(s* + 1)}`.
pub fn gamma_second(s_star: f64) -> f64 {
    1.0 - 2f64.powf(-(s_star + 1.0))
}

/// `eta = 2^{-3/2} gamma^{beta/2}`.
pub fn eta_for(gamma: f64, beta: f64) -> f64 {
    2f64.powf(-1.5) * gamma.powf(beta / 2.0)
}

impl CascadeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 2.0) {
            return Err(domain("epsilon", self.epsilon, "(0, 2)"));
        }
        if !(self.s_star > 0.0) {
            return Err(domain("s_star", self.s_star, "(0, inf)"));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g < 1.0) {
                return Err(domain("gamma", g, "(0, 1)"));
            }
        }
        if let Some(e) = self.eta {
            if !(e > 0.0 && e < 1.0) {
                return Err(domain("eta", e, "(0, 1)"));
            }
        }
        if self.max_levels == 0 {
            return Err(Error::Config("max_levels must be at least 1".into()));
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| gamma_second(self.s_star))
    }

    pub fn eta(&self, beta: f64) -> f64 {
        self.eta.unwrap_or_else(|| eta_for(self.gamma(), beta))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeLevel {
    pub k: usize,
    pub radius: f64,
    pub height: f64,
    pub theta: Option<f64>,
    pub omega: f64,
    pub mu_minus: f64,
    pub mu_plus: f64,
    /// `gamma^{k-1} omega_0`.
    pub a_priori: f64,
    pub samples: usize,
    /// Height was cut to fit the parent cylinder or the recorded time span.
    pub clamped: bool,
    /// `R^eps <= 1/theta <= c0` failed.
    pub radius_dominated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub alpha: f64,
    pub gamma_const: f64,
    pub residual: f64,
}

/// Measured oscillations on nested cylinders. Level 0 is the enclosing
/// cylinder `Q(R^{2-eps}, R)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationRecord {
    pub vertex: Point,
    pub t0: f64,
    pub big_r: f64,
    pub gamma: f64,
    pub eta: f64,
    pub levels: Vec<CascadeLevel>,
    pub fit: Option<HolderFit>,
    /// The cascade stopped early for lack of samples.
    pub truncated: bool,
}

impl OscillationRecord {
    pub fn omegas(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.omega).collect()
    }

    /// Nested levels after the enclosing one.
    pub fn nested_levels(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    pub fn is_monotone(&self) -> bool {
        self.levels.windows(2).all(|w| w[1].omega <= w[0].omega)
    }
}

/// Builds `Q_k = Q(theta_k R_k^2, R_k)`, `R_k = eta^{k-1} R`, with `theta_k`
/// taken from the oscillation measured one level up, and fits
/// `omega_k = Gamma omega_0 (R_k / R)^alpha`.
pub fn oscillation_cascade(
    traj: &Trajectory,
    vertex: Point,
    t0: f64,
    big_r: f64,
    spec: &SaturationSpec,
    opts: &CascadeOptions,
) -> Result<OscillationRecord> {
    opts.validate()?;
    let (t_start, _) = traj.time_span();
    let available = t0 - t_start;
    if !(available > 0.0) {
        return Err(Error::Geometry(format!(
            "vertex time {t0} leaves no recorded history (trajectory starts at {t_start})"
        )));
    }
    let gamma = opts.gamma();
    let eta = opts.eta(spec.beta);

    let enclosing_height = big_r.powf(2.0 - opts.epsilon);
    let mut parent = Cylinder::new(vertex, t0, big_r, enclosing_height.min(available))?;
    parent.theta = Some(big_r.powf(-opts.epsilon));
    let samples = cylinder_samples(traj, &parent)?;
    let (lo, hi) = extrema(traj, &samples);
    let omega0 = hi - lo;
    let mut levels = vec![CascadeLevel {
        k: 0,
        radius: big_r,
        height: parent.height,
        theta: parent.theta,
        omega: omega0,
        mu_minus: lo,
        mu_plus: hi,
        a_priori: omega0,
        samples: samples.count(),
        clamped: enclosing_height > available,
        radius_dominated: false,
    }];
    let mut truncated = false;

    for k in 1..=opts.max_levels {
        let prev_omega = levels[k - 1].omega;
        let radius = big_r * eta.powi(k as i32 - 1);
        let theta = if prev_omega > 0.0 {
            Some(intrinsic_theta(prev_omega.min(spec.rho_max), spec)?)
        } else {
            None
        };
        let wanted = theta.map_or(parent.height, |th| th * radius * radius);
        let height = wanted.min(parent.height);
        let mut cyl = Cylinder::new(vertex, t0, radius, height)?;
        cyl.theta = theta;
        assert!(
            cyl.is_inside(&parent),
            "cascade level {k} escapes its parent"
        );

        let samples = match cylinder_samples(traj, &cyl) {
            Ok(s) if s.count() >= opts.min_samples => s,
            Ok(s) => {
                log::warn!(
                    "cascade stopped at level {k}: {} samples < {}",
                    s.count(),
                    opts.min_samples
                );
                truncated = true;
                break;
            }
            Err(_) => {
                log::warn!("cascade stopped at level {k}: no samples");
                truncated = true;
                break;
            }
        };
        let (lo, hi) = extrema(traj, &samples);
        levels.push(CascadeLevel {
            k,
            radius,
            height,
            theta,
            omega: hi - lo,
            mu_minus: lo,
            mu_plus: hi,
            a_priori: gamma.powi(k as i32 - 1) * omega0,
            samples: samples.count(),
            clamped: wanted > height,
            radius_dominated: theta
                .is_some_and(|th| !theta_in_range(th, radius, opts.epsilon, spec)),
        });
        parent = cyl;
    }

    let fit = fit_holder(&levels[1..], big_r, omega0);
    Ok(OscillationRecord {
        vertex,
        t0,
        big_r,
        gamma,
        eta,
        levels,
        fit,
        truncated,
    })
}

/// Least-squares fit of `log omega = log(Gamma omega_0) + alpha log(r / R)`
/// over levels with positive oscillation.
fn fit_holder(levels: &[CascadeLevel], big_r: f64, omega0: f64) -> Option<HolderFit> {
    let pts: Vec<(f64, f64)> = levels
        .iter()
        .filter(|l| l.omega > 0.0)
        .map(|l| ((l.radius / big_r).ln(), l.omega.ln()))
        .collect();
    if pts.len() < 2 || omega0 <= 0.0 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let alpha = sxy / sxx;
    let intercept = my - alpha * mx;
    let residual = (pts
        .iter()
        .map(|p| (p.1 - intercept - alpha * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Some(HolderFit {
        alpha,
        gamma_const: intercept.exp() / omega0,
        residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    First,
    Second,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub alternative: Alternative,
    pub fraction_high: f64,
    pub fraction_low: f64,
    pub nu: f64,
}

/// First alternative when `|{rho > rho_max - omega/2}| <= nu |Q|` on the samples.
pub fn alternative_classify(
    traj: &Trajectory,
    cyl: &Cylinder,
    omega: f64,
    nu: f64,
    rho_max: f64,
) -> Result<Classification> {
    if !(nu > 0.0 && nu < 1.0) {
        return Err(domain("nu", nu, "(0, 1)"));
    }
    let s = cylinder_samples(traj, cyl)?;
    let (mut high, mut low) = (0usize, 0usize);
    for &k in &s.slices {
        let f = &traj.fields()[k];
        for &i in &s.cells {
            high += usize::from(f[i] > rho_max - omega / 2.0);
            low += usize::from(f[i] < omega / 2.0);
        }
    }
    let total = s.count() as f64;
    let fraction_high = high as f64 / total;
    let alternative = if fraction_high <= nu {
        Alternative::First
    } else {
        Alternative::Second
    };
    Ok(Classification {
        alternative,
        fraction_high,
        fraction_low: low as f64 / total,
        nu,
    })
}

/// `v_h(t) = (1/h) int_t^{t+h} v` of the piecewise-linear-in-time interpolant,
/// at every snapshot time with `t + h <= T`.
pub fn steklov_average(traj: &Trajectory, window: f64) -> Result<Trajectory> {
    let (start, end) = traj.time_span();
    let span = end - start;
    if !(window > 0.0 && window < span) {
        return Err(domain("Steklov window", window, format!("(0, {span})")));
    }
    let times = traj.times();
    let fields = traj.fields();
    let tol = TIME_TOL * end.abs().max(1.0);
    let mut out = Trajectory::new(traj.grid().clone());
    let n = traj.grid().len();
    for (j, &t) in times.iter().enumerate() {
        let top = t + window;
        if top > end + tol {
            break;
        }
        let top = top.min(end);
        let mut acc = vec![0.0; n];
        for s in j..times.len() - 1 {
            let (a, b) = (times[s], times[s + 1]);
            if a >= top {
                break;
            }
            let hi = b.min(top);
            let w = (hi - a) / (b - a);
            let len = hi - a;
            for (c, out) in acc.iter_mut().enumerate() {
                let fa = fields[s][c];
                let fh = fa + w * (fields[s + 1][c] - fa);
                *out += 0.5 * len * (fa + fh);
            }
        }
        out.push(t, acc.into_iter().map(|v| v / window).collect())?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTolerances {
    pub gap: f64,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub rho_inf: DensityField,
    /// `(t, sup |rho(t) - rho_inf|)` per snapshot.
    pub gaps: Vec<(f64, f64)>,
    pub tail_max_gap: f64,
    pub residual: f64,
    pub converged: bool,
}

impl ConvergenceReport {
    /// Earliest snapshot time from which every later gap stays below `tol`.
    pub fn settling_time(&self, tol: f64) -> Option<f64> {
        let last_bad = self.gaps.iter().rposition(|&(_, g)| g > tol);
        match last_bad {
            None => self.gaps.first().map(|g| g.0),
            Some(k) => self.gaps.get(k + 1).map(|g| g.0),
        }
    }

    /// Whether the tail of the gap series never increases.
    pub fn tail_is_monotone(&self, tail_fraction: f64) -> bool {
        let start = tail_start(self.gaps.len(), tail_fraction);
        self.gaps[start..].windows(2).all(|w| w[1].1 <= w[0].1)
    }
}

fn tail_start(len: usize, tail_fraction: f64) -> usize {
    let tail = ((len as f64) * tail_fraction).ceil() as usize;
    len - tail.clamp(1, len)
}

/// Takes the last snapshot as `rho_inf` and measures how fast the run approaches it.
pub fn convergence_monitor(
    traj: &Trajectory,
    tail_fraction: f64,
    solver: &Solver,
    tol: &ConvergenceTolerances,
) -> Result<ConvergenceReport> {
    if traj.len() < 10 {
        return Err(Error::Contract(format!(
            "convergence monitoring needs at least 10 snapshots, got {}",
            traj.len()
        )));
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(domain("tail_fraction", tail_fraction, "(0, 1]"));
    }
    let rho_inf = traj.last().expect("non-empty trajectory");
    let mut gaps = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        gaps.push((traj.times()[k], sup_distance(&traj.snapshot(k), &rho_inf)?));
    }
    let start = tail_start(gaps.len() - 1, tail_fraction);
    let tail_max_gap = gaps[start..gaps.len() - 1]
        .iter()
        .fold(0.0f64, |m, g| m.max(g.1));
    let residual = solver.stationary_residual(&rho_inf)?;
    Ok(ConvergenceReport {
        converged: tail_max_gap <= tol.gap && residual <= tol.residual,
        rho_inf,
        gaps,
        tail_max_gap,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn static_traj(grid: Grid, f: impl Fn(&Point) -> f64, times: &[f64]) -> Trajectory {
        let values = DensityField::from_fn(grid.clone(), f)
            .unwrap()
            .into_values();
        let mut tr = Trajectory::new(grid);
        for &t in times {
            tr.push(t, values.clone()).unwrap();
        }
        tr
    }

    fn ticks(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * dt).collect()
    }

    #[test]
    fn theta_examples() {
        let lin = SaturationSpec::power(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(intrinsic_theta(1.0, &lin).unwrap(), 4.0);
        let quad = SaturationSpec::power(1.0, 2.0).unwrap();
        assert_abs_diff_eq!(intrinsic_theta(1.0, &quad).unwrap(), 16.0);
        let unit = SaturationSpec::unit(1.0).unwrap();
        assert_eq!(intrinsic_theta(0.3, &unit).unwrap(), 1.0);
        assert!(intrinsic_theta(0.0, &quad).is_err());
        assert!(intrinsic_theta(-0.5, &quad).is_err());
    }

    #[test]
    fn theta_range_flags_small_oscillations() {
        let quad = SaturationSpec::power(1.0, 2.0).unwrap();
        let th = intrinsic_theta(0.01, &quad).unwrap();
        assert!(!theta_in_range(th, 0.5, 0.5, &quad));
        let th = intrinsic_theta(1.0, &quad).unwrap();
        assert!(theta_in_range(th, 0.001, 0.5, &quad));
    }

    #[test]
    fn oscillation_of_constant_and_linear_fields() {
        let g = Grid::uniform_1d(0.0, 1.0, 200).unwrap();
        let c = static_traj(g.clone(), |_| 0.4, &ticks(5, 0.1));
        let cyl = Cylinder::new([0.5, 0.0], 0.4, 0.2, 0.3).unwrap();
        assert_eq!(ess_osc(&c, &cyl).unwrap(), 0.0);

        let lin = static_traj(g.clone(), |x| x[0], &ticks(5, 0.1));
        let h = g.spacing(0);
        for r in [0.1, 0.23, 0.4] {
            let cyl = Cylinder::new([0.5, 0.0], 0.4, r, 0.3).unwrap();
            let w = ess_osc(&lin, &cyl).unwrap();
            assert!((w - 2.0 * r).abs() <= h + 1e-12, "r = {r}: {w}");
        }
    }

    #[test]
    fn empty_cylinder_is_an_error() {
        let g = Grid::uniform_1d(0.0, 1.0, 10).unwrap();
        let tr = static_traj(g, |_| 0.4, &ticks(3, 0.1));
        let tiny = Cylinder::new([0.5, 0.0], 0.2, 0.01, 0.05).unwrap();
        assert!(matches!(ess_osc(&tr, &tiny), Err(Error::EmptySample(_))));
        let late = Cylinder::new([0.5, 0.0], 5.0, 0.3, 0.05).unwrap();
        assert!(matches!(ess_osc(&tr, &late), Err(Error::EmptySample(_))));
    }

    #[test]
    fn window_is_half_open() {
        let cyl = Cylinder::new([0.0, 0.0], 1.0, 1.0, 0.5).unwrap();
        assert!(cyl.contains_time(1.0));
        assert!(!cyl.contains_time(0.5));
        assert!(cyl.contains_time(0.5 + 1e-9));
        assert_abs_diff_eq!(cyl.measure(1), 1.0);
    }

    proptest! {
        #[test]
        fn ess_osc_matches_brute_force(
            values in prop::collection::vec(0.0..1.0f64, 12 * 6),
            x0 in 0.0..1.0f64,
            r in 0.05..0.6f64,
            t0 in 0.0..0.5f64,
            tau in 0.01..0.5f64,
        ) {
            let g = Grid::uniform_1d(0.0, 1.0, 12).unwrap();
            let mut tr = Trajectory::new(g.clone());
            for k in 0..6 {
                tr.push(k as f64 * 0.1, values[k * 12..(k + 1) * 12].to_vec()).unwrap();
            }
            let cyl = Cylinder::new([x0, 0.0], t0, r, tau).unwrap();
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for k in 0..6 {
                let t = k as f64 * 0.1;
                if !(t > t0 - tau + 1e-12 && t <= t0 + 1e-12) { continue; }
                for i in 0..12 {
                    if (g.center(i)[0] - x0).abs() < r {
                        lo = lo.min(values[k * 12 + i]);
                        hi = hi.max(values[k * 12 + i]);
                    }
                }
            }
            match ess_osc(&tr, &cyl) {
                Ok(w) => prop_assert_eq!(w, hi - lo),
                Err(_) => prop_assert!(lo.is_infinite()),
            }
        }

        #[test]
        fn ess_osc_is_monotone_under_inclusion(
            values in prop::collection::vec(0.0..1.0f64, 16 * 5),
            r in 0.1..0.5f64,
            shrink in 0.2..1.0f64,
        ) {
            let g = Grid::uniform_1d(0.0, 1.0, 16).unwrap();
            let mut tr = Trajectory::new(g);
            for k in 0..5 {
                tr.push(k as f64, values[k * 16..(k + 1) * 16].to_vec()).unwrap();
            }
            let outer = Cylinder::new([0.5, 0.0], 4.0, r, 3.5).unwrap();
            let inner = Cylinder::new([0.5, 0.0], 4.0, r * shrink, 3.5 * shrink).unwrap();
            if let (Ok(a), Ok(b)) = (ess_osc(&tr, &outer), ess_osc(&tr, &inner)) {
                prop_assert!(b <= a);
            }
        }
    }

    #[test]
    fn constant_cascade_skips_the_fit() {
        let g = Grid::uniform_1d(-1.0, 1.0, 128).unwrap();
        let tr = static_traj(g, |_| 0.3, &ticks(50, 0.02));
        let spec = SaturationSpec::power(1.0, 2.0).unwrap();
        let rec = oscillation_cascade(
            &tr,
            [0.0, 0.0],
            0.98,
            0.5,
            &spec,
            &CascadeOptions::default(),
        )
        .unwrap();
        assert!(rec.levels.len() > 1);
        assert!(rec
            .levels
            .iter()
            .all(|l| l.omega == 0.0 && l.theta.is_none() || l.k == 0));
        assert!(rec.fit.is_none());
    }

    #[test]
    fn cascade_recovers_holder_exponent() {
        let g = Grid::uniform_1d(-1.0, 1.0, 4096).unwrap();
        let tr = static_traj(g, |x| x[0].abs().sqrt().min(1.0), &ticks(400, 0.01));
        let spec = SaturationSpec::power(1.0, 1.0).unwrap();
        let opts = CascadeOptions {
            eta: Some(0.5),
            ..CascadeOptions::default()
        };
        let rec = oscillation_cascade(&tr, [0.0, 0.0], 3.99, 0.9, &spec, &opts).unwrap();
        assert!(rec.nested_levels() >= 5);
        assert!(rec.is_monotone());
        let fit = rec.fit.unwrap();
        assert!((fit.alpha - 0.5).abs() <= 0.1, "alpha = {}", fit.alpha);
    }

    #[test]
    fn cascade_levels_are_nested() {
        let g = Grid::uniform_1d(-1.0, 1.0, 256).unwrap();
        let mut tr = Trajectory::new(g.clone());
        for k in 0..200 {
            let t = k as f64 * 0.005;
            tr.push(
                t,
                DensityField::from_fn(g.clone(), |x| 0.5 + 0.4 * (3.0 * x[0] - 2.0 * t).sin())
                    .unwrap()
                    .into_values(),
            )
            .unwrap();
        }
        let spec = SaturationSpec::power(1.0, 2.0).unwrap();
        let rec = oscillation_cascade(
            &tr,
            [0.1, 0.0],
            0.995,
            0.8,
            &spec,
            &CascadeOptions::default(),
        )
        .unwrap();
        assert!(rec.is_monotone());
        for w in rec.levels.windows(2) {
            assert!(w[1].radius <= w[0].radius && w[1].height <= w[0].height);
        }
        assert_abs_diff_eq!(rec.gamma, 1.0 - 1.0 / 32.0);
        assert_abs_diff_eq!(rec.eta, 2f64.powf(-1.5) * rec.gamma);
    }

    #[test]
    fn classifier_examples() {
        let g = Grid::uniform_1d(0.0, 1.0, 20).unwrap();
        let cyl = Cylinder::new([0.5, 0.0], 0.4, 0.5, 0.45).unwrap();
        let low = static_traj(g.clone(), |_| 0.6, &ticks(5, 0.1));
        let c = alternative_classify(&low, &cyl, 0.4, 0.3, 1.0).unwrap();
        assert_eq!(c.alternative, Alternative::First);
        assert_eq!(c.fraction_high, 0.0);

        let full = static_traj(g.clone(), |_| 1.0, &ticks(5, 0.1));
        let c = alternative_classify(&full, &cyl, 0.4, 0.99, 1.0).unwrap();
        assert_eq!(c.alternative, Alternative::Second);
        assert_eq!(c.fraction_high, 1.0);

        let checker = static_traj(
            g.clone(),
            |x| {
                if ((x[0] * 20.0) as usize).is_multiple_of(2) {
                    0.9
                } else {
                    0.1
                }
            },
            &ticks(5, 0.1),
        );
        let half = alternative_classify(&checker, &cyl, 0.8, 0.49, 1.0).unwrap();
        assert_eq!(half.fraction_high, 0.5);
        assert_eq!(half.alternative, Alternative::Second);
        let c = alternative_classify(&checker, &cyl, 0.8, 0.5, 1.0).unwrap();
        assert_eq!(c.alternative, Alternative::First);
        assert_eq!(c.fraction_low, 0.5);
    }

    #[test]
    fn steklov_examples() {
        let g = Grid::uniform_1d(0.0, 1.0, 6).unwrap();
        let times = ticks(11, 0.1);
        let c = static_traj(g.clone(), |_| 0.3, &times);
        let avg = steklov_average(&c, 0.3).unwrap();
        assert_eq!(avg.len(), 8);
        for f in avg.fields() {
            for v in f {
                assert_abs_diff_eq!(*v, 0.3, epsilon = 1e-15);
            }
        }

        let mut ramp = Trajectory::new(g.clone());
        for &t in &times {
            ramp.push(t, vec![t; 6]).unwrap();
        }
        let h = 0.25;
        let avg = steklov_average(&ramp, h).unwrap();
        for (t, f) in avg.times().iter().zip(avg.fields()) {
            for v in f {
                assert_abs_diff_eq!(*v, t + h / 2.0, epsilon = 1e-14);
            }
        }
        assert!(steklov_average(&ramp, 1.0).is_err());
        assert!(steklov_average(&ramp, 0.0).is_err());
    }

    #[test]
    fn steklov_approaches_samples_as_window_shrinks() {
        let g = Grid::uniform_1d(0.0, 1.0, 8).unwrap();
        let mut tr = Trajectory::new(g);
        let values: Vec<Vec<f64>> = (0..21)
            .map(|k| {
                (0..8)
                    .map(|i| ((k * 7 + i * 3) % 11) as f64 / 11.0)
                    .collect()
            })
            .collect();
        for (k, v) in values.iter().enumerate() {
            tr.push(k as f64 * 0.05, v.clone()).unwrap();
        }
        let slope = values
            .windows(2)
            .flat_map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (b - a).abs() / 0.05))
            .fold(0.0, f64::max);
        for h in [0.05, 0.01, 0.001] {
            let avg = steklov_average(&tr, h).unwrap();
            for (k, f) in avg.fields().iter().enumerate() {
                for (a, b) in f.iter().zip(&values[k]) {
                    assert!((a - b).abs() <= slope * h + 1e-12);
                }
            }
        }
    }
}
