//! Continuous model: saturation law, energy density, potentials, the free
//! energy and its dissipation, and the bounded-domain convolution.
//!
//! All integrals use the midpoint rule on cell centres.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mesh::{neumaier_sum, DensityField, Grid, Point, MAX_DIM};

/// Shape of the saturation function `sigma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaturationForm {
    /// `sigma(s) = (rho_max - s)^m`.
    Power { m: f64 },
    /// Piecewise-linear interpolation of `(knot, value)` samples on `[0, rho_max]`.
    Tabulated { knots: Vec<f64>, values: Vec<f64> },
    /// `sigma == 1`. Non-degenerate validation mode; violates `sigma(rho_max) = 0`.
    Unit,
}

/// Saturation law together with its sandwich constants
/// `c0 (rho_max - s)^beta <= sigma(s) <= c1 (rho_max - s)^beta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationSpec {
    pub rho_max: f64,
    pub beta: f64,
    pub c0: f64,
    pub c1: f64,
    pub form: SaturationForm,
}

const SANDWICH_TOL: f64 = 1e-12;

impl SaturationSpec {
    /// Power law with the exact sandwich `beta = m`, `c0 = c1 = 1`.
    pub fn power(rho_max: f64, m: f64) -> Result<Self> {
        let spec = Self {
            rho_max,
            beta: m,
            c0: 1.0,
            c1: 1.0,
            form: SaturationForm::Power { m },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn tabulated(
        rho_max: f64,
        knots: Vec<f64>,
        values: Vec<f64>,
        beta: f64,
        c0: f64,
        c1: f64,
    ) -> Result<Self> {
        let spec = Self {
            rho_max,
            beta,
            c0,
            c1,
            form: SaturationForm::Tabulated { knots, values },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `sigma == 1`, reported with `beta = 0` and `c0 = c1 = 1`.
    pub fn unit(rho_max: f64) -> Result<Self> {
        let spec = Self {
            rho_max,
            beta: 0.0,
            c0: 1.0,
            c1: 1.0,
            form: SaturationForm::Unit,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_max.is_finite() && self.rho_max > 0.0) {
            return Err(domain("rho_max", self.rho_max, "(0, inf)"));
        }
        if !(self.c0 > 0.0 && self.c1 >= self.c0 && self.c1.is_finite()) {
            return Err(Error::Config(format!(
                "sandwich constants need 0 < c0 <= c1, got c0 = {}, c1 = {}",
                self.c0, self.c1
            )));
        }
        match &self.form {
            SaturationForm::Power { m } => {
                if !(m.is_finite() && *m > 0.0) {
                    return Err(domain("saturation exponent m", *m, "(0, inf)"));
                }
                if !(self.beta > 0.0) {
                    return Err(domain("beta", self.beta, "(0, inf)"));
                }
            }
            SaturationForm::Tabulated { knots, values } => {
                if !(self.beta > 0.0) {
                    return Err(domain("beta", self.beta, "(0, inf)"));
                }
                if knots.len() < 2 || knots.len() != values.len() {
                    return Err(Error::Config(format!(
                        "tabulated sigma needs >= 2 matching knots/values, got {}/{}",
                        knots.len(),
                        values.len()
                    )));
                }
                if knots.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config(
                        "tabulated sigma knots must increase strictly".into(),
                    ));
                }
                if knots[0] != 0.0 || knots[knots.len() - 1] != self.rho_max {
                    return Err(Error::Config(format!(
                        "tabulated sigma must span [0, {}], got [{}, {}]",
                        self.rho_max,
                        knots[0],
                        knots[knots.len() - 1]
                    )));
                }
                if values[values.len() - 1] != 0.0 {
                    return Err(Error::Config(format!(
                        "tabulated sigma must vanish at rho_max, got {}",
                        values[values.len() - 1]
                    )));
                }
                if values[..values.len() - 1]
                    .iter()
                    .any(|v| !(*v > 0.0 && v.is_finite()))
                {
                    return Err(Error::Config(
                        "tabulated sigma must be positive below rho_max".into(),
                    ));
                }
            }
            SaturationForm::Unit => {}
        }
        Ok(())
    }

    /// True unless this is the non-degenerate validation mode.
    pub fn is_degenerate(&self) -> bool {
        !matches!(self.form, SaturationForm::Unit)
    }

    fn check_range(&self, s: f64) -> Result<()> {
        if (0.0..=self.rho_max).contains(&s) {
            Ok(())
        } else {
            Err(domain("density", s, format!("[0, {}]", self.rho_max)))
        }
    }

    /// `sigma(s)`, with `sigma(rho_max) = 0` exactly for degenerate forms.
    pub fn sigma(&self, s: f64) -> Result<f64> {
        self.check_range(s)?;
        Ok(self.sigma_unchecked(s))
    }

    /// `sigma(s)` without the range check; callers guarantee `0 <= s <= rho_max`.
    pub fn sigma_unchecked(&self, s: f64) -> f64 {
        match &self.form {
            SaturationForm::Power { m } => {
                let gap = self.rho_max - s;
                if gap <= 0.0 {
                    0.0
                } else {
                    gap.powf(*m)
                }
            }
            SaturationForm::Tabulated { knots, values } => interp_linear(knots, values, s),
            SaturationForm::Unit => 1.0,
        }
    }

    /// `Sigma(s) = int_0^s sigma`.
    pub fn big_sigma(&self, s: f64) -> Result<f64> {
        self.check_range(s)?;
        Ok(self.big_sigma_unchecked(s))
    }

    pub fn big_sigma_unchecked(&self, s: f64) -> f64 {
        match &self.form {
            SaturationForm::Power { m } => {
                let r = self.rho_max;
                let gap = (r - s).max(0.0);
                (r.powf(m + 1.0) - gap.powf(m + 1.0)) / (m + 1.0)
            }
            SaturationForm::Tabulated { knots, values } => {
                let mut acc = 0.0;
                for j in 0..knots.len() - 1 {
                    let (a, b) = (knots[j], knots[j + 1]);
                    if s <= a {
                        break;
                    }
                    let hi = s.min(b);
                    let v_hi = values[j] + (values[j + 1] - values[j]) * (hi - a) / (b - a);
                    acc += 0.5 * (hi - a) * (values[j] + v_hi);
                }
                acc
            }
            SaturationForm::Unit => s,
        }
    }

    /// `max_{[0, rho_max]} sigma`.
    pub fn sigma_max(&self) -> f64 {
        match &self.form {
            SaturationForm::Power { m } => self.rho_max.powf(*m),
            SaturationForm::Tabulated { values, .. } => values.iter().copied().fold(0.0, f64::max),
            SaturationForm::Unit => 1.0,
        }
    }

    /// Lipschitz constant of `sigma` on `[0, rho_max]`; infinite for `m < 1`.
    pub fn lipschitz(&self) -> f64 {
        match &self.form {
            SaturationForm::Power { m } => {
                if *m < 1.0 {
                    f64::INFINITY
                } else {
                    m * self.rho_max.powf(m - 1.0)
                }
            }
            SaturationForm::Tabulated { knots, values } => knots
                .windows(2)
                .zip(values.windows(2))
                .map(|(k, v)| ((v[1] - v[0]) / (k[1] - k[0])).abs())
                .fold(0.0, f64::max),
            SaturationForm::Unit => 0.0,
        }
    }

    /// `Theta(s) = s^beta`.
    pub fn theta(&self, s: f64) -> f64 {
        if self.beta == 0.0 {
            1.0
        } else {
            s.max(0.0).powf(self.beta)
        }
    }

    /// Checks degeneracy at `rho_max`, positivity below it, and the sandwich
    /// bounds on `samples` uniformly spaced points.
    pub fn check_sandwich(&self, samples: usize) -> Result<()> {
        let n = samples.max(2);
        for k in 0..n {
            let s = self.rho_max * k as f64 / (n - 1) as f64;
            let sig = self.sigma_unchecked(s);
            let th = self.theta(self.rho_max - s);
            if self.is_degenerate() {
                if k == n - 1 && sig != 0.0 {
                    return Err(Error::Contract(format!("sigma(rho_max) = {sig} != 0")));
                }
                if k < n - 1 && sig <= 0.0 {
                    return Err(Error::Contract(format!(
                        "sigma({s}) = {sig} is not positive"
                    )));
                }
            }
            if sig < self.c0 * th - SANDWICH_TOL || sig > self.c1 * th + SANDWICH_TOL {
                return Err(Error::Contract(format!(
                    "sandwich violated at s = {s}: {} <= {sig} <= {} fails",
                    self.c0 * th,
                    self.c1 * th
                )));
            }
        }
        Ok(())
    }
}

fn interp_linear(knots: &[f64], values: &[f64], s: f64) -> f64 {
    if s <= knots[0] {
        return values[0];
    }
    let last = knots.len() - 1;
    if s >= knots[last] {
        return values[last];
    }
    let j = knots.partition_point(|&k| k <= s) - 1;
    let t = (s - knots[j]) / (knots[j + 1] - knots[j]);
    values[j] + t * (values[j + 1] - values[j])
}

/// Energy density `U`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EnergyDensity {
    /// `U(s) = s (log s - 1)`, with `U(0) = 0`.
    Boltzmann,
    /// `U(s) = s^m / (m - 1)`, `m > 1`.
    Porous { m: f64 },
}

impl EnergyDensity {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnergyDensity::Boltzmann => Ok(()),
            EnergyDensity::Porous { m } if *m > 1.0 && m.is_finite() => Ok(()),
            EnergyDensity::Porous { m } => Err(domain("porous exponent m", *m, "(1, inf)")),
        }
    }

    pub fn u(&self, s: f64) -> f64 {
        match self {
            EnergyDensity::Boltzmann => {
                if s <= 0.0 {
                    0.0
                } else {
                    s * (s.ln() - 1.0)
                }
            }
            EnergyDensity::Porous { m } => s.max(0.0).powf(*m) / (m - 1.0),
        }
    }

    /// `U'(s)`; `-inf` at `s = 0` for the Boltzmann kind.
    pub fn du(&self, s: f64) -> f64 {
        match self {
            EnergyDensity::Boltzmann => s.ln(),
            EnergyDensity::Porous { m } => m / (m - 1.0) * s.max(0.0).powf(m - 1.0),
        }
    }

    pub fn d2u(&self, s: f64) -> f64 {
        match self {
            EnergyDensity::Boltzmann => 1.0 / s,
            EnergyDensity::Porous { m } => m * s.max(0.0).powf(m - 2.0),
        }
    }
}

const GAUSS5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GAUSS5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

fn gauss5(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    GAUSS5_NODES
        .iter()
        .zip(GAUSS5_WEIGHTS)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Number of intervals in the cached diffusion primitive table.
pub const PRIMITIVE_TABLE_INTERVALS: usize = 4096;

/// Diffusion primitive `Phi` with `Phi' = U''(s) s sigma(s)` and `Phi(0) = 0`.
///
/// For the Boltzmann kind this is `Sigma` itself. For porous densities it is a
/// monotone piecewise-linear table built once by Gauss quadrature.
#[derive(Clone, Debug)]
pub enum DiffusionPrimitive {
    Sigma(SaturationSpec),
    Table {
        step: f64,
        values: Vec<f64>,
        slope_max: f64,
    },
}

impl DiffusionPrimitive {
    pub fn new(energy: &EnergyDensity, spec: &SaturationSpec) -> Self {
        match energy {
            EnergyDensity::Boltzmann => DiffusionPrimitive::Sigma(spec.clone()),
            EnergyDensity::Porous { m } => {
                let n = PRIMITIVE_TABLE_INTERVALS;
                let step = spec.rho_max / n as f64;
                let integrand = |s: f64| m * s.max(0.0).powf(m - 1.0) * spec.sigma_unchecked(s);
                let mut values = Vec::with_capacity(n + 1);
                values.push(0.0);
                let mut acc = 0.0;
                let mut slope_max: f64 = 0.0;
                for j in 0..n {
                    let a = j as f64 * step;
                    let b = if j + 1 == n { spec.rho_max } else { a + step };
                    let inc = gauss5(integrand, a, b).max(0.0);
                    acc += inc;
                    slope_max = slope_max.max(inc / step);
                    values.push(acc);
                }
                DiffusionPrimitive::Table {
                    step,
                    values,
                    slope_max,
                }
            }
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            DiffusionPrimitive::Sigma(spec) => spec.big_sigma_unchecked(s),
            DiffusionPrimitive::Table { step, values, .. } => {
                let x = (s / step).max(0.0);
                let j = (x.floor() as usize).min(values.len() - 2);
                let t = (x - j as f64).min(1.0);
                values[j] + t * (values[j + 1] - values[j])
            }
        }
    }

    /// Lipschitz constant of `Phi` as evaluated.
    pub fn lipschitz(&self) -> f64 {
        match self {
            DiffusionPrimitive::Sigma(spec) => spec.sigma_max(),
            DiffusionPrimitive::Table { slope_max, .. } => *slope_max,
        }
    }
}

/// Confinement or interaction potential preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Potential {
    Zero,
    /// `|x|^2 / 2`.
    Quadratic,
    /// One-dimensional profile sampled at strictly increasing coordinates.
    Tabulated {
        coords: Vec<f64>,
        values: Vec<f64>,
    },
}

impl Potential {
    pub fn is_zero(&self) -> bool {
        matches!(self, Potential::Zero)
    }

    pub fn eval(&self, x: &Point) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Quadratic => 0.5 * x.iter().map(|c| c * c).sum::<f64>(),
            Potential::Tabulated { coords, values } => interp_linear(coords, values, x[0]),
        }
    }

    fn validate_cover(&self, dim: usize, lo: f64, hi: f64, name: &str) -> Result<()> {
        if let Potential::Tabulated { coords, values } = self {
            if dim != 1 {
                return Err(Error::Config(format!(
                    "tabulated {name} is only supported on one-dimensional grids"
                )));
            }
            if coords.len() < 2 || coords.len() != values.len() {
                return Err(Error::Config(format!(
                    "tabulated {name} needs >= 2 matching coordinates/values"
                )));
            }
            if coords.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config(format!(
                    "tabulated {name} coordinates must increase strictly"
                )));
            }
            let tol = 1e-12 * (hi - lo).abs().max(1.0);
            if coords[0] > lo + tol || coords[coords.len() - 1] < hi - tol {
                return Err(Error::Config(format!(
                    "tabulated {name} covers [{}, {}] but [{lo}, {hi}] is required",
                    coords[0],
                    coords[coords.len() - 1]
                )));
            }
        }
        Ok(())
    }
}

/// Confinement `V` and interaction kernel `W`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub v: Potential,
    pub w: Potential,
}

impl PotentialSpec {
    pub fn new(v: Potential, w: Potential) -> Self {
        Self { v, w }
    }

    pub fn none() -> Self {
        Self::new(Potential::Zero, Potential::Zero)
    }

    /// Samples `V` at cell centres and `W` on the difference set `Omega - Omega`.
    pub fn discretize(&self, grid: &Grid) -> Result<GridPotentials> {
        let (a, b) = grid.extent(0);
        self.v.validate_cover(grid.dim(), a, b, "V")?;
        self.w.validate_cover(grid.dim(), -(b - a), b - a, "W")?;

        let v: Vec<f64> = (0..grid.len())
            .map(|i| self.v.eval(&grid.center(i)))
            .collect();
        let mut shape = [1usize; MAX_DIM];
        for (a, s) in shape.iter_mut().enumerate().take(grid.dim()) {
            *s = 2 * grid.cells()[a] - 1;
        }
        let kernel_len = shape.iter().product();
        let mut kernel = vec![0.0; kernel_len];
        if !self.w.is_zero() {
            for (k, slot) in kernel.iter_mut().enumerate() {
                let off = [k / shape[1], k % shape[1]];
                let mut z = [0.0; MAX_DIM];
                for (ax, z) in z.iter_mut().enumerate().take(grid.dim()) {
                    let d = off[ax] as f64 - (grid.cells()[ax] - 1) as f64;
                    *z = d * grid.spacing(ax);
                }
                *slot = self.w.eval(&z);
            }
        }

        let spacing: Vec<f64> = (0..grid.dim()).map(|a| grid.spacing(a)).collect();
        let grad_v = max_gradient_norm(&v, &cell_shape(grid), &spacing);
        let grad_w = if self.w.is_zero() {
            0.0
        } else {
            max_gradient_norm(&kernel, &shape, &spacing)
        };
        Ok(GridPotentials {
            grid: grid.clone(),
            v,
            kernel,
            kernel_shape: shape,
            w_zero: self.w.is_zero(),
            lambda: 2.0 * grad_v.max(grad_w),
            grad_v_max: grad_v,
            grad_w_max: grad_w,
        })
    }
}

fn cell_shape(grid: &Grid) -> [usize; MAX_DIM] {
    let mut s = [1usize; MAX_DIM];
    for (a, s) in s.iter_mut().enumerate().take(grid.dim()) {
        *s = grid.cells()[a];
    }
    s
}

/// Largest Euclidean norm of the cell-centred difference gradient (central in
/// the interior, one-sided at the edges) of a row-major array.
fn max_gradient_norm(values: &[f64], shape: &[usize; MAX_DIM], spacing: &[f64]) -> f64 {
    let mut best: f64 = 0.0;
    for idx in 0..values.len() {
        let m = [idx / shape[1], idx % shape[1]];
        let mut norm2 = 0.0;
        for (ax, &h) in spacing.iter().enumerate() {
            let n = shape[ax];
            let stride = if ax == 0 { shape[1] } else { 1 };
            let i = m[ax];
            let (lo, hi, span) = if i == 0 {
                (idx, idx + stride, h)
            } else if i == n - 1 {
                (idx - stride, idx, h)
            } else {
                (idx - stride, idx + stride, 2.0 * h)
            };
            let g = (values[hi] - values[lo]) / span;
            norm2 += g * g;
        }
        best = best.max(norm2.sqrt());
    }
    best
}

/// Potentials sampled on a specific grid.
#[derive(Clone, Debug)]
pub struct GridPotentials {
    grid: Grid,
    v: Vec<f64>,
    kernel: Vec<f64>,
    kernel_shape: [usize; MAX_DIM],
    w_zero: bool,
    /// `2 max(|grad V|_inf, |grad W|_inf)` measured on the grid.
    pub lambda: f64,
    pub grad_v_max: f64,
    pub grad_w_max: f64,
}

impl GridPotentials {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn w_is_zero(&self) -> bool {
        self.w_zero
    }

    /// `V + W * rho` at cell centres.
    pub fn potential(&self, values: &[f64]) -> Vec<f64> {
        if self.w_zero {
            return self.v.clone();
        }
        let conv = self.convolve_values(values);
        self.v.iter().zip(conv).map(|(v, c)| v + c).collect()
    }

    fn convolve_values(&self, rho: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        if self.w_zero {
            return vec![0.0; n];
        }
        let vol = self.grid.cell_volume();
        let cells = cell_shape(&self.grid);
        let ks = self.kernel_shape;
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let mi = [i / cells[1], i % cells[1]];
            let mut acc = 0.0;
            for (j, &r) in rho.iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                let mj = [j / cells[1], j % cells[1]];
                let k0 = mi[0] + cells[0] - 1 - mj[0];
                let k1 = mi[1] + cells[1] - 1 - mj[1];
                acc += self.kernel[k0 * ks[1] + k1] * r;
            }
            *o = acc * vol;
        }
        out
    }
}

/// `(W * rho)(x_i) = sum_j W(x_i - x_j) rho_j h^N`.
pub fn convolve(field: &DensityField, pots: &GridPotentials) -> Result<DensityField> {
    field.grid().ensure_same(&pots.grid)?;
    DensityField::new(field.grid().clone(), pots.convolve_values(field.values()))
}

/// Midpoint-rule value of `int U(rho) + rho V + rho (W * rho) / 2`.
pub fn free_energy(
    field: &DensityField,
    energy: &EnergyDensity,
    pots: &GridPotentials,
) -> Result<f64> {
    field.grid().ensure_same(&pots.grid)?;
    if let Some(&bad) = field.values().iter().find(|&&v| v < 0.0) {
        return Err(domain("density", bad, "[0, inf)"));
    }
    let conv = pots.convolve_values(field.values());
    let terms = field
        .values()
        .iter()
        .zip(&pots.v)
        .zip(&conv)
        .map(|((&r, &v), &c)| energy.u(r) + r * v + 0.5 * r * c);
    Ok(neumaier_sum(terms) * field.grid().cell_volume())
}

/// Discrete chemical potential `xi = U'(rho) + V + W * rho`.
pub fn chemical_potential(
    values: &[f64],
    energy: &EnergyDensity,
    pots: &GridPotentials,
) -> Vec<f64> {
    pots.potential(values)
        .into_iter()
        .zip(values)
        .map(|(p, &r)| energy.du(r) + p)
        .collect()
}

/// Upwind face mobility: donor density times receiver saturation, with the
/// donor chosen on the high-`xi` side.
pub(crate) fn face_mobility(
    rho_lo: f64,
    rho_hi: f64,
    xi_lo: f64,
    xi_hi: f64,
    spec: &SaturationSpec,
) -> f64 {
    if xi_lo >= xi_hi {
        rho_lo * spec.sigma_unchecked(rho_hi)
    } else {
        rho_hi * spec.sigma_unchecked(rho_lo)
    }
}

/// `sum_faces m_face |d xi / h|^2 h^N` over interior faces.
///
/// Faces touching an empty cell under the Boltzmann kind contribute zero.
pub fn dissipation(
    field: &DensityField,
    energy: &EnergyDensity,
    pots: &GridPotentials,
    spec: &SaturationSpec,
) -> Result<f64> {
    let grid = field.grid();
    grid.ensure_same(&pots.grid)?;
    field.check_admissible(spec.rho_max)?;
    let rho = field.values();
    let xi = chemical_potential(rho, energy, pots);
    let vol = grid.cell_volume();
    let mut terms = Vec::new();
    for axis in 0..grid.dim() {
        let h = grid.spacing(axis);
        for (_, lo, hi) in grid.interior_faces(axis) {
            if matches!(energy, EnergyDensity::Boltzmann) && (rho[lo] == 0.0 || rho[hi] == 0.0) {
                continue;
            }
            let dxi = xi[hi] - xi[lo];
            if dxi == 0.0 {
                continue;
            }
            let m = face_mobility(rho[lo], rho[hi], xi[lo], xi[hi], spec);
            terms.push(m * (dxi / h).powi(2) * vol);
        }
    }
    Ok(neumaier_sum(terms))
}

/// Mass-matched truncated Gibbs profile `min(rho_max, Z exp(-V))`.
pub fn truncated_gibbs(pots: &GridPotentials, rho_max: f64, mass: f64) -> Result<DensityField> {
    let grid = pots.grid().clone();
    let vol = grid.cell_volume();
    let capacity = rho_max * grid.len() as f64 * vol;
    if !(mass > 0.0 && mass < capacity) {
        return Err(domain("mass", mass, format!("(0, {capacity})")));
    }
    let v_min = pots.v.iter().copied().fold(f64::INFINITY, f64::min);
    let profile = |log_z: f64| -> Vec<f64> {
        pots.v
            .iter()
            .map(|&v| rho_max.min((log_z - (v - v_min)).exp()))
            .collect()
    };
    let mass_of = |log_z: f64| neumaier_sum(profile(log_z)) * vol;
    let (mut lo, mut hi) = (-1.0, 1.0);
    while mass_of(lo) > mass {
        lo *= 2.0;
    }
    while mass_of(hi) < mass {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass_of(mid) < mass {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    DensityField::new(grid, profile(0.5 * (lo + hi)))
}
