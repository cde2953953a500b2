//! Uniform tensor grids on rectangles of dimension one or two, cell-averaged
//! fields, face-centred discrete operators and space-time trajectories.
//!
//! Cells are stored row-major with axis 0 varying slowest. Faces normal to
//! axis `a` are stored per axis; on axis 0 the face between cells
//! `(i - 1, j)` and `(i, j)` has index `i * n1 + j`, and on axis 1 the face
//! between `(i, j - 1)` and `(i, j)` has index `i * (n1 + 1) + j`. Faces with
//! `i == 0` or `i == n_a` lie on the boundary and carry zero flux.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 2;

/// Cell-centre or vertex coordinates. Unused trailing components are zero.
pub type Point = [f64; MAX_DIM];

/// Minimum number of cells per axis.
pub const MIN_CELLS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    cells: Vec<usize>,
}

impl Grid {
    pub fn new(extents: &[(f64, f64)], cells: &[usize]) -> Result<Self> {
        if extents.is_empty() || extents.len() > MAX_DIM {
            return Err(Error::Geometry(format!(
                "grid dimension must be 1 or 2, got {}",
                extents.len()
            )));
        }
        if extents.len() != cells.len() {
            return Err(Error::Shape(format!(
                "{} extents but {} cell counts",
                extents.len(),
                cells.len()
            )));
        }
        for (axis, (&(a, b), &n)) in extents.iter().zip(cells).enumerate() {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(Error::Geometry(format!(
                    "axis {axis}: extent [{a}, {b}) is empty or not finite"
                )));
            }
            if n < MIN_CELLS {
                return Err(Error::Geometry(format!(
                    "axis {axis}: need at least {MIN_CELLS} cells, got {n}"
                )));
            }
        }
        Ok(Self {
            lower: extents.iter().map(|e| e.0).collect(),
            upper: extents.iter().map(|e| e.1).collect(),
            cells: cells.to_vec(),
        })
    }

    /// One-dimensional grid on `[a, b)` with `n` cells.
    pub fn uniform_1d(a: f64, b: f64, n: usize) -> Result<Self> {
        Self::new(&[(a, b)], &[n])
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn extent(&self, axis: usize) -> (f64, f64) {
        (self.lower[axis], self.upper[axis])
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.cells[axis] as f64
    }

    /// Smallest spacing over all axes.
    pub fn min_spacing(&self) -> f64 {
        (0..self.dim())
            .map(|a| self.spacing(a))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Lebesgue measure of the domain.
    pub fn volume(&self) -> f64 {
        (0..self.dim())
            .map(|a| self.upper[a] - self.lower[a])
            .product()
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index of a flat cell index.
    pub fn unravel(&self, idx: usize) -> [usize; MAX_DIM] {
        match self.dim() {
            1 => [idx, 0],
            _ => [idx / self.cells[1], idx % self.cells[1]],
        }
    }

    pub fn ravel(&self, multi: [usize; MAX_DIM]) -> usize {
        match self.dim() {
            1 => multi[0],
            _ => multi[0] * self.cells[1] + multi[1],
        }
    }

    pub fn center(&self, idx: usize) -> Point {
        let m = self.unravel(idx);
        let mut p = [0.0; MAX_DIM];
        for (a, p) in p.iter_mut().enumerate().take(self.dim()) {
            *p = self.lower[a] + (m[a] as f64 + 0.5) * self.spacing(a);
        }
        p
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// Number of faces normal to `axis`, boundary faces included.
    pub fn face_count(&self, axis: usize) -> usize {
        let mut shape = self.cells.clone();
        shape[axis] += 1;
        shape.iter().product()
    }

    /// Multi-index of a face normal to `axis`; component `axis` runs over `0..=n_axis`.
    fn face_multi(&self, axis: usize, face: usize) -> [usize; MAX_DIM] {
        match (self.dim(), axis) {
            (1, _) => [face, 0],
            (_, 0) => [face / self.cells[1], face % self.cells[1]],
            _ => [face / (self.cells[1] + 1), face % (self.cells[1] + 1)],
        }
    }

    /// True when the face sits on the domain boundary.
    pub fn is_boundary_face(&self, axis: usize, face: usize) -> bool {
        let m = self.face_multi(axis, face);
        m[axis] == 0 || m[axis] == self.cells[axis]
    }

    /// Cells on either side of an interior face, `(low, high)` along `axis`.
    pub fn face_neighbors(&self, axis: usize, face: usize) -> Option<(usize, usize)> {
        if self.is_boundary_face(axis, face) {
            return None;
        }
        let hi = self.face_multi(axis, face);
        let mut lo = hi;
        lo[axis] -= 1;
        Some((self.ravel(lo), self.ravel(hi)))
    }

    /// All interior faces normal to `axis` as `(face, low cell, high cell)`.
    pub fn interior_faces(&self, axis: usize) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.face_count(axis))
            .filter_map(move |f| self.face_neighbors(axis, f).map(|(l, r)| (f, l, r)))
    }

    /// Centre of a face.
    pub fn face_center(&self, axis: usize, face: usize) -> Point {
        let m = self.face_multi(axis, face);
        let mut p = [0.0; MAX_DIM];
        for (a, p) in p.iter_mut().enumerate().take(self.dim()) {
            let offset = if a == axis { 0.0 } else { 0.5 };
            *p = self.lower[a] + (m[a] as f64 + offset) * self.spacing(a);
        }
        p
    }

    /// Faces bounding a cell along `axis`, `(low face, high face)`.
    pub fn cell_faces(&self, axis: usize, cell: usize) -> (usize, usize) {
        let m = self.unravel(cell);
        let n1 = if self.dim() == 2 { self.cells[1] } else { 1 };
        match (self.dim(), axis) {
            (1, _) => (m[0], m[0] + 1),
            (_, 0) => (m[0] * n1 + m[1], (m[0] + 1) * n1 + m[1]),
            _ => {
                let base = m[0] * (n1 + 1) + m[1];
                (base, base + 1)
            }
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..self.dim()).all(|a| p[a] >= self.lower[a] && p[a] <= self.upper[a])
    }

    pub(crate) fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "grid mismatch: {:?}x{:?} vs {:?}x{:?}",
                self.cells, self.lower, other.cells, other.lower
            )))
        }
    }
}

/// Euclidean distance between two points.
pub fn distance(a: &Point, b: &Point) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Compensated (Neumaier) sum in iteration order.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Cell-averaged density on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field has {} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite density {} at cell {i}",
                values[i]
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![value; n])
    }

    /// Samples `f` at cell centres.
    pub fn from_fn(grid: Grid, f: impl Fn(&Point) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.center(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Total mass `sum rho_i h^N`.
    pub fn mass(&self) -> f64 {
        neumaier_sum(self.values.iter().copied()) * self.grid.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Checks `0 <= rho <= rho_max` cellwise.
    pub fn check_admissible(&self, rho_max: f64) -> Result<()> {
        match self
            .values
            .iter()
            .position(|&v| !(0.0..=rho_max).contains(&v))
        {
            None => Ok(()),
            Some(i) => Err(crate::error::domain(
                "density",
                self.values[i],
                format!("[0, {rho_max}] (cell {i})"),
            )),
        }
    }
}

/// Per-axis values on the faces of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceField {
    pub axes: Vec<Vec<f64>>,
}

impl FaceField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            axes: (0..grid.dim())
                .map(|a| vec![0.0; grid.face_count(a)])
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.axes
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

/// Face-normal difference quotients `(f_hi - f_lo) / h`; boundary faces are zero.
pub fn face_gradient(grid: &Grid, values: &[f64]) -> FaceField {
    let mut out = FaceField::zeros(grid);
    for axis in 0..grid.dim() {
        let h = grid.spacing(axis);
        for (f, lo, hi) in grid.interior_faces(axis) {
            out.axes[axis][f] = (values[hi] - values[lo]) / h;
        }
    }
    out
}

/// Cellwise `sum_a (F_{a, hi} - F_{a, lo}) / h_a`. Boundary fluxes must vanish.
pub fn divergence(grid: &Grid, flux: &FaceField) -> Result<Vec<f64>> {
    if flux.axes.len() != grid.dim() {
        return Err(Error::Shape(format!(
            "flux has {} axes on a {}-d grid",
            flux.axes.len(),
            grid.dim()
        )));
    }
    for (axis, values) in flux.axes.iter().enumerate() {
        if values.len() != grid.face_count(axis) {
            return Err(Error::Shape(format!(
                "axis {axis}: {} face values, expected {}",
                values.len(),
                grid.face_count(axis)
            )));
        }
        for (f, v) in values.iter().enumerate() {
            if *v != 0.0 && grid.is_boundary_face(axis, f) {
                return Err(Error::Contract(format!(
                    "nonzero flux {v} on boundary face {f} (axis {axis})"
                )));
            }
        }
    }
    let mut out = vec![0.0; grid.len()];
    for (cell, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for axis in 0..grid.dim() {
            let (lo, hi) = grid.cell_faces(axis, cell);
            acc += (flux.axes[axis][hi] - flux.axes[axis][lo]) / grid.spacing(axis);
        }
        *o = acc;
    }
    Ok(out)
}

/// `sum |a_i - b_i| h^N`.
pub fn l1_distance(a: &DensityField, b: &DensityField) -> Result<f64> {
    a.grid.ensure_same(&b.grid)?;
    let s = neumaier_sum(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()));
    Ok(s * a.grid.cell_volume())
}

/// `max_i |a_i - b_i|`.
pub fn sup_distance(a: &DensityField, b: &DensityField) -> Result<f64> {
    a.grid.ensure_same(&b.grid)?;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .fold(0.0, |m: f64, (x, y)| m.max((x - y).abs())))
}

/// Time-indexed sequence of fields sharing one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    grid: Grid,
    times: Vec<f64>,
    fields: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(grid: Grid) -> Self {
        Self {
            grid,
            times: Vec::new(),
            fields: Vec::new(),
        }
    }

    pub fn from_parts(grid: Grid, times: Vec<f64>, fields: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != fields.len() {
            return Err(Error::Shape(format!(
                "{} times for {} fields",
                times.len(),
                fields.len()
            )));
        }
        let mut traj = Self::new(grid);
        for (t, f) in times.into_iter().zip(fields) {
            traj.push(t, f)?;
        }
        Ok(traj)
    }

    pub fn push(&mut self, time: f64, values: Vec<f64>) -> Result<()> {
        if values.len() != self.grid.len() {
            return Err(Error::Shape(format!(
                "snapshot has {} values for {} cells",
                values.len(),
                self.grid.len()
            )));
        }
        if !time.is_finite() {
            return Err(Error::Contract(format!("non-finite snapshot time {time}")));
        }
        if let Some(&last) = self.times.last() {
            if time <= last {
                return Err(Error::Contract(format!(
                    "snapshot times must increase strictly: {time} after {last}"
                )));
            }
        }
        self.times.push(time);
        self.fields.push(values);
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[Vec<f64>] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn snapshot(&self, k: usize) -> DensityField {
        DensityField {
            grid: self.grid.clone(),
            values: self.fields[k].clone(),
        }
    }

    pub fn last(&self) -> Option<DensityField> {
        (!self.is_empty()).then(|| self.snapshot(self.len() - 1))
    }

    /// Mean spacing between consecutive snapshots; zero for a single snapshot.
    pub fn snapshot_spacing(&self) -> f64 {
        if self.len() < 2 {
            0.0
        } else {
            (self.times[self.len() - 1] - self.times[0]) / (self.len() - 1) as f64
        }
    }

    pub fn time_span(&self) -> (f64, f64) {
        (
            self.times.first().copied().unwrap_or(0.0),
            self.times.last().copied().unwrap_or(0.0),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_grid(n: usize) -> Grid {
        Grid::uniform_1d(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn grid_rejects_degenerate_input() {
        assert!(Grid::uniform_1d(0.0, 1.0, 3).is_err());
        assert!(Grid::uniform_1d(1.0, 1.0, 8).is_err());
        assert!(Grid::new(&[(0.0, 1.0)], &[4, 4]).is_err());
        assert!(Grid::new(&[(0.0, 1.0); 3], &[4, 4, 4]).is_err());
    }

    #[test]
    fn centers_sit_mid_cell() {
        let g = Grid::new(&[(0.0, 1.0), (-1.0, 1.0)], &[4, 8]).unwrap();
        assert_eq!(g.len(), 32);
        let c = g.center(g.ravel([1, 3]));
        assert_abs_diff_eq!(c[0], 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(c[1], -1.0 + 3.5 * 0.25, epsilon = 1e-15);
        for i in 0..g.len() {
            assert_eq!(g.ravel(g.unravel(i)), i);
        }
    }

    #[test]
    fn face_topology_2d() {
        let g = Grid::new(&[(0.0, 1.0), (0.0, 1.0)], &[4, 5]).unwrap();
        assert_eq!(g.face_count(0), 5 * 5);
        assert_eq!(g.face_count(1), 4 * 6);
        assert_eq!(g.interior_faces(0).count(), 3 * 5);
        assert_eq!(g.interior_faces(1).count(), 4 * 4);
        for axis in 0..2 {
            for (f, lo, hi) in g.interior_faces(axis) {
                let (_, hi_face_of_lo) = g.cell_faces(axis, lo);
                let (lo_face_of_hi, _) = g.cell_faces(axis, hi);
                assert_eq!(hi_face_of_lo, f);
                assert_eq!(lo_face_of_hi, f);
            }
        }
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        let g = unit_grid(10);
        let grad = face_gradient(&g, &[0.7; 10]);
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn linear_profile_gradient_is_exact() {
        let g = unit_grid(10);
        let x: Vec<f64> = g.centers().iter().map(|p| p[0]).collect();
        let grad = face_gradient(&g, &x);
        for (f, v) in grad.axes[0].iter().enumerate() {
            if g.is_boundary_face(0, f) {
                assert_eq!(*v, 0.0);
            } else {
                assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn divergence_four_cell_stencil() {
        let g = unit_grid(4);
        let h = g.spacing(0);
        let flux = FaceField {
            axes: vec![vec![0.0, 0.0, 1.0, 0.0, 0.0]],
        };
        let div = divergence(&g, &flux).unwrap();
        let expected = [0.0, 1.0 / h, -1.0 / h, 0.0];
        for (d, e) in div.iter().zip(expected) {
            assert_abs_diff_eq!(*d, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn divergence_rejects_boundary_flux() {
        let g = unit_grid(4);
        let flux = FaceField {
            axes: vec![vec![0.5, 0.0, 0.0, 0.0, 0.0]],
        };
        assert!(matches!(divergence(&g, &flux), Err(Error::Contract(_))));
        assert_eq!(divergence(&g, &FaceField::zeros(&g)).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn distances_on_simple_pairs() {
        let g = unit_grid(8);
        let one = DensityField::constant(g.clone(), 1.0).unwrap();
        let zero = DensityField::constant(g.clone(), 0.0).unwrap();
        assert_abs_diff_eq!(l1_distance(&one, &zero).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(l1_distance(&one, &one).unwrap(), 0.0);
        let mut bumped = one.values().to_vec();
        bumped[3] += 0.25;
        let bumped = DensityField::new(g, bumped).unwrap();
        assert_eq!(sup_distance(&one, &bumped).unwrap(), 0.25);
        let other = DensityField::constant(unit_grid(16), 1.0).unwrap();
        assert!(matches!(l1_distance(&one, &other), Err(Error::Shape(_))));
    }

    #[test]
    fn trajectory_requires_increasing_times() {
        let g = unit_grid(4);
        let mut t = Trajectory::new(g);
        t.push(0.0, vec![0.0; 4]).unwrap();
        assert!(t.push(0.0, vec![0.0; 4]).is_err());
        assert!(t.push(1.0, vec![0.0; 3]).is_err());
        t.push(0.5, vec![1.0; 4]).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.snapshot_spacing(), 0.5);
    }

    #[test]
    fn neumaier_recovers_cancellation() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(neumaier_sum(v), 2.0);
    }
}
