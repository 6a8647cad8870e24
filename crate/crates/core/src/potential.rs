//! Potentials `u(x)`: tensor-spline interpolants of grid data, analytic
//! presets, and maxima of finitely many g-supports.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::duality::tie_tolerance;
use crate::error::{Error, Result};
use crate::genfun::GeneratingFunction;
use crate::linalg::linspace;

/// A scalar function with first and second derivatives.
pub trait Potential: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;

    /// Whether `x` lies where the potential is defined.
    fn contains(&self, _x: &[f64]) -> bool {
        true
    }

    /// Whether the potential is a finite max of supports, so its image is lower dimensional.
    fn is_discrete(&self) -> bool {
        false
    }
}

/// Rectangular 2D grid; node `(i, j)` is `(xs[i], ys[j])` with flat index `j * nx + i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2 {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Grid2 {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        for (name, axis) in [("x", &xs), ("y", &ys)] {
            if axis.len() < 2 {
                return Err(Error::InvalidInput(format!("{name} axis needs at least 2 nodes")));
            }
            if axis.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidInput(format!("{name} axis must be strictly increasing")));
            }
        }
        Ok(Grid2 { xs, ys })
    }

    /// `intervals[k]` equal intervals along each axis, endpoints included.
    pub fn uniform(lo: [f64; 2], hi: [f64; 2], intervals: [usize; 2]) -> Result<Self> {
        if intervals.contains(&0) || !(lo[0] < hi[0] && lo[1] < hi[1]) {
            return Err(Error::InvalidInput("grid needs positive resolution and lo < hi".into()));
        }
        Grid2::new(linspace(lo[0], hi[0], intervals[0] + 1), linspace(lo[1], hi[1], intervals[1] + 1))
    }

    pub fn nx(&self) -> usize {
        self.xs.len()
    }

    pub fn ny(&self) -> usize {
        self.ys.len()
    }

    pub fn len(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx() + i
    }

    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx(), k / self.nx())
    }

    pub fn node(&self, k: usize) -> Vec<f64> {
        let (i, j) = self.ij(k);
        vec![self.xs[i], self.ys[j]]
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }

    pub fn lo(&self) -> [f64; 2] {
        [self.xs[0], self.ys[0]]
    }

    pub fn hi(&self) -> [f64; 2] {
        [*self.xs.last().unwrap(), *self.ys.last().unwrap()]
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        let (lo, hi) = (self.lo(), self.hi());
        p.len() == 2 && p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1]
    }

    /// Largest node spacing over both axes.
    pub fn max_spacing(&self) -> f64 {
        self.xs.windows(2).chain(self.ys.windows(2)).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn is_interior(&self, k: usize) -> bool {
        let (i, j) = self.ij(k);
        i > 0 && j > 0 && i + 1 < self.nx() && j + 1 < self.ny()
    }

    /// The half-spacing box around node `k`, clipped to the grid.
    pub fn node_cell(&self, k: usize) -> ([f64; 2], [f64; 2]) {
        let (i, j) = self.ij(k);
        let half = |axis: &[f64], m: usize| {
            let lo = if m == 0 { axis[0] } else { 0.5 * (axis[m - 1] + axis[m]) };
            let hi = if m + 1 == axis.len() { axis[m] } else { 0.5 * (axis[m] + axis[m + 1]) };
            (lo, hi)
        };
        let (x0, x1) = half(&self.xs, i);
        let (y0, y1) = half(&self.ys, j);
        ([x0, y0], [x1, y1])
    }

    pub fn node_cell_area(&self, k: usize) -> f64 {
        let (lo, hi) = self.node_cell(k);
        (hi[0] - lo[0]) * (hi[1] - lo[1])
    }

    /// Cell index `m` with `axis[m] <= t <= axis[m + 1]`, clamped to the end cells.
    fn locate(axis: &[f64], t: f64) -> usize {
        let last = axis.len() - 2;
        match axis.binary_search_by(|v| v.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less)) {
            Ok(m) => m.min(last),
            Err(0) => 0,
            Err(m) => (m - 1).min(last),
        }
    }
}

/// Dense map from nodal values to nodal second derivatives of the
/// not-a-knot cubic spline on `axis`.
fn not_a_knot_operator(axis: &[f64]) -> Result<DMatrix<f64>> {
    let n = axis.len();
    if n < 4 {
        return Err(Error::InvalidInput(format!("spline axes need at least 4 nodes, got {n}")));
    }
    let h: Vec<f64> = axis.windows(2).map(|w| w[1] - w[0]).collect();
    let mut s = DMatrix::zeros(n, n);
    let mut r = DMatrix::zeros(n, n);
    s[(0, 0)] = -h[1];
    s[(0, 1)] = h[0] + h[1];
    s[(0, 2)] = -h[0];
    for i in 1..n - 1 {
        s[(i, i - 1)] = h[i - 1];
        s[(i, i)] = 2.0 * (h[i - 1] + h[i]);
        s[(i, i + 1)] = h[i];
        r[(i, i - 1)] = 6.0 / h[i - 1];
        r[(i, i)] = -6.0 / h[i - 1] - 6.0 / h[i];
        r[(i, i + 1)] = 6.0 / h[i];
    }
    s[(n - 1, n - 3)] = -h[n - 2];
    s[(n - 1, n - 2)] = h[n - 3] + h[n - 2];
    s[(n - 1, n - 1)] = -h[n - 3];
    let lu = s.lu();
    lu.solve(&r).ok_or_else(|| Error::InvalidInput("singular spline system".into()))
}

/// Cubic basis on one cell: values and first/second derivatives of `[A, B, C, D]`.
fn basis(axis: &[f64], m: usize, t: f64) -> [[f64; 4]; 3] {
    let h = axis[m + 1] - axis[m];
    let a = (axis[m + 1] - t) / h;
    let b = 1.0 - a;
    let h2 = h * h / 6.0;
    [
        [a, b, (a * a * a - a) * h2, (b * b * b - b) * h2],
        [-1.0 / h, 1.0 / h, -(3.0 * a * a - 1.0) * h / 6.0, (3.0 * b * b - 1.0) * h / 6.0],
        [0.0, 0.0, a, b],
    ]
}

/// Bicubic (tensor not-a-knot spline) interpolant of nodal values on a [`Grid2`].
///
/// Outside the grid the boundary cell polynomials are extended.
#[derive(Clone, Debug)]
pub struct GridPotential {
    grid: Grid2,
    values: Vec<f64>,
    d_xx: Vec<f64>,
    d_yy: Vec<f64>,
    d_xxyy: Vec<f64>,
}

impl GridPotential {
    /// `values[j * nx + i]` is the value at `(xs[i], ys[j])`.
    pub fn new(grid: Grid2, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("grid potential values must be finite".into()));
        }
        let (nx, ny) = (grid.nx(), grid.ny());
        let kx = not_a_knot_operator(&grid.xs)?;
        let ky = not_a_knot_operator(&grid.ys)?;
        // rows of `u` run along x
        let u = DMatrix::from_row_slice(ny, nx, &values);
        let uxx = &u * kx.transpose();
        let uyy = &ky * &u;
        let uxxyy = &ky * &uxx;
        let flat = |m: DMatrix<f64>| -> Vec<f64> { m.transpose().as_slice().to_vec() };
        Ok(GridPotential { grid, values, d_xx: flat(uxx), d_yy: flat(uyy), d_xxyy: flat(uxxyy) })
    }

    /// Samples `f` at the nodes.
    pub fn from_fn(grid: Grid2, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = grid.nodes().iter().map(|x| f(x)).collect();
        GridPotential::new(grid, values)
    }

    pub fn sample(grid: Grid2, p: &dyn Potential) -> Result<Self> {
        GridPotential::from_fn(grid, |x| p.value(x))
    }

    pub fn grid(&self) -> &Grid2 {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value, gradient and Hessian (`[xx, xy, yy]`) at `p`, summing derivative order `(dx, dy)`.
    fn eval(&self, p: &[f64], orders: &[(usize, usize)]) -> Vec<f64> {
        let g = &self.grid;
        let i = Grid2::locate(&g.xs, p[0]);
        let j = Grid2::locate(&g.ys, p[1]);
        let bx = basis(&g.xs, i, p[0]);
        let by = basis(&g.ys, j, p[1]);
        orders
            .iter()
            .map(|&(ox, oy)| {
                let mut acc = 0.0;
                for kx in 0..4 {
                    let wx = bx[ox][kx];
                    if wx == 0.0 {
                        continue;
                    }
                    for ky in 0..4 {
                        let w = wx * by[oy][ky];
                        if w == 0.0 {
                            continue;
                        }
                        let node = g.index(i + kx % 2, j + ky % 2);
                        let field = match (kx >= 2, ky >= 2) {
                            (false, false) => &self.values,
                            (true, false) => &self.d_xx,
                            (false, true) => &self.d_yy,
                            (true, true) => &self.d_xxyy,
                        };
                        acc += w * field[node];
                    }
                }
                acc
            })
            .collect()
    }
}

impl Potential for GridPotential {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x, &[(0, 0)])[0]
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.eval(x, &[(1, 0), (0, 1)])
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let v = self.eval(x, &[(2, 0), (1, 1), (0, 2)]);
        DMatrix::from_row_slice(2, 2, &[v[0], v[1], v[1], v[2]])
    }

    fn contains(&self, x: &[f64]) -> bool {
        self.grid.contains(x)
    }
}

/// Closed-form potentials used as fixtures.
#[derive(Clone, Debug)]
pub enum AnalyticPotential {
    /// `x^T M x / 2 + b.x + c`.
    Quadratic { hessian: DMatrix<f64>, linear: Vec<f64>, constant: f64 },
    /// `scale * |x_axis|`; the gradient at the kink is taken as zero.
    AbsCoordinate { dim: usize, axis: usize, scale: f64 },
    /// `g(x, y, z) + bump * |x - center|^2 / 2`.
    SupportBump { gf: GeneratingFunction, y: Vec<f64>, z: f64, bump: f64, center: Vec<f64> },
    /// `scale * exp(a.x)`.
    Exponential { a: Vec<f64>, scale: f64 },
}

impl AnalyticPotential {
    /// `a |x|^2 / 2` in `dim` dimensions.
    pub fn scaled_quadratic(dim: usize, a: f64) -> Self {
        AnalyticPotential::Quadratic { hessian: DMatrix::identity(dim, dim) * a, linear: vec![0.0; dim], constant: 0.0 }
    }

    pub fn abs_first(dim: usize) -> Self {
        AnalyticPotential::AbsCoordinate { dim, axis: 0, scale: 1.0 }
    }

    /// The g-affine function `g(., y, z)`.
    pub fn support(gf: &GeneratingFunction, y: &[f64], z: f64) -> Self {
        let center = vec![0.0; gf.dim()];
        AnalyticPotential::SupportBump { gf: gf.clone(), y: y.to_vec(), z, bump: 0.0, center }
    }
}

impl Potential for AnalyticPotential {
    fn dim(&self) -> usize {
        match self {
            AnalyticPotential::Quadratic { linear, .. } => linear.len(),
            AnalyticPotential::AbsCoordinate { dim, .. } => *dim,
            AnalyticPotential::SupportBump { gf, .. } => gf.dim(),
            AnalyticPotential::Exponential { a, .. } => a.len(),
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        match self {
            AnalyticPotential::Quadratic { hessian, linear, constant } => {
                0.5 * crate::linalg::bilinear_form(hessian, x, x) + crate::linalg::dot(linear, x) + constant
            }
            AnalyticPotential::AbsCoordinate { axis, scale, .. } => scale * x[*axis].abs(),
            AnalyticPotential::SupportBump { gf, y, z, bump, center } => {
                let d2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                gf.value(x, y, *z) + 0.5 * bump * d2
            }
            AnalyticPotential::Exponential { a, scale } => scale * crate::linalg::dot(a, x).exp(),
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            AnalyticPotential::Quadratic { hessian, linear, .. } => {
                let hx = crate::linalg::mat_vec(hessian, x);
                hx.iter().zip(linear).map(|(a, b)| a + b).collect()
            }
            AnalyticPotential::AbsCoordinate { dim, axis, scale } => {
                let mut g = vec![0.0; *dim];
                g[*axis] = if x[*axis] > 0.0 {
                    *scale
                } else if x[*axis] < 0.0 {
                    -scale
                } else {
                    0.0
                };
                g
            }
            AnalyticPotential::SupportBump { gf, y, z, bump, center } => {
                let jet = gf.jet_clamped(x, y, *z, 1).expect("support jet").0;
                jet.g_x().iter().zip(x.iter().zip(center)).map(|(g, (a, c))| g + bump * (a - c)).collect()
            }
            AnalyticPotential::Exponential { a, scale } => {
                let e = scale * crate::linalg::dot(a, x).exp();
                a.iter().map(|v| v * e).collect()
            }
        }
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            AnalyticPotential::Quadratic { hessian, .. } => crate::linalg::symmetrize(hessian),
            AnalyticPotential::AbsCoordinate { dim, .. } => DMatrix::zeros(*dim, *dim),
            AnalyticPotential::SupportBump { gf, y, z, bump, .. } => {
                let jet = gf.jet_clamped(x, y, *z, 2).expect("support jet").0;
                jet.g_xx() + DMatrix::identity(x.len(), x.len()) * *bump
            }
            AnalyticPotential::Exponential { a, scale } => {
                let e = scale * crate::linalg::dot(a, x).exp();
                DMatrix::from_fn(a.len(), a.len(), |i, j| a[i] * a[j] * e)
            }
        }
    }
}

/// `u(x) = max_i g(x, y_i, z_i)`.
#[derive(Clone, Debug)]
pub struct SemiDiscretePotential {
    gf: GeneratingFunction,
    supports: Vec<(Vec<f64>, f64)>,
}

impl SemiDiscretePotential {
    pub fn new(gf: &GeneratingFunction, supports: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if supports.is_empty() {
            return Err(Error::InvalidInput("a semi-discrete potential needs at least one support".into()));
        }
        for (y, _) in &supports {
            if y.len() != gf.dim() {
                return Err(Error::DimensionMismatch { expected: gf.dim(), got: y.len() });
            }
            if !gf.domain().contains_y(y) {
                return Err(Error::OutsideDomain(format!("support point {y:?}")));
            }
        }
        Ok(SemiDiscretePotential { gf: gf.clone(), supports })
    }

    pub fn supports(&self) -> &[(Vec<f64>, f64)] {
        &self.supports
    }

    fn values_at(&self, x: &[f64]) -> Vec<f64> {
        self.supports.iter().map(|(y, z)| self.gf.value(x, y, *z)).collect()
    }

    /// Supports attaining the max at `x` within the shared tie tolerance.
    pub fn active(&self, x: &[f64]) -> Vec<usize> {
        let vals = self.values_at(x);
        let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let cut = best - tie_tolerance(best);
        vals.iter().enumerate().filter(|(_, v)| **v >= cut).map(|(i, _)| i).collect()
    }

    fn first_active_jet(&self, x: &[f64], order: usize) -> crate::genfun::Jet {
        let i = self.active(x)[0];
        let (y, z) = &self.supports[i];
        self.gf.jet_clamped(x, y, *z, order).expect("support jet").0
    }
}

impl Potential for SemiDiscretePotential {
    fn dim(&self) -> usize {
        self.gf.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.values_at(x).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.first_active_jet(x, 1).g_x()
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.first_active_jet(x, 2).g_xx()
    }

    fn is_discrete(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spline_reproduces_cubics() {
        let grid = Grid2::new(vec![-1.0, -0.6, -0.1, 0.3, 0.7, 1.0], vec![-1.0, -0.2, 0.1, 0.5, 1.0]).unwrap();
        let f = |x: &[f64]| x[0].powi(3) - 2.0 * x[0] * x[1] * x[1] + 0.5 * x[1].powi(3) + x[0] * x[1];
        let u = GridPotential::from_fn(grid, f).unwrap();
        let p = [0.23, -0.41];
        assert_abs_diff_eq!(u.value(&p), f(&p), epsilon = 1e-12);
        let g = u.gradient(&p);
        assert_abs_diff_eq!(g[0], 3.0 * p[0] * p[0] - 2.0 * p[1] * p[1] + p[1], epsilon = 1e-11);
        assert_abs_diff_eq!(g[1], -4.0 * p[0] * p[1] + 1.5 * p[1] * p[1] + p[0], epsilon = 1e-11);
        let h = u.hessian(&p);
        assert_abs_diff_eq!(h[(0, 0)], 6.0 * p[0], epsilon = 1e-10);
        assert_abs_diff_eq!(h[(0, 1)], -4.0 * p[1] + 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(h[(1, 1)], -4.0 * p[0] + 3.0 * p[1], epsilon = 1e-10);
    }

    #[test]
    fn spline_interpolates_nodes() {
        let grid = Grid2::uniform([0.0, 0.0], [1.0, 2.0], [7, 9]).unwrap();
        let u = GridPotential::from_fn(grid.clone(), |x| (3.0 * x[0]).sin() * x[1].exp()).unwrap();
        for (k, x) in grid.nodes().iter().enumerate() {
            assert_abs_diff_eq!(u.value(x), u.values()[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn node_cells_tile_the_grid() {
        let grid = Grid2::uniform([-1.0, -2.0], [1.0, 2.0], [4, 6]).unwrap();
        let total: f64 = (0..grid.len()).map(|k| grid.node_cell_area(k)).sum();
        assert_abs_diff_eq!(total, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn semi_discrete_active_sets() {
        let gf = GeneratingFunction::builtin("bilinear", &[]).unwrap();
        let u = SemiDiscretePotential::new(&gf, vec![(vec![1.0, 0.0], 0.0), (vec![-1.0, 0.0], 0.0)]).unwrap();
        assert_eq!(u.value(&[0.5, 0.3]), 0.5);
        assert_eq!(u.active(&[0.0, 0.3]), vec![0, 1]);
        assert_eq!(u.active(&[-0.2, 0.3]), vec![1]);
    }

    #[test]
    fn short_axis_rejected() {
        let grid = Grid2::uniform([0.0, 0.0], [1.0, 1.0], [2, 5]).unwrap();
        assert!(GridPotential::from_fn(grid, |_| 0.0).is_err());
    }
}
