//! Generating functions `g(x, y, z)` on a box-shaped domain, their partial
//! derivatives up to order four, and sampled checks of the standing
//! structural assumptions (nonempty z-fibers, `g_z < 0`, `det E != 0`,
//! unique solvability of the contact system).
//!
//! Variables are numbered `x_0..x_{n-1}`, `y_0..y_{n-1}`, `z`. Partial
//! derivatives are requested with a [`DerivSpec`], a multiset of [`Var`]s,
//! so `DerivSpec::new(&[Var::X(0), Var::Y(1)])` is `d^2 g / dx_0 dy_1`.

mod families;
mod fd;
mod validate;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

pub use families::{Bilinear, PerturbedBilinear, RadialCost, RadialKind};
pub use validate::{validate_assumptions, A1Detection, SamplingSpec, ValidationReport};

use crate::error::{Error, Result};

/// Highest total derivative order the engine supports.
pub const MAX_ORDER: usize = 4;

/// Default floor for `|det E|`.
pub const DEFAULT_DET_FLOOR: f64 = 1e-8;

/// One differentiation variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    X(usize),
    Y(usize),
    Z,
}

impl Var {
    /// Flat index in `x_0..x_{n-1}, y_0..y_{n-1}, z`.
    pub fn flat(self, n: usize) -> usize {
        match self {
            Var::X(i) => i,
            Var::Y(j) => n + j,
            Var::Z => 2 * n,
        }
    }

    pub fn from_flat(k: usize, n: usize) -> Var {
        if k < n {
            Var::X(k)
        } else if k < 2 * n {
            Var::Y(k - n)
        } else {
            Var::Z
        }
    }
}

/// A multiset of differentiation variables. Order of differentiation does
/// not matter, so the variables are kept sorted.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DerivSpec {
    vars: Vec<Var>,
}

impl DerivSpec {
    pub fn new(vars: &[Var]) -> Self {
        let mut vars = vars.to_vec();
        vars.sort();
        DerivSpec { vars }
    }

    pub fn value() -> Self {
        DerivSpec { vars: Vec::new() }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn order(&self) -> usize {
        self.vars.len()
    }

    /// Per-variable differentiation counts, indexed by [`Var::flat`].
    pub fn counts(&self, n: usize) -> Vec<usize> {
        let mut c = vec![0; 2 * n + 1];
        for v in &self.vars {
            c[v.flat(n)] += 1;
        }
        c
    }
}

/// The z-fiber bounds `I_{x,y} = (z_lo(x,y), z_hi(x,y))`.
#[derive(Clone)]
pub enum ZBounds {
    Constant { lo: f64, hi: f64 },
    Custom(Arc<dyn Fn(&[f64], &[f64]) -> (f64, f64) + Send + Sync>),
}

impl fmt::Debug for ZBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZBounds::Constant { lo, hi } => write!(f, "Constant({lo}, {hi})"),
            ZBounds::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Product domain `x-box x y-box x I_{x,y}`.
#[derive(Clone, Debug)]
pub struct DomainBox {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub y_lo: Vec<f64>,
    pub y_hi: Vec<f64>,
    pub z: ZBounds,
}

impl DomainBox {
    pub fn new(x_lo: Vec<f64>, x_hi: Vec<f64>, y_lo: Vec<f64>, y_hi: Vec<f64>, z_lo: f64, z_hi: f64) -> Result<Self> {
        let n = x_lo.len();
        for (name, v) in [("x_hi", &x_hi), ("y_lo", &y_lo), ("y_hi", &y_hi)] {
            if v.len() != n {
                return Err(Error::InvalidParams(format!("{name} has {} entries, expected {n}", v.len())));
            }
        }
        if n == 0 {
            return Err(Error::InvalidParams("dimension must be positive".into()));
        }
        let bad = x_lo.iter().zip(&x_hi).chain(y_lo.iter().zip(&y_hi)).any(|(a, b)| !(a < b));
        if bad || !(z_lo < z_hi) {
            return Err(Error::InvalidParams("box bounds must satisfy lo < hi".into()));
        }
        Ok(DomainBox { x_lo, x_hi, y_lo, y_hi, z: ZBounds::Constant { lo: z_lo, hi: z_hi } })
    }

    /// Same box in every axis: `[x_lo, x_hi]^n x [y_lo, y_hi]^n x [z_lo, z_hi]`.
    pub fn cube(n: usize, x: (f64, f64), y: (f64, f64), z: (f64, f64)) -> Result<Self> {
        DomainBox::new(vec![x.0; n], vec![x.1; n], vec![y.0; n], vec![y.1; n], z.0, z.1)
    }

    pub fn dim(&self) -> usize {
        self.x_lo.len()
    }

    pub fn z_interval(&self, x: &[f64], y: &[f64]) -> (f64, f64) {
        match &self.z {
            ZBounds::Constant { lo, hi } => (*lo, *hi),
            ZBounds::Custom(f) => f(x, y),
        }
    }

    pub fn contains_x(&self, x: &[f64]) -> bool {
        within(x, &self.x_lo, &self.x_hi, 0.0)
    }

    pub fn contains_y(&self, y: &[f64]) -> bool {
        within(y, &self.y_lo, &self.y_hi, 0.0)
    }

    /// Membership in the closed domain.
    pub fn contains(&self, x: &[f64], y: &[f64], z: f64) -> bool {
        if !self.contains_x(x) || !self.contains_y(y) {
            return false;
        }
        let (lo, hi) = self.z_interval(x, y);
        lo <= z && z <= hi
    }

    /// Membership with `z` strictly inside its fiber.
    pub fn contains_strict_z(&self, x: &[f64], y: &[f64], z: f64) -> bool {
        if !self.contains_x(x) || !self.contains_y(y) {
            return false;
        }
        let (lo, hi) = self.z_interval(x, y);
        lo < z && z < hi
    }

    pub fn x_center(&self) -> Vec<f64> {
        self.x_lo.iter().zip(&self.x_hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn y_center(&self) -> Vec<f64> {
        self.y_lo.iter().zip(&self.y_hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Width of the axis a variable ranges over; for `z` the fiber width at `(x, y)`.
    pub fn axis_width(&self, v: Var, x: &[f64], y: &[f64]) -> f64 {
        match v {
            Var::X(i) => self.x_hi[i] - self.x_lo[i],
            Var::Y(j) => self.y_hi[j] - self.y_lo[j],
            Var::Z => {
                let (lo, hi) = self.z_interval(x, y);
                hi - lo
            }
        }
    }

    /// The domain with the roles of `x` and `y` exchanged and the given fiber bounds.
    pub(crate) fn swapped(&self, z: ZBounds) -> DomainBox {
        DomainBox { x_lo: self.y_lo.clone(), x_hi: self.y_hi.clone(), y_lo: self.x_lo.clone(), y_hi: self.x_hi.clone(), z }
    }
}

fn within(p: &[f64], lo: &[f64], hi: &[f64], slack: f64) -> bool {
    p.len() == lo.len() && p.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *v >= a - slack && *v <= b + slack)
}

/// A concrete generating function: the formula (a [`Family`]) together with
/// the box on which it is used.
pub trait Family: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn value(&self, x: &[f64], y: &[f64], z: f64) -> f64;

    /// Closed-form partial derivative for a sorted variable multiset, or
    /// `None` when the family has no closed form (derivatives are then
    /// synthesized by finite differences).
    fn partial(&self, _x: &[f64], _y: &[f64], _z: f64, _vars: &[Var]) -> Option<f64> {
        None
    }

    /// Closed-form solution `z` of `g(x, y, z) = u` on the branch with
    /// `g_z < 0`; `Some(NaN)` when no real solution exists; `None` when the
    /// family has no closed form.
    fn dual(&self, _x: &[f64], _y: &[f64], _u: f64) -> Option<f64> {
        None
    }

    /// Rejects domains on which the formula is not usable.
    fn check_domain(&self, _domain: &DomainBox) -> Result<()> {
        Ok(())
    }

    fn params(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// How partial derivatives are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DerivativeMode {
    /// Closed forms where the family has them, finite differences otherwise.
    #[default]
    Analytic,
    /// Always synthesize by central differences.
    FiniteDifference,
}

/// Generating function bound to its domain. Immutable and cheap to clone.
#[derive(Clone, Debug)]
pub struct GeneratingFunction {
    family: Arc<dyn Family>,
    domain: DomainBox,
    mode: DerivativeMode,
    det_floor: f64,
}

impl GeneratingFunction {
    pub fn new(family: Arc<dyn Family>, domain: DomainBox) -> Result<Self> {
        if family.dim() != domain.dim() {
            return Err(Error::DimensionMismatch { expected: family.dim(), got: domain.dim() });
        }
        family.check_domain(&domain)?;
        Ok(GeneratingFunction { family, domain, mode: DerivativeMode::Analytic, det_floor: DEFAULT_DET_FLOOR })
    }

    /// A built-in family in two dimensions with its default box.
    ///
    /// Families: `bilinear` (`x.y - z`), `quad-cost` (`-|x-y|^2/2 - z`),
    /// `log-cost` (`-log|x-y| - z`), `sqrt-cost` (`-sqrt(1+|x-y|^2) - z`),
    /// `perturbed-bilinear` (`x.y - z + eps z^2/2`, params `[eps]`).
    pub fn builtin(name: &str, params: &[f64]) -> Result<Self> {
        Self::builtin_nd(name, params, 2)
    }

    pub fn builtin_nd(name: &str, params: &[f64], dim: usize) -> Result<Self> {
        let (family, domain) = families::builtin(name, params, dim)?;
        Self::new(family, domain)
    }

    /// A user-supplied formula. Derivatives are always synthesized.
    pub fn custom<F>(name: &str, dim: usize, domain: DomainBox, f: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64], f64) -> f64 + Send + Sync + 'static,
    {
        let family = Arc::new(families::Custom { name: name.to_string(), dim, f: Box::new(f) });
        let mut gf = Self::new(family, domain)?;
        gf.mode = DerivativeMode::FiniteDifference;
        Ok(gf)
    }

    pub fn with_domain(&self, domain: DomainBox) -> Result<Self> {
        let mut out = Self::new(self.family.clone(), domain)?;
        out.mode = self.mode;
        out.det_floor = self.det_floor;
        Ok(out)
    }

    pub fn with_mode(mut self, mode: DerivativeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_det_floor(mut self, floor: f64) -> Self {
        self.det_floor = floor;
        self
    }

    pub fn name(&self) -> &str {
        self.family.name()
    }

    pub fn params(&self) -> Vec<f64> {
        self.family.params()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn mode(&self) -> DerivativeMode {
        self.mode
    }

    pub fn det_floor(&self) -> f64 {
        self.det_floor
    }

    pub fn family(&self) -> &Arc<dyn Family> {
        &self.family
    }

    pub fn value(&self, x: &[f64], y: &[f64], z: f64) -> f64 {
        self.family.value(x, y, z)
    }

    pub fn z_interval(&self, x: &[f64], y: &[f64]) -> (f64, f64) {
        self.domain.z_interval(x, y)
    }

    /// Closed-form dual value if the family provides one.
    pub fn dual_closed_form(&self, x: &[f64], y: &[f64], u: f64) -> Option<f64> {
        self.family.dual(x, y, u)
    }

    pub fn check_dims(&self, x: &[f64], y: &[f64]) -> Result<()> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: y.len() });
        }
        Ok(())
    }

    /// A single partial derivative.
    pub fn partial(&self, x: &[f64], y: &[f64], z: f64, spec: &DerivSpec) -> Result<f64> {
        self.check_dims(x, y)?;
        if spec.order() > MAX_ORDER {
            return Err(Error::OrderTooHigh(spec.order()));
        }
        if self.mode == DerivativeMode::Analytic {
            if let Some(v) = self.family.partial(x, y, z, spec.vars()) {
                return Ok(v);
            }
        }
        fd::partial(self, x, y, z, spec, false).map(|(v, _)| v)
    }

    /// Like [`partial`](Self::partial) but finite-difference stencils that
    /// would leave the domain are shifted inward; the flag reports whether
    /// that happened.
    pub fn partial_clamped(&self, x: &[f64], y: &[f64], z: f64, spec: &DerivSpec) -> Result<(f64, bool)> {
        self.check_dims(x, y)?;
        if spec.order() > MAX_ORDER {
            return Err(Error::OrderTooHigh(spec.order()));
        }
        if self.mode == DerivativeMode::Analytic {
            if let Some(v) = self.family.partial(x, y, z, spec.vars()) {
                return Ok((v, false));
            }
        }
        fd::partial(self, x, y, z, spec, true)
    }

    /// Finite-difference synthesis regardless of mode.
    pub fn partial_fd(&self, x: &[f64], y: &[f64], z: f64, spec: &DerivSpec) -> Result<f64> {
        self.check_dims(x, y)?;
        if spec.order() > MAX_ORDER {
            return Err(Error::OrderTooHigh(spec.order()));
        }
        fd::partial(self, x, y, z, spec, false).map(|(v, _)| v)
    }

    /// All partials up to `order` (at most 3) at one point.
    pub fn jet(&self, x: &[f64], y: &[f64], z: f64, order: usize) -> Result<Jet> {
        self.jet_impl(x, y, z, order, false).map(|(j, _)| j)
    }

    /// Jet with clamped finite-difference stencils; also returns the number of clamping events.
    pub fn jet_clamped(&self, x: &[f64], y: &[f64], z: f64, order: usize) -> Result<(Jet, usize)> {
        self.jet_impl(x, y, z, order, true)
    }

    fn jet_impl(&self, x: &[f64], y: &[f64], z: f64, order: usize, clamp: bool) -> Result<(Jet, usize)> {
        self.check_dims(x, y)?;
        if order > 3 {
            return Err(Error::OrderTooHigh(order));
        }
        let n = self.dim();
        let m = 2 * n + 1;
        let mut clamped = 0usize;
        let mut eval = |vars: &[Var]| -> Result<f64> {
            let spec = DerivSpec::new(vars);
            if clamp {
                let (v, c) = self.partial_clamped(x, y, z, &spec)?;
                clamped += c as usize;
                Ok(v)
            } else {
                self.partial(x, y, z, &spec)
            }
        };
        let value = self.value(x, y, z);
        let mut grad = vec![0.0; m];
        let mut hess = DMatrix::zeros(m, m);
        let mut third = Vec::new();
        if order >= 1 {
            for (a, g) in grad.iter_mut().enumerate() {
                *g = eval(&[Var::from_flat(a, n)])?;
            }
        }
        if order >= 2 {
            for a in 0..m {
                for b in a..m {
                    let v = eval(&[Var::from_flat(a, n), Var::from_flat(b, n)])?;
                    hess[(a, b)] = v;
                    hess[(b, a)] = v;
                }
            }
        }
        if order >= 3 {
            third = vec![0.0; m * m * m];
            for a in 0..m {
                for b in a..m {
                    for c in b..m {
                        let v = eval(&[Var::from_flat(a, n), Var::from_flat(b, n), Var::from_flat(c, n)])?;
                        for (i, j, k) in [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)] {
                            third[(i * m + j) * m + k] = v;
                        }
                    }
                }
            }
        }
        Ok((Jet { n, order, value, grad, hess, third }, clamped))
    }
}

/// Partial derivatives of `g` up to a fixed order at one point.
#[derive(Clone, Debug)]
pub struct Jet {
    n: usize,
    order: usize,
    value: f64,
    grad: Vec<f64>,
    hess: DMatrix<f64>,
    third: Vec<f64>,
}

impl Jet {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn d1(&self, a: Var) -> f64 {
        self.grad[a.flat(self.n)]
    }

    pub fn d2(&self, a: Var, b: Var) -> f64 {
        self.hess[(a.flat(self.n), b.flat(self.n))]
    }

    pub fn d3(&self, a: Var, b: Var, c: Var) -> f64 {
        assert!(self.order >= 3, "third derivatives were not computed");
        let m = 2 * self.n + 1;
        self.third[(a.flat(self.n) * m + b.flat(self.n)) * m + c.flat(self.n)]
    }

    pub fn g_z(&self) -> f64 {
        self.d1(Var::Z)
    }

    pub fn g_x(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.d1(Var::X(i))).collect()
    }

    pub fn g_y(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.d1(Var::Y(j))).collect()
    }

    pub fn g_xx(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.d2(Var::X(i), Var::X(j)))
    }

    pub fn g_xy(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.d2(Var::X(i), Var::Y(j)))
    }

    pub fn g_xz(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.d2(Var::X(i), Var::Z)).collect()
    }

    /// `E_ij = g_{x_i y_j} - g_{x_i z} g_{y_j} / g_z`.
    pub fn matrix_e(&self) -> DMatrix<f64> {
        let gz = self.g_z();
        DMatrix::from_fn(self.n, self.n, |i, j| {
            self.d2(Var::X(i), Var::Y(j)) - self.d2(Var::X(i), Var::Z) * self.d1(Var::Y(j)) / gz
        })
    }
}

/// A point `(x, y, z)` strictly inside the domain together with its jet.
#[derive(Clone, Debug)]
pub struct FiberPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: f64,
    pub jet: Jet,
}

impl FiberPoint {
    pub fn new(gf: &GeneratingFunction, x: &[f64], y: &[f64], z: f64, order: usize) -> Result<Self> {
        gf.check_dims(x, y)?;
        if !gf.domain().contains_strict_z(x, y, z) {
            return Err(Error::OutsideDomain(format!("(x={x:?}, y={y:?}, z={z})")));
        }
        let jet = gf.jet(x, y, z, order)?;
        Ok(FiberPoint { x: x.to_vec(), y: y.to_vec(), z, jet })
    }

    /// Builds a fiber point without the domain check; used for points that
    /// lie on the closed boundary.
    pub(crate) fn unchecked(gf: &GeneratingFunction, x: &[f64], y: &[f64], z: f64, order: usize) -> Result<Self> {
        let jet = gf.jet(x, y, z, order)?;
        Ok(FiberPoint { x: x.to_vec(), y: y.to_vec(), z, jet })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_value() {
        let gf = GeneratingFunction::builtin("bilinear", &[]).unwrap();
        assert_eq!(gf.value(&[1.0, 2.0], &[3.0, 4.0], 5.0), 6.0);
    }

    #[test]
    fn quad_cost_zero_distance() {
        let gf = GeneratingFunction::builtin("quad-cost", &[]).unwrap();
        assert_eq!(gf.value(&[0.3, -0.2], &[0.3, -0.2], 0.0), 0.0);
    }

    #[test]
    fn perturbed_bilinear_gz() {
        let gf = GeneratingFunction::builtin("perturbed-bilinear", &[0.1]).unwrap();
        let gz = gf.partial(&[0.0, 0.0], &[0.0, 0.0], 2.0, &DerivSpec::new(&[Var::Z])).unwrap();
        assert!((gz + 0.8).abs() < 1e-15);
    }

    #[test]
    fn bilinear_low_order_partials() {
        let gf = GeneratingFunction::builtin("bilinear", &[]).unwrap();
        let (x, y) = ([0.2, -0.4], [1.0, 0.5]);
        assert_eq!(gf.partial(&x, &y, 0.3, &DerivSpec::new(&[Var::Z])).unwrap(), -1.0);
        for i in 0..2 {
            for j in 0..2 {
                let v = gf.partial(&x, &y, 0.3, &DerivSpec::new(&[Var::X(i), Var::Y(j)])).unwrap();
                assert_eq!(v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn quad_cost_xx_against_fd() {
        let gf = GeneratingFunction::builtin("quad-cost", &[]).unwrap();
        let spec = DerivSpec::new(&[Var::X(0), Var::X(0)]);
        let (x, y) = ([0.1, 0.2], [0.7, -0.3]);
        assert_eq!(gf.partial(&x, &y, 0.0, &spec).unwrap(), -1.0);
        let fd = gf.partial_fd(&x, &y, 0.0, &spec).unwrap();
        assert!((fd + 1.0).abs() < 1e-7, "fd = {fd}");
    }

    #[test]
    fn order_above_four_is_rejected() {
        let gf = GeneratingFunction::builtin("bilinear", &[]).unwrap();
        let spec = DerivSpec::new(&[Var::X(0); 5]);
        assert_eq!(gf.partial(&[0.0, 0.0], &[0.0, 0.0], 0.0, &spec), Err(Error::OrderTooHigh(5)));
    }

    #[test]
    fn unknown_family() {
        assert!(matches!(GeneratingFunction::builtin("cubic", &[]), Err(Error::UnknownFamily(_))));
    }

    #[test]
    fn log_cost_rejects_overlapping_boxes() {
        let gf = GeneratingFunction::builtin("log-cost", &[]).unwrap();
        let overlapping = DomainBox::cube(2, (-1.0, 1.0), (0.0, 2.0), (-10.0, 10.0)).unwrap();
        assert!(matches!(gf.with_domain(overlapping), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn fd_stencil_leaving_domain_errors_and_clamps() {
        let gf = GeneratingFunction::builtin("bilinear", &[]).unwrap().with_mode(DerivativeMode::FiniteDifference);
        let spec = DerivSpec::new(&[Var::X(0), Var::X(0)]);
        let x = [1.0, 0.0];
        assert!(matches!(gf.partial(&x, &[0.5, 0.5], 0.0, &spec), Err(Error::StencilExitsDomain(_))));
        let (v, clamped) = gf.partial_clamped(&x, &[0.5, 0.5], 0.0, &spec).unwrap();
        assert!(clamped);
        assert!(v.abs() < 1e-6);
    }

    #[test]
    fn jet_third_order_symmetry() {
        let gf = GeneratingFunction::builtin("log-cost", &[]).unwrap();
        let jet = gf.jet(&[0.1, -0.2], &[2.2, 0.4], 0.0, 3).unwrap();
        let a = jet.d3(Var::X(0), Var::Y(1), Var::X(1));
        let b = jet.d3(Var::Y(1), Var::X(1), Var::X(0));
        assert_eq!(a, b);
    }
}
