//! Contact maps `(x, u, p) -> (y, z)` and `(y, z, q) -> (x, u)`, the dual
//! generating function and the g*-transform of sampled potentials.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genfun::{DerivSpec, DomainBox, Family, GeneratingFunction, Var, ZBounds};
use crate::linalg::solve;
use crate::potential::{Grid2, GridPotential};

/// Absolute part of the argmax tie tolerance.
pub const TIE_ABS: f64 = 1e-9;
/// Relative part of the argmax tie tolerance.
pub const TIE_REL: f64 = 1e-6;

/// Values within this distance of a maximum `v` count as ties.
pub fn tie_tolerance(v: f64) -> f64 {
    TIE_ABS + TIE_REL * v.abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Absolute residual tolerance (max norm).
    pub tol: f64,
    pub max_iter: usize,
    /// Step halvings allowed when a step leaves the domain or increases the residual.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-10, max_iter: 50, max_halvings: 20 }
    }
}

/// Solution of `g(x, y, z) = u`, `g_x(x, y, z) = p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactState {
    pub x: Vec<f64>,
    pub u: f64,
    pub p: Vec<f64>,
    pub y: Vec<f64>,
    pub z: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Solution of `g*(x, y, u) = z`, `g*_y(x, y, u) = q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualContactState {
    pub y: Vec<f64>,
    pub z: f64,
    pub q: Vec<f64>,
    pub x: Vec<f64>,
    pub u: f64,
    pub residual: f64,
    pub iterations: usize,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Damped Newton iteration shared by the contact solvers.
///
/// `eval` returns the residual and Jacobian at a point, or `None` when the
/// point is outside the admissible set.
fn newton<F>(start: Vec<f64>, opts: &NewtonOptions, mut eval: F) -> Result<(Vec<f64>, f64, usize)>
where
    F: FnMut(&[f64]) -> Option<Result<(Vec<f64>, DMatrix<f64>)>>,
{
    let (mut f, mut jac) = match eval(&start) {
        Some(r) => r?,
        None => return Err(Error::LeftDomain { iteration: 0 }),
    };
    let mut cur = start;
    let mut res = max_norm(&f);
    let mut polished = false;
    for it in 0..opts.max_iter {
        if res < opts.tol {
            if polished || res == 0.0 {
                return Ok((cur, res, it));
            }
            polished = true;
        }
        let Some(step) = solve(&jac, &f.iter().map(|v| -v).collect::<Vec<_>>()) else {
            return Err(Error::NoConvergence { iterations: it, residual: res });
        };
        let mut lambda = 1.0;
        let mut accepted = None;
        let mut left_domain = false;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = cur.iter().zip(&step).map(|(c, s)| c + lambda * s).collect();
            match eval(&trial) {
                None => left_domain = true,
                Some(Err(e)) => return Err(e),
                Some(Ok((tf, tj))) => {
                    let tres = max_norm(&tf);
                    if tres < res || (tres <= res && res < opts.tol) {
                        accepted = Some((trial, tf, tj, tres));
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((t, tf, tj, tres)) => {
                cur = t;
                f = tf;
                jac = tj;
                res = tres;
            }
            None if res < opts.tol => return Ok((cur, res, it)),
            None if left_domain => return Err(Error::LeftDomain { iteration: it + 1 }),
            None => return Err(Error::NoConvergence { iterations: it + 1, residual: res }),
        }
    }
    if res < opts.tol {
        Ok((cur, res, opts.max_iter))
    } else {
        Err(Error::NoConvergence { iterations: opts.max_iter, residual: res })
    }
}

/// Default Newton start: `y` at the centre of the y-box and `z` at the fiber midpoint.
pub fn default_seed(gf: &GeneratingFunction, x: &[f64]) -> (Vec<f64>, f64) {
    let y = gf.domain().y_center();
    let (lo, hi) = gf.z_interval(x, &y);
    (y, 0.5 * (lo + hi))
}

/// Latin-hypercube starts `(y, z)` covering the y-box and the z-fiber.
pub fn latin_hypercube_seeds(gf: &GeneratingFunction, x: &[f64], count: usize, seed: u64) -> Vec<(Vec<f64>, f64)> {
    let n = gf.dim();
    let dom = gf.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata: Vec<Vec<usize>> = (0..=n)
        .map(|_| {
            let mut s: Vec<usize> = (0..count).collect();
            s.shuffle(&mut rng);
            s
        })
        .collect();
    (0..count)
        .map(|k| {
            let mut frac = |axis: usize| (strata[axis][k] as f64 + rng.gen::<f64>()) / count as f64;
            let y: Vec<f64> = (0..n).map(|j| dom.y_lo[j] + frac(j) * (dom.y_hi[j] - dom.y_lo[j])).collect();
            let t = frac(n);
            let (lo, hi) = gf.z_interval(x, &y);
            // keep z off the fiber ends
            let z = lo + (0.02 + 0.96 * t) * (hi - lo);
            (y, z)
        })
        .collect()
}

/// Newton solve for `(Y, Z)` at `(x, u, p)`.
pub fn solve_yz(
    gf: &GeneratingFunction,
    x: &[f64],
    u: f64,
    p: &[f64],
    seed: Option<(&[f64], f64)>,
    opts: &NewtonOptions,
) -> Result<ContactState> {
    let n = gf.dim();
    if x.len() != n || p.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: if x.len() != n { x.len() } else { p.len() } });
    }
    let (y0, z0) = match seed {
        Some((y, z)) => (y.to_vec(), z),
        None => default_seed(gf, x),
    };
    let mut start = y0;
    start.push(z0);
    let dom = gf.domain();
    let (sol, residual, iterations) = newton(start, opts, |v| {
        let (y, z) = (&v[..n], v[n]);
        if !dom.contains(x, y, z) {
            return None;
        }
        Some(gf.jet_clamped(x, y, z, 2).map(|(jet, _)| {
            let mut f = Vec::with_capacity(n + 1);
            f.push(jet.value() - u);
            for i in 0..n {
                f.push(jet.d1(Var::X(i)) - p[i]);
            }
            let mut jac = DMatrix::zeros(n + 1, n + 1);
            for j in 0..n {
                jac[(0, j)] = jet.d1(Var::Y(j));
                for i in 0..n {
                    jac[(i + 1, j)] = jet.d2(Var::X(i), Var::Y(j));
                }
            }
            jac[(0, n)] = jet.g_z();
            for i in 0..n {
                jac[(i + 1, n)] = jet.d2(Var::X(i), Var::Z);
            }
            (f, jac)
        }))
    })?;
    Ok(ContactState { x: x.to_vec(), u, p: p.to_vec(), y: sol[..n].to_vec(), z: sol[n], residual, iterations })
}

/// [`solve_yz`] from the default start, then from `starts` Latin-hypercube starts
/// until one converges.
pub fn solve_yz_multistart(
    gf: &GeneratingFunction,
    x: &[f64],
    u: f64,
    p: &[f64],
    starts: usize,
    seed: u64,
    opts: &NewtonOptions,
) -> Result<ContactState> {
    let first = solve_yz(gf, x, u, p, None, opts);
    if first.is_ok() || starts == 0 {
        return first;
    }
    let mut last = first;
    for (y, z) in latin_hypercube_seeds(gf, x, starts, seed) {
        last = solve_yz(gf, x, u, p, Some((&y, z)), opts);
        if last.is_ok() {
            break;
        }
    }
    last
}

/// The `z` solving `g(x, y, z) = u` inside the fiber `I_{x,y}`.
pub fn dual_g(gf: &GeneratingFunction, x: &[f64], y: &[f64], u: f64) -> Result<f64> {
    let (lo, hi) = gf.z_interval(x, y);
    if let Some(z) = gf.dual_closed_form(x, y, u) {
        if z >= lo && z <= hi {
            return Ok(z);
        }
        return Err(Error::OutOfRange { u, lo: gf.value(x, y, hi), hi: gf.value(x, y, lo) });
    }
    dual_g_root(gf, x, y, u)
}

/// Bracketed bisection followed by a safeguarded Newton polish.
pub fn dual_g_root(gf: &GeneratingFunction, x: &[f64], y: &[f64], u: f64) -> Result<f64> {
    let (mut lo, mut hi) = gf.z_interval(x, y);
    let g_lo = gf.value(x, y, lo);
    let g_hi = gf.value(x, y, hi);
    // g is decreasing in z
    if !(u <= g_lo && u >= g_hi) {
        return Err(Error::OutOfRange { u, lo: g_hi, hi: g_lo });
    }
    if u == g_lo {
        return Ok(lo);
    }
    if u == g_hi {
        return Ok(hi);
    }
    // bisect down to adjacent floats
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gf.value(x, y, mid) > u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut z = 0.5 * (lo + hi);
    let dz = DerivSpec::new(&[Var::Z]);
    for _ in 0..3 {
        let r = gf.value(x, y, z) - u;
        let Ok((gz, _)) = gf.partial_clamped(x, y, z, &dz) else { break };
        if gz == 0.0 || !gz.is_finite() {
            break;
        }
        let next = z - r / gz;
        if next >= lo && next <= hi {
            z = next;
        }
    }
    Ok(z)
}

/// `g*_y(x, y, u) = -g_y / g_z` at `z = g*(x, y, u)`.
pub fn dual_gradient_y(gf: &GeneratingFunction, x: &[f64], y: &[f64], u: f64) -> Result<Vec<f64>> {
    let z = dual_g(gf, x, y, u)?;
    let jet = gf.jet_clamped(x, y, z, 1)?.0;
    let gz = jet.g_z();
    Ok(jet.g_y().iter().map(|v| -v / gz).collect())
}

/// Newton solve for `(X, U)` at `(y, z, q)`.
///
/// `g*(x, y, U) = z` means `U = g(x, y, z)`, so the system reduces to
/// `-g_y/g_z(x, y, z) = q` in `x`, whose Jacobian is `-E^T / g_z`.
pub fn solve_xu(
    gf: &GeneratingFunction,
    y: &[f64],
    z: f64,
    q: &[f64],
    seed: Option<&[f64]>,
    opts: &NewtonOptions,
) -> Result<DualContactState> {
    let n = gf.dim();
    if y.len() != n || q.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: if y.len() != n { y.len() } else { q.len() } });
    }
    let dom = gf.domain();
    let start = seed.map(|s| s.to_vec()).unwrap_or_else(|| dom.x_center());
    let (x, residual, iterations) = newton(start, opts, |x| {
        if !dom.contains(x, y, z) {
            return None;
        }
        Some(gf.jet_clamped(x, y, z, 2).map(|(jet, _)| {
            let gz = jet.g_z();
            let f: Vec<f64> = (0..n).map(|m| -jet.d1(Var::Y(m)) / gz - q[m]).collect();
            let e = jet.matrix_e();
            let jac = e.transpose() * (-1.0 / gz);
            (f, jac)
        }))
    })?;
    let u = gf.value(&x, y, z);
    Ok(DualContactState { y: y.to_vec(), z, q: q.to_vec(), x, u, residual, iterations })
}

/// Result of a sampled transform: value and argmax set per target point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledTransform {
    /// `NaN` where no source point was admissible.
    pub values: Vec<f64>,
    /// Indices into the source points attaining the max within [`tie_tolerance`].
    pub argmax: Vec<Vec<usize>>,
    /// Inadmissible (source, target) pairs that were skipped.
    pub skipped: usize,
    /// Targets with an empty admissible set.
    pub empty: Vec<usize>,
}

fn sup_transform<F>(sources: &[Vec<f64>], targets: &[Vec<f64>], f: F) -> SampledTransform
where
    F: Fn(&[f64], usize) -> Option<f64> + Sync,
{
    let per_target: Vec<(f64, Vec<usize>, usize)> = targets
        .par_iter()
        .map_init(
            || vec![f64::NAN; sources.len()],
            |buf, t| {
                let mut best = f64::NEG_INFINITY;
                let mut skipped = 0;
                for (k, slot) in buf.iter_mut().enumerate() {
                    *slot = match f(t, k) {
                        Some(v) if v.is_finite() => {
                            best = best.max(v);
                            v
                        }
                        _ => {
                            skipped += 1;
                            f64::NAN
                        }
                    };
                }
                if best == f64::NEG_INFINITY {
                    return (f64::NAN, Vec::new(), skipped);
                }
                let cut = best - tie_tolerance(best);
                let arg = buf.iter().enumerate().filter(|(_, v)| **v >= cut).map(|(k, _)| k).collect();
                (best, arg, skipped)
            },
        )
        .collect();
    let mut out = SampledTransform {
        values: Vec::with_capacity(targets.len()),
        argmax: Vec::with_capacity(targets.len()),
        skipped: 0,
        empty: Vec::new(),
    };
    for (i, (v, arg, s)) in per_target.into_iter().enumerate() {
        if v.is_nan() {
            out.empty.push(i);
        }
        out.values.push(v);
        out.argmax.push(arg);
        out.skipped += s;
    }
    out
}

/// `v(y) = max_k g*(x_k, y, u_k)` over sampled `(x_k, u_k)`.
pub fn g_star_transform_points(gf: &GeneratingFunction, xs: &[Vec<f64>], us: &[f64], ys: &[Vec<f64>]) -> SampledTransform {
    sup_transform(xs, ys, |y, k| dual_g(gf, &xs[k], y, us[k]).ok())
}

/// `u(x) = max_k g(x, y_k, v_k)` over sampled `(y_k, v_k)`; pairs with `v_k`
/// outside the fiber `I_{x,y_k}` are skipped.
pub fn g_transform_points(gf: &GeneratingFunction, ys: &[Vec<f64>], vs: &[f64], xs: &[Vec<f64>]) -> SampledTransform {
    sup_transform(ys, xs, |x, k| {
        let (lo, hi) = gf.z_interval(x, &ys[k]);
        (vs[k] >= lo && vs[k] <= hi).then(|| gf.value(x, &ys[k], vs[k]))
    })
}

/// g*-transform of a grid potential, sampled at its grid nodes.
#[derive(Clone, Debug)]
pub struct GStarTransform {
    pub y_grid: Grid2,
    pub x_grid: Grid2,
    pub result: SampledTransform,
}

impl GStarTransform {
    pub fn values(&self) -> &[f64] {
        &self.result.values
    }

    /// Argmax x-points at dual node `k`.
    pub fn argmax_points(&self, k: usize) -> Vec<Vec<f64>> {
        self.result.argmax[k].iter().map(|&i| self.x_grid.node(i)).collect()
    }

    /// The transform as a spline potential; fails if some dual node had no admissible x.
    pub fn to_potential(&self) -> Result<GridPotential> {
        if let Some(&k) = self.result.empty.first() {
            return Err(Error::EmptyAdmissibleSet(self.y_grid.node(k)));
        }
        GridPotential::new(self.y_grid.clone(), self.result.values.clone())
    }
}

pub fn g_star_transform(gf: &GeneratingFunction, u: &GridPotential, y_grid: &Grid2) -> Result<GStarTransform> {
    if gf.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: gf.dim() });
    }
    let xs = u.grid().nodes();
    let ys = y_grid.nodes();
    let result = g_star_transform_points(gf, &xs, u.values(), &ys);
    Ok(GStarTransform { y_grid: y_grid.clone(), x_grid: u.grid().clone(), result })
}

/// g-transform back to the primal side, sampled at the nodes of `x_grid`.
pub fn g_transform(gf: &GeneratingFunction, v: &GridPotential, x_grid: &Grid2) -> SampledTransform {
    g_transform_points(gf, &v.grid().nodes(), v.values(), &x_grid.nodes())
}

/// `G(a, b, c) = g*(b, a, c)`: the dual function with the roles of the two
/// spatial variables exchanged, so that it is again a generating function.
#[derive(Debug)]
struct DualFamily {
    inner: GeneratingFunction,
    name: String,
}

impl Family for DualFamily {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, a: &[f64], b: &[f64], c: f64) -> f64 {
        dual_g(&self.inner, b, a, c).unwrap_or(f64::NAN)
    }

    fn dual(&self, a: &[f64], b: &[f64], w: f64) -> Option<f64> {
        Some(self.inner.value(b, a, w))
    }

    fn params(&self) -> Vec<f64> {
        self.inner.params()
    }
}

/// The dual generating function object on the swapped domain
/// `Omega* x Omega x {u : g(x, y, z_hi) <= u <= g(x, y, z_lo)}`.
///
/// Its derivatives are synthesized by finite differences.
pub fn dual_generating_function(gf: &GeneratingFunction) -> Result<GeneratingFunction> {
    let inner = gf.clone();
    let fibers = gf.clone();
    let z = ZBounds::Custom(Arc::new(move |a: &[f64], b: &[f64]| {
        let (lo, hi) = fibers.z_interval(b, a);
        (fibers.value(b, a, hi), fibers.value(b, a, lo))
    }));
    let domain: DomainBox = gf.domain().swapped(z);
    let name = format!("dual({})", gf.name());
    GeneratingFunction::new(Arc::new(DualFamily { inner, name }), domain)
}
