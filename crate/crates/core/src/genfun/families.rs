use std::fmt;
use std::sync::Arc;

use super::{DomainBox, Family, Var, ZBounds};
use crate::error::{Error, Result};

pub(super) fn builtin(name: &str, params: &[f64], n: usize) -> Result<(Arc<dyn Family>, DomainBox)> {
    if n == 0 {
        return Err(Error::InvalidParams("dimension must be positive".into()));
    }
    let expect_no_params = |params: &[f64]| {
        if params.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("`{name}` takes no parameters, got {}", params.len())))
        }
    };
    match name {
        "bilinear" => {
            expect_no_params(params)?;
            Ok((Arc::new(Bilinear { n }), DomainBox::cube(n, (-1.0, 1.0), (-4.0, 4.0), (-20.0, 20.0))?))
        }
        "quad-cost" => {
            expect_no_params(params)?;
            let f = Arc::new(RadialCost { n, kind: RadialKind::Quadratic });
            Ok((f, DomainBox::cube(n, (-1.0, 1.0), (-4.0, 4.0), (-50.0, 20.0))?))
        }
        "sqrt-cost" => {
            expect_no_params(params)?;
            let f = Arc::new(RadialCost { n, kind: RadialKind::Sqrt });
            Ok((f, DomainBox::cube(n, (-1.0, 1.0), (-4.0, 4.0), (-50.0, 20.0))?))
        }
        "log-cost" => {
            expect_no_params(params)?;
            let f = Arc::new(RadialCost { n, kind: RadialKind::Log });
            let mut y_lo = vec![-1.0; n];
            let mut y_hi = vec![1.0; n];
            y_lo[0] = 1.5;
            y_hi[0] = 3.5;
            Ok((f, DomainBox::new(vec![-1.0; n], vec![1.0; n], y_lo, y_hi, -20.0, 20.0)?))
        }
        "perturbed-bilinear" => {
            let eps = match params {
                [eps] => *eps,
                _ => return Err(Error::InvalidParams("`perturbed-bilinear` takes exactly one parameter (eps)".into())),
            };
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::InvalidParams(format!("eps must be positive, got {eps}")));
            }
            let z_hi = (0.5 / eps).min(5.0);
            Ok((Arc::new(PerturbedBilinear { n, eps }), DomainBox::cube(n, (-1.0, 1.0), (-4.0, 4.0), (-5.0, z_hi))?))
        }
        other => Err(Error::UnknownFamily(other.to_string())),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Partials of the bilinear form `x.y` for a sorted variable list without `z`.
fn bilinear_partial(x: &[f64], y: &[f64], vars: &[Var]) -> f64 {
    match vars {
        [] => dot(x, y),
        [Var::X(i)] => y[*i],
        [Var::Y(j)] => x[*j],
        [Var::X(i), Var::Y(j)] if i == j => 1.0,
        _ => 0.0,
    }
}

fn split_z(vars: &[Var]) -> (usize, &[Var]) {
    let nz = vars.iter().filter(|v| matches!(v, Var::Z)).count();
    // `Var::Z` sorts last.
    (nz, &vars[..vars.len() - nz])
}

/// `g(x, y, z) = x.y - z`.
#[derive(Debug, Clone)]
pub struct Bilinear {
    pub n: usize,
}

impl Family for Bilinear {
    fn name(&self) -> &str {
        "bilinear"
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64], y: &[f64], z: f64) -> f64 {
        dot(x, y) - z
    }

    fn partial(&self, x: &[f64], y: &[f64], z: f64, vars: &[Var]) -> Option<f64> {
        let (nz, rest) = split_z(vars);
        Some(match (nz, rest.len()) {
            (0, _) => {
                if rest.is_empty() {
                    self.value(x, y, z)
                } else {
                    bilinear_partial(x, y, rest)
                }
            }
            (1, 0) => -1.0,
            _ => 0.0,
        })
    }

    fn dual(&self, x: &[f64], y: &[f64], u: f64) -> Option<f64> {
        Some(dot(x, y) - u)
    }
}

/// `g(x, y, z) = x.y - z + (eps/2) z^2`, used on `z < 1/eps` where `g_z < 0`.
#[derive(Debug, Clone)]
pub struct PerturbedBilinear {
    pub n: usize,
    pub eps: f64,
}

impl Family for PerturbedBilinear {
    fn name(&self) -> &str {
        "perturbed-bilinear"
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn params(&self) -> Vec<f64> {
        vec![self.eps]
    }

    fn value(&self, x: &[f64], y: &[f64], z: f64) -> f64 {
        dot(x, y) - z + 0.5 * self.eps * z * z
    }

    fn partial(&self, x: &[f64], y: &[f64], z: f64, vars: &[Var]) -> Option<f64> {
        let (nz, rest) = split_z(vars);
        Some(match (nz, rest.len()) {
            (0, 0) => self.value(x, y, z),
            (0, _) => bilinear_partial(x, y, rest),
            (1, 0) => -1.0 + self.eps * z,
            (2, 0) => self.eps,
            _ => 0.0,
        })
    }

    fn dual(&self, x: &[f64], y: &[f64], u: f64) -> Option<f64> {
        // (eps/2) z^2 - z + c = 0 with c = x.y - u; the root with z < 1/eps.
        let c = dot(x, y) - u;
        let disc = 1.0 - 2.0 * self.eps * c;
        if disc < 0.0 {
            return Some(f64::NAN);
        }
        Some(2.0 * c / (1.0 + disc.sqrt()))
    }

    fn check_domain(&self, domain: &DomainBox) -> Result<()> {
        if let ZBounds::Constant { hi, .. } = domain.z {
            if hi >= 1.0 / self.eps {
                return Err(Error::InvalidParams(format!(
                    "z upper bound {hi} must stay below 1/eps = {} so that g_z < 0",
                    1.0 / self.eps
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadialKind {
    /// `-|w|^2 / 2`
    Quadratic,
    /// `-log|w|`
    Log,
    /// `-sqrt(1 + |w|^2)`
    Sqrt,
}

/// `g(x, y, z) = F(|x - y|^2 / 2) - z` for a radial profile `F`.
#[derive(Debug, Clone)]
pub struct RadialCost {
    pub n: usize,
    pub kind: RadialKind,
}

impl RadialCost {
    /// `F, F', F'', F''', F''''` at `s = |w|^2/2`.
    fn profile(&self, s: f64) -> [f64; 5] {
        match self.kind {
            RadialKind::Quadratic => [-s, -1.0, 0.0, 0.0, 0.0],
            RadialKind::Log => {
                let s2 = s * s;
                [-0.5 * (2.0 * s).ln(), -0.5 / s, 0.5 / s2, -1.0 / (s2 * s), 3.0 / (s2 * s2)]
            }
            RadialKind::Sqrt => {
                let t = 1.0 + 2.0 * s;
                let r = t.sqrt();
                [-r, -1.0 / r, 1.0 / (t * r), -3.0 / (t * t * r), 15.0 / (t * t * t * r)]
            }
        }
    }
}

/// `d^k/dw_{i1}..dw_{ik} F(|w|^2/2)`: sum over partitions of the index list
/// into singletons (contributing `w_i`) and pairs (contributing `delta_ij`),
/// weighted by `F^{(number of blocks)}`.
fn radial_derivative(profile: &[f64; 5], w: &[f64], idx: &[usize]) -> f64 {
    fn walk(profile: &[f64; 5], w: &[f64], rest: &[usize], blocks: usize, prod: f64) -> f64 {
        if prod == 0.0 {
            return 0.0;
        }
        let Some((&first, tail)) = rest.split_first() else {
            return profile[blocks] * prod;
        };
        let mut acc = walk(profile, w, tail, blocks + 1, prod * w[first]);
        for k in 0..tail.len() {
            if tail[k] == first {
                let mut remaining = tail.to_vec();
                remaining.remove(k);
                acc += walk(profile, w, &remaining, blocks + 1, prod);
            }
        }
        acc
    }
    walk(profile, w, idx, 0, 1.0)
}

impl Family for RadialCost {
    fn name(&self) -> &str {
        match self.kind {
            RadialKind::Quadratic => "quad-cost",
            RadialKind::Log => "log-cost",
            RadialKind::Sqrt => "sqrt-cost",
        }
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64], y: &[f64], z: f64) -> f64 {
        let s: f64 = 0.5 * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        self.profile(s)[0] - z
    }

    fn partial(&self, x: &[f64], y: &[f64], z: f64, vars: &[Var]) -> Option<f64> {
        let (nz, rest) = split_z(vars);
        if nz > 0 {
            return Some(if nz == 1 && rest.is_empty() { -1.0 } else { 0.0 });
        }
        if rest.is_empty() {
            return Some(self.value(x, y, z));
        }
        let w: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let s = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
        let profile = self.profile(s);
        let mut sign = 1.0;
        let idx: Vec<usize> = rest
            .iter()
            .map(|v| match v {
                Var::X(i) => *i,
                Var::Y(j) => {
                    sign = -sign;
                    *j
                }
                Var::Z => unreachable!(),
            })
            .collect();
        Some(sign * radial_derivative(&profile, &w, &idx))
    }

    fn dual(&self, x: &[f64], y: &[f64], u: f64) -> Option<f64> {
        Some(self.value(x, y, 0.0) - u)
    }

    fn check_domain(&self, domain: &DomainBox) -> Result<()> {
        if self.kind == RadialKind::Log {
            let separated = (0..domain.dim()).any(|i| domain.x_hi[i] < domain.y_lo[i] || domain.y_hi[i] < domain.x_lo[i]);
            if !separated {
                return Err(Error::InvalidParams(
                    "log-cost needs disjoint x and y boxes so that |x - y| stays away from 0".into(),
                ));
            }
        }
        Ok(())
    }
}

pub(super) struct Custom {
    pub name: String,
    pub dim: usize,
    pub f: Box<dyn Fn(&[f64], &[f64], f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Custom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Custom").field("name", &self.name).field("dim", &self.dim).finish()
    }
}

impl Family for Custom {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64], y: &[f64], z: f64) -> f64 {
        (self.f)(x, y, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radial_second_derivative_matches_closed_form() {
        // d^2/dw_i dw_j F(|w|^2/2) = F' delta_ij + F'' w_i w_j
        let cost = RadialCost { n: 2, kind: RadialKind::Log };
        let w = [0.7, -1.3];
        let s = 0.5 * (w[0] * w[0] + w[1] * w[1]);
        let p = cost.profile(s);
        let d01 = radial_derivative(&p, &w, &[0, 1]);
        assert!((d01 - p[2] * w[0] * w[1]).abs() < 1e-14);
        let d00 = radial_derivative(&p, &w, &[0, 0]);
        assert!((d00 - (p[1] + p[2] * w[0] * w[0])).abs() < 1e-14);
    }

    #[test]
    fn perturbed_dual_branch() {
        let f = PerturbedBilinear { n: 2, eps: 0.1 };
        let z = f.dual(&[0.0, 0.0], &[0.0, 0.0], -1.0).unwrap();
        // -z + 0.05 z^2 = -1, smaller root
        let expected = (1.0 - (1.0f64 - 0.2).sqrt()) / 0.1;
        assert!((z - expected).abs() < 1e-14);
        assert!((z - 1.0557280900008412).abs() < 1e-12);
    }
}
