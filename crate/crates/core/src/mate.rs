//! The matrix `E`, the coefficients `A = g_xx(x, Y, Z)` and `B = det E * psi`,
//! and the Jacobian `DY = E^{-1} (D^2 u - A)` of the induced map.

use nalgebra::DMatrix;

use crate::duality::{solve_yz, solve_yz_multistart, ContactState, NewtonOptions};
use crate::error::Result;
use crate::genfun::{FiberPoint, GeneratingFunction, Var};
use crate::linalg::{checked_inverse, max_abs, symmetrize};

/// Multistart budget used when the default Newton start fails.
pub const MULTISTART_SEEDS: usize = 8;

/// `E` at a fiber point, rejected when `|det E|` is below the configured floor.
pub fn matrix_e(gf: &GeneratingFunction, p: &FiberPoint) -> Result<DMatrix<f64>> {
    let e = p.jet.matrix_e();
    checked_inverse(&e, gf.det_floor())?;
    Ok(e)
}

/// The structure at one `(x, u, p)`: contact state, `E`, its inverse and `A`.
#[derive(Clone, Debug)]
pub struct MateCoefficients {
    pub contact: ContactState,
    pub e: DMatrix<f64>,
    pub e_inv: DMatrix<f64>,
    pub det_e: f64,
    pub a: DMatrix<f64>,
}

impl MateCoefficients {
    /// `B = det E * psi(x, u, p)`.
    pub fn b(&self, psi: impl Fn(&[f64], f64, &[f64]) -> f64) -> f64 {
        self.det_e * psi(&self.contact.x, self.contact.u, &self.contact.p)
    }

    /// `B` with `psi = 1`.
    pub fn b_unit(&self) -> f64 {
        self.det_e
    }
}

fn contact(gf: &GeneratingFunction, x: &[f64], u: f64, p: &[f64], warm: Option<&ContactState>) -> Result<ContactState> {
    let opts = NewtonOptions::default();
    if let Some(w) = warm {
        if let Ok(s) = solve_yz(gf, x, u, p, Some((&w.y, w.z)), &opts) {
            return Ok(s);
        }
    }
    solve_yz_multistart(gf, x, u, p, MULTISTART_SEEDS, 0, &opts)
}

fn coefficients_at(gf: &GeneratingFunction, s: ContactState) -> Result<MateCoefficients> {
    let fp = FiberPoint::unchecked(gf, &s.x, &s.y, s.z, 2)?;
    let e = fp.jet.matrix_e();
    let (e_inv, det_e) = checked_inverse(&e, gf.det_floor())?;
    let a = symmetrize(&fp.jet.g_xx());
    Ok(MateCoefficients { contact: s, e, e_inv, det_e, a })
}

pub fn mate_coefficients(gf: &GeneratingFunction, x: &[f64], u: f64, p: &[f64]) -> Result<MateCoefficients> {
    coefficients_at(gf, contact(gf, x, u, p, None)?)
}

/// As [`mate_coefficients`], starting Newton from a nearby contact state.
pub fn mate_coefficients_warm(
    gf: &GeneratingFunction,
    x: &[f64],
    u: f64,
    p: &[f64],
    warm: &ContactState,
) -> Result<MateCoefficients> {
    coefficients_at(gf, contact(gf, x, u, p, Some(warm))?)
}

/// `A(x, u, p) = g_xx(x, Y, Z)`, symmetrized.
pub fn coeff_a(gf: &GeneratingFunction, x: &[f64], u: f64, p: &[f64]) -> Result<DMatrix<f64>> {
    Ok(mate_coefficients(gf, x, u, p)?.a)
}

pub fn coeff_a_warm(gf: &GeneratingFunction, x: &[f64], u: f64, p: &[f64], warm: &ContactState) -> Result<DMatrix<f64>> {
    Ok(mate_coefficients_warm(gf, x, u, p, warm)?.a)
}

#[derive(Clone, Debug)]
pub struct DyResult {
    pub dy: DMatrix<f64>,
    /// `det DY`, the left side of the generated Jacobian equation.
    pub det: f64,
    pub coefficients: MateCoefficients,
}

/// `DY = E^{-1} (D^2 u - A)` at `(x, u, p)`.
pub fn dy_from_hessian(gf: &GeneratingFunction, x: &[f64], u: f64, p: &[f64], hess_u: &DMatrix<f64>) -> Result<DyResult> {
    let c = mate_coefficients(gf, x, u, p)?;
    let dy = &c.e_inv * (hess_u - &c.a);
    let det = dy.determinant();
    Ok(DyResult { dy, det, coefficients: c })
}

/// Max-norm gap between `E^{-1}` and a central-difference Jacobian of `p -> Y(x, u, p)`.
pub fn check_e_is_dpy(gf: &GeneratingFunction, x: &[f64], u: f64, p: &[f64]) -> Result<f64> {
    let n = gf.dim();
    let c = mate_coefficients(gf, x, u, p)?;
    let scale = 1.0 + p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = f64::EPSILON.cbrt() * scale;
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut pp = p.to_vec();
        pp[k] += h;
        let plus = contact(gf, x, u, &pp, Some(&c.contact))?;
        pp[k] -= 2.0 * h;
        let minus = contact(gf, x, u, &pp, Some(&c.contact))?;
        for i in 0..n {
            jac[(i, k)] = (plus.y[i] - minus.y[i]) / (2.0 * h);
        }
    }
    Ok(max_abs(&(jac - &c.e_inv)))
}

/// First derivatives of `A` from third derivatives of `g` at the contact state.
#[derive(Clone, Debug)]
pub struct ADerivatives {
    /// `dp[k] = D_{p_k} A`.
    pub dp: Vec<DMatrix<f64>>,
    /// `D_u A`.
    pub du: DMatrix<f64>,
}

/// `D_p A` and `D_u A` through `Y_p = E^{-1}`, `Z_p = -g_y Y_p / g_z`,
/// `Y_u = -E^{-1} g_xz / g_z` and `Z_u = (1 - g_y . Y_u) / g_z`.
pub fn a_derivatives(gf: &GeneratingFunction, x: &[f64], u: f64, p: &[f64]) -> Result<ADerivatives> {
    let n = gf.dim();
    let c = mate_coefficients(gf, x, u, p)?;
    let s = &c.contact;
    let jet = gf.jet_clamped(&s.x, &s.y, s.z, 3)?.0;
    let gz = jet.g_z();
    let gy = jet.g_y();
    let gxz = jet.g_xz();
    let y_p = &c.e_inv;
    let z_p: Vec<f64> = (0..n).map(|k| -(0..n).map(|m| gy[m] * y_p[(m, k)]).sum::<f64>() / gz).collect();
    let y_u: Vec<f64> = (0..n).map(|m| -(0..n).map(|i| c.e_inv[(m, i)] * gxz[i]).sum::<f64>() / gz).collect();
    let z_u = (1.0 - gy.iter().zip(&y_u).map(|(a, b)| a * b).sum::<f64>()) / gz;
    let dp = (0..n)
        .map(|k| {
            DMatrix::from_fn(n, n, |i, j| {
                let (xi, xj) = (Var::X(i), Var::X(j));
                (0..n).map(|m| jet.d3(xi, xj, Var::Y(m)) * y_p[(m, k)]).sum::<f64>() + jet.d3(xi, xj, Var::Z) * z_p[k]
            })
        })
        .collect();
    let du = DMatrix::from_fn(n, n, |i, j| {
        let (xi, xj) = (Var::X(i), Var::X(j));
        (0..n).map(|m| jet.d3(xi, xj, Var::Y(m)) * y_u[m]).sum::<f64>() + jet.d3(xi, xj, Var::Z) * z_u
    });
    Ok(ADerivatives { dp, du })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fd_a_derivatives(gf: &GeneratingFunction, x: &[f64], u: f64, p: &[f64]) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        let h = 1e-5;
        let dp = (0..p.len())
            .map(|k| {
                let mut pp = p.to_vec();
                pp[k] += h;
                let a = coeff_a(gf, x, u, &pp).unwrap();
                pp[k] -= 2.0 * h;
                (a - coeff_a(gf, x, u, &pp).unwrap()) / (2.0 * h)
            })
            .collect();
        let du = (coeff_a(gf, x, u + h, p).unwrap() - coeff_a(gf, x, u - h, p).unwrap()) / (2.0 * h);
        (dp, du)
    }

    #[test]
    fn e_is_identity_for_bilinear_and_quadratic_cost() {
        for name in ["bilinear", "quad-cost"] {
            let gf = GeneratingFunction::builtin(name, &[]).unwrap();
            let fp = FiberPoint::new(&gf, &[0.2, -0.3], &[1.0, 0.5], 0.1, 2).unwrap();
            let e = matrix_e(&gf, &fp).unwrap();
            assert_abs_diff_eq!(max_abs(&(e - DMatrix::identity(2, 2))), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn perturbed_e_is_identity_and_matches_fd() {
        let gf = GeneratingFunction::builtin("perturbed-bilinear", &[0.1]).unwrap();
        let fp = FiberPoint::new(&gf, &[0.2, -0.3], &[1.0, 0.5], 1.0, 2).unwrap();
        let e = matrix_e(&gf, &fp).unwrap();
        assert_abs_diff_eq!(max_abs(&(e - DMatrix::identity(2, 2))), 0.0, epsilon = 1e-14);
        let fd = gf.clone().with_mode(crate::genfun::DerivativeMode::FiniteDifference);
        let e_fd = FiberPoint::new(&fd, &[0.2, -0.3], &[1.0, 0.5], 1.0, 2).unwrap().jet.matrix_e();
        assert!(max_abs(&(e_fd - DMatrix::identity(2, 2))) < 1e-7);
    }

    #[test]
    fn a_for_constant_families() {
        let gf = GeneratingFunction::builtin("bilinear", &[]).unwrap();
        assert_eq!(coeff_a(&gf, &[0.1, 0.2], 0.0, &[0.5, 0.5]).unwrap(), DMatrix::zeros(2, 2));
        let gf = GeneratingFunction::builtin("quad-cost", &[]).unwrap();
        let a = coeff_a(&gf, &[0.1, 0.2], 0.0, &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(max_abs(&(a + DMatrix::identity(2, 2))), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn log_cost_a_against_fd_hessian() {
        // contact at y = (2, 0); A is the x-Hessian of -log|x - y| there
        let gf = GeneratingFunction::builtin("log-cost", &[]).unwrap();
        let a = coeff_a(&gf, &[0.0, 0.0], 0.2, &[0.5, 0.0]).unwrap();
        let fd = gf.clone().with_mode(crate::genfun::DerivativeMode::FiniteDifference);
        let z = -(2f64.ln()) - 0.2;
        let a_fd = fd.jet(&[0.0, 0.0], &[2.0, 0.0], z, 2).unwrap().g_xx();
        assert!(max_abs(&(&a - &a_fd)) < 1e-7, "{a} vs {a_fd}");
        // -log r has Hessian (2 w w^T - |w|^2 I)/|w|^4 with w = x - y
        assert_abs_diff_eq!(a[(0, 0)], 0.25, epsilon = 1e-9);
        assert_abs_diff_eq!(a[(1, 1)], -0.25, epsilon = 1e-9);
    }

    #[test]
    fn dy_examples() {
        let gf = GeneratingFunction::builtin("bilinear", &[]).unwrap();
        let r = dy_from_hessian(&gf, &[0.1, 0.1], 0.0, &[0.3, 0.2], &DMatrix::identity(2, 2)).unwrap();
        assert_abs_diff_eq!(r.det, 1.0, epsilon = 1e-14);
        let gf = GeneratingFunction::builtin("quad-cost", &[]).unwrap();
        let r = dy_from_hessian(&gf, &[0.1, 0.1], 0.0, &[0.0, 0.0], &DMatrix::zeros(2, 2)).unwrap();
        assert_abs_diff_eq!(max_abs(&(r.dy - DMatrix::identity(2, 2))), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn e_inverse_is_dpy() {
        let gf = GeneratingFunction::builtin("bilinear", &[]).unwrap();
        assert!(check_e_is_dpy(&gf, &[0.1, 0.1], 0.0, &[0.3, 0.2]).unwrap() < 1e-8);
        let gf = GeneratingFunction::builtin("log-cost", &[]).unwrap();
        assert!(check_e_is_dpy(&gf, &[0.1, -0.2], 0.1, &[0.4, 0.1]).unwrap() < 1e-5);
    }

    #[test]
    fn analytic_a_derivatives_match_fd() {
        for (name, params, x, u, p) in [
            ("log-cost", vec![], [0.1, -0.2], 0.1, [0.4, 0.1]),
            ("sqrt-cost", vec![], [0.1, 0.3], -0.5, [0.3, -0.2]),
            ("perturbed-bilinear", vec![0.1], [0.1, 0.3], -0.5, [0.3, -0.2]),
        ] {
            let gf = GeneratingFunction::builtin(name, &params).unwrap();
            let an = a_derivatives(&gf, &x, u, &p).unwrap();
            let (dp, du) = fd_a_derivatives(&gf, &x, u, &p);
            for k in 0..2 {
                assert!(max_abs(&(&an.dp[k] - &dp[k])) < 1e-6, "{name} dp{k}");
            }
            assert!(max_abs(&(&an.du - &du)) < 1e-6, "{name} du");
        }
    }

    #[test]
    fn determinant_multiplicativity() {
        let gf = GeneratingFunction::builtin("sqrt-cost", &[]).unwrap();
        let hess = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.5]);
        let r = dy_from_hessian(&gf, &[0.2, 0.1], -1.0, &[0.3, 0.1], &hess).unwrap();
        let c = &r.coefficients;
        let rhs = c.e_inv.determinant() * (&hess - &c.a).determinant();
        assert_abs_diff_eq!(r.det, rhs, epsilon = 1e-10);
    }
}
