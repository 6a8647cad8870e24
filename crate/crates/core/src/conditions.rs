//! Sampled checks of the weak regularity conditions: the fourth-order form
//! `D_{p_k p_l} A_ij xi_i xi_j eta_k eta_l` on orthogonal pairs, its relaxed
//! version on arbitrary pairs, and monotonicity of `A` in `u`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::duality::ContactState;
use crate::error::{Error, Result};
use crate::genfun::GeneratingFunction;
use crate::linalg::{bilinear_form, dot, norm};
use crate::mate::{coeff_a_warm, mate_coefficients};
use crate::report::Verdict;

/// Tolerance for "non-negative" in the scans.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Random unit 4-tuples used to estimate the norm of `D_p^2 A`.
pub const NORM_TUPLES: usize = 64;

/// `D_{p_k p_l} A` at one point; `entry(k, l)` is an `n x n` matrix.
#[derive(Clone, Debug)]
pub struct Dp2A {
    n: usize,
    blocks: Vec<DMatrix<f64>>,
}

impl Dp2A {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, k: usize, l: usize) -> &DMatrix<f64> {
        &self.blocks[k * self.n + l]
    }

    /// The multilinear form `T(a, b, c, d) = D_{p_k p_l} A_ij a_i b_j c_k d_l`.
    pub fn form(&self, a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.n {
            for l in 0..self.n {
                let w = c[k] * d[l];
                if w != 0.0 {
                    acc += w * bilinear_form(self.entry(k, l), a, b);
                }
            }
        }
        acc
    }

    /// `T(xi, xi, eta, eta)` with no normalization.
    pub fn raw(&self, xi: &[f64], eta: &[f64]) -> f64 {
        self.form(xi, xi, eta, eta)
    }
}

/// Nested central differences of `A` in `p` with step `eps^(1/4) (1 + |p|)`.
pub fn dp2_tensor(gf: &GeneratingFunction, x: &[f64], u: f64, p: &[f64]) -> Result<Dp2A> {
    let base = mate_coefficients(gf, x, u, p)?;
    dp2_tensor_at(gf, x, u, p, &base.contact, &base.a)
}

fn dp2_tensor_at(gf: &GeneratingFunction, x: &[f64], u: f64, p: &[f64], warm: &ContactState, a0: &DMatrix<f64>) -> Result<Dp2A> {
    let n = p.len();
    let h = f64::EPSILON.powf(0.25) * (1.0 + norm(p));
    let a_at = |dk: &[(usize, f64)]| -> Result<DMatrix<f64>> {
        let mut q = p.to_vec();
        for &(k, s) in dk {
            q[k] += s * h;
        }
        coeff_a_warm(gf, x, u, &q, warm)
    };
    let mut blocks = vec![DMatrix::zeros(n, n); n * n];
    for k in 0..n {
        let diag = (a_at(&[(k, 1.0)])? - a0 * 2.0 + a_at(&[(k, -1.0)])?) / (h * h);
        blocks[k * n + k] = diag;
        for l in k + 1..n {
            let mixed = (a_at(&[(k, 1.0), (l, 1.0)])? - a_at(&[(k, 1.0), (l, -1.0)])? - a_at(&[(k, -1.0), (l, 1.0)])?
                + a_at(&[(k, -1.0), (l, -1.0)])?)
                / (4.0 * h * h);
            blocks[l * n + k] = mixed.clone();
            blocks[k * n + l] = mixed;
        }
    }
    Ok(Dp2A { n, blocks })
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let r = norm(v);
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidInput("direction vectors must be nonzero".into()));
    }
    Ok(v.iter().map(|c| c / r).collect())
}

/// `xi` normalized and `eta` projected off it and normalized; `None` if `eta` is parallel to `xi`.
pub fn orthonormal_pair(xi: &[f64], eta: &[f64]) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let xi = unit(xi)?;
    let eta = unit(eta)?;
    let c = dot(&xi, &eta);
    let perp: Vec<f64> = eta.iter().zip(&xi).map(|(e, x)| e - c * x).collect();
    if norm(&perp) < 1e-12 {
        return Ok(None);
    }
    Ok(Some((xi, unit(&perp)?)))
}

/// The A3w form on the orthonormalized pair; 0 when `eta` is parallel to `xi`.
pub fn a3w_form(gf: &GeneratingFunction, x: &[f64], u: f64, p: &[f64], xi: &[f64], eta: &[f64]) -> Result<f64> {
    match orthonormal_pair(xi, eta)? {
        Some((a, b)) => Ok(dp2_tensor(gf, x, u, p)?.raw(&a, &b)),
        None => Ok(0.0),
    }
}

/// The form on the raw pair (no projection or normalization).
pub fn a3w_raw_form(gf: &GeneratingFunction, x: &[f64], u: f64, p: &[f64], xi: &[f64], eta: &[f64]) -> Result<f64> {
    Ok(dp2_tensor(gf, x, u, p)?.raw(xi, eta))
}

/// `(lhs, rhs)` of the relaxed inequality `T(xi, xi, eta, eta) >= -K |xi| |eta| |xi . eta|`.
pub fn a3w_relaxed_check(
    gf: &GeneratingFunction,
    x: &[f64],
    u: f64,
    p: &[f64],
    xi: &[f64],
    eta: &[f64],
    k_a3: f64,
) -> Result<(f64, f64)> {
    let lhs = a3w_raw_form(gf, x, u, p, xi, eta)?;
    Ok((lhs, -k_a3 * norm(xi) * norm(eta) * dot(xi, eta).abs()))
}

/// `D_u A` by central differences with step `eps^(1/3) (1 + |u|)`.
pub fn du_a(gf: &GeneratingFunction, x: &[f64], u: f64, p: &[f64]) -> Result<DMatrix<f64>> {
    let base = mate_coefficients(gf, x, u, p)?;
    du_a_at(gf, x, u, p, &base.contact)
}

fn du_a_at(gf: &GeneratingFunction, x: &[f64], u: f64, p: &[f64], warm: &ContactState) -> Result<DMatrix<f64>> {
    let h = f64::EPSILON.cbrt() * (1.0 + u.abs());
    Ok((coeff_a_warm(gf, x, u + h, p, warm)? - coeff_a_warm(gf, x, u - h, p, warm)?) / (2.0 * h))
}

/// `D_u A_ij xi_i xi_j`.
pub fn a4w_form(gf: &GeneratingFunction, x: &[f64], u: f64, p: &[f64], xi: &[f64]) -> Result<f64> {
    Ok(bilinear_form(&du_a(gf, x, u, p)?, xi, xi))
}

/// `3 max |T(a, b, c, d)|` over random unit 4-tuples and coordinate tuples.
///
/// Writing `eta = eta_perp + (xi.eta) xi` for unit vectors, the A3w part is
/// non-negative and the two remaining terms are bounded by `3 |T| |xi.eta|`.
pub fn k_a3_from_tensor(t: &Dp2A, rng: &mut ChaCha8Rng) -> f64 {
    let n = t.dim();
    let mut worst = 0.0f64;
    for k in 0..n {
        for l in 0..n {
            let blk = t.entry(k, l);
            worst = blk.iter().fold(worst, |a, v| a.max(v.abs()));
        }
    }
    for _ in 0..NORM_TUPLES {
        let v: Vec<Vec<f64>> = (0..4).map(|_| random_unit(rng, n)).collect();
        worst = worst.max(t.form(&v[0], &v[1], &v[2], &v[3]).abs());
    }
    3.0 * worst
}

pub(crate) fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let r = norm(&v);
        if r > 1e-8 {
            return v.iter().map(|c| c / r).collect();
        }
    }
}

fn random_orthonormal_pair(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    loop {
        let xi = random_unit(rng, n);
        let eta = random_unit(rng, n);
        if let Ok(Some(pair)) = orthonormal_pair(&xi, &eta) {
            return pair;
        }
    }
}

/// Coordinate and diagonal pairs; four of them in two dimensions.
fn fixed_pairs(n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let e = |i: usize| (0..n).map(|k| if k == i { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out.push((e(i), e(j)));
            }
        }
    }
    if n >= 2 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut d1 = vec![0.0; n];
        let mut d2 = vec![0.0; n];
        d1[0] = s;
        d1[1] = s;
        d2[0] = s;
        d2[1] = -s;
        out.push((d1.clone(), d2.clone()));
        out.push((d2, d1));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    /// Cells per x axis; points sit at cell centres.
    pub x_res: usize,
    /// Cells per y axis.
    pub y_res: usize,
    /// Cells along each z fiber.
    pub z_res: usize,
    /// Random orthogonal pairs per point, on top of the fixed pairs.
    pub random_pairs: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        ScanSpec { x_res: 4, y_res: 4, z_res: 4, random_pairs: 16, seed: 0, tolerance: DEFAULT_TOLERANCE }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub u: f64,
    pub p: Vec<f64>,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub family: String,
    pub points_sampled: usize,
    pub points_skipped: usize,
    pub pairs_per_point: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Smallest A3w form value on orthonormal pairs.
    pub worst_a3w: f64,
    pub a3w_witness: Option<Witness>,
    /// Smallest `D_u A` form value on unit vectors.
    pub worst_a4w: f64,
    pub a4w_witness: Option<Witness>,
    /// Constant of the relaxed inequality (`K_a3`).
    pub k_a3: f64,
    pub a3w: Verdict,
    pub a4w: Verdict,
}

struct PointResult {
    a3: Option<Witness>,
    a4: Option<Witness>,
    k: f64,
}

fn scan_point(gf: &GeneratingFunction, x: &[f64], u: f64, p: &[f64], spec: &ScanSpec, idx: u64) -> Option<PointResult> {
    let n = gf.dim();
    let base = mate_coefficients(gf, x, u, p).ok()?;
    let t = dp2_tensor_at(gf, x, u, p, &base.contact, &base.a).ok()?;
    let du = du_a_at(gf, x, u, p, &base.contact).ok()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(idx);
    let mut pairs = fixed_pairs(n);
    for _ in 0..spec.random_pairs {
        pairs.push(random_orthonormal_pair(&mut rng, n));
    }
    let mut a3: Option<Witness> = None;
    let mut a4: Option<Witness> = None;
    for (xi, eta) in pairs {
        let v3 = t.raw(&xi, &eta);
        if a3.as_ref().is_none_or(|w| v3 < w.value) {
            a3 = Some(Witness { x: x.to_vec(), u, p: p.to_vec(), xi: xi.clone(), eta: eta.clone(), value: v3 });
        }
        let v4 = bilinear_form(&du, &xi, &xi);
        if a4.as_ref().is_none_or(|w| v4 < w.value) {
            a4 = Some(Witness { x: x.to_vec(), u, p: p.to_vec(), xi: xi.clone(), eta: xi.clone(), value: v4 });
        }
    }
    let k = k_a3_from_tensor(&t, &mut rng);
    Some(PointResult { a3, a4, k })
}

fn centres(lo: f64, hi: f64, cells: usize) -> Vec<f64> {
    (0..cells).map(|k| lo + (k as f64 + 0.5) / cells as f64 * (hi - lo)).collect()
}

fn tensor(lo: &[f64], hi: &[f64], cells: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for (a, b) in lo.iter().zip(hi) {
        let axis = centres(*a, *b, cells);
        out = out.iter().flat_map(|pre| axis.iter().map(move |v| [pre.as_slice(), &[*v]].concat())).collect();
    }
    out
}

/// Points `(x, u, p) = (x, g(x, y, z), g_x(x, y, z))` from a cell-centred grid on the domain.
pub fn scan_points(gf: &GeneratingFunction, spec: &ScanSpec) -> Vec<(Vec<f64>, f64, Vec<f64>)> {
    let dom = gf.domain();
    let xs = tensor(&dom.x_lo, &dom.x_hi, spec.x_res.max(1));
    let ys = tensor(&dom.y_lo, &dom.y_hi, spec.y_res.max(1));
    let mut out = Vec::new();
    for x in &xs {
        for y in &ys {
            let (lo, hi) = gf.z_interval(x, y);
            if !(lo < hi) {
                continue;
            }
            for z in centres(lo, hi, spec.z_res.max(1)) {
                if let Ok(jet) = gf.jet_clamped(x, y, z, 1) {
                    out.push((x.clone(), jet.0.value(), jet.0.g_x()));
                }
            }
        }
    }
    out
}

/// Scans A3w, A4w and the relaxed constant over sampled points.
pub fn scan_conditions(gf: &GeneratingFunction, spec: &ScanSpec) -> ConditionReport {
    let points = scan_points(gf, spec);
    let results: Vec<Option<PointResult>> =
        points.par_iter().enumerate().map(|(i, (x, u, p))| scan_point(gf, x, *u, p, spec, i as u64)).collect();
    let mut a3: Option<Witness> = None;
    let mut a4: Option<Witness> = None;
    let mut k = 0.0f64;
    let mut skipped = 0;
    for r in results {
        let Some(r) = r else {
            skipped += 1;
            continue;
        };
        k = k.max(r.k);
        if let Some(w) = r.a3 {
            if a3.as_ref().is_none_or(|b| w.value < b.value) {
                a3 = Some(w);
            }
        }
        if let Some(w) = r.a4 {
            if a4.as_ref().is_none_or(|b| w.value < b.value) {
                a4 = Some(w);
            }
        }
    }
    let worst_a3w = a3.as_ref().map_or(f64::NAN, |w| w.value);
    let worst_a4w = a4.as_ref().map_or(f64::NAN, |w| w.value);
    let sampled = points.len() - skipped;
    ConditionReport {
        family: gf.name().to_string(),
        points_sampled: sampled,
        points_skipped: skipped,
        pairs_per_point: fixed_pairs(gf.dim()).len() + spec.random_pairs,
        seed: spec.seed,
        tolerance: spec.tolerance,
        worst_a3w,
        a3w_witness: a3,
        worst_a4w,
        a4w_witness: a4,
        k_a3: k,
        a3w: Verdict::from_bool(sampled > 0 && worst_a3w >= -spec.tolerance),
        a4w: Verdict::from_bool(sampled > 0 && worst_a4w >= -spec.tolerance),
    }
}

/// Re-evaluates a recorded witness with [`a3w_form`] (or [`a4w_form`] when `a4` is set).
pub fn reevaluate(gf: &GeneratingFunction, w: &Witness, a4: bool) -> Result<f64> {
    if a4 {
        a4w_form(gf, &w.x, w.u, &w.p, &w.xi)
    } else {
        a3w_form(gf, &w.x, w.u, &w.p, &w.xi, &w.eta)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::genfun::DomainBox;
    use proptest::prelude::*;

    /// `g = x.y - z (1 + |x|^2/4)`: `A = -Z/2 I` depends on `u`.
    pub(crate) fn u_dependent_family() -> GeneratingFunction {
        let dom = DomainBox::cube(2, (-1.0, 1.0), (-2.0, 2.0), (-3.0, 3.0)).unwrap();
        GeneratingFunction::custom("u-dependent", 2, dom, |x, y, z| {
            x[0] * y[0] + x[1] * y[1] - z * (1.0 + 0.25 * (x[0] * x[0] + x[1] * x[1]))
        })
        .unwrap()
    }

    #[test]
    fn constant_a_families_vanish() {
        for name in ["bilinear", "quad-cost"] {
            let gf = GeneratingFunction::builtin(name, &[]).unwrap();
            let v = a3w_form(&gf, &[0.1, 0.2], 0.3, &[0.4, -0.2], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
            assert!(v.abs() < 1e-6, "{name}: {v}");
            assert!(a4w_form(&gf, &[0.1, 0.2], 0.3, &[0.4, -0.2], &[0.6, 0.8]).unwrap().abs() < 1e-6);
        }
    }

    #[test]
    fn relaxed_examples() {
        let gf = GeneratingFunction::builtin("quad-cost", &[]).unwrap();
        let (lhs, rhs) = a3w_relaxed_check(&gf, &[0.0, 0.0], 0.0, &[0.3, 0.1], &[1.0, 0.0], &[0.0, 1.0], 2.0).unwrap();
        assert!(lhs.abs() < 1e-6 && rhs == 0.0);
        let gf = GeneratingFunction::builtin("bilinear", &[]).unwrap();
        let (lhs, rhs) = a3w_relaxed_check(&gf, &[0.0, 0.0], 0.0, &[0.3, 0.1], &[1.0, 0.0], &[1.0, 0.0], 2.0).unwrap();
        assert_eq!(lhs, 0.0);
        assert_eq!(rhs, -2.0);
    }

    #[test]
    fn log_cost_a3w_sign_and_fd_oracle() {
        // the analytic D_p A differentiated once more by central differences
        let gf = GeneratingFunction::builtin("log-cost", &[]).unwrap();
        let (x, u, p) = ([0.1, -0.2], 0.1, [0.4, 0.1]);
        let t = dp2_tensor(&gf, &x, u, &p).unwrap();
        let h = 1e-5;
        for l in 0..2 {
            let mut pp = p;
            pp[l] += h;
            let plus = crate::mate::a_derivatives(&gf, &x, u, &pp).unwrap();
            pp[l] -= 2.0 * h;
            let minus = crate::mate::a_derivatives(&gf, &x, u, &pp).unwrap();
            for k in 0..2 {
                let oracle = (&plus.dp[k] - &minus.dp[k]) / (2.0 * h);
                let diff = crate::linalg::max_abs(&(t.entry(k, l) - oracle));
                assert!(diff < 1e-4, "k={k} l={l}: {diff}");
            }
        }
        // A(p) = 2 p p^T - |p|^2 I here, so the orthonormal form is exactly -2
        let v = a3w_form(&gf, &x, u, &p, &[1.0, 0.3], &[-0.3, 1.0]).unwrap();
        assert!((v + 2.0).abs() < 1e-5, "log-cost A3w form {v}");
        for (k, l, i, j) in (0..16).map(|m| (m / 8, m / 4 % 2, m / 2 % 2, m % 2)) {
            let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
            let exact = 2.0 * (d(i, k) * d(j, l) + d(i, l) * d(j, k)) - 2.0 * d(i, j) * d(k, l);
            assert!((t.entry(k, l)[(i, j)] - exact).abs() < 1e-5);
        }
    }

    #[test]
    fn u_dependent_a4w_matches_closed_form() {
        // A = -Z/2 I, so D_u A = -Z_u/2 I.
        let gf = u_dependent_family();
        let x = [0.4, -0.2];
        let v = a4w_form(&gf, &x, 0.1, &[0.3, 0.2], &[1.0, 0.0]).unwrap();
        let q = 1.0 + 0.25 * (0.16 + 0.04);
        // p = Y - Z x/2 and u = x.Y - Z q give Z_u = -1/(q - |x|^2/2)
        let z_u = -1.0 / (q - 0.5 * 0.2);
        assert!((v - (-0.5 * z_u)).abs() < 1e-6, "{v} vs {}", -0.5 * z_u);
    }

    #[test]
    fn scan_of_constant_families() {
        for name in ["bilinear", "quad-cost"] {
            let gf = GeneratingFunction::builtin(name, &[]).unwrap();
            let r = scan_conditions(&gf, &ScanSpec { x_res: 2, y_res: 2, z_res: 2, ..ScanSpec::default() });
            assert_eq!(r.points_skipped, 0);
            assert!(r.worst_a3w.abs() <= 1e-6 && r.worst_a4w.abs() <= 1e-6, "{r:?}");
            assert!(r.a3w.passed() && r.a4w.passed());
        }
    }

    #[test]
    fn witnesses_reevaluate() {
        let gf = GeneratingFunction::builtin("sqrt-cost", &[]).unwrap();
        let r = scan_conditions(&gf, &ScanSpec { x_res: 2, y_res: 2, z_res: 1, ..ScanSpec::default() });
        let w = r.a3w_witness.unwrap();
        assert!((reevaluate(&gf, &w, false).unwrap() - w.value).abs() < 1e-8);
        let w = r.a4w_witness.unwrap();
        assert!((reevaluate(&gf, &w, true).unwrap() - w.value).abs() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn form_is_even_and_quartic(a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64, d in -1.0..1.0f64) {
            prop_assume!(a.abs() + b.abs() > 0.1 && c.abs() + d.abs() > 0.1);
            let gf = GeneratingFunction::builtin("sqrt-cost", &[]).unwrap();
            let (x, u, p) = ([0.2, 0.1], -0.8, [0.3, -0.4]);
            let t = dp2_tensor(&gf, &x, u, &p).unwrap();
            let (xi, eta) = ([a, b], [c, d]);
            let base = t.raw(&xi, &eta);
            prop_assert!((t.raw(&[-a, -b], &eta) - base).abs() <= 1e-12 * base.abs().max(1.0));
            prop_assert!((t.raw(&xi, &[-c, -d]) - base).abs() <= 1e-12 * base.abs().max(1.0));
            let scaled = t.raw(&[2.0 * a, 2.0 * b], &[3.0 * c, 3.0 * d]);
            prop_assert!((scaled - 36.0 * base).abs() <= 1e-6 * (36.0 * base).abs().max(1e-9));
        }
    }
}
