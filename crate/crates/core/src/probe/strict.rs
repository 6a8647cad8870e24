//! Quantitative strict g-convexity probe in the plane.
//!
//! Given a support `g(., y0, z0)` nearly touching `u` at two points, the probe
//! measures how far `u` lifts off the support between them (`H`), then builds
//! a family of offset g-segments and checks that the trace integral of
//! `D^2 u - A` over the strip is consistent with a positive lower bound on `H`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genfun::GeneratingFunction;
use crate::linalg::{bilinear_form, dot, linspace, norm};
use crate::mate::mate_coefficients;
use crate::potential::{GridPotential, Potential};
use crate::segments::{g_segment, GSegment};

/// `H` at or below this is treated as zero.
pub const DEGENERATE_H: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    /// Samples of the base segment over `theta in [-1, 1]`; must be `4k + 1`.
    pub theta_samples: usize,
    /// Offset distances in `[0, delta]`.
    pub eps_samples: usize,
    /// Offset of the support; by default the larger endpoint gap.
    pub sigma: Option<f64>,
    /// Width of the offset strip; by default half the distance to the grid edge.
    pub delta: Option<f64>,
    /// Lower bound for `det DY`; by default the measured minimum along the strip.
    pub c: Option<f64>,
    /// Relative slack in `H >= implied_H_lower`.
    pub slack: f64,
    /// Tolerance for `u >= g(., y0, z0)` and for the endpoint gaps.
    pub support_tol: f64,
    /// Largest accepted `|x_theta^eps - x_theta| / eps` before the run is flagged.
    pub lipschitz_cap: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            theta_samples: 129,
            eps_samples: 33,
            sigma: None,
            delta: None,
            c: None,
            slack: 1e-6,
            support_tol: 1e-8,
            lipschitz_cap: 100.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProbeVerdict {
    Strict,
    Degenerate,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantEntry {
    pub name: String,
    pub value: f64,
    pub formula: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasePoint {
    pub theta: f64,
    pub x: Vec<f64>,
    pub h_sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripRow {
    pub eps: f64,
    /// `int a dtheta` with `a = (D^2u - A)[xi, xi]` along the segment.
    pub tangential: f64,
    /// `int tr(D^2u - A) dtheta`.
    pub trace: f64,
    /// `(int sqrt(det) dtheta)^2 / tangential`, a lower bound for `int b dtheta`.
    pub harmonic: f64,
    /// `max |d/dtheta h_sigma|` over `theta in [-1/4, 1/4]`.
    pub max_slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub y0: Vec<f64>,
    pub z0: f64,
    pub x_m1: Vec<f64>,
    pub x_1: Vec<f64>,
    pub sigma: f64,
    pub endpoint_gaps: [f64; 2],
    /// `-min h_sigma` over the base segment.
    pub h_inf: f64,
    pub h_inf_theta: f64,
    pub delta: f64,
    pub integral_i: f64,
    /// `int harmonic deps`; never above `integral_i`.
    pub jensen_bound: f64,
    pub jensen_constant: f64,
    pub implied_h_lower: f64,
    pub verdict: ProbeVerdict,
    /// `H` vanishes although the strip bound forces it positive.
    pub jensen_contradiction: bool,
    pub elliptic_samples: usize,
    pub non_elliptic_samples: usize,
    pub cofactor_violations: usize,
    pub lipschitz_flagged: bool,
    pub constants: Vec<ConstantEntry>,
    pub base: Vec<BasePoint>,
    pub strip: Vec<StripRow>,
    pub notes: Vec<String>,
}

impl ProbeReport {
    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|c| c.name == name).map(|c| c.value)
    }
}

/// `delta / (e^{I/C} - 1)`, the smallest `H` with `C log((delta + H)/H) <= I`.
pub fn implied_h_lower(delta: f64, integral: f64, constant: f64) -> f64 {
    if constant <= 0.0 {
        return 0.0;
    }
    let d = (integral / constant).exp_m1();
    if d.is_finite() && d > 0.0 {
        delta / d
    } else {
        0.0
    }
}

fn trapezoid(ts: &[f64], vs: &[f64]) -> f64 {
    ts.windows(2).zip(vs.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1])).sum()
}

fn exits(eps: f64, seg: &GSegment, u: &GridPotential, to_theta: impl Fn(f64) -> f64) -> Result<()> {
    match seg.samples.iter().find(|s| !u.contains(&s.x)) {
        Some(s) => Err(Error::SegmentExitsGrid { eps, theta: to_theta(s.theta) }),
        None => Ok(()),
    }
}

fn segment_or_exit(
    gf: &GeneratingFunction,
    a: &[f64],
    b: &[f64],
    support: (&[f64], f64),
    samples: usize,
    eps: f64,
    to_theta: impl Fn(f64) -> f64,
) -> Result<GSegment> {
    match g_segment(gf, a, b, support.0, support.1, samples) {
        Ok(s) => Ok(s),
        Err(Error::SegmentExitsDomain { theta, .. }) => Err(Error::SegmentExitsGrid { eps, theta: to_theta(theta) }),
        Err(e) => Err(e),
    }
}

struct StripPoint {
    a: f64,
    b: f64,
    det: f64,
    det_e: f64,
    elliptic: bool,
    cofactor_ok: bool,
    slope: f64,
}

fn strip_point(
    gf: &GeneratingFunction,
    u: &GridPotential,
    support: (&[f64], f64),
    x: &[f64],
    xdot: &[f64],
) -> Result<StripPoint> {
    let grad = u.gradient(x);
    let hess = u.hessian(x);
    let coeff = mate_coefficients(gf, x, u.value(x), &grad)?;
    let m: DMatrix<f64> = &hess - &coeff.a;
    let speed = norm(xdot);
    let xi = [xdot[0] / speed, xdot[1] / speed];
    let eta = [-xi[1], xi[0]];
    let a = bilinear_form(&m, &xi, &xi);
    let b = bilinear_form(&m, &eta, &eta);
    let det = m.determinant();
    let low = SymmetricEigen::new(m).eigenvalues.min();
    let jet = gf.jet(x, support.0, support.1, 1)?;
    let w: Vec<f64> = grad.iter().zip(jet.g_x()).map(|(p, q)| p - q).collect();
    let scale = 1.0 + a.abs() * b.abs();
    Ok(StripPoint {
        a,
        b,
        det,
        det_e: coeff.det_e,
        elliptic: low > 0.0,
        cofactor_ok: a * b >= det - 1e-12 * scale,
        slope: dot(&w, xdot).abs(),
    })
}

/// Runs the probe for the support `(y0, z0)` with near-touch points `x_m1`, `x_1`.
pub fn strict_convexity_probe(
    gf: &GeneratingFunction,
    u: &GridPotential,
    support: (&[f64], f64),
    x_m1: &[f64],
    x_1: &[f64],
    opts: &ProbeOptions,
) -> Result<ProbeReport> {
    if gf.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: gf.dim() });
    }
    if opts.theta_samples < 9 || !(opts.theta_samples - 1).is_multiple_of(4) || opts.eps_samples < 2 {
        return Err(Error::InvalidInput("theta samples must be 4k + 1 >= 9 and eps samples >= 2".into()));
    }
    let (y0, z0) = support;
    let h_raw = |x: &[f64]| u.value(x) - gf.value(x, y0, z0);

    // u must stay above the support wherever the support is defined on the grid
    for x in u.grid().nodes() {
        let (lo, hi) = gf.z_interval(&x, y0);
        if z0 >= lo && z0 <= hi && h_raw(&x) < -opts.support_tol {
            return Err(Error::Precondition(format!("u lies below the support at {x:?}")));
        }
    }

    let to_theta = |s: f64| 2.0 * s - 1.0;
    let base = segment_or_exit(gf, x_m1, x_1, support, opts.theta_samples, 0.0, to_theta)?;
    exits(0.0, &base, u, to_theta)?;
    let gaps = [h_raw(x_m1), h_raw(x_1)];
    let sigma = opts.sigma.unwrap_or(gaps[0].max(gaps[1]));
    if gaps.iter().any(|g| *g > sigma + opts.support_tol) {
        return Err(Error::Precondition(format!("endpoint gaps {gaps:?} exceed sigma = {sigma}")));
    }
    let base_points: Vec<BasePoint> = base
        .samples
        .iter()
        .map(|s| BasePoint { theta: to_theta(s.theta), x: s.x.clone(), h_sigma: h_raw(&s.x) - sigma })
        .collect();
    let (h_inf_theta, min_h) =
        base_points.iter().map(|p| (p.theta, p.h_sigma)).fold((0.0, f64::INFINITY), |m, v| if v.1 < m.1 { v } else { m });
    let h_inf = (-min_h).max(0.0);

    let quarter = (opts.theta_samples - 1) / 4;
    let (i_lo, i_hi) = (quarter, 3 * quarter);
    let (glo, ghi) = (u.grid().lo(), u.grid().hi());
    let edge_gap = base.samples[i_lo..=i_hi]
        .iter()
        .map(|s| (0..2).map(|k| (s.x[k] - glo[k]).min(ghi[k] - s.x[k])).fold(f64::INFINITY, f64::min))
        .fold(f64::INFINITY, f64::min);
    let delta = opts.delta.unwrap_or(0.5 * edge_gap);
    if !(delta > 0.0) {
        return Err(Error::Precondition(format!("strip width {delta} must be positive")));
    }
    let normal = |k: usize| base.normal(k).ok_or_else(|| Error::Precondition("base segment has zero speed".into()));
    let (n_lo, n_hi) = (normal(i_lo)?, normal(i_hi)?);
    let epss = linspace(0.0, delta, opts.eps_samples);
    let half_samples = 2 * quarter + 1;
    let local_theta = |s: f64| s - 0.5;

    let offsets: Vec<GSegment> = epss
        .par_iter()
        .map(|&eps| {
            let a: Vec<f64> = (0..2).map(|k| base.samples[i_lo].x[k] + eps * n_lo[k]).collect();
            let b: Vec<f64> = (0..2).map(|k| base.samples[i_hi].x[k] + eps * n_hi[k]).collect();
            if !u.contains(&a) || !u.contains(&b) {
                return Err(Error::SegmentExitsGrid { eps, theta: if u.contains(&a) { 0.5 } else { -0.5 } });
            }
            let seg = segment_or_exit(gf, &a, &b, support, half_samples, eps, local_theta)?;
            exits(eps, &seg, u, local_theta)?;
            Ok(seg)
        })
        .collect::<Result<_>>()?;

    // theta in [-1/4, 1/4] is the middle half of each offset segment
    let (j_lo, j_hi) = (quarter / 2, quarter / 2 + quarter);
    let thetas: Vec<f64> = offsets[0].samples[j_lo..=j_hi].iter().map(|s| local_theta(s.theta)).collect();
    let points: Vec<Vec<StripPoint>> = offsets
        .par_iter()
        .map(|seg| {
            seg.samples[j_lo..=j_hi].iter().map(|s| strip_point(gf, u, support, &s.x, &s.xdot)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut notes = Vec::new();
    let strip: Vec<StripRow> = epss
        .iter()
        .zip(&points)
        .map(|(&eps, row)| {
            let tangential = trapezoid(&thetas, &row.iter().map(|p| p.a).collect::<Vec<_>>());
            let trace = trapezoid(&thetas, &row.iter().map(|p| p.a + p.b).collect::<Vec<_>>());
            let root = trapezoid(&thetas, &row.iter().map(|p| p.det.max(0.0).sqrt()).collect::<Vec<_>>());
            let harmonic = if tangential > 0.0 { root * root / tangential } else { 0.0 };
            let max_slope = row.iter().map(|p| p.slope).fold(0.0, f64::max);
            StripRow { eps, tangential, trace, harmonic, max_slope }
        })
        .collect();
    let all = points.iter().flatten();
    let elliptic_samples = all.clone().filter(|p| p.elliptic).count();
    let non_elliptic_samples = all.clone().count() - elliptic_samples;
    let cofactor_violations = all.clone().filter(|p| p.elliptic && !p.cofactor_ok).count();
    let min_det_m = all.clone().map(|p| p.det).fold(f64::INFINITY, f64::min);
    let min_det_e = all.clone().map(|p| p.det_e.abs()).fold(f64::INFINITY, f64::min);

    let integral_i = trapezoid(&epss, &strip.iter().map(|r| r.trace).collect::<Vec<_>>());
    let jensen_bound = trapezoid(&epss, &strip.iter().map(|r| r.harmonic).collect::<Vec<_>>());
    if jensen_bound > integral_i * (1.0 + 1e-12) + 1e-14 {
        notes.push(format!("harmonic bound {jensen_bound} exceeds the trace integral {integral_i}"));
    }
    let ratio_max = |f: &dyn Fn(&StripRow) -> f64| {
        strip.iter().filter(|r| r.eps + h_inf > 0.0).map(|r| f(r) / (r.eps + h_inf)).fold(0.0, f64::max)
    };
    let c_tan = ratio_max(&|r| r.tangential);
    let c_diff = ratio_max(&|r| r.max_slope);
    let c_det = match opts.c {
        Some(c) => c * min_det_e,
        None => min_det_m.max(0.0),
    };
    let len = 0.5;
    let jensen_constant = if c_tan > 0.0 { c_det * len * len / c_tan } else { 0.0 };
    let implied = implied_h_lower(delta, integral_i, jensen_constant);

    // |x_theta^eps - x_theta^0| / eps and the Jacobian of (theta, eps) -> x
    let mut lipschitz = 0.0f64;
    let (mut jac_min, mut jac_max) = (f64::INFINITY, 0.0f64);
    for (e, seg) in offsets.iter().enumerate() {
        for j in j_lo..=j_hi {
            let x = &seg.samples[j].x;
            if e > 0 {
                let d: Vec<f64> = (0..2).map(|k| x[k] - offsets[0].samples[j].x[k]).collect();
                lipschitz = lipschitz.max(norm(&d) / epss[e]);
            }
            let (ea, eb) = if e == 0 {
                (0, 1)
            } else if e + 1 == offsets.len() {
                (e - 1, e)
            } else {
                (e - 1, e + 1)
            };
            let dx_de: Vec<f64> =
                (0..2).map(|k| (offsets[eb].samples[j].x[k] - offsets[ea].samples[j].x[k]) / (epss[eb] - epss[ea])).collect();
            let v = &seg.samples[j].xdot;
            let jac = (v[0] * dx_de[1] - v[1] * dx_de[0]).abs();
            jac_min = jac_min.min(jac);
            jac_max = jac_max.max(jac);
        }
    }
    let lipschitz_flagged = lipschitz > opts.lipschitz_cap;
    if lipschitz_flagged {
        notes.push(format!("offset Lipschitz constant {lipschitz} exceeds the cap {}", opts.lipschitz_cap));
    }

    let degenerate = h_inf <= DEGENERATE_H;
    let verdict = if degenerate {
        ProbeVerdict::Degenerate
    } else if non_elliptic_samples > 0 {
        notes.push(format!("{non_elliptic_samples} strip samples where D^2u - A is not positive definite"));
        ProbeVerdict::Inconclusive
    } else if h_inf >= implied * (1.0 - opts.slack) {
        ProbeVerdict::Strict
    } else {
        ProbeVerdict::Inconclusive
    };
    let jensen_contradiction = degenerate && jensen_constant > 0.0;
    if jensen_contradiction {
        notes.push("H vanishes while the strip bound forces it to be positive".into());
    }

    let entry = |name: &str, value: f64, formula: &str| ConstantEntry { name: name.into(), value, formula: formula.into() };
    let constants = vec![
        entry("sigma", sigma, "max of the endpoint gaps u - g(., y0, z0) unless given"),
        entry("H", h_inf, "-min over the base segment of u - g(., y0, z0) - sigma"),
        entry("delta", delta, "half the distance from the middle half of the base segment to the grid edge unless given"),
        entry("c_det", c_det, "lower bound of det(D^2u - A): c * min|det E| if c is given, else the measured minimum"),
        entry("C_tan", c_tan, "max over eps of int_{-1/4}^{1/4} (D^2u - A)[xi, xi] dtheta / (eps + H)"),
        entry("C_slope", c_diff, "max over eps, |theta| <= 1/4 of |d/dtheta h_sigma| / (eps + H)"),
        entry("C_jensen", jensen_constant, "c_det * (1/2)^2 / C_tan"),
        entry("I", integral_i, "int_0^delta int_{-1/4}^{1/4} tr(D^2u - A) dtheta deps"),
        entry(
            "jensen_bound",
            jensen_bound,
            "int_0^delta (int sqrt(det(D^2u - A)) dtheta)^2 / int (D^2u - A)[xi, xi] dtheta deps",
        ),
        entry("implied_H_lower", implied, "delta / (exp(I / C_jensen) - 1)"),
        entry("lipschitz", lipschitz, "max |x_theta^eps - x_theta^0| / eps"),
        entry("jacobian_min", jac_min, "min |det d(x)/d(theta, eps)| over the strip"),
        entry("jacobian_max", jac_max, "max |det d(x)/d(theta, eps)| over the strip"),
    ];

    Ok(ProbeReport {
        y0: y0.to_vec(),
        z0,
        x_m1: x_m1.to_vec(),
        x_1: x_1.to_vec(),
        sigma,
        endpoint_gaps: gaps,
        h_inf,
        h_inf_theta,
        delta,
        integral_i,
        jensen_bound,
        jensen_constant,
        implied_h_lower: implied,
        verdict,
        jensen_contradiction,
        elliptic_samples,
        non_elliptic_samples,
        cofactor_violations,
        lipschitz_flagged,
        constants,
        base: base_points,
        strip,
        notes,
    })
}
