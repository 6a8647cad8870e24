//! The height `h(theta) = u(x_theta) - g(x_theta, y0, z0) - sigma` of a potential
//! above a support along a g-segment, the assembled lower bound for `h''`, and
//! the derivative bounds that follow from `h'' >= -K |h'|`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::conditions::{dp2_tensor, du_a};
use crate::duality::ContactState;
use crate::error::{Error, Result};
use crate::genfun::{GeneratingFunction, Var};
use crate::linalg::{bilinear_form, dot};
use crate::mate::mate_coefficients;
use crate::potential::Potential;
use crate::segments::GSegment;

/// Chord parameters at which the mean-value terms are evaluated.
pub const CHORD_PARAMS: [f64; 3] = [0.0, 0.5, 1.0];

/// Fourth-order first and second derivatives of uniformly spaced samples.
///
/// Central stencils inside, one-sided six-point stencils at the two samples
/// nearest each end. Needs at least six samples.
pub fn theta_derivatives(h: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = h.len();
    if n < 6 {
        return Err(Error::InvalidInput("need at least 6 samples for derivatives".into()));
    }
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for k in 2..n - 2 {
        d1[k] = (-h[k + 2] + 8.0 * h[k + 1] - 8.0 * h[k - 1] + h[k - 2]) / (12.0 * dt);
        d2[k] = (-h[k + 2] + 16.0 * h[k + 1] - 30.0 * h[k] + 16.0 * h[k - 1] - h[k - 2]) / (12.0 * dt * dt);
    }
    const D1: [[f64; 6]; 2] = [[-25.0, 48.0, -36.0, 16.0, -3.0, 0.0], [-3.0, -10.0, 18.0, -6.0, 1.0, 0.0]];
    const D2: [[f64; 6]; 2] = [[45.0, -154.0, 214.0, -156.0, 61.0, -10.0], [10.0, -15.0, -4.0, 14.0, -6.0, 1.0]];
    for side in 0..2 {
        let fwd = |m: usize| h[m];
        let bwd = |m: usize| h[n - 1 - m];
        for k in 0..2 {
            let (a, b): (f64, f64) = (0..6).fold((0.0, 0.0), |(a, b), m| {
                let v = if side == 0 { fwd(m) } else { bwd(m) };
                (a + D1[k][m] * v, b + D2[k][m] * v)
            });
            if side == 0 {
                d1[k] = a / (12.0 * dt);
                d2[k] = b / (12.0 * dt * dt);
            } else {
                d1[n - 1 - k] = -a / (12.0 * dt);
                d2[n - 1 - k] = b / (12.0 * dt * dt);
            }
        }
    }
    Ok((d1, d2))
}

/// The pieces of the lower bound for `h''` at one point of a segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaTerms {
    /// `(D^2 u - A(x, u, Du))[xdot, xdot]`.
    pub hessian_term: f64,
    /// `A_u(x, u_tau, Du)[xdot, xdot] * h` for each chord parameter.
    pub u_terms: [f64; 3],
    /// `1/2 D_p^2 A(x, u0, p_t)[xdot, xdot, w, w]` for each chord parameter, `w = Du - g_x(x, y0, z0)`.
    pub p_terms: [f64; 3],
    /// The coefficient `2 g_xz . xdot / g_z` multiplying `h'` exactly.
    pub slope_coefficient: f64,
    pub h: f64,
    pub h_prime: f64,
}

impl LemmaTerms {
    fn mean_value(&self, k: usize) -> f64 {
        self.hessian_term + self.u_terms[k] + self.p_terms[k]
    }

    /// Weakest bound over the chord parameters, with `-K |h'|` for the slope term.
    pub fn lower(&self, k_lemma: f64) -> f64 {
        (0..3).map(|k| self.mean_value(k)).fold(f64::INFINITY, f64::min) - k_lemma * self.h_prime.abs()
    }

    /// Midpoint chord value with the exact slope term; equals `h''` whenever `A`
    /// is at most quadratic in `p` and affine in `u`.
    pub fn midpoint_exact(&self) -> f64 {
        self.mean_value(1) + self.slope_coefficient * self.h_prime
    }
}

/// Assembles the lower bound for `h''` at the contact state `(x, u(x), Du(x))`
/// of a potential with Hessian `hess_u`, relative to the support `(y0, z0)`.
pub fn lemma_rhs(
    gf: &GeneratingFunction,
    contact: &ContactState,
    hess_u: &DMatrix<f64>,
    support: (&[f64], f64),
    xdot: &[f64],
    h: f64,
    h_prime: f64,
) -> Result<LemmaTerms> {
    let (y0, z0) = support;
    let x = &contact.x;
    let n = gf.dim();
    let jet0 = gf.jet(x, y0, z0, 2)?;
    let u0 = jet0.value();
    let p0 = jet0.g_x();
    let w: Vec<f64> = contact.p.iter().zip(&p0).map(|(a, b)| a - b).collect();
    let own = mate_coefficients(gf, x, contact.u, &contact.p)?;
    let hessian_term = bilinear_form(&(hess_u - &own.a), xdot, xdot);

    let mut u_terms = [0.0; 3];
    let mut p_terms = [0.0; 3];
    for (k, &s) in CHORD_PARAMS.iter().enumerate() {
        if h != 0.0 {
            let u_s = u0 + s * (contact.u - u0);
            u_terms[k] = bilinear_form(&du_a(gf, x, u_s, &contact.p)?, xdot, xdot) * h;
        }
        if w.iter().any(|c| *c != 0.0) {
            let p_s: Vec<f64> = p0.iter().zip(&w).map(|(a, b)| a + s * b).collect();
            p_terms[k] = 0.5 * dp2_tensor(gf, x, u0, &p_s)?.form(xdot, xdot, &w, &w);
        }
    }
    let g_xz: Vec<f64> = (0..n).map(|i| jet0.d2(Var::X(i), Var::Z)).collect();
    let slope_coefficient = 2.0 * dot(&g_xz, xdot) / jet0.g_z();
    Ok(LemmaTerms { hessian_term, u_terms, p_terms, slope_coefficient, h, h_prime })
}

/// `h''` from the direct expansion `(D^2 u - g_xx)[xdot, xdot] + (Du - g_x) . xddot`.
pub fn h_second_direct(
    gf: &GeneratingFunction,
    x: &[f64],
    grad_u: &[f64],
    hess_u: &DMatrix<f64>,
    support: (&[f64], f64),
    xdot: &[f64],
    xddot: &[f64],
) -> Result<f64> {
    let jet = gf.jet(x, support.0, support.1, 2)?;
    let w: Vec<f64> = grad_u.iter().zip(jet.g_x()).map(|(a, b)| a - b).collect();
    Ok(bilinear_form(&(hess_u - jet.g_xx()), xdot, xdot) + dot(&w, xddot))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightSample {
    pub theta: f64,
    pub x: Vec<f64>,
    pub h: f64,
    pub h_prime: f64,
    pub h_second: f64,
    /// `None` where the contact state or an `A` derivative could not be computed.
    pub terms: Option<LemmaTerms>,
    pub rhs_lower: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightTrace {
    pub segment: GSegment,
    pub y0: Vec<f64>,
    pub z0: f64,
    pub sigma: f64,
    /// `max |2 g_xz . xdot / g_z|` over the segment.
    pub k_lemma: f64,
    pub samples: Vec<HeightSample>,
}

impl HeightTrace {
    pub fn h(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.h).collect()
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.theta).collect()
    }

    /// Largest `rhs_lower - h''` over interior samples with a bound.
    pub fn worst_violation(&self) -> f64 {
        let n = self.samples.len();
        self.samples[1..n - 1].iter().filter_map(|s| s.rhs_lower.map(|r| r - s.h_second)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn failed_samples(&self) -> usize {
        self.samples.iter().filter(|s| s.error.is_some()).count()
    }
}

/// Samples `h_sigma` along `seg`, its derivatives in `theta`, and the lower bound.
pub fn height_trace(gf: &GeneratingFunction, u: &dyn Potential, seg: &GSegment, sigma: f64) -> Result<HeightTrace> {
    for s in &seg.samples {
        if !u.contains(&s.x) {
            return Err(Error::SegmentExitsGrid { eps: 0.0, theta: s.theta });
        }
    }
    let (y0, z0) = (seg.y0.as_slice(), seg.z0);
    let raw: Vec<f64> = seg.samples.iter().map(|s| u.value(&s.x) - gf.value(&s.x, y0, z0)).collect();
    let dt = seg.samples[1].theta - seg.samples[0].theta;
    // derivatives of the unshifted height, so they do not depend on sigma
    let (d1, d2) = theta_derivatives(&raw, dt)?;
    let mut k_lemma = 0.0f64;
    for s in &seg.samples {
        let jet = gf.jet(&s.x, y0, z0, 2)?;
        let g_xz: Vec<f64> = (0..gf.dim()).map(|i| jet.d2(Var::X(i), Var::Z)).collect();
        k_lemma = k_lemma.max((2.0 * dot(&g_xz, &s.xdot) / jet.g_z()).abs());
    }
    let samples = seg
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let h = raw[k] - sigma;
            let contact = ContactState {
                x: s.x.clone(),
                u: u.value(&s.x),
                p: u.gradient(&s.x),
                y: Vec::new(),
                z: f64::NAN,
                residual: 0.0,
                iterations: 0,
            };
            let terms = lemma_rhs(gf, &contact, &u.hessian(&s.x), (y0, z0), &s.xdot, h, d1[k]);
            let (terms, error) = match terms {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(e.to_string())),
            };
            HeightSample {
                theta: s.theta,
                x: s.x.clone(),
                h,
                h_prime: d1[k],
                h_second: d2[k],
                rhs_lower: terms.as_ref().map(|t| t.lower(k_lemma)),
                terms,
                error,
            }
        })
        .collect();
    Ok(HeightTrace { segment: seg.clone(), y0: y0.to_vec(), z0, sigma, k_lemma, samples })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffsegBounds {
    pub t: f64,
    pub c0: f64,
    pub c1: f64,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
    pub holds: bool,
}

/// `1 / int_0^len e^{-K s} ds`.
fn inverse_weight(k: f64, len: f64) -> f64 {
    if k * len < 1e-12 {
        1.0 / len
    } else {
        k / (1.0 - (-k * len).exp())
    }
}

fn interpolate(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    let k = ts.partition_point(|s| *s <= t).clamp(1, ts.len() - 1);
    let (a, b) = (ts[k - 1], ts[k]);
    let w = (t - a) / (b - a);
    (1.0 - w) * vs[k - 1] + w * vs[k]
}

/// Verifies `h'' >= -K |h'|` at interior samples, with slack `tol` relative to
/// the size of `h''`; returns the derivatives.
pub fn check_hypothesis(thetas: &[f64], h: &[f64], k: f64, tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let dt = thetas[1] - thetas[0];
    let (d1, d2) = theta_derivatives(h, dt)?;
    let scale = 1.0 + d2.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut worst: Option<(f64, f64)> = None;
    for i in 1..h.len() - 1 {
        let violation = -k * d1[i].abs() - d2[i];
        if violation > tol * scale && worst.is_none_or(|(_, v)| violation > v) {
            worst = Some((thetas[i], violation));
        }
    }
    match worst {
        Some((t, violation)) => Err(Error::HypothesisFails { t, violation }),
        None => Ok((d1, d2)),
    }
}

/// Default slack for [`check_hypothesis`].
pub const HYPOTHESIS_TOL: f64 = 1e-6;

/// The sandwich `-C0 sup_[a,t] |h| <= h'(t) <= C1 sup_[t,b] |h|` at an interior `t`.
///
/// `C1 = 2 / int_t^b e^{-K(s-t)} ds` and symmetrically for `C0`; the 2 bounds
/// `h(b) - h(t)` by twice the supremum.
pub fn check_diffseg_bounds(thetas: &[f64], h: &[f64], k: f64, t: f64) -> Result<DiffsegBounds> {
    let (a, b) = (thetas[0], thetas[thetas.len() - 1]);
    if !(t > a && t < b) {
        return Err(Error::InvalidInput(format!("t = {t} is not interior to [{a}, {b}]")));
    }
    let (d1, _) = check_hypothesis(thetas, h, k, HYPOTHESIS_TOL)?;
    let value = interpolate(thetas, &d1, t);
    let h_t = interpolate(thetas, h, t);
    let sup = |lo: f64, hi: f64| {
        thetas.iter().zip(h).filter(|(s, _)| **s >= lo && **s <= hi).fold(h_t.abs(), |m, (_, v)| m.max(v.abs()))
    };
    let c0 = 2.0 * inverse_weight(k, t - a);
    let c1 = 2.0 * inverse_weight(k, b - t);
    let lower = -c0 * sup(a, t);
    let upper = c1 * sup(t, b);
    let slack = 1e-9 * (1.0 + value.abs());
    Ok(DiffsegBounds { t, c0, c1, lower, value, upper, holds: lower - slack <= value && value <= upper + slack })
}

/// Worst violation of `h'(t1) <= e^{K (t2 - t1)} h'(t2)` over sample pairs inside
/// runs where `h' > 0`; non-positive means the inequality holds.
pub fn check_diffint(thetas: &[f64], h: &[f64], k: f64) -> Result<f64> {
    let (d1, _) = theta_derivatives(h, thetas[1] - thetas[0])?;
    let mut worst = f64::NEG_INFINITY;
    let mut start = 0;
    while start < d1.len() {
        if d1[start] <= 0.0 {
            start += 1;
            continue;
        }
        let mut end = start;
        while end + 1 < d1.len() && d1[end + 1] > 0.0 {
            end += 1;
        }
        for i in start..=end {
            for j in i + 1..=end {
                let gap = d1[i] - (k * (thetas[j] - thetas[i])).exp() * d1[j];
                worst = worst.max(gap / (1.0 + d1[i].abs()));
            }
        }
        start = end + 1;
    }
    Ok(worst)
}

/// The zero-derivative branch: if `h'` vanishes (changes sign or hits zero) at
/// an interior sample, returns that `theta` with `h'` at the left end, which
/// the differential inequality forces to be non-positive.
pub fn zero_derivative_branch(thetas: &[f64], h: &[f64], zero_tol: f64) -> Result<Option<(f64, f64)>> {
    let (d1, _) = theta_derivatives(h, thetas[1] - thetas[0])?;
    Ok((1..d1.len() - 1).find(|&i| d1[i].abs() <= zero_tol || d1[i] * d1[i + 1] < 0.0).map(|i| (thetas[i], d1[0])))
}
