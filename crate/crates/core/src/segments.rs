//! g-segments: curves `x(theta)` along which `g_y/g_z(x, y0, z0)` moves
//! affinely between its endpoint values, computed by Newton continuation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::duality::{solve_xu, NewtonOptions};
use crate::error::{Error, Result};
use crate::genfun::{FiberPoint, GeneratingFunction, Var};
use crate::linalg::{checked_inverse, linspace, mat_vec, norm};
use crate::polygon::Polygon;
use crate::report::Verdict;

pub const DEFAULT_RESOLUTION: usize = 129;

/// Step halvings allowed between two consecutive samples.
pub const MAX_HALVINGS: u32 = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSample {
    pub theta: f64,
    pub x: Vec<f64>,
    pub xdot: Vec<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GSegment {
    pub y0: Vec<f64>,
    pub z0: f64,
    /// `g_y/g_z` at the start point.
    pub q0: Vec<f64>,
    /// `g_y/g_z` at the end point.
    pub q1: Vec<f64>,
    pub samples: Vec<SegmentSample>,
}

impl GSegment {
    /// `q1 - q0`, the constant rate of `g_y/g_z` along the segment.
    pub fn rate(&self) -> Vec<f64> {
        self.q1.iter().zip(&self.q0).map(|(a, b)| a - b).collect()
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.theta).collect()
    }

    /// Unit tangent rotated by +90 degrees (planar segments only).
    pub fn normal(&self, k: usize) -> Option<[f64; 2]> {
        let v = &self.samples[k].xdot;
        if v.len() != 2 {
            return None;
        }
        let r = norm(v);
        (r > 0.0).then(|| [-v[1] / r, v[0] / r])
    }

    pub fn max_residual(&self) -> f64 {
        self.samples.iter().map(|s| s.residual).fold(0.0, f64::max)
    }

    pub fn min_speed(&self) -> f64 {
        self.samples.iter().map(|s| norm(&s.xdot)).fold(f64::INFINITY, f64::min)
    }
}

/// `g_y/g_z` at `(x, y, z)`.
pub fn support_slope(gf: &GeneratingFunction, x: &[f64], y: &[f64], z: f64) -> Result<Vec<f64>> {
    let jet = gf.jet(x, y, z, 1)?;
    Ok((0..gf.dim()).map(|m| jet.d1(Var::Y(m)) / jet.g_z()).collect())
}

/// `xdot = g_z E^{-T} q`, the velocity of a segment with rate `q`.
pub fn segment_velocity(gf: &GeneratingFunction, p: &FiberPoint, q: &[f64]) -> Result<Vec<f64>> {
    let (e_inv, _) = checked_inverse(&p.jet.matrix_e(), gf.det_floor())?;
    let v = mat_vec(&e_inv.transpose(), q);
    Ok(v.into_iter().map(|c| c * p.jet.g_z()).collect())
}

fn check_endpoint(gf: &GeneratingFunction, x: &[f64], y0: &[f64], z0: f64, theta: f64) -> Result<()> {
    gf.check_dims(x, y0)?;
    if !gf.domain().contains(x, y0, z0) {
        return Err(Error::SegmentExitsDomain { theta, x: x.to_vec() });
    }
    Ok(())
}

/// The g-segment from `x_start` to `x_end` with respect to `(y0, z0)`, sampled at
/// `resolution` uniform values of `theta` in `[0, 1]`.
pub fn g_segment(
    gf: &GeneratingFunction,
    x_start: &[f64],
    x_end: &[f64],
    y0: &[f64],
    z0: f64,
    resolution: usize,
) -> Result<GSegment> {
    if resolution < 2 {
        return Err(Error::InvalidInput("segment resolution must be at least 2".into()));
    }
    check_endpoint(gf, x_start, y0, z0, 0.0)?;
    check_endpoint(gf, x_end, y0, z0, 1.0)?;
    let q0 = support_slope(gf, x_start, y0, z0)?;
    let q1 = support_slope(gf, x_end, y0, z0)?;
    let rate: Vec<f64> = q1.iter().zip(&q0).map(|(a, b)| a - b).collect();
    // `solve_xu` works with `-g_y/g_z`
    let target = |theta: f64| -> Vec<f64> { q0.iter().zip(&q1).map(|(a, b)| -((1.0 - theta) * a + theta * b)).collect() };
    let velocity = |x: &[f64]| -> Result<Vec<f64>> {
        let fp = FiberPoint::unchecked(gf, x, y0, z0, 2)?;
        segment_velocity(gf, &fp, &rate)
    };
    let opts = NewtonOptions::default();
    let thetas = linspace(0.0, 1.0, resolution);

    let first = solve_xu(gf, y0, z0, &target(0.0), Some(x_start), &opts)?;
    let mut samples = vec![SegmentSample { theta: 0.0, xdot: velocity(&first.x)?, x: first.x, residual: first.residual }];
    for &theta in &thetas[1..] {
        let prev = samples.last().expect("at least one sample");
        let mut done = None;
        let mut last_err = None;
        'halving: for level in 0..=MAX_HALVINGS {
            let pieces = 1usize << level;
            let (mut t, mut x, mut xdot) = (prev.theta, prev.x.clone(), prev.xdot.clone());
            let dt = (theta - prev.theta) / pieces as f64;
            let mut residual = 0.0;
            for piece in 1..=pieces {
                let next_t = if piece == pieces { theta } else { prev.theta + dt * piece as f64 };
                let guess: Vec<f64> = x.iter().zip(&xdot).map(|(a, v)| a + (next_t - t) * v).collect();
                let guess = if gf.domain().contains(&guess, y0, z0) { guess } else { x.clone() };
                match solve_xu(gf, y0, z0, &target(next_t), Some(&guess), &opts) {
                    Ok(s) => {
                        xdot = velocity(&s.x)?;
                        x = s.x;
                        residual = s.residual;
                        t = next_t;
                    }
                    Err(e) => {
                        last_err = Some((e, guess));
                        continue 'halving;
                    }
                }
            }
            done = Some(SegmentSample { theta, x, xdot, residual });
            break;
        }
        match (done, last_err) {
            (Some(s), _) => samples.push(s),
            (None, Some((Error::LeftDomain { .. }, guess))) => {
                return Err(Error::SegmentExitsDomain { theta, x: guess });
            }
            (None, Some((e, _))) => return Err(e),
            (None, None) => unreachable!("a failed step records its error"),
        }
    }
    Ok(GSegment { y0: y0.to_vec(), z0, q0, q1, samples })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityWitness {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub y: Vec<f64>,
    pub z: f64,
    /// First sample found outside the region.
    pub theta: f64,
    pub x: Vec<f64>,
    /// `"region"` when the segment leaves the polygon, `"domain"` when it leaves the domain of `g`.
    pub left: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub verdict: Verdict,
    pub endpoint_pairs: usize,
    pub supports: usize,
    /// Segments skipped because `z` was outside the fiber at an endpoint.
    pub skipped: usize,
    pub witness: Option<ConvexityWitness>,
}

/// Boundary tolerance for polygon containment of segment samples.
const REGION_TOL: f64 = 1e-9;

/// Endpoints tried: vertices, edge midpoints and the centroid when it lies inside.
fn probe_points(region: &Polygon) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = region.vertices().to_vec();
    pts.extend(region.edges().map(|(a, b)| [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]));
    let c = region.centroid();
    if region.contains(c, 0.0) {
        pts.push(c);
    }
    pts
}

/// Sampled g-convexity of a planar region with respect to every `(y, z)` in
/// `y_set x z_set`. The verdict is FAIL at the first segment leaving the region.
pub fn is_g_convex_set(
    gf: &GeneratingFunction,
    region: &Polygon,
    y_set: &[Vec<f64>],
    z_set: &[f64],
    resolution: usize,
) -> ConvexityReport {
    let pts = probe_points(region);
    let mut pairs = Vec::new();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            pairs.push((pts[i], pts[j]));
        }
    }
    let mut jobs = Vec::new();
    for y in y_set {
        for &z in z_set {
            for &(a, b) in &pairs {
                jobs.push((y, z, a, b));
            }
        }
    }
    let outcomes: Vec<Option<ConvexityWitness>> = jobs
        .par_iter()
        .map(|&(y, z, a, b)| {
            let witness = |theta: f64, x: Vec<f64>, left: &str| ConvexityWitness {
                x0: a.to_vec(),
                x1: b.to_vec(),
                y: y.clone(),
                z,
                theta,
                x,
                left: left.to_string(),
            };
            match g_segment(gf, &a, &b, y, z, resolution) {
                Ok(seg) => seg
                    .samples
                    .iter()
                    .find(|s| !region.contains([s.x[0], s.x[1]], REGION_TOL))
                    .map(|s| witness(s.theta, s.x.clone(), "region")),
                Err(Error::SegmentExitsDomain { theta, x }) => Some(witness(theta, x, "domain")),
                Err(_) => None,
            }
        })
        .collect();
    let skipped = jobs
        .iter()
        .filter(|(y, z, a, b)| {
            let dom = gf.domain();
            !dom.contains(a, y, *z) || !dom.contains(b, y, *z)
        })
        .count();
    // Witnesses at endpoints come from z lying outside the fiber, not from the region.
    let witness = outcomes
        .into_iter()
        .zip(&jobs)
        .filter(|(_, (y, z, a, b))| gf.domain().contains(a, y, *z) && gf.domain().contains(b, y, *z))
        .find_map(|(w, _)| w);
    ConvexityReport {
        verdict: Verdict::from_bool(witness.is_none()),
        endpoint_pairs: pairs.len(),
        supports: y_set.len() * z_set.len(),
        skipped,
        witness,
    }
}
