use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GeneratingFunction;
use crate::duality::{latin_hypercube_seeds, solve_yz, NewtonOptions};
use crate::linalg::{linspace, lu_det};

/// Sampling resolution for [`validate_assumptions`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SamplingSpec {
    /// Nodes per x axis (endpoints included).
    pub x_res: usize,
    /// Nodes per y axis (endpoints included).
    pub y_res: usize,
    /// Nodes per z fiber (endpoints included).
    pub z_res: usize,
    /// Number of interior points on which uniqueness of the contact system is probed.
    pub a1_points: usize,
    /// Newton starts per probed point.
    pub a1_starts: usize,
    pub seed: u64,
}

impl SamplingSpec {
    pub fn uniform(res: usize) -> Self {
        SamplingSpec { x_res: res, y_res: res, z_res: res, a1_points: 32, a1_starts: 8, seed: 0 }
    }
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec::uniform(5)
    }
}

/// Several Newton basins giving different `(y, z)` for the same `(x, u, p)`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct A1Detection {
    pub x: Vec<f64>,
    pub u: f64,
    pub p: Vec<f64>,
    /// Distinct converged `(y, z)` pairs.
    pub solutions: Vec<(Vec<f64>, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ValidationReport {
    pub family: String,
    pub samples: usize,
    pub empty_fibers: usize,
    pub a0_pass: bool,
    /// Largest (closest to zero) sampled `g_z`.
    pub worst_gz: f64,
    pub worst_gz_at: (Vec<f64>, Vec<f64>, f64),
    /// Smallest sampled `|det E|`.
    pub worst_abs_det_e: f64,
    pub worst_det_at: (Vec<f64>, Vec<f64>, f64),
    pub det_floor: f64,
    pub a2_pass: bool,
    pub a1_points: usize,
    pub a1_starts: usize,
    pub a1_seed: u64,
    pub a1_converged_starts: usize,
    pub a1_failed_starts: usize,
    pub a1_detections: Vec<A1Detection>,
    pub a1_pass: bool,
    /// Finite-difference stencils shifted inward near the boundary.
    pub clamping_events: usize,
    pub pass: bool,
}

/// Spot-checks the structural assumptions on a sampled grid of the closed domain.
///
/// Failures are recorded in the report; this never errors.
pub fn validate_assumptions(gf: &GeneratingFunction, spec: &SamplingSpec) -> ValidationReport {
    let n = gf.dim();
    let dom = gf.domain();
    let xs = grid_points(&dom.x_lo, &dom.x_hi, spec.x_res.max(1));
    let ys = grid_points(&dom.y_lo, &dom.y_hi, spec.y_res.max(1));

    let mut samples = 0;
    let mut empty = 0;
    let mut clamping = 0;
    let mut worst_gz = f64::NEG_INFINITY;
    let mut worst_gz_at = (vec![], vec![], 0.0);
    let mut worst_det = f64::INFINITY;
    let mut worst_det_at = (vec![], vec![], 0.0);
    let mut eval_failures = 0;

    for x in &xs {
        for y in &ys {
            let (zlo, zhi) = gf.z_interval(x, y);
            if !(zlo < zhi) {
                empty += 1;
                continue;
            }
            for z in linspace(zlo, zhi, spec.z_res.max(1)) {
                samples += 1;
                let (jet, c) = match gf.jet_clamped(x, y, z, 2) {
                    Ok(v) => v,
                    Err(_) => {
                        eval_failures += 1;
                        continue;
                    }
                };
                clamping += c;
                let gz = jet.g_z();
                if gz > worst_gz {
                    worst_gz = gz;
                    worst_gz_at = (x.clone(), y.clone(), z);
                }
                let det = if gz != 0.0 { lu_det(&jet.matrix_e()).abs() } else { 0.0 };
                if det < worst_det || det.is_nan() {
                    worst_det = det;
                    worst_det_at = (x.clone(), y.clone(), z);
                }
            }
        }
    }

    // Uniqueness of the contact system, probed statistically.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let opts = NewtonOptions::default();
    let mut detections = Vec::new();
    let mut converged = 0;
    let mut failed = 0;
    for _ in 0..spec.a1_points {
        let x: Vec<f64> = (0..n).map(|i| interior(&mut rng, dom.x_lo[i], dom.x_hi[i])).collect();
        let y: Vec<f64> = (0..n).map(|j| interior(&mut rng, dom.y_lo[j], dom.y_hi[j])).collect();
        let (zlo, zhi) = gf.z_interval(&x, &y);
        if !(zlo < zhi) {
            continue;
        }
        let z = interior(&mut rng, zlo, zhi);
        let Ok(jet) = gf.jet(&x, &y, z, 1) else { continue };
        let u = jet.value();
        let p = jet.g_x();
        let mut found: Vec<(Vec<f64>, f64)> = Vec::new();
        for (sy, sz) in latin_hypercube_seeds(gf, &x, spec.a1_starts, rng.gen()) {
            match solve_yz(gf, &x, u, &p, Some((&sy, sz)), &opts) {
                Ok(s) => {
                    converged += 1;
                    let scale = 1.0 + s.y.iter().map(|v| v.abs()).fold(s.z.abs(), f64::max);
                    let dup = found.iter().any(|(fy, fz)| {
                        let d = fy.iter().zip(&s.y).map(|(a, b)| (a - b).abs()).fold((fz - s.z).abs(), f64::max);
                        d <= 1e-6 * scale
                    });
                    if !dup {
                        found.push((s.y, s.z));
                    }
                }
                Err(_) => failed += 1,
            }
        }
        if found.len() > 1 {
            detections.push(A1Detection { x, u, p, solutions: found });
        }
    }

    let a0_pass = empty == 0;
    let a2_pass = eval_failures == 0 && worst_gz < 0.0 && worst_det > gf.det_floor();
    let a1_pass = detections.is_empty();
    ValidationReport {
        family: gf.name().to_string(),
        samples,
        empty_fibers: empty,
        a0_pass,
        worst_gz,
        worst_gz_at,
        worst_abs_det_e: worst_det,
        worst_det_at,
        det_floor: gf.det_floor(),
        a2_pass,
        a1_points: spec.a1_points,
        a1_starts: spec.a1_starts,
        a1_seed: spec.seed,
        a1_converged_starts: converged,
        a1_failed_starts: failed,
        a1_detections: detections,
        a1_pass,
        clamping_events: clamping,
        pass: a0_pass && a1_pass && a2_pass,
    }
}

fn interior(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let m = 0.05 * (hi - lo);
    rng.gen_range(lo + m..hi - m)
}

/// Tensor grid of points in a box, `res` nodes per axis.
pub(crate) fn grid_points(lo: &[f64], hi: &[f64], res: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = lo.iter().zip(hi).map(|(a, b)| linspace(*a, *b, res)).collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for v in axis {
                let mut p = prefix.clone();
                p.push(*v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genfun::{DomainBox, GeneratingFunction};

    #[test]
    fn bilinear_passes_with_constant_derivatives() {
        let gf = GeneratingFunction::builtin("bilinear", &[]).unwrap();
        let r = validate_assumptions(&gf, &SamplingSpec::uniform(3));
        assert!(r.pass, "{r:?}");
        assert_eq!(r.worst_gz, -1.0);
        assert_eq!(r.worst_abs_det_e, 1.0);
    }

    #[test]
    fn perturbed_worst_gz_on_unit_z_box() {
        let gf = GeneratingFunction::builtin("perturbed-bilinear", &[0.1]).unwrap();
        let dom = DomainBox::cube(2, (-1.0, 1.0), (-4.0, 4.0), (-1.0, 1.0)).unwrap();
        let gf = gf.with_domain(dom).unwrap();
        let r = validate_assumptions(&gf, &SamplingSpec::uniform(4));
        assert!(r.pass);
        assert!((r.worst_gz + 0.9).abs() < 1e-15, "{}", r.worst_gz);
    }

    #[test]
    fn empty_fiber_fails_a0() {
        let gf = GeneratingFunction::builtin("bilinear", &[]).unwrap();
        let mut dom = gf.domain().clone();
        dom.z = crate::genfun::ZBounds::Custom(std::sync::Arc::new(
            |x: &[f64], _: &[f64]| {
                if x[0] > 0.5 {
                    (1.0, 1.0)
                } else {
                    (-20.0, 20.0)
                }
            },
        ));
        let gf = gf.with_domain(dom).unwrap();
        let r = validate_assumptions(&gf, &SamplingSpec::uniform(3));
        assert!(!r.a0_pass);
        assert!(r.empty_fibers > 0);
    }
}
