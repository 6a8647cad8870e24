//! The g-Monge-Ampere measure `mu(E) = |Y_u(E)|` of polygonal regions, by
//! quadrature of `det DY` for smooth potentials and by counting dual cells
//! whose contact points land in `E` otherwise.

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::duality::{g_star_transform_points, SampledTransform};
use crate::error::{Error, Result};
use crate::genfun::GeneratingFunction;
use crate::mate::{dy_from_hessian, mate_coefficients};
use crate::polygon::Polygon;
use crate::potential::{Grid2, Potential};
use crate::report::Verdict;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureMethod {
    JacobianQuadrature,
    DualBoxCounting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub region: Polygon,
    pub region_area: f64,
    pub mu: f64,
    /// `mu / |E|`.
    pub ratio: f64,
    pub method: MeasureMethod,
    /// Quadrature cells per axis, or dual cells per axis.
    pub resolution: usize,
    /// Box count at half the dual resolution, for the convergence estimate.
    pub coarse_mu: Option<f64>,
    /// Quadrature points where `det(D^2 u - A) < 0`; they contribute 0.
    /// Elsewhere the weight is `|det DY|`, since `det E` may be negative.
    pub negative_det_points: usize,
    /// Quadrature points where `D^2 u - A` has a negative eigenvalue below `-tol`.
    pub non_elliptic_points: usize,
    pub failed_points: usize,
    /// `false` when some quadrature point was not elliptic.
    pub g_convex: bool,
    /// Set for potentials that are a finite max of supports: their image is a null set.
    pub atomic: bool,
    pub marked_cells: usize,
    pub skipped_pairs: usize,
}

/// Slack for the ellipticity check of `D^2 u - A`.
pub const ELLIPTIC_TOL: f64 = 1e-8;

/// Midpoint quadrature of `det DY` over `region`, with the cells of `cells`
/// clipped to the region and each piece evaluated at its centroid.
pub fn gma_measure_smooth(gf: &GeneratingFunction, u: &dyn Potential, region: &Polygon, cells: &Grid2) -> Result<MeasureReport> {
    if gf.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: gf.dim() });
    }
    let pieces: Vec<(f64, [f64; 2])> = (0..cells.nx() - 1)
        .flat_map(|i| (0..cells.ny() - 1).map(move |j| (i, j)))
        .filter_map(|(i, j)| {
            let lo = [cells.xs[i], cells.ys[j]];
            let hi = [cells.xs[i + 1], cells.ys[j + 1]];
            region.clip_rect(lo, hi).map(|p| (p.area(), p.centroid()))
        })
        .collect();
    if pieces.is_empty() {
        return Err(Error::InvalidInput("region does not meet the quadrature grid".into()));
    }
    struct Point {
        weight: f64,
        negative: bool,
        non_elliptic: bool,
        failed: bool,
    }
    let points: Vec<Point> = pieces
        .par_iter()
        .map(|(area, c)| {
            let x = c.as_slice();
            let hess = u.hessian(x);
            match dy_from_hessian(gf, x, u.value(x), &u.gradient(x), &hess) {
                Ok(dy) => {
                    let m = &hess - &dy.coefficients.a;
                    let negative = m.determinant() < 0.0;
                    let low = SymmetricEigen::new(m).eigenvalues.min();
                    Point {
                        weight: if negative { 0.0 } else { area * dy.det.abs() },
                        negative,
                        non_elliptic: low < -ELLIPTIC_TOL,
                        failed: false,
                    }
                }
                Err(_) => Point { weight: 0.0, negative: false, non_elliptic: false, failed: true },
            }
        })
        .collect();
    let mu: f64 = points.iter().map(|p| p.weight).sum();
    let non_elliptic = points.iter().filter(|p| p.non_elliptic).count();
    let area = region.area();
    Ok(MeasureReport {
        region: region.clone(),
        region_area: area,
        mu,
        ratio: mu / area,
        method: MeasureMethod::JacobianQuadrature,
        resolution: cells.nx() - 1,
        coarse_mu: None,
        negative_det_points: points.iter().filter(|p| p.negative).count(),
        non_elliptic_points: non_elliptic,
        failed_points: points.iter().filter(|p| p.failed).count(),
        g_convex: non_elliptic == 0,
        atomic: u.is_discrete(),
        marked_cells: 0,
        skipped_pairs: 0,
    })
}

/// How the primal side is sampled for a g*-transform and where the dual grid sits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSampling {
    /// Box of the primal samples.
    pub x_lo: [f64; 2],
    pub x_hi: [f64; 2],
    /// Primal cells per axis; one sample at each cell centre.
    pub x_cells: usize,
    /// Dual cells per axis; the dual grid has one more node per axis.
    pub dual_cells: usize,
    /// Explicit dual box; by default the padded image of the region.
    pub dual_box: Option<([f64; 2], [f64; 2])>,
    /// Largest tolerated fraction of inadmissible `(x, y)` pairs.
    pub max_inadmissible: f64,
}

impl DualSampling {
    pub fn new(x_lo: [f64; 2], x_hi: [f64; 2], x_cells: usize, dual_cells: usize) -> Self {
        DualSampling { x_lo, x_hi, x_cells, dual_cells, dual_box: None, max_inadmissible: 0.5 }
    }

    pub fn primal_spacing(&self) -> f64 {
        (0..2).map(|k| (self.x_hi[k] - self.x_lo[k]) / self.x_cells as f64).fold(0.0, f64::max)
    }
}

/// Primal samples with the transform evaluated on a dual grid.
#[derive(Clone, Debug)]
pub struct SampledDual {
    pub xs: Vec<Vec<f64>>,
    pub us: Vec<f64>,
    /// `false` for samples in the outermost ring of cells: a max attained there
    /// may come from the edge of the sampled box rather than a true contact.
    pub interior: Vec<bool>,
    pub y_grid: Grid2,
    pub transform: SampledTransform,
}

impl SampledDual {
    /// Interior argmax samples at dual node `k`.
    pub fn interior_contacts(&self, k: usize) -> impl Iterator<Item = &Vec<f64>> + '_ {
        self.transform.argmax[k].iter().filter(|&&i| self.interior[i]).map(|&i| &self.xs[i])
    }
}

pub fn primal_samples(s: &DualSampling, u: &dyn Potential) -> (Vec<Vec<f64>>, Vec<f64>, Vec<bool>) {
    let n = s.x_cells;
    let mut xs = Vec::with_capacity(n * n);
    let mut interior = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let c = |k: usize, m: usize| s.x_lo[k] + (m as f64 + 0.5) / n as f64 * (s.x_hi[k] - s.x_lo[k]);
            xs.push(vec![c(0, i), c(1, j)]);
            interior.push(i > 0 && j > 0 && i + 1 < n && j + 1 < n);
        }
    }
    let us = xs.iter().map(|x| u.value(x)).collect();
    (xs, us, interior)
}

/// g*-transform of `u` sampled at cell centres, evaluated on `y_grid`.
pub fn sample_dual(gf: &GeneratingFunction, u: &dyn Potential, s: &DualSampling, y_grid: &Grid2) -> Result<SampledDual> {
    if gf.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: gf.dim() });
    }
    if s.x_cells < 3 || s.dual_cells < 1 {
        return Err(Error::InvalidInput("need at least 3 primal cells and 1 dual cell per axis".into()));
    }
    let (xs, us, interior) = primal_samples(s, u);
    let transform = g_star_transform_points(gf, &xs, &us, &y_grid.nodes());
    let fraction = transform.skipped as f64 / (xs.len() * y_grid.len()) as f64;
    if fraction > s.max_inadmissible {
        return Err(Error::InadmissibleFraction { fraction, limit: s.max_inadmissible });
    }
    Ok(SampledDual { xs, us, interior, y_grid: y_grid.clone(), transform })
}

/// Padded bounding box of `Y(x, u, Du)` over the primal samples inside `region`,
/// clipped to the y-domain of `gf`.
pub fn default_dual_box(
    gf: &GeneratingFunction,
    u: &dyn Potential,
    s: &DualSampling,
    region: &Polygon,
) -> Result<([f64; 2], [f64; 2])> {
    let (xs, _, _) = primal_samples(s, u);
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for x in xs.iter().filter(|x| region.contains([x[0], x[1]], 0.0)) {
        let y = match mate_coefficients(gf, x, u.value(x), &u.gradient(x)) {
            Ok(c) => c.contact.y,
            Err(_) => continue,
        };
        for k in 0..2 {
            lo[k] = lo[k].min(y[k]);
            hi[k] = hi[k].max(y[k]);
        }
    }
    if !lo[0].is_finite() {
        return Err(Error::InvalidInput("no contact state found inside the region".into()));
    }
    let pad = 0.1 * (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-3);
    let dom = gf.domain();
    for k in 0..2 {
        lo[k] = (lo[k] - pad).max(dom.y_lo[k]);
        hi[k] = (hi[k] + pad).min(dom.y_hi[k]);
    }
    Ok((lo, hi))
}

fn box_count(dual: &SampledDual, region: &Polygon) -> (f64, usize) {
    let mut mu = 0.0;
    let mut marked = 0;
    for k in 0..dual.y_grid.len() {
        if dual.interior_contacts(k).any(|x| region.contains([x[0], x[1]], 0.0)) {
            mu += dual.y_grid.node_cell_area(k);
            marked += 1;
        }
    }
    (mu, marked)
}

/// `mu(E)` as the area of dual cells whose recorded contact points meet `E`,
/// at the configured resolution and at half of it.
pub fn gma_measure_nonsmooth(
    gf: &GeneratingFunction,
    u: &dyn Potential,
    region: &Polygon,
    s: &DualSampling,
) -> Result<MeasureReport> {
    let (lo, hi) = match s.dual_box {
        Some(b) => b,
        None => default_dual_box(gf, u, s, region)?,
    };
    let fine = Grid2::uniform(lo, hi, [s.dual_cells, s.dual_cells])?;
    let dual = sample_dual(gf, u, s, &fine)?;
    let (mu, marked) = box_count(&dual, region);
    let coarse_mu = if s.dual_cells >= 2 {
        let coarse = Grid2::uniform(lo, hi, [s.dual_cells / 2, s.dual_cells / 2])?;
        Some(box_count(&sample_dual(gf, u, s, &coarse)?, region).0)
    } else {
        None
    };
    let area = region.area();
    Ok(MeasureReport {
        region: region.clone(),
        region_area: area,
        mu,
        ratio: mu / area,
        method: MeasureMethod::DualBoxCounting,
        resolution: s.dual_cells,
        coarse_mu,
        negative_det_points: 0,
        non_elliptic_points: 0,
        failed_points: 0,
        g_convex: true,
        atomic: u.is_discrete(),
        marked_cells: marked,
        skipped_pairs: dual.transform.skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionBound {
    pub region: usize,
    pub ratio: f64,
    /// `ratio - c`; negative on failure.
    pub lower_margin: f64,
    /// `C - ratio`; negative on failure.
    pub upper_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlexandrovVerdict {
    pub c: f64,
    pub upper_c: f64,
    pub lower: Verdict,
    pub upper: Verdict,
    pub rows: Vec<RegionBound>,
    /// Region with the smallest lower margin, when the lower bound fails.
    pub lower_witness: Option<usize>,
    pub upper_witness: Option<usize>,
}

/// Checks `c |E| <= mu(E) <= C |E|` over measured regions.
pub fn alexandrov_verdict(reports: &[MeasureReport], c: f64, upper_c: f64) -> AlexandrovVerdict {
    let rows: Vec<RegionBound> = reports
        .iter()
        .enumerate()
        .map(|(k, r)| RegionBound { region: k, ratio: r.ratio, lower_margin: r.ratio - c, upper_margin: upper_c - r.ratio })
        .collect();
    let worst =
        |f: fn(&RegionBound) -> f64| rows.iter().filter(|r| f(r) < 0.0).min_by(|a, b| f(a).total_cmp(&f(b))).map(|r| r.region);
    let lower_witness = worst(|r| r.lower_margin);
    let upper_witness = worst(|r| r.upper_margin);
    AlexandrovVerdict {
        c,
        upper_c,
        lower: Verdict::from_bool(!reports.is_empty() && lower_witness.is_none()),
        upper: Verdict::from_bool(!reports.is_empty() && upper_witness.is_none()),
        rows,
        lower_witness,
        upper_witness,
    }
}
