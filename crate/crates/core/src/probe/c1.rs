//! Differentiability check through the dual side: if some support of the
//! g*-transform touches the sampled graph at two well separated interior
//! points, `u` has a kink along the set joining them.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::genfun::GeneratingFunction;
use crate::measure::{default_dual_box, sample_dual, DualSampling};
use crate::polygon::Polygon;
use crate::potential::{Grid2, Potential};

/// Witnesses kept in a report; the total count is always recorded.
pub const MAX_LISTED_WITNESSES: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum C1Verdict {
    C1Plausible,
    NotC1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C1Witness {
    /// Primal sample whose support touches the transform at separated nodes.
    pub x: Vec<f64>,
    /// Diameter of the set of dual nodes where `x` attains the max.
    pub diameter: f64,
    pub contacts: usize,
    /// Two dual nodes realizing the diameter.
    pub pair: [Vec<f64>; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C1Report {
    pub verdict: C1Verdict,
    pub threshold: f64,
    pub dual_box: ([f64; 2], [f64; 2]),
    pub x_cells: usize,
    pub dual_cells: usize,
    pub witness_count: usize,
    pub witnesses: Vec<C1Witness>,
    pub largest_diameter: f64,
    pub empty_nodes: usize,
    pub skipped_pairs: usize,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn farthest(points: &[Vec<f64>], from: usize) -> (usize, f64) {
    (0..points.len()).map(|j| (j, dist(&points[from], &points[j]))).fold((from, 0.0), |m, v| if v.1 > m.1 { v } else { m })
}

/// Diameter with the indices of a realizing pair. A double sweep gives a
/// lower bound within a factor 2; the quadratic scan runs only when that
/// bound cannot settle the comparison with `threshold`.
fn diameter(points: &[Vec<f64>], threshold: f64) -> (f64, usize, usize) {
    if points.len() < 2 {
        return (0.0, 0, 0);
    }
    let (a, _) = farthest(points, 0);
    let (b, d) = farthest(points, a);
    if d > threshold || 2.0 * d <= threshold {
        return (d, a, b);
    }
    let mut best = (d, a, b);
    for i in 0..points.len() {
        let (j, d) = farthest(points, i);
        if d > best.0 {
            best = (d, i, j);
        }
    }
    best
}

/// For each interior primal sample, collects the dual nodes where it attains
/// the sampled transform; a collection wider than `threshold` (default: eight
/// grid spacings, primal or dual, whichever is larger) marks a kink of `u`.
pub fn c1_check(gf: &GeneratingFunction, u: &dyn Potential, s: &DualSampling, threshold: Option<f64>) -> Result<C1Report> {
    let dual_box = match s.dual_box {
        Some(b) => b,
        None => default_dual_box(gf, u, s, &Polygon::rectangle(s.x_lo, s.x_hi)?)?,
    };
    let y_grid = Grid2::uniform(dual_box.0, dual_box.1, [s.dual_cells, s.dual_cells])?;
    let dual = sample_dual(gf, u, s, &y_grid)?;
    let threshold = threshold.unwrap_or_else(|| 8.0 * s.primal_spacing().max(y_grid.max_spacing()));
    let mut touched: Vec<Vec<Vec<f64>>> = vec![Vec::new(); dual.xs.len()];
    for (k, winners) in dual.transform.argmax.iter().enumerate() {
        for &i in winners.iter().filter(|&&i| dual.interior[i]) {
            touched[i].push(y_grid.node(k));
        }
    }
    let mut witnesses = Vec::new();
    let mut largest = 0.0f64;
    for (i, ys) in touched.iter().enumerate() {
        let (d, a, b) = diameter(ys, threshold);
        largest = largest.max(d);
        if d > threshold {
            witnesses.push(C1Witness {
                x: dual.xs[i].clone(),
                diameter: d,
                contacts: ys.len(),
                pair: [ys[a].clone(), ys[b].clone()],
            });
        }
    }
    let witness_count = witnesses.len();
    witnesses.sort_by(|a, b| b.diameter.total_cmp(&a.diameter));
    witnesses.truncate(MAX_LISTED_WITNESSES);
    Ok(C1Report {
        verdict: if witness_count == 0 { C1Verdict::C1Plausible } else { C1Verdict::NotC1 },
        threshold,
        dual_box,
        x_cells: s.x_cells,
        dual_cells: s.dual_cells,
        witness_count,
        witnesses,
        largest_diameter: largest,
        empty_nodes: dual.transform.empty.len(),
        skipped_pairs: dual.transform.skipped,
    })
}
