//! Simple planar polygons: containment, area, centroid and rectangle clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
}

impl Polygon {
    /// Vertices in order (either orientation); the closing edge is implicit.
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidInput("a polygon needs at least 3 vertices".into()));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("polygon vertices must be finite".into()));
        }
        let p = Polygon { vertices };
        if p.area() <= 0.0 {
            return Err(Error::InvalidInput("polygon has zero area".into()));
        }
        Ok(p)
    }

    pub fn rectangle(lo: [f64; 2], hi: [f64; 2]) -> Result<Self> {
        Self::new(vec![lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]])
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    fn signed_area(&self) -> f64 {
        self.edges().map(|(a, b)| a[0] * b[1] - b[0] * a[1]).sum::<f64>() / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn centroid(&self) -> [f64; 2] {
        let a = self.signed_area();
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let w = p[0] * q[1] - q[0] * p[1];
            cx += (p[0] + q[0]) * w;
            cy += (p[1] + q[1]) * w;
        }
        [cx / (6.0 * a), cy / (6.0 * a)]
    }

    /// Distance from `p` to the polygon boundary.
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        self.edges().map(|(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min)
    }

    /// Closed containment: points within `tol` of an edge count as inside.
    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        if self.boundary_distance(p) <= tol {
            return true;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// `self` clipped to the rectangle `[lo, hi]`; `None` when the overlap is degenerate.
    ///
    /// Exact for convex polygons; a non-convex polygon may come back with
    /// zero-width bridges, which do not change the area.
    pub fn clip_rect(&self, lo: [f64; 2], hi: [f64; 2]) -> Option<Polygon> {
        let mut pts = self.vertices.clone();
        for axis in 0..2 {
            pts = clip_half_plane(&pts, axis, lo[axis], true);
            pts = clip_half_plane(&pts, axis, hi[axis], false);
            if pts.is_empty() {
                return None;
            }
        }
        let p = Polygon { vertices: pts };
        (p.vertices.len() >= 3 && p.area() > 0.0).then_some(p)
    }

    /// Bounding box as `(lo, hi)`.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let c = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1]];
    c[0].hypot(c[1])
}

/// Keeps the part with `v[axis] >= bound` (`lower`) or `v[axis] <= bound`.
fn clip_half_plane(pts: &[[f64; 2]], axis: usize, bound: f64, lower: bool) -> Vec<[f64; 2]> {
    let inside = |v: &[f64; 2]| if lower { v[axis] >= bound } else { v[axis] <= bound };
    let mut out = Vec::with_capacity(pts.len() + 2);
    for i in 0..pts.len() {
        let cur = pts[i];
        let prev = pts[(i + pts.len() - 1) % pts.len()];
        let cross = |a: [f64; 2], b: [f64; 2]| {
            let t = (bound - a[axis]) / (b[axis] - a[axis]);
            let mut v = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            v[axis] = bound;
            v
        };
        match (inside(&prev), inside(&cur)) {
            (true, true) => out.push(cur),
            (true, false) => out.push(cross(prev, cur)),
            (false, true) => {
                out.push(cross(prev, cur));
                out.push(cur);
            }
            (false, false) => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l_shape() -> Polygon {
        Polygon::new(vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0], [1.0, 2.0], [0.0, 2.0]]).unwrap()
    }

    #[test]
    fn area_and_centroid() {
        let r = Polygon::rectangle([0.0, 0.0], [2.0, 1.0]).unwrap();
        assert_eq!(r.area(), 2.0);
        assert_eq!(r.centroid(), [1.0, 0.5]);
        let l = l_shape();
        assert_eq!(l.area(), 3.0);
        let c = l.centroid();
        assert!((c[0] - 5.0 / 6.0).abs() < 1e-15 && (c[1] - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn containment() {
        let l = l_shape();
        assert!(l.contains([0.5, 1.5], 0.0));
        assert!(!l.contains([1.5, 1.5], 0.0));
        assert!(l.contains([1.0, 1.5], 1e-12));
        assert!(l.contains([2.0, 0.0], 1e-12));
    }

    #[test]
    fn clipping() {
        let r = Polygon::rectangle([0.0, 0.0], [2.0, 2.0]).unwrap();
        let c = r.clip_rect([1.0, 1.0], [3.0, 3.0]).unwrap();
        assert!((c.area() - 1.0).abs() < 1e-15);
        assert!(r.clip_rect([3.0, 3.0], [4.0, 4.0]).is_none());
        let tri = Polygon::new(vec![[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]]).unwrap();
        let c = tri.clip_rect([0.0, 0.0], [1.0, 1.0]).unwrap();
        assert!((c.area() - 1.0).abs() < 1e-15);
        let c = l_shape().clip_rect([0.5, 0.5], [1.5, 1.5]).unwrap();
        assert!((c.area() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(Polygon::new(vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).is_err());
    }
}
