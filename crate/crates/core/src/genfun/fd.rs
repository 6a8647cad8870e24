//! Central-difference synthesis of partial derivatives.
//!
//! A partial of total order `k` uses, on every differentiated axis, the
//! second-order central stencil for that axis' order. One Richardson level
//! (`h` and `h/2`) lifts the truncation error to fourth order, so the step
//! balancing truncation against rounding is `h_k = eps^(1/(k+4)) * w` where
//! `w` is the axis width capped at 2.

use super::{DerivSpec, GeneratingFunction, Var};
use crate::error::{Error, Result};

/// `(offset, weight)` pairs of the central stencil for an `m`-th derivative at unit step.
fn stencil(m: usize) -> &'static [(f64, f64)] {
    match m {
        0 => &[(0.0, 1.0)],
        1 => &[(-1.0, -0.5), (1.0, 0.5)],
        2 => &[(-1.0, 1.0), (0.0, -2.0), (1.0, 1.0)],
        3 => &[(-2.0, -0.5), (-1.0, 1.0), (1.0, -1.0), (2.0, 0.5)],
        4 => &[(-2.0, 1.0), (-1.0, -4.0), (0.0, 6.0), (1.0, -4.0), (2.0, 1.0)],
        _ => unreachable!("orders above 4 are rejected earlier"),
    }
}

fn reach(m: usize) -> f64 {
    match m {
        0 => 0.0,
        1 | 2 => 1.0,
        _ => 2.0,
    }
}

struct Axis {
    var: Var,
    order: usize,
    step: f64,
}

pub(super) fn partial(
    gf: &GeneratingFunction,
    x: &[f64],
    y: &[f64],
    z: f64,
    spec: &DerivSpec,
    clamp: bool,
) -> Result<(f64, bool)> {
    let n = gf.dim();
    let k = spec.order();
    if k == 0 {
        return Ok((gf.value(x, y, z), false));
    }
    let counts = spec.counts(n);
    let exponent = 1.0 / (k as f64 + 4.0);
    let base = f64::EPSILON.powf(exponent);
    let dom = gf.domain();

    let mut axes = Vec::new();
    for (flat, &m) in counts.iter().enumerate() {
        if m > 0 {
            let var = Var::from_flat(flat, n);
            let width = dom.axis_width(var, x, y);
            axes.push(Axis { var, order: m, step: base * width.min(2.0) });
        }
    }

    // Stencil containment at the coarse step (the fine one is inside it).
    let mut cx = x.to_vec();
    let mut cy = y.to_vec();
    let mut cz = z;
    let mut clamped = false;
    for ax in &axes {
        let r = reach(ax.order) * ax.step;
        let (lo, hi, c) = match ax.var {
            Var::X(i) => (dom.x_lo[i], dom.x_hi[i], &mut cx[i]),
            Var::Y(j) => (dom.y_lo[j], dom.y_hi[j], &mut cy[j]),
            Var::Z => {
                let (lo, hi) = dom.z_interval(x, y);
                (lo, hi, &mut cz)
            }
        };
        if *c - r < lo || *c + r > hi {
            if !clamp || hi - lo < 2.0 * r {
                return Err(Error::StencilExitsDomain(format!("{:?} = {} with reach {r:e} in [{lo}, {hi}]", ax.var, *c)));
            }
            *c = c.clamp(lo + r, hi - r);
            clamped = true;
        }
    }

    let coarse = tensor_stencil(gf, &cx, &cy, cz, &axes, 1.0);
    let fine = tensor_stencil(gf, &cx, &cy, cz, &axes, 0.5);
    Ok(((4.0 * fine - coarse) / 3.0, clamped))
}

fn tensor_stencil(gf: &GeneratingFunction, x: &[f64], y: &[f64], z: f64, axes: &[Axis], scale: f64) -> f64 {
    let mut px = x.to_vec();
    let mut py = y.to_vec();
    let mut acc = 0.0;
    let mut idx = vec![0usize; axes.len()];
    let stencils: Vec<&[(f64, f64)]> = axes.iter().map(|a| stencil(a.order)).collect();
    loop {
        let mut weight = 1.0;
        let mut pz = z;
        px.copy_from_slice(x);
        py.copy_from_slice(y);
        for (a, ax) in axes.iter().enumerate() {
            let (off, w) = stencils[a][idx[a]];
            let h = ax.step * scale;
            weight *= w / h.powi(ax.order as i32);
            match ax.var {
                Var::X(i) => px[i] += off * h,
                Var::Y(j) => py[j] += off * h,
                Var::Z => pz += off * h,
            }
        }
        acc += weight * gf.value(&px, &py, pz);

        // odometer
        let mut a = 0;
        loop {
            if a == axes.len() {
                return acc;
            }
            idx[a] += 1;
            if idx[a] < stencils[a].len() {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}
