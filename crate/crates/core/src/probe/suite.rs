//! Consistency harness: on each fixture, measure the hypotheses of the
//! regularity results and check that the probe and C1 verdicts never
//! contradict a case where all of them hold.

use serde::{Deserialize, Serialize};

use crate::conditions::{scan_conditions, ScanSpec};
use crate::duality::dual_generating_function;
use crate::error::Result;
use crate::genfun::GeneratingFunction;
use crate::mate::mate_coefficients;
use crate::measure::{alexandrov_verdict, gma_measure_smooth, DualSampling};
use crate::polygon::Polygon;
use crate::potential::{Grid2, GridPotential, Potential};
use crate::report::Verdict;
use crate::segments::is_g_convex_set;

use super::c1::{c1_check, C1Verdict};
use super::strict::{strict_convexity_probe, ProbeOptions, ProbeVerdict};

#[derive(Clone, Debug)]
pub struct SuiteFixture {
    pub name: String,
    pub gf: GeneratingFunction,
    pub u: GridPotential,
    pub region: Polygon,
    /// Claimed lower density bound.
    pub c: f64,
    /// Claimed upper density bound.
    pub upper_c: f64,
    /// Where the probe's support touches `u`.
    pub touch: [f64; 2],
    pub direction: [f64; 2],
    pub half_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSettings {
    pub grid_cells: usize,
    pub quadrature_cells: usize,
    pub scan: ScanSpec,
    /// Contact states sampled per axis for the set-convexity checks.
    pub contact_samples: usize,
    pub segment_resolution: usize,
    pub probe: ProbeOptions,
    pub x_cells: usize,
    pub dual_cells: usize,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        SuiteSettings {
            grid_cells: 32,
            quadrature_cells: 16,
            scan: ScanSpec { x_res: 2, y_res: 2, z_res: 2, random_pairs: 4, ..ScanSpec::default() },
            contact_samples: 2,
            segment_resolution: 17,
            probe: ProbeOptions { theta_samples: 33, eps_samples: 9, ..ProbeOptions::default() },
            x_cells: 32,
            dual_cells: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Implication {
    /// Some premise failed, so nothing is claimed.
    Vacuous,
    Holds,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub fixture: String,
    pub family: String,
    pub lower_bound: Verdict,
    pub upper_bound: Verdict,
    pub a3w: Verdict,
    pub a4w: Verdict,
    pub domain_convex: Verdict,
    pub dual_convex: Verdict,
    pub probe: Option<ProbeVerdict>,
    pub probe_h: Option<f64>,
    pub probe_error: Option<String>,
    pub c1: Option<C1Verdict>,
    pub c1_error: Option<String>,
    pub strict_implication: Implication,
    pub c1_implication: Implication,
    /// Premises that failed, by name.
    pub failed_hypotheses: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub rows: Vec<SuiteRow>,
    pub violations: usize,
}

fn contact_samples(fx: &SuiteFixture, per_axis: usize) -> Vec<(Vec<f64>, f64, Vec<f64>, f64)> {
    let (lo, hi) = fx.region.bounds();
    let mut out = Vec::new();
    for i in 0..per_axis {
        for j in 0..per_axis {
            let t = |k: usize, m: usize| lo[k] + (m as f64 + 0.5) / per_axis as f64 * (hi[k] - lo[k]);
            let x = vec![t(0, i), t(1, j)];
            if !fx.region.contains([x[0], x[1]], 0.0) {
                continue;
            }
            let u = fx.u.value(&x);
            if let Ok(m) = mate_coefficients(&fx.gf, &x, u, &fx.u.gradient(&x)) {
                out.push((m.contact.y, m.contact.z, x, u));
            }
        }
    }
    out
}

fn convex_for_pairs<'a>(
    gf: &GeneratingFunction,
    region: &Polygon,
    pairs: impl Iterator<Item = (&'a Vec<f64>, f64)>,
    resolution: usize,
) -> Verdict {
    let ok =
        pairs.into_iter().all(|(y, z)| is_g_convex_set(gf, region, std::slice::from_ref(y), &[z], resolution).verdict.passed());
    Verdict::from_bool(ok)
}

/// Image of the region boundary under the contact map, as a polygon in y.
fn dual_region(fx: &SuiteFixture, per_edge: usize) -> Option<Polygon> {
    let mut ys = Vec::new();
    for (a, b) in fx.region.edges() {
        for k in 0..per_edge {
            let t = k as f64 / per_edge as f64;
            let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            let m = mate_coefficients(&fx.gf, &x, fx.u.value(&x), &fx.u.gradient(&x)).ok()?;
            ys.push([m.contact.y[0], m.contact.y[1]]);
        }
    }
    // roundoff can leave a collinear image with a tiny positive area
    let p = Polygon::new(ys).ok()?;
    let (lo, hi) = p.bounds();
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    (p.area() > 1e-6 * extent * extent).then_some(p)
}

fn quadrants(region: &Polygon) -> Vec<Polygon> {
    let (lo, hi) = region.bounds();
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let mut out = vec![region.clone()];
    for (a, b) in [(lo, mid), ([mid[0], lo[1]], [hi[0], mid[1]]), (mid, hi), ([lo[0], mid[1]], [mid[0], hi[1]])] {
        out.extend(region.clip_rect(a, b));
    }
    out
}

pub fn run_fixture(fx: &SuiteFixture, settings: &SuiteSettings) -> Result<SuiteRow> {
    let (lo, hi) = fx.region.bounds();
    let cells = Grid2::uniform(lo, hi, [settings.quadrature_cells, settings.quadrature_cells])?;
    let reports =
        quadrants(&fx.region).iter().map(|r| gma_measure_smooth(&fx.gf, &fx.u, r, &cells)).collect::<Result<Vec<_>>>()?;
    let bounds = alexandrov_verdict(&reports, fx.c, fx.upper_c);
    let scan = scan_conditions(&fx.gf, &settings.scan);

    let contacts = contact_samples(fx, settings.contact_samples);
    let domain_convex = if contacts.is_empty() {
        Verdict::Fail
    } else {
        convex_for_pairs(&fx.gf, &fx.region, contacts.iter().map(|c| (&c.0, c.1)), settings.segment_resolution)
    };
    let dual_convex = match (dual_region(fx, 2), dual_generating_function(&fx.gf)) {
        (Some(omega_star), Ok(dual_gf)) if !contacts.is_empty() => {
            convex_for_pairs(&dual_gf, &omega_star, contacts.iter().map(|c| (&c.2, c.3)), settings.segment_resolution)
        }
        _ => Verdict::Fail,
    };

    let touch = fx.touch.to_vec();
    let support = mate_coefficients(&fx.gf, &touch, fx.u.value(&touch), &fx.u.gradient(&touch)).map(|m| m.contact);
    let ends = |s: f64| [fx.touch[0] + s * fx.half_length * fx.direction[0], fx.touch[1] + s * fx.half_length * fx.direction[1]];
    let probe =
        support.and_then(|c| strict_convexity_probe(&fx.gf, &fx.u, (&c.y, c.z), &ends(-1.0), &ends(1.0), &settings.probe));
    let sampling = DualSampling::new(lo, hi, settings.x_cells, settings.dual_cells);
    let c1 = c1_check(&fx.gf, &fx.u, &sampling, None);

    let mut failed = Vec::new();
    let mut note = |v: Verdict, name: &str| {
        if !v.passed() {
            failed.push(name.to_string());
        }
    };
    note(bounds.lower, "lower-bound");
    note(bounds.upper, "upper-bound");
    note(scan.a3w, "A3w");
    note(scan.a4w, "A4w");
    note(domain_convex, "domain-convex");
    note(dual_convex, "dual-domain");

    let probe_verdict = probe.as_ref().ok().map(|r| r.verdict);
    let strict_premises = [bounds.lower, scan.a3w, scan.a4w, domain_convex].iter().all(|v| v.passed());
    let strict_implication = match (strict_premises, probe_verdict) {
        (false, _) => Implication::Vacuous,
        (true, Some(ProbeVerdict::Strict)) => Implication::Holds,
        (true, _) => Implication::Violated,
    };
    let c1_verdict = c1.as_ref().ok().map(|r| r.verdict);
    let c1_implication = match (bounds.upper.passed() && dual_convex.passed(), c1_verdict) {
        (false, _) => Implication::Vacuous,
        (true, Some(C1Verdict::C1Plausible)) => Implication::Holds,
        (true, _) => Implication::Violated,
    };

    Ok(SuiteRow {
        fixture: fx.name.clone(),
        family: fx.gf.name().to_string(),
        lower_bound: bounds.lower,
        upper_bound: bounds.upper,
        a3w: scan.a3w,
        a4w: scan.a4w,
        domain_convex,
        dual_convex,
        probe: probe_verdict,
        probe_h: probe.as_ref().ok().map(|r| r.h_inf),
        probe_error: probe.err().map(|e| e.to_string()),
        c1: c1_verdict,
        c1_error: c1.err().map(|e| e.to_string()),
        strict_implication,
        c1_implication,
        failed_hypotheses: failed,
    })
}

/// Runs every fixture; setup errors become rows with all verdicts failed.
pub fn theorem_consistency_suite(fixtures: &[SuiteFixture], settings: &SuiteSettings) -> SuiteSummary {
    let rows: Vec<SuiteRow> = fixtures
        .iter()
        .map(|fx| {
            run_fixture(fx, settings).unwrap_or_else(|e| SuiteRow {
                fixture: fx.name.clone(),
                family: fx.gf.name().to_string(),
                lower_bound: Verdict::Fail,
                upper_bound: Verdict::Fail,
                a3w: Verdict::Fail,
                a4w: Verdict::Fail,
                domain_convex: Verdict::Fail,
                dual_convex: Verdict::Fail,
                probe: None,
                probe_h: None,
                probe_error: Some(e.to_string()),
                c1: None,
                c1_error: None,
                strict_implication: Implication::Vacuous,
                c1_implication: Implication::Vacuous,
                failed_hypotheses: vec!["setup".into()],
            })
        })
        .collect();
    let violations = rows
        .iter()
        .filter(|r| r.strict_implication == Implication::Violated || r.c1_implication == Implication::Violated)
        .count();
    SuiteSummary { rows, violations }
}

fn fixture(
    name: &str,
    family: &str,
    f: impl Fn(&[f64]) -> f64,
    (c, upper_c): (f64, f64),
    touch: [f64; 2],
    direction: [f64; 2],
    cells: usize,
) -> Result<SuiteFixture> {
    let gf = GeneratingFunction::builtin(family, &[])?;
    let grid = Grid2::uniform([-1.0, -1.0], [1.0, 1.0], [cells, cells])?;
    Ok(SuiteFixture {
        name: name.into(),
        u: GridPotential::from_fn(grid, f)?,
        gf,
        region: Polygon::rectangle([-0.5, -0.5], [0.5, 0.5])?,
        c,
        upper_c,
        touch,
        direction,
        half_length: 0.4,
    })
}

/// The built-in fixtures on `[-1, 1]^2` with region `[-1/2, 1/2]^2`.
pub fn standard_fixtures(cells: usize) -> Result<Vec<SuiteFixture>> {
    let o = [0.0, 0.0];
    let e1 = [1.0, 0.0];
    let e2 = [0.0, 1.0];
    let log_centre = [2.5, 0.0];
    Ok(vec![
        fixture("bilinear-quadratic", "bilinear", |x| 0.5 * (x[0] * x[0] + x[1] * x[1]), (0.5, 2.0), o, e1, cells)?,
        fixture("bilinear-steep", "bilinear", |x| x[0] * x[0] + x[1] * x[1], (1.0, 5.0), o, [0.6, 0.8], cells)?,
        fixture("bilinear-kink", "bilinear", |x| x[0].abs(), (0.5, 2.0), o, e2, cells)?,
        fixture("bilinear-flat", "bilinear", |x| 0.5 * x[0] * x[0], (0.5, 2.0), o, e2, cells)?,
        fixture("quad-cost-quadratic", "quad-cost", |x| 0.5 * (x[0] * x[0] + x[1] * x[1]), (1.0, 5.0), o, e1, cells)?,
        fixture("quad-cost-anisotropic", "quad-cost", |x| 0.5 * x[0] * x[0] + x[1] * x[1], (1.0, 8.0), o, e1, cells)?,
        fixture(
            "log-cost-perturbed",
            "log-cost",
            move |x| -((x[0] - log_centre[0]).hypot(x[1] - log_centre[1])).ln() + 0.05 * (x[0] * x[0] + x[1] * x[1]),
            (0.1, 5.0),
            o,
            e2,
            cells,
        )?,
    ])
}
