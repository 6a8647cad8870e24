//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints one PASS/FAIL line; exits non-zero on any failure.

use std::time::Instant;

use gje_core::conditions::{scan_conditions, ScanSpec};
use gje_core::duality::{dual_g, solve_yz, NewtonOptions};
use gje_core::height::{check_diffint, check_diffseg_bounds, check_hypothesis, height_trace};
use gje_core::linalg::{dot, linspace, max_abs};
use gje_core::mate::{check_e_is_dpy, dy_from_hessian, mate_coefficients};
use gje_core::measure::{gma_measure_nonsmooth, gma_measure_smooth, DualSampling};
use gje_core::polygon::Polygon;
use gje_core::potential::{AnalyticPotential, Grid2, GridPotential, Potential};
use gje_core::probe::{
    c1_check, standard_fixtures, strict_convexity_probe, theorem_consistency_suite, C1Verdict, ProbeOptions, ProbeVerdict,
    SuiteSettings,
};
use gje_core::report::{to_json_string, Verdict};
use gje_core::segments::g_segment;
use gje_core::GeneratingFunction;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn families() -> Vec<GeneratingFunction> {
    [("bilinear", vec![]), ("quad-cost", vec![]), ("log-cost", vec![]), ("sqrt-cost", vec![]), ("perturbed-bilinear", vec![0.1])]
        .into_iter()
        .map(|(name, params)| GeneratingFunction::builtin(name, &params).unwrap())
        .collect()
}

fn builtin(name: &str) -> GeneratingFunction {
    GeneratingFunction::builtin(name, &[]).unwrap()
}

/// Uniform in the middle 80% of `[lo, hi]`.
fn inner(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (0.1 + 0.8 * rng.gen::<f64>()) * (hi - lo)
}

fn sample_xyz(gf: &GeneratingFunction, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, f64) {
    let d = gf.domain();
    let x: Vec<f64> = (0..gf.dim()).map(|i| inner(rng, d.x_lo[i], d.x_hi[i])).collect();
    let y: Vec<f64> = (0..gf.dim()).map(|i| inner(rng, d.y_lo[i], d.y_hi[i])).collect();
    let (lo, hi) = gf.z_interval(&x, &y);
    let z = inner(rng, lo, hi);
    (x, y, z)
}

fn unit_square() -> Polygon {
    Polygon::rectangle([-0.5, -0.5], [0.5, 0.5]).unwrap()
}

fn grid(cells: usize) -> Grid2 {
    Grid2::uniform([-1.0, -1.0], [1.0, 1.0], [cells, cells]).unwrap()
}

fn duality_involution() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, 0.0f64);
    for gf in families() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (x, y, z) = sample_xyz(&gf, &mut rng);
            let back = dual_g(&gf, &x, &y, gf.value(&x, &y, z)).map_err(|e| format!("{}: {e}", gf.name()))?;
            worst.0 = worst.0.max((back - z).abs());
            let (lo, hi) = gf.z_interval(&x, &y);
            let u = inner(&mut rng, gf.value(&x, &y, hi), gf.value(&x, &y, lo));
            let z = dual_g(&gf, &x, &y, u).map_err(|e| format!("{}: {e}", gf.name()))?;
            worst.1 = worst.1.max((gf.value(&x, &y, z) - u).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst.0 < 1e-10 && worst.1 < 1e-10, || format!("max errors {:.2e}, {:.2e}", worst.0, worst.1))?;
    ensure(secs < 5.0, || format!("took {secs:.1} s"))?;
    Ok(format!("5 families x 1000 samples, max |g*(g) - z| = {:.1e}, max |g(g*) - u| = {:.1e}, {secs:.2} s", worst.0, worst.1))
}

fn contact_closed_forms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let opts = NewtonOptions::default();
    let (bil, quad) = (builtin("bilinear"), builtin("quad-cost"));
    let (mut e_bil, mut e_quad) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let p = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let u = rng.gen_range(-1.0..1.0);
        let c = solve_yz(&bil, &x, u, &p, None, &opts).map_err(|e| e.to_string())?;
        e_bil = e_bil.max((c.y[0] - p[0]).abs()).max((c.y[1] - p[1]).abs()).max((c.z - (dot(&x, &p) - u)).abs());
        let c = solve_yz(&quad, &x, u, &p, None, &opts).map_err(|e| e.to_string())?;
        e_quad = e_quad.max((c.y[0] - x[0] - p[0]).abs()).max((c.y[1] - x[1] - p[1]).abs());
    }
    ensure(e_bil < 1e-12 && e_quad < 1e-10, || format!("bilinear {e_bil:.2e}, quad-cost {e_quad:.2e}"))?;
    Ok(format!("1000 samples, bilinear Y,Z error {e_bil:.1e}, quad-cost Y error {e_quad:.1e}"))
}

/// `-log|x - (2.5, 0)| + 0.02|x|^2`: g-convex for the log cost, with Y inside its
/// y-box over all of `[-1, 1]^2`.
fn log_potential(cells: usize) -> GridPotential {
    GridPotential::from_fn(grid(cells), |x| -(x[0] - 2.5).hypot(x[1]).ln() + 0.02 * (x[0] * x[0] + x[1] * x[1])).unwrap()
}

fn contact_y(gf: &GeneratingFunction, u: &dyn Potential, x: &[f64]) -> Result<Vec<f64>, String> {
    mate_coefficients(gf, x, u.value(x), &u.gradient(x)).map(|c| c.contact.y).map_err(|e| e.to_string())
}

fn dy_identity() -> Outcome {
    let gf = builtin("log-cost");
    let u = log_potential(64);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut points = 0;
    for i in (2..=62).step_by(4) {
        for j in (2..=62).step_by(4) {
            let x = [u.grid().xs[i], u.grid().ys[j]];
            let dy = dy_from_hessian(&gf, &x, u.value(&x), &u.gradient(&x), &u.hessian(&x)).map_err(|e| e.to_string())?.dy;
            let mut fd = DMatrix::zeros(2, 2);
            for k in 0..2 {
                let (mut xp, mut xm) = (x, x);
                xp[k] += h;
                xm[k] -= h;
                let (yp, ym) = (contact_y(&gf, &u, &xp)?, contact_y(&gf, &u, &xm)?);
                for r in 0..2 {
                    fd[(r, k)] = (yp[r] - ym[r]) / (2.0 * h);
                }
            }
            worst = worst.max(max_abs(&(&fd - &dy)) / max_abs(&dy));
            points += 1;
        }
    }
    ensure(worst < 1e-3, || format!("DY relative error {worst:.2e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut e_gap = 0.0f64;
    for _ in 0..200 {
        let (x, y, z) = sample_xyz(&gf, &mut rng);
        let jet = gf.jet(&x, &y, z, 1).map_err(|e| e.to_string())?;
        e_gap = e_gap.max(check_e_is_dpy(&gf, &x, jet.value(), &jet.g_x()).map_err(|e| e.to_string())?);
    }
    ensure(e_gap < 1e-5, || format!("|E^-1 - D_pY| = {e_gap:.2e}"))?;
    Ok(format!(
        "log-cost on 65x65 grid: DY relative error {worst:.1e} at {points} nodes, |E^-1 - D_pY| {e_gap:.1e} on 200 samples"
    ))
}

struct HeightFixture {
    gf: GeneratingFunction,
    u: GridPotential,
    touch: [f64; 2],
    dir: [f64; 2],
}

fn height_fixtures() -> Vec<HeightFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut out = Vec::new();
    for family in ["bilinear", "quad-cost"] {
        for k in 0..10 {
            let (a, b) = (rng.gen_range(1.0..2.0), rng.gen_range(1.0..2.0));
            let off = rng.gen_range(-0.3..0.3);
            let c = rng.gen_range(-0.5..0.5);
            let smooth = k >= 6;
            let f = move |x: &[f64]| {
                let base =
                    0.5 * (a * x[0] * x[0] + b * x[1] * x[1]) + off * x[0] * x[1] + c * (x[0].powi(3) + x[1].powi(3)) / 6.0;
                if smooth {
                    base + 0.1 * (x[0] + x[1]).exp()
                } else {
                    base
                }
            };
            let angle = rng.gen_range(0.0..std::f64::consts::PI);
            out.push(HeightFixture {
                gf: builtin(family),
                u: GridPotential::from_fn(grid(64), f).unwrap(),
                touch: [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)],
                dir: [angle.cos(), angle.sin()],
            });
        }
    }
    out
}

fn fixture_trace(fx: &HeightFixture) -> Result<gje_core::height::HeightTrace, String> {
    let t = fx.touch.to_vec();
    let c = mate_coefficients(&fx.gf, &t, fx.u.value(&t), &fx.u.gradient(&t)).map_err(|e| e.to_string())?.contact;
    let l = 0.5;
    let a = [fx.touch[0] - l * fx.dir[0], fx.touch[1] - l * fx.dir[1]];
    let b = [fx.touch[0] + l * fx.dir[0], fx.touch[1] + l * fx.dir[1]];
    let seg = g_segment(&fx.gf, &a, &b, &c.y, c.z, 129).map_err(|e| e.to_string())?;
    height_trace(&fx.gf, &fx.u, &seg, 0.0).map_err(|e| e.to_string())
}

fn lemma_validity() -> Outcome {
    let (mut total, mut good) = (0usize, 0usize);
    let mut worst = f64::NEG_INFINITY;
    for fx in &height_fixtures() {
        let trace = fixture_trace(fx)?;
        let n = trace.samples.len();
        for s in &trace.samples[1..n - 1] {
            let rhs = s.rhs_lower.ok_or_else(|| format!("missing bound: {:?}", s.error))?;
            total += 1;
            worst = worst.max(rhs - s.h_second);
            if s.h_second >= rhs - 1e-4 {
                good += 1;
            }
        }
    }
    // the fixtures are smooth, so no sample is excluded near a kink
    ensure(good == total, || format!("{good}/{total} samples satisfy the bound, worst gap {worst:.2e}"))?;
    Ok(format!("20 triples, {good}/{total} interior samples with h'' >= bound - 1e-4, worst gap {worst:.1e}"))
}

fn sandwich() -> Outcome {
    // the exponentials meet the exponential inequality with equality, so they
    // get the finer sampling to keep the derivative error below 1e-8
    let fine = linspace(0.0, 1.0, 257);
    let profile = |f: fn(f64) -> f64| fine.iter().map(|&t| f(t)).collect::<Vec<_>>();
    let mut cases: Vec<(String, Vec<f64>, Vec<f64>, f64)> = vec![
        ("exp K=1".into(), fine.clone(), profile(|t| -(-t).exp()), 1.0),
        ("exp K=3".into(), fine.clone(), profile(|t| -(-3.0 * t).exp() / 3.0), 3.0),
        ("parabola".into(), fine.clone(), profile(|t| t * t - t), 0.0),
        ("cubic".into(), fine.clone(), profile(|t| (t - 0.3).powi(3) + 2.0 * (t - 0.3).powi(2)), 0.0),
        ("cosh".into(), fine.clone(), profile(|t| (2.0 * t).cosh() - 3.0 * t), 0.5),
    ];
    for (k, fx) in height_fixtures().iter().step_by(4).enumerate() {
        let trace = fixture_trace(fx)?;
        cases.push((format!("height trace {k}"), trace.thetas(), trace.h(), trace.k_lemma.max(0.25)));
    }
    let mut checked = 0;
    for (name, thetas, h, k) in &cases {
        check_hypothesis(thetas, h, *k, gje_core::height::HYPOTHESIS_TOL).map_err(|e| format!("{name}: {e}"))?;
        for &t in &thetas[1..thetas.len() - 1] {
            let b = check_diffseg_bounds(thetas, h, *k, t).map_err(|e| format!("{name}: {e}"))?;
            ensure(b.holds, || format!("{name}: {:?}", b))?;
            checked += 1;
        }
        let gap = check_diffint(thetas, h, *k).map_err(|e| format!("{name}: {e}"))?;
        ensure(gap <= 1e-8, || format!("{name}: exponential inequality violated by {gap:.2e}"))?;
    }
    Ok(format!("{} fixtures, sandwich holds at {checked} interior points, exponential inequality holds pairwise", cases.len()))
}

fn condition_scans() -> Outcome {
    let mut parts = Vec::new();
    for name in ["bilinear", "quad-cost"] {
        let start = Instant::now();
        let r = scan_conditions(&builtin(name), &ScanSpec::default());
        let secs = start.elapsed().as_secs_f64();
        let pairs = r.pairs_per_point;
        ensure(r.points_sampled >= 1000 && pairs >= 20, || format!("{name}: {} points x {pairs} pairs", r.points_sampled))?;
        ensure(r.worst_a3w.abs() <= 1e-6 && r.worst_a4w.abs() <= 1e-6, || {
            format!("{name}: worst A3w {:.2e}, A4w {:.2e}", r.worst_a3w, r.worst_a4w)
        })?;
        ensure(secs < 30.0, || format!("{name}: took {secs:.1} s"))?;
        parts.push(format!("{name} {}x{pairs} worst ({:.0e}, {:.0e}) {secs:.1} s", r.points_sampled, r.worst_a3w, r.worst_a4w));
    }
    Ok(parts.join("; "))
}

fn measure_correctness() -> Outcome {
    let gf = builtin("bilinear");
    let region = unit_square();
    let s = DualSampling::new([-1.0, -1.0], [1.0, 1.0], 64, 256);
    let mut parts = Vec::new();
    for a in [0.5, 1.0, 2.0] {
        let u = AnalyticPotential::scaled_quadratic(2, a);
        let smooth = gma_measure_smooth(&gf, &u, &region, &grid(32)).map_err(|e| e.to_string())?;
        let counted = gma_measure_nonsmooth(&gf, &u, &region, &s).map_err(|e| e.to_string())?;
        let (es, ec) = ((smooth.ratio / (a * a) - 1.0).abs(), (counted.ratio / (a * a) - 1.0).abs());
        ensure(es < 0.02 && ec < 0.05, || format!("a = {a}: smooth error {es:.3}, box counting error {ec:.3}"))?;
        parts.push(format!("a={a}: {es:.0e}/{ec:.3}"));
    }
    let band = Polygon::rectangle([-0.1, -1.0], [0.1, 1.0]).unwrap();
    let kink = gma_measure_nonsmooth(&gf, &AnalyticPotential::abs_first(2), &band, &s).map_err(|e| e.to_string())?;
    let coarse = kink.coarse_mu.unwrap_or(f64::INFINITY);
    ensure(kink.ratio < 0.05 && kink.mu < coarse, || {
        format!("|x1| band ratio {:.3}, mu {} vs coarse {}", kink.ratio, kink.mu, coarse)
    })?;
    parts.push(format!("|x1| band ratio {:.4} (coarse {:.4})", kink.ratio, coarse / kink.region_area));
    Ok(parts.join(", "))
}

fn probe_end_to_end() -> Outcome {
    let start = Instant::now();
    let gf = builtin("bilinear");
    let opts = ProbeOptions { c: Some(1.0), ..ProbeOptions::default() };
    let u = GridPotential::from_fn(grid(64), |x| 0.5 * (x[0] * x[0] + x[1] * x[1])).unwrap();
    let r = strict_convexity_probe(&gf, &u, (&[0.0, 0.0], 0.0), &[-0.5, 0.0], &[0.5, 0.0], &opts).map_err(|e| e.to_string())?;
    ensure(
        r.h_inf > 0.0 && r.implied_h_lower > 0.0 && r.h_inf >= r.implied_h_lower && r.verdict == ProbeVerdict::Strict,
        || format!("quadratic: H {}, implied {}, {:?}", r.h_inf, r.implied_h_lower, r.verdict),
    )?;
    ensure(r.cofactor_violations == 0 && r.jensen_bound <= r.integral_i, || "cofactor or Jensen direction failed".into())?;
    let flat = GridPotential::from_fn(grid(64), |x| 0.5 * x[0] * x[0]).unwrap();
    let d = strict_convexity_probe(&gf, &flat, (&[0.0, 0.0], 0.0), &[0.0, -0.5], &[0.0, 0.5], &ProbeOptions::default())
        .map_err(|e| e.to_string())?;
    ensure(d.h_inf < 1e-8 && d.verdict == ProbeVerdict::Degenerate, || format!("flat: H {}, {:?}", d.h_inf, d.verdict))?;
    ensure(d.cofactor_violations == 0, || "cofactor inequality failed on the flat fixture".into())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "H = {:.4}, implied lower {:.2e}, STRICT; flat H = {:.1e}, DEGENERATE; {} elliptic samples, 0 cofactor violations; {secs:.1} s",
        r.h_inf, r.implied_h_lower, d.h_inf, r.elliptic_samples
    ))
}

fn c1_checks() -> Outcome {
    let gf = builtin("bilinear");
    let s = DualSampling::new([-1.0, -1.0], [1.0, 1.0], 64, 128);
    let smooth = GridPotential::from_fn(grid(128), |x| 0.5 * (x[0] * x[0] + x[1] * x[1])).unwrap();
    let r = c1_check(&gf, &smooth, &s, None).map_err(|e| e.to_string())?;
    ensure(r.verdict == C1Verdict::C1Plausible && r.witness_count == 0, || format!("|x|^2/2: {} witnesses", r.witness_count))?;
    let kink = GridPotential::from_fn(grid(128), |x| x[0].abs()).unwrap();
    let k = c1_check(&gf, &kink, &s, None).map_err(|e| e.to_string())?;
    let widest = k.witnesses.first().map_or(0.0, |w| w.diameter);
    ensure(k.verdict == C1Verdict::NotC1 && widest > 0.4, || format!("|x1|: {:?}, widest {widest}", k.verdict))?;
    Ok(format!("|x|^2/2 C1_PLAUSIBLE; |x1| NOT_C1 with {} witnesses, widest {widest:.2}", k.witness_count))
}

fn consistency_suite() -> Outcome {
    let start = Instant::now();
    let fixtures = standard_fixtures(32).map_err(|e| e.to_string())?;
    let summary = theorem_consistency_suite(&fixtures, &SuiteSettings::default());
    let secs = start.elapsed().as_secs_f64();
    let families: std::collections::BTreeSet<&str> = summary.rows.iter().map(|r| r.family.as_str()).collect();
    ensure(summary.rows.len() >= 6 && families.len() >= 3, || format!("{} fixtures over {families:?}", summary.rows.len()))?;
    ensure(summary.violations == 0, || format!("{} violations", summary.violations))?;
    for r in &summary.rows {
        let verdicts = [
            (r.lower_bound, "lower-bound"),
            (r.upper_bound, "upper-bound"),
            (r.a3w, "A3w"),
            (r.a4w, "A4w"),
            (r.domain_convex, "domain-convex"),
            (r.dual_convex, "dual-domain"),
        ];
        for (v, name) in verdicts {
            ensure(v == Verdict::Pass || r.failed_hypotheses.iter().any(|h| h == name), || {
                format!("{}: {name} failed but is not named", r.fixture)
            })?;
        }
    }
    ensure(secs < 300.0, || format!("took {secs:.1} s"))?;
    let failed = summary.rows.iter().filter(|r| !r.failed_hypotheses.is_empty()).count();
    Ok(format!(
        "{} fixtures over {} families, 0 violations, {failed} rows with named failed hypotheses, {secs:.1} s",
        summary.rows.len(),
        families.len()
    ))
}

fn determinism() -> Outcome {
    let run = || -> Result<String, String> {
        let fixtures = standard_fixtures(32).map_err(|e| e.to_string())?;
        to_json_string(&theorem_consistency_suite(&fixtures, &SuiteSettings::default())).map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    ensure(a == b, || "suite reports differ between runs".into())?;
    Ok(format!("two suite runs give identical {}-byte JSON", a.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("duality involution", duality_involution),
        ("contact closed forms", contact_closed_forms),
        ("DY identity", dy_identity),
        ("height lemma validity", lemma_validity),
        ("derivative sandwich", sandwich),
        ("A3w/A4w scans", condition_scans),
        ("measure correctness", measure_correctness),
        ("probe end to end", probe_end_to_end),
        ("C1 check", c1_checks),
        ("consistency suite", consistency_suite),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", k + 1),
            Err(why) => {
                failures += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
