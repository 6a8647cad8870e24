//! One function per subcommand, each turning a loaded config into an [`Outcome`].

use gje_core::conditions::{scan_conditions, ScanSpec};
use gje_core::duality::{g_star_transform, ContactState};
use gje_core::genfun::{validate_assumptions, SamplingSpec};
use gje_core::height::height_trace;
use gje_core::mate::{dy_from_hessian, mate_coefficients, MateCoefficients};
use gje_core::measure::{alexandrov_verdict, gma_measure_nonsmooth, gma_measure_smooth, DualSampling};
use gje_core::polygon::Polygon;
use gje_core::potential::{Grid2, Potential};
use gje_core::probe::{
    c1_check, standard_fixtures, strict_convexity_probe, theorem_consistency_suite, C1Verdict, ProbeOptions, ProbeVerdict,
    SuiteSettings,
};
use gje_core::segments::{g_segment, is_g_convex_set};
use gje_core::GeneratingFunction;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{LoadedConfig, MeasureMethodConfig, SamplingConfig, SupportConfig};
use crate::output::{Outcome, Status, Table};
use crate::{CliError, Command};

pub fn run(command: &Command, cfg: &LoadedConfig) -> Result<Outcome, CliError> {
    match command {
        Command::Validate(_) => validate(cfg),
        Command::CheckConditions(_) => check_conditions(cfg),
        Command::Segment(_) => segment(cfg),
        Command::Transform(_) => transform(cfg),
        Command::Mate(_) => mate(cfg),
        Command::Height(_) => height(cfg),
        Command::Measure(_) => measure(cfg),
        Command::Probe(_) => probe(cfg),
        Command::C1(_) => c1(cfg),
        Command::Suite(_) => suite(cfg),
    }
}

fn task<'a, T>(t: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    t.as_ref().ok_or_else(|| CliError::Config(format!("missing [{name}] table")))
}

fn point2(v: &[f64], field: &str) -> Result<[f64; 2], CliError> {
    match v {
        [a, b] => Ok([*a, *b]),
        _ => Err(CliError::Config(format!("`{field}` must have 2 entries, got {}", v.len()))),
    }
}

fn validate(cfg: &LoadedConfig) -> Result<Outcome, CliError> {
    let gf = cfg.generating_function()?;
    let mut spec = SamplingSpec::uniform(5);
    spec.seed = cfg.config.seed;
    if let Some(t) = &cfg.config.validate {
        spec = SamplingSpec { seed: spec.seed, ..SamplingSpec::uniform(t.resolution) };
        spec.a1_points = t.a1_points.unwrap_or(spec.a1_points);
        spec.a1_starts = t.a1_starts.unwrap_or(spec.a1_starts);
    }
    // Grid potentials and referenced files are part of validating the config.
    if cfg.config.potential.is_some() {
        cfg.potential(&gf)?;
    }
    let report = validate_assumptions(&gf, &spec);
    let status = Status::pass_fail(report.pass);
    Outcome::new(&report, Some(status))
}

fn check_conditions(cfg: &LoadedConfig) -> Result<Outcome, CliError> {
    let gf = cfg.generating_function()?;
    let mut spec = ScanSpec { seed: cfg.config.seed, ..ScanSpec::default() };
    if let Some(t) = &cfg.config.check_conditions {
        spec.x_res = t.x_res.unwrap_or(spec.x_res);
        spec.y_res = t.y_res.unwrap_or(spec.y_res);
        spec.z_res = t.z_res.unwrap_or(spec.z_res);
        spec.random_pairs = t.random_pairs.unwrap_or(spec.random_pairs);
        spec.tolerance = t.tolerance.unwrap_or(spec.tolerance);
    }
    let report = scan_conditions(&gf, &spec);
    let status = Status::pass_fail(report.a3w.passed() && report.a4w.passed());
    Outcome::new(&report, Some(status))
}

fn segment(cfg: &LoadedConfig) -> Result<Outcome, CliError> {
    let gf = cfg.generating_function()?;
    let t = task(&cfg.config.segment, "segment")?;
    let seg = g_segment(&gf, &t.x0, &t.x1, &t.y, t.z, t.resolution)?;
    let mut trace = Table::new("trace", &["theta", "x1", "x2", "xdot1", "xdot2", "residual"]);
    if gf.dim() == 2 {
        for s in &seg.samples {
            trace.push(vec![s.theta, s.x[0], s.x[1], s.xdot[0], s.xdot[1], s.residual]);
        }
    }
    let convexity = match &t.convexity {
        Some(c) => Some(is_g_convex_set(&gf, &Polygon::new(c.region.clone())?, &c.y_set, &c.z_set, c.resolution)),
        None => None,
    };
    #[derive(Serialize)]
    struct Report<'a> {
        segment: &'a gje_core::segments::GSegment,
        max_residual: f64,
        min_speed: f64,
        convexity: Option<gje_core::segments::ConvexityReport>,
    }
    let status = convexity.as_ref().map(|c| Status::pass_fail(c.verdict.passed()));
    let report = Report { segment: &seg, max_residual: seg.max_residual(), min_speed: seg.min_speed(), convexity };
    Ok(Outcome::new(&report, status)?.with_table(trace))
}

fn transform(cfg: &LoadedConfig) -> Result<Outcome, CliError> {
    let gf = cfg.generating_function()?;
    let t = task(&cfg.config.transform, "transform")?;
    let u = cfg.grid_potential(&gf)?;
    let y_grid = t.y_grid.build()?;
    let tr = g_star_transform(&gf, &u, &y_grid)?;
    let mut table = Table::new("values", &["y1", "y2", "value", "contacts"]);
    for k in 0..y_grid.len() {
        let y = y_grid.node(k);
        table.push(vec![y[0], y[1], tr.values()[k], tr.result.argmax[k].len() as f64]);
    }
    #[derive(Serialize)]
    struct Report<'a> {
        y_grid: &'a Grid2,
        x_grid: &'a Grid2,
        transform: &'a gje_core::duality::SampledTransform,
    }
    let report = Report { y_grid: &tr.y_grid, x_grid: &tr.x_grid, transform: &tr.result };
    Ok(Outcome::new(&report, None)?.with_table(table))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Serialize)]
struct MateEntry {
    x: Vec<f64>,
    u: f64,
    p: Vec<f64>,
    contact: Option<ContactState>,
    e: Option<Vec<Vec<f64>>>,
    det_e: Option<f64>,
    a: Option<Vec<Vec<f64>>>,
    dy: Option<Vec<Vec<f64>>>,
    det_dy: Option<f64>,
    error: Option<String>,
}

impl MateEntry {
    fn empty(x: &[f64], u: f64, p: &[f64]) -> Self {
        MateEntry {
            x: x.to_vec(),
            u,
            p: p.to_vec(),
            contact: None,
            e: None,
            det_e: None,
            a: None,
            dy: None,
            det_dy: None,
            error: None,
        }
    }

    fn fill(&mut self, m: MateCoefficients) {
        self.e = Some(to_rows(&m.e));
        self.a = Some(to_rows(&m.a));
        self.det_e = Some(m.det_e);
        self.contact = Some(m.contact);
    }
}

fn mate(cfg: &LoadedConfig) -> Result<Outcome, CliError> {
    let gf = cfg.generating_function()?;
    let t = task(&cfg.config.mate, "mate")?;
    let mut entries = Vec::new();
    if !t.points.is_empty() {
        let u = cfg.potential(&gf)?;
        for x in &t.points {
            let (v, p) = (u.value(x), u.gradient(x));
            let mut e = MateEntry::empty(x, v, &p);
            match dy_from_hessian(&gf, x, v, &p, &u.hessian(x)) {
                Ok(d) => {
                    e.dy = Some(to_rows(&d.dy));
                    e.det_dy = Some(d.det);
                    e.fill(d.coefficients);
                }
                Err(err) => e.error = Some(err.to_string()),
            }
            entries.push(e);
        }
    }
    for s in &t.states {
        let mut e = MateEntry::empty(&s.x, s.u, &s.p);
        match mate_coefficients(&gf, &s.x, s.u, &s.p) {
            Ok(m) => e.fill(m),
            Err(err) => e.error = Some(err.to_string()),
        }
        entries.push(e);
    }
    Outcome::new(&entries, None)
}

fn support(
    gf: &GeneratingFunction,
    u: &dyn Potential,
    given: &Option<SupportConfig>,
    touch: &Option<Vec<f64>>,
) -> Result<(Vec<f64>, f64), CliError> {
    match (given, touch) {
        (Some(s), None) => Ok((s.y.clone(), s.z)),
        (None, Some(x)) => {
            let m = mate_coefficients(gf, x, u.value(x), &u.gradient(x))?;
            Ok((m.contact.y, m.contact.z))
        }
        _ => Err(CliError::Config("give exactly one of `support` and `touch`".into())),
    }
}

fn height(cfg: &LoadedConfig) -> Result<Outcome, CliError> {
    let gf = cfg.generating_function()?;
    let t = task(&cfg.config.height, "height")?;
    let u = cfg.potential(&gf)?;
    let (y, z) = support(&gf, u.as_ref(), &t.support, &t.touch)?;
    let seg = g_segment(&gf, &t.x0, &t.x1, &y, z, t.resolution)?;
    let trace = height_trace(&gf, u.as_ref(), &seg, t.sigma)?;
    let mut table = Table::new("trace", &["theta", "h", "h_prime", "h_second", "rhs_lower"]);
    for s in &trace.samples {
        table.push(vec![s.theta, s.h, s.h_prime, s.h_second, s.rhs_lower.unwrap_or(f64::NAN)]);
    }
    let worst = trace.worst_violation();
    #[derive(Serialize)]
    struct Report<'a> {
        trace: &'a gje_core::height::HeightTrace,
        worst_violation: f64,
        failed_samples: usize,
        tolerance: f64,
    }
    let passed = worst <= t.tolerance && trace.failed_samples() == 0;
    let report = Report { trace: &trace, worst_violation: worst, failed_samples: trace.failed_samples(), tolerance: t.tolerance };
    Ok(Outcome::new(&report, Some(Status::pass_fail(passed)))?.with_table(table))
}

fn dual_sampling(s: &Option<SamplingConfig>, default_box: ([f64; 2], [f64; 2])) -> DualSampling {
    let d = SamplingConfig {
        x_lo: None,
        x_hi: None,
        x_cells: 64,
        dual_cells: 128,
        dual_lo: None,
        dual_hi: None,
        max_inadmissible: None,
    };
    let s = s.as_ref().unwrap_or(&d);
    let mut out = DualSampling::new(s.x_lo.unwrap_or(default_box.0), s.x_hi.unwrap_or(default_box.1), s.x_cells, s.dual_cells);
    if let (Some(lo), Some(hi)) = (s.dual_lo, s.dual_hi) {
        out.dual_box = Some((lo, hi));
    }
    if let Some(m) = s.max_inadmissible {
        out.max_inadmissible = m;
    }
    out
}

/// Box of the potential's grid when it has one, else the x-box of the domain.
fn primal_box(cfg: &LoadedConfig, gf: &GeneratingFunction) -> Result<([f64; 2], [f64; 2]), CliError> {
    if let Some(g) = cfg.config.potential.as_ref().and_then(|p| p.grid.as_ref()) {
        return Ok((g.lo, g.hi));
    }
    let d = gf.domain();
    Ok((point2(&d.x_lo, "domain.x-lo")?, point2(&d.x_hi, "domain.x-hi")?))
}

fn measure(cfg: &LoadedConfig) -> Result<Outcome, CliError> {
    let gf = cfg.generating_function()?;
    let t = task(&cfg.config.measure, "measure")?;
    if t.regions.is_empty() {
        return Err(CliError::Config("measure.regions is empty".into()));
    }
    let u = cfg.potential(&gf)?;
    let sampling = dual_sampling(&t.sampling, primal_box(cfg, &gf)?);
    let mut reports = Vec::new();
    for r in &t.regions {
        let region = Polygon::new(r.clone())?;
        reports.push(match t.method {
            MeasureMethodConfig::Smooth => {
                let (lo, hi) = region.bounds();
                let cells = Grid2::uniform(lo, hi, [t.quadrature_cells, t.quadrature_cells])?;
                gma_measure_smooth(&gf, u.as_ref(), &region, &cells)?
            }
            MeasureMethodConfig::BoxCounting => gma_measure_nonsmooth(&gf, u.as_ref(), &region, &sampling)?,
        });
    }
    let verdict = alexandrov_verdict(&reports, t.c, t.upper_c);
    #[derive(Serialize)]
    struct Report {
        regions: Vec<gje_core::measure::MeasureReport>,
        bounds: gje_core::measure::AlexandrovVerdict,
    }
    let status = Status::pass_fail(verdict.lower.passed() && verdict.upper.passed());
    Outcome::new(&Report { regions: reports, bounds: verdict }, Some(status))
}

fn probe(cfg: &LoadedConfig) -> Result<Outcome, CliError> {
    let gf = cfg.generating_function()?;
    let t = task(&cfg.config.probe, "probe")?;
    let u = cfg.grid_potential(&gf)?;
    let (y, z) = support(&gf, &u, &t.support, &t.touch)?;
    let d = ProbeOptions::default();
    let opts = ProbeOptions {
        theta_samples: t.theta_samples.unwrap_or(d.theta_samples),
        eps_samples: t.eps_samples.unwrap_or(d.eps_samples),
        sigma: t.sigma,
        delta: t.delta,
        c: t.c,
        slack: t.slack.unwrap_or(d.slack),
        support_tol: t.support_tol.unwrap_or(d.support_tol),
        lipschitz_cap: t.lipschitz_cap.unwrap_or(d.lipschitz_cap),
    };
    let report = strict_convexity_probe(&gf, &u, (&y, z), &t.x_m1, &t.x_1, &opts)?;
    let mut base = Table::new("base", &["theta", "x1", "x2", "h_sigma"]);
    for b in &report.base {
        base.push(vec![b.theta, b.x[0], b.x[1], b.h_sigma]);
    }
    let mut strip = Table::new("strip", &["eps", "tangential", "trace", "harmonic", "max_slope"]);
    for s in &report.strip {
        strip.push(vec![s.eps, s.tangential, s.trace, s.harmonic, s.max_slope]);
    }
    let label = serde_json::to_value(report.verdict).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    let status = Status::new(label, report.verdict == ProbeVerdict::Strict);
    Ok(Outcome::new(&report, Some(status))?.with_table(base).with_table(strip))
}

fn c1(cfg: &LoadedConfig) -> Result<Outcome, CliError> {
    let gf = cfg.generating_function()?;
    let u = cfg.potential(&gf)?;
    let t = cfg.config.c1.as_ref();
    let sampling = dual_sampling(&t.and_then(|t| t.sampling.clone()), primal_box(cfg, &gf)?);
    let report = c1_check(&gf, u.as_ref(), &sampling, t.and_then(|t| t.threshold))?;
    let passed = report.verdict == C1Verdict::C1Plausible;
    let label = if passed { "C1_PLAUSIBLE" } else { "NOT_C1" };
    Outcome::new(&report, Some(Status::new(label, passed)))
}

fn suite(cfg: &LoadedConfig) -> Result<Outcome, CliError> {
    let t = cfg.config.suite.clone().unwrap_or_else(|| crate::config::SuiteTask {
        cells: 32,
        fixtures: Vec::new(),
        contact_samples: None,
        x_cells: None,
        dual_cells: None,
    });
    let mut fixtures = standard_fixtures(t.cells)?;
    if !t.fixtures.is_empty() {
        if let Some(bad) = t.fixtures.iter().find(|n| !fixtures.iter().any(|f| &f.name == *n)) {
            let known: Vec<&str> = fixtures.iter().map(|f| f.name.as_str()).collect();
            return Err(CliError::Config(format!("suite.fixtures: unknown fixture `{bad}` (known: {})", known.join(", "))));
        }
        fixtures.retain(|f| t.fixtures.contains(&f.name));
    }
    let mut settings = SuiteSettings { grid_cells: t.cells, ..SuiteSettings::default() };
    settings.scan.seed = cfg.config.seed;
    settings.contact_samples = t.contact_samples.unwrap_or(settings.contact_samples);
    settings.x_cells = t.x_cells.unwrap_or(settings.x_cells);
    settings.dual_cells = t.dual_cells.unwrap_or(settings.dual_cells);
    let summary = theorem_consistency_suite(&fixtures, &settings);
    let status = Status::new(if summary.violations == 0 { "CONSISTENT" } else { "VIOLATED" }, summary.violations == 0);
    #[derive(Serialize)]
    struct Report<'a> {
        settings: &'a SuiteSettings,
        summary: &'a gje_core::probe::SuiteSummary,
    }
    Outcome::new(&Report { settings: &settings, summary: &summary }, Some(status))
}
