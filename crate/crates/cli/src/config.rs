//! TOML problem configs: one shared generating function and potential, plus a
//! table per subcommand. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use gje_core::genfun::{DerivativeMode, DomainBox};
use gje_core::potential::{AnalyticPotential, Grid2, GridPotential, Potential, SemiDiscretePotential};
use gje_core::GeneratingFunction;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ProblemConfig {
    /// Version of the config schema; only [`SCHEMA_VERSION`] is accepted.
    #[serde(default = "schema_version")]
    pub schema: u32,
    #[serde(default)]
    pub seed: u64,
    /// Required by every command except `suite`, whose fixtures carry their own.
    pub generating_function: Option<GfConfig>,
    pub potential: Option<PotentialConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    pub validate: Option<ValidateTask>,
    pub check_conditions: Option<ConditionsTask>,
    pub segment: Option<SegmentTask>,
    pub transform: Option<TransformTask>,
    pub mate: Option<MateTask>,
    pub height: Option<HeightTask>,
    pub measure: Option<MeasureTask>,
    pub probe: Option<ProbeTask>,
    pub c1: Option<C1Task>,
    pub suite: Option<SuiteTask>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GfConfig {
    pub family: String,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default = "two")]
    pub dim: usize,
    /// Replaces the family's default box; the z-bounds stay constant.
    pub domain: Option<DomainConfig>,
    pub det_floor: Option<f64>,
    #[serde(default)]
    pub finite_differences: bool,
}

pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn two() -> usize {
    2
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DomainConfig {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub y_lo: Vec<f64>,
    pub y_hi: Vec<f64>,
    pub z_lo: f64,
    pub z_hi: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GridConfig {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub cells: usize,
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid2, CliError> {
        positive("grid.cells", self.cells)?;
        Ok(Grid2::uniform(self.lo, self.hi, [self.cells, self.cells])?)
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SupportConfig {
    pub y: Vec<f64>,
    pub z: f64,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    /// `a |x|^2 / 2`; needs `a`.
    Quadratic,
    /// `x.Hx/2 + b.x + c`; needs `hessian`, optional `gradient` and `constant`.
    QuadraticForm,
    AbsFirst,
    /// `g(., y, z)`; needs `y` and `z`.
    Support,
    /// Max of supports; needs `supports`.
    SemiDiscrete,
    /// JSON file `{"xs": [...], "ys": [...], "values": [...]}`, values indexed `j * nx + i`; needs `path`.
    GridFile,
}

/// Fields used depend on `kind`; the others must be absent.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PotentialConfig {
    pub kind: PotentialKind,
    pub a: Option<f64>,
    pub hessian: Option<[[f64; 2]; 2]>,
    pub gradient: Option<[f64; 2]>,
    pub constant: Option<f64>,
    pub y: Option<Vec<f64>>,
    pub z: Option<f64>,
    pub supports: Option<Vec<SupportConfig>>,
    pub path: Option<PathBuf>,
    /// Grid on which analytic shapes are sampled for grid-based tasks.
    pub grid: Option<GridConfig>,
}

/// A potential table after its per-kind fields were checked.
#[derive(Clone, Debug, PartialEq)]
pub enum PotentialShape {
    Quadratic { a: f64 },
    QuadraticForm { hessian: [[f64; 2]; 2], gradient: [f64; 2], constant: f64 },
    AbsFirst,
    Support { y: Vec<f64>, z: f64 },
    SemiDiscrete { supports: Vec<(Vec<f64>, f64)> },
    GridFile { path: PathBuf },
}

impl PotentialConfig {
    pub fn shape(&self) -> Result<PotentialShape, CliError> {
        let kind = self.kind;
        let need = |name: &str| CliError::Config(format!("potential.{name} is required for this kind"));
        let stray: Vec<&str> = [
            ("a", self.a.is_some() && kind != PotentialKind::Quadratic),
            ("hessian", self.hessian.is_some() && kind != PotentialKind::QuadraticForm),
            ("gradient", self.gradient.is_some() && kind != PotentialKind::QuadraticForm),
            ("constant", self.constant.is_some() && kind != PotentialKind::QuadraticForm),
            ("y", self.y.is_some() && kind != PotentialKind::Support),
            ("z", self.z.is_some() && kind != PotentialKind::Support),
            ("supports", self.supports.is_some() && kind != PotentialKind::SemiDiscrete),
            ("path", self.path.is_some() && kind != PotentialKind::GridFile),
        ]
        .into_iter()
        .filter_map(|(n, bad)| bad.then_some(n))
        .collect();
        if !stray.is_empty() {
            return Err(CliError::Config(format!("potential: field(s) {} do not apply to this kind", stray.join(", "))));
        }
        Ok(match kind {
            PotentialKind::Quadratic => PotentialShape::Quadratic { a: self.a.ok_or_else(|| need("a"))? },
            PotentialKind::QuadraticForm => PotentialShape::QuadraticForm {
                hessian: self.hessian.ok_or_else(|| need("hessian"))?,
                gradient: self.gradient.unwrap_or_default(),
                constant: self.constant.unwrap_or_default(),
            },
            PotentialKind::AbsFirst => PotentialShape::AbsFirst,
            PotentialKind::Support => {
                PotentialShape::Support { y: self.y.clone().ok_or_else(|| need("y"))?, z: self.z.ok_or_else(|| need("z"))? }
            }
            PotentialKind::SemiDiscrete => {
                let s = self.supports.as_ref().ok_or_else(|| need("supports"))?;
                if s.is_empty() {
                    return Err(CliError::Config("potential.supports is empty".into()));
                }
                PotentialShape::SemiDiscrete { supports: s.iter().map(|s| (s.y.clone(), s.z)).collect() }
            }
            PotentialKind::GridFile => PotentialShape::GridFile { path: self.path.clone().ok_or_else(|| need("path"))? },
        })
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for `<command>.json` and CSV traces; stdout only when absent.
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ValidateTask {
    #[serde(default = "default_validate_res")]
    pub resolution: usize,
    pub a1_points: Option<usize>,
    pub a1_starts: Option<usize>,
}

fn default_validate_res() -> usize {
    5
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConditionsTask {
    pub x_res: Option<usize>,
    pub y_res: Option<usize>,
    pub z_res: Option<usize>,
    pub random_pairs: Option<usize>,
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SegmentTask {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub y: Vec<f64>,
    pub z: f64,
    #[serde(default = "default_theta_samples")]
    pub resolution: usize,
    pub convexity: Option<ConvexityTask>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConvexityTask {
    pub region: Vec<[f64; 2]>,
    pub y_set: Vec<Vec<f64>>,
    pub z_set: Vec<f64>,
    #[serde(default = "default_convexity_res")]
    pub resolution: usize,
}

fn default_theta_samples() -> usize {
    129
}

fn default_convexity_res() -> usize {
    33
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TransformTask {
    pub y_grid: GridConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct MateState {
    pub x: Vec<f64>,
    pub u: f64,
    pub p: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct MateTask {
    /// Points where `(u, Du, D^2u)` are read off the potential.
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    /// Explicit `(x, u, p)` states.
    #[serde(default)]
    pub states: Vec<MateState>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct HeightTask {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    /// Support parameters; by default the contact at `touch`.
    pub support: Option<SupportConfig>,
    pub touch: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "default_theta_samples")]
    pub resolution: usize,
    /// Allowed `rhs - h''` before the lemma check fails.
    #[serde(default = "default_height_tol")]
    pub tolerance: f64,
}

fn default_height_tol() -> f64 {
    1e-4
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureMethodConfig {
    Smooth,
    BoxCounting,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct MeasureTask {
    pub regions: Vec<Vec<[f64; 2]>>,
    pub c: f64,
    pub upper_c: f64,
    #[serde(default = "default_method")]
    pub method: MeasureMethodConfig,
    #[serde(default = "default_quadrature_cells")]
    pub quadrature_cells: usize,
    #[serde(default)]
    pub sampling: Option<SamplingConfig>,
}

fn default_method() -> MeasureMethodConfig {
    MeasureMethodConfig::Smooth
}

fn default_quadrature_cells() -> usize {
    64
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SamplingConfig {
    pub x_lo: Option<[f64; 2]>,
    pub x_hi: Option<[f64; 2]>,
    #[serde(default = "default_x_cells")]
    pub x_cells: usize,
    #[serde(default = "default_dual_cells")]
    pub dual_cells: usize,
    pub dual_lo: Option<[f64; 2]>,
    pub dual_hi: Option<[f64; 2]>,
    pub max_inadmissible: Option<f64>,
}

fn default_x_cells() -> usize {
    64
}

fn default_dual_cells() -> usize {
    128
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ProbeTask {
    pub x_m1: [f64; 2],
    pub x_1: [f64; 2],
    pub support: Option<SupportConfig>,
    pub touch: Option<Vec<f64>>,
    pub theta_samples: Option<usize>,
    pub eps_samples: Option<usize>,
    pub sigma: Option<f64>,
    pub delta: Option<f64>,
    pub c: Option<f64>,
    pub slack: Option<f64>,
    pub support_tol: Option<f64>,
    pub lipschitz_cap: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct C1Task {
    #[serde(default)]
    pub sampling: Option<SamplingConfig>,
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SuiteTask {
    /// Grid cells per axis for the built-in fixtures.
    #[serde(default = "default_suite_cells")]
    pub cells: usize,
    /// Restrict to these fixture names; all when empty.
    #[serde(default)]
    pub fixtures: Vec<String>,
    pub contact_samples: Option<usize>,
    pub x_cells: Option<usize>,
    pub dual_cells: Option<usize>,
}

fn default_suite_cells() -> usize {
    32
}

fn positive(name: &str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        Err(CliError::Config(format!("`{name}` must be positive")))
    } else {
        Ok(())
    }
}

/// A parsed config with the hash of its source text.
pub struct LoadedConfig {
    pub config: ProblemConfig,
    pub hash: String,
    /// Directory of the config file; relative paths resolve against it.
    pub base: PathBuf,
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        parse_json(&text).map_err(|e| e.to_string())
    } else {
        parse(&text).map_err(|e| e.to_string())
    };
    let config = parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let loaded = LoadedConfig { config, hash: hex::encode(Sha256::digest(text.as_bytes())), base };
    loaded.check()?;
    Ok(loaded)
}

pub fn parse(text: &str) -> Result<ProblemConfig, toml::de::Error> {
    toml::from_str(text)
}

/// JSON configs use the same keys as TOML ones.
pub fn parse_json(text: &str) -> Result<ProblemConfig, serde_json::Error> {
    serde_json::from_str(text)
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Checks that go beyond the schema: referenced files and positive resolutions.
    pub fn check(&self) -> Result<(), CliError> {
        let c = &self.config;
        if c.schema != SCHEMA_VERSION {
            return Err(CliError::Config(format!("schema: version {} is not supported (expected {SCHEMA_VERSION})", c.schema)));
        }
        if let Some(p) = &c.potential {
            if let PotentialShape::GridFile { path } = p.shape()? {
                let full = self.resolve(&path);
                if !full.is_file() {
                    return Err(CliError::Config(format!("potential.path: {} does not exist", full.display())));
                }
            }
        }
        if let Some(g) = c.potential.as_ref().and_then(|p| p.grid.as_ref()) {
            positive("potential.grid.cells", g.cells)?;
        }
        if let Some(t) = &c.validate {
            positive("validate.resolution", t.resolution)?;
        }
        if let Some(t) = &c.segment {
            positive("segment.resolution", t.resolution)?;
        }
        if let Some(t) = &c.height {
            positive("height.resolution", t.resolution)?;
        }
        if let Some(t) = &c.measure {
            positive("measure.quadrature-cells", t.quadrature_cells)?;
            if let Some(s) = &t.sampling {
                positive("measure.sampling.x-cells", s.x_cells)?;
                positive("measure.sampling.dual-cells", s.dual_cells)?;
            }
        }
        if let Some(s) = c.c1.as_ref().and_then(|t| t.sampling.as_ref()) {
            positive("c1.sampling.x-cells", s.x_cells)?;
            positive("c1.sampling.dual-cells", s.dual_cells)?;
        }
        if let Some(t) = &c.suite {
            positive("suite.cells", t.cells)?;
        }
        Ok(())
    }

    pub fn generating_function(&self) -> Result<GeneratingFunction, CliError> {
        let g = self
            .config
            .generating_function
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs a [generating-function] table".into()))?;
        let mut gf = GeneratingFunction::builtin_nd(&g.family, &g.params, g.dim)?;
        if let Some(d) = &g.domain {
            let domain = DomainBox::new(d.x_lo.clone(), d.x_hi.clone(), d.y_lo.clone(), d.y_hi.clone(), d.z_lo, d.z_hi)?;
            gf = gf.with_domain(domain)?;
        }
        if let Some(f) = g.det_floor {
            gf = gf.with_det_floor(f);
        }
        if g.finite_differences {
            gf = gf.with_mode(DerivativeMode::FiniteDifference);
        }
        Ok(gf)
    }

    fn potential_config(&self) -> Result<&PotentialConfig, CliError> {
        self.config.potential.as_ref().ok_or_else(|| CliError::Config("this command needs a [potential] table".into()))
    }

    /// The potential as given: analytic shapes stay analytic.
    pub fn potential(&self, gf: &GeneratingFunction) -> Result<Box<dyn Potential>, CliError> {
        let p = self.potential_config()?;
        let n = gf.dim();
        Ok(match p.shape()? {
            PotentialShape::Quadratic { a } => Box::new(AnalyticPotential::scaled_quadratic(n, a)),
            PotentialShape::AbsFirst => Box::new(AnalyticPotential::abs_first(n)),
            PotentialShape::Support { y, z } => Box::new(AnalyticPotential::support(gf, &y, z)),
            PotentialShape::SemiDiscrete { supports } => Box::new(SemiDiscretePotential::new(gf, supports)?),
            PotentialShape::QuadraticForm { .. } | PotentialShape::GridFile { .. } => Box::new(self.grid_potential(gf)?),
        })
    }

    /// The potential on a grid: grid files as read, other shapes sampled on `potential.grid`.
    pub fn grid_potential(&self, gf: &GeneratingFunction) -> Result<GridPotential, CliError> {
        let p = self.potential_config()?;
        let shape = p.shape()?;
        if let PotentialShape::GridFile { path } = &shape {
            let full = self.resolve(path);
            let text = std::fs::read_to_string(&full).map_err(|e| CliError::Io(format!("{}: {e}", full.display())))?;
            let table: GridTable =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", full.display())))?;
            return Ok(GridPotential::new(Grid2::new(table.xs, table.ys)?, table.values)?);
        }
        let grid = p
            .grid
            .as_ref()
            .ok_or_else(|| CliError::Config("potential.grid is required to sample this potential on a grid".into()))?
            .build()?;
        if let PotentialShape::QuadraticForm { hessian: h, gradient: b, constant: c } = shape {
            return Ok(GridPotential::from_fn(grid, move |x| {
                0.5 * (h[0][0] * x[0] * x[0] + (h[0][1] + h[1][0]) * x[0] * x[1] + h[1][1] * x[1] * x[1])
                    + b[0] * x[0]
                    + b[1] * x[1]
                    + c
            })?);
        }
        let u = self.potential(gf)?;
        Ok(GridPotential::sample(grid, u.as_ref())?)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridTable {
    xs: Vec<f64>,
    ys: Vec<f64>,
    values: Vec<f64>,
}
