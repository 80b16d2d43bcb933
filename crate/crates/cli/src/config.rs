//! Flat `section.key = value` run configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Lists are comma
//! separated. Every key must appear in [`KEYS`]; the documented list lives in
//! `docs/config.md`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use wgeo_core::residual::StrongForm;
use wgeo_core::selfsimilar::{moving_ode_solve, MovingTrajectory, PolynomialRadius, PowerLawRadius, SelfSimilarSpec};
use wgeo_core::solver::{Seed, SlowSlices, SolverOptions};
use wgeo_core::{make_grid, DensityField, EnergyParams, ParabolicProfile, SpaceTimeGrid};

use crate::persist;

pub const KEYS: &[&str] = &[
    "grid.d",
    "grid.lower",
    "grid.upper",
    "grid.n_x",
    "grid.n_t",
    "params.p",
    "params.q",
    "params.alpha",
    "params.beta",
    "run.model",
    "start.kind",
    "start.radius",
    "start.center",
    "start.exponent",
    "start.file",
    "end.kind",
    "end.radius",
    "end.center",
    "end.exponent",
    "end.file",
    "solver.seed",
    "solver.max_iterations",
    "solver.tolerance",
    "solver.barrier_start",
    "solver.barrier_factor",
    "solver.armijo",
    "solver.backtrack",
    "solver.v_floor",
    "solver.slow_slices",
    "solver.congestion_weight",
    "solver.seed_mixing",
    "solver.stationarity_battery",
    "selfsimilar.family",
    "selfsimilar.radius",
    "selfsimilar.r0",
    "selfsimilar.r1",
    "selfsimilar.rate",
    "selfsimilar.invariant",
    "selfsimilar.drift",
    "selfsimilar.center",
    "selfsimilar.steps",
    "selfsimilar.refinements",
    "verify.continuity",
    "verify.weak",
    "verify.strong",
    "verify.form",
    "verify.battery",
    "verify.battery_seed",
    "verify.v_floor",
    "varcheck.count",
    "varcheck.n_x",
    "varcheck.seed",
    "varcheck.tolerance",
    "output.dir",
    "output.svg",
];

/// Raw key-value pairs with their line numbers.
pub struct Table {
    entries: BTreeMap<String, (usize, String)>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| anyhow!("line {line_no}: expected 'section.key = value'"))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                bail!("line {line_no}: unknown key '{key}'");
            }
            if value.is_empty() {
                bail!("line {line_no}: empty value for '{key}'");
            }
            if let Some((first, _)) = entries.insert(key.to_string(), (line_no, value.to_string())) {
                bail!("line {line_no}: '{key}' already set on line {first}");
            }
        }
        Ok(Self { entries })
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.entries.keys().any(|k| k.split('.').next() == Some(section))
    }

    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.entries.get(key)
    }

    pub fn string(&self, key: &str) -> Option<&str> {
        self.raw(key).map(|(_, v)| v.as_str())
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|(line, v)| v.parse::<T>().map_err(|e| anyhow!("line {line}: bad value '{v}' for '{key}': {e}")))
            .transpose()
    }

    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.raw(key)
            .map(|(line, v)| {
                v.split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .map_err(|e| anyhow!("line {line}: bad number '{}' in '{key}': {e}", x.trim()))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parsed(key)?.ok_or_else(|| anyhow!("missing required key '{key}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Multiplicative,
    Additive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub n_x: usize,
    pub n_t: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<SpaceTimeGrid> {
        Ok(make_grid(self.dim, &self.lower, &self.upper, self.n_x, self.n_t)?)
    }

    /// Same box with both resolutions multiplied by `2^level`.
    pub fn refined(&self, level: u32) -> Self {
        let f = 1usize << level;
        Self { n_x: self.n_x * f, n_t: self.n_t * f, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EndpointSpec {
    Parabolic { radius: f64, center: Vec<f64>, exponent: f64 },
    Bump { radius: f64, center: Vec<f64> },
    Uniform,
    File(PathBuf),
}

impl EndpointSpec {
    pub fn density(&self, grid: &SpaceTimeGrid) -> Result<DensityField> {
        match self {
            Self::Parabolic { radius, center, exponent } => {
                Ok(ParabolicProfile::new(grid.dim(), *radius, center, *exponent)?.sample(grid)?)
            }
            Self::Bump { radius, center } => {
                let values = grid.sample(|x| {
                    let s = x.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum::<f64>().sqrt() / radius;
                    if s < 1.0 {
                        (0.5 * std::f64::consts::PI * s).cos().powi(2)
                    } else {
                        0.0
                    }
                });
                Ok(DensityField::normalized(values, grid)?)
            }
            Self::Uniform => Ok(DensityField::uniform(grid)),
            Self::File(path) => {
                let values = persist::read_density(path, grid)?;
                DensityField::normalized(values, grid).with_context(|| format!("density in {}", path.display()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Fixed,
    Moving,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfSimilarConfig {
    pub family: Family,
    pub radius: Option<Vec<f64>>,
    pub r0: Option<f64>,
    pub r1: Option<f64>,
    pub rate: Option<f64>,
    pub invariant: Option<f64>,
    pub drift: Vec<f64>,
    pub center: Vec<f64>,
    pub steps: usize,
    pub refinements: u32,
}

impl SelfSimilarConfig {
    /// Radius path of the fixed-center family.
    pub fn fixed_spec(&self, dim: usize) -> Result<SelfSimilarSpec> {
        if let Some(coeffs) = &self.radius {
            return Ok(SelfSimilarSpec::fixed(dim, PolynomialRadius { coeffs: coeffs.clone() }, &self.center));
        }
        let r0 = self.r0.ok_or_else(|| anyhow!("missing required key 'selfsimilar.r0' (or 'selfsimilar.radius')"))?;
        let r1 = self.r1.ok_or_else(|| anyhow!("missing required key 'selfsimilar.r1' (or 'selfsimilar.radius')"))?;
        Ok(SelfSimilarSpec::fixed(dim, PowerLawRadius::between(r0, r1, dim), &self.center))
    }

    /// RK4 trajectory of the moving family; the initial rate comes from
    /// `rate` or, when absent, from the invariant with `R' >= 0`.
    pub fn trajectory(&self, dim: usize) -> Result<MovingTrajectory> {
        let r0 = self.r0.ok_or_else(|| anyhow!("missing required key 'selfsimilar.r0'"))?;
        let rate = match (self.rate, self.invariant) {
            (Some(rate), _) => rate,
            (None, Some(c)) => {
                let d = dim as f64;
                let drift2: f64 = self.drift.iter().map(|e| e * e).sum();
                let square = (c / r0.powf(2.0 * d) - (d + 4.0) * drift2) / d;
                if square < 0.0 {
                    bail!("invariant {c} is too small for radius {r0} and the given drift");
                }
                square.sqrt()
            }
            (None, None) => bail!("missing required key 'selfsimilar.rate' (or 'selfsimilar.invariant')"),
        };
        Ok(moving_ode_solve(r0, rate, &self.drift, &self.center, dim, self.steps)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub continuity: f64,
    pub weak: f64,
    pub strong: f64,
    pub form: StrongForm,
    pub battery: usize,
    pub battery_seed: u64,
    pub v_floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarcheckConfig {
    pub count: usize,
    pub n_x: usize,
    pub seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: Option<GridSpec>,
    pub params: EnergyParams,
    pub params_given: bool,
    pub model: ModelKind,
    pub start: Option<EndpointSpec>,
    pub end: Option<EndpointSpec>,
    pub solver: SolverOptions,
    pub selfsimilar: Option<SelfSimilarConfig>,
    pub verify: VerifyConfig,
    pub varcheck: VarcheckConfig,
    pub output_dir: Option<PathBuf>,
    pub svg: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in config {}", path.display()))
    }

    /// Parses `text`; relative file paths are taken from `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let t = Table::parse(text)?;
        let dim: usize = t.parsed("grid.d")?.unwrap_or(1);
        let grid = if t.has_section("grid") {
            let broadcast = |key: &str| -> Result<Vec<f64>> {
                let v = t.list(key)?.ok_or_else(|| anyhow!("missing required key '{key}'"))?;
                match v.len() {
                    1 => Ok(vec![v[0]; dim]),
                    n if n == dim => Ok(v),
                    n => bail!("'{key}' has {n} entries, expected 1 or {dim}"),
                }
            };
            Some(GridSpec {
                dim,
                lower: broadcast("grid.lower")?,
                upper: broadcast("grid.upper")?,
                n_x: t.required("grid.n_x")?,
                n_t: t.required("grid.n_t")?,
            })
        } else {
            None
        };
        let q = EnergyParams::quadratic();
        let params = EnergyParams::new(
            t.parsed("params.p")?.unwrap_or(q.p),
            t.parsed("params.q")?.unwrap_or(q.q),
            t.parsed("params.alpha")?.unwrap_or(q.alpha),
            t.parsed("params.beta")?.unwrap_or(q.beta),
        )?;
        let model = match t.string("run.model").unwrap_or("multiplicative") {
            "multiplicative" => ModelKind::Multiplicative,
            "additive" => ModelKind::Additive,
            other => bail!("unknown model '{other}' (expected multiplicative or additive)"),
        };
        let center = |key: &str| -> Result<Vec<f64>> {
            match t.list(key)? {
                None => Ok(vec![0.0; dim]),
                Some(v) if v.len() == dim => Ok(v),
                Some(v) => bail!("'{key}' has {} entries, expected {dim}", v.len()),
            }
        };
        let endpoint = |side: &str| -> Result<Option<EndpointSpec>> {
            let key = |k: &str| format!("{side}.{k}");
            if !t.has_section(side) {
                return Ok(None);
            }
            let kind =
                t.string(&key("kind")).unwrap_or(if t.string(&key("file")).is_some() { "file" } else { "parabolic" });
            let spec = match kind {
                "parabolic" => EndpointSpec::Parabolic {
                    radius: t.required(&key("radius"))?,
                    center: center(&key("center"))?,
                    exponent: t.parsed(&key("exponent"))?.unwrap_or(2.0),
                },
                "bump" => EndpointSpec::Bump { radius: t.required(&key("radius"))?, center: center(&key("center"))? },
                "uniform" => EndpointSpec::Uniform,
                "file" => {
                    let file =
                        t.string(&key("file")).ok_or_else(|| anyhow!("missing required key '{}'", key("file")))?;
                    let path = base.join(file);
                    if !path.is_file() {
                        bail!("'{}' refers to missing file {}", key("file"), path.display());
                    }
                    EndpointSpec::File(path)
                }
                other => bail!("unknown endpoint kind '{other}' for '{}'", key("kind")),
            };
            Ok(Some(spec))
        };
        let d = SolverOptions::default();
        let solver = SolverOptions {
            seed: t.parsed::<Seed>("solver.seed")?.unwrap_or(d.seed),
            max_iterations: t.parsed("solver.max_iterations")?.unwrap_or(d.max_iterations),
            tolerance: t.parsed("solver.tolerance")?.unwrap_or(d.tolerance),
            barrier_start: t.parsed("solver.barrier_start")?.unwrap_or(d.barrier_start),
            barrier_factor: t.parsed("solver.barrier_factor")?.unwrap_or(d.barrier_factor),
            armijo: t.parsed("solver.armijo")?.unwrap_or(d.armijo),
            backtrack: t.parsed("solver.backtrack")?.unwrap_or(d.backtrack),
            v_floor: t.parsed("solver.v_floor")?.unwrap_or(d.v_floor),
            slow_slices: match t.string("solver.slow_slices") {
                None => d.slow_slices,
                Some("abort") => SlowSlices::Abort,
                Some("reparametrize") => SlowSlices::Reparametrize,
                Some(other) => bail!("unknown solver.slow_slices '{other}' (expected abort or reparametrize)"),
            },
            congestion_weight: t.parsed("solver.congestion_weight")?.unwrap_or(d.congestion_weight),
            seed_mixing: t.parsed("solver.seed_mixing")?.unwrap_or(d.seed_mixing),
            stationarity_battery: t.parsed("solver.stationarity_battery")?.unwrap_or(d.stationarity_battery),
        };
        let selfsimilar = if t.has_section("selfsimilar") {
            let family = match t.string("selfsimilar.family") {
                Some("fixed") => Family::Fixed,
                Some("moving") => Family::Moving,
                Some(other) => bail!("unknown selfsimilar.family '{other}' (expected fixed or moving)"),
                None => bail!("missing required key 'selfsimilar.family'"),
            };
            let drift = match t.list("selfsimilar.drift")? {
                None => vec![0.0; dim],
                Some(v) if v.len() == dim => v,
                Some(v) => bail!("'selfsimilar.drift' has {} entries, expected {dim}", v.len()),
            };
            Some(SelfSimilarConfig {
                family,
                radius: t.list("selfsimilar.radius")?,
                r0: t.parsed("selfsimilar.r0")?,
                r1: t.parsed("selfsimilar.r1")?,
                rate: t.parsed("selfsimilar.rate")?,
                invariant: t.parsed("selfsimilar.invariant")?,
                drift,
                center: center("selfsimilar.center")?,
                steps: t.parsed("selfsimilar.steps")?.unwrap_or(1000),
                refinements: t.parsed("selfsimilar.refinements")?.unwrap_or(0),
            })
        } else {
            None
        };
        let verify = VerifyConfig {
            continuity: t.parsed("verify.continuity")?.unwrap_or(1e-2),
            weak: t.parsed("verify.weak")?.unwrap_or(5e-4),
            strong: t.parsed("verify.strong")?.unwrap_or(1e-2),
            form: t.parsed::<StrongForm>("verify.form")?.unwrap_or(StrongForm::Conservative),
            battery: t.parsed("verify.battery")?.unwrap_or(10),
            battery_seed: t.parsed("verify.battery_seed")?.unwrap_or(0),
            v_floor: t.parsed("verify.v_floor")?.unwrap_or(1e-12),
        };
        let varcheck = VarcheckConfig {
            count: t.parsed("varcheck.count")?.unwrap_or(10),
            n_x: t.parsed("varcheck.n_x")?.unwrap_or(128),
            seed: t.parsed("varcheck.seed")?.unwrap_or(0),
            tolerance: t.parsed("varcheck.tolerance")?.unwrap_or(1e-5),
        };
        Ok(Self {
            grid,
            params,
            params_given: t.has_section("params"),
            model,
            start: endpoint("start")?,
            end: endpoint("end")?,
            solver,
            selfsimilar,
            verify,
            varcheck,
            output_dir: t.string("output.dir").map(|d| base.join(d)),
            svg: t.parsed("output.svg")?.unwrap_or(true),
        })
    }

    pub fn grid(&self) -> Result<&GridSpec> {
        self.grid.as_ref().ok_or_else(|| anyhow!("missing [grid] keys: grid.lower, grid.upper, grid.n_x, grid.n_t"))
    }
}
