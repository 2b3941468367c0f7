//! Run configuration files (TOML).
//!
//! ```toml
//! mode = "finite_horizon"          # or "ergodic"
//!
//! [grid]
//! dim = 1
//! n = 64
//! nt = 64                          # finite horizon only
//! horizon = 1.0                    # finite horizon only
//!
//! [hamiltonian]
//! kind = "power"                   # or "truncated_power" (needs rbar)
//! gamma = 2.0
//! policy_radius = 50.0
//! truncation = "fixed"             # or "auto" (factor `auto_factor`, default 1.5)
//!
//! [coupling]
//! kind = "nonlocal"                # "local" (slope) or "none"
//! sigma = 0.1
//! kernel = { kind = "cosine", offset = 1.0, amplitude = 0.5 }
//! potential = { kind = "cosine", amplitude = 1.0 }
//!
//! [data]
//! m0 = { kind = "bump", center = 0.5, concentration = 4.0 }
//! u_t = { kind = "cosine" }
//!
//! [solver]
//! tol = 1e-10
//! max_iter = 100
//! linear = "direct"                # or "gauss_seidel"
//!
//! [norms]
//! u_exponent = 4.0
//! m_exponent = 4.0
//! ```
//!
//! Field and kernel tables may point to node-value files (`kind = "file"`,
//! `path = ...`, relative to the config file). Each non-blank line not
//! starting with `#` holds a node index and a value.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::coupling::{CouplingSpec, Kernel, LocalFunction};
use crate::error::MfgError;
use crate::grid::{SpaceField, TorusGrid};
use crate::hamiltonian::{HamiltonianSpec, PolicyConstraint};
use crate::linear_pde::LinearSolver;
use crate::policy_iteration::{DifferenceNorms, RunConfig, Truncation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },

    #[error("{0}")]
    Syntax(String),

    #[error("field `{field}`: {reason}")]
    Field { field: String, reason: String },
}

fn field_err(field: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Field {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq)]
#[serde(rename_all = "snake_case")]
enum Mode {
    FiniteHorizon,
    Ergodic,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Mode,
    grid: RawGrid,
    hamiltonian: RawHamiltonian,
    #[serde(default)]
    coupling: RawCoupling,
    #[serde(default)]
    data: RawData,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    norms: RawNorms,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    #[serde(default = "one")]
    dim: usize,
    n: usize,
    nt: Option<usize>,
    horizon: Option<f64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum HamiltonianKindName {
    Power,
    TruncatedPower,
}

#[derive(Debug, Deserialize, Clone, Copy, Default)]
#[serde(rename_all = "snake_case")]
enum TruncationName {
    #[default]
    Fixed,
    Auto,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHamiltonian {
    kind: HamiltonianKindName,
    gamma: f64,
    rbar: Option<f64>,
    policy_radius: f64,
    #[serde(default)]
    truncation: TruncationName,
    auto_factor: Option<f64>,
    weight: Option<FieldSource>,
}

#[derive(Debug, Deserialize, Clone, Copy, Default)]
#[serde(rename_all = "snake_case")]
enum CouplingKindName {
    Nonlocal,
    Local,
    #[default]
    None,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawCoupling {
    #[serde(default)]
    kind: CouplingKindName,
    #[serde(default)]
    sigma: f64,
    kernel: Option<KernelSource>,
    slope: Option<f64>,
    potential: Option<FieldSource>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawData {
    m0: Option<FieldSource>,
    u_t: Option<FieldSource>,
}

#[derive(Debug, Deserialize, Clone, Copy, Default)]
#[serde(rename_all = "snake_case")]
enum LinearName {
    #[default]
    Direct,
    GaussSeidel,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default = "default_max_iter")]
    max_iter: usize,
    #[serde(default)]
    linear: LinearName,
    #[serde(default = "default_linear_tol")]
    linear_tol: f64,
    #[serde(default = "default_sweeps")]
    max_sweeps: usize,
}

impl Default for RawSolver {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            linear: LinearName::Direct,
            linear_tol: default_linear_tol(),
            max_sweeps: default_sweeps(),
        }
    }
}

fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    100
}
fn default_linear_tol() -> f64 {
    1e-12
}
fn default_sweeps() -> usize {
    100_000
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawNorms {
    u_exponent: Option<f64>,
    m_exponent: Option<f64>,
}

/// A spatial field: a built-in profile or a node-value file.
#[derive(Debug, Deserialize, Clone, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSource {
    /// Constant `value` (default 1).
    Uniform {
        value: Option<f64>,
    },
    /// `amplitude * sum_j cos(2 pi (x_j - phase))`.
    Cosine {
        #[serde(default = "unit")]
        amplitude: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `exp(concentration * sum_j cos 2 pi (x_j - center))`, unit mass.
    Bump {
        center: f64,
        concentration: f64,
    },
    /// Periodized Gaussian of standard deviation `width`, unit mass.
    Gaussian {
        center: f64,
        width: f64,
    },
    File {
        path: PathBuf,
    },
}

fn unit() -> f64 {
    1.0
}

/// A convolution kernel profile.
#[derive(Debug, Deserialize, Clone, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSource {
    /// `offset + amplitude * mean_j cos(2 pi (x_j - y_j))`.
    Cosine {
        #[serde(default = "unit")]
        offset: f64,
        #[serde(default = "half")]
        amplitude: f64,
    },
    /// `F[m] = m`.
    Delta,
    /// Profile `K(z)` at displacement `coords(node)`, one value per node.
    File { path: PathBuf },
}

fn half() -> f64 {
    0.5
}

fn normalized(mut f: SpaceField) -> SpaceField {
    let mass = f.integral();
    f.values_mut().iter_mut().for_each(|v| *v /= mass);
    f
}

/// Read a node-value table: `index value` per line, `#` comments.
pub fn read_node_table(path: &Path, nodes: usize) -> Result<Vec<f64>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut values = vec![None; nodes];
    let where_ = |line: usize| format!("{}:{}", path.display(), line + 1);
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty());
        let (Some(i), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(field_err(&where_(ln), "expected `node value`"));
        };
        let i: usize = i
            .parse()
            .map_err(|_| field_err(&where_(ln), format!("bad node index `{i}`")))?;
        let v: f64 = v
            .parse()
            .map_err(|_| field_err(&where_(ln), format!("bad value `{v}`")))?;
        if i >= nodes {
            return Err(field_err(
                &where_(ln),
                format!("node {i} outside 0..{nodes}"),
            ));
        }
        if values[i].replace(v).is_some() {
            return Err(field_err(&where_(ln), format!("node {i} given twice")));
        }
    }
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.ok_or_else(|| field_err(&path.display().to_string(), format!("node {i} missing")))
        })
        .collect()
}

impl FieldSource {
    pub fn build(&self, grid: TorusGrid, base: &Path) -> Result<SpaceField, ConfigError> {
        let g = grid.spatial();
        let d = g.dim();
        let sum_axes =
            |x: [f64; 2], f: &dyn Fn(f64) -> f64| x.iter().take(d).map(|&c| f(c)).sum::<f64>();
        Ok(match self {
            FieldSource::Uniform { value } => SpaceField::constant(g, value.unwrap_or(1.0)),
            FieldSource::Cosine { amplitude, phase } => SpaceField::from_fn(g, |x| {
                amplitude * sum_axes(x, &|c| (2.0 * PI * (c - phase)).cos())
            }),
            FieldSource::Bump {
                center,
                concentration,
            } => normalized(SpaceField::from_fn(g, |x| {
                (concentration * sum_axes(x, &|c| (2.0 * PI * (c - center)).cos())).exp()
            })),
            FieldSource::Gaussian { center, width } => {
                if !(*width > 0.0) {
                    return Err(field_err("width", "must be > 0"));
                }
                normalized(SpaceField::from_fn(g, |x| {
                    x.iter()
                        .take(d)
                        .map(|&c| {
                            (-4..=4)
                                .map(|k| {
                                    let z = c - center - k as f64;
                                    (-z * z / (2.0 * width * width)).exp()
                                })
                                .sum::<f64>()
                        })
                        .product()
                }))
            }
            FieldSource::File { path } => {
                let values = read_node_table(&base.join(path), g.nodes())?;
                SpaceField::new(g, values).map_err(|e| field_err("path", e))?
            }
        })
    }
}

/// Parse a configuration file into a run configuration.
pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Parse configuration text; relative file paths resolve against `base`.
pub fn parse(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let mode = raw.mode;

    let rg = &raw.grid;
    let grid = match mode {
        Mode::FiniteHorizon => {
            let nt = rg
                .nt
                .ok_or_else(|| field_err("grid.nt", "required for mode = \"finite_horizon\""))?;
            let horizon = rg.horizon.ok_or_else(|| {
                field_err("grid.horizon", "required for mode = \"finite_horizon\"")
            })?;
            TorusGrid::finite_horizon(rg.dim, rg.n, nt, horizon)
        }
        Mode::Ergodic => {
            if rg.nt.is_some() || rg.horizon.is_some() {
                return Err(field_err(
                    "grid",
                    "ergodic mode takes neither nt nor horizon",
                ));
            }
            TorusGrid::ergodic(rg.dim, rg.n)
        }
    }
    .map_err(|e| field_err("grid", e))?;

    let rh = &raw.hamiltonian;
    let mut hamiltonian = match rh.kind {
        HamiltonianKindName::Power => {
            if rh.rbar.is_some() {
                return Err(field_err(
                    "hamiltonian.rbar",
                    "only for kind = \"truncated_power\"",
                ));
            }
            HamiltonianSpec::power(rh.gamma)
        }
        HamiltonianKindName::TruncatedPower => {
            let rbar = rh.rbar.ok_or_else(|| {
                field_err(
                    "hamiltonian.rbar",
                    "required for kind = \"truncated_power\"",
                )
            })?;
            HamiltonianSpec::truncated_power(rh.gamma, rbar)
        }
    }
    .map_err(|e| field_err("hamiltonian", e))?;
    if let Some(w) = &rh.weight {
        hamiltonian = hamiltonian
            .with_weight(w.build(grid, base)?)
            .map_err(|e| field_err("hamiltonian.weight", e))?;
    }
    let truncation = match rh.truncation {
        TruncationName::Fixed => {
            if rh.auto_factor.is_some() {
                return Err(field_err(
                    "hamiltonian.auto_factor",
                    "only for truncation = \"auto\"",
                ));
            }
            Truncation::Fixed
        }
        TruncationName::Auto => Truncation::Auto {
            factor: rh.auto_factor.unwrap_or(1.5),
        },
    };
    let constraint = PolicyConstraint::new(rh.policy_radius)
        .map_err(|e| field_err("hamiltonian.policy_radius", e))?;

    let rc = &raw.coupling;
    let sigma = rc.sigma;
    let mut coupling = match rc.kind {
        CouplingKindName::Nonlocal => {
            if rc.slope.is_some() {
                return Err(field_err("coupling.slope", "only for kind = \"local\""));
            }
            let kernel =
                match rc.kernel.as_ref().ok_or_else(|| {
                    field_err("coupling.kernel", "required for kind = \"nonlocal\"")
                })? {
                    KernelSource::Cosine { offset, amplitude } => {
                        Kernel::cosine(grid, *offset, *amplitude)
                    }
                    KernelSource::Delta => Kernel::delta(grid),
                    KernelSource::File { path } => {
                        let g = grid.spatial();
                        Kernel::convolution(g, read_node_table(&base.join(path), g.nodes())?)
                            .map_err(|e| field_err("coupling.kernel", e))?
                    }
                };
            CouplingSpec::nonlocal(kernel, sigma)
        }
        CouplingKindName::Local => {
            if rc.kernel.is_some() {
                return Err(field_err("coupling.kernel", "only for kind = \"nonlocal\""));
            }
            let slope = rc.slope.unwrap_or(1.0);
            if !(slope >= 0.0 && slope.is_finite()) {
                return Err(field_err(
                    "coupling.slope",
                    "must be >= 0 (monotone coupling)",
                ));
            }
            CouplingSpec::local(LocalFunction::Affine { slope }, sigma)
        }
        CouplingKindName::None => {
            if rc.kernel.is_some() || rc.slope.is_some() {
                return Err(field_err(
                    "coupling",
                    "kind = \"none\" takes no kernel or slope",
                ));
            }
            CouplingSpec::local(LocalFunction::Affine { slope: 0.0 }, sigma)
        }
    }
    .map_err(|e| field_err("coupling.sigma", e))?;
    if let Some(v) = &rc.potential {
        coupling = coupling
            .with_potential(v.build(grid, base)?)
            .map_err(|e| field_err("coupling.potential", e))?;
    }

    let mut cfg = match mode {
        Mode::FiniteHorizon => {
            let m0 = raw
                .data
                .m0
                .as_ref()
                .ok_or_else(|| field_err("data.m0", "required for mode = \"finite_horizon\""))?
                .build(grid, base)?;
            let u_t = raw
                .data
                .u_t
                .as_ref()
                .ok_or_else(|| field_err("data.u_t", "required for mode = \"finite_horizon\""))?
                .build(grid, base)?;
            RunConfig::finite_horizon(grid, hamiltonian, coupling, constraint, m0, u_t)
        }
        Mode::Ergodic => {
            if raw.data.m0.is_some() || raw.data.u_t.is_some() {
                return Err(field_err("data", "ergodic mode takes neither m0 nor u_t"));
            }
            RunConfig::ergodic(grid, hamiltonian, coupling, constraint)
        }
    };

    let rs = &raw.solver;
    cfg = cfg
        .with_tol(rs.tol)
        .with_max_iter(rs.max_iter)
        .with_truncation(truncation)
        .with_linear(match rs.linear {
            LinearName::Direct => LinearSolver::Direct,
            LinearName::GaussSeidel => LinearSolver::GaussSeidel {
                tol: rs.linear_tol,
                max_sweeps: rs.max_sweeps,
            },
        });

    let defaults = DifferenceNorms::default_for(&grid);
    let ue = raw.norms.u_exponent.unwrap_or(defaults.u.exponent);
    let me = raw.norms.m_exponent.unwrap_or(defaults.m.exponent);
    let norms = match mode {
        Mode::FiniteHorizon => DifferenceNorms::finite_horizon(ue, me),
        Mode::Ergodic => DifferenceNorms::ergodic(ue, me),
    }
    .map_err(|e| field_err("norms", e))?;
    cfg = cfg.with_norms(norms);

    cfg.validate().map_err(|e| match e {
        MfgError::NonconformingDensity(msg) => field_err("data.m0", msg),
        MfgError::InvalidParameter { name, reason } => field_err(&config_name(name), reason),
        other => field_err("config", other),
    })?;
    Ok(cfg)
}

fn config_name(name: &str) -> String {
    match name {
        "tol" | "max_iter" => format!("solver.{name}"),
        "m0" | "u_t" => format!("data.{name}"),
        "rbar" => "hamiltonian.auto_factor".into(),
        other => other.into(),
    }
}
