//! Experiment configuration.

use crate::error::{BenchError, Result};
use polartrace::discretization::{synthetic_model, Discretization, Grid, Helmholtz, SyntheticKind, VelocityModel};
use polartrace::green::CompressionPolicy;
use polartrace::krylov::{KrylovConfig, Method};
use polartrace::nested::{Backend, NestedConfig};
use polartrace::plr::PlrConfig;
use polartrace::sie::{Preconditioner, SolveConfig};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

/// Synthetic medium over a list of grid sizes on the unit-width domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    /// `[n_x, n_z]` interior sizes; `h = 1/(n_x+1)`.
    pub sizes: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSpec {
    /// Grid file header (JSON) with its binary or CSV payload.
    File(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeScaling {
    /// f ~ √n.
    Sqrt,
    /// f ~ n.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frequencies {
    /// Explicit list in Hz (f = ω/2π).
    Hz(Vec<f64>),
    /// One frequency per size: `base_hz · s(n_x / base_n)` with `s` the scaling.
    Scaled { rule: SizeScaling, base_hz: f64, base_n: usize },
}

impl Frequencies {
    pub fn for_size(&self, nx: usize) -> Vec<f64> {
        match self {
            Frequencies::Hz(list) => list.clone(),
            Frequencies::Scaled { rule, base_hz, base_n } => {
                let r = nx as f64 / *base_n as f64;
                vec![match rule {
                    SizeScaling::Sqrt => base_hz * r.sqrt(),
                    SizeScaling::Linear => base_hz * r,
                }]
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

/// PML width: `"auto"` (`max(10, ⌈log₂ N⌉)`) or a fixed count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NpmlRule {
    Fixed(usize),
    Auto(Auto),
}

impl Default for NpmlRule {
    fn default() -> Self {
        NpmlRule::Auto(Auto::Auto)
    }
}

impl std::str::FromStr for NpmlRule {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(NpmlRule::default());
        }
        s.parse().map(NpmlRule::Fixed).map_err(|_| BenchError::Config(format!("npml must be 'auto' or a count, got {s:?}")))
    }
}

impl NpmlRule {
    pub fn resolve(&self, nx: usize, nz: usize) -> usize {
        match self {
            NpmlRule::Fixed(n) => *n,
            NpmlRule::Auto(_) => Grid::default_npml(nx, nz),
        }
    }
}

/// Compression of interface operators; `max_rank` defaults to `⌈√ω⌉`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlrSettings {
    pub eps: f64,
    #[serde(default)]
    pub max_rank: Option<usize>,
    /// Rows at or above which an operator is compressed.
    pub threshold: usize,
}

impl PlrSettings {
    pub fn policy(&self, omega: f64) -> CompressionPolicy {
        let mut plr = PlrConfig::for_omega(omega);
        plr.eps = self.eps;
        if let Some(r) = self.max_rank {
            plr.max_rank = r;
        }
        CompressionPolicy { threshold: self.threshold, plr }
    }
}

fn default_disc() -> Discretization {
    Discretization::Fd
}
fn default_backends() -> Vec<Backend> {
    vec![Backend::Direct]
}
fn default_preconditioners() -> Vec<Preconditioner> {
    vec![Preconditioner::Gs]
}
fn default_methods() -> Vec<Method> {
    vec![Method::Gmres]
}
fn default_tol() -> f64 {
    1e-7
}
fn default_inner_tol() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    200
}
fn default_oracle_cap() -> usize {
    10_000
}
fn default_memory_cap() -> f64 {
    4096.0
}
fn default_repeats() -> usize {
    5
}
fn default_source() -> [f64; 2] {
    [0.5, 0.15]
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub frequencies: Frequencies,
    /// `[L, L_c]` pairs.
    pub partitions: Vec<[usize; 2]>,
    #[serde(default)]
    pub npml: NpmlRule,
    #[serde(default = "default_disc")]
    pub discretization: Discretization,
    #[serde(default = "default_backends")]
    pub backends: Vec<Backend>,
    #[serde(default = "default_preconditioners")]
    pub preconditioners: Vec<Preconditioner>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub plr: Option<PlrSettings>,
    #[serde(default)]
    pub seed: u64,
    /// Point source in relative coordinates of the physical domain.
    #[serde(default = "default_source")]
    pub source: [f64; 2],
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Offline artifact store reused across runs.
    #[serde(default)]
    pub artifacts: Option<PathBuf>,
    /// Interior unknowns up to which the global direct solve is the oracle.
    #[serde(default = "default_oracle_cap")]
    pub oracle_cap: usize,
    /// Rough working-set estimate above which an instance is skipped.
    #[serde(default = "default_memory_cap")]
    pub memory_cap_mb: f64,
    /// Timed operator-plus-preconditioner applications after one warm-up.
    #[serde(default = "default_repeats")]
    pub timing_repeats: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if let ModelSpec::File(p) = &cfg.model {
            if p.is_relative() {
                cfg.model = ModelSpec::File(path.parent().unwrap_or(Path::new(".")).join(p));
            }
        }
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        if let Some(a) = cfg.artifacts.as_mut().filter(|a| a.is_relative()) {
            *a = base.join(&*a);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn solve_config(&self, precond: Preconditioner, method: Method) -> SolveConfig {
        SolveConfig { krylov: KrylovConfig { method, tol: self.tol, max_iter: self.max_iter, restart: 0 }, precond }
    }

    pub fn nested_config(&self, cells: usize, omega: f64) -> NestedConfig {
        let mut c = NestedConfig { cells, policy: self.plr.map(|p| p.policy(omega)), ..NestedConfig::default() };
        c.inner.krylov.tol = self.inner_tol;
        c.inner.krylov.max_iter = self.max_iter;
        c
    }

    /// Interior sizes the sweep visits.
    pub fn sizes(&self) -> Result<Vec<[usize; 2]>> {
        match &self.model {
            ModelSpec::Synthetic(s) => Ok(s.sizes.clone()),
            ModelSpec::File(p) => {
                let m = VelocityModel::load(p)?;
                Ok(vec![[m.grid().nx, m.grid().nz]])
            }
        }
    }

    /// Medium for one size with the configured PML width.
    pub fn model(&self, size: [usize; 2]) -> Result<VelocityModel> {
        let npml = self.npml.resolve(size[0], size[1]);
        match &self.model {
            ModelSpec::Synthetic(s) => {
                let g = Grid::new(size[0], size[1], 1.0 / (size[0] + 1) as f64, npml)?;
                Ok(synthetic_model(s.kind, self.seed, &g)?)
            }
            ModelSpec::File(p) => Ok(VelocityModel::load(p)?.with_npml(npml)?),
        }
    }

    pub fn problem(&self, size: [usize; 2], freq_hz: f64) -> Result<Helmholtz> {
        Ok(Helmholtz::new(self.model(size)?, 2.0 * PI * freq_hz, None, self.discretization)?)
    }

    /// Interior node nearest to the relative source position.
    pub fn source_node(&self, grid: &Grid) -> (i64, i64) {
        let pick = |t: f64, n: usize| ((t * (n + 1) as f64).round() as i64).clamp(1, n as i64);
        (pick(self.source[0], grid.nx), pick(self.source[1], grid.nz))
    }

    /// Every listed combination must fit every grid.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        if !(self.tol > 0.0) || !(self.inner_tol > 0.0) {
            return bad(format!("tolerances must be positive (tol {}, inner {})", self.tol, self.inner_tol));
        }
        if self.max_iter == 0 || self.timing_repeats == 0 {
            return bad("max_iter and timing_repeats must be at least 1".into());
        }
        if !self.source.iter().all(|v| (0.0..=1.0).contains(v)) {
            return bad(format!("source {:?} outside the unit square", self.source));
        }
        if let Frequencies::Hz(list) = &self.frequencies {
            if let Some(f) = list.iter().find(|f| !(**f > 0.0)) {
                return bad(format!("frequency {f} is not positive"));
            }
        }
        if let Frequencies::Scaled { base_hz, base_n, .. } = &self.frequencies {
            if !(*base_hz > 0.0) || *base_n == 0 {
                return bad("scaled frequencies need base_hz > 0 and base_n > 0".into());
            }
        }
        if let Some(p) = &self.plr {
            if !(p.eps > 0.0 && p.eps < 1.0) || p.max_rank == Some(0) {
                return bad(format!("invalid PLR settings {p:?}"));
            }
        }
        if self.partitions.is_empty() {
            return bad("at least one partition is required".into());
        }
        for size in self.sizes()? {
            for &[l, lc] in &self.partitions {
                if l == 0 || lc == 0 || size[1] < 2 * l || size[0] < 2 * lc {
                    return bad(format!("partition {l}x{lc} does not fit a {}x{} grid", size[0], size[1]));
                }
            }
        }
        Ok(())
    }
}
