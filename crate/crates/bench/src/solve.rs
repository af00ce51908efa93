//! One point-source solve on a model file.

use crate::config::NpmlRule;
use crate::error::{BenchError, Result};
use polartrace::artifact::{build_system_cached, ArtifactStore, CacheStats};
use polartrace::discretization::{save_wavefield, Discretization, Helmholtz, VelocityModel};
use polartrace::krylov::{write_history, KrylovConfig, Method};
use polartrace::nested::{build_system, Backend, NestedConfig};
use polartrace::sie::{Preconditioner, SolveConfig};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::time::Instant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveRequest {
    pub model: PathBuf,
    pub freq_hz: f64,
    pub layers: usize,
    pub cells: usize,
    pub npml: NpmlRule,
    pub precond: Preconditioner,
    pub method: Method,
    pub tol: f64,
    pub inner_tol: f64,
    pub max_iter: usize,
    pub backend: Backend,
    pub disc: Discretization,
    /// Point source in relative coordinates of the physical domain.
    pub source: [f64; 2],
    pub artifacts: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub request: SolveRequest,
    pub nx: usize,
    pub nz: usize,
    pub npml: usize,
    pub omega: f64,
    pub iterations: f64,
    pub residual: f64,
    pub setup_s: f64,
    pub solve_s: f64,
    pub artifact_hits: usize,
    pub artifact_misses: usize,
}

/// Solves, then writes `wavefield.json` (+ payload), `residuals.csv` and
/// `summary.json` into the output directory.
pub fn run_solve(req: &SolveRequest) -> Result<SolveSummary> {
    if req.layers == 0 || req.cells == 0 || !(req.freq_hz > 0.0) {
        return Err(BenchError::Config(format!(
            "need layers, cells and frequency positive (got {}, {}, {})",
            req.layers, req.cells, req.freq_hz
        )));
    }
    let base = VelocityModel::load(&req.model)?;
    let npml = req.npml.resolve(base.grid().nx, base.grid().nz);
    let problem = Helmholtz::new(base.with_npml(npml)?, 2.0 * std::f64::consts::PI * req.freq_hz, None, req.disc)?;
    let grid = problem.grid().clone();
    let mut nested = NestedConfig { cells: req.cells, ..NestedConfig::default() };
    nested.inner.krylov.tol = req.inner_tol;
    nested.inner.krylov.max_iter = req.max_iter;
    let start = Instant::now();
    let (sie, stats) = match &req.artifacts {
        Some(dir) => build_system_cached(&problem, req.layers, req.backend, &nested, None, &ArtifactStore::open(dir)?)?,
        None => (build_system(&problem, req.layers, req.backend, &nested, None)?, CacheStats::default()),
    };
    let setup_s = start.elapsed().as_secs_f64();
    let pick = |t: f64, n: usize| ((t * (n + 1) as f64).round() as i64).clamp(1, n as i64);
    let f = problem.delta_source(pick(req.source[0], grid.nx), pick(req.source[1], grid.nz))?;
    let cfg = SolveConfig {
        krylov: KrylovConfig { method: req.method, tol: req.tol, max_iter: req.max_iter, restart: 0 },
        precond: req.precond,
    };
    let start = Instant::now();
    let sol = sie.solve_polarized(&f, &cfg)?;
    let solve_s = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(&req.out)?;
    save_wavefield(&req.out.join("wavefield.json"), &grid, &sol.u)?;
    write_history(std::fs::File::create(req.out.join("residuals.csv"))?, &sol.history, req.method.step())?;
    let summary = SolveSummary {
        request: req.clone(),
        nx: grid.nx,
        nz: grid.nz,
        npml,
        omega: problem.omega(),
        iterations: sol.iterations,
        residual: sol.residual,
        setup_s,
        solve_s,
        artifact_hits: stats.hits,
        artifact_misses: stats.misses,
    };
    std::fs::write(req.out.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}
