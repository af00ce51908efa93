//! Frequency and partition sweeps.

use crate::config::ExperimentConfig;
use crate::error::{BenchError, Result};
use num_complex::Complex64 as C64;
use polartrace::artifact::{build_system_cached, ArtifactStore};
use polartrace::discretization::{Grid, Helmholtz};
use polartrace::krylov::{write_history, Method};
use polartrace::linalg::rel_diff;
use polartrace::nested::Backend;
use polartrace::sie::{PolarizedStack, Preconditioner, Sie};
use polartrace::subdomain::solve_direct;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

/// One line of `results.csv`. `setup_s` and `iter_time_s` are wall clock;
/// every other column is a deterministic function of the configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub nx: usize,
    pub nz: usize,
    /// Interior unknowns `n_x · n_z`.
    pub n: usize,
    pub freq_hz: f64,
    pub omega: f64,
    pub layers: usize,
    pub cells: usize,
    pub backend: String,
    pub precond: String,
    pub method: String,
    /// Krylov iterations, BiCGstab half steps counted as 0.5.
    pub iterations: Option<f64>,
    pub setup_s: Option<f64>,
    /// Median wall time of one iteration's operator and preconditioner applications.
    pub iter_time_s: Option<f64>,
    /// Median operator-element touches of the same applications.
    pub touches_per_iter: Option<f64>,
    /// `‖H u − f‖ / ‖f‖`.
    pub residual: Option<f64>,
    /// Relative ℓ² error against the global direct solve.
    pub error: Option<f64>,
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Rough working set of one instance in MB: global operator, layer factors,
/// interface blocks, and the direct oracle when it runs.
pub fn memory_estimate_mb(grid: &Grid, layers: usize, backend: Backend, oracle: bool) -> f64 {
    let (nx, nz) = (grid.ext_nx() as f64, grid.ext_nz() as f64);
    let len = nx * nz;
    let layer_rows = nz / layers as f64 + 2.0 * grid.npml as f64;
    let factors = 3.0 * nx.min(layer_rows) * (len + 2.0 * grid.npml as f64 * nx * layers as f64);
    let blocks = match backend {
        Backend::Direct => 0.0,
        Backend::Precomputed => 16.0 * nx * nx * layers as f64,
        Backend::NestedPt | Backend::NestedLu => 32.0 * nx * nx * layers as f64,
    };
    let direct = if oracle { 3.0 * nx.min(nz) * len } else { 0.0 };
    16.0 * (9.0 * len + factors + blocks + direct) / 1e6
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Median wall time and touches of one Krylov iteration: operator plus
/// preconditioner applications, `1/step` of them per iteration.
pub fn time_iteration(sie: &Sie, precond: Preconditioner, method: Method, repeats: usize) -> Result<(f64, f64)> {
    let nx = sie.row_len();
    let x: Vec<C64> = (0..sie.polarized_len()).map(|i| C64::new((0.7 * i as f64).sin(), (1.3 * i as f64).cos())).collect();
    let x = PolarizedStack::from_flat(nx, x)?;
    let apply = || -> Result<()> {
        let y = sie.apply_m_polarized(&x)?;
        sie.precondition(precond, &y)?;
        Ok(())
    };
    apply()?;
    let (mut times, mut touches) = (Vec::with_capacity(repeats), Vec::with_capacity(repeats));
    for _ in 0..repeats {
        let t0 = sie.touches();
        let start = Instant::now();
        apply()?;
        times.push(start.elapsed().as_secs_f64());
        touches.push((sie.touches() - t0) as f64);
    }
    let per = 1.0 / method.step();
    Ok((median(times) * per, median(touches) * per))
}

fn history_name(row: &ResultRow) -> String {
    format!(
        "{}x{}_f{}_L{}x{}_{}_{}_{}.csv",
        row.nx, row.nz, row.freq_hz, row.layers, row.cells, row.backend, row.precond, row.method
    )
}

/// Solves every (size, frequency, partition, backend, preconditioner,
/// method) combination in order. Per-instance failures are recorded in the
/// status column and the sweep continues.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let residual_dir = cfg.output.join("residuals");
    std::fs::create_dir_all(&residual_dir)?;
    let store = cfg.artifacts.as_ref().map(ArtifactStore::open).transpose()?;
    let mut rows = Vec::new();
    for size in cfg.sizes()? {
        for freq in cfg.frequencies.for_size(size[0]) {
            sweep_instance(cfg, size, freq, store.as_ref(), &residual_dir, &mut rows)?;
        }
    }
    write_results(cfg, &rows)?;
    Ok(rows)
}

/// Rows of one (size, frequency) pair; only i/o errors abort.
fn sweep_instance(
    cfg: &ExperimentConfig,
    size: [usize; 2],
    freq: f64,
    store: Option<&ArtifactStore>,
    residual_dir: &Path,
    rows: &mut Vec<ResultRow>,
) -> Result<()> {
    let template = |layers: usize, cells: usize, backend: Backend, precond: Preconditioner, method: Method, status: String| ResultRow {
        nx: size[0],
        nz: size[1],
        n: size[0] * size[1],
        freq_hz: freq,
        omega: 2.0 * std::f64::consts::PI * freq,
        layers,
        cells,
        backend: backend.name().into(),
        precond: precond.name().into(),
        method: method.name().into(),
        iterations: None,
        setup_s: None,
        iter_time_s: None,
        touches_per_iter: None,
        residual: None,
        error: None,
        status,
    };
    let combos = || {
        let mut out = Vec::new();
        for &[layers, lc] in &cfg.partitions {
            for &backend in &cfg.backends {
                let cells = if matches!(backend, Backend::NestedPt | Backend::NestedLu) { lc } else { 1 };
                if out.iter().any(|&(l, c, b)| (l, c, b) == (layers, cells, backend)) {
                    continue;
                }
                out.push((layers, cells, backend));
            }
        }
        out
    };
    let fail_all = |rows: &mut Vec<ResultRow>, status: &str| {
        for (l, c, b) in combos() {
            for &p in &cfg.preconditioners {
                for &m in &cfg.methods {
                    rows.push(template(l, c, b, p, m, status.to_string()));
                }
            }
        }
    };
    let problem = match cfg.problem(size, freq) {
        Ok(p) => p,
        Err(e) => {
            fail_all(rows, &format!("failed: {e}"));
            return Ok(());
        }
    };
    let grid = problem.grid().clone();
    let (p, q) = cfg.source_node(&grid);
    let f = problem.delta_source(p, q)?;
    let use_oracle = size[0] * size[1] <= cfg.oracle_cap;
    let oracle = if use_oracle { oracle_solution(&problem, &f) } else { None };
    for (layers, cells, backend) in combos() {
        let mem = memory_estimate_mb(&grid, layers, backend, use_oracle);
        let push_all = |rows: &mut Vec<ResultRow>, status: String| {
            for &pc in &cfg.preconditioners {
                for &m in &cfg.methods {
                    rows.push(template(layers, cells, backend, pc, m, status.clone()));
                }
            }
        };
        if mem > cfg.memory_cap_mb {
            push_all(rows, format!("skipped: memory estimate {mem:.0} MB over cap {:.0} MB", cfg.memory_cap_mb));
            continue;
        }
        let nested = cfg.nested_config(cells.max(1), problem.omega());
        let policy = cfg.plr.map(|s| s.policy(problem.omega()));
        let start = Instant::now();
        let built = match store {
            Some(s) => build_system_cached(&problem, layers, backend, &nested, policy.as_ref(), s).map(|(sie, _)| sie),
            None => polartrace::nested::build_system(&problem, layers, backend, &nested, policy.as_ref()),
        };
        let setup = start.elapsed().as_secs_f64();
        let sie = match built {
            Ok(s) => s,
            Err(e) => {
                push_all(rows, format!("failed: {e}"));
                continue;
            }
        };
        for &pc in &cfg.preconditioners {
            for &method in &cfg.methods {
                let mut row = template(layers, cells, backend, pc, method, String::new());
                row.setup_s = Some(setup);
                let solved = sie.solve_polarized(&f, &cfg.solve_config(pc, method));
                let history = match solved {
                    Ok(sol) => {
                        row.iterations = Some(sol.iterations);
                        row.residual = Some(sol.residual);
                        row.error = oracle.as_ref().map(|u| rel_diff(&sol.u, u));
                        row.status = "ok".into();
                        Some(sol.history)
                    }
                    Err(polartrace::Error::NotConverged { iterations, residual, history }) => {
                        row.iterations = Some(iterations);
                        row.status = format!("not converged (preconditioned residual {residual:.3e})");
                        Some(history)
                    }
                    Err(e) => {
                        row.status = format!("failed: {e}");
                        None
                    }
                };
                if let Some(h) = history {
                    let file = std::fs::File::create(residual_dir.join(history_name(&row)))?;
                    write_history(file, &h, method.step())?;
                }
                if row.is_ok() {
                    match time_iteration(&sie, pc, method, cfg.timing_repeats) {
                        Ok((t, touches)) => {
                            row.iter_time_s = Some(t);
                            row.touches_per_iter = Some(touches);
                        }
                        Err(e) => row.status = format!("timing failed: {e}"),
                    }
                }
                rows.push(row);
            }
        }
    }
    Ok(())
}

/// `f` is already an assembled right-hand side (`delta_source`).
fn oracle_solution(problem: &Helmholtz, f: &[C64]) -> Option<Vec<C64>> {
    solve_direct(problem, f).ok()
}

fn write_results(cfg: &ExperimentConfig, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(cfg.output.join("results.csv"))?;
    if rows.is_empty() {
        w.write_record(RESULT_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let meta = serde_json::json!({
        "format": 1,
        "iterations": "BiCGstab half steps count 0.5; GMRES steps count 1",
        "iter_time_s": "median wall time over timing_repeats iterations after one warm-up; one iteration is one operator plus one preconditioner application for GMRES and two of each for BiCGstab",
        "touches_per_iter": "operator-element touches of the same applications, median over the timed repeats",
        "error": "relative l2 error against the global direct solve, computed when n <= oracle_cap",
        "config": cfg,
    });
    std::fs::write(cfg.output.join("results.meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub const RESULT_COLUMNS: [&str; 17] = [
    "nx",
    "nz",
    "n",
    "freq_hz",
    "omega",
    "layers",
    "cells",
    "backend",
    "precond",
    "method",
    "iterations",
    "setup_s",
    "iter_time_s",
    "touches_per_iter",
    "residual",
    "error",
    "status",
];

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(BenchError::from)).collect()
}
