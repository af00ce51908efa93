use clap::{Parser, Subcommand};
use polartrace::discretization::Discretization;
use polartrace::krylov::Method;
use polartrace::nested::Backend;
use polartrace::sie::Preconditioner;
use polartrace_bench::config::NpmlRule;
use polartrace_bench::solve::{run_solve, SolveRequest};
use polartrace_bench::{fit, spectrum, sweep, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "polartrace", version, about = "Nested polarized-traces Helmholtz solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Point-source solve on a model file.
    Solve {
        #[arg(long)]
        model: PathBuf,
        /// Frequency in Hz (ω = 2πf).
        #[arg(long)]
        freq: f64,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = 2)]
        cells: usize,
        /// `auto` or a point count.
        #[arg(long, default_value = "auto")]
        npml: NpmlRule,
        #[arg(long, default_value = "gs")]
        precond: Preconditioner,
        #[arg(long, default_value = "gmres")]
        krylov: Method,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        #[arg(long, default_value_t = 1e-6)]
        inner_tol: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        #[arg(long, default_value = "nested-lu")]
        backend: Backend,
        /// `fd` or `q1`.
        #[arg(long, default_value = "fd", value_parser = parse_disc)]
        disc: Discretization,
        /// Relative source position `x,z` in the physical domain.
        #[arg(long, default_value = "0.5,0.15", value_parser = parse_pair)]
        source: [f64; 2],
        /// Offline artifact directory reused across runs.
        #[arg(long)]
        artifacts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter sweep writing results.csv and residual histories.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Preconditioned spectra of every configured instance.
    Spectrum {
        #[arg(long)]
        config: PathBuf,
    },
    /// Log-log scaling fits of a results table.
    Fit {
        #[arg(long)]
        table: PathBuf,
    },
}

fn parse_disc(s: &str) -> Result<Discretization, String> {
    match s {
        "fd" => Ok(Discretization::Fd),
        "q1" => Ok(Discretization::q1()),
        other => Err(format!("unknown discretization {other:?} (fd or q1)")),
    }
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected x,z, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok([p(a)?, p(b)?])
}

fn run(cli: Cli) -> polartrace_bench::Result<()> {
    match cli.command {
        Command::Solve {
            model,
            freq,
            layers,
            cells,
            npml,
            precond,
            krylov,
            tol,
            inner_tol,
            max_iter,
            backend,
            disc,
            source,
            artifacts,
            out,
        } => {
            let req = SolveRequest {
                model,
                freq_hz: freq,
                layers,
                cells,
                npml,
                precond,
                method: krylov,
                tol,
                inner_tol,
                max_iter,
                backend,
                disc,
                source,
                artifacts,
                out,
            };
            let s = run_solve(&req)?;
            println!(
                "{}x{} (npml {}), f = {} Hz: {} iterations, residual {:.3e}, setup {:.2} s, solve {:.2} s",
                s.nx, s.nz, s.npml, freq, s.iterations, s.residual, s.setup_s, s.solve_s
            );
        }
        Command::Sweep { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rows = sweep::run_sweep(&cfg)?;
            let ok = rows.iter().filter(|r| r.is_ok()).count();
            println!("{} rows ({ok} ok) -> {}", rows.len(), cfg.output.join("results.csv").display());
        }
        Command::Spectrum { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            for r in spectrum::dump_spectra(&cfg)? {
                match (r.gs_metric, r.jac_metric) {
                    (Some(g), Some(j)) => println!(
                        "{}x{} f={} L={} dim={}: clustered gs {:.3} jac {:.3}",
                        r.nx, r.nz, r.freq_hz, r.layers, r.dimension, g, j
                    ),
                    _ => println!("{}x{} f={} L={}: {}", r.nx, r.nz, r.freq_hz, r.layers, r.status),
                }
            }
        }
        Command::Fit { table } => {
            let (fits, cmp) = fit::fit_table(&table)?;
            for f in fits {
                println!(
                    "{} {}/{}/{} L{}x{}: slope {:.3} [{:.3}, {:.3}] over {} sizes",
                    f.metric, f.backend, f.precond, f.method, f.layers, f.cells, f.slope, f.ci_low, f.ci_high, f.sizes
                );
            }
            for c in cmp {
                println!(
                    "{} {}/{} L{}x{}: slopes overlap {}, nested-lu level {:.3e} vs nested-pt {:.3e}",
                    c.metric, c.precond, c.method, c.layers, c.cells, c.slopes_overlap, c.lu_level, c.pt_level
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
