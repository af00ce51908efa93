//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL ...` line
//! and then asserts it. Tests share one lock so lines and memory use do not
//! interleave.

use num_complex::Complex64 as C64;
use polartrace::discretization::{synthetic_model, Discretization, Grid, Helmholtz, SyntheticKind};
use polartrace::green::{CompressionPolicy, DirectGreen, GreenBlockSet, GreenIntegral, InterfaceOperator, ALL_ROLES};
use polartrace::krylov::{KrylovConfig, Method};
use polartrace::linalg::{norm2, rel_diff};
use polartrace::nested::{build_system, Backend, InnerMethod, NestedConfig, NestedLayer};
use polartrace::plr::PlrConfig;
use polartrace::sie::{assemble_m, assemble_polarized, dense_layer_blocks, PolarizedStack, PrecomputedLayer, Preconditioner, Sie, SolveConfig, TraceStack};
use polartrace::subdomain::{build_layer, partition_layers, solve_direct};
use polartrace_bench::{fit, spectrum, sweep, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn solve_cfg(precond: Preconditioner, method: Method, tol: f64) -> SolveConfig {
    SolveConfig { krylov: KrylovConfig { method, tol, max_iter: 400, restart: 0 }, precond }
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<C64> {
    (0..len).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

/// ω for a given number of points per wavelength at the slowest speed.
fn omega_for(model_c_min: f64, n: usize, ppw: f64) -> f64 {
    2.0 * PI * model_c_min * (n + 1) as f64 / ppw
}

#[derive(Clone, Copy, Debug)]
struct Instance {
    kind: SyntheticKind,
    seed: u64,
    nx: usize,
    nz: usize,
    layers: usize,
    cells: usize,
    disc: Discretization,
    ppw: f64,
}

impl Instance {
    fn problem(&self) -> Helmholtz {
        let g = Grid::new(self.nx, self.nz, 1.0 / (self.nx + 1) as f64, Grid::default_npml(self.nx, self.nz)).unwrap();
        let m = synthetic_model(self.kind, self.seed, &g).unwrap();
        let omega = omega_for(m.c_min(), self.nx.min(self.nz), self.ppw);
        Helmholtz::new(m, omega, None, self.disc).unwrap()
    }
}

fn random_instances(count: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let kinds = [SyntheticKind::VerticalGradient, SyntheticKind::RandomSmooth, SyntheticKind::LayeredInclusions];
    (0..count)
        .map(|i| Instance {
            kind: kinds[rng.random_range(0..kinds.len())],
            seed: rng.random_range(0..1000),
            nx: rng.random_range(40..=96),
            nz: rng.random_range(40..=96),
            layers: rng.random_range(2..=4),
            cells: rng.random_range(1..=3),
            disc: if i % 2 == 0 { Discretization::Fd } else { Discretization::q1() },
            ppw: rng.random_range(6.0..12.0),
        })
        .collect()
}

const C1_KTOL: f64 = 1e-9;
const C1_BOUND: f64 = 1e-7;
const C1_SECONDS: f64 = 120.0;

#[test]
fn criterion_1_exact_sie_reduction() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (i, inst) in random_instances(20).iter().enumerate() {
        let h = inst.problem();
        let g = h.grid();
        let p = rng.random_range(1..=g.nx as i64);
        let q = rng.random_range(1..=g.nz as i64);
        let f = h.delta_source(p, q).unwrap();
        let reference = solve_direct(&h, &f).unwrap();
        // A single cell per layer is the layer solve itself.
        let backend = if inst.cells == 1 { Backend::Direct } else { Backend::NestedLu };
        let nested = NestedConfig { cells: inst.cells, ..NestedConfig::default() };
        let outcome = build_system(&h, inst.layers, backend, &nested, None)
            .and_then(|sie| sie.solve_polarized(&f, &solve_cfg(Preconditioner::Gs, Method::Gmres, C1_KTOL)));
        match outcome {
            Ok(sol) => {
                let err = rel_diff(&sol.u, &reference);
                worst = worst.max(err);
                if !(err <= C1_BOUND) {
                    failures.push(format!("#{i} {inst:?}: error {err:.2e}"));
                }
            }
            Err(e) => failures.push(format!("#{i} {inst:?}: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs <= C1_SECONDS;
    report(
        1,
        pass,
        format!("20 instances, worst relative error {worst:.2e} (bound {C1_BOUND:.0e}), {secs:.1} s (cap {C1_SECONDS} s) {failures:?}"),
    );
}

const C2_BOUND: f64 = 1e-11;
const C2_MAX_DIM: usize = 2000;
const C2_SECONDS: f64 = 60.0;

#[test]
fn criterion_2_matrix_free_matches_assembled() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for inst in random_instances(20) {
        let h = inst.problem();
        let sie = Sie::direct(&h, inst.layers).unwrap();
        if sie.polarized_len() > C2_MAX_DIM {
            skipped += 1;
            continue;
        }
        let p = partition_layers(h.grid(), inst.layers).unwrap();
        let blocks: Vec<_> = (0..inst.layers).map(|l| dense_layer_blocks(&build_layer(&h, &p, l).unwrap()).unwrap()).collect();
        let nx = sie.row_len();
        let v = TraceStack::from_vec(nx, random_vec(&mut rng, 2 * (inst.layers - 1) * nx)).unwrap();
        let dense = assemble_m(&blocks, nx).matvec(v.as_slice());
        worst = worst.max(rel_diff(sie.apply_m(&v).unwrap().as_slice(), &dense));
        let x = PolarizedStack::from_flat(nx, random_vec(&mut rng, sie.polarized_len())).unwrap();
        let dense = assemble_polarized(&blocks, nx).matvec(&x.to_flat());
        worst = worst.max(rel_diff(&sie.apply_m_polarized(&x).unwrap().to_flat(), &dense));
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = checked > 0 && worst <= C2_BOUND && secs <= C2_SECONDS;
    report(
        2,
        pass,
        format!("{checked} instances ({skipped} above dimension {C2_MAX_DIM}), worst {worst:.2e} (bound {C2_BOUND:.0e}), {secs:.1} s"),
    );
}

const C3_SIZES: [usize; 5] = [15, 30, 60, 120, 240];
const C3_PPW: f64 = 10.0;
const C3_TOL: f64 = 1e-7;
const C3_MAX_GS: f64 = 20.0;
const C3_MAX_GROWTH: f64 = 4.0;
const C3_BICG_RATIO: f64 = 0.75;

#[test]
fn criterion_3_preconditioner_quality() {
    let _g = serial();
    let mut lines = Vec::new();
    let mut pass = true;
    let mut prev_gs: Option<f64> = None;
    for n in C3_SIZES {
        // nz = 2 nx, f ~ n, ten rows per layer so the layer count grows with n.
        let inst = Instance {
            kind: SyntheticKind::LayeredInclusions,
            seed: 3,
            nx: n,
            nz: 2 * n,
            layers: n / 5,
            cells: 1,
            disc: Discretization::Fd,
            ppw: C3_PPW,
        };
        let h = inst.problem();
        let g = h.grid();
        let f = h.delta_source((g.nx as i64 + 1) / 2, (g.nz as i64 + 1) / 8).unwrap();
        let sie = Sie::direct(&h, inst.layers).unwrap();
        let mut its = [[f64::NAN; 2]; 2];
        for (a, precond) in [Preconditioner::Gs, Preconditioner::Jac].into_iter().enumerate() {
            for (b, method) in [Method::Gmres, Method::Bicgstab].into_iter().enumerate() {
                its[a][b] = match sie.solve_polarized(&f, &solve_cfg(precond, method, C3_TOL)) {
                    Ok(s) => s.iterations,
                    Err(_) => f64::INFINITY,
                };
            }
        }
        let [[gs_g, gs_b], [jac_g, jac_b]] = its;
        let growth = prev_gs.map(|p| gs_g - p);
        let ok = gs_g <= C3_MAX_GS
            && growth.is_none_or(|d| d <= C3_MAX_GROWTH)
            && gs_g <= jac_g
            && gs_b <= jac_b
            && gs_b <= C3_BICG_RATIO * gs_g
            && jac_b <= C3_BICG_RATIO * jac_g;
        pass &= ok;
        lines.push(format!(
            "{}x{} f={:.2}Hz L={}: gs gmres {gs_g} bicgstab {gs_b}, jac gmres {jac_g} bicgstab {jac_b}{}",
            g.nx,
            g.nz,
            h.omega() / (2.0 * PI),
            inst.layers,
            if ok { "" } else { " <- violates" }
        ));
        prev_gs = Some(gs_g);
    }
    report(
        3,
        pass,
        format!(
            "(gs gmres <= {C3_MAX_GS}, growth <= {C3_MAX_GROWTH}/doubling, gs <= jac, bicgstab <= {C3_BICG_RATIO} gmres)\n  {}",
            lines.join("\n  ")
        ),
    );
}

const C4_SECONDS: f64 = 60.0;

#[test]
fn criterion_4_spectrum_clustering() {
    let _g = serial();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&configs().join("spectrum.json")).unwrap();
    cfg.output = dir.path().to_path_buf();
    let rows = spectrum::dump_spectra(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut pass = rows.len() == 3 && secs <= C4_SECONDS;
    let mut lines = Vec::new();
    for r in &rows {
        let ok = matches!((r.gs_metric, r.jac_metric), (Some(g), Some(j)) if g > j);
        pass &= ok;
        lines.push(format!("{}x{} L={}: gs {:?} jac {:?}", r.nx, r.nz, r.layers, r.gs_metric, r.jac_metric));
    }
    report(4, pass, format!("{} instances, {secs:.1} s: {}", rows.len(), lines.join("; ")));
}

const C5_INNER_TOL: f64 = 1e-7;
const C5_INNER_BOUND: f64 = 1e-6;
const C5_BACKEND_BOUND: f64 = 1e-5;

#[test]
fn criterion_5_nested_equivalence() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut inner_worst, mut backend_worst, mut outer_worst) = (0.0f64, 0.0f64, 0.0f64);
    for disc in [Discretization::Fd, Discretization::q1()] {
        let inst = Instance { kind: SyntheticKind::RandomSmooth, seed: 5, nx: 48, nz: 54, layers: 3, cells: 3, disc, ppw: 8.0 };
        let h = inst.problem();
        let p = partition_layers(h.grid(), inst.layers).unwrap();
        let cfg = |method| {
            let mut c = NestedConfig { cells: inst.cells, method, ..NestedConfig::default() };
            c.inner.krylov.tol = C5_INNER_TOL;
            c
        };
        for l in 0..inst.layers {
            let ws = build_layer(&h, &p, l).unwrap();
            let rhs = random_vec(&mut rng, ws.len());
            let exact = ws.local_solve(&rhs).unwrap();
            let pt = NestedLayer::build(&h, &p, l, &cfg(InnerMethod::Pt)).unwrap().inner_solve(&rhs).unwrap();
            let lu = NestedLayer::build(&h, &p, l, &cfg(InnerMethod::Lu)).unwrap().inner_solve(&rhs).unwrap();
            inner_worst = inner_worst.max(rel_diff(&pt, &exact)).max(rel_diff(&lu, &exact));
            backend_worst = backend_worst.max(rel_diff(&pt, &lu));
        }
        let g = h.grid();
        let f = h.delta_source((g.nx as i64) / 3, (g.nz as i64) / 4).unwrap();
        let outer = solve_cfg(Preconditioner::Gs, Method::Gmres, 1e-10);
        let direct = Sie::direct(&h, inst.layers).unwrap().solve_polarized(&f, &outer).unwrap().u;
        for backend in [Backend::NestedPt, Backend::NestedLu] {
            let u = build_system(&h, inst.layers, backend, &cfg(InnerMethod::Pt), None).unwrap().solve_polarized(&f, &outer).unwrap().u;
            outer_worst = outer_worst.max(rel_diff(&u, &direct));
        }
    }
    let outer_bound = 10.0 * C5_INNER_TOL;
    let pass = inner_worst <= C5_INNER_BOUND && backend_worst <= C5_BACKEND_BOUND && outer_worst <= outer_bound;
    report(
        5,
        pass,
        format!(
            "inner vs layer LU {inner_worst:.2e} (bound {C5_INNER_BOUND:.0e}), pt vs lu {backend_worst:.2e} (bound {C5_BACKEND_BOUND:.0e}), outer nested vs direct {outer_worst:.2e} (bound {outer_bound:.0e})"
        ),
    );
}

const C6_BOUND: f64 = 1e-8;
const C6_PANEL_SETS: usize = 10;

#[test]
fn criterion_6_factorization_identity() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut applications = 0;
    for disc in [Discretization::Fd, Discretization::q1()] {
        let inst = Instance { kind: SyntheticKind::LayeredInclusions, seed: 6, nx: 44, nz: 60, layers: 3, cells: 3, disc, ppw: 8.0 };
        let h = inst.problem();
        let p = partition_layers(h.grid(), inst.layers).unwrap();
        let cfg = NestedConfig { cells: inst.cells, method: InnerMethod::Lu, ..NestedConfig::default() };
        for l in 0..inst.layers {
            let direct = DirectGreen::new(Arc::new(build_layer(&h, &p, l).unwrap())).unwrap();
            let factored = NestedLayer::build(&h, &p, l, &cfg).unwrap();
            let nx = direct.row_len();
            for _ in 0..C6_PANEL_SETS {
                let v: Vec<Vec<C64>> = (0..4).map(|_| random_vec(&mut rng, nx)).collect();
                let src = [Some(&v[0][..]), Some(&v[1][..]), Some(&v[2][..]), Some(&v[3][..])];
                let want = direct.apply(src, ALL_ROLES).unwrap();
                let got = factored.apply(src, ALL_ROLES).unwrap();
                let err = norm2(&got.concat().iter().zip(want.concat()).map(|(a, b)| a - b).collect::<Vec<_>>()) / norm2(&want.concat());
                worst = worst.max(err);
                applications += 1;
            }
        }
    }
    let pass = worst <= C6_BOUND;
    report(6, pass, format!("{applications} panel sets over 6 layers, worst {worst:.2e} (bound {C6_BOUND:.0e})"));
}

const C7_EPS: f64 = 1e-8;
const C7_THRESHOLD: usize = 64;
const C7_SOLUTION_BOUND: f64 = 1e-6;

#[test]
fn criterion_7_plr_certification() {
    let _g = serial();
    let inst = Instance { kind: SyntheticKind::LayeredInclusions, seed: 7, nx: 96, nz: 96, layers: 3, cells: 1, disc: Discretization::Fd, ppw: 10.0 };
    let h = inst.problem();
    let policy = CompressionPolicy { threshold: C7_THRESHOLD, plr: PlrConfig { eps: C7_EPS, ..PlrConfig::for_omega(h.omega()) } };
    let p = partition_layers(h.grid(), inst.layers).unwrap();
    let (mut compressed, mut worst, mut failed) = (0, 0.0f64, 0);
    for l in 0..inst.layers {
        let ws = Arc::new(build_layer(&h, &p, l).unwrap());
        let layer = PrecomputedLayer::new(ws.clone(), inst.layers, Some(&policy)).unwrap();
        let dense = GreenBlockSet::compute(&ws, ALL_ROLES, None).unwrap();
        for t in 0..4 {
            for s in 0..4 {
                if let (Some(InterfaceOperator::Plr(m)), Some(d)) = (layer.blocks().block(t, s), dense.block(t, s)) {
                    let bound = m.certify(&d.to_dense(), 7 + (t * 4 + s) as u64);
                    worst = worst.max(bound);
                    compressed += 1;
                    if !(bound <= C7_EPS) {
                        failed += 1;
                    }
                }
            }
        }
    }
    let f = h.delta_source(48, 20).unwrap();
    let cfg = solve_cfg(Preconditioner::Gs, Method::Gmres, 1e-10);
    let plain = Sie::precomputed(&h, inst.layers, None).unwrap().solve_polarized(&f, &cfg).unwrap().u;
    let packed = Sie::precomputed(&h, inst.layers, Some(&policy)).unwrap().solve_polarized(&f, &cfg).unwrap().u;
    let change = rel_diff(&packed, &plain);
    let pass = compressed > 0 && failed == 0 && change <= C7_SOLUTION_BOUND;
    report(
        7,
        pass,
        format!(
            "{compressed} compressed blocks, {failed} above eps, worst certified error {worst:.2e} (eps {C7_EPS:.0e}); solution change {change:.2e} (bound {C7_SOLUTION_BOUND:.0e})"
        ),
    );
}

#[test]
fn criterion_8_scaling_slope() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&configs().join("scaling.json")).unwrap();
    cfg.output = dir.path().to_path_buf();
    let rows = sweep::run_sweep(&cfg).unwrap();
    let all_ok = rows.iter().all(|r| r.is_ok());
    let fits = fit::fit_scaling(&rows).unwrap();
    let cmp = fit::compare_nested(&rows, &fits);
    let touches: Vec<_> = fits.iter().filter(|f| f.metric == "touches_per_iter").collect();
    let slopes: Vec<String> =
        touches.iter().map(|f| format!("{} {:.3} [{:.3}, {:.3}]", f.backend, f.slope, f.ci_low, f.ci_high)).collect();
    let c = cmp.iter().find(|c| c.metric == "touches_per_iter");
    let pass = all_ok
        && touches.len() == 2
        && touches.iter().all(|f| f.slope < 1.0 && f.sizes >= fit::MIN_SIZES)
        && c.is_some_and(|c| c.slopes_overlap && c.lu_cheaper);
    let times: Vec<String> = fits.iter().filter(|f| f.metric == "iter_time_s").map(|f| format!("{} {:.3}", f.backend, f.slope)).collect();
    report(
        8,
        pass,
        format!(
            "{} rows, touch exponents {}; overlap {:?}, level lu {:.3e} vs pt {:.3e}; wall-clock exponents (informational) {}",
            rows.len(),
            slopes.join(", "),
            c.map(|c| c.slopes_overlap),
            c.map_or(f64::NAN, |c| c.lu_level),
            c.map_or(f64::NAN, |c| c.pt_level),
            times.join(", ")
        ),
    );
}

const C9_COARSE: [usize; 3] = [15, 31, 63];
const C9_REFERENCE: usize = 191;
const C9_FREQ_HZ: f64 = 2.0;
const C9_MIN_ORDER: f64 = 1.8;

/// Smooth medium and Gaussian source on a grid of spacing 1/(n+1), PML of
/// fixed physical width 1/4. Returns the field on the nodes of the coarsest grid.
fn smooth_solution(n: usize, disc: Discretization) -> Vec<C64> {
    let g = Grid::new(n, n, 1.0 / (n + 1) as f64, (n + 1) / 4).unwrap();
    let m = synthetic_model(SyntheticKind::VerticalGradient, 0, &g).unwrap();
    let h = Helmholtz::new(m, 2.0 * PI * C9_FREQ_HZ, None, disc).unwrap();
    let mut f = vec![C64::new(0.0, 0.0); g.ext_len()];
    let lo = -(g.npml as i64) + 1;
    for q in lo..=(g.nz + g.npml) as i64 {
        for p in lo..=(g.nx + g.npml) as i64 {
            let (x, z) = g.coord(p, q);
            let r2 = (x - 0.45).powi(2) + (z - 0.4).powi(2);
            f[g.index(p, q).unwrap()] = C64::new((-r2 / (2.0 * 0.06f64.powi(2))).exp(), 0.0);
        }
    }
    let u = solve_direct(&h, &h.load_vector(&f).unwrap()).unwrap();
    let coarse = C9_COARSE[0] + 1;
    let stride = ((n + 1) / coarse) as i64;
    let mut out = Vec::new();
    for q in 1..coarse as i64 {
        for p in 1..coarse as i64 {
            out.push(u[g.index(p * stride, q * stride).unwrap()]);
        }
    }
    out
}

#[test]
fn criterion_9_discretization_order() {
    let _g = serial();
    let mut pass = true;
    let mut lines = Vec::new();
    for disc in [Discretization::Fd, Discretization::q1()] {
        let reference = smooth_solution(C9_REFERENCE, disc);
        let errors: Vec<f64> = C9_COARSE.iter().map(|&n| rel_diff(&smooth_solution(n, disc), &reference)).collect();
        let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        let ok = orders.iter().all(|&p| p >= C9_MIN_ORDER);
        pass &= ok;
        lines.push(format!(
            "{}: errors {} orders {}",
            disc.name(),
            errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(" "),
            orders.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>().join(" ")
        ));
    }
    report(9, pass, format!("(min order {C9_MIN_ORDER}, reference n={C9_REFERENCE}) {}", lines.join("; ")));
}
