use num_complex::Complex64 as C64;
use polartrace::discretization::{make_pml_sigma, synthetic_model, Axis, Discretization, Grid, Helmholtz, PmlProfile, SyntheticKind};
use polartrace::green::{grf_reconstruct, DirectGreen, GreenIntegral, RoleCouplings, ALL_ROLES};
use polartrace::krylov::{self, KrylovConfig, Method};
use polartrace::linalg::{norm2, rel_diff, Mat};
use polartrace::nested::swap_axes;
use polartrace::plr::{compress, PlrConfig};
use polartrace::sie::{assemble_m, assemble_polarized, dense_layer_blocks, PolarizedStack, Sie, SolveConfig, TraceStack};
use polartrace::subdomain::{build_layer, partition_layers, solve_direct};
use proptest::prelude::*;
use std::sync::Arc;

fn kind_strategy() -> impl Strategy<Value = SyntheticKind> {
    prop_oneof![
        Just(SyntheticKind::VerticalGradient),
        Just(SyntheticKind::RandomSmooth),
        Just(SyntheticKind::LayeredInclusions),
    ]
}

fn disc_strategy() -> impl Strategy<Value = Discretization> {
    prop_oneof![Just(Discretization::Fd), Just(Discretization::q1())]
}

fn problem(kind: SyntheticKind, seed: u64, nx: usize, nz: usize, omega: f64, disc: Discretization) -> Helmholtz {
    let g = Grid::new(nx, nz, 1.0 / (nx + 1) as f64, 6).unwrap();
    Helmholtz::new(synthetic_model(kind, seed, &g).unwrap(), omega, None, disc).unwrap()
}

fn vector(len: usize, seed: u64) -> Vec<C64> {
    let s = seed as f64 * 0.37 + 0.11;
    (0..len).map(|i| C64::new((i as f64 * (0.9 + s)).sin(), (i as f64 * 0.41 + s).cos())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pml_profile_vanishes_inside_and_is_continuous(strength in 1.0f64..50.0, npml in 1usize..20, n in 4usize..40) {
        let g = Grid::new(n, n + 3, 1.0 / (n + 1) as f64, npml).unwrap();
        for axis in [Axis::X, Axis::Z] {
            let s = make_pml_sigma(&g, strength, axis);
            let inner = if axis == Axis::X { n } else { n + 3 };
            prop_assert!(s[npml..npml + inner].iter().all(|&v| v == 0.0));
            let pml = PmlProfile::new(strength, npml, g.h, 1.0).unwrap();
            let l = (inner + 1) as f64 * g.h;
            for x in [0.0, l] {
                let eps = 1e-9 * g.h;
                prop_assert!(pml.sigma_at(x - eps, l) < 1e-12 && pml.sigma_at(x + eps, l) < 1e-12);
            }
            prop_assert!(s.windows(2).take(npml).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn q1_operator_is_complex_symmetric(kind in kind_strategy(), seed in 0u64..100, omega in 5.0f64..30.0) {
        let h = problem(kind, seed, 10, 12, omega, Discretization::q1());
        prop_assert!(h.global_operator().unwrap().asymmetry() < 1e-12);
    }

    #[test]
    fn layer_operators_rebuild_bit_identically(kind in kind_strategy(), seed in 0u64..100, layers in 1usize..4, disc in disc_strategy()) {
        let h = problem(kind, seed, 12, 14, 11.0, disc);
        let p = partition_layers(h.grid(), layers).unwrap();
        for l in 0..layers {
            let a = build_layer(&h, &p, l).unwrap();
            let b = build_layer(&h, &p, l).unwrap();
            let f = vector(a.len(), seed);
            prop_assert_eq!(a.local_solve(&f).unwrap(), b.local_solve(&f).unwrap());
        }
    }

    #[test]
    fn grf_reconstruction_is_exact(kind in kind_strategy(), seed in 0u64..100, layers in 2usize..4, disc in disc_strategy()) {
        let h = problem(kind, seed, 14, 16, 13.0, disc);
        let g = h.grid().clone();
        let f = vector(g.ext_len(), seed);
        let u = solve_direct(&h, &f).unwrap();
        let sie = Sie::direct(&h, layers).unwrap();
        let traces = sie.traces_of(&u).unwrap();
        let sources = sie.local_sources(&f).unwrap();
        let rebuilt = sie.reconstruct(&traces, &sources).unwrap();
        prop_assert!(rel_diff(&rebuilt, &u) < 1e-10, "{}", rel_diff(&rebuilt, &u));
    }

    #[test]
    fn green_application_is_linear(seed in 0u64..100, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let h = problem(SyntheticKind::RandomSmooth, seed, 12, 14, 10.0, Discretization::Fd);
        let p = partition_layers(h.grid(), 2).unwrap();
        let ws = Arc::new(build_layer(&h, &p, 1).unwrap());
        let green = DirectGreen::new(ws.clone()).unwrap();
        let nx = ws.row_len();
        let x: Vec<Vec<C64>> = (0..4).map(|r| vector(nx, seed + r)).collect();
        let y: Vec<Vec<C64>> = (0..4).map(|r| vector(nx, seed + 10 + r)).collect();
        let (ca, cb) = (C64::new(a, 0.3), C64::new(b, -0.7));
        let z: Vec<Vec<C64>> = x.iter().zip(&y).map(|(u, v)| u.iter().zip(v).map(|(p, q)| ca * p + cb * q).collect()).collect();
        let src = |v: &Vec<Vec<C64>>| -> [Option<Vec<C64>>; 4] { std::array::from_fn(|r| Some(v[r].clone())) };
        let apply = |v: &Vec<Vec<C64>>| {
            let s = src(v);
            green.apply(std::array::from_fn(|r| s[r].as_deref()), ALL_ROLES).unwrap()
        };
        let (gx, gy, gz) = (apply(&x), apply(&y), apply(&z));
        for r in 0..4 {
            let combo: Vec<C64> = gx[r].iter().zip(&gy[r]).map(|(p, q)| ca * p + cb * q).collect();
            prop_assert!(rel_diff(&gz[r], &combo) < 1e-12);
        }
        // The volume reconstruction is linear in traces and source alike.
        let couplings = RoleCouplings::of(ws.slab()).unwrap();
        let f = vector(ws.len(), seed + 20);
        let zero = vec![C64::new(0.0, 0.0); ws.len()];
        let sx = src(&x);
        let full = grf_reconstruct(&ws, &couplings, std::array::from_fn(|r| sx[r].as_deref()), &f).unwrap();
        let tr = grf_reconstruct(&ws, &couplings, std::array::from_fn(|r| sx[r].as_deref()), &zero).unwrap();
        let vol = grf_reconstruct(&ws, &couplings, [None; 4], &f).unwrap();
        let sum: Vec<C64> = tr.iter().zip(&vol).map(|(p, q)| p + q).collect();
        prop_assert!(rel_diff(&full, &sum) < 1e-12);
    }

    #[test]
    fn matrix_free_matches_assembled(kind in kind_strategy(), seed in 0u64..100, layers in 2usize..5, disc in disc_strategy()) {
        let h = problem(kind, seed, 12, 16, 12.0, disc);
        let sie = Sie::direct(&h, layers).unwrap();
        let p = partition_layers(h.grid(), layers).unwrap();
        let blocks: Vec<_> = (0..layers).map(|l| dense_layer_blocks(&build_layer(&h, &p, l).unwrap()).unwrap()).collect();
        let nx = sie.row_len();
        let v = TraceStack::from_vec(nx, vector(2 * (layers - 1) * nx, seed)).unwrap();
        let dense = assemble_m(&blocks, nx).matvec(v.as_slice());
        prop_assert!(rel_diff(sie.apply_m(&v).unwrap().as_slice(), &dense) < 1e-11);
        let x = PolarizedStack::from_flat(nx, vector(sie.polarized_len(), seed + 1)).unwrap();
        let dense = assemble_polarized(&blocks, nx).matvec(&x.to_flat());
        prop_assert!(rel_diff(&sie.apply_m_polarized(&x).unwrap().to_flat(), &dense) < 1e-11);
    }

    #[test]
    fn down_sweep_is_block_causal(seed in 0u64..100, k in 1usize..3) {
        let layers = 4;
        let h = problem(SyntheticKind::LayeredInclusions, seed, 12, 16, 12.0, Discretization::Fd);
        let sie = Sie::direct(&h, layers).unwrap();
        let nx = sie.row_len();
        let mut d = TraceStack::from_vec(nx, vector(2 * (layers - 1) * nx, seed)).unwrap();
        let base = sie.apply_d_down(&d).unwrap();
        // Perturbing pairs at or after k leaves the first k pairs of the image unchanged.
        for i in 2 * k..d.panel_count() {
            d.panel_mut(i).iter_mut().for_each(|v| *v *= C64::new(-1.5, 0.5));
        }
        let moved = sie.apply_d_down(&d).unwrap();
        for i in 0..2 * k {
            prop_assert_eq!(base.panel(i), moved.panel(i));
        }
    }

    #[test]
    fn polarized_split_reassembles_direct_traces(kind in kind_strategy(), seed in 0u64..100, layers in 2usize..4, disc in disc_strategy()) {
        let h = problem(kind, seed, 14, 16, 12.0, disc);
        let g = h.grid().clone();
        let f = vector(g.ext_len(), seed);
        let u = solve_direct(&h, &f).unwrap();
        let sie = Sie::direct(&h, layers).unwrap();
        let mut cfg = SolveConfig::default();
        cfg.krylov.tol = 1e-10;
        let sol = sie.solve_polarized(&f, &cfg).unwrap();
        let exact = sie.traces_of(&u).unwrap();
        prop_assert!(rel_diff(sol.traces.reassemble().as_slice(), exact.as_slice()) < 1e-8);
    }

    #[test]
    fn krylov_methods_agree(seed in 0u64..1000, n in 8usize..40) {
        let s = seed as f64;
        let a = Mat::from_fn(n, n, |i, j| {
            let off = C64::new(((i * 7 + j * 3) as f64 + s).sin(), ((i + 2 * j) as f64 * 0.3 + s).cos()) * (0.3 / n as f64);
            if i == j { C64::new(2.0, 0.5) + off } else { off }
        });
        let b = vector(n, seed);
        let mut op = |x: &[C64]| Ok(a.matvec(x));
        let mut id = |x: &[C64]| Ok(x.to_vec());
        let tol = 1e-10;
        let g = krylov::solve(&mut op, &mut id, &b, &KrylovConfig { method: Method::Gmres, tol, max_iter: 200, restart: 0 }).unwrap();
        let mut op = |x: &[C64]| Ok(a.matvec(x));
        let mut id = |x: &[C64]| Ok(x.to_vec());
        let c = krylov::solve(&mut op, &mut id, &b, &KrylovConfig { method: Method::Bicgstab, tol, max_iter: 200, restart: 0 }).unwrap();
        prop_assert!(rel_diff(&g.x, &c.x) < 10.0 * tol * 10.0);
        let mut op = |x: &[C64]| Ok(a.matvec(x));
        let mut id = |x: &[C64]| Ok(x.to_vec());
        let again = krylov::solve(&mut op, &mut id, &b, &KrylovConfig { method: Method::Bicgstab, tol, max_iter: 200, restart: 0 }).unwrap();
        prop_assert_eq!(c.x, again.x);
    }

    #[test]
    fn variable_swap_is_an_isometry(nx in 1usize..30, nz in 1usize..30, seed in 0u64..100) {
        let v = vector(nx * nz, seed);
        let w = swap_axes(&v, nx, nz);
        // A permutation: the entries agree as multisets, so the norm is preserved.
        let sorted = |x: &[C64]| {
            let mut m: Vec<(f64, f64)> = x.iter().map(|z| (z.re, z.im)).collect();
            m.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            m
        };
        prop_assert_eq!(sorted(&v), sorted(&w));
        prop_assert!((norm2(&v) - norm2(&w)).abs() <= 1e-15 * norm2(&v));
        prop_assert_eq!(swap_axes(&w, nz, nx), v);
    }

    #[test]
    fn plr_columns_and_determinism(seed in 0u64..100, n in 40usize..90) {
        // Smooth oscillatory kernel, the shape of an interface Green block.
        let k = 6.0 + (seed % 7) as f64;
        let a = Mat::from_fn(n, n, |i, j| {
            let d = (i as f64 - j as f64).abs() / n as f64 + 0.05;
            C64::new((k * d).cos(), (k * d).sin()) / d.sqrt()
        });
        let cfg = PlrConfig { eps: 1e-8, ..PlrConfig::for_omega(k * k) };
        let p = compress(&a, &cfg).unwrap();
        let scale = a.norm_fro();
        for i in [0, n / 3, n - 1] {
            let mut e = vec![C64::new(0.0, 0.0); n];
            e[i] = C64::new(1.0, 0.0);
            let col = p.matvec(&e).unwrap();
            let err = norm2(&col.iter().zip(a.col(i)).map(|(x, y)| x - y).collect::<Vec<_>>());
            prop_assert!(err <= 10.0 * cfg.eps * scale, "column {i}: {err:e}");
        }
        prop_assert!(p.certify(&a, seed) <= 10.0 * cfg.eps);
        let q = compress(&a, &cfg).unwrap();
        let (dp, dq) = (p.to_dense(), q.to_dense());
        prop_assert_eq!(dp.data(), dq.data());
    }
}
