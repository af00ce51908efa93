//! Eigenvalues of the explicitly assembled preconditioned polarized operator.

use crate::config::ExperimentConfig;
use crate::error::{BenchError, Result};
use num_complex::Complex64 as C64;
use polartrace::discretization::Helmholtz;
use polartrace::linalg::eigenvalues;
use polartrace::sie::{assemble_polarized, dense_layer_blocks, preconditioned_dense, Preconditioner};
use polartrace::subdomain::{build_layer, partition_layers};
use serde::{Deserialize, Serialize};

/// Largest polarized dimension that is assembled densely.
pub const DIMENSION_CAP: usize = 4000;

/// Radius around 1 inside which an eigenvalue counts as clustered.
pub const CLUSTER_RADIUS: f64 = 0.5;

/// Fraction of eigenvalues within [`CLUSTER_RADIUS`] of 1.
pub fn clustering_metric(eigs: &[C64]) -> f64 {
    if eigs.is_empty() {
        return 1.0;
    }
    eigs.iter().filter(|z| (*z - C64::new(1.0, 0.0)).norm() <= CLUSTER_RADIUS).count() as f64 / eigs.len() as f64
}

/// Largest distance of an eigenvalue from 1.
pub fn max_distance(eigs: &[C64]) -> f64 {
    eigs.iter().map(|z| (z - C64::new(1.0, 0.0)).norm()).fold(0.0, f64::max)
}

/// Dimension of the polarized system of `layers` layers on `problem`.
pub fn polarized_dimension(problem: &Helmholtz, layers: usize) -> usize {
    4 * layers.saturating_sub(1) * problem.grid().ext_nx()
}

/// Eigenvalues of `P·M̲̲` for GS and Jacobi, in that order.
pub fn preconditioned_spectra(problem: &Helmholtz, layers: usize) -> Result<[Vec<C64>; 2]> {
    let dim = polarized_dimension(problem, layers);
    if dim > DIMENSION_CAP {
        return Err(BenchError::DimensionCap { dim, cap: DIMENSION_CAP });
    }
    let p = partition_layers(problem.grid(), layers)?;
    let blocks = (0..layers)
        .map(|l| Ok(dense_layer_blocks(&build_layer(problem, &p, l)?)?))
        .collect::<Result<Vec<_>>>()?;
    let m = assemble_polarized(&blocks, problem.grid().ext_nx());
    Ok([
        eigenvalues(preconditioned_dense(&m, Preconditioner::Gs)?)?,
        eigenvalues(preconditioned_dense(&m, Preconditioner::Jac)?)?,
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub nx: usize,
    pub nz: usize,
    pub freq_hz: f64,
    pub layers: usize,
    pub dimension: usize,
    pub gs_metric: Option<f64>,
    pub jac_metric: Option<f64>,
    pub gs_max_distance: Option<f64>,
    pub jac_max_distance: Option<f64>,
    pub status: String,
}

#[derive(Serialize)]
struct EigenRow {
    re: f64,
    im: f64,
}

/// Spectra of every (size, frequency, layer count) instance of the
/// configuration, written to `spectrum/` with a `summary.csv`.
pub fn dump_spectra(cfg: &ExperimentConfig) -> Result<Vec<SpectrumRow>> {
    cfg.validate()?;
    let dir = cfg.output.join("spectrum");
    std::fs::create_dir_all(&dir)?;
    let mut rows = Vec::new();
    for size in cfg.sizes()? {
        for freq in cfg.frequencies.for_size(size[0]) {
            let mut layer_counts: Vec<usize> = cfg.partitions.iter().map(|p| p[0]).collect();
            layer_counts.sort_unstable();
            layer_counts.dedup();
            for layers in layer_counts {
                let mut row = SpectrumRow {
                    nx: size[0],
                    nz: size[1],
                    freq_hz: freq,
                    layers,
                    dimension: 0,
                    gs_metric: None,
                    jac_metric: None,
                    gs_max_distance: None,
                    jac_max_distance: None,
                    status: "ok".into(),
                };
                let spectra = cfg.problem(size, freq).and_then(|h| {
                    row.dimension = polarized_dimension(&h, layers);
                    preconditioned_spectra(&h, layers)
                });
                match spectra {
                    Ok(s) => {
                        for (name, eigs) in ["gs", "jac"].iter().zip(&s) {
                            let path = dir.join(format!("{}x{}_f{}_L{}_{name}.csv", size[0], size[1], freq, layers));
                            let mut w = csv::Writer::from_path(path)?;
                            for z in eigs {
                                w.serialize(EigenRow { re: z.re, im: z.im })?;
                            }
                            w.flush()?;
                        }
                        row.gs_metric = Some(clustering_metric(&s[0]));
                        row.jac_metric = Some(clustering_metric(&s[1]));
                        row.gs_max_distance = Some(max_distance(&s[0]));
                        row.jac_max_distance = Some(max_distance(&s[1]));
                    }
                    Err(e) => row.status = format!("failed: {e}"),
                }
                rows.push(row);
            }
        }
    }
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use polartrace::discretization::{synthetic_model, Discretization, Grid, SyntheticKind};
    use polartrace::linalg::Mat;
    use polartrace::sie::PolarizedStack;

    #[test]
    fn identity_has_unit_spectrum() {
        let eigs = eigenvalues(Mat::identity(12)).unwrap();
        assert!(eigs.iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-14));
        assert_eq!(clustering_metric(&eigs), 1.0);
    }

    #[test]
    fn metric_counts_the_disc() {
        let eigs = [C64::new(1.4, 0.0), C64::new(1.0, 0.6), C64::new(0.2, 0.0), C64::new(1.0, 0.0)];
        assert_eq!(clustering_metric(&eigs), 0.5);
    }

    fn problem() -> Helmholtz {
        let g = Grid::new(16, 18, 1.0 / 17.0, 6).unwrap();
        let m = synthetic_model(SyntheticKind::LayeredInclusions, 3, &g).unwrap();
        Helmholtz::new(m, 14.0, None, Discretization::Fd).unwrap()
    }

    #[test]
    fn gauss_seidel_clusters_more_than_jacobi() {
        // Four points per minimum wavelength: Jacobi leaves outliers outside the disc.
        let g = Grid::new(40, 40, 1.0 / 41.0, 10).unwrap();
        let m = synthetic_model(SyntheticKind::LayeredInclusions, 1, &g).unwrap();
        let h = Helmholtz::new(m, 2.0 * std::f64::consts::PI * 10.25, None, Discretization::Fd).unwrap();
        let [gs, jac] = preconditioned_spectra(&h, 5).unwrap();
        assert!(clustering_metric(&gs) > clustering_metric(&jac));
        assert!(max_distance(&gs) < max_distance(&jac));
    }

    #[test]
    fn mild_instance_clusters_fully_under_both() {
        let [gs, jac] = preconditioned_spectra(&problem(), 3).unwrap();
        assert_eq!(clustering_metric(&gs), 1.0);
        assert_eq!(clustering_metric(&jac), 1.0);
        assert!(max_distance(&gs) < max_distance(&jac));
    }

    #[test]
    fn spectrum_is_invariant_under_panel_permutation() {
        let h = problem();
        let layers = 3;
        let p = partition_layers(h.grid(), layers).unwrap();
        let blocks: Vec<_> = (0..layers).map(|l| dense_layer_blocks(&build_layer(&h, &p, l).unwrap()).unwrap()).collect();
        let nx = h.grid().ext_nx();
        let m = assemble_polarized(&blocks, nx);
        let perm = PolarizedStack::permutation(layers);
        let np = perm.len();
        let pm = Mat::from_fn(np * nx, np * nx, |i, j| m.get(perm[i / nx] * nx + i % nx, perm[j / nx] * nx + j % nx));
        let a = eigenvalues(m).unwrap();
        let b = eigenvalues(pm).unwrap();
        assert_eq!(a.len(), b.len());
        let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for z in &b {
            let d = a.iter().map(|w| (w - z).norm()).fold(f64::INFINITY, f64::min);
            assert!(d <= 1e-8 * scale, "eigenvalue {z} missing after permutation ({d:e})");
        }
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let g = Grid::new(600, 8, 1.0 / 601.0, 10).unwrap();
        let m = synthetic_model(SyntheticKind::Constant { c: 1.0 }, 0, &g).unwrap();
        let h = Helmholtz::new(m, 10.0, None, Discretization::Fd).unwrap();
        assert!(matches!(preconditioned_spectra(&h, 3), Err(BenchError::DimensionCap { .. })));
    }
}
