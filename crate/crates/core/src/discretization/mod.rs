//! Grids, PML profiles and discrete Helmholtz operators.
//!
//! Node indices follow the extended-grid convention: interior nodes of an axis
//! with `n` points are `1..=n`, PML nodes extend to `-n_pml+1` and `n+n_pml`,
//! and homogeneous Dirichlet data sits at `-n_pml` and `n+n_pml+1`.

mod assemble;
mod model;
mod operator;
mod quadrature;

pub use assemble::{assemble, element_is_smooth, Helmholtz};
pub use model::{save_wavefield, synthetic_model, GridFileHeader, SyntheticKind, VelocityModel};
pub use operator::{GridOperator, Tridiag};

use crate::error::{Error, Result};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Uniform grid with a PML collar of `npml` points on every side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub nz: usize,
    pub h: f64,
    pub npml: usize,
    /// Physical coordinates of node (0, 0).
    pub origin: (f64, f64),
}

impl Grid {
    pub fn new(nx: usize, nz: usize, h: f64, npml: usize) -> Result<Self> {
        if nx == 0 || nz == 0 {
            return Err(Error::InvalidGrid(format!("empty grid {nx}x{nz}")));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidGrid(format!("non-positive spacing h = {h}")));
        }
        Ok(Self { nx, nz, h, npml, origin: (0.0, 0.0) })
    }

    /// `max(10, ⌈log₂ N⌉)`.
    pub fn default_npml(nx: usize, nz: usize) -> usize {
        let n = (nx * nz) as f64;
        10usize.max(n.log2().ceil() as usize)
    }

    pub fn ext_nx(&self) -> usize {
        self.nx + 2 * self.npml
    }

    pub fn ext_nz(&self) -> usize {
        self.nz + 2 * self.npml
    }

    pub fn ext_len(&self) -> usize {
        self.ext_nx() * self.ext_nz()
    }

    /// Physical extents L_x = (n_x + 1) h and L_z.
    pub fn lengths(&self) -> (f64, f64) {
        ((self.nx + 1) as f64 * self.h, (self.nz + 1) as f64 * self.h)
    }

    pub fn x_window(&self) -> AxisWindow {
        AxisWindow { start: 1, len: self.nx, npml: self.npml }
    }

    pub fn z_window(&self) -> AxisWindow {
        AxisWindow { start: 1, len: self.nz, npml: self.npml }
    }

    /// Storage index of global node (p, q), x fastest.
    pub fn index(&self, p: i64, q: i64) -> Result<usize> {
        let (ix, iz) = (self.x_window().array_index(p), self.z_window().array_index(q));
        match (ix, iz) {
            (Some(ix), Some(iz)) => Ok(ix + self.ext_nx() * iz),
            _ => Err(Error::NodeOutOfRange(p, q)),
        }
    }

    /// Physical coordinates of node (p, q).
    pub fn coord(&self, p: i64, q: i64) -> (f64, f64) {
        (self.origin.0 + p as f64 * self.h, self.origin.1 + q as f64 * self.h)
    }
}

/// A contiguous run of interior nodes along one axis, padded by a PML collar.
///
/// Local node `k` ranges over `-npml+1 ..= len+npml` and maps to the global
/// node `start - 1 + k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisWindow {
    pub start: i64,
    pub len: usize,
    pub npml: usize,
}

impl AxisWindow {
    pub fn ext_len(&self) -> usize {
        self.len + 2 * self.npml
    }

    pub fn first(&self) -> i64 {
        -(self.npml as i64) + 1
    }

    pub fn last(&self) -> i64 {
        (self.len + self.npml) as i64
    }

    pub fn global(&self, k: i64) -> i64 {
        self.start - 1 + k
    }

    /// Array index of local node `k`, if it is a degree of freedom.
    pub fn array_index(&self, k: i64) -> Option<usize> {
        if k < self.first() || k > self.last() {
            None
        } else {
            Some((k + self.npml as i64 - 1) as usize)
        }
    }

    /// Local node of array index `r`.
    pub fn local(&self, r: usize) -> i64 {
        r as i64 - self.npml as i64 + 1
    }

    /// Distance, in grid steps, from the point `k + frac` to the window's
    /// physical interval `[0, len+1]`; zero inside.
    ///
    /// Computed from integer offsets so that windows sharing a boundary
    /// produce identical floating-point values.
    pub fn pml_depth(&self, k: i64, frac: f64) -> f64 {
        let left = (-k) as f64 - frac;
        let right = (k - (self.len as i64 + 1)) as f64 + frac;
        left.max(right).max(0.0)
    }
}

/// Quadratic PML absorption profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmlProfile {
    /// Absorption strength C.
    pub strength: f64,
    pub npml: usize,
    pub h: f64,
    pub omega: f64,
}

impl PmlProfile {
    pub fn new(strength: f64, npml: usize, h: f64, omega: f64) -> Result<Self> {
        if !(strength > 0.0) {
            return Err(Error::InvalidArgument(format!("PML strength must be positive, got {strength}")));
        }
        if !(omega > 0.0) {
            return Err(Error::InvalidArgument(format!("omega must be positive, got {omega}")));
        }
        Ok(Self { strength, npml, h, omega })
    }

    /// Strength giving a round-trip amplitude of `reflection` for a wave of
    /// speed `c_max` crossing the layer at normal incidence.
    ///
    /// The decay `exp(-(ω/c)∫σ/ω dx) = exp(-C/(3c))` is frequency independent.
    pub fn strength_for(reflection: f64, c_max: f64) -> f64 {
        1.5 * c_max * (1.0 / reflection).ln()
    }

    pub fn delta(&self) -> f64 {
        self.npml as f64 * self.h
    }

    /// σ at a distance of `d` grid steps beyond the physical boundary.
    #[inline]
    pub fn sigma_steps(&self, d: f64) -> f64 {
        if d <= 0.0 || self.npml == 0 {
            return 0.0;
        }
        let r = d / self.npml as f64;
        self.strength / self.delta() * r * r
    }

    /// α at a distance of `d` grid steps beyond the physical boundary.
    #[inline]
    pub fn alpha_steps(&self, d: f64) -> C64 {
        make_alpha(self.sigma_steps(d), self.omega)
    }

    /// σ at physical coordinate `x` of an axis with physical extent `[0, l]`.
    pub fn sigma_at(&self, x: f64, l: f64) -> f64 {
        let delta = self.delta();
        if delta == 0.0 {
            return 0.0;
        }
        let d = if x < 0.0 {
            (-x).min(delta)
        } else if x > l {
            (x - l).min(delta)
        } else {
            0.0
        };
        self.strength / delta * (d / delta).powi(2)
    }
}

/// Axis selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Z,
}

/// σ sampled at every node of the extended axis (PML and interior).
pub fn make_pml_sigma(grid: &Grid, strength: f64, axis: Axis) -> Vec<f64> {
    let w = match axis {
        Axis::X => grid.x_window(),
        Axis::Z => grid.z_window(),
    };
    let pml = PmlProfile { strength, npml: grid.npml, h: grid.h, omega: 1.0 };
    (0..w.ext_len()).map(|r| pml.sigma_steps(w.pml_depth(w.local(r), 0.0))).collect()
}

/// α = 1 / (1 + iσ/ω).
#[inline]
pub fn make_alpha(sigma: f64, omega: f64) -> C64 {
    if sigma == 0.0 {
        return C64::new(1.0, 0.0);
    }
    if sigma.is_infinite() {
        return C64::new(0.0, 0.0);
    }
    C64::new(1.0, 0.0) / C64::new(1.0, sigma / omega)
}

/// Discretization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Discretization {
    /// Five-point finite differences.
    Fd,
    /// Bilinear finite elements with adaptive mass quadrature.
    Q1 {
        /// Max/min velocity ratio below which an element uses fixed Gauss quadrature.
        smooth_threshold: f64,
        /// Relative tolerance of the adaptive quadrature.
        quad_tol: f64,
    },
}

impl Discretization {
    pub const STIFFNESS_GAUSS_ORDER: usize = 2;

    pub fn q1() -> Self {
        Discretization::Q1 { smooth_threshold: 1.05, quad_tol: 1e-8 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Discretization::Fd => "fd",
            Discretization::Q1 { .. } => "q1",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_examples() {
        let pml = PmlProfile { strength: 10.0, npml: 10, h: 0.01, omega: 1.0 };
        let l = 1.0;
        assert_eq!(pml.sigma_at(l / 2.0, l), 0.0);
        assert!((pml.sigma_at(-0.1, l) - 100.0).abs() < 1e-12);
        assert!((pml.sigma_at(-0.05, l) - 25.0).abs() < 1e-12);
        assert!((pml.sigma_at(l + 0.05, l) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(make_alpha(0.0, 3.0), C64::new(1.0, 0.0));
        assert!((make_alpha(3.0, 3.0) - C64::new(0.5, -0.5)).norm() < 1e-15);
        assert!(make_alpha(1e300, 1.0).norm() < 1e-299);
        assert_eq!(make_alpha(f64::INFINITY, 1.0), C64::new(0.0, 0.0));
    }

    #[test]
    fn sampled_sigma_is_symmetric_and_vanishes_inside() {
        let g = Grid::new(7, 5, 0.1, 4).unwrap();
        let s = make_pml_sigma(&g, 5.0, Axis::X);
        assert_eq!(s.len(), 15);
        for i in 0..s.len() {
            assert_eq!(s[i], s[s.len() - 1 - i]);
        }
        assert!(s[4..11].iter().all(|&v| v == 0.0));
        assert!(s[0] > s[1] && s[1] > s[2]);
    }

    #[test]
    fn window_depths_agree_across_windows() {
        let global = AxisWindow { start: 1, len: 30, npml: 6 };
        let last = AxisWindow { start: 21, len: 10, npml: 6 };
        for k in 5..=16 {
            let kg = last.global(k);
            for &f in &[0.0, 0.5, 0.2113248654051871, 0.8872983346207417] {
                assert_eq!(last.pml_depth(k, f), global.pml_depth(kg, f));
            }
        }
    }

    #[test]
    fn default_npml_rule() {
        assert_eq!(Grid::default_npml(10, 10), 10);
        assert_eq!(Grid::default_npml(120, 338), 16);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid::new(0, 3, 0.1, 2).is_err());
        assert!(Grid::new(3, 3, 0.0, 2).is_err());
        assert!(Grid::new(3, 3, -1.0, 2).is_err());
    }
}
