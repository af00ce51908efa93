//! Layered partitions, local operators with their own PML collar, and local solves.

mod banded;

pub use banded::{BandedLu, LocalSolver};

use crate::discretization::{AxisWindow, Grid, GridOperator, Helmholtz};
use crate::error::{Error, Result};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Near-equal split of `n` rows into consecutive slabs, remainder to the top.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPartition {
    extents: Vec<usize>,
    offsets: Vec<usize>,
}

impl LayerPartition {
    /// Every slab gets at least two rows so that each side carries two traces.
    pub fn new(n: usize, parts: usize) -> Result<Self> {
        if parts == 0 {
            return Err(Error::InvalidArgument("at least one layer is required".into()));
        }
        if n < 2 * parts {
            return Err(Error::TooManyLayers { layers: parts, rows: n, needed: 2 * parts });
        }
        let (base, extra) = (n / parts, n % parts);
        let extents: Vec<usize> = (0..parts).map(|l| base + usize::from(l < extra)).collect();
        let mut offsets = Vec::with_capacity(parts);
        let mut acc = 0;
        for e in &extents {
            offsets.push(acc);
            acc += e;
        }
        Ok(Self { extents, offsets })
    }

    pub fn count(&self) -> usize {
        self.extents.len()
    }

    pub fn interfaces(&self) -> usize {
        self.count() - 1
    }

    /// Interior rows n^ℓ of each slab.
    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    /// Rows above each slab, n_c^ℓ.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn total(&self) -> usize {
        self.extents.iter().sum()
    }

    /// Window of slab `l` with an `npml` collar.
    pub fn window(&self, l: usize, npml: usize) -> AxisWindow {
        AxisWindow { start: self.offsets[l] as i64 + 1, len: self.extents[l], npml }
    }

    /// Global rows reconstructed from slab `l` (inclusive). The outer slabs
    /// also own the physical PML rows next to them.
    pub fn owned_rows(&self, l: usize, npml: usize) -> (i64, i64) {
        let lo = if l == 0 { -(npml as i64) + 1 } else { self.offsets[l] as i64 + 1 };
        let hi_inner = (self.offsets[l] + self.extents[l]) as i64;
        let hi = if l + 1 == self.count() { hi_inner + npml as i64 } else { hi_inner };
        (lo, hi)
    }
}

/// Layered partition of the depth axis.
pub fn partition_layers(grid: &Grid, layers: usize) -> Result<LayerPartition> {
    LayerPartition::new(grid.nz, layers)
}

/// Cell partition of the lateral axis; under the variable swap cells are
/// slabs of the transposed layer.
pub fn partition_cells(grid: &Grid, cells: usize) -> Result<LayerPartition> {
    LayerPartition::new(grid.nx, cells)
}

/// Local operator of one slab with its windows.
///
/// Arrays are `row_len() × ext_rows()` with depth rows contiguous; local
/// depth `k` runs over `-npml+1 ..= n+npml`.
#[derive(Debug)]
pub struct Slab {
    pub index: usize,
    pub xw: AxisWindow,
    pub zw: AxisWindow,
    pub op: GridOperator,
}

/// A factorized local problem on one slab.
#[derive(Debug)]
pub struct LayerWorkspace {
    slab: Slab,
    lu: BandedLu,
}

impl std::ops::Deref for LayerWorkspace {
    type Target = Slab;
    fn deref(&self) -> &Slab {
        &self.slab
    }
}

impl LayerWorkspace {
    /// Factorizes an already assembled local operator.
    pub fn from_operator(index: usize, xw: AxisWindow, zw: AxisWindow, op: GridOperator, omega: f64) -> Result<Self> {
        Self::factor(Slab::new(index, xw, zw, op)?, omega)
    }

    pub fn factor(slab: Slab, omega: f64) -> Result<Self> {
        let lu = BandedLu::factor(&slab.op).map_err(|e| Error::LayerFactorization { layer: slab.index, omega, source: Box::new(e) })?;
        Ok(Self { slab, lu })
    }

    pub fn slab(&self) -> &Slab {
        &self.slab
    }

    pub fn solver(&self) -> &BandedLu {
        &self.lu
    }

    /// (H^ℓ)⁻¹ rhs.
    pub fn local_solve(&self, rhs: &[C64]) -> Result<Vec<C64>> {
        self.lu.solve(rhs)
    }

    pub fn local_solve_many(&self, rhs: &mut [C64], nrhs: usize) -> Result<()> {
        self.lu.solve_many(rhs, nrhs)
    }
}

impl Slab {
    pub fn new(index: usize, xw: AxisWindow, zw: AxisWindow, op: GridOperator) -> Result<Self> {
        if op.nx() != xw.ext_len() || op.nz() != zw.ext_len() {
            return Err(Error::DimensionMismatch { expected: xw.ext_len() * zw.ext_len(), got: op.len() });
        }
        Ok(Self { index, xw, zw, op })
    }

    /// Interior rows n^ℓ.
    pub fn n(&self) -> usize {
        self.zw.len
    }

    pub fn row_len(&self) -> usize {
        self.xw.ext_len()
    }

    pub fn ext_rows(&self) -> usize {
        self.zw.ext_len()
    }

    pub fn len(&self) -> usize {
        self.row_len() * self.ext_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Array row of local depth `k`.
    pub fn row(&self, k: i64) -> Result<usize> {
        self.zw.array_index(k).ok_or(Error::InvalidDepth(k))
    }

    /// Array row of the SIE role depth: 0 → 0, 1 → 1, 2 → n, 3 → n+1.
    pub fn role_depth(&self, role: usize) -> i64 {
        let n = self.n() as i64;
        [0, 1, n, n + 1][role]
    }

    /// Row `k` of a local wavefield.
    pub fn extract_trace(&self, w: &[C64], k: i64) -> Result<Vec<C64>> {
        if w.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: w.len() });
        }
        let r = self.row(k)?;
        let nx = self.row_len();
        Ok(w[r * nx..(r + 1) * nx].to_vec())
    }

    /// rhs_k += scale · panel.
    pub fn inject_trace(&self, rhs: &mut [C64], k: i64, panel: &[C64], scale: C64) -> Result<()> {
        let nx = self.row_len();
        if panel.len() != nx {
            return Err(Error::DimensionMismatch { expected: nx, got: panel.len() });
        }
        if rhs.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: rhs.len() });
        }
        let r = self.row(k)?;
        for (a, b) in rhs[r * nx..(r + 1) * nx].iter_mut().zip(panel) {
            *a += scale * b;
        }
        Ok(())
    }

    /// f^ℓ = f χ_Ω^ℓ from a global vector (rows owned by this slab).
    pub fn restrict(&self, grid: &Grid, f: &[C64], owned: (i64, i64)) -> Result<Vec<C64>> {
        if f.len() != grid.ext_len() {
            return Err(Error::DimensionMismatch { expected: grid.ext_len(), got: f.len() });
        }
        let nx = self.row_len();
        let gz = grid.z_window();
        let mut out = vec![ZERO; self.len()];
        for q in owned.0..=owned.1 {
            let k = q - (self.zw.start - 1);
            let (Some(r), Some(gr)) = (self.zw.array_index(k), gz.array_index(q)) else { continue };
            out[r * nx..(r + 1) * nx].copy_from_slice(&f[gr * nx..(gr + 1) * nx]);
        }
        Ok(out)
    }

    /// Writes the owned rows of a local field into a global vector.
    pub fn embed(&self, grid: &Grid, w: &[C64], owned: (i64, i64), u: &mut [C64]) {
        let nx = self.row_len();
        let gz = grid.z_window();
        for q in owned.0..=owned.1 {
            let k = q - (self.zw.start - 1);
            let (Some(r), Some(gr)) = (self.zw.array_index(k), gz.array_index(q)) else { continue };
            u[gr * nx..(gr + 1) * nx].copy_from_slice(&w[r * nx..(r + 1) * nx]);
        }
    }
}

/// Assembles the operator of slab `l`.
pub fn build_slab(problem: &Helmholtz, partition: &LayerPartition, l: usize) -> Result<Slab> {
    if l >= partition.count() {
        return Err(Error::InvalidArgument(format!("layer {l} out of range 0..{}", partition.count())));
    }
    let g = problem.grid();
    let (xw, zw) = (g.x_window(), partition.window(l, g.npml));
    Slab::new(l, xw, zw, problem.operator(xw, zw)?)
}

/// Assembles and factorizes the operator of slab `l`.
pub fn build_layer(problem: &Helmholtz, partition: &LayerPartition, l: usize) -> Result<LayerWorkspace> {
    LayerWorkspace::factor(build_slab(problem, partition, l)?, problem.omega())
}

/// Global sparse direct solve, the reference for every oracle.
pub fn solve_direct(problem: &Helmholtz, rhs: &[C64]) -> Result<Vec<C64>> {
    let op = problem.global_operator()?;
    BandedLu::factor(&op)?.solve(rhs)
}
