//! Interface integral system, its polarized extension and the sweeping preconditioners.
//!
//! Conventions. With `L` layers there are `L−1` interfaces. Interface `m`
//! carries two panels: row `n` of layer `m` (equal to row 0 of layer `m+1`)
//! and row 1 of layer `m+1` (equal to row `n+1` of layer `m`). A
//! [`TraceStack`] stores them top to bottom, panel `2m` then `2m+1`.
//!
//! The operator is `M̲ = I − G`, so that `M̲ u̲ = f̲` with `f̲` the Newton
//! potential traces. The polarized system uses the same sign; the diagonal
//! blocks of `D↓` and `D↑` are identities.
//!
//! In the polarized system, for layer ℓ, `a` and `b` denote the up- and
//! down-going data on its top rows (0, 1) and `c`, `d` those on its bottom
//! rows (n, n+1). The equations sampled on the top rows form the up block,
//! those on the bottom rows the down block:
//!
//! ```text
//! row 0    a₀        − [G↓₀(b) + G↑₀(c + d)] = 𝒩₀ f
//! row 1    a₁ + b₁   − [G↓₁(b) + G↑₁(c + d)] = 𝒩₁ f
//! row n    cₙ + dₙ   − [G↓ₙ(a + b) + G↑ₙ(c)] = 𝒩ₙ f
//! row n+1  dₙ₊₁      − [G↓ₙ₊₁(a + b) + G↑ₙ₊₁(c)] = 𝒩ₙ₊₁ f
//! ```

use crate::discretization::{Grid, GridOperator, Helmholtz};
use crate::error::{Error, Result};
use crate::green::{
    CompressionPolicy, DirectGreen, GreenBlockSet, GreenIntegral, RoleCouplings, RolePanels, RoleSources, BOTTOM,
    BOTTOM_GHOST, TOP, TOP_GHOST,
};
use crate::krylov::{self, KrylovConfig};
use crate::linalg::{norm2, Lu, Mat};
use crate::subdomain::{build_layer, partition_layers, LayerPartition, LayerWorkspace, Slab};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// A layer as seen by the outer solver: Green integrals on its boundary rows
/// plus volumetric solves for the Newton potential and the reconstruction.
pub trait LayerSolver: GreenIntegral {
    fn slab(&self) -> &Slab;

    fn couplings(&self) -> &RoleCouplings;

    /// `(H^ℓ)⁻¹ rhs` on the local array.
    fn solve_volume(&self, rhs: &[C64]) -> Result<Vec<C64>>;
}

impl LayerSolver for DirectGreen {
    fn slab(&self) -> &Slab {
        self.workspace().slab()
    }

    fn couplings(&self) -> &RoleCouplings {
        DirectGreen::couplings(self)
    }

    fn solve_volume(&self, rhs: &[C64]) -> Result<Vec<C64>> {
        self.workspace().local_solve(rhs)
    }
}

/// Layer with precomputed (optionally compressed) Green blocks and a direct
/// factorization for volumetric solves.
#[derive(Debug)]
pub struct PrecomputedLayer {
    ws: Arc<LayerWorkspace>,
    couplings: RoleCouplings,
    blocks: GreenBlockSet,
}

impl PrecomputedLayer {
    /// Only the source roles that exist for the layer position are computed.
    pub fn new(ws: Arc<LayerWorkspace>, layers: usize, policy: Option<&CompressionPolicy>) -> Result<Self> {
        let top = ws.index > 0;
        let bottom = ws.index + 1 < layers;
        let blocks = GreenBlockSet::compute(&ws, [top, top, bottom, bottom], policy)?;
        let couplings = RoleCouplings::of(&ws)?;
        Ok(Self { ws, couplings, blocks })
    }

    /// Layer from blocks computed earlier, for example loaded from an artifact.
    pub fn from_blocks(ws: Arc<LayerWorkspace>, blocks: GreenBlockSet) -> Result<Self> {
        if blocks.row_len() != ws.row_len() {
            return Err(Error::DimensionMismatch { expected: ws.row_len(), got: blocks.row_len() });
        }
        let couplings = RoleCouplings::of(&ws)?;
        Ok(Self { ws, couplings, blocks })
    }

    pub fn blocks(&self) -> &GreenBlockSet {
        &self.blocks
    }

    pub fn workspace(&self) -> &LayerWorkspace {
        &self.ws
    }
}

impl GreenIntegral for PrecomputedLayer {
    fn row_len(&self) -> usize {
        self.blocks.row_len()
    }

    fn apply(&self, src: RoleSources<'_>, want: [bool; 4]) -> Result<RolePanels> {
        self.blocks.apply(src, want)
    }

    fn touches(&self) -> u64 {
        self.blocks.touches()
    }
}

impl LayerSolver for PrecomputedLayer {
    fn slab(&self) -> &Slab {
        self.ws.slab()
    }

    fn couplings(&self) -> &RoleCouplings {
        &self.couplings
    }

    fn solve_volume(&self, rhs: &[C64]) -> Result<Vec<C64>> {
        self.ws.local_solve(rhs)
    }
}

/// Interface panels ordered top to bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceStack {
    nx: usize,
    data: Vec<C64>,
}

impl TraceStack {
    /// `2(L−1)` zero panels.
    pub fn zeros(layers: usize, nx: usize) -> Self {
        Self { nx, data: vec![ZERO; 2 * layers.saturating_sub(1) * nx] }
    }

    pub fn from_vec(nx: usize, data: Vec<C64>) -> Result<Self> {
        if nx == 0 || data.len() % (2 * nx) != 0 {
            return Err(Error::DimensionMismatch { expected: 2 * nx * (data.len() / (2 * nx.max(1))).max(1), got: data.len() });
        }
        Ok(Self { nx, data })
    }

    pub fn row_len(&self) -> usize {
        self.nx
    }

    pub fn panel_count(&self) -> usize {
        self.data.len() / self.nx.max(1)
    }

    pub fn layers(&self) -> usize {
        self.panel_count() / 2 + 1
    }

    pub fn panel(&self, i: usize) -> &[C64] {
        &self.data[i * self.nx..(i + 1) * self.nx]
    }

    pub fn panel_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.data[i * self.nx..(i + 1) * self.nx]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.data)
    }

    /// Layer and role sampled by panel `i`, seen from the layer owning the
    /// equation: `2m → (m, n)`, `2m+1 → (m+1, 1)`.
    pub fn position(i: usize) -> (usize, usize) {
        if i % 2 == 0 {
            (i / 2, BOTTOM)
        } else {
            (i / 2 + 1, TOP)
        }
    }

    /// Panel holding role `role` of layer `layer`, if it lies on an interface.
    pub fn index(layers: usize, layer: usize, role: usize) -> Option<usize> {
        let has_top = layer >= 1 && layer < layers;
        let has_bottom = layer + 1 < layers;
        match role {
            TOP_GHOST if has_top => Some(2 * (layer - 1)),
            TOP if has_top => Some(2 * (layer - 1) + 1),
            BOTTOM if has_bottom => Some(2 * layer),
            BOTTOM_GHOST if has_bottom => Some(2 * layer + 1),
            _ => None,
        }
    }
}

/// Down- and up-going stacks.
///
/// Down panel `2m`, `2m+1`: rows n, n+1 of layer m. Up panel `2m`, `2m+1`:
/// rows 0, 1 of layer m+1. Both describe the same physical rows as the
/// unpolarized stack, so `down + up` is the trace stack.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarizedStack {
    pub down: TraceStack,
    pub up: TraceStack,
}

impl PolarizedStack {
    pub fn zeros(layers: usize, nx: usize) -> Self {
        Self { down: TraceStack::zeros(layers, nx), up: TraceStack::zeros(layers, nx) }
    }

    /// Flattened as `[down; up]`.
    pub fn to_flat(&self) -> Vec<C64> {
        let mut v = self.down.data.clone();
        v.extend_from_slice(&self.up.data);
        v
    }

    pub fn from_flat(nx: usize, mut v: Vec<C64>) -> Result<Self> {
        if nx == 0 || v.len() % (4 * nx) != 0 {
            return Err(Error::DimensionMismatch { expected: 4 * nx, got: v.len() });
        }
        let up = v.split_off(v.len() / 2);
        Ok(Self { down: TraceStack::from_vec(nx, v)?, up: TraceStack::from_vec(nx, up)? })
    }

    pub fn reassemble(&self) -> TraceStack {
        let data = self.down.data.iter().zip(&self.up.data).map(|(a, b)| a + b).collect();
        TraceStack { nx: self.down.nx, data }
    }

    /// Permutation from the interface-major ordering
    /// `(↓ₙ, ↓ₙ₊₁, ↑₀, ↑₁)` per interface to the `[down; up]` ordering:
    /// natural panel `k` lands at `perm[k]`.
    pub fn permutation(layers: usize) -> Vec<usize> {
        let p = 2 * layers.saturating_sub(1);
        (0..2 * p)
            .map(|k| {
                let (m, slot) = (k / 4, k % 4);
                if slot < 2 {
                    2 * m + slot
                } else {
                    p + 2 * m + slot - 2
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preconditioner {
    /// Block Gauss-Seidel.
    Gs,
    /// Block Jacobi.
    Jac,
}

impl std::str::FromStr for Preconditioner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gs" => Ok(Self::Gs),
            "jac" | "jacobi" => Ok(Self::Jac),
            other => Err(Error::InvalidArgument(format!("unknown preconditioner '{other}'"))),
        }
    }
}

impl Preconditioner {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Gs => "gs",
            Self::Jac => "jac",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub krylov: KrylovConfig,
    pub precond: Preconditioner,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { krylov: KrylovConfig::default(), precond: Preconditioner::Gs }
    }
}

/// Result of [`Sie::solve_polarized`].
#[derive(Clone, Debug)]
pub struct SieSolution {
    /// Global wavefield on the extended grid.
    pub u: Vec<C64>,
    pub traces: PolarizedStack,
    pub iterations: f64,
    /// Relative preconditioned residuals per Krylov step.
    pub history: Vec<f64>,
    /// `‖H u − f‖ / ‖f‖`.
    pub residual: f64,
}

/// Converged polarized traces.
#[derive(Clone, Debug)]
pub struct TraceSolve {
    pub traces: PolarizedStack,
    pub iterations: f64,
    pub history: Vec<f64>,
}

fn sum(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sub_into(dst: &mut [C64], a: &[C64]) {
    for (d, x) in dst.iter_mut().zip(a) {
        *d -= x;
    }
}

/// The layered interface system of one problem.
pub struct Sie {
    grid: Grid,
    global: GridOperator,
    partition: LayerPartition,
    layers: Vec<Arc<dyn LayerSolver>>,
}

impl std::fmt::Debug for Sie {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sie").field("grid", &self.grid).field("partition", &self.partition).finish()
    }
}

impl Sie {
    pub fn new(problem: &Helmholtz, partition: LayerPartition, layers: Vec<Arc<dyn LayerSolver>>) -> Result<Self> {
        let grid = problem.grid().clone();
        Self::check_layers(&grid, &partition, &layers)?;

        Self::from_parts(grid, problem.global_operator()?, partition, layers)
    }

    /// System over an arbitrary slab stack: `global` is the operator on
    /// `grid`, whose depth axis `partition` splits.
    pub fn from_parts(grid: Grid, global: GridOperator, partition: LayerPartition, layers: Vec<Arc<dyn LayerSolver>>) -> Result<Self> {
        if global.nx() != grid.ext_nx() || global.nz() != grid.ext_nz() {
            return Err(Error::DimensionMismatch { expected: grid.ext_len(), got: global.len() });
        }
        Self::check_layers(&grid, &partition, &layers)?;
        Ok(Self { grid, global, partition, layers })
    }

    fn check_layers(grid: &Grid, partition: &LayerPartition, layers: &[Arc<dyn LayerSolver>]) -> Result<()> {
        if layers.len() != partition.count() || partition.total() != grid.nz {
            return Err(Error::InvalidArgument(format!(
                "{} layer solvers for a partition of {} slabs over {} rows",
                layers.len(),
                partition.count(),
                partition.total()
            )));
        }
        for (l, s) in layers.iter().enumerate() {
            if s.slab().n() != partition.extents()[l] || s.row_len() != grid.ext_nx() {
                return Err(Error::DimensionMismatch { expected: partition.extents()[l], got: s.slab().n() });
            }
        }
        Ok(())
    }

    /// Matrix-free layers: every Green application is a layer solve.
    pub fn direct(problem: &Helmholtz, layers: usize) -> Result<Self> {
        let p = partition_layers(problem.grid(), layers)?;
        let solvers = (0..layers)
            .map(|l| Ok(Arc::new(DirectGreen::new(Arc::new(build_layer(problem, &p, l)?))?) as Arc<dyn LayerSolver>))
            .collect::<Result<Vec<_>>>()?;
        Self::new(problem, p, solvers)
    }

    /// Precomputed Green blocks, compressed under `policy` when given.
    pub fn precomputed(problem: &Helmholtz, layers: usize, policy: Option<&CompressionPolicy>) -> Result<Self> {
        let p = partition_layers(problem.grid(), layers)?;
        let solvers = (0..layers)
            .map(|l| {
                let ws = Arc::new(build_layer(problem, &p, l)?);
                Ok(Arc::new(PrecomputedLayer::new(ws, layers, policy)?) as Arc<dyn LayerSolver>)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(problem, p, solvers)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn partition(&self) -> &LayerPartition {
        &self.partition
    }

    pub fn layers(&self) -> &[Arc<dyn LayerSolver>] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn row_len(&self) -> usize {
        self.grid.ext_nx()
    }

    /// Unknowns of the polarized system.
    pub fn polarized_len(&self) -> usize {
        4 * (self.layer_count() - 1) * self.row_len()
    }

    /// Operator-element touches of all Green applications so far.
    pub fn touches(&self) -> u64 {
        self.layers.iter().map(|l| l.touches()).sum()
    }

    fn check(&self, s: &TraceStack) -> Result<()> {
        let want = 2 * (self.layer_count() - 1) * self.row_len();
        if s.nx != self.row_len() || s.data.len() != want {
            return Err(Error::DimensionMismatch { expected: want, got: s.data.len() });
        }
        Ok(())
    }

    /// Panels (2i, 2i+1) of interface i, if it exists.
    fn pair(s: &TraceStack, i: Option<usize>) -> Option<(&[C64], &[C64])> {
        i.map(|i| (s.panel(2 * i), s.panel(2 * i + 1)))
    }

    fn top(&self, l: usize) -> Option<usize> {
        (l >= 1).then(|| l - 1)
    }

    fn bottom(&self, l: usize) -> Option<usize> {
        (l + 1 < self.layer_count()).then_some(l)
    }

    /// f^ℓ = f χ_Ω^ℓ for every layer.
    pub fn local_sources(&self, f: &[C64]) -> Result<Vec<Vec<C64>>> {
        self.layers
            .iter()
            .enumerate()
            .map(|(l, s)| s.slab().restrict(&self.grid, f, self.partition.owned_rows(l, self.grid.npml)))
            .collect()
    }

    /// Newton potentials of every layer sampled at rows 0, 1, n, n+1.
    pub fn newton_traces(&self, sources: &[Vec<C64>]) -> Result<Vec<[Vec<C64>; 4]>> {
        let nx = self.row_len();
        self.layers
            .iter()
            .zip(sources)
            .map(|(s, f)| {
                if f.iter().all(|v| *v == ZERO) {
                    return Ok(std::array::from_fn(|_| vec![ZERO; nx]));
                }
                let w = s.solve_volume(f)?;
                let slab = s.slab();
                let mut out: [Vec<C64>; 4] = Default::default();
                for (r, o) in out.iter_mut().enumerate() {
                    *o = slab.extract_trace(&w, slab.role_depth(r))?;
                }
                Ok(out)
            })
            .collect()
    }

    /// `f̲ = (𝒩¹ₙ f¹, 𝒩²₁ f², 𝒩²ₙ f², …, 𝒩ᴸ₁ fᴸ)`.
    pub fn build_sie_rhs(&self, f: &[C64]) -> Result<TraceStack> {
        Ok(self.sie_rhs_from(&self.newton_traces(&self.local_sources(f)?)?))
    }

    pub fn sie_rhs_from(&self, nt: &[[Vec<C64>; 4]]) -> TraceStack {
        let mut s = TraceStack::zeros(self.layer_count(), self.row_len());
        for i in 0..self.layer_count() - 1 {
            s.panel_mut(2 * i).copy_from_slice(&nt[i][BOTTOM]);
            s.panel_mut(2 * i + 1).copy_from_slice(&nt[i + 1][TOP]);
        }
        s
    }

    /// Right-hand side of the polarized system: `𝒩ₙ, 𝒩ₙ₊₁` of the layer
    /// above each interface (down) and `𝒩₀, 𝒩₁` of the layer below (up).
    pub fn build_polarized_rhs(&self, f: &[C64]) -> Result<PolarizedStack> {
        let nt = self.newton_traces(&self.local_sources(f)?)?;
        Ok(self.polarized_rhs_from(&nt))
    }

    pub fn polarized_rhs_from(&self, nt: &[[Vec<C64>; 4]]) -> PolarizedStack {
        let mut s = PolarizedStack::zeros(self.layer_count(), self.row_len());
        for i in 0..self.layer_count() - 1 {
            s.down.panel_mut(2 * i).copy_from_slice(&nt[i][BOTTOM]);
            s.down.panel_mut(2 * i + 1).copy_from_slice(&nt[i][BOTTOM_GHOST]);
            s.up.panel_mut(2 * i).copy_from_slice(&nt[i + 1][TOP_GHOST]);
            s.up.panel_mut(2 * i + 1).copy_from_slice(&nt[i + 1][TOP]);
        }
        s
    }

    /// `M̲ v̲ = v̲ − G v̲`: one Green application per layer with all four
    /// boundary rows as sources.
    pub fn apply_m(&self, v: &TraceStack) -> Result<TraceStack> {
        self.check(v)?;
        let mut out = v.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let t = Self::pair(v, self.top(l));
            let b = Self::pair(v, self.bottom(l));
            let src = [t.map(|p| p.0), t.map(|p| p.1), b.map(|p| p.0), b.map(|p| p.1)];
            let want = [false, t.is_some(), b.is_some(), false];
            let w = layer.apply(src, want)?;
            if let Some(i) = self.top(l) {
                sub_into(out.panel_mut(2 * i + 1), &w[TOP]);
            }
            if let Some(i) = self.bottom(l) {
                sub_into(out.panel_mut(2 * i), &w[BOTTOM]);
            }
        }
        Ok(out)
    }

    /// Full polarized operator.
    pub fn apply_m_polarized(&self, x: &PolarizedStack) -> Result<PolarizedStack> {
        self.check(&x.down)?;
        self.check(&x.up)?;
        let mut out = PolarizedStack::zeros(self.layer_count(), self.row_len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (ti, bi) = (self.top(l), self.bottom(l));
            let a = Self::pair(&x.up, ti);
            let b = Self::pair(&x.down, ti);
            let c = Self::pair(&x.up, bi);
            let d = Self::pair(&x.down, bi);
            if let (Some(i), Some(a), Some(b)) = (ti, a, b) {
                let cd = c.zip(d).map(|(c, d)| (sum(c.0, d.0), sum(c.1, d.1)));
                let src = [Some(b.0), Some(b.1), cd.as_ref().map(|p| &p.0[..]), cd.as_ref().map(|p| &p.1[..])];
                let w = layer.apply(src, [true, true, false, false])?;
                let o0 = out.up.panel_mut(2 * i);
                for k in 0..o0.len() {
                    o0[k] = a.0[k] - w[TOP_GHOST][k];
                }
                let o1 = out.up.panel_mut(2 * i + 1);
                for k in 0..o1.len() {
                    o1[k] = a.1[k] + b.1[k] - w[TOP][k];
                }
            }
            if let (Some(i), Some(c), Some(d)) = (bi, c, d) {
                let ab = a.zip(b).map(|(a, b)| (sum(a.0, b.0), sum(a.1, b.1)));
                let src = [ab.as_ref().map(|p| &p.0[..]), ab.as_ref().map(|p| &p.1[..]), Some(c.0), Some(c.1)];
                let w = layer.apply(src, [false, false, true, true])?;
                let o0 = out.down.panel_mut(2 * i);
                for k in 0..o0.len() {
                    o0[k] = c.0[k] + d.0[k] - w[BOTTOM][k];
                }
                let o1 = out.down.panel_mut(2 * i + 1);
                for k in 0..o1.len() {
                    o1[k] = d.1[k] - w[BOTTOM_GHOST][k];
                }
            }
        }
        Ok(out)
    }

    /// `D↓ d`: identity minus the transmission of `d` through the layer below it.
    pub fn apply_d_down(&self, d: &TraceStack) -> Result<TraceStack> {
        self.check(d)?;
        let mut out = d.clone();
        for l in 1..self.layer_count() - 1 {
            let p = Self::pair(d, self.top(l)).expect("interior layer");
            let w = self.layers[l].apply([Some(p.0), Some(p.1), None, None], [false, false, true, true])?;
            sub_into(out.panel_mut(2 * l), &w[BOTTOM]);
            sub_into(out.panel_mut(2 * l + 1), &w[BOTTOM_GHOST]);
        }
        Ok(out)
    }

    /// `D↑ a`: identity minus the transmission of `a` through the layer above it.
    pub fn apply_d_up(&self, a: &TraceStack) -> Result<TraceStack> {
        self.check(a)?;
        let mut out = a.clone();
        for l in 1..self.layer_count() - 1 {
            let p = Self::pair(a, Some(l)).expect("interior layer");
            let w = self.layers[l].apply([None, None, Some(p.0), Some(p.1)], [true, true, false, false])?;
            sub_into(out.panel_mut(2 * (l - 1)), &w[TOP_GHOST]);
            sub_into(out.panel_mut(2 * (l - 1) + 1), &w[TOP]);
        }
        Ok(out)
    }

    /// `U̲ a`: up-going data seen by the down equations.
    pub fn apply_upper(&self, a: &TraceStack) -> Result<TraceStack> {
        self.check(a)?;
        let mut out = TraceStack::zeros(self.layer_count(), self.row_len());
        for l in 0..self.layer_count() - 1 {
            let top = Self::pair(a, self.top(l));
            let c = Self::pair(a, Some(l)).expect("bottom interface");
            let src = [top.map(|p| p.0), top.map(|p| p.1), Some(c.0), Some(c.1)];
            let w = self.layers[l].apply(src, [false, false, true, true])?;
            let o0 = out.panel_mut(2 * l);
            for k in 0..o0.len() {
                o0[k] = c.0[k] - w[BOTTOM][k];
            }
            let o1 = out.panel_mut(2 * l + 1);
            for k in 0..o1.len() {
                o1[k] = -w[BOTTOM_GHOST][k];
            }
        }
        Ok(out)
    }

    /// `L̲ d`, the upward reflections of down-going data. Layers are independent.
    pub fn upward_reflections(&self, d: &TraceStack) -> Result<TraceStack> {
        self.check(d)?;
        let mut out = TraceStack::zeros(self.layer_count(), self.row_len());
        for l in 1..self.layer_count() {
            let b = Self::pair(d, Some(l - 1)).expect("top interface");
            let bot = Self::pair(d, self.bottom(l));
            let src = [Some(b.0), Some(b.1), bot.map(|p| p.0), bot.map(|p| p.1)];
            let w = self.layers[l].apply(src, [true, true, false, false])?;
            let o0 = out.panel_mut(2 * (l - 1));
            for k in 0..o0.len() {
                o0[k] = -w[TOP_GHOST][k];
            }
            let o1 = out.panel_mut(2 * (l - 1) + 1);
            for k in 0..o1.len() {
                o1[k] = b.1[k] - w[TOP][k];
            }
        }
        Ok(out)
    }

    /// `(D↓)⁻¹ v`: block forward substitution from the top layer down.
    pub fn sweep_down(&self, v: &TraceStack) -> Result<TraceStack> {
        self.check(v)?;
        let mut d = v.clone();
        for l in 1..self.layer_count() - 1 {
            let (p0, p1) = (d.panel(2 * (l - 1)).to_vec(), d.panel(2 * (l - 1) + 1).to_vec());
            let w = self.layers[l].apply([Some(&p0), Some(&p1), None, None], [false, false, true, true])?;
            for (x, y) in d.panel_mut(2 * l).iter_mut().zip(&w[BOTTOM]) {
                *x += y;
            }
            for (x, y) in d.panel_mut(2 * l + 1).iter_mut().zip(&w[BOTTOM_GHOST]) {
                *x += y;
            }
        }
        Ok(d)
    }

    /// `(D↑)⁻¹ v`: block back substitution from the bottom layer up.
    pub fn sweep_up(&self, v: &TraceStack) -> Result<TraceStack> {
        self.check(v)?;
        let mut a = v.clone();
        for l in (1..self.layer_count() - 1).rev() {
            let (p0, p1) = (a.panel(2 * l).to_vec(), a.panel(2 * l + 1).to_vec());
            let w = self.layers[l].apply([None, None, Some(&p0), Some(&p1)], [true, true, false, false])?;
            for (x, y) in a.panel_mut(2 * (l - 1)).iter_mut().zip(&w[TOP_GHOST]) {
                *x += y;
            }
            for (x, y) in a.panel_mut(2 * (l - 1) + 1).iter_mut().zip(&w[TOP]) {
                *x += y;
            }
        }
        Ok(a)
    }

    /// Gauss-Seidel: `((D↓)⁻¹v↓, (D↑)⁻¹(v↑ − L̲(D↓)⁻¹v↓))`;
    /// Jacobi: `((D↓)⁻¹v↓, (D↑)⁻¹v↑)`.
    pub fn precondition(&self, kind: Preconditioner, v: &PolarizedStack) -> Result<PolarizedStack> {
        let down = self.sweep_down(&v.down)?;
        let up = match kind {
            Preconditioner::Gs => {
                let r = self.upward_reflections(&down)?;
                let mut w = v.up.clone();
                sub_into(&mut w.data, &r.data);
                self.sweep_up(&w)?
            }
            Preconditioner::Jac => self.sweep_up(&v.up)?,
        };
        Ok(PolarizedStack { down, up })
    }

    /// Local fields from interface traces and local sources, concatenated
    /// into a global vector. Layers are independent.
    pub fn reconstruct(&self, traces: &TraceStack, sources: &[Vec<C64>]) -> Result<Vec<C64>> {
        self.check(traces)?;
        let mut u = vec![ZERO; self.grid.ext_len()];
        for (l, layer) in self.layers.iter().enumerate() {
            let slab = layer.slab();
            let t = Self::pair(traces, self.top(l));
            let b = Self::pair(traces, self.bottom(l));
            let src = [t.map(|p| p.0), t.map(|p| p.1), b.map(|p| p.0), b.map(|p| p.1)];
            let mut rhs = sources[l].clone();
            layer.couplings().inject(src, slab.row_len(), &mut rhs)?;
            let w = layer.solve_volume(&rhs)?;
            slab.embed(&self.grid, &w, self.partition.owned_rows(l, self.grid.npml), &mut u);
        }
        Ok(u)
    }

    /// `‖H u − f‖ / ‖f‖` on the global grid.
    pub fn relative_residual(&self, u: &[C64], f: &[C64]) -> Result<f64> {
        let hu = self.global.apply(u)?;
        let r: Vec<C64> = hu.iter().zip(f).map(|(a, b)| a - b).collect();
        let nf = norm2(f);
        Ok(if nf == 0.0 { norm2(&r) } else { norm2(&r) / nf })
    }

    /// Preconditioned Krylov solve of the polarized system followed by the
    /// per-layer reconstruction. `f` is the assembled right-hand side.
    pub fn solve_polarized(&self, f: &[C64], cfg: &SolveConfig) -> Result<SieSolution> {
        if f.len() != self.grid.ext_len() {
            return Err(Error::DimensionMismatch { expected: self.grid.ext_len(), got: f.len() });
        }
        let sources = self.local_sources(f)?;
        let (l, nx) = (self.layer_count(), self.row_len());
        if l == 1 {
            let u = self.reconstruct(&TraceStack::zeros(1, nx), &sources)?;
            let residual = self.relative_residual(&u, f)?;
            return Ok(SieSolution { u, traces: PolarizedStack::zeros(1, nx), iterations: 0.0, history: vec![0.0], residual });
        }
        let t = self.solve_trace_system(&self.newton_traces(&sources)?, cfg)?;
        let u = self.reconstruct(&t.traces.reassemble(), &sources)?;
        let residual = self.relative_residual(&u, f)?;
        Ok(SieSolution { u, traces: t.traces, iterations: t.iterations, history: t.history, residual })
    }

    /// Preconditioned Krylov solve of the polarized system for given Newton traces.
    pub fn solve_trace_system(&self, nt: &[[Vec<C64>; 4]], cfg: &SolveConfig) -> Result<TraceSolve> {
        let nx = self.row_len();
        if self.layer_count() == 1 {
            return Ok(TraceSolve { traces: PolarizedStack::zeros(1, nx), iterations: 0.0, history: vec![0.0] });
        }
        let rhs = self.polarized_rhs_from(nt);
        let mut op = |x: &[C64]| -> Result<Vec<C64>> {
            Ok(self.apply_m_polarized(&PolarizedStack::from_flat(nx, x.to_vec())?)?.to_flat())
        };
        let mut pre = |x: &[C64]| -> Result<Vec<C64>> {
            Ok(self.precondition(cfg.precond, &PolarizedStack::from_flat(nx, x.to_vec())?)?.to_flat())
        };
        let out = krylov::solve(&mut op, &mut pre, &rhs.to_flat(), &cfg.krylov)?;
        Ok(TraceSolve { traces: PolarizedStack::from_flat(nx, out.x)?, iterations: out.iterations, history: out.history })
    }

    /// Interface traces of a global field.
    pub fn traces_of(&self, u: &[C64]) -> Result<TraceStack> {
        let nx = self.row_len();
        let gz = self.grid.z_window();
        let mut s = TraceStack::zeros(self.layer_count(), nx);
        for i in 0..self.layer_count() - 1 {
            let q = self.partition.offsets()[i + 1] as i64;
            for (j, depth) in [q, q + 1].into_iter().enumerate() {
                let r = gz.array_index(depth).ok_or(Error::InvalidDepth(depth))?;
                s.panel_mut(2 * i + j).copy_from_slice(&u[r * nx..(r + 1) * nx]);
            }
        }
        Ok(s)
    }
}

/// Dense redefined Green blocks `G_{j,r}` of one layer, for assembled oracles.
pub type DenseBlocks = [[Mat; 4]; 4];

/// Dense blocks of every layer from cached Green block sets.
pub fn dense_layer_blocks(ws: &LayerWorkspace) -> Result<DenseBlocks> {
    let set = GreenBlockSet::compute(ws, [true; 4], None)?;
    Ok(std::array::from_fn(|j| std::array::from_fn(|r| set.block(j, r).expect("all roles").to_dense())))
}

/// Explicit `M̲` in the trace-stack ordering.
pub fn assemble_m(blocks: &[DenseBlocks], nx: usize) -> Mat {
    let layers = blocks.len();
    let dim = 2 * layers.saturating_sub(1) * nx;
    let mut m = Mat::identity(dim);
    for (l, g) in blocks.iter().enumerate() {
        for j in [TOP, BOTTOM] {
            let Some(row) = TraceStack::index(layers, l, j) else { continue };
            for r in 0..4 {
                if let Some(col) = TraceStack::index(layers, l, r) {
                    m.add_block(row * nx, col * nx, -ONE, &g[j][r]);
                }
            }
        }
    }
    m
}

/// Explicit polarized operator in the `[down; up]` ordering.
pub fn assemble_polarized(blocks: &[DenseBlocks], nx: usize) -> Mat {
    let layers = blocks.len();
    let p = 2 * layers.saturating_sub(1);
    let mut m = Mat::zeros(2 * p * nx, 2 * p * nx);
    let eye = Mat::identity(nx);
    let down = |panel: usize| panel * nx;
    let up = |panel: usize| (p + panel) * nx;
    for (l, g) in blocks.iter().enumerate() {
        if l >= 1 {
            let i = l - 1;
            for (j, row) in [(TOP_GHOST, up(2 * i)), (TOP, up(2 * i + 1))] {
                m.add_block(row, up(2 * i + j), ONE, &eye);
                if j == TOP {
                    m.add_block(row, down(2 * i + 1), ONE, &eye);
                }
                for r in [TOP_GHOST, TOP] {
                    m.add_block(row, down(2 * i + r), -ONE, &g[j][r]);
                }
                if l + 1 < layers {
                    for r in [BOTTOM, BOTTOM_GHOST] {
                        m.add_block(row, up(2 * l + r - 2), -ONE, &g[j][r]);
                        m.add_block(row, down(2 * l + r - 2), -ONE, &g[j][r]);
                    }
                }
            }
        }
        if l + 1 < layers {
            for (j, row) in [(BOTTOM, down(2 * l)), (BOTTOM_GHOST, down(2 * l + 1))] {
                m.add_block(row, down(2 * l + j - 2), ONE, &eye);
                if j == BOTTOM {
                    m.add_block(row, up(2 * l), ONE, &eye);
                }
                if l >= 1 {
                    for r in [TOP_GHOST, TOP] {
                        m.add_block(row, up(2 * (l - 1) + r), -ONE, &g[j][r]);
                        m.add_block(row, down(2 * (l - 1) + r), -ONE, &g[j][r]);
                    }
                }
                for r in [BOTTOM, BOTTOM_GHOST] {
                    m.add_block(row, up(2 * l + r - 2), -ONE, &g[j][r]);
                }
            }
        }
    }
    m
}

/// `P·M̲̲` for a dense polarized operator: GS inverts the block lower
/// triangle `[[D↓, 0], [L̲, D↑]]`, Jacobi the block diagonal.
pub fn preconditioned_dense(m: &Mat, kind: Preconditioner) -> Result<Mat> {
    let half = m.rows() / 2;
    let mut split = m.clone();
    for j in half..m.cols() {
        for i in 0..half {
            split.set(i, j, ZERO);
        }
    }
    if kind == Preconditioner::Jac {
        for j in 0..half {
            for i in half..m.rows() {
                split.set(i, j, ZERO);
            }
        }
    }
    Ok(Lu::factor(split)?.solve(m))
}
