//! Nested solver: every layer of the outer decomposition is itself solved by
//! polarized traces in the swapped variables.
//!
//! Under the swap x ↔ z a layer becomes a domain whose depth axis is the
//! lateral axis. Splitting that axis into cells gives an inner layered system
//! whose slabs are the cells, each with its own PML collar. Volumetric layer
//! solves reuse the outer machinery on this system. Boundary applications of
//! the layer Green operator go through per-cell maps computed once from the
//! cell factorizations; the inner interface system in between is solved by
//! inner polarized traces or by a block LU of the interface matrix.

use crate::discretization::{Grid, Helmholtz};
use crate::error::{Error, Result};
use crate::green::{
    CompressionPolicy, GreenBlockSet, GreenIntegral, InterfaceOperator, RoleCouplings, RolePanels, RoleSources,
    BOTTOM, BOTTOM_GHOST, INJECTION_ROLE, TOP, TOP_GHOST,
};
use crate::krylov::KrylovConfig;
use crate::linalg::{Lu, Mat};
use crate::plr::read_u64;
use crate::sie::{LayerSolver, PrecomputedLayer, Preconditioner, Sie, SolveConfig, TraceStack};
use crate::subdomain::{build_slab, partition_cells, partition_layers, LayerPartition, LayerWorkspace, Slab};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Unit right-hand sides solved per batch when building cell maps.
const BATCH: usize = 64;

const OFFLINE_MAGIC: &[u8; 4] = b"PTNL";

/// Solver of the inner interface system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerMethod {
    /// Preconditioned Krylov on the inner polarized system.
    Pt,
    /// Block LU of the inner interface matrix.
    Lu,
}

impl std::str::FromStr for InnerMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pt" => Ok(Self::Pt),
            "lu" => Ok(Self::Lu),
            other => Err(Error::InvalidArgument(format!("unknown inner method '{other}'"))),
        }
    }
}

impl InnerMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Pt => "pt",
            Self::Lu => "lu",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedConfig {
    /// Cells per layer.
    pub cells: usize,
    pub method: InnerMethod,
    /// Krylov settings of the inner polarized solve.
    pub inner: SolveConfig,
    /// Compression of the cell blocks and maps.
    pub policy: Option<CompressionPolicy>,
}

impl Default for NestedConfig {
    fn default() -> Self {
        Self {
            cells: 2,
            method: InnerMethod::Pt,
            inner: SolveConfig {
                krylov: KrylovConfig { tol: 1e-6, ..KrylovConfig::default() },
                precond: Preconditioner::Gs,
            },
            policy: None,
        }
    }
}

/// Variable swap of a field stored with rows of length `nx`:
/// `out[j + nz·i] = v[i + nx·j]`.
pub fn swap_axes(v: &[C64], nx: usize, nz: usize) -> Vec<C64> {
    assert_eq!(v.len(), nx * nz, "swap of a {nx} x {nz} field");
    let mut out = vec![ZERO; v.len()];
    for j in 0..nz {
        for i in 0..nx {
            out[j + nz * i] = v[i + nx * j];
        }
    }
    out
}

/// Block LU of the inner interface matrix `M̲`, block-tridiagonal in blocks
/// of two panels per interface.
///
/// With `D_i`, `A_i`, `C_i` the diagonal, sub- and super-diagonal blocks,
/// `S_0 = D_0`, `S_i = D_i − A_i S_{i−1}⁻¹ C_{i−1}`. The stored factors are
/// `S_i⁻¹`, the nonzero half of `A_i` and `W_i = S_i⁻¹ C_i`.
#[derive(Debug)]
pub struct InnerLu {
    nx: usize,
    inv: Vec<InterfaceOperator>,
    lower: Vec<Option<InterfaceOperator>>,
    upper: Vec<Option<InterfaceOperator>>,
    touches: AtomicU64,
}

impl InnerLu {
    pub fn factor(cells: &[&GreenBlockSet], policy: Option<&CompressionPolicy>) -> Result<Self> {
        let Some(first) = cells.first() else {
            return Err(Error::InvalidArgument("block LU of an empty cell stack".into()));
        };
        let nx = first.row_len();
        let n2 = 2 * nx;
        let k = cells.len() - 1;
        let g = |c: usize, j: usize, r: usize| -> Result<Mat> {
            cells[c]
                .block(j, r)
                .map(|b| b.to_dense())
                .ok_or_else(|| Error::InvalidArgument(format!("cell {c} lacks Green block ({j}, {r})")))
        };
        let (mut inv, mut lower, mut upper) = (Vec::with_capacity(k), Vec::with_capacity(k), Vec::with_capacity(k));
        let mut prev_w: Option<Mat> = None;
        for i in 0..k {
            let mut s = Mat::identity(n2);
            s.add_block(0, 0, -ONE, &g(i, BOTTOM, BOTTOM)?);
            s.add_block(0, nx, -ONE, &g(i, BOTTOM, BOTTOM_GHOST)?);
            s.add_block(nx, 0, -ONE, &g(i + 1, TOP, TOP_GHOST)?);
            s.add_block(nx, nx, -ONE, &g(i + 1, TOP, TOP)?);
            let a = if i >= 1 {
                let mut a = Mat::zeros(nx, n2);
                a.add_block(0, 0, -ONE, &g(i, BOTTOM, TOP_GHOST)?);
                a.add_block(0, nx, -ONE, &g(i, BOTTOM, TOP)?);
                Some(a)
            } else {
                None
            };
            if let (Some(a), Some(w)) = (&a, &prev_w) {
                s.add_block(0, 0, -ONE, &a.mul(w));
            }
            let si = Lu::factor(s).map_err(|_| Error::SingularBlock { block: i })?.inverse();
            let w = if i + 1 < k {
                let mut cb = Mat::zeros(nx, n2);
                cb.add_block(0, 0, -ONE, &g(i + 1, TOP, BOTTOM)?);
                cb.add_block(0, nx, -ONE, &g(i + 1, TOP, BOTTOM_GHOST)?);
                Some(si.block(0, nx, n2, nx).mul(&cb))
            } else {
                None
            };
            inv.push(InterfaceOperator::new(si, policy)?);
            lower.push(a.map(|a| InterfaceOperator::new(a, policy)).transpose()?);
            upper.push(w.clone().map(|w| InterfaceOperator::new(w, policy)).transpose()?);
            prev_w = w;
        }
        Ok(Self { nx, inv, lower, upper, touches: AtomicU64::new(0) })
    }

    pub fn interfaces(&self) -> usize {
        self.inv.len()
    }

    /// Solves `M̲ u̲ = b̲` by forward and backward block substitution.
    pub fn solve(&self, b: &TraceStack) -> Result<TraceStack> {
        let (nx, k) = (self.nx, self.inv.len());
        let n2 = 2 * nx;
        if b.row_len() != nx || b.as_slice().len() != k * n2 {
            return Err(Error::DimensionMismatch { expected: k * n2, got: b.as_slice().len() });
        }
        let mut touched = 0usize;
        let mut y: Vec<Vec<C64>> = Vec::with_capacity(k);
        for i in 0..k {
            let mut r = b.as_slice()[i * n2..(i + 1) * n2].to_vec();
            if let Some(a) = &self.lower[i] {
                a.apply_add(-ONE, &y[i - 1], &mut r[..nx])?;
                touched += a.entries();
            }
            let mut yi = vec![ZERO; n2];
            self.inv[i].apply_add(ONE, &r, &mut yi)?;
            touched += self.inv[i].entries();
            y.push(yi);
        }
        for i in (0..k.saturating_sub(1)).rev() {
            if let Some(w) = &self.upper[i] {
                let (head, tail) = y.split_at_mut(i + 1);
                w.apply_add(-ONE, &tail[0], &mut head[i])?;
                touched += w.entries();
            }
        }
        self.touches.fetch_add(touched as u64, Ordering::Relaxed);
        TraceStack::from_vec(nx, y.concat())
    }

    /// Explicit block factors `(L, U)` with `L U = M̲`: `L` carries `S_i` and
    /// `A_i`, `U` the identity and `W_i`.
    pub fn dense_factors(&self) -> Result<(Mat, Mat)> {
        let (nx, k) = (self.nx, self.inv.len());
        let n2 = 2 * nx;
        let mut l = Mat::zeros(k * n2, k * n2);
        let mut u = Mat::identity(k * n2);
        for i in 0..k {
            let s = Lu::factor(self.inv[i].to_dense())?.inverse();
            l.set_block(i * n2, i * n2, &s);
            if let Some(a) = &self.lower[i] {
                l.set_block(i * n2, (i - 1) * n2, &a.to_dense());
            }
            if let Some(w) = &self.upper[i] {
                u.set_block(i * n2, (i + 1) * n2, &w.to_dense());
            }
        }
        Ok((l, u))
    }

    /// Stored complex entries.
    pub fn entries(&self) -> usize {
        let opt = |v: &[Option<InterfaceOperator>]| v.iter().flatten().map(|o| o.entries()).sum::<usize>();
        self.inv.iter().map(|o| o.entries()).sum::<usize>() + opt(&self.lower) + opt(&self.upper)
    }

    pub fn touches(&self) -> u64 {
        self.touches.load(Ordering::Relaxed)
    }

    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        write_u64(out, self.nx);
        write_u64(out, self.inv.len());
        for i in 0..self.inv.len() {
            self.inv[i].write_bytes(out);
            write_opt(&self.lower[i], out);
            write_opt(&self.upper[i], out);
        }
    }

    pub fn read_bytes(bytes: &[u8], pos: &mut usize) -> Result<Self> {
        let nx = read_u64(bytes, pos)? as usize;
        let k = read_u64(bytes, pos)? as usize;
        let (mut inv, mut lower, mut upper) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..k {
            let s = InterfaceOperator::read_bytes(bytes, pos)?;
            let a = read_opt(bytes, pos)?;
            let w = read_opt(bytes, pos)?;
            let shapes_ok = s.rows() == 2 * nx
                && s.cols() == 2 * nx
                && a.as_ref().is_none_or(|a| a.rows() == nx && a.cols() == 2 * nx)
                && w.as_ref().is_none_or(|w| w.rows() == 2 * nx && w.cols() == 2 * nx)
                && (a.is_some() == (i > 0))
                && (w.is_some() == (i + 1 < k));
            if !shapes_ok {
                return Err(Error::Artifact(format!("inconsistent block LU factor {i}")));
            }
            inv.push(s);
            lower.push(a);
            upper.push(w);
        }
        Ok(Self { nx, inv, lower, upper, touches: AtomicU64::new(0) })
    }
}

fn write_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn write_opt(op: &Option<InterfaceOperator>, out: &mut Vec<u8>) {
    match op {
        None => out.push(0),
        Some(op) => op.write_bytes(out),
    }
}

fn read_opt(bytes: &[u8], pos: &mut usize) -> Result<Option<InterfaceOperator>> {
    if bytes.get(*pos) == Some(&0) {
        *pos += 1;
        Ok(None)
    } else {
        InterfaceOperator::read_bytes(bytes, pos).map(Some)
    }
}

/// Precomputed boundary maps of one cell.
///
/// The data injected into the four outer role rows, restricted to the
/// lateral nodes the cell owns, is the vector `s` (role-row major). `newton`
/// gives the cell Newton traces at the cell roles, `trace[t][r]` the field
/// at outer role row `t` produced by the cell-role trace `r`, and
/// `direct[t]` the field at outer role row `t` produced by `s` itself.
#[derive(Debug)]
struct CellMaps {
    outer_cols: Vec<usize>,
    newton: [Option<InterfaceOperator>; 4],
    trace: [[Option<InterfaceOperator>; 4]; 4],
    direct: [InterfaceOperator; 4],
}

impl CellMaps {
    fn compute(
        cell: &PrecomputedLayer,
        cells: usize,
        owned: (i64, i64),
        grid: &Grid,
        rows: &[usize; 4],
        policy: Option<&CompressionPolicy>,
    ) -> Result<Self> {
        let ws: &LayerWorkspace = cell.workspace();
        let (nze, len) = (ws.row_len(), ws.len());
        let gx = grid.x_window();
        let mut cell_rows = Vec::new();
        let mut outer_cols = Vec::new();
        for q in owned.0..=owned.1 {
            let k = q - (ws.zw.start - 1);
            cell_rows.push(ws.zw.array_index(k).ok_or(Error::InvalidDepth(k))?);
            outer_cols.push(gx.array_index(q).ok_or(Error::InvalidDepth(q))?);
        }
        let owned = cell_rows.len();
        let role_rows = [ws.row(ws.role_depth(0))?, ws.row(ws.role_depth(1))?, ws.row(ws.role_depth(2))?, ws.row(ws.role_depth(3))?];
        let active = [ws.index > 0, ws.index > 0, ws.index + 1 < cells, ws.index + 1 < cells];

        let nsrc = 4 * owned;
        let mut newton: [Option<Mat>; 4] = std::array::from_fn(|r| active[r].then(|| Mat::zeros(nze, nsrc)));
        let mut direct: [Mat; 4] = std::array::from_fn(|_| Mat::zeros(owned, nsrc));
        for start in (0..nsrc).step_by(BATCH) {
            let m = BATCH.min(nsrc - start);
            let mut rhs = vec![ZERO; len * m];
            for t in 0..m {
                let col = start + t;
                rhs[t * len + cell_rows[col % owned] * nze + rows[col / owned]] = ONE;
            }
            ws.local_solve_many(&mut rhs, m)?;
            for t in 0..m {
                let col = start + t;
                let w = &rhs[t * len..(t + 1) * len];
                for (r, mf) in newton.iter_mut().enumerate() {
                    if let Some(mf) = mf {
                        mf.col_mut(col).copy_from_slice(&w[role_rows[r] * nze..(role_rows[r] + 1) * nze]);
                    }
                }
                for (tr, dc) in direct.iter_mut().enumerate() {
                    for (j, &cr) in cell_rows.iter().enumerate() {
                        dc.set(j, col, w[cr * nze + rows[tr]]);
                    }
                }
            }
        }

        let mut trace: [[Option<InterfaceOperator>; 4]; 4] = Default::default();
        for r in 0..4 {
            if !active[r] {
                continue;
            }
            let mut rhs = cell.couplings().unit_sources(r, len);
            ws.local_solve_many(&mut rhs, nze)?;
            for (tr, &row) in rows.iter().enumerate() {
                let m = Mat::from_fn(owned, nze, |j, col| rhs[col * len + cell_rows[j] * nze + row]);
                trace[tr][r] = Some(InterfaceOperator::new(m, policy)?);
            }
        }
        let newton = newton.map(|m| m.map(|m| InterfaceOperator::new(m, policy)).transpose());
        let [a, b, c, d] = newton;
        let direct = direct.map(|m| InterfaceOperator::new(m, policy));
        let [e, f, g, h] = direct;
        Ok(Self { outer_cols, newton: [a?, b?, c?, d?], trace, direct: [e?, f?, g?, h?] })
    }

    fn write_bytes(&self, out: &mut Vec<u8>) {
        write_u64(out, self.outer_cols.len());
        for &c in &self.outer_cols {
            write_u64(out, c);
        }
        for op in &self.newton {
            write_opt(op, out);
        }
        for op in self.trace.iter().flatten() {
            write_opt(op, out);
        }
        for op in &self.direct {
            op.write_bytes(out);
        }
    }

    fn read_bytes(bytes: &[u8], pos: &mut usize) -> Result<Self> {
        let owned = read_u64(bytes, pos)? as usize;
        let outer_cols = (0..owned).map(|_| read_u64(bytes, pos).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let mut newton: [Option<InterfaceOperator>; 4] = Default::default();
        for op in newton.iter_mut() {
            *op = read_opt(bytes, pos)?;
        }
        let mut trace: [[Option<InterfaceOperator>; 4]; 4] = Default::default();
        for op in trace.iter_mut().flatten() {
            *op = read_opt(bytes, pos)?;
        }
        let direct = [
            InterfaceOperator::read_bytes(bytes, pos)?,
            InterfaceOperator::read_bytes(bytes, pos)?,
            InterfaceOperator::read_bytes(bytes, pos)?,
            InterfaceOperator::read_bytes(bytes, pos)?,
        ];
        if direct.iter().any(|d| d.rows() != owned || d.cols() != 4 * owned) {
            return Err(Error::Artifact("inconsistent cell map".into()));
        }
        Ok(Self { outer_cols, newton, trace, direct })
    }

    fn entries(&self) -> usize {
        let n: usize = self.newton.iter().flatten().map(|o| o.entries()).sum();
        let t: usize = self.trace.iter().flatten().flatten().map(|o| o.entries()).sum();
        n + t + self.direct.iter().map(|o| o.entries()).sum::<usize>()
    }
}

/// An outer layer solved by the inner (swapped) polarized-trace method.
pub struct NestedLayer {
    slab: Slab,
    couplings: RoleCouplings,
    inner: Sie,
    cells: Vec<Arc<PrecomputedLayer>>,
    maps: Vec<CellMaps>,
    lu: Option<InnerLu>,
    cfg: NestedConfig,
    touches: AtomicU64,
    inner_iterations: Mutex<Vec<f64>>,
}

impl std::fmt::Debug for NestedLayer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NestedLayer").field("index", &self.slab.index).field("cells", &self.cells.len()).field("cfg", &self.cfg).finish()
    }
}

impl NestedLayer {
    /// Layer `l` of `partition`.
    pub fn build(problem: &Helmholtz, partition: &LayerPartition, l: usize, cfg: &NestedConfig) -> Result<Self> {
        Self::from_slab(problem, build_slab(problem, partition, l)?, cfg)
    }

    pub fn from_slab(problem: &Helmholtz, slab: Slab, cfg: &NestedConfig) -> Result<Self> {
        Self::assemble(problem, slab, cfg, None)
    }

    /// Layer whose cell blocks, cell maps and LU factors come from
    /// [`NestedLayer::offline_bytes`]; only the cell factorizations are redone.
    pub fn from_offline(problem: &Helmholtz, slab: Slab, cfg: &NestedConfig, bytes: &[u8]) -> Result<Self> {
        Self::assemble(problem, slab, cfg, Some(bytes))
    }

    /// Serialized offline data: cell Green blocks, cell maps, block LU factors.
    pub fn offline_bytes(&self) -> Vec<u8> {
        let mut out = OFFLINE_MAGIC.to_vec();
        write_u64(&mut out, self.cells.len());
        for (cell, maps) in self.cells.iter().zip(&self.maps) {
            cell.blocks().write_bytes(&mut out);
            maps.write_bytes(&mut out);
        }
        match &self.lu {
            None => out.push(0),
            Some(lu) => {
                out.push(1);
                lu.write_bytes(&mut out);
            }
        }
        out
    }

    fn assemble(problem: &Helmholtz, slab: Slab, cfg: &NestedConfig, offline: Option<&[u8]>) -> Result<Self> {
        let g = problem.grid();
        let layer = slab.index;
        let wrap = |e: Error| Error::Inner { layer, source: Box::new(e) };
        let policy = cfg.policy.as_ref();
        let cell_part = partition_cells(g, cfg.cells).map_err(wrap)?;
        let lc = cell_part.count();
        let mut pos = 0;
        if let Some(bytes) = offline {
            if bytes.get(..4) != Some(&OFFLINE_MAGIC[..]) {
                return Err(Error::Artifact("not a nested-layer blob".into()));
            }
            pos = 4;
            let stored = read_u64(bytes, &mut pos)? as usize;
            if stored != lc {
                return Err(Error::Artifact(format!("blob holds {stored} cells, configuration asks for {lc}")));
            }
        }
        let mut cells = Vec::with_capacity(lc);
        let mut loaded_maps = Vec::new();
        for c in 0..lc {
            let cxw = cell_part.window(c, g.npml);
            let op = problem.operator(cxw, slab.zw)?.transposed();
            let ws = Arc::new(LayerWorkspace::factor(Slab::new(c, slab.zw, cxw, op)?, problem.omega()).map_err(wrap)?);
            let cell = match offline {
                Some(bytes) => {
                    let blocks = GreenBlockSet::read_bytes(bytes, &mut pos)?;
                    let maps = CellMaps::read_bytes(bytes, &mut pos)?;
                    let (lo, hi) = cell_part.owned_rows(c, g.npml);
                    if maps.outer_cols.len() != (hi - lo + 1) as usize {
                        return Err(Error::Artifact(format!("cell {c} map does not match the partition")));
                    }
                    loaded_maps.push(maps);
                    PrecomputedLayer::from_blocks(ws, blocks)?
                }
                None => PrecomputedLayer::new(ws, lc, policy)?,
            };
            cells.push(Arc::new(cell));
        }
        let swapped = Grid::new(slab.n(), g.nx, g.h, g.npml)?;
        let solvers: Vec<Arc<dyn LayerSolver>> = cells.iter().map(|c| c.clone() as Arc<dyn LayerSolver>).collect();
        let inner = Sie::from_parts(swapped, slab.op.transposed(), cell_part.clone(), solvers)?;
        let couplings = RoleCouplings::of(&slab)?;
        let needs_lu = cfg.method == InnerMethod::Lu && lc > 1;
        let (maps, lu) = match offline {
            Some(bytes) => {
                let lu = match bytes.get(pos) {
                    Some(0) => None,
                    Some(1) => {
                        pos += 1;
                        Some(InnerLu::read_bytes(bytes, &mut pos)?)
                    }
                    _ => return Err(Error::Artifact("truncated nested-layer blob".into())),
                };
                if needs_lu && lu.is_none() {
                    return Err(Error::Artifact("blob lacks the block LU factors".into()));
                }
                (loaded_maps, lu.filter(|_| needs_lu))
            }
            None => {
                let maps = cells
                    .iter()
                    .enumerate()
                    .map(|(c, cell)| CellMaps::compute(cell, lc, cell_part.owned_rows(c, g.npml), g, &couplings.rows, policy))
                    .collect::<Result<Vec<_>>>()?;
                let lu = if needs_lu {
                    let sets: Vec<&GreenBlockSet> = cells.iter().map(|c| c.blocks()).collect();
                    Some(InnerLu::factor(&sets, policy).map_err(wrap)?)
                } else {
                    None
                };
                (maps, lu)
            }
        };
        Ok(Self {
            slab,
            couplings,
            inner,
            cells,
            maps,
            lu,
            cfg: *cfg,
            touches: AtomicU64::new(0),
            inner_iterations: Mutex::new(Vec::new()),
        })
    }

    pub fn config(&self) -> &NestedConfig {
        &self.cfg
    }

    /// Inner system over the swapped layer.
    pub fn inner(&self) -> &Sie {
        &self.inner
    }

    pub fn cells(&self) -> &[Arc<PrecomputedLayer>] {
        &self.cells
    }

    pub fn inner_lu(&self) -> Option<&InnerLu> {
        self.lu.as_ref()
    }

    /// Iteration counts of the inner Krylov solves since the last call.
    pub fn take_inner_iterations(&self) -> Vec<f64> {
        std::mem::take(&mut *self.inner_iterations.lock().expect("iteration log"))
    }

    /// Stored complex entries of the cell maps, cell blocks and LU factors.
    pub fn stored_entries(&self) -> usize {
        let maps: usize = self.maps.iter().map(|m| m.entries()).sum();
        let blocks: usize = self.cells.iter().map(|c| c.blocks().entries()).sum();
        maps + blocks + self.lu.as_ref().map_or(0, |l| l.entries())
    }

    /// Inner interface traces for given cell Newton traces.
    fn inner_traces(&self, nt: &[[Vec<C64>; 4]]) -> Result<TraceStack> {
        let wrap = |e: Error| Error::Inner { layer: self.slab.index, source: Box::new(e) };
        if self.cells.len() == 1 {
            return Ok(TraceStack::zeros(1, self.inner.row_len()));
        }
        match &self.lu {
            Some(lu) => lu.solve(&self.inner.sie_rhs_from(nt)),
            None => {
                let t = self.inner.solve_trace_system(nt, &self.cfg.inner).map_err(wrap)?;
                self.inner_iterations.lock().expect("iteration log").push(t.iterations);
                Ok(t.traces.reassemble())
            }
        }
    }

    /// `(H^ℓ)⁻¹ rhs` through the inner system: swap, inner Newton traces,
    /// inner interface solve, per-cell reconstruction, swap back.
    pub fn inner_solve(&self, rhs: &[C64]) -> Result<Vec<C64>> {
        if rhs.len() != self.slab.len() {
            return Err(Error::DimensionMismatch { expected: self.slab.len(), got: rhs.len() });
        }
        let (nx, nze) = (self.slab.row_len(), self.slab.ext_rows());
        let g = swap_axes(rhs, nx, nze);
        let sources = self.inner.local_sources(&g)?;
        let nt = self.inner.newton_traces(&sources)?;
        let traces = self.inner_traces(&nt)?;
        let v = self.inner.reconstruct(&traces, &sources)?;
        Ok(swap_axes(&v, nze, nx))
    }

    /// Green integrals of the layer from the precomputed cell maps.
    pub fn apply_factored(&self, src: RoleSources<'_>, want: [bool; 4]) -> Result<RolePanels> {
        let nx = self.slab.row_len();
        let mut out: RolePanels = std::array::from_fn(|j| if want[j] { vec![ZERO; nx] } else { Vec::new() });
        if src.iter().all(|s| s.is_none_or(|v| v.iter().all(|x| *x == ZERO))) {
            return Ok(out);
        }
        let mut touched = 0usize;
        let mut inj: [Vec<C64>; 4] = std::array::from_fn(|_| vec![ZERO; nx]);
        for (r, s) in src.iter().enumerate() {
            let Some(v) = s else { continue };
            if v.len() != nx {
                return Err(Error::DimensionMismatch { expected: nx, got: v.len() });
            }
            self.couplings.blocks[r].apply_add(ONE, v, &mut inj[INJECTION_ROLE[r]]);
            touched += 3 * nx;
        }
        let s: Vec<Vec<C64>> =
            self.maps.iter().map(|m| inj.iter().flat_map(|row| m.outer_cols.iter().map(|&i| row[i])).collect()).collect();
        let nze = self.inner.row_len();
        let mut nt = Vec::with_capacity(self.maps.len());
        for (m, sc) in self.maps.iter().zip(&s) {
            let mut t: [Vec<C64>; 4] = std::array::from_fn(|_| vec![ZERO; nze]);
            for (r, op) in m.newton.iter().enumerate() {
                if let Some(op) = op {
                    op.apply_add(ONE, sc, &mut t[r])?;
                    touched += op.entries();
                }
            }
            nt.push(t);
        }
        let traces = self.inner_traces(&nt)?;
        let lc = self.cells.len();
        for (c, (m, sc)) in self.maps.iter().zip(&s).enumerate() {
            for t in 0..4 {
                if !want[t] {
                    continue;
                }
                let mut y = vec![ZERO; m.outer_cols.len()];
                m.direct[t].apply_add(ONE, sc, &mut y)?;
                touched += m.direct[t].entries();
                for r in 0..4 {
                    if let (Some(op), Some(p)) = (&m.trace[t][r], TraceStack::index(lc, c, r)) {
                        op.apply_add(ONE, traces.panel(p), &mut y)?;
                        touched += op.entries();
                    }
                }
                for (&i, v) in m.outer_cols.iter().zip(y) {
                    out[t][i] = v;
                }
            }
        }
        self.touches.fetch_add(touched as u64, Ordering::Relaxed);
        Ok(out)
    }
}

impl GreenIntegral for NestedLayer {
    fn row_len(&self) -> usize {
        self.slab.row_len()
    }

    fn apply(&self, src: RoleSources<'_>, want: [bool; 4]) -> Result<RolePanels> {
        self.apply_factored(src, want)
    }

    fn touches(&self) -> u64 {
        self.touches.load(Ordering::Relaxed) + self.inner.touches() + self.lu.as_ref().map_or(0, |l| l.touches())
    }
}

impl LayerSolver for NestedLayer {
    fn slab(&self) -> &Slab {
        &self.slab
    }

    fn couplings(&self) -> &RoleCouplings {
        &self.couplings
    }

    fn solve_volume(&self, rhs: &[C64]) -> Result<Vec<C64>> {
        self.inner_solve(rhs)
    }
}

/// How the outer layers apply their Green operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// One layer solve per application.
    Direct,
    /// Precomputed interface blocks, compressed under the policy.
    Precomputed,
    /// Nested layers, inner polarized traces.
    NestedPt,
    /// Nested layers, inner block LU.
    NestedLu,
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Self::Direct),
            "precomputed" | "plr" => Ok(Self::Precomputed),
            "nested-pt" => Ok(Self::NestedPt),
            "nested-lu" => Ok(Self::NestedLu),
            other => Err(Error::InvalidArgument(format!("unknown backend '{other}'"))),
        }
    }
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Direct => "direct",
            Self::Precomputed => "precomputed",
            Self::NestedPt => "nested-pt",
            Self::NestedLu => "nested-lu",
        }
    }
}

/// Outer interface system with the chosen layer backend. `nested` is used by
/// the nested backends, whose inner method it overrides; `policy` by the
/// precomputed one.
pub fn build_system(
    problem: &Helmholtz,
    layers: usize,
    backend: Backend,
    nested: &NestedConfig,
    policy: Option<&CompressionPolicy>,
) -> Result<Sie> {
    let method = match backend {
        Backend::Direct => return Sie::direct(problem, layers),
        Backend::Precomputed => return Sie::precomputed(problem, layers, policy),
        Backend::NestedPt => InnerMethod::Pt,
        Backend::NestedLu => InnerMethod::Lu,
    };
    let cfg = NestedConfig { method, ..*nested };
    let p = partition_layers(problem.grid(), layers)?;
    let solvers = (0..layers)
        .map(|l| Ok(Arc::new(NestedLayer::build(problem, &p, l, &cfg)?) as Arc<dyn LayerSolver>))
        .collect::<Result<Vec<_>>>()?;
    Sie::new(problem, p, solvers)
}
