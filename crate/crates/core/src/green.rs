//! Interface Green operators and the discrete Green's representation formula.
//!
//! A layer sees four boundary rows, its *roles*: depths 0 and 1 on top and
//! n, n+1 at the bottom. Boundary data on these rows enters the local problem
//! through the neighbouring coupling blocks of the operator,
//!
//! ```text
//! H v = −δ₁ H₁₀ v₀ + δ₀ H₀₁ v₁ + δₙ₊₁ Hₙ₊₁,ₙ vₙ − δₙ Hₙ,ₙ₊₁ vₙ₊₁ + f,
//! ```
//!
//! and the redefined Green blocks `G_{j,r}` absorb those couplings so that
//! `G↓_j(v₀, v₁) = G_{j,0} v₀ + G_{j,1} v₁` and `G↑_j(vₙ, vₙ₊₁) = G_{j,n} vₙ + G_{j,n+1} vₙ₊₁`.

use crate::discretization::Tridiag;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::plr::{compress, read_u64, PlrConfig, PlrMatrix};
use crate::subdomain::{LayerWorkspace, Slab};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Role indices: rows 0, 1, n, n+1.
pub const TOP_GHOST: usize = 0;
pub const TOP: usize = 1;
pub const BOTTOM: usize = 2;
pub const BOTTOM_GHOST: usize = 3;

/// Source data per role (`None` = zero).
pub type RoleSources<'a> = [Option<&'a [C64]>; 4];
/// Sampled panels per role (empty when not requested).
pub type RolePanels = [Vec<C64>; 4];

pub const ALL_ROLES: [bool; 4] = [true; 4];

/// Row on which the data of each role is injected: v₀ → 1, v₁ → 0, vₙ → n+1, vₙ₊₁ → n.
pub const INJECTION_ROLE: [usize; 4] = [TOP, TOP_GHOST, BOTTOM_GHOST, BOTTOM];

/// Application of the incomplete Green's integrals of one layer,
/// `Σ G↓_j(v₀, v₁) + G↑_j(vₙ, vₙ₊₁)` sampled at the requested roles.
pub trait GreenIntegral: Send + Sync {
    fn row_len(&self) -> usize;

    fn apply(&self, src: RoleSources<'_>, want: [bool; 4]) -> Result<RolePanels>;

    /// Cumulative operator-element touches of all applications.
    fn touches(&self) -> u64;
}

/// Signed couplings carrying role data into the injection rows.
#[derive(Clone, Debug)]
pub struct RoleCouplings {
    /// `[−H₁₀, H₀₁, Hₙ₊₁,ₙ, −Hₙ,ₙ₊₁]`.
    pub blocks: [Tridiag; 4],
    /// Array rows of roles 0, 1, n, n+1.
    pub rows: [usize; 4],
}

impl RoleCouplings {
    pub fn of(ws: &Slab) -> Result<Self> {
        let rows = [ws.row(ws.role_depth(0))?, ws.row(ws.role_depth(1))?, ws.row(ws.role_depth(2))?, ws.row(ws.role_depth(3))?];
        let neg = |t: Tridiag| Tridiag {
            lower: t.lower.iter().map(|v| -v).collect(),
            diag: t.diag.iter().map(|v| -v).collect(),
            upper: t.upper.iter().map(|v| -v).collect(),
        };
        let blocks = [
            neg(ws.op.coupling(rows[TOP], rows[TOP_GHOST])),
            ws.op.coupling(rows[TOP_GHOST], rows[TOP]),
            ws.op.coupling(rows[BOTTOM_GHOST], rows[BOTTOM]),
            neg(ws.op.coupling(rows[BOTTOM], rows[BOTTOM_GHOST])),
        ];
        Ok(Self { blocks, rows })
    }

    /// Equivalent sources of the unit vectors of role `role`: one local
    /// array of length `len` per lateral node, stacked.
    pub fn unit_sources(&self, role: usize, len: usize) -> Vec<C64> {
        let t = &self.blocks[role];
        let nx = t.diag.len();
        let row = self.rows[INJECTION_ROLE[role]];
        let mut rhs = vec![ZERO; len * nx];
        for col in 0..nx {
            let base = col * len + row * nx;
            rhs[base + col] = t.diag[col];
            if col > 0 {
                rhs[base + col - 1] = t.upper[col - 1];
            }
            if col + 1 < nx {
                rhs[base + col + 1] = t.lower[col + 1];
            }
        }
        rhs
    }

    /// rhs += equivalent sources of the role data.
    pub fn inject(&self, src: RoleSources<'_>, nx: usize, rhs: &mut [C64]) -> Result<()> {
        for (r, s) in src.iter().enumerate() {
            let Some(v) = s else { continue };
            if v.len() != nx {
                return Err(Error::DimensionMismatch { expected: nx, got: v.len() });
            }
            let row = self.rows[INJECTION_ROLE[r]];
            self.blocks[r].apply_add(ONE, v, &mut rhs[row * nx..(row + 1) * nx]);
        }
        Ok(())
    }
}

fn sample(rows: &[usize; 4], w: &[C64], nx: usize, want: [bool; 4]) -> RolePanels {
    let mut out: RolePanels = Default::default();
    for j in 0..4 {
        if want[j] {
            out[j] = w[rows[j] * nx..(rows[j] + 1) * nx].to_vec();
        }
    }
    out
}

/// Matrix-free application: inject, solve the layer, sample.
#[derive(Debug)]
pub struct DirectGreen {
    ws: Arc<LayerWorkspace>,
    couplings: RoleCouplings,
    touches: AtomicU64,
}

impl DirectGreen {
    pub fn new(ws: Arc<LayerWorkspace>) -> Result<Self> {
        let couplings = RoleCouplings::of(&ws)?;
        Ok(Self { ws, couplings, touches: AtomicU64::new(0) })
    }

    pub fn workspace(&self) -> &LayerWorkspace {
        &self.ws
    }

    pub fn couplings(&self) -> &RoleCouplings {
        &self.couplings
    }

    /// Full local field generated by the role data.
    pub fn field(&self, src: RoleSources<'_>) -> Result<Vec<C64>> {
        let mut rhs = vec![ZERO; self.ws.len()];
        self.couplings.inject(src, self.ws.row_len(), &mut rhs)?;
        self.touches.fetch_add(self.ws.solver().factor_entries() as u64, Ordering::Relaxed);
        self.ws.local_solve(&rhs)
    }
}

impl GreenIntegral for DirectGreen {
    fn row_len(&self) -> usize {
        self.ws.row_len()
    }

    fn apply(&self, src: RoleSources<'_>, want: [bool; 4]) -> Result<RolePanels> {
        if src.iter().all(|s| s.is_none_or(|v| v.iter().all(|x| *x == ZERO))) {
            let nx = self.row_len();
            return Ok(std::array::from_fn(|j| if want[j] { vec![ZERO; nx] } else { Vec::new() }));
        }
        let w = self.field(src)?;
        Ok(sample(&self.couplings.rows, &w, self.ws.row_len(), want))
    }

    fn touches(&self) -> u64 {
        self.touches.load(Ordering::Relaxed)
    }
}

/// Dense or PLR-compressed map between two interface rows.
#[derive(Clone, Debug)]
pub enum InterfaceOperator {
    Dense(Mat),
    Plr(PlrMatrix),
}

/// When to compress interface operators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionPolicy {
    /// Rows at or above which a block is compressed.
    pub threshold: usize,
    pub plr: PlrConfig,
}

impl CompressionPolicy {
    pub fn for_omega(omega: f64) -> Self {
        Self { threshold: 256, plr: PlrConfig::for_omega(omega) }
    }
}

impl InterfaceOperator {
    pub fn new(a: Mat, policy: Option<&CompressionPolicy>) -> Result<Self> {
        match policy {
            Some(p) if a.rows() >= p.threshold => Ok(InterfaceOperator::Plr(compress(&a, &p.plr)?)),
            _ => Ok(InterfaceOperator::Dense(a)),
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            InterfaceOperator::Dense(a) => a.rows(),
            InterfaceOperator::Plr(p) => p.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            InterfaceOperator::Dense(a) => a.cols(),
            InterfaceOperator::Plr(p) => p.cols(),
        }
    }

    /// Element touches of one application.
    pub fn entries(&self) -> usize {
        match self {
            InterfaceOperator::Dense(a) => a.rows() * a.cols(),
            InterfaceOperator::Plr(p) => p.entries(),
        }
    }

    pub fn is_compressed(&self) -> bool {
        matches!(self, InterfaceOperator::Plr(_))
    }

    /// y += alpha A x.
    pub fn apply_add(&self, alpha: C64, x: &[C64], y: &mut [C64]) -> Result<()> {
        match self {
            InterfaceOperator::Dense(a) => {
                if x.len() != a.cols() || y.len() != a.rows() {
                    return Err(Error::DimensionMismatch { expected: a.cols(), got: x.len() });
                }
                a.matvec_add(alpha, x, y);
                Ok(())
            }
            InterfaceOperator::Plr(p) => p.matvec_add(alpha, x, y),
        }
    }

    pub fn to_dense(&self) -> Mat {
        match self {
            InterfaceOperator::Dense(a) => a.clone(),
            InterfaceOperator::Plr(p) => p.to_dense(),
        }
    }

    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        match self {
            InterfaceOperator::Dense(a) => {
                out.push(1);
                crate::plr::write_mat(a, out);
            }
            InterfaceOperator::Plr(p) => {
                out.push(2);
                p.write_bytes(out);
            }
        }
    }

    pub fn read_bytes(bytes: &[u8], pos: &mut usize) -> Result<Self> {
        let tag = *bytes.get(*pos).ok_or_else(|| Error::Artifact("truncated operator".into()))?;
        *pos += 1;
        match tag {
            1 => Ok(InterfaceOperator::Dense(crate::plr::read_mat(bytes, pos)?)),
            2 => Ok(InterfaceOperator::Plr(PlrMatrix::read_bytes(bytes, pos)?)),
            t => Err(Error::Artifact(format!("unknown operator tag {t}"))),
        }
    }
}

/// Cached redefined Green blocks `G_{j,r}` for targets and sources in the four roles.
#[derive(Debug)]
pub struct GreenBlockSet {
    row_len: usize,
    /// `blocks[j][r]`: target role j, source role r; `None` for inactive sources.
    blocks: [[Option<InterfaceOperator>; 4]; 4],
    touches: AtomicU64,
}

impl GreenBlockSet {
    /// One multi-right-hand-side solve per active source role, sources being
    /// the columns of the signed coupling blocks.
    pub fn compute(ws: &LayerWorkspace, active: [bool; 4], policy: Option<&CompressionPolicy>) -> Result<Self> {
        let c = RoleCouplings::of(ws)?;
        let nx = ws.row_len();
        let len = ws.len();
        let mut blocks: [[Option<InterfaceOperator>; 4]; 4] = Default::default();
        for r in 0..4 {
            if !active[r] {
                continue;
            }
            let mut rhs = c.unit_sources(r, len);
            ws.local_solve_many(&mut rhs, nx)?;
            for j in 0..4 {
                let tr = c.rows[j];
                let m = Mat::from_fn(nx, nx, |i, col| rhs[col * len + tr * nx + i]);
                blocks[j][r] = Some(InterfaceOperator::new(m, policy)?);
            }
        }
        Ok(Self { row_len: nx, blocks, touches: AtomicU64::new(0) })
    }

    pub fn block(&self, target: usize, source: usize) -> Option<&InterfaceOperator> {
        self.blocks[target][source].as_ref()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &InterfaceOperator> {
        self.blocks.iter().flatten().flatten()
    }

    /// Stored complex entries over all blocks.
    pub fn entries(&self) -> usize {
        self.blocks().map(|b| b.entries()).sum()
    }

    pub fn from_blocks(row_len: usize, blocks: [[Option<InterfaceOperator>; 4]; 4]) -> Result<Self> {
        for b in blocks.iter().flatten().flatten() {
            if b.rows() != row_len || b.cols() != row_len {
                return Err(Error::DimensionMismatch { expected: row_len, got: b.rows() });
            }
        }
        Ok(Self { row_len, blocks, touches: AtomicU64::new(0) })
    }

    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.row_len as u64).to_le_bytes());
        for b in self.blocks.iter().flatten() {
            match b {
                None => out.push(0),
                Some(op) => op.write_bytes(out),
            }
        }
    }

    pub fn read_bytes(bytes: &[u8], pos: &mut usize) -> Result<Self> {
        let row_len = read_u64(bytes, pos)? as usize;
        let mut blocks: [[Option<InterfaceOperator>; 4]; 4] = Default::default();
        for j in 0..4 {
            for r in 0..4 {
                if bytes.get(*pos) == Some(&0) {
                    *pos += 1;
                } else {
                    blocks[j][r] = Some(InterfaceOperator::read_bytes(bytes, pos)?);
                }
            }
        }
        Self::from_blocks(row_len, blocks)
    }
}

impl GreenIntegral for GreenBlockSet {
    fn row_len(&self) -> usize {
        self.row_len
    }

    fn apply(&self, src: RoleSources<'_>, want: [bool; 4]) -> Result<RolePanels> {
        let nx = self.row_len;
        let mut out: RolePanels = Default::default();
        let mut touched = 0usize;
        for j in 0..4 {
            if !want[j] {
                continue;
            }
            let mut y = vec![ZERO; nx];
            for r in 0..4 {
                let (Some(v), Some(b)) = (src[r], &self.blocks[j][r]) else { continue };
                b.apply_add(ONE, v, &mut y)?;
                touched += b.entries();
            }
            out[j] = y;
        }
        self.touches.fetch_add(touched as u64, Ordering::Relaxed);
        Ok(out)
    }

    fn touches(&self) -> u64 {
        self.touches.load(Ordering::Relaxed)
    }
}

/// Interface-to-interface operators `G(z_j, z_k)` with the h quadrature
/// weight: `h · (H^ℓ)⁻¹(δ_k/h²)` sampled at each target depth.
pub fn green_columns(ws: &LayerWorkspace, h: f64, source_depth: i64, targets: &[i64]) -> Result<Vec<Mat>> {
    let nx = ws.row_len();
    let len = ws.len();
    let src = ws.row(source_depth)?;
    let rows: Vec<usize> = targets.iter().map(|&t| ws.row(t)).collect::<Result<_>>()?;
    let mut rhs = vec![ZERO; len * nx];
    for col in 0..nx {
        rhs[col * len + src * nx + col] = C64::new(1.0 / h, 0.0);
    }
    ws.local_solve_many(&mut rhs, nx)?;
    Ok(rows.iter().map(|&r| Mat::from_fn(nx, nx, |i, col| rhs[col * len + r * nx + i])).collect())
}

/// Down-going incomplete integral `G↓_j(v₀, v₁)`.
pub fn incomplete_green_down(g: &dyn GreenIntegral, v0: &[C64], v1: &[C64], target: usize) -> Result<Vec<C64>> {
    let mut want = [false; 4];
    want[target] = true;
    let mut out = g.apply([Some(v0), Some(v1), None, None], want)?;
    Ok(std::mem::take(&mut out[target]))
}

/// Up-going incomplete integral `G↑_j(vₙ, vₙ₊₁)`.
pub fn incomplete_green_up(g: &dyn GreenIntegral, vn: &[C64], vn1: &[C64], target: usize) -> Result<Vec<C64>> {
    let mut want = [false; 4];
    want[target] = true;
    let mut out = g.apply([None, None, Some(vn), Some(vn1)], want)?;
    Ok(std::mem::take(&mut out[target]))
}

/// Divided-difference form of the incomplete integrals, valid for the
/// five-point scheme: `G↓ = (G_{j,1} v₀ − G_{j,0} v₁)/h`,
/// `G↑ = (G_{j,n} vₙ₊₁ − G_{j,n+1} vₙ)/h`, with `cols[k]` = `G(z_j, z_k)` for k in roles.
pub fn incomplete_green_fd(cols: &[Mat; 4], h: f64, v: [&[C64]; 4]) -> Vec<C64> {
    let nx = cols[0].rows();
    let mut y = vec![ZERO; nx];
    let s = C64::new(1.0 / h, 0.0);
    cols[TOP].matvec_add(s, v[TOP_GHOST], &mut y);
    cols[TOP_GHOST].matvec_add(-s, v[TOP], &mut y);
    cols[BOTTOM].matvec_add(s, v[BOTTOM_GHOST], &mut y);
    cols[BOTTOM_GHOST].matvec_add(-s, v[BOTTOM], &mut y);
    y
}

/// Row `k` of the local Newton potential `(H^ℓ)⁻¹ f^ℓ`.
pub fn newton_potential(ws: &LayerWorkspace, f: &[C64], k: i64) -> Result<Vec<C64>> {
    let w = ws.local_solve(f)?;
    ws.extract_trace(&w, k)
}

/// Local field from boundary traces and the local source: one solve of the
/// GRF system with the four equivalent sources plus `f^ℓ`.
pub fn grf_reconstruct(ws: &LayerWorkspace, couplings: &RoleCouplings, traces: RoleSources<'_>, f: &[C64]) -> Result<Vec<C64>> {
    if f.len() != ws.len() {
        return Err(Error::DimensionMismatch { expected: ws.len(), got: f.len() });
    }
    let mut rhs = f.to_vec();
    couplings.inject(traces, ws.row_len(), &mut rhs)?;
    ws.local_solve(&rhs)
}
