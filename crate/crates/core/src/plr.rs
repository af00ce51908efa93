//! Partitioned-low-rank (PLR) matrices.
//!
//! A block is first approximated by a randomized range finder. If its ε-rank
//! exceeds `max_rank`, or the certified error is too large, it is split
//! dyadically and the children are compressed recursively. Blocks that can
//! no longer be split are stored dense.

use crate::error::{Error, Result};
use crate::linalg::{orthonormal_basis, svd, Mat, Op};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Oversampling of the range finder.
pub const OVERSAMPLING: usize = 8;
/// Power iterations of the spectral-norm certificate.
pub const CERTIFY_ITERATIONS: usize = 20;
/// Singular values kept above `TRUNCATION_MARGIN · ε · σ₁`, leaving room for
/// the randomized approximation error under the certified ε bound.
pub const TRUNCATION_MARGIN: f64 = 0.5;

/// Compression parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlrConfig {
    pub eps: f64,
    pub max_rank: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl PlrConfig {
    /// ε = 1e-8, `max_rank = ⌈√ω⌉`, leaves of at least 16.
    pub fn for_omega(omega: f64) -> Self {
        Self { eps: 1e-8, max_rank: omega.sqrt().ceil().max(1.0) as usize, min_leaf: 16, seed: 0x5eed }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidArgument(format!("PLR eps must lie in (0, 1), got {}", self.eps)));
        }
        if self.max_rank == 0 {
            return Err(Error::InvalidArgument("PLR max_rank must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidArgument("PLR min_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Node {
    Dense(Mat),
    /// `U · V` with `U: m×r`, `V: r×n`.
    LowRank { u: Mat, v: Mat },
    Split { rows: usize, cols: usize, children: Vec<(usize, usize, Node)> },
}

impl Node {
    fn shape(&self) -> (usize, usize) {
        match self {
            Node::Dense(a) => (a.rows(), a.cols()),
            Node::LowRank { u, v } => (u.rows(), v.cols()),
            Node::Split { rows, cols, .. } => (*rows, *cols),
        }
    }

    fn entries(&self) -> usize {
        match self {
            Node::Dense(a) => a.rows() * a.cols(),
            Node::LowRank { u, v } => u.rows() * u.cols() + v.rows() * v.cols(),
            Node::Split { children, .. } => children.iter().map(|c| c.2.entries()).sum(),
        }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Split { children, .. } => 1 + children.iter().map(|c| c.2.depth()).max().unwrap_or(0),
            _ => 0,
        }
    }

    fn leaves(&self, r0: usize, c0: usize, out: &mut Vec<LeafInfo>) {
        match self {
            Node::Dense(a) => out.push(LeafInfo { row: r0, col: c0, rows: a.rows(), cols: a.cols(), rank: None }),
            Node::LowRank { u, v } => out.push(LeafInfo { row: r0, col: c0, rows: u.rows(), cols: v.cols(), rank: Some(u.cols()) }),
            Node::Split { children, .. } => {
                for (r, c, ch) in children {
                    ch.leaves(r0 + r, c0 + c, out);
                }
            }
        }
    }

    fn apply_add(&self, op: Op, alpha: C64, x: &[C64], y: &mut [C64]) {
        match self {
            Node::Dense(a) => match op {
                Op::N => a.matvec_add(alpha, x, y),
                _ => a.matvec_t_add(alpha, x, y),
            },
            Node::LowRank { u, v } => {
                let r = u.cols();
                if r == 0 {
                    return;
                }
                let mut t = vec![ZERO; r];
                match op {
                    Op::N => {
                        v.matvec_add(ONE, x, &mut t);
                        u.matvec_add(alpha, &t, y);
                    }
                    _ => {
                        u.matvec_t_add(ONE, x, &mut t);
                        v.matvec_t_add(alpha, &t, y);
                    }
                }
            }
            Node::Split { children, .. } => {
                for (r, c, ch) in children {
                    let (m, n) = ch.shape();
                    match op {
                        Op::N => ch.apply_add(op, alpha, &x[*c..c + n], &mut y[*r..r + m]),
                        _ => ch.apply_add(op, alpha, &x[*r..r + m], &mut y[*c..c + n]),
                    }
                }
            }
        }
    }

    fn write_dense(&self, out: &mut Mat, r0: usize, c0: usize) {
        match self {
            Node::Dense(a) => out.set_block(r0, c0, a),
            Node::LowRank { u, v } => {
                if u.cols() > 0 {
                    out.set_block(r0, c0, &u.mul(v));
                }
            }
            Node::Split { children, .. } => {
                for (r, c, ch) in children {
                    ch.write_dense(out, r0 + r, c0 + c);
                }
            }
        }
    }
}

/// Position and payload kind of one leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LeafInfo {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
    /// `None` for dense leaves.
    pub rank: Option<usize>,
}

/// Compressed matrix with a dyadic block tree.
#[derive(Debug)]
pub struct PlrMatrix {
    rows: usize,
    cols: usize,
    eps: f64,
    max_rank: usize,
    root: Node,
    touches: AtomicU64,
}

impl Clone for PlrMatrix {
    fn clone(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            eps: self.eps,
            max_rank: self.max_rank,
            root: self.root.clone(),
            touches: AtomicU64::new(self.touches.load(Ordering::Relaxed)),
        }
    }
}

/// Compresses `a` to relative accuracy `cfg.eps` per leaf.
pub fn compress(a: &Mat, cfg: &PlrConfig) -> Result<PlrMatrix> {
    cfg.validate()?;
    let root = compress_block(a.clone(), 0, 0, cfg)?;
    Ok(PlrMatrix { rows: a.rows(), cols: a.cols(), eps: cfg.eps, max_rank: cfg.max_rank, root, touches: AtomicU64::new(0) })
}

fn block_rng(cfg: &PlrConfig, r0: usize, c0: usize, m: usize, n: usize) -> ChaCha8Rng {
    let mut s = cfg.seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [r0, c0, m, n] {
        s = s.rotate_left(17) ^ (v as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    }
    ChaCha8Rng::seed_from_u64(s)
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    })
}

fn compress_block(a: Mat, r0: usize, c0: usize, cfg: &PlrConfig) -> Result<Node> {
    let (m, n) = (a.rows(), a.cols());
    if a.max_abs() == 0.0 {
        return Ok(Node::LowRank { u: Mat::zeros(m, 0), v: Mat::zeros(0, n) });
    }
    let worthwhile = cfg.max_rank * (m + n) < m * n;
    if worthwhile {
        if let Some((u, v)) = low_rank(&a, r0, c0, cfg)? {
            return Ok(Node::LowRank { u, v });
        }
    }
    let longer = m.max(n);
    let split_rows = m > cfg.min_leaf && 2 * m >= longer;
    let split_cols = n > cfg.min_leaf && 2 * n >= longer;
    if !split_rows && !split_cols {
        return Ok(Node::Dense(a));
    }
    let row_parts: Vec<(usize, usize)> = if split_rows { vec![(0, m / 2), (m / 2, m - m / 2)] } else { vec![(0, m)] };
    let col_parts: Vec<(usize, usize)> = if split_cols { vec![(0, n / 2), (n / 2, n - n / 2)] } else { vec![(0, n)] };
    let mut children = Vec::with_capacity(row_parts.len() * col_parts.len());
    for &(cs, cl) in &col_parts {
        for &(rs, rl) in &row_parts {
            let child = compress_block(a.block(rs, cs, rl, cl), r0 + rs, c0 + cs, cfg)?;
            children.push((rs, cs, child));
        }
    }
    Ok(Node::Split { rows: m, cols: n, children })
}

/// Randomized rank-revealing factorization; `None` when the ε-rank exceeds
/// `max_rank` or the certificate fails.
fn low_rank(a: &Mat, r0: usize, c0: usize, cfg: &PlrConfig) -> Result<Option<(Mat, Mat)>> {
    let (m, n) = (a.rows(), a.cols());
    let k = (cfg.max_rank + OVERSAMPLING).min(m).min(n);
    let mut rng = block_rng(cfg, r0, c0, m, n);
    let omega = gaussian(n, k, &mut rng);
    let q = orthonormal_basis(a.mul(&omega))?;
    let z = orthonormal_basis(a.mul_op(Op::H, &q, Op::N))?;
    let q = orthonormal_basis(a.mul(&z))?;
    let b = q.mul_op(Op::H, a, Op::N);
    let (ub, s, vt) = svd(b)?;
    let s0 = s[0];
    if s0 == 0.0 {
        return Ok(Some((Mat::zeros(m, 0), Mat::zeros(0, n))));
    }
    let rank = s.iter().take_while(|&&v| v > TRUNCATION_MARGIN * cfg.eps * s0).count();
    if rank > cfg.max_rank || rank == k && k < m.min(n) {
        return Ok(None);
    }
    let mut u = q.mul(&ub.block(0, 0, ub.rows(), rank));
    for j in 0..rank {
        for v in u.col_mut(j) {
            *v *= s[j];
        }
    }
    let v = vt.block(0, 0, rank, n);
    let err = spectral_error(a, &Node::LowRank { u: u.clone(), v: v.clone() }, &mut rng);
    if err > cfg.eps * s0 {
        return Ok(None);
    }
    Ok(Some((u, v)))
}

/// Power-iteration estimate of ‖A − P‖₂.
fn spectral_error(a: &Mat, p: &Node, rng: &mut ChaCha8Rng) -> f64 {
    let (m, n) = (a.rows(), a.cols());
    let mut x: Vec<C64> = gaussian(n, 1, rng).into_data();
    let mut est = 0.0;
    for _ in 0..CERTIFY_ITERATIONS {
        let nx = crate::linalg::norm2(&x);
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let mut y = a.matvec(&x);
        p.apply_add(Op::N, -ONE, &x, &mut y);
        est = crate::linalg::norm2(&y);
        // x ← (A − P)ᴴ y
        let yc: Vec<C64> = y.iter().map(|v| v.conj()).collect();
        let mut t = vec![ZERO; n];
        a.matvec_t_add(ONE, &yc, &mut t);
        p.apply_add(Op::T, -ONE, &yc, &mut t);
        x = t.iter().map(|v| v.conj()).collect();
        debug_assert_eq!(y.len(), m);
    }
    est
}

impl PlrMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn max_rank(&self) -> usize {
        self.max_rank
    }

    /// Stored complex entries; also the element touches of one matvec.
    pub fn entries(&self) -> usize {
        self.root.entries()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn leaves(&self) -> Vec<LeafInfo> {
        let mut out = Vec::new();
        self.root.leaves(0, 0, &mut out);
        out
    }

    /// Total element touches of all matvecs so far.
    pub fn touches(&self) -> u64 {
        self.touches.load(Ordering::Relaxed)
    }

    /// y += alpha A x.
    pub fn matvec_add(&self, alpha: C64, x: &[C64], y: &mut [C64]) -> Result<()> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch { expected: self.cols, got: x.len() });
        }
        if y.len() != self.rows {
            return Err(Error::DimensionMismatch { expected: self.rows, got: y.len() });
        }
        self.root.apply_add(Op::N, alpha, x, y);
        self.touches.fetch_add(self.entries() as u64, Ordering::Relaxed);
        Ok(())
    }

    pub fn matvec(&self, x: &[C64]) -> Result<Vec<C64>> {
        let mut y = vec![ZERO; self.rows];
        self.matvec_add(ONE, x, &mut y)?;
        Ok(y)
    }

    pub fn to_dense(&self) -> Mat {
        let mut out = Mat::zeros(self.rows, self.cols);
        self.root.write_dense(&mut out, 0, 0);
        out
    }

    /// Randomized estimate of ‖A − P‖₂ / ‖A‖₂ against the original matrix.
    pub fn certify(&self, a: &Mat, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let err = spectral_error(a, &self.root, &mut rng);
        let zero = Node::LowRank { u: Mat::zeros(a.rows(), 0), v: Mat::zeros(0, a.cols()) };
        let norm = spectral_error(a, &zero, &mut rng);
        if norm == 0.0 {
            err
        } else {
            err / norm
        }
    }

    /// Preorder serialization: tag, shape, payload as little-endian f64 pairs.
    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        for v in [self.rows as u64, self.cols as u64, self.max_rank as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.eps.to_le_bytes());
        write_node(&self.root, out);
    }

    pub fn read_bytes(bytes: &[u8], pos: &mut usize) -> Result<Self> {
        let rows = read_u64(bytes, pos)? as usize;
        let cols = read_u64(bytes, pos)? as usize;
        let max_rank = read_u64(bytes, pos)? as usize;
        let eps = f64::from_bits(read_u64(bytes, pos)?);
        let root = read_node(bytes, pos)?;
        if root.shape() != (rows, cols) {
            return Err(Error::Artifact("PLR tree shape disagrees with header".into()));
        }
        Ok(Self { rows, cols, eps, max_rank, root, touches: AtomicU64::new(0) })
    }
}

pub(crate) fn write_mat(a: &Mat, out: &mut Vec<u8>) {
    out.extend_from_slice(&(a.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(a.cols() as u64).to_le_bytes());
    for v in a.data() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
}

pub(crate) fn read_u64(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    let end = *pos + 8;
    let chunk = bytes.get(*pos..end).ok_or_else(|| Error::Artifact("truncated blob".into()))?;
    *pos = end;
    Ok(u64::from_le_bytes(chunk.try_into().expect("eight bytes")))
}

pub(crate) fn read_mat(bytes: &[u8], pos: &mut usize) -> Result<Mat> {
    let rows = read_u64(bytes, pos)? as usize;
    let cols = read_u64(bytes, pos)? as usize;
    let count = rows.checked_mul(cols).ok_or_else(|| Error::Artifact("matrix size overflow".into()))?;
    if bytes.len().saturating_sub(*pos) < count * 16 {
        return Err(Error::Artifact("truncated matrix payload".into()));
    }
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let re = f64::from_bits(read_u64(bytes, pos)?);
        let im = f64::from_bits(read_u64(bytes, pos)?);
        data.push(C64::new(re, im));
    }
    Ok(Mat::from_col_major(rows, cols, data))
}

fn write_node(node: &Node, out: &mut Vec<u8>) {
    match node {
        Node::Dense(a) => {
            out.push(0);
            write_mat(a, out);
        }
        Node::LowRank { u, v } => {
            out.push(1);
            write_mat(u, out);
            write_mat(v, out);
        }
        Node::Split { rows, cols, children } => {
            out.push(2);
            for v in [*rows as u64, *cols as u64, children.len() as u64] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for (r, c, ch) in children {
                out.extend_from_slice(&(*r as u64).to_le_bytes());
                out.extend_from_slice(&(*c as u64).to_le_bytes());
                write_node(ch, out);
            }
        }
    }
}

fn read_node(bytes: &[u8], pos: &mut usize) -> Result<Node> {
    let tag = *bytes.get(*pos).ok_or_else(|| Error::Artifact("truncated PLR tree".into()))?;
    *pos += 1;
    match tag {
        0 => Ok(Node::Dense(read_mat(bytes, pos)?)),
        1 => {
            let u = read_mat(bytes, pos)?;
            let v = read_mat(bytes, pos)?;
            if u.cols() != v.rows() {
                return Err(Error::Artifact("low-rank factors disagree".into()));
            }
            Ok(Node::LowRank { u, v })
        }
        2 => {
            let rows = read_u64(bytes, pos)? as usize;
            let cols = read_u64(bytes, pos)? as usize;
            let count = read_u64(bytes, pos)? as usize;
            if count > 4 {
                return Err(Error::Artifact(format!("PLR node with {count} children")));
            }
            let mut children = Vec::with_capacity(count);
            for _ in 0..count {
                let r = read_u64(bytes, pos)? as usize;
                let c = read_u64(bytes, pos)? as usize;
                let ch = read_node(bytes, pos)?;
                let (m, n) = ch.shape();
                if r + m > rows || c + n > cols {
                    return Err(Error::Artifact("PLR child outside its parent".into()));
                }
                children.push((r, c, ch));
            }
            Ok(Node::Split { rows, cols, children })
        }
        t => Err(Error::Artifact(format!("unknown PLR node tag {t}"))),
    }
}

/// Fitted exponent α in `touches ~ n^{2α}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub alpha: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
}

/// Least-squares slope of log(touches) against log(n), halved.
pub fn estimate_alpha(samples: &[(f64, f64)]) -> Result<AlphaFit> {
    if samples.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 sizes, got {}", samples.len())));
    }
    if samples.iter().any(|&(n, t)| !(n > 0.0) || !(t > 0.0)) {
        return Err(Error::InvalidArgument("sizes and touches must be positive".into()));
    }
    let lo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    if hi < 4.0 * lo {
        return Err(Error::InvalidArgument(format!("sizes must span at least 4x, got {lo}..{hi}")));
    }
    let pts: Vec<(f64, f64)> = samples.iter().map(|&(n, t)| (n.ln(), t.ln())).collect();
    let (slope, intercept) = least_squares(&pts);
    let rms = (pts.iter().map(|&(x, y)| (y - slope * x - intercept).powi(2)).sum::<f64>() / pts.len() as f64).sqrt();
    Ok(AlphaFit { alpha: slope / 2.0, residual: rms })
}

/// Ordinary least-squares line `y = slope·x + intercept`.
pub fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_diff;

    fn cfg(eps: f64, max_rank: usize) -> PlrConfig {
        PlrConfig { eps, max_rank, min_leaf: 16, seed: 7 }
    }

    /// Smooth kernel 1/(1 + |x − y|) on separated-ish points: low rank off the diagonal.
    fn kernel(n: usize) -> Mat {
        Mat::from_fn(n, n, |i, j| {
            let d = (i as f64 - j as f64).abs() / n as f64;
            C64::new(1.0 / (0.05 + d), (3.0 * d).sin())
        })
    }

    #[test]
    fn rank_one_is_a_single_leaf() {
        let a = Mat::from_fn(64, 48, |i, j| C64::new(i as f64 + 1.0, 0.5) * C64::new(1.0, j as f64 * 0.1));
        let p = compress(&a, &cfg(1e-8, 4)).unwrap();
        let leaves = p.leaves();
        assert_eq!(leaves.len(), 1);
        assert_eq!(leaves[0].rank, Some(1));
        assert!(rel_diff(p.to_dense().data(), a.data()) < 1e-10);
    }

    #[test]
    fn identity_has_no_low_rank_diagonal_leaves() {
        let a = Mat::identity(64);
        let p = compress(&a, &cfg(1e-8, 1)).unwrap();
        for l in p.leaves() {
            let on_diagonal = l.row < l.col + l.cols && l.col < l.row + l.rows;
            if on_diagonal {
                assert_eq!(l.rank, None, "{l:?}");
            } else {
                assert_eq!(l.rank, Some(0), "{l:?}");
            }
        }
        assert!(p.to_dense() == a);
    }

    #[test]
    fn kernel_certified_and_matvec_accurate() {
        let a = kernel(128);
        let c = cfg(1e-8, 10);
        let p = compress(&a, &c).unwrap();
        assert!(p.certify(&a, 3) <= c.eps);
        assert!(p.entries() < 128 * 128);
        assert!(p.depth() as f64 <= (128f64).log2());
        let x: Vec<C64> = (0..128).map(|k| C64::new((k as f64).sin(), 0.3)).collect();
        let y = p.matvec(&x).unwrap();
        let want = a.matvec(&x);
        let bound = 10.0 * c.eps * a.norm_fro() * crate::linalg::norm2(&x);
        let err: f64 = y.iter().zip(&want).map(|(u, v)| (u - v).norm_sqr()).sum::<f64>().sqrt();
        assert!(err <= bound);
        assert_eq!(p.touches(), p.entries() as u64);
    }

    #[test]
    fn zero_vector_and_shape_checks() {
        let p = compress(&kernel(40), &cfg(1e-8, 4)).unwrap();
        assert!(p.matvec(&vec![ZERO; 40]).unwrap().iter().all(|v| *v == ZERO));
        assert!(p.matvec(&vec![ZERO; 39]).is_err());
        assert!(compress(&kernel(4), &cfg(2.0, 4)).is_err());
    }

    #[test]
    fn deterministic_and_serializable() {
        let a = kernel(96);
        let p = compress(&a, &cfg(1e-8, 6)).unwrap();
        let q = compress(&a, &cfg(1e-8, 6)).unwrap();
        assert!(p.to_dense() == q.to_dense());
        let mut bytes = Vec::new();
        p.write_bytes(&mut bytes);
        let mut pos = 0;
        let r = PlrMatrix::read_bytes(&bytes, &mut pos).unwrap();
        assert_eq!(pos, bytes.len());
        assert!(r.to_dense() == p.to_dense());
        assert!(PlrMatrix::read_bytes(&bytes[..bytes.len() - 3], &mut 0).is_err());
    }

    #[test]
    fn alpha_fits() {
        let dense: Vec<(f64, f64)> = [32.0, 64.0, 128.0, 256.0].iter().map(|&n: &f64| (n, n * n)).collect();
        assert!((estimate_alpha(&dense).unwrap().alpha - 1.0).abs() < 0.05);
        let rank1: Vec<(f64, f64)> = [32.0, 64.0, 128.0, 256.0].iter().map(|&n: &f64| (n, 2.0 * n)).collect();
        assert!((estimate_alpha(&rank1).unwrap().alpha - 0.5).abs() < 0.05);
        assert!(estimate_alpha(&dense[..2]).is_err());
        assert!(estimate_alpha(&[(10.0, 1.0), (12.0, 2.0), (20.0, 3.0)]).is_err());
    }
}
