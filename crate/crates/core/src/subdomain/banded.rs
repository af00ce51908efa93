use crate::discretization::{GridOperator, Tridiag};
use crate::error::{Error, Result};
use crate::linalg::{Lu, Mat};
use num_complex::Complex64 as C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Solver for `H x = b` on a node array, for any number of right-hand sides.
///
/// Columns are stored contiguously, each of length [`LocalSolver::dim`].
pub trait LocalSolver: Send + Sync {
    fn dim(&self) -> usize;

    fn solve_many(&self, b: &mut [C64], nrhs: usize) -> Result<()>;

    fn solve(&self, b: &[C64]) -> Result<Vec<C64>> {
        let mut x = b.to_vec();
        self.solve_many(&mut x, 1)?;
        Ok(x)
    }
}

/// Block LU of a block-tridiagonal grid operator.
///
/// Blocks run along the shorter array dimension. Elimination proceeds block
/// by block without block pivoting (partial pivoting inside each diagonal
/// block): `S_k = D_k − A_k S_{k−1}⁻¹ C_{k−1}`. Fill stays inside the band.
#[derive(Clone, Debug)]
pub struct BandedLu {
    nx: usize,
    nz: usize,
    transposed: bool,
    block: usize,
    lower: Vec<Tridiag>,
    upper: Vec<Tridiag>,
    pivots: Vec<Lu>,
}

impl BandedLu {
    pub fn factor(op: &GridOperator) -> Result<Self> {
        let transposed = op.nx() > op.nz();
        let owned;
        let t = if transposed {
            owned = op.transposed();
            &owned
        } else {
            op
        };
        let (m, nb) = (t.nx(), t.nz());
        let lower: Vec<Tridiag> = (0..nb).map(|k| if k > 0 { t.coupling(k, k - 1) } else { zero_tridiag(m) }).collect();
        let upper: Vec<Tridiag> = (0..nb).map(|k| if k + 1 < nb { t.coupling(k, k + 1) } else { zero_tridiag(m) }).collect();
        let mut pivots = Vec::with_capacity(nb);
        let mut schur = t.coupling(0, 0).to_dense();
        for k in 0..nb {
            let lu = Lu::factor(schur).map_err(|_| Error::SingularBlock { block: k })?;
            if k + 1 < nb {
                let w = lu.solve(&upper[k].to_dense());
                let mut next = t.coupling(k + 1, k + 1).to_dense();
                lower[k + 1].apply_cols_add(-ONE, w.data(), m, next.data_mut(), m, m);
                schur = next;
            } else {
                schur = Mat::zeros(0, 0);
            }
            pivots.push(lu);
        }
        drop(schur);
        Ok(Self { nx: op.nx(), nz: op.nz(), transposed, block: m, lower, upper, pivots })
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn block_count(&self) -> usize {
        self.pivots.len()
    }

    /// Storage held by the factors, in complex entries.
    pub fn factor_entries(&self) -> usize {
        self.pivots.len() * self.block * self.block + 6 * self.pivots.len() * self.block
    }

    /// Block-major position of natural node index `idx`.
    #[inline]
    fn position(&self, idx: usize) -> (usize, usize) {
        let (i, j) = (idx % self.nx, idx / self.nx);
        if self.transposed {
            (i, j)
        } else {
            (j, i)
        }
    }

    fn forward_backward(&self, x: &mut [C64], nrhs: usize) {
        let m = self.block;
        let nb = self.pivots.len();
        let chunk = m * nrhs;
        for k in 0..nb {
            let (done, rest) = x.split_at_mut(k * chunk);
            let zk = &mut rest[..chunk];
            if k > 0 {
                let prev = &done[(k - 1) * chunk..];
                self.lower[k].apply_cols_add(-ONE, prev, m, zk, m, nrhs);
            }
            self.pivots[k].solve_in_place(zk, nrhs);
        }
        let mut tmp = vec![ZERO; chunk];
        for k in (0..nb.saturating_sub(1)).rev() {
            let (head, tail) = x.split_at_mut((k + 1) * chunk);
            tmp.iter_mut().for_each(|v| *v = ZERO);
            self.upper[k].apply_cols_add(ONE, &tail[..chunk], m, &mut tmp, m, nrhs);
            self.pivots[k].solve_in_place(&mut tmp, nrhs);
            for (a, b) in head[k * chunk..].iter_mut().zip(&tmp) {
                *a -= b;
            }
        }
    }
}

fn zero_tridiag(n: usize) -> Tridiag {
    Tridiag { lower: vec![ZERO; n], diag: vec![ZERO; n], upper: vec![ZERO; n] }
}

impl LocalSolver for BandedLu {
    fn dim(&self) -> usize {
        self.nx * self.nz
    }

    fn solve_many(&self, b: &mut [C64], nrhs: usize) -> Result<()> {
        let n = self.dim();
        if b.len() != n * nrhs {
            return Err(Error::DimensionMismatch { expected: n * nrhs, got: b.len() });
        }
        if nrhs == 0 {
            return Ok(());
        }
        let m = self.block;
        let chunk = m * nrhs;
        let mut work = vec![ZERO; n * nrhs];
        for r in 0..nrhs {
            let col = &b[r * n..(r + 1) * n];
            for (idx, v) in col.iter().enumerate() {
                let (k, p) = self.position(idx);
                work[k * chunk + r * m + p] = *v;
            }
        }
        self.forward_backward(&mut work, nrhs);
        for r in 0..nrhs {
            let col = &mut b[r * n..(r + 1) * n];
            for (idx, v) in col.iter_mut().enumerate() {
                let (k, p) = self.position(idx);
                *v = work[k * chunk + r * m + p];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{synthetic_model, Discretization, Grid, Helmholtz, SyntheticKind};
    use crate::linalg::rel_diff;

    fn operator(nx: usize, nz: usize, disc: Discretization) -> GridOperator {
        let g = Grid::new(nx, nz, 0.05, 3).unwrap();
        let m = synthetic_model(SyntheticKind::RandomSmooth, 4, &g).unwrap();
        Helmholtz::new(m, 15.0, None, disc).unwrap().global_operator().unwrap()
    }

    fn random(n: usize, seed: u64) -> Vec<C64> {
        (0..n).map(|k| {
            let t = (k as f64 + 1.0) * (seed as f64 + 0.7);
            C64::new((t * 1.3).sin(), (t * 0.77).cos())
        }).collect()
    }

    #[test]
    fn round_trip_both_orientations() {
        for (nx, nz) in [(9, 14), (14, 9)] {
            for disc in [Discretization::Fd, Discretization::q1()] {
                let op = operator(nx, nz, disc);
                let lu = BandedLu::factor(&op).unwrap();
                let x0 = random(op.len(), 3);
                let b = op.apply(&x0).unwrap();
                let x = lu.solve(&b).unwrap();
                assert!(rel_diff(&x, &x0) < 1e-12, "{}", rel_diff(&x, &x0));
            }
        }
    }

    #[test]
    fn matches_dense_lu() {
        let op = operator(6, 7, Discretization::q1());
        let dense = Lu::factor(op.to_dense()).unwrap();
        let lu = BandedLu::factor(&op).unwrap();
        let b = random(op.len(), 9);
        let want = dense.solve(&Mat::from_col_major(b.len(), 1, b.clone()));
        let got = lu.solve(&b).unwrap();
        assert!(rel_diff(&got, want.data()) < 1e-12);
    }

    #[test]
    fn many_rhs_equals_single() {
        let op = operator(8, 11, Discretization::Fd);
        let lu = BandedLu::factor(&op).unwrap();
        let n = op.len();
        let mut all: Vec<C64> = (0..3).flat_map(|s| random(n, s)).collect();
        lu.solve_many(&mut all, 3).unwrap();
        for s in 0..3 {
            let one = lu.solve(&random(n, s)).unwrap();
            assert!(rel_diff(&all[s as usize * n..(s as usize + 1) * n], &one) < 1e-14);
        }
    }

    #[test]
    fn zero_rhs_and_size_mismatch() {
        let op = operator(5, 5, Discretization::Fd);
        let lu = BandedLu::factor(&op).unwrap();
        assert!(lu.solve(&vec![ZERO; op.len()]).unwrap().iter().all(|v| *v == ZERO));
        assert!(lu.solve(&vec![ZERO; 3]).is_err());
    }

    #[test]
    fn singular_block_is_reported() {
        let op = GridOperator::zeros(3, 3);
        assert!(matches!(BandedLu::factor(&op), Err(Error::SingularBlock { block: 0 })));
    }
}
