use crate::error::{Error, Result};
use crate::linalg::Mat;
use num_complex::Complex64 as C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Stencil slot of offset (dx, dz).
#[inline]
pub(crate) fn slot(dx: i64, dz: i64) -> usize {
    ((dz + 1) * 3 + (dx + 1)) as usize
}

/// Nine-point operator on an `nx × nz` node array with Dirichlet data outside.
///
/// Node `(i, j)` is stored at `i + nx·j`, so each depth row is a contiguous
/// block and the matrix is block tridiagonal in `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridOperator {
    nx: usize,
    nz: usize,
    coef: Vec<[C64; 9]>,
}

impl GridOperator {
    pub fn zeros(nx: usize, nz: usize) -> Self {
        Self { nx, nz, coef: vec![[ZERO; 9]; nx * nz] }
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn nz(&self) -> usize {
        self.nz
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coefficient coupling node (i, j) to (i+dx, j+dz).
    #[inline]
    pub fn get(&self, i: usize, j: usize, dx: i64, dz: i64) -> C64 {
        self.coef[i + self.nx * j][slot(dx, dz)]
    }

    #[inline]
    pub(crate) fn add(&mut self, i: usize, j: usize, dx: i64, dz: i64, v: C64) {
        self.coef[i + self.nx * j][slot(dx, dz)] += v;
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, dx: i64, dz: i64, v: C64) {
        self.coef[i + self.nx * j][slot(dx, dz)] = v;
    }

    /// All nine coefficients of row (i, j).
    pub fn row(&self, i: usize, j: usize) -> &[C64; 9] {
        &self.coef[i + self.nx * j]
    }

    /// y = H x.
    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: x.len() });
        }
        let (nx, nz) = (self.nx as i64, self.nz as i64);
        let mut y = vec![ZERO; x.len()];
        for j in 0..nz {
            for i in 0..nx {
                let c = &self.coef[(i + nx * j) as usize];
                let mut acc = ZERO;
                for dz in -1..=1 {
                    let jj = j + dz;
                    if jj < 0 || jj >= nz {
                        continue;
                    }
                    for dx in -1..=1 {
                        let ii = i + dx;
                        if ii < 0 || ii >= nx {
                            continue;
                        }
                        acc += c[slot(dx, dz)] * x[(ii + nx * jj) as usize];
                    }
                }
                y[(i + nx * j) as usize] = acc;
            }
        }
        Ok(y)
    }

    /// ‖H x − b‖ / ‖b‖.
    pub fn relative_residual(&self, x: &[C64], b: &[C64]) -> Result<f64> {
        let y = self.apply(x)?;
        Ok(crate::linalg::rel_diff(&y, b))
    }

    /// Operator of the swapped variables (x ↔ z).
    pub fn transposed(&self) -> GridOperator {
        let mut out = GridOperator::zeros(self.nz, self.nx);
        for j in 0..self.nz {
            for i in 0..self.nx {
                let c = &self.coef[i + self.nx * j];
                let d = &mut out.coef[j + self.nz * i];
                for dz in -1..=1 {
                    for dx in -1..=1 {
                        d[slot(dz, dx)] = c[slot(dx, dz)];
                    }
                }
            }
        }
        out
    }

    /// Coupling from depth row `from` into depth row `to` (`|to − from| ≤ 1`).
    pub fn coupling(&self, to: usize, from: usize) -> Tridiag {
        assert!(to < self.nz && from < self.nz && to.abs_diff(from) <= 1, "invalid row coupling");
        let dz = from as i64 - to as i64;
        let n = self.nx;
        let mut t = Tridiag { lower: vec![ZERO; n], diag: vec![ZERO; n], upper: vec![ZERO; n] };
        for i in 0..n {
            let c = &self.coef[i + n * to];
            t.lower[i] = c[slot(-1, dz)];
            t.diag[i] = c[slot(0, dz)];
            t.upper[i] = c[slot(1, dz)];
        }
        t.lower[0] = ZERO;
        t.upper[n - 1] = ZERO;
        t
    }

    /// Dense matrix (small oracles only).
    pub fn to_dense(&self) -> Mat {
        let n = self.len();
        let (nx, nz) = (self.nx as i64, self.nz as i64);
        let mut m = Mat::zeros(n, n);
        for j in 0..nz {
            for i in 0..nx {
                let row = (i + nx * j) as usize;
                for dz in -1..=1 {
                    for dx in -1..=1 {
                        let (ii, jj) = (i + dx, j + dz);
                        if ii < 0 || ii >= nx || jj < 0 || jj >= nz {
                            continue;
                        }
                        m.set(row, (ii + nx * jj) as usize, self.coef[row][slot(dx, dz)]);
                    }
                }
            }
        }
        m
    }

    /// Largest |H_ab − H_ba| relative to the largest coefficient.
    pub fn asymmetry(&self) -> f64 {
        let (nx, nz) = (self.nx as i64, self.nz as i64);
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for j in 0..nz {
            for i in 0..nx {
                for dz in -1..=1 {
                    for dx in -1..=1 {
                        let (ii, jj) = (i + dx, j + dz);
                        if ii < 0 || ii >= nx || jj < 0 || jj >= nz {
                            continue;
                        }
                        let a = self.get(i as usize, j as usize, dx, dz);
                        let b = self.get(ii as usize, jj as usize, -dx, -dz);
                        worst = worst.max((a - b).norm());
                        scale = scale.max(a.norm());
                    }
                }
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}

/// Tridiagonal block, the coupling between two adjacent depth rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiag {
    pub lower: Vec<C64>,
    pub diag: Vec<C64>,
    pub upper: Vec<C64>,
}

impl Tridiag {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// y += alpha T x.
    pub fn apply_add(&self, alpha: C64, x: &[C64], y: &mut [C64]) {
        let n = self.len();
        assert!(x.len() == n && y.len() == n, "tridiagonal apply length");
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.lower[i] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.upper[i] * x[i + 1];
            }
            y[i] += alpha * acc;
        }
    }

    /// Y += alpha T X for `m`-row column-major blocks with leading dimension `ldx`/`ldy`.
    pub fn apply_cols_add(&self, alpha: C64, x: &[C64], ldx: usize, y: &mut [C64], ldy: usize, ncols: usize) {
        let n = self.len();
        for c in 0..ncols {
            let xc = &x[c * ldx..c * ldx + n];
            let yc = &mut y[c * ldy..c * ldy + n];
            self.apply_add(alpha, xc, yc);
        }
    }

    pub fn to_dense(&self) -> Mat {
        let n = self.len();
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, self.diag[i]);
            if i > 0 {
                m.set(i, i - 1, self.lower[i]);
            }
            if i + 1 < n {
                m.set(i, i + 1, self.upper[i]);
            }
        }
        m
    }

    pub fn is_zero(&self) -> bool {
        self.diag.iter().chain(&self.lower).chain(&self.upper).all(|v| *v == ZERO)
    }
}
