//! Column-major complex dense matrices backed by BLAS/LAPACK.

extern crate openblas_src;

use crate::error::{Error, Result};
use cblas_sys::{CBLAS_LAYOUT, CBLAS_TRANSPOSE};
use num_complex::Complex64 as C64;
use std::os::raw::c_int;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Transposition flag for products.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    N,
    T,
    H,
}

impl Op {
    fn cblas(self) -> CBLAS_TRANSPOSE {
        match self {
            Op::N => CBLAS_TRANSPOSE::CblasNoTrans,
            Op::T => CBLAS_TRANSPOSE::CblasTrans,
            Op::H => CBLAS_TRANSPOSE::CblasConjTrans,
        }
    }
}

/// Dense complex matrix in column-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i + n * i] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Wraps column-major storage.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols, "column-major buffer size");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i + self.rows * j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i + self.rows * j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: C64) {
        self.data[i + self.rows * j] += v;
    }

    pub fn col(&self, j: usize) -> &[C64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [C64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Copies the sub-block starting at (r0, c0).
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Mat {
        assert!(r0 + nr <= self.rows && c0 + nc <= self.cols, "block out of range");
        let mut out = Mat::zeros(nr, nc);
        for j in 0..nc {
            let src = &self.data[r0 + self.rows * (c0 + j)..r0 + self.rows * (c0 + j) + nr];
            out.col_mut(j).copy_from_slice(src);
        }
        out
    }

    /// Writes `b` into the sub-block starting at (r0, c0).
    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Mat) {
        assert!(r0 + b.rows <= self.rows && c0 + b.cols <= self.cols, "block out of range");
        for j in 0..b.cols {
            let dst = r0 + self.rows * (c0 + j);
            self.data[dst..dst + b.rows].copy_from_slice(b.col(j));
        }
    }

    /// Adds `alpha * b` into the sub-block starting at (r0, c0).
    pub fn add_block(&mut self, r0: usize, c0: usize, alpha: C64, b: &Mat) {
        assert!(r0 + b.rows <= self.rows && c0 + b.cols <= self.cols, "block out of range");
        for j in 0..b.cols {
            let dst = r0 + self.rows * (c0 + j);
            for (d, s) in self.data[dst..dst + b.rows].iter_mut().zip(b.col(j)) {
                *d += alpha * s;
            }
        }
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn adjoint(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    pub fn scale(&mut self, a: C64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `self - other`.
    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    /// Product `op(self) * op(other)`.
    pub fn mul_op(&self, ta: Op, other: &Mat, tb: Op) -> Mat {
        let (m, k) = if ta == Op::N { (self.rows, self.cols) } else { (self.cols, self.rows) };
        let (k2, n) = if tb == Op::N { (other.rows, other.cols) } else { (other.cols, other.rows) };
        assert_eq!(k, k2, "inner dimensions");
        let mut c = Mat::zeros(m, n);
        gemm(ta, tb, m, n, k, ONE, &self.data, self.rows, &other.data, other.rows, ZERO, &mut c.data, m);
        c
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        self.mul_op(Op::N, other, Op::N)
    }

    /// y = A x.
    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.rows];
        self.matvec_add(ONE, x, &mut y);
        y
    }

    /// y += alpha A x.
    pub fn matvec_add(&self, alpha: C64, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.cols, "matvec input length");
        assert_eq!(y.len(), self.rows, "matvec output length");
        if self.rows == 0 || self.cols == 0 {
            return;
        }
        unsafe {
            cblas_sys::cblas_zgemv(
                CBLAS_LAYOUT::CblasColMajor,
                CBLAS_TRANSPOSE::CblasNoTrans,
                self.rows as c_int,
                self.cols as c_int,
                &alpha as *const C64 as *const _,
                self.data.as_ptr() as *const _,
                self.rows as c_int,
                x.as_ptr() as *const _,
                1,
                &ONE as *const C64 as *const _,
                y.as_mut_ptr() as *mut _,
                1,
            );
        }
    }

    /// y += alpha Aᵗ x (plain transpose, no conjugation).
    pub fn matvec_t_add(&self, alpha: C64, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.rows, "matvec input length");
        assert_eq!(y.len(), self.cols, "matvec output length");
        if self.rows == 0 || self.cols == 0 {
            return;
        }
        unsafe {
            cblas_sys::cblas_zgemv(
                CBLAS_LAYOUT::CblasColMajor,
                CBLAS_TRANSPOSE::CblasTrans,
                self.rows as c_int,
                self.cols as c_int,
                &alpha as *const C64 as *const _,
                self.data.as_ptr() as *const _,
                self.rows as c_int,
                x.as_ptr() as *const _,
                1,
                &ONE as *const C64 as *const _,
                y.as_mut_ptr() as *mut _,
                1,
            );
        }
    }
}

/// Raw column-major GEMM: C = alpha op(A) op(B) + beta C.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    ta: Op,
    tb: Op,
    m: usize,
    n: usize,
    k: usize,
    alpha: C64,
    a: &[C64],
    lda: usize,
    b: &[C64],
    ldb: usize,
    beta: C64,
    c: &mut [C64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for j in 0..n {
            for v in &mut c[j * ldc..j * ldc + m] {
                *v *= beta;
            }
        }
        return;
    }
    unsafe {
        cblas_sys::cblas_zgemm(
            CBLAS_LAYOUT::CblasColMajor,
            ta.cblas(),
            tb.cblas(),
            m as c_int,
            n as c_int,
            k as c_int,
            &alpha as *const C64 as *const _,
            a.as_ptr() as *const _,
            lda.max(1) as c_int,
            b.as_ptr() as *const _,
            ldb.max(1) as c_int,
            &beta as *const C64 as *const _,
            c.as_mut_ptr() as *mut _,
            ldc.max(1) as c_int,
        );
    }
}

/// LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: Mat,
    piv: Vec<c_int>,
}

impl Lu {
    pub fn factor(mut a: Mat) -> Result<Lu> {
        assert_eq!(a.rows, a.cols, "LU needs a square matrix");
        let n = a.rows as c_int;
        let mut piv = vec![0 as c_int; a.rows];
        let mut info: c_int = 0;
        if n > 0 {
            unsafe {
                lapack_sys::zgetrf_(&n, &n, a.data.as_mut_ptr() as *mut _, &n, piv.as_mut_ptr(), &mut info);
            }
        }
        if info != 0 {
            return Err(Error::Lapack { routine: "zgetrf", info });
        }
        Ok(Lu { lu: a, piv })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    /// Solves in place for `nrhs` right-hand sides stored column-major with leading dimension `dim`.
    pub fn solve_in_place(&self, b: &mut [C64], nrhs: usize) {
        let n = self.lu.rows;
        assert_eq!(b.len(), n * nrhs, "rhs size");
        if n == 0 || nrhs == 0 {
            return;
        }
        let (nn, nr) = (n as c_int, nrhs as c_int);
        let mut info: c_int = 0;
        unsafe {
            lapack_sys::zgetrs_(
                b"N".as_ptr() as *const _,
                &nn,
                &nr,
                self.lu.data.as_ptr() as *const _,
                &nn,
                self.piv.as_ptr(),
                b.as_mut_ptr() as *mut _,
                &nn,
                &mut info,
            );
        }
        debug_assert_eq!(info, 0);
    }

    pub fn solve(&self, b: &Mat) -> Mat {
        let mut x = b.clone();
        self.solve_in_place(&mut x.data, b.cols);
        x
    }

    pub fn inverse(&self) -> Mat {
        let mut x = Mat::identity(self.dim());
        self.solve_in_place(&mut x.data, self.dim());
        x
    }

    /// Packed factors (unit lower L and upper U share storage).
    pub fn packed(&self) -> &Mat {
        &self.lu
    }

    /// Row interchanges, 1-based as returned by LAPACK.
    pub fn pivots(&self) -> &[c_int] {
        &self.piv
    }
}

/// Orthonormal basis of the column space of `y` (thin Householder QR).
pub fn orthonormal_basis(mut y: Mat) -> Result<Mat> {
    let (m, n) = (y.rows, y.cols);
    let k = m.min(n);
    if k == 0 {
        return Ok(Mat::zeros(m, 0));
    }
    let (mi, ni, ki) = (m as c_int, n as c_int, k as c_int);
    let mut tau = vec![ZERO; k];
    let mut info: c_int = 0;
    let mut query = ZERO;
    let lquery: c_int = -1;
    unsafe {
        lapack_sys::zgeqrf_(&mi, &ni, y.data.as_mut_ptr() as *mut _, &mi, tau.as_mut_ptr() as *mut _, &mut query as *mut C64 as *mut _, &lquery, &mut info);
    }
    let lwork = (query.re as usize).max(n).max(1);
    let mut work = vec![ZERO; lwork];
    let lw = lwork as c_int;
    unsafe {
        lapack_sys::zgeqrf_(&mi, &ni, y.data.as_mut_ptr() as *mut _, &mi, tau.as_mut_ptr() as *mut _, work.as_mut_ptr() as *mut _, &lw, &mut info);
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "zgeqrf", info });
    }
    let mut q = y.block(0, 0, m, k);
    unsafe {
        lapack_sys::zungqr_(&mi, &ki, &ki, q.data.as_mut_ptr() as *mut _, &mi, tau.as_ptr() as *const _, &mut query as *mut C64 as *mut _, &lquery, &mut info);
    }
    let lwork = (query.re as usize).max(k).max(1);
    let mut work = vec![ZERO; lwork];
    let lw = lwork as c_int;
    unsafe {
        lapack_sys::zungqr_(&mi, &ki, &ki, q.data.as_mut_ptr() as *mut _, &mi, tau.as_ptr() as *const _, work.as_mut_ptr() as *mut _, &lw, &mut info);
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "zungqr", info });
    }
    Ok(q)
}

/// Thin SVD: returns (U, s, Vᴴ) with k = min(m, n) singular triplets.
pub fn svd(mut a: Mat) -> Result<(Mat, Vec<f64>, Mat)> {
    let (m, n) = (a.rows, a.cols);
    let k = m.min(n);
    if k == 0 {
        return Ok((Mat::zeros(m, 0), Vec::new(), Mat::zeros(0, n)));
    }
    let (mi, ni, ki) = (m as c_int, n as c_int, k as c_int);
    let mut s = vec![0.0; k];
    let mut u = Mat::zeros(m, k);
    let mut vt = Mat::zeros(k, n);
    let mut rwork = vec![0.0; 5 * k];
    let mut info: c_int = 0;
    let mut query = ZERO;
    let lquery: c_int = -1;
    unsafe {
        lapack_sys::zgesvd_(
            b"S".as_ptr() as *const _,
            b"S".as_ptr() as *const _,
            &mi,
            &ni,
            a.data.as_mut_ptr() as *mut _,
            &mi,
            s.as_mut_ptr(),
            u.data.as_mut_ptr() as *mut _,
            &mi,
            vt.data.as_mut_ptr() as *mut _,
            &ki,
            &mut query as *mut C64 as *mut _,
            &lquery,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    let lwork = (query.re as usize).max(2 * k + m.max(n)).max(1);
    let mut work = vec![ZERO; lwork];
    let lw = lwork as c_int;
    unsafe {
        lapack_sys::zgesvd_(
            b"S".as_ptr() as *const _,
            b"S".as_ptr() as *const _,
            &mi,
            &ni,
            a.data.as_mut_ptr() as *mut _,
            &mi,
            s.as_mut_ptr(),
            u.data.as_mut_ptr() as *mut _,
            &mi,
            vt.data.as_mut_ptr() as *mut _,
            &ki,
            work.as_mut_ptr() as *mut _,
            &lw,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "zgesvd", info });
    }
    Ok((u, s, vt))
}

/// Eigenvalues of a general complex square matrix.
pub fn eigenvalues(mut a: Mat) -> Result<Vec<C64>> {
    assert_eq!(a.rows, a.cols, "eigenvalues need a square matrix");
    let n = a.rows;
    if n == 0 {
        return Ok(Vec::new());
    }
    let ni = n as c_int;
    let mut w = vec![ZERO; n];
    let mut dummy = [ZERO; 1];
    let one: c_int = 1;
    let mut rwork = vec![0.0; 2 * n];
    let mut info: c_int = 0;
    let mut query = ZERO;
    let lquery: c_int = -1;
    unsafe {
        lapack_sys::zgeev_(
            b"N".as_ptr() as *const _,
            b"N".as_ptr() as *const _,
            &ni,
            a.data.as_mut_ptr() as *mut _,
            &ni,
            w.as_mut_ptr() as *mut _,
            dummy.as_mut_ptr() as *mut _,
            &one,
            dummy.as_mut_ptr() as *mut _,
            &one,
            &mut query as *mut C64 as *mut _,
            &lquery,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    let lwork = (query.re as usize).max(2 * n).max(1);
    let mut work = vec![ZERO; lwork];
    let lw = lwork as c_int;
    unsafe {
        lapack_sys::zgeev_(
            b"N".as_ptr() as *const _,
            b"N".as_ptr() as *const _,
            &ni,
            a.data.as_mut_ptr() as *mut _,
            &ni,
            w.as_mut_ptr() as *mut _,
            dummy.as_mut_ptr() as *mut _,
            &one,
            dummy.as_mut_ptr() as *mut _,
            &one,
            work.as_mut_ptr() as *mut _,
            &lw,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "zgeev", info });
    }
    Ok(w)
}

/// Euclidean norm of a complex vector.
pub fn norm2(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Hermitian inner product ⟨x, y⟩ = Σ conj(x_i) y_i.
pub fn dotc(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// ‖a − b‖ / ‖b‖ (absolute when ‖b‖ = 0).
pub fn rel_diff(a: &[C64], b: &[C64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den = norm2(b);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
