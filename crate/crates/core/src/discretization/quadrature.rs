//! Quadrature rules on the unit square.

use num_complex::Complex64 as C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Two-point Gauss–Legendre nodes and weights on [0, 1].
pub(crate) const GAUSS2: [(f64, f64); 2] = [(0.21132486540518713, 0.5), (0.7886751345948129, 0.5)];

/// Three-point Gauss–Legendre nodes and weights on [0, 1].
pub(crate) const GAUSS3: [(f64, f64); 3] = [
    (0.1127016653792583, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.8872983346207417, 5.0 / 18.0),
];

/// Tensor rule over `rule × rule`.
pub(crate) fn tensor<const N: usize>(rule: &[(f64, f64)], mut f: impl FnMut(f64, f64) -> [C64; N]) -> [C64; N] {
    let mut acc = [ZERO; N];
    for &(eta, wz) in rule {
        for &(xi, wx) in rule {
            let v = f(xi, eta);
            let w = wx * wz;
            for k in 0..N {
                acc[k] += w * v[k];
            }
        }
    }
    acc
}

fn norm<const N: usize>(v: &[C64; N]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Adaptive trapezoidal rule on the unit square with Richardson extrapolation
/// (tensor Romberg). Refines by halving the step until two successive
/// extrapolants differ by at most `tol` relative to the latest one.
///
/// Returns the value, or the last error estimate if `max_level` is exhausted.
pub(crate) fn adaptive_trapezoid<const N: usize>(
    mut f: impl FnMut(f64, f64) -> [C64; N],
    tol: f64,
    max_level: usize,
) -> Result<[C64; N], f64> {
    let mut table: Vec<Vec<[C64; N]>> = Vec::new();
    let mut estimate = f64::INFINITY;
    for level in 0..=max_level {
        let m = 1usize << level;
        let step = 1.0 / m as f64;
        let mut acc = [ZERO; N];
        for j in 0..=m {
            let wz = if j == 0 || j == m { 0.5 } else { 1.0 };
            for i in 0..=m {
                let wx = if i == 0 || i == m { 0.5 } else { 1.0 };
                let v = f(i as f64 * step, j as f64 * step);
                let w = wx * wz * step * step;
                for k in 0..N {
                    acc[k] += w * v[k];
                }
            }
        }
        let mut row = vec![acc];
        if let Some(prev) = table.last() {
            for col in 1..=level {
                let factor = 4f64.powi(col as i32) - 1.0;
                let mut next = [ZERO; N];
                for k in 0..N {
                    next[k] = row[col - 1][k] + (row[col - 1][k] - prev[col - 1][k]) / factor;
                }
                row.push(next);
            }
            let best = row[level];
            let before = prev[level - 1];
            let mut diff = [ZERO; N];
            for k in 0..N {
                diff[k] = best[k] - before[k];
            }
            let scale = norm(&best);
            estimate = if scale > 0.0 { norm(&diff) / scale } else { norm(&diff) };
            if level >= 2 && (estimate <= tol || scale == 0.0) {
                return Ok(best);
            }
        }
        table.push(row);
    }
    Err(estimate)
}
