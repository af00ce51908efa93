//! Left-preconditioned GMRES and BiCGstab on flat complex vectors.

use crate::error::{Error, Result};
use crate::linalg::{dotc, norm2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gmres,
    Bicgstab,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmres" => Ok(Method::Gmres),
            "bicgstab" => Ok(Method::Bicgstab),
            other => Err(Error::InvalidArgument(format!("unknown krylov method '{other}'"))),
        }
    }
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Gmres => "gmres",
            Method::Bicgstab => "bicgstab",
        }
    }

    /// Iterations credited per history entry: BiCGstab records half steps.
    pub fn step(&self) -> f64 {
        match self {
            Method::Gmres => 1.0,
            Method::Bicgstab => 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrylovConfig {
    pub method: Method,
    /// Relative preconditioned residual at which to stop.
    pub tol: f64,
    pub max_iter: usize,
    /// GMRES restart length, 0 for none.
    pub restart: usize,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self { method: Method::Gmres, tol: 1e-7, max_iter: 200, restart: 0 }
    }
}

impl KrylovConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("krylov tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Converged solution with its residual history.
#[derive(Clone, Debug, PartialEq)]
pub struct KrylovOutcome {
    pub x: Vec<C64>,
    /// Relative preconditioned residuals; entry 0 is the initial residual.
    pub history: Vec<f64>,
    /// Matrix-vector products, with BiCGstab half steps counted as 0.5.
    pub iterations: f64,
}

pub type Operator<'a> = dyn FnMut(&[C64]) -> Result<Vec<C64>> + 'a;

/// Dispatches on `cfg.method`.
pub fn solve(op: &mut Operator<'_>, precond: &mut Operator<'_>, b: &[C64], cfg: &KrylovConfig) -> Result<KrylovOutcome> {
    match cfg.method {
        Method::Gmres => gmres(op, precond, b, cfg),
        Method::Bicgstab => bicgstab(op, precond, b, cfg),
    }
}

fn axpy(a: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// GMRES with modified Gram-Schmidt Arnoldi on `P A x = P b`.
pub fn gmres(op: &mut Operator<'_>, precond: &mut Operator<'_>, b: &[C64], cfg: &KrylovConfig) -> Result<KrylovOutcome> {
    cfg.validate()?;
    let n = b.len();
    let pb = precond(b)?;
    let bnorm = norm2(&pb);
    let mut x = vec![ZERO; n];
    let mut history = vec![1.0];
    if bnorm == 0.0 {
        return Ok(KrylovOutcome { x, history: vec![0.0], iterations: 0.0 });
    }
    let cycle = if cfg.restart == 0 { cfg.max_iter } else { cfg.restart.min(cfg.max_iter) };
    let mut total = 0usize;
    let mut r = pb.clone();
    loop {
        let beta = norm2(&r);
        let mut basis: Vec<Vec<C64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess: Vec<Vec<C64>> = Vec::new();
        let mut cs: Vec<C64> = Vec::new();
        let mut sn: Vec<C64> = Vec::new();
        let mut g = vec![C64::new(beta, 0.0)];
        let mut converged = false;
        let mut breakdown = false;
        for j in 0..cycle {
            let mut w = precond(&op(&basis[j])?)?;
            total += 1;
            let mut col = vec![ZERO; j + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = dotc(v, &w);
                col[i] = hij;
                axpy(-hij, v, &mut w);
            }
            let hnext = norm2(&w);
            col[j + 1] = C64::new(hnext, 0.0);
            for i in 0..j {
                let (a, bb) = (col[i], col[i + 1]);
                col[i] = cs[i].conj() * a + sn[i].conj() * bb;
                col[i + 1] = -sn[i] * a + cs[i] * bb;
            }
            let (a, bb) = (col[j], col[j + 1]);
            let rho = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            let (c, s) = if rho == 0.0 { (C64::new(1.0, 0.0), ZERO) } else { (a / rho, bb / rho) };
            col[j] = C64::new(rho, 0.0);
            col[j + 1] = ZERO;
            cs.push(c);
            sn.push(s);
            let gj = g[j];
            g[j] = c.conj() * gj;
            g.push(-s * gj);
            hess.push(col);
            let res = g[j + 1].norm() / bnorm;
            history.push(res);
            if res <= cfg.tol {
                converged = true;
            }
            if hnext <= 1e-14 * beta {
                breakdown = true;
            } else {
                basis.push(w.iter().map(|v| v / hnext).collect());
            }
            if converged || breakdown || total >= cfg.max_iter {
                break;
            }
        }
        let k = hess.len();
        let mut y = vec![ZERO; k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for l in i + 1..k {
                acc -= hess[l][i] * y[l];
            }
            y[i] = if hess[i][i] == ZERO { ZERO } else { acc / hess[i][i] };
        }
        for (i, yi) in y.iter().enumerate() {
            axpy(*yi, &basis[i], &mut x);
        }
        let last = *history.last().expect("history");
        if converged {
            return Ok(KrylovOutcome { x, history, iterations: total as f64 });
        }
        if breakdown {
            return Err(Error::Breakdown { basis: k });
        }
        if total >= cfg.max_iter {
            return Err(Error::NotConverged { iterations: total as f64, residual: last, history });
        }
        let ax = precond(&op(&x)?)?;
        r = pb.iter().zip(&ax).map(|(p, a)| p - a).collect();
    }
}

/// BiCGstab on `P A x = P b` with the initial residual as shadow vector.
pub fn bicgstab(op: &mut Operator<'_>, precond: &mut Operator<'_>, b: &[C64], cfg: &KrylovConfig) -> Result<KrylovOutcome> {
    cfg.validate()?;
    let n = b.len();
    let pb = precond(b)?;
    let bnorm = norm2(&pb);
    let mut x = vec![ZERO; n];
    if bnorm == 0.0 {
        return Ok(KrylovOutcome { x, history: vec![0.0], iterations: 0.0 });
    }
    let mut history = vec![1.0];
    let mut r = pb.clone();
    let shadow = r.clone();
    let (mut rho, mut alpha, mut omega) = (C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0));
    let mut v = vec![ZERO; n];
    let mut p = vec![ZERO; n];
    let mut iterations = 0.0;
    while iterations < cfg.max_iter as f64 {
        let rho_new = dotc(&shadow, &r);
        if rho_new == ZERO {
            return Err(Error::Breakdown { basis: (2.0 * iterations) as usize });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        v = precond(&op(&p)?)?;
        let sv = dotc(&shadow, &v);
        if sv == ZERO {
            return Err(Error::Breakdown { basis: (2.0 * iterations) as usize });
        }
        alpha = rho_new / sv;
        axpy(alpha, &p, &mut x);
        let s: Vec<C64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        iterations += 0.5;
        let res = norm2(&s) / bnorm;
        history.push(res);
        if res <= cfg.tol {
            return Ok(KrylovOutcome { x, history, iterations });
        }
        let t = precond(&op(&s)?)?;
        let tt = dotc(&t, &t);
        omega = if tt == ZERO { ZERO } else { dotc(&t, &s) / tt };
        axpy(omega, &s, &mut x);
        r = s.iter().zip(&t).map(|(si, ti)| si - omega * ti).collect();
        iterations += 0.5;
        let res = norm2(&r) / bnorm;
        history.push(res);
        if res <= cfg.tol {
            return Ok(KrylovOutcome { x, history, iterations });
        }
        if omega == ZERO {
            return Err(Error::Breakdown { basis: (2.0 * iterations) as usize });
        }
        rho = rho_new;
    }
    let residual = *history.last().expect("history");
    Err(Error::NotConverged { iterations, residual, history })
}

/// Writes `(iteration, residual)` rows.
pub fn write_history<W: std::io::Write>(out: W, history: &[f64], step: f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "residual"])?;
    for (k, r) in history.iter().enumerate() {
        w.write_record([format!("{}", k as f64 * step), format!("{r:.6e}")])?;
    }
    w.flush()?;
    Ok(())
}
