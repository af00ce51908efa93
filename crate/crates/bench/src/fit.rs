//! Log-log scaling fits of per-iteration cost against the unknown count.

use crate::error::{BenchError, Result};
use crate::sweep::ResultRow;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeMap;
use std::path::Path;

/// Distinct sizes a series needs before it is fitted.
pub const MIN_SIZES: usize = 4;

/// Two-sided confidence level of the slope interval.
pub const CONFIDENCE: f64 = 0.95;

/// Rounding slack when intervals are compared.
const OVERLAP_SLACK: f64 = 1e-9;

/// Ordinary least squares of `ln y = intercept + slope · ln x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half width of the slope confidence interval.
    pub half_width: f64,
    pub r2: f64,
    pub samples: usize,
}

impl LogLogFit {
    pub fn low(&self) -> f64 {
        self.slope - self.half_width
    }

    pub fn high(&self) -> f64 {
        self.slope + self.half_width
    }

    /// Multiplicative constant `e^intercept`.
    pub fn constant(&self) -> f64 {
        self.intercept.exp()
    }

    pub fn overlaps(&self, other: &LogLogFit) -> bool {
        self.low() <= other.high() + OVERLAP_SLACK && other.low() <= self.high() + OVERLAP_SLACK
    }
}

/// Fit over `(x, y)` samples with positive entries and at least
/// [`MIN_SIZES`] distinct `x`.
pub fn loglog_fit(samples: &[(f64, f64)]) -> Result<LogLogFit> {
    let mut xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < MIN_SIZES {
        return Err(BenchError::InsufficientSizes { needed: MIN_SIZES, got: xs.len() });
    }
    if samples.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(BenchError::Config("log-log fit needs positive samples".into()));
    }
    let k = samples.len() as f64;
    let lx: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ly: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let dof = k - 2.0;
    let t = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom").inverse_cdf(0.5 + CONFIDENCE / 2.0);
    let half_width = t * (sse / dof / sxx).sqrt();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(LogLogFit { slope, intercept, half_width, r2, samples: samples.len() })
}

/// Cost columns of the result table that are fitted.
pub const METRICS: [&str; 2] = ["touches_per_iter", "iter_time_s"];

fn metric(row: &ResultRow, name: &str) -> Option<f64> {
    match name {
        "touches_per_iter" => row.touches_per_iter,
        "iter_time_s" => row.iter_time_s,
        _ => None,
    }
}

/// Series identity: everything but the size and frequency.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesKey {
    pub metric: String,
    pub backend: String,
    pub precond: String,
    pub method: String,
    pub layers: usize,
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesFit {
    pub metric: String,
    pub backend: String,
    pub precond: String,
    pub method: String,
    pub layers: usize,
    pub cells: usize,
    pub slope: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub constant: f64,
    pub r2: f64,
    pub sizes: usize,
}

impl SeriesFit {
    pub fn key(&self) -> SeriesKey {
        SeriesKey {
            metric: self.metric.clone(),
            backend: self.backend.clone(),
            precond: self.precond.clone(),
            method: self.method.clone(),
            layers: self.layers,
            cells: self.cells,
        }
    }
}

fn series(rows: &[ResultRow]) -> BTreeMap<SeriesKey, BTreeMap<usize, f64>> {
    let mut out: BTreeMap<SeriesKey, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        for m in METRICS {
            let Some(v) = metric(r, m) else { continue };
            let key = SeriesKey {
                metric: m.into(),
                backend: r.backend.clone(),
                precond: r.precond.clone(),
                method: r.method.clone(),
                layers: r.layers,
                cells: r.cells,
            };
            // One sample per size; repeated frequencies keep the largest cost.
            let e = out.entry(key).or_default().entry(r.n).or_insert(v);
            *e = e.max(v);
        }
    }
    out
}

/// Slope of every series with enough sizes, in key order.
pub fn fit_scaling(rows: &[ResultRow]) -> Result<Vec<SeriesFit>> {
    let mut fits = Vec::new();
    let mut most = 0;
    for (key, points) in series(rows) {
        most = most.max(points.len());
        if points.len() < MIN_SIZES {
            continue;
        }
        let samples: Vec<(f64, f64)> = points.iter().map(|(&n, &v)| (n as f64, v)).collect();
        let f = loglog_fit(&samples)?;
        fits.push(SeriesFit {
            metric: key.metric,
            backend: key.backend,
            precond: key.precond,
            method: key.method,
            layers: key.layers,
            cells: key.cells,
            slope: f.slope,
            ci_low: f.low(),
            ci_high: f.high(),
            constant: f.constant(),
            r2: f.r2,
            sizes: points.len(),
        });
    }
    if fits.is_empty() {
        return Err(BenchError::InsufficientSizes { needed: MIN_SIZES, got: most });
    }
    Ok(fits)
}

/// Nested-pt against nested-lu on the same series otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedComparison {
    pub metric: String,
    pub precond: String,
    pub method: String,
    pub layers: usize,
    pub cells: usize,
    pub pt_slope: f64,
    pub lu_slope: f64,
    pub slopes_overlap: bool,
    /// Geometric mean cost over the sizes both backends ran.
    pub pt_level: f64,
    pub lu_level: f64,
    pub lu_cheaper: bool,
}

/// Pairs the nested backends' series. The level comparison uses measured
/// costs at shared sizes, so it does not depend on the fitted slopes.
pub fn compare_nested(rows: &[ResultRow], fits: &[SeriesFit]) -> Vec<NestedComparison> {
    let all = series(rows);
    let mut out = Vec::new();
    for pt in fits.iter().filter(|f| f.backend == "nested-pt") {
        let pt_key = pt.key();
        let lu_key = SeriesKey { backend: "nested-lu".into(), ..pt_key.clone() };
        let Some(lu) = fits.iter().find(|f| f.key() == lu_key) else { continue };
        let (a, b) = (&all[&pt_key], &all[&lu_key]);
        let shared: Vec<usize> = a.keys().filter(|n| b.contains_key(n)).copied().collect();
        let gmean = |s: &BTreeMap<usize, f64>| (shared.iter().map(|n| s[n].ln()).sum::<f64>() / shared.len() as f64).exp();
        let (pt_level, lu_level) = (gmean(a), gmean(b));
        out.push(NestedComparison {
            metric: pt.metric.clone(),
            precond: pt.precond.clone(),
            method: pt.method.clone(),
            layers: pt.layers,
            cells: pt.cells,
            pt_slope: pt.slope,
            lu_slope: lu.slope,
            slopes_overlap: pt.ci_low <= lu.ci_high + OVERLAP_SLACK && lu.ci_low <= pt.ci_high + OVERLAP_SLACK,
            pt_level,
            lu_level,
            lu_cheaper: lu_level < pt_level,
        });
    }
    out
}

/// Fits and comparisons written next to the table as `fits.csv` and
/// `nested_comparison.csv`.
pub fn fit_table(table: &Path) -> Result<(Vec<SeriesFit>, Vec<NestedComparison>)> {
    let rows = crate::sweep::read_results(table)?;
    let fits = fit_scaling(&rows)?;
    let cmp = compare_nested(&rows, &fits);
    let dir = table.parent().unwrap_or(Path::new("."));
    let mut w = csv::Writer::from_path(dir.join("fits.csv"))?;
    for f in &fits {
        w.serialize(f)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("nested_comparison.csv"))?;
    for c in &cmp {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok((fits, cmp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_is_recovered() {
        let s: Vec<(f64, f64)> = [100.0, 400.0, 1600.0, 6400.0, 25600.0].iter().map(|&n: &f64| (n, 3.0 * n.powf(0.75))).collect();
        let f = loglog_fit(&s).unwrap();
        assert!((f.slope - 0.75).abs() < 0.01);
        assert!(f.half_width < 0.01);
        assert!((f.constant() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn noisy_slope_lies_in_its_interval() {
        let noise = [1.04, 0.97, 1.02, 0.95, 1.03, 0.99];
        let s: Vec<(f64, f64)> = (0..6).map(|i| {
            let n = 100.0 * 2f64.powi(i);
            (n, n.powf(0.6) * noise[i as usize])
        }).collect();
        let f = loglog_fit(&s).unwrap();
        assert!(f.half_width > 0.0);
        assert!(f.low() < 0.6 && 0.6 < f.high());
    }

    #[test]
    fn too_few_sizes_is_an_error() {
        assert!(matches!(loglog_fit(&[(10.0, 1.0), (10.0, 2.0)]), Err(BenchError::InsufficientSizes { got: 1, .. })));
        assert!(matches!(fit_scaling(&[]), Err(BenchError::InsufficientSizes { got: 0, .. })));
    }

    fn row(n: usize, backend: &str, touches: f64) -> ResultRow {
        ResultRow {
            nx: n,
            nz: n,
            n: n * n,
            freq_hz: 1.0,
            omega: 1.0,
            layers: 3,
            cells: 2,
            backend: backend.into(),
            precond: "gs".into(),
            method: "gmres".into(),
            iterations: Some(4.0),
            setup_s: Some(0.1),
            iter_time_s: Some(touches * 1e-9),
            touches_per_iter: Some(touches),
            residual: Some(1e-9),
            error: None,
            status: "ok".into(),
        }
    }

    #[test]
    fn nested_backends_are_paired() {
        let mut rows = Vec::new();
        for n in [16usize, 32, 64, 128] {
            let big_n = (n * n) as f64;
            rows.push(row(n, "nested-pt", 5.0 * big_n.powf(0.7)));
            rows.push(row(n, "nested-lu", 2.0 * big_n.powf(0.7)));
        }
        let fits = fit_scaling(&rows).unwrap();
        assert_eq!(fits.len(), 4);
        let cmp = compare_nested(&rows, &fits);
        assert_eq!(cmp.len(), 2);
        for c in cmp {
            assert!(c.slopes_overlap && c.lu_cheaper);
            assert!((c.pt_level / c.lu_level - 2.5).abs() < 1e-9);
        }
    }
}
