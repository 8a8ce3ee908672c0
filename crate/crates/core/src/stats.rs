//! Running moments, curve points and the handful of classical tests the
//! experiments rely on.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Mean and variance accumulator with a pairwise merge
/// (Chan et al.), so a fixed merge order gives bit-identical results.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n as f64;
        self.n = n;
    }

    /// Sample variance (denominator `n - 1`).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// One point of a Monte-Carlo curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
}

pub fn curve_from_moments(times: &[f64], acc: &[Moments]) -> Vec<CurvePoint> {
    times.iter().zip(acc).map(|(&t, m)| CurvePoint { t, mean: m.mean, stderr: m.stderr() }).collect()
}

/// Pearson chi-square test of homogeneity for a table of counts (rows are
/// samples, columns are categories). Columns that are empty in every row are
/// dropped. Returns `(statistic, degrees of freedom, p-value)`.
pub fn chi_square_homogeneity(table: &[Vec<u64>]) -> Result<(f64, usize, f64)> {
    let n_cols = table.first().map_or(0, Vec::len);
    if table.len() < 2 || table.iter().any(|r| r.len() != n_cols) {
        return Err(Error::InvalidInput("contingency table needs >= 2 rows of equal length".into()));
    }
    let col_tot: Vec<f64> = (0..n_cols).map(|j| table.iter().map(|r| r[j] as f64).sum()).collect();
    let keep: Vec<usize> = (0..n_cols).filter(|&j| col_tot[j] > 0.0).collect();
    let row_tot: Vec<f64> = table.iter().map(|r| keep.iter().map(|&j| r[j] as f64).sum()).collect();
    let total: f64 = row_tot.iter().sum();
    let rows = row_tot.iter().filter(|&&t| t > 0.0).count();
    if keep.len() < 2 || rows < 2 {
        return Ok((0.0, 0, 1.0));
    }
    let mut stat = 0.0;
    for (r, row) in table.iter().enumerate() {
        if row_tot[r] == 0.0 {
            continue;
        }
        for &j in &keep {
            let e = row_tot[r] * col_tot[j] / total;
            stat += (row[j] as f64 - e).powi(2) / e;
        }
    }
    let dof = (rows - 1) * (keep.len() - 1);
    let p = 1.0 - ChiSquared::new(dof as f64).map_err(|e| Error::InvalidInput(e.to_string()))?.cdf(stat);
    Ok((stat, dof, p))
}

/// Ordinary or weighted least squares line `y = a + b·t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_se: f64,
    /// 95% confidence interval for the slope (Student t, `n - 2` dof).
    pub slope_ci: (f64, f64),
    pub r_squared: f64,
    pub n: usize,
}

pub fn fit_line(t: &[f64], y: &[f64], w: Option<&[f64]>) -> Result<LineFit> {
    let n = t.len();
    if n < 3 || y.len() != n || w.is_some_and(|w| w.len() != n) {
        return Err(Error::InvalidInput(format!("line fit needs >= 3 matching points (got {n})")));
    }
    let weight = |i: usize| w.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..n).map(weight).sum();
    let tm = (0..n).map(|i| weight(i) * t[i]).sum::<f64>() / sw;
    let ym = (0..n).map(|i| weight(i) * y[i]).sum::<f64>() / sw;
    let stt: f64 = (0..n).map(|i| weight(i) * (t[i] - tm).powi(2)).sum();
    let sty: f64 = (0..n).map(|i| weight(i) * (t[i] - tm) * (y[i] - ym)).sum();
    let syy: f64 = (0..n).map(|i| weight(i) * (y[i] - ym).powi(2)).sum();
    if !(stt > 0.0) {
        return Err(Error::InvalidInput("line fit needs distinct abscissae".into()));
    }
    let slope = sty / stt;
    let intercept = ym - slope * tm;
    let sse: f64 = (0..n).map(|i| weight(i) * (y[i] - intercept - slope * t[i]).powi(2)).sum();
    // weights are relative; the residual variance is estimated from the fit
    let sigma2 = sse / (n - 2) as f64;
    let slope_se = (sigma2 / stt).sqrt();
    let tq = StudentsT::new(0.0, 1.0, (n - 2) as f64).map_err(|e| Error::InvalidInput(e.to_string()))?.inverse_cdf(0.975);
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(LineFit { intercept, slope, slope_se, slope_ci: (slope - tq * slope_se, slope + tq * slope_se), r_squared, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let mut all = Moments::default();
        xs.iter().for_each(|&x| all.push(x));
        let (mut a, mut b) = (Moments::default(), Moments::default());
        xs[..40].iter().for_each(|&x| a.push(x));
        xs[40..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert_relative_eq!(a.mean, all.mean, max_relative = 1e-14);
        assert_relative_eq!(a.variance(), all.variance(), max_relative = 1e-12);
    }

    #[test]
    fn chi_square_identical_rows() {
        let (s, dof, p) = chi_square_homogeneity(&[vec![10, 20, 30], vec![10, 20, 30]]).unwrap();
        assert_eq!((s, dof), (0.0, 2));
        assert_relative_eq!(p, 1.0);
        let (_, _, p) = chi_square_homogeneity(&[vec![100, 0], vec![0, 100]]).unwrap();
        assert!(p < 1e-10);
    }

    #[test]
    fn exact_line() {
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = t.iter().map(|t| 1.0 - 2.0 * t).collect();
        let f = fit_line(&t, &y, None).unwrap();
        assert_relative_eq!(f.slope, -2.0, max_relative = 1e-12);
        assert_relative_eq!(f.intercept, 1.0, max_relative = 1e-12);
        assert!(f.r_squared > 1.0 - 1e-12);
    }
}
