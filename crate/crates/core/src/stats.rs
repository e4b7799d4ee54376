//! Sample summaries with standard errors.

use serde::{Deserialize, Serialize};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, se, n }
    }

    /// Mean and standard error of `a[i] - b[i]`.
    pub fn paired_difference(a: &[f64], b: &[f64]) -> Self {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Self::of(&d)
    }
}

/// Sample variance with an asymptotic standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceSe {
    pub variance: f64,
    pub se: f64,
}

impl VarianceSe {
    /// Unbiased variance; its standard error is the standard error of the
    /// mean of squared deviations.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let s = MeanSe::of(&dev);
        let correction = n as f64 / (n as f64 - 1.0);
        Self { variance: s.mean * correction, se: s.se * correction }
    }

    /// Standard error of `Var(a) - Var(b)` for paired samples.
    pub fn paired_difference_se(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = b.iter().sum::<f64>() / n as f64;
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma).powi(2) - (y - mb).powi(2)).collect();
        MeanSe::of(&d).se * n as f64 / (n as f64 - 1.0)
    }
}

/// Least-squares line with its coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(points: &[(f64, f64)]) -> crate::Result<LinearFit> {
    let (slope, intercept) = crate::baselines::ols(points)?;
    let my = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LinearFit { slope, intercept, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summaries() {
        let s = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.se - (1.666_666_666_666_666_7f64 / 4.0).sqrt()).abs() < 1e-15);
        let v = VarianceSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert!((v.variance - 1.666_666_666_666_666_7).abs() < 1e-15);
        let f = linear_fit(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-15 && (f.r_squared - 1.0).abs() < 1e-15);
    }
}
