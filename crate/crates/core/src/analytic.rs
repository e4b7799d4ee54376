//! Closed-form error probability of the binary isotropic problem and the
//! confidence half-width of its plug-in estimate.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::estimators::{corrected_distance_matrix, fit_covariance, naive_distance_matrix, CovarianceModel, CovarianceVariant};
use crate::montecarlo::{ErrorEstimate, Method};
use crate::model::FewShotTask;

/// Default significance level of the reported bound.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Φ(x).
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Φ⁻¹(p), refined by Newton steps on Φ.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..2 {
        let dens = std_normal_pdf(x);
        if dens < 1e-300 {
            break;
        }
        let step = (std_normal_cdf(x) - p) / dens;
        if !step.is_finite() {
            break;
        }
        x -= step;
    }
    Ok(x)
}

/// Inter-center distance and shared standard deviation of a binary problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryErrorInput {
    pub r: f64,
    pub sigma: f64,
}

impl BinaryErrorInput {
    pub fn p_error(&self) -> Result<f64> {
        binary_error_probability(self.r, self.sigma)
    }
}

/// `1 - Φ(r / 2σ)`, the error of the NCM classifier on two isotropic
/// Gaussians with shared deviation `sigma` and centers `r` apart.
pub fn binary_error_probability(r: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidSigma(sigma));
    }
    if !(r >= 0.0) {
        return Err(Error::InvalidArgument(format!("distance must be nonnegative, got {r}")));
    }
    Ok(std_normal_cdf(-r / (2.0 * sigma)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBound {
    pub alpha: f64,
    pub k: usize,
    pub epsilon: f64,
}

/// Half-width ε with `P(|P_e - P̂_e| ≤ ε) ≥ 1 - α` for the univariate
/// known-σ problem: `φ(0) |Φ⁻¹(1 - α/2)| / √(2k)`.
pub fn lemma1_bound(k: usize, alpha: f64) -> Result<ConfidenceBound> {
    if k == 0 {
        return Err(Error::InvalidArgument("bound needs k >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidProbability(alpha));
    }
    let z = std_normal_quantile(1.0 - alpha / 2.0)?.abs();
    let epsilon = std_normal_pdf(0.0) * z / (2.0 * k as f64).sqrt();
    Ok(ConfidenceBound { alpha, k, epsilon })
}

/// Plug-in estimate from a center distance and a shared deviation that may
/// be zero.
pub(crate) fn plug_in_error(r: f64, sigma: f64, r_is_floor: bool) -> f64 {
    if sigma > 0.0 {
        std_normal_cdf(-r / (2.0 * sigma))
    } else if r_is_floor || r == 0.0 {
        0.5
    } else {
        0.0
    }
}

/// Analytic prediction for a two-class task under a pooled isotropic model.
///
/// The confidence half-width at `alpha` is attached as metadata and does not
/// alter the point estimate.
pub fn binary_predict(task: &FewShotTask, alpha: f64, bias_correction: bool) -> Result<ErrorEstimate> {
    if task.n_ways() != 2 {
        return Err(Error::NotBinary(task.n_ways()));
    }
    let CovarianceModel::SharedIsotropic { variance, .. } = fit_covariance(task.support(), CovarianceVariant::SharedIsotropic)?
    else {
        unreachable!()
    };
    let dm = if bias_correction {
        corrected_distance_matrix(task, CovarianceVariant::SharedIsotropic)?
    } else {
        naive_distance_matrix(&task.class_means())
    };
    let r = dm.squared[(0, 1)].sqrt();
    let p = plug_in_error(r, variance.sqrt(), dm.floor_applied);
    let bound = lemma1_bound(task.k_shots(), alpha)?;
    Ok(ErrorEstimate::new(p, Method::Analytic)
        .with_bound(bound.epsilon)
        .with_bias_correction(bias_correction))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_and_quantile_reference_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        // mpmath: ncdf(1) = 0.841344746068542948585232545632
        assert!((std_normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        // mpmath: ncdf(-5) = 2.86651571879193911673752333463e-7
        assert!((std_normal_cdf(-5.0) / 2.866_515_718_791_939e-7 - 1.0).abs() < 1e-12);
        // mpmath: sqrt(2)*erfinv(0.95) = 1.95996398454005385560443064983
        assert!((std_normal_quantile(0.975).unwrap() - 1.959_963_984_540_053_9).abs() < 1e-12);
        for p in [1e-12, 0.01, 0.3, 0.5, 0.99, 1.0 - 1e-9] {
            let x = std_normal_quantile(p).unwrap();
            assert!((std_normal_cdf(x) - p).abs() <= 1e-10 * p.max(1e-3), "p = {p}");
        }
        assert!(std_normal_quantile(0.0).is_err());
        assert!(std_normal_quantile(1.0).is_err());
        assert!(std_normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn binary_error_cases() {
        assert_eq!(binary_error_probability(0.0, 1.3).unwrap(), 0.5);
        // 1 - Φ(1) = 0.158655253931457051414767454368
        assert!((binary_error_probability(2.0, 1.0).unwrap() - 0.158_655_253_931_457_05).abs() < 1e-14);
        assert!((binary_error_probability(6.0, 3.0).unwrap() - 0.158_655_253_931_457_05).abs() < 1e-14);
        assert!(binary_error_probability(1.0, 0.0).is_err());
        assert!(binary_error_probability(1.0, -1.0).is_err());
        let mut prev = 0.5;
        for i in 1..60 {
            let p = binary_error_probability(i as f64 * 0.25, 1.0).unwrap();
            assert!(p < prev && p > 0.0 || p == 0.0);
            prev = p;
        }
    }

    #[test]
    fn bound_values() {
        let b = lemma1_bound(50, 0.05).unwrap();
        // mpmath: sqrt(2)*erfinv(0.95)/sqrt(2*pi)/10
        assert!((b.epsilon - 0.078_191_250_149_708_74).abs() < 1e-13, "{}", b.epsilon);
        let quarter = lemma1_bound(200, 0.05).unwrap();
        assert!((quarter.epsilon - b.epsilon / 2.0).abs() < 1e-15);
        assert!(lemma1_bound(5, 1.0 - 1e-12).unwrap().epsilon < 1e-11);
        assert!(lemma1_bound(5, 0.0).is_err());
        assert!(lemma1_bound(0, 0.1).is_err());
    }
}
