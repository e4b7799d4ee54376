//! Monte-Carlo estimation of the NCM error probability on a virtual
//! validation set drawn from fitted Gaussians, plus a semi-analytic
//! integration oracle for one- and two-dimensional configurations.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::std_normal_cdf;
use crate::error::{Error, Result};
use crate::estimators::{CovarianceModel, SamplingFactor};
use crate::mds::CenterConfiguration;
use crate::model::nearest_index;
use crate::seeding::stream_rng;

/// Samples drawn per work item. Part of the seed mapping: changing it
/// changes every estimate.
pub const CHUNK: usize = 4096;

pub const DEFAULT_SAMPLES_PER_CLASS: usize = 10_000;

/// Which predictor produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Analytic,
    MonteCarlo,
    Cv,
    DbIndex,
    Oracle,
}

/// A predicted probability of error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub p_error: f64,
    pub method: Method,
    pub samples_per_class: Option<usize>,
    pub seed: Option<u64>,
    pub bound_half_width: Option<f64>,
    pub bias_corrected: bool,
}

impl ErrorEstimate {
    pub fn new(p_error: f64, method: Method) -> Self {
        Self { p_error, method, samples_per_class: None, seed: None, bound_half_width: None, bias_corrected: false }
    }

    pub fn with_bound(mut self, half_width: f64) -> Self {
        self.bound_half_width = Some(half_width);
        self
    }

    pub fn with_bias_correction(mut self, corrected: bool) -> Self {
        self.bias_corrected = corrected;
        self
    }

    pub fn accuracy(&self) -> f64 {
        1.0 - self.p_error
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub samples_per_class: usize,
    pub seed: u64,
    /// `1` runs sequentially; anything else uses the rayon pool. Results do
    /// not depend on it.
    pub parallel_streams: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { samples_per_class: DEFAULT_SAMPLES_PER_CLASS, seed: 0, parallel_streams: 0 }
    }
}

impl MonteCarloConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Number of misclassified draws when class `c` is sampled around
/// `sampling[c]` with `factors[c]` and classified against `classifier`.
fn count_errors(
    sampling: &[DVector<f64>],
    classifier: &[DVector<f64>],
    factors: &[SamplingFactor],
    cfg: &MonteCarloConfig,
) -> u64 {
    let m = cfg.samples_per_class;
    let chunks_per_class = m.div_ceil(CHUNK);
    let dim = sampling[0].len();
    let work = |item: usize| -> u64 {
        let class = item / chunks_per_class;
        let chunk = item % chunks_per_class;
        let count = CHUNK.min(m - chunk * CHUNK);
        let mut rng = stream_rng(cfg.seed, ((class as u64) << 32) | chunk as u64);
        let mut eps = vec![0.0; dim];
        let mut z = vec![0.0; dim];
        let center = sampling[class].as_slice();
        let mut errors = 0;
        for _ in 0..count {
            for e in eps.iter_mut() {
                *e = StandardNormal.sample(&mut rng);
            }
            factors[class].apply(&eps, &mut z);
            for (zi, ci) in z.iter_mut().zip(center) {
                *zi += ci;
            }
            if nearest_index(&z, classifier.iter().map(|c| c.as_slice())) != class {
                errors += 1;
            }
        }
        errors
    };
    let items = sampling.len() * chunks_per_class;
    if cfg.parallel_streams == 1 {
        (0..items).map(work).sum()
    } else {
        (0..items).into_par_iter().map(work).sum()
    }
}

fn check_inputs(sampling: &[DVector<f64>], classifier: &[DVector<f64>], cov: &CovarianceModel, cfg: &MonteCarloConfig) -> Result<()> {
    if sampling.is_empty() || sampling.len() != classifier.len() {
        return Err(Error::InvalidArgument("one sampling and one classifier center per class".into()));
    }
    if cfg.samples_per_class == 0 {
        return Err(Error::InvalidArgument("samples_per_class must be positive".into()));
    }
    let dim = cov.dim();
    if let Some(p) = sampling.iter().chain(classifier).find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
    }
    Ok(())
}

/// Error rate of the NCM rule with centers `classifier` on data whose class
/// `c` follows `N(sampling[c], Σ_c)`, under uniform priors.
pub fn misclassification_rate(
    sampling: &[DVector<f64>],
    classifier: &[DVector<f64>],
    cov: &CovarianceModel,
    cfg: &MonteCarloConfig,
) -> Result<f64> {
    check_inputs(sampling, classifier, cov, cfg)?;
    let factors = cov.sampling_factors(sampling.len())?;
    let errors = count_errors(sampling, classifier, &factors, cfg);
    Ok(errors as f64 / (sampling.len() * cfg.samples_per_class) as f64)
}

/// Monte-Carlo error estimate for a center configuration: each class is
/// sampled from its fitted Gaussian and classified against the centers.
pub fn estimate_error_monte_carlo(
    centers: &CenterConfiguration,
    cov: &CovarianceModel,
    cfg: &MonteCarloConfig,
) -> Result<ErrorEstimate> {
    estimate_error_at(&centers.points, cov, cfg)
}

pub fn estimate_error_at(points: &[DVector<f64>], cov: &CovarianceModel, cfg: &MonteCarloConfig) -> Result<ErrorEstimate> {
    let p = misclassification_rate(points, points, cov, cfg)?;
    Ok(ErrorEstimate {
        p_error: p,
        method: Method::MonteCarlo,
        samples_per_class: Some(cfg.samples_per_class),
        seed: Some(cfg.seed),
        bound_half_width: None,
        bias_corrected: false,
    })
}

/// Linear constraint `a · u ≤ b` on standardized coordinates, `|a| = 1`.
#[derive(Debug, Clone, Copy)]
struct HalfPlane {
    a: [f64; 2],
    b: f64,
}

/// Decision region of class `c` in coordinates `u = (z - μ_c) / σ`, or
/// `None` when a coincident center with a smaller index takes every tie.
fn region(points: &[[f64; 2]], c: usize, sigma: f64) -> Option<Vec<HalfPlane>> {
    let mut planes = Vec::new();
    for (j, p) in points.iter().enumerate().filter(|&(j, _)| j != c) {
        let delta = [p[0] - points[c][0], p[1] - points[c][1]];
        let norm = (delta[0] * delta[0] + delta[1] * delta[1]).sqrt();
        if norm > 0.0 {
            planes.push(HalfPlane { a: [delta[0] / norm, delta[1] / norm], b: norm / (2.0 * sigma) });
        } else if j < c {
            return None;
        }
    }
    Some(planes)
}

fn class_error(planes: Option<Vec<HalfPlane>>, dim: usize) -> f64 {
    let Some(planes) = planes else { return 1.0 };
    if dim == 2 {
        return class_error_2d(&planes);
    }
    // u stays on the x axis; the region is an interval
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for h in &planes {
        if h.a[0] > 0.0 {
            hi = hi.min(h.b / h.a[0]);
        } else {
            lo = lo.max(h.b / h.a[0]);
        }
    }
    if lo < hi {
        std_normal_cdf(lo) + std_normal_cdf(-hi)
    } else {
        1.0
    }
}

/// `y` interval admitted by the constraints at abscissa `x`, or `None`.
fn slice(planes: &[HalfPlane], x: f64) -> Option<(f64, f64)> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for h in planes {
        let rhs = h.b - h.a[0] * x;
        if h.a[1].abs() < 1e-14 {
            if rhs < 0.0 {
                return None;
            }
        } else if h.a[1] > 0.0 {
            hi = hi.min(rhs / h.a[1]);
        } else {
            lo = lo.max(rhs / h.a[1]);
        }
    }
    (lo < hi).then_some((lo, hi))
}

/// Probability mass outside the slice, `1 - (Φ(hi) - Φ(lo))`, computed
/// without cancellation.
fn outside(planes: &[HalfPlane], x: f64) -> f64 {
    match slice(planes, x) {
        None => 1.0,
        Some((lo, hi)) => std_normal_cdf(lo) + std_normal_cdf(-hi),
    }
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 40)
}

const OUTER_RANGE: f64 = 12.0;

/// Misclassification mass of one class: the outer integral over `x` of the
/// standard normal density times the closed-form `y` mass outside the
/// decision region. Kinks of the integrand are used as breakpoints.
fn class_error_2d(planes: &[HalfPlane]) -> f64 {
    let mut breaks = vec![-OUTER_RANGE, OUTER_RANGE];
    for (i, p) in planes.iter().enumerate() {
        if p.a[1].abs() < 1e-14 && p.a[0].abs() > 0.0 {
            breaks.push(p.b / p.a[0]);
        }
        for q in &planes[i + 1..] {
            // x where the two boundary lines meet
            let det = p.a[0] * q.a[1] - p.a[1] * q.a[0];
            if det.abs() > 1e-14 {
                breaks.push((p.b * q.a[1] - q.b * p.a[1]) / det);
            }
        }
    }
    breaks.retain(|x| x.is_finite() && x.abs() <= OUTER_RANGE);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let f = |x: f64| crate::analytic::std_normal_pdf(x) * outside(planes, x);
    breaks.windows(2).map(|w| adaptive_simpson(&f, w[0], w[1], 1e-12)).sum()
}

/// Error probability of the NCM rule for centers in one or two dimensions
/// with shared isotropic deviation `sigma`, by numerical integration of
/// each class density over the other classes' decision regions.
pub fn quadrature_oracle_error(centers: &[DVector<f64>], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidSigma(sigma));
    }
    let dim = centers.first().map_or(0, |c| c.len());
    if dim > 2 {
        return Err(Error::OracleDimension(dim));
    }
    if dim == 0 || centers.len() < 2 {
        return Err(Error::InvalidArgument("oracle needs at least two centers".into()));
    }
    if let Some(c) = centers.iter().find(|c| c.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: c.len() });
    }
    let points: Vec<[f64; 2]> = centers.iter().map(|c| [c[0], if dim == 2 { c[1] } else { 0.0 }]).collect();
    let n = points.len();
    let total: f64 = (0..n).map(|c| class_error(region(&points, c, sigma), dim)).sum();
    Ok(total / n as f64)
}

/// Per-class error contributions from the same integration, for symmetry
/// checks.
pub fn quadrature_class_errors(centers: &[DVector<f64>], sigma: f64) -> Result<Vec<f64>> {
    quadrature_oracle_error(centers, sigma)?;
    let dim = centers[0].len();
    let points: Vec<[f64; 2]> = centers.iter().map(|c| [c[0], if dim == 2 { c[1] } else { 0.0 }]).collect();
    Ok((0..points.len()).map(|c| class_error(region(&points, c, sigma), dim)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::binary_error_probability;
    use nalgebra::dvector;

    #[test]
    fn quadrature_binary_matches_closed_form() {
        for r in [0.0, 0.3, 1.0, 2.5, 6.0] {
            let exact = binary_error_probability(r, 1.0).unwrap();
            let one_d = quadrature_oracle_error(&[dvector![0.0], dvector![r]], 1.0).unwrap();
            let two_d = quadrature_oracle_error(&[dvector![0.1, 0.2], dvector![0.1 + r * 0.6, 0.2 - r * 0.8]], 1.0).unwrap();
            assert!((one_d - exact).abs() < 1e-12, "r={r}");
            assert!((two_d - exact).abs() < 1e-6, "r={r}: {two_d} vs {exact}");
        }
    }

    #[test]
    fn quadrature_triangle_symmetry_and_limits() {
        let h = 3f64.sqrt() / 2.0;
        let tri = [dvector![0.0, 0.0], dvector![1.0, 0.0], dvector![0.5, h]];
        let per = quadrature_class_errors(&tri, 0.7).unwrap();
        assert!((per[0] - per[1]).abs() < 1e-6 && (per[1] - per[2]).abs() < 1e-6);
        assert!(quadrature_oracle_error(&tri, 1e-3).unwrap() < 1e-12);
        assert!(matches!(
            quadrature_oracle_error(&[dvector![0.0, 0.0, 0.0], dvector![1.0, 0.0, 0.0]], 1.0),
            Err(Error::OracleDimension(3))
        ));
    }

    #[test]
    fn mc_is_zero_without_overlap_and_chance_when_collapsed() {
        let cfg = MonteCarloConfig { samples_per_class: 20_000, seed: 3, parallel_streams: 0 };
        let pts = vec![dvector![0.0, 0.0], dvector![10.0, 0.0], dvector![0.0, 10.0]];
        let tight = CovarianceModel::SharedIsotropic { variance: 1e-4, dim: 2 };
        assert_eq!(estimate_error_at(&pts, &tight, &cfg).unwrap().p_error, 0.0);

        // identical centers: ties always go to class 0, so error is exactly (n-1)/n
        let same = vec![dvector![1.0, 1.0]; 3];
        let cov = CovarianceModel::SharedIsotropic { variance: 1.0, dim: 2 };
        let p = estimate_error_at(&same, &cov, &cfg).unwrap().p_error;
        assert!((p - 2.0 / 3.0).abs() <= 3.0 * (2.0f64 / 9.0 / 60_000.0).sqrt());
    }

    #[test]
    fn mc_thread_independent() {
        let pts = vec![dvector![0.0], dvector![1.0]];
        let cov = CovarianceModel::IsotropicPerClass { variances: vec![1.0, 0.5], dim: 1 };
        let a = MonteCarloConfig { samples_per_class: 10_001, seed: 9, parallel_streams: 1 };
        let b = MonteCarloConfig { parallel_streams: 8, ..a };
        assert_eq!(estimate_error_at(&pts, &cov, &a).unwrap(), estimate_error_at(&pts, &cov, &b).unwrap());
    }

    #[test]
    fn mc_rejects_dimension_mismatch() {
        let pts = vec![dvector![0.0], dvector![1.0]];
        let cov = CovarianceModel::Identity { dim: 2 };
        assert!(estimate_error_at(&pts, &cov, &MonteCarloConfig::default()).is_err());
    }
}
