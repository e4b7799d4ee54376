//! Covariance model variants, the model-selection rule, and naive versus
//! bias-corrected squared distances between class centers.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{column_mean, FeatureVector, FewShotTask};

/// Relative ridge added to the diagonal of full covariance estimates.
pub const FULL_RIDGE: f64 = 1e-6;

/// Which covariance structure to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceVariant {
    Identity,
    #[serde(rename = "shared-iso")]
    SharedIsotropic,
    #[serde(rename = "iso-per-class")]
    IsotropicPerClass,
    #[serde(rename = "full")]
    FullPerClass,
}

impl CovarianceVariant {
    pub const ALL: [CovarianceVariant; 4] = [
        CovarianceVariant::Identity,
        CovarianceVariant::SharedIsotropic,
        CovarianceVariant::IsotropicPerClass,
        CovarianceVariant::FullPerClass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CovarianceVariant::Identity => "identity",
            CovarianceVariant::SharedIsotropic => "shared-iso",
            CovarianceVariant::IsotropicPerClass => "iso-per-class",
            CovarianceVariant::FullPerClass => "full",
        }
    }

    fn estimates_variance(self) -> bool {
        self != CovarianceVariant::Identity
    }
}

impl fmt::Display for CovarianceVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CovarianceVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CovarianceVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown covariance model `{s}`")))
    }
}

/// Shared isotropic covariance up to `(n-1)^2` shots, a free covariance per
/// class beyond.
pub fn select_covariance_model(n_ways: usize, k_shots: usize) -> CovarianceVariant {
    let threshold = n_ways.saturating_sub(1).pow(2);
    if k_shots <= threshold {
        CovarianceVariant::SharedIsotropic
    } else {
        CovarianceVariant::FullPerClass
    }
}

/// A fitted covariance structure. Per-class entries follow canonical class
/// order.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceModel {
    Identity { dim: usize },
    SharedIsotropic { variance: f64, dim: usize },
    IsotropicPerClass { variances: Vec<f64>, dim: usize },
    FullPerClass { matrices: Vec<DMatrix<f64>> },
}

/// How to turn standard normal draws into draws from one class covariance.
#[derive(Debug, Clone)]
pub enum SamplingFactor {
    Isotropic(f64),
    /// Lower-triangular (or general) `L` with `L Lᵀ = Σ`.
    Matrix(DMatrix<f64>),
}

impl SamplingFactor {
    /// Writes `factor * eps` into `out`.
    pub(crate) fn apply(&self, eps: &[f64], out: &mut [f64]) {
        match self {
            SamplingFactor::Isotropic(s) => {
                for (o, e) in out.iter_mut().zip(eps) {
                    *o = s * e;
                }
            }
            SamplingFactor::Matrix(l) => {
                let d = l.nrows();
                for (i, o) in out.iter_mut().enumerate().take(d) {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += l[(i, j)] * eps[j];
                    }
                    *o = acc;
                }
            }
        }
    }
}

impl CovarianceModel {
    pub fn variant(&self) -> CovarianceVariant {
        match self {
            CovarianceModel::Identity { .. } => CovarianceVariant::Identity,
            CovarianceModel::SharedIsotropic { .. } => CovarianceVariant::SharedIsotropic,
            CovarianceModel::IsotropicPerClass { .. } => CovarianceVariant::IsotropicPerClass,
            CovarianceModel::FullPerClass { .. } => CovarianceVariant::FullPerClass,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CovarianceModel::Identity { dim }
            | CovarianceModel::SharedIsotropic { dim, .. }
            | CovarianceModel::IsotropicPerClass { dim, .. } => *dim,
            CovarianceModel::FullPerClass { matrices } => matrices.first().map_or(0, |m| m.nrows()),
        }
    }

    /// Covariance of class `c` as a dense matrix.
    pub fn class_covariance(&self, c: usize) -> DMatrix<f64> {
        match self {
            CovarianceModel::Identity { dim } => DMatrix::identity(*dim, *dim),
            CovarianceModel::SharedIsotropic { variance, dim } => DMatrix::identity(*dim, *dim) * *variance,
            CovarianceModel::IsotropicPerClass { variances, dim } => DMatrix::identity(*dim, *dim) * variances[c],
            CovarianceModel::FullPerClass { matrices } => matrices[c].clone(),
        }
    }

    pub fn trace(&self, c: usize) -> f64 {
        match self {
            CovarianceModel::Identity { dim } => *dim as f64,
            CovarianceModel::SharedIsotropic { variance, dim } => variance * *dim as f64,
            CovarianceModel::IsotropicPerClass { variances, dim } => variances[c] * *dim as f64,
            CovarianceModel::FullPerClass { matrices } => matrices[c].trace(),
        }
    }

    /// Checks that the model can be sampled for `n_classes` classes.
    pub fn check_classes(&self, n_classes: usize) -> Result<()> {
        let have = match self {
            CovarianceModel::IsotropicPerClass { variances, .. } => variances.len(),
            CovarianceModel::FullPerClass { matrices } => matrices.len(),
            _ => return Ok(()),
        };
        if have != n_classes {
            return Err(Error::InvalidArgument(format!(
                "covariance model has {have} classes, expected {n_classes}"
            )));
        }
        Ok(())
    }

    /// Square-root factors used to draw samples, one per class.
    pub fn sampling_factors(&self, n_classes: usize) -> Result<Vec<SamplingFactor>> {
        self.check_classes(n_classes)?;
        (0..n_classes)
            .map(|c| match self {
                CovarianceModel::Identity { .. } => Ok(SamplingFactor::Isotropic(1.0)),
                CovarianceModel::SharedIsotropic { variance, .. } => isotropic_factor(*variance),
                CovarianceModel::IsotropicPerClass { variances, .. } => isotropic_factor(variances[c]),
                CovarianceModel::FullPerClass { matrices } => matrix_factor(&matrices[c]).map(SamplingFactor::Matrix),
            })
            .collect()
    }

    /// Applies an orthogonal change of coordinates `R` to every class
    /// covariance. Isotropic variants are unchanged.
    pub fn rotated(&self, rotation: &DMatrix<f64>) -> CovarianceModel {
        match self {
            CovarianceModel::FullPerClass { matrices } => CovarianceModel::FullPerClass {
                matrices: matrices.iter().map(|m| rotation * m * rotation.transpose()).collect(),
            },
            other => other.clone(),
        }
    }

    /// Re-dimensions the model to `dim`. Full matrices are padded with an
    /// isotropic block at their average variance.
    pub fn with_dim(&self, dim: usize) -> CovarianceModel {
        match self {
            CovarianceModel::Identity { .. } => CovarianceModel::Identity { dim },
            CovarianceModel::SharedIsotropic { variance, .. } => CovarianceModel::SharedIsotropic { variance: *variance, dim },
            CovarianceModel::IsotropicPerClass { variances, .. } => {
                CovarianceModel::IsotropicPerClass { variances: variances.clone(), dim }
            }
            CovarianceModel::FullPerClass { matrices } => CovarianceModel::FullPerClass {
                matrices: matrices
                    .iter()
                    .map(|m| {
                        let old = m.nrows();
                        if old == dim {
                            return m.clone();
                        }
                        let fill = if old == 0 { 1.0 } else { m.trace() / old as f64 };
                        let mut out = DMatrix::identity(dim, dim) * fill;
                        let keep = old.min(dim);
                        out.view_mut((0, 0), (keep, keep)).copy_from(&m.view((0, 0), (keep, keep)));
                        out
                    })
                    .collect(),
            },
        }
    }
}

fn isotropic_factor(variance: f64) -> Result<SamplingFactor> {
    if variance < 0.0 || !variance.is_finite() {
        return Err(Error::NonPsdCovariance(variance));
    }
    Ok(SamplingFactor::Isotropic(variance.sqrt()))
}

/// `L` with `L Lᵀ = Σ`: Cholesky when possible, otherwise a symmetric
/// eigendecomposition with tiny negative eigenvalues zeroed.
pub(crate) fn matrix_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = sigma.clone().cholesky() {
        return Ok(ch.l());
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-10 * scale {
        return Err(Error::NonPsdCovariance(min));
    }
    let sqrt_vals = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals))
}

/// Within-class scatter `Σ_i ||z_i - mean||²` of each class.
fn class_scatter(support: &[DMatrix<f64>]) -> Vec<f64> {
    support
        .iter()
        .map(|m| {
            let mean = column_mean(m);
            m.column_iter().map(|col| (col - &mean).norm_squared()).sum()
        })
        .collect()
}

fn require_two_samples(support: &[DMatrix<f64>]) -> Result<()> {
    match support.iter().position(|m| m.ncols() < 2) {
        Some(c) => Err(Error::InsufficientSamples { class: c, count: support[c].ncols() }),
        None => Ok(()),
    }
}

/// Unbiased trace of each class covariance: scatter over `k - 1`.
pub fn covariance_traces(support: &[DMatrix<f64>]) -> Result<Vec<f64>> {
    require_two_samples(support)?;
    Ok(class_scatter(support)
        .into_iter()
        .zip(support)
        .map(|(s, m)| s / (m.ncols() - 1) as f64)
        .collect())
}

/// Fits the requested covariance structure to per-class samples
/// (`dim × k` each).
pub fn fit_covariance(support: &[DMatrix<f64>], variant: CovarianceVariant) -> Result<CovarianceModel> {
    let dim = support.first().map_or(0, |m| m.nrows());
    if dim == 0 {
        return Err(Error::InvalidTask("no classes or zero dimension".into()));
    }
    if variant.estimates_variance() {
        require_two_samples(support)?;
    }
    let per_class_variance = || -> Result<Vec<f64>> {
        Ok(covariance_traces(support)?.into_iter().map(|t| t / dim as f64).collect())
    };
    Ok(match variant {
        CovarianceVariant::Identity => CovarianceModel::Identity { dim },
        CovarianceVariant::IsotropicPerClass => CovarianceModel::IsotropicPerClass { variances: per_class_variance()?, dim },
        CovarianceVariant::SharedIsotropic => {
            let v = per_class_variance()?;
            CovarianceModel::SharedIsotropic { variance: v.iter().sum::<f64>() / v.len() as f64, dim }
        }
        CovarianceVariant::FullPerClass => CovarianceModel::FullPerClass {
            matrices: support.iter().map(full_covariance).collect(),
        },
    })
}

fn full_covariance(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let mean = column_mean(m);
    let mut centered = m.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let mut cov = &centered * centered.transpose() / (m.ncols() - 1) as f64;
    let ridge = FULL_RIDGE * cov.trace() / d as f64;
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    // exact symmetry
    let t = cov.transpose();
    (cov + t) * 0.5
}

/// Per-class covariance traces used by the distance correction under
/// `variant`, computed in the space the samples live in.
pub fn correction_traces(support: &[DMatrix<f64>], variant: CovarianceVariant) -> Result<Vec<f64>> {
    let dim = support.first().map_or(0, |m| m.nrows()) as f64;
    match variant {
        CovarianceVariant::Identity => Ok(vec![dim; support.len()]),
        CovarianceVariant::SharedIsotropic => {
            let t = covariance_traces(support)?;
            let pooled = t.iter().sum::<f64>() / t.len() as f64;
            Ok(vec![pooled; t.len()])
        }
        // full and isotropic-per-class share the per-class trace; the ridge
        // is not part of the correction
        CovarianceVariant::IsotropicPerClass | CovarianceVariant::FullPerClass => covariance_traces(support),
    }
}

pub fn naive_squared_distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Subtracts the expected noise contribution `Tr Σ_a / k_a + Tr Σ_b / k_b`
/// from a naive squared distance. The result may be negative.
pub fn unbiased_squared_distance(naive: f64, trace_a: f64, trace_b: f64, k_a: usize, k_b: usize) -> f64 {
    naive - trace_a / k_a as f64 - trace_b / k_b as f64
}

/// Symmetric matrix of squared distances between class centers.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub squared: DMatrix<f64>,
    pub corrected: bool,
    pub floor_applied: bool,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.squared.nrows()
    }

    /// Entrywise square root.
    pub fn distances(&self) -> DMatrix<f64> {
        self.squared.map(|v| v.max(0.0).sqrt())
    }
}

pub fn naive_distance_matrix(means: &[FeatureVector]) -> DistanceMatrix {
    let n = means.len();
    let mut sq = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = (&means[i] - &means[j]).norm_squared();
            sq[(i, j)] = v;
            sq[(j, i)] = v;
        }
    }
    DistanceMatrix { squared: sq, corrected: false, floor_applied: false }
}

/// Applies the per-pair correction to a naive matrix and clamps entries
/// below `max(1e-12, 1e-9 × largest naive entry)` to that floor.
pub fn correct_distance_matrix(naive: &DistanceMatrix, traces: &[f64], counts: &[usize]) -> DistanceMatrix {
    let n = naive.n();
    let largest = naive.squared.iter().cloned().fold(0.0, f64::max);
    let floor = (1e-9 * largest).max(1e-12);
    let mut sq = DMatrix::zeros(n, n);
    let mut floor_applied = false;
    for i in 0..n {
        for j in i + 1..n {
            let mut v = unbiased_squared_distance(naive.squared[(i, j)], traces[i], traces[j], counts[i], counts[j]);
            if v < floor {
                v = floor;
                floor_applied = true;
            }
            sq[(i, j)] = v;
            sq[(j, i)] = v;
        }
    }
    DistanceMatrix { squared: sq, corrected: true, floor_applied }
}

/// Bias-corrected squared distances between all class means, computed in
/// the task's original feature space.
pub fn corrected_distance_matrix(task: &FewShotTask, variant: CovarianceVariant) -> Result<DistanceMatrix> {
    let naive = naive_distance_matrix(&task.class_means());
    let traces = correction_traces(task.support(), variant)?;
    let counts: Vec<usize> = task.support().iter().map(|m| m.ncols()).collect();
    Ok(correct_distance_matrix(&naive, &traces, &counts))
}

/// Class-conditional Gaussians with a uniform prior.
#[derive(Debug, Clone)]
pub struct GaussianTaskModel {
    pub means: Vec<FeatureVector>,
    pub covariance: CovarianceModel,
}

impl GaussianTaskModel {
    pub fn new(means: Vec<FeatureVector>, covariance: CovarianceModel) -> Result<Self> {
        if let Some(m) = means.iter().find(|m| m.len() != covariance.dim()) {
            return Err(Error::DimensionMismatch { expected: covariance.dim(), found: m.len() });
        }
        covariance.check_classes(means.len())?;
        Ok(Self { means, covariance })
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }

    pub fn prior(&self) -> f64 {
        1.0 / self.means.len() as f64
    }
}
