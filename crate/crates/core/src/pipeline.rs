//! End-to-end accuracy prediction for one task.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analytic::{binary_error_probability, lemma1_bound, plug_in_error, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::estimators::{
    corrected_distance_matrix, fit_covariance, naive_distance_matrix, select_covariance_model, CovarianceModel,
    CovarianceVariant, DistanceMatrix,
};
use crate::mds::{embed_centers, CenterConfiguration, MdsOptions};
use crate::model::{class_subspace_basis, project_to_class_subspace, FeatureVector, FewShotTask};
use crate::montecarlo::{estimate_error_at, estimate_error_monte_carlo, ErrorEstimate, Method, MonteCarloConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CovarianceChoice {
    /// Pick by the shot-count rule.
    #[default]
    Auto,
    Fixed(CovarianceVariant),
}

impl CovarianceChoice {
    pub fn resolve(self, n_ways: usize, k_shots: usize) -> CovarianceVariant {
        match self {
            CovarianceChoice::Auto => select_covariance_model(n_ways, k_shots),
            CovarianceChoice::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    pub covariance: CovarianceChoice,
    pub bias_correction: bool,
    pub monte_carlo: MonteCarloConfig,
    pub mds: MdsOptions,
    /// Significance level of the binary confidence half-width.
    pub alpha: f64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            covariance: CovarianceChoice::Auto,
            bias_correction: true,
            monte_carlo: MonteCarloConfig::default(),
            mds: MdsOptions::default(),
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// Result of [`predict_accuracy`], with the intermediate quantities kept
/// for inspection.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub estimate: ErrorEstimate,
    pub variant: CovarianceVariant,
    pub distances: DistanceMatrix,
    /// Present on the Monte-Carlo path.
    pub centers: Option<CenterConfiguration>,
}

impl Prediction {
    pub fn accuracy(&self) -> f64 {
        self.estimate.accuracy()
    }
}

/// Predicts the NCM error probability of `task` from its support samples.
///
/// Binary tasks under the shared isotropic model take the closed form;
/// everything else reconstructs the centers from the (corrected) distances
/// and samples a virtual validation set in `n - 1` dimensions.
pub fn predict_accuracy(task: &FewShotTask, opts: &PredictOptions) -> Result<Prediction> {
    let n = task.n_ways();
    let variant = opts.covariance.resolve(n, task.k_shots());
    let means = task.class_means();
    // every support sample identical: no decision geometry at all
    if means.windows(2).all(|w| w[0] == w[1]) && task.support().iter().zip(&means).all(|(m, mu)| m.column_iter().all(|z| z == *mu)) {
        return Err(Error::DegenerateCenters);
    }
    let distances = if opts.bias_correction {
        corrected_distance_matrix(task, variant)?
    } else {
        naive_distance_matrix(&means)
    };

    if n == 2 && variant == CovarianceVariant::SharedIsotropic {
        let variance = match fit_covariance(task.support(), variant)? {
            CovarianceModel::SharedIsotropic { variance, .. } => variance,
            _ => unreachable!(),
        };
        let r = distances.squared[(0, 1)].sqrt();
        let p = plug_in_error(r, variance.sqrt(), distances.floor_applied);
        let bound = lemma1_bound(task.k_shots(), opts.alpha)?;
        let estimate = ErrorEstimate::new(p, Method::Analytic)
            .with_bound(bound.epsilon)
            .with_bias_correction(opts.bias_correction);
        return Ok(Prediction { estimate, variant, distances, centers: None });
    }

    let centers = embed_centers(&distances, &opts.mds)?;
    let cov = sampling_covariance(task, &means, variant, &centers)?;
    let estimate = estimate_error_monte_carlo(&centers, &cov, &opts.monte_carlo)?.with_bias_correction(opts.bias_correction);
    Ok(Prediction { estimate, variant, distances, centers: Some(centers) })
}

/// Covariance model expressed in the coordinates of `centers`.
fn sampling_covariance(
    task: &FewShotTask,
    means: &[FeatureVector],
    variant: CovarianceVariant,
    centers: &CenterConfiguration,
) -> Result<CovarianceModel> {
    let dim = centers.dim();
    match variant {
        CovarianceVariant::FullPerClass => {
            let projected = project_to_class_subspace(task, means)?;
            let cov = fit_covariance(&projected.support_proj, variant)?.with_dim(dim);
            let rotation = procrustes_rotation(&projected.means_proj, &centers.points, dim);
            Ok(cov.rotated(&rotation))
        }
        // isotropic variances are basis-free; keep the original-space estimate
        _ => Ok(fit_covariance(task.support(), variant)?.with_dim(dim)),
    }
}

/// Orthogonal `Q` minimizing `Σ ||Q a_i - b_i||²` after centering both
/// point sets; `a` is zero-padded to `dim`.
fn procrustes_rotation(a: &[DVector<f64>], b: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    let n = a.len();
    let pad = |v: &DVector<f64>| DVector::from_fn(dim, |i, _| if i < v.len() { v[i] } else { 0.0 });
    let a: Vec<DVector<f64>> = a.iter().map(pad).collect();
    let ca = a.iter().fold(DVector::zeros(dim), |s, v| s + v) / n as f64;
    let cb = b.iter().fold(DVector::zeros(dim), |s, v| s + v) / n as f64;
    let mut m = DMatrix::zeros(dim, dim);
    for (ai, bi) in a.iter().zip(b) {
        m += (bi - &cb) * (ai - &ca).transpose();
    }
    let svd = m.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => u * v_t,
        _ => DMatrix::identity(dim, dim),
    }
}

/// Error of the NCM rule built on the true centers, with the true shared
/// deviation: the pipeline run on generative parameters.
pub fn oracle_error(centers: &[FeatureVector], sigma: f64, cfg: &MonteCarloConfig) -> Result<ErrorEstimate> {
    if centers.len() < 2 {
        return Err(Error::InvalidArgument("oracle needs at least two centers".into()));
    }
    if centers.len() == 2 {
        let r = (&centers[0] - &centers[1]).norm();
        return Ok(ErrorEstimate::new(binary_error_probability(r, sigma)?, Method::Oracle));
    }
    let basis = class_subspace_basis(centers)?;
    let reduced: Vec<DVector<f64>> = centers.iter().map(|c| &basis * (c - &centers[0])).collect();
    let cov = CovarianceModel::SharedIsotropic { variance: sigma * sigma, dim: basis.nrows() };
    let mut est = estimate_error_at(&reduced, &cov, cfg)?;
    est.method = Method::Oracle;
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::binary_predict;
    use crate::model::ClassLabel;
    use nalgebra::dvector;

    fn task(groups: &[&[&[f64]]]) -> FewShotTask {
        FewShotTask::from_grouped(
            (0..groups.len() as i64).map(ClassLabel::Int).collect(),
            groups
                .iter()
                .map(|g| DMatrix::from_columns(&g.iter().map(|c| DVector::from_column_slice(c)).collect::<Vec<_>>()))
                .collect(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn binary_shared_dispatches_to_closed_form() {
        let t = task(&[&[&[0.0, 0.1], &[0.4, -0.2]], &[&[2.0, 1.0], &[2.5, 0.7]]]);
        let opts = PredictOptions { covariance: CovarianceChoice::Fixed(CovarianceVariant::SharedIsotropic), ..Default::default() };
        let p = predict_accuracy(&t, &opts).unwrap();
        assert_eq!(p.estimate, binary_predict(&t, opts.alpha, true).unwrap());
        assert!(p.centers.is_none());
        // k = 2 > (2-1)^2 selects the full model under auto
        let auto = predict_accuracy(&t, &PredictOptions::default()).unwrap();
        assert_eq!(auto.variant, CovarianceVariant::FullPerClass);
        assert_eq!(auto.estimate.method, Method::MonteCarlo);
    }

    #[test]
    fn coinciding_means_give_chance() {
        let t = task(&[&[&[0.0], &[2.0]], &[&[2.0], &[0.0]]]);
        let p = binary_predict(&t, 0.05, true).unwrap();
        assert!((p.p_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn constant_support_is_degenerate() {
        let t = task(&[&[&[1.0], &[1.0]], &[&[1.0], &[1.0]], &[&[1.0], &[1.0]]]);
        for covariance in [CovarianceChoice::Auto, CovarianceChoice::Fixed(CovarianceVariant::SharedIsotropic)] {
            let opts = PredictOptions { covariance, ..Default::default() };
            assert_eq!(predict_accuracy(&t, &opts).unwrap_err(), Error::DegenerateCenters);
        }
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let a = vec![dvector![0.0, 0.0], dvector![1.0, 0.0], dvector![0.0, 2.0]];
        let (s, c) = (0.3f64.sin(), 0.3f64.cos());
        let q = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let b: Vec<_> = a.iter().map(|v| &q * v + dvector![5.0, -1.0]).collect();
        let r = procrustes_rotation(&a, &b, 2);
        assert!((r - q).abs().max() < 1e-12);
    }

    #[test]
    fn oracle_multiclass_uses_reduced_space() {
        let centers = vec![dvector![0.0, 0.0, 0.0, 0.0], dvector![3.0, 0.0, 0.0, 0.0], dvector![0.0, 3.0, 0.0, 0.0]];
        let cfg = MonteCarloConfig { samples_per_class: 50_000, seed: 1, parallel_streams: 0 };
        let est = oracle_error(&centers, 1.0, &cfg).unwrap();
        let quad = crate::montecarlo::quadrature_oracle_error(
            &[dvector![0.0, 0.0], dvector![3.0, 0.0], dvector![0.0, 3.0]],
            1.0,
        )
        .unwrap();
        assert_eq!(est.method, Method::Oracle);
        assert!((est.p_error - quad).abs() < 0.01);
    }
}
