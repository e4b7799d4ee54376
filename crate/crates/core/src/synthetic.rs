//! Isotropic Gaussian task generators and the synthetic experiments built
//! on them: estimator bias and variance, the binary confidence bound, and
//! SNR sweeps of the predictors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{binary_error_probability, lemma1_bound, std_normal_cdf};
use crate::baselines::loo_cross_validation;
use crate::error::{Error, Result};
use crate::estimators::{correction_traces, naive_squared_distance, unbiased_squared_distance, CovarianceModel, CovarianceVariant};
use crate::metrics::mape;
use crate::model::{project_to_class_subspace, ClassLabel, FeatureVector, FewShotTask};
use crate::montecarlo::{misclassification_rate, MonteCarloConfig};
use crate::pipeline::{oracle_error, predict_accuracy, CovarianceChoice, PredictOptions};
use crate::seeding::{derive_seed, stream_rng};
use crate::stats::{linear_fit, LinearFit, MeanSe, VarianceSe};

/// Parameters of an isotropic n-way task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_ways: usize,
    pub k_shots: usize,
    pub dim: usize,
    pub snr_db: f64,
    pub sigma: f64,
    pub seed: u64,
    /// Held-out samples per class.
    pub n_query: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n_ways: 2, k_shots: 10, dim: 512, snr_db: 0.0, sigma: 1.0, seed: 0, n_query: 0 }
    }
}

impl SyntheticSpec {
    pub fn center_distance(&self) -> f64 {
        center_distance(self.snr_db, self.sigma)
    }
}

/// Inverse of `SNR_dB = 10 log10(r / (√2 σ))`.
pub fn center_distance(snr_db: f64, sigma: f64) -> f64 {
    std::f64::consts::SQRT_2 * sigma * 10f64.powf(snr_db / 10.0)
}

/// Vertices of a regular simplex with edge `r`, occupying the first `n - 1`
/// coordinates of a `dim`-dimensional space, centered at the origin.
pub fn simplex_centers(n: usize, r: f64, dim: usize) -> Result<Vec<FeatureVector>> {
    if n < 2 || dim + 1 < n {
        return Err(Error::InvalidArgument(format!("cannot place {n} equidistant centers in {dim} dimensions")));
    }
    // Helmert rows h_j, j = 1..n-1, are an orthonormal basis of the plane
    // orthogonal to the all-ones vector; vertex i has coordinates h_j[i].
    let scale = r / std::f64::consts::SQRT_2;
    Ok((0..n)
        .map(|i| {
            DVector::from_fn(dim, |j, _| {
                if j + 1 >= n {
                    return 0.0;
                }
                let jj = (j + 1) as f64;
                let norm = (jj * (jj + 1.0)).sqrt();
                let v = match i.cmp(&(j + 1)) {
                    std::cmp::Ordering::Less => 1.0,
                    std::cmp::Ordering::Equal => -jj,
                    std::cmp::Ordering::Greater => 0.0,
                };
                scale * v / norm
            })
        })
        .collect())
}

/// A generated task with the parameters it was drawn from.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub task: FewShotTask,
    pub centers: Vec<FeatureVector>,
    pub sigma: f64,
    /// Error of the NCM rule built on the true centers, when a closed form
    /// exists (two classes).
    pub bayes_error: Option<f64>,
}

fn draw_class(rng: &mut impl Rng, center: &FeatureVector, sigma: f64, count: usize) -> DMatrix<f64> {
    let dim = center.len();
    let mut m = DMatrix::zeros(dim, count);
    for mut col in m.column_iter_mut() {
        for (x, c) in col.iter_mut().zip(center.iter()) {
            let e: f64 = rng.sample(StandardNormal);
            *x = c + sigma * e;
        }
    }
    m
}

/// Draws support and query samples i.i.d. from `N(center_c, σ² I)` around
/// simplex centers `r` apart. Deterministic in `spec.seed`.
pub fn generate_isotropic_task(spec: &SyntheticSpec) -> Result<SyntheticTask> {
    if spec.k_shots == 0 {
        return Err(Error::InvalidArgument("k_shots must be positive".into()));
    }
    if !(spec.sigma > 0.0) {
        return Err(Error::InvalidSigma(spec.sigma));
    }
    let r = spec.center_distance();
    let centers = simplex_centers(spec.n_ways, r, spec.dim)?;
    let mut rng = stream_rng(spec.seed, 0);
    let support: Vec<DMatrix<f64>> = centers.iter().map(|c| draw_class(&mut rng, c, spec.sigma, spec.k_shots)).collect();
    let query = (spec.n_query > 0)
        .then(|| centers.iter().map(|c| draw_class(&mut rng, c, spec.sigma, spec.n_query)).collect());
    let task = FewShotTask::from_grouped((0..spec.n_ways as i64).map(ClassLabel::Int).collect(), support, query)?;
    let bayes_error = (spec.n_ways == 2).then(|| binary_error_probability(r, spec.sigma)).transpose()?;
    Ok(SyntheticTask { task, centers, sigma: spec.sigma, bayes_error })
}

impl SyntheticTask {
    /// Generalization error of the NCM classifier fitted on the support set,
    /// under the true generator. Exact for two classes; otherwise a
    /// Monte-Carlo integral in the class-mean subspace, which carries every
    /// decision since the noise is isotropic.
    pub fn classifier_error(&self, cfg: &MonteCarloConfig) -> Result<f64> {
        let means = self.task.class_means();
        let n = means.len();
        if n == 2 {
            let w = &means[0] - &means[1];
            let norm = w.norm();
            if norm == 0.0 {
                // every point ties and goes to the first class
                return Ok(0.5);
            }
            let mid = (&means[0] + &means[1]) * 0.5;
            let s = self.sigma * norm;
            let e0 = std_normal_cdf(w.dot(&(&mid - &self.centers[0])) / s);
            let e1 = std_normal_cdf(w.dot(&(&self.centers[1] - &mid)) / s);
            return Ok(0.5 * (e0 + e1));
        }
        let projected = match project_to_class_subspace(&self.task, &means) {
            Ok(p) => p,
            Err(Error::DegenerateCenters) => return Ok((n - 1) as f64 / n as f64),
            Err(e) => return Err(e),
        };
        let sampling: Vec<FeatureVector> = self.centers.iter().map(|c| projected.project(c)).collect();
        let cov = CovarianceModel::SharedIsotropic { variance: self.sigma * self.sigma, dim: projected.dim() };
        misclassification_rate(&sampling, &projected.means_proj, &cov, cfg)
    }
}

/// Large per-class pools with axis-aligned anisotropic noise: class `c`
/// has standard deviation `exp(u)` along each axis, `u ~ U(-1, 1)` drawn
/// independently per class and axis. Centers form a simplex of edge `√2`.
pub fn anisotropic_pools(n_ways: usize, dim: usize, pool: usize, seed: u64) -> Result<Vec<DMatrix<f64>>> {
    let centers = simplex_centers(n_ways, std::f64::consts::SQRT_2, dim)?;
    let mut rng = stream_rng(seed, 0);
    Ok(centers
        .iter()
        .map(|c| {
            let scales: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0f64).exp()).collect();
            let mut m = DMatrix::zeros(dim, pool);
            for mut col in m.column_iter_mut() {
                for ((x, mu), s) in col.iter_mut().zip(c.iter()).zip(&scales) {
                    let e: f64 = rng.sample(StandardNormal);
                    *x = mu + s * e;
                }
            }
            m
        })
        .collect())
}

/// Naive and corrected squared distances for one two-class draw, with the
/// true squared distance.
fn distance_trial(dim: usize, k: usize, snr_db: f64, seed: u64) -> Result<(f64, f64, f64)> {
    let spec = SyntheticSpec { n_ways: 2, k_shots: k, dim, snr_db, sigma: 1.0, seed, n_query: 0 };
    let st = generate_isotropic_task(&spec)?;
    let means = st.task.class_means();
    let naive = naive_squared_distance(&means[0], &means[1])?;
    let traces = correction_traces(st.task.support(), CovarianceVariant::SharedIsotropic)?;
    let unbiased = unbiased_squared_distance(naive, traces[0], traces[1], k, k);
    Ok((naive, unbiased, spec.center_distance().powi(2)))
}

fn paired_trials(dim: usize, k: usize, snr_db: f64, trials: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let out: Vec<(f64, f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| distance_trial(dim, k, snr_db, derive_seed(seed, t as u64)))
        .collect::<Result<_>>()?;
    let r2 = out.first().map_or(center_distance(snr_db, 1.0).powi(2), |o| o.2);
    Ok((out.iter().map(|o| o.0).collect(), out.iter().map(|o| o.1).collect(), r2))
}

fn cell_seed(seed: u64, a: usize, b: usize) -> u64 {
    derive_seed(derive_seed(seed, a as u64), b as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCell {
    pub dim: usize,
    pub k: usize,
    pub snr_db: f64,
    pub true_squared_distance: f64,
    /// `r̂² - r²` of the naive estimator.
    pub naive: MeanSe,
    /// `r̂² - r²` of the corrected estimator.
    pub unbiased: MeanSe,
    /// `2 d σ² / k`.
    pub expected_naive_bias: f64,
}

impl BiasCell {
    pub fn normalized_naive(&self) -> f64 {
        self.naive.mean / self.true_squared_distance
    }

    pub fn normalized_unbiased(&self) -> f64 {
        self.unbiased.mean / self.true_squared_distance
    }
}

/// Bias of both squared-distance estimators on two-class isotropic data
/// with σ = 1, over a grid of shot counts and SNRs.
pub fn run_bias_experiment(dim: usize, k_grid: &[usize], snr_grid: &[f64], trials: usize, seed: u64) -> Result<Vec<BiasCell>> {
    let mut cells = Vec::new();
    for (ki, &k) in k_grid.iter().enumerate() {
        for (si, &snr_db) in snr_grid.iter().enumerate() {
            let (naive, unbiased, r2) = paired_trials(dim, k, snr_db, trials, cell_seed(seed, ki, si))?;
            let dev = |v: &[f64]| MeanSe::of(&v.iter().map(|x| x - r2).collect::<Vec<_>>());
            cells.push(BiasCell {
                dim,
                k,
                snr_db,
                true_squared_distance: r2,
                naive: dev(&naive),
                unbiased: dev(&unbiased),
                expected_naive_bias: 2.0 * dim as f64 / k as f64,
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCell {
    pub dim: usize,
    pub k: usize,
    pub snr_db: f64,
    /// Variance of `r̂² / r²`, naive estimator.
    pub naive: VarianceSe,
    /// Variance of `r̂² / r²`, corrected estimator.
    pub unbiased: VarianceSe,
    /// Standard error of the paired difference of the two variances.
    pub difference_se: f64,
}

/// Variance of both normalized estimators on shared trials.
pub fn run_variance_experiment(dim: usize, k: usize, snr_grid: &[f64], trials: usize, seed: u64) -> Result<Vec<VarianceCell>> {
    snr_grid
        .iter()
        .enumerate()
        .map(|(si, &snr_db)| {
            let (naive, unbiased, r2) = paired_trials(dim, k, snr_db, trials, cell_seed(seed, 0, si))?;
            let naive: Vec<f64> = naive.iter().map(|v| v / r2).collect();
            let unbiased: Vec<f64> = unbiased.iter().map(|v| v / r2).collect();
            Ok(VarianceCell {
                dim,
                k,
                snr_db,
                naive: VarianceSe::of(&naive),
                unbiased: VarianceSe::of(&unbiased),
                difference_se: VarianceSe::paired_difference_se(&unbiased, &naive),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Config {
    pub coverage_k_grid: Vec<usize>,
    pub alphas: Vec<f64>,
    pub coverage_trials: usize,
    pub linearity_k_grid: Vec<usize>,
    pub linearity_trials: usize,
    pub snr_db: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for Lemma1Config {
    fn default() -> Self {
        Self {
            coverage_k_grid: vec![5, 20, 100],
            alphas: vec![0.05, 0.1],
            coverage_trials: 10_000,
            linearity_k_grid: (1..=10).map(|i| 5 * i).collect(),
            linearity_trials: 1_000,
            snr_db: 0.0,
            sigma: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub k: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub covered: usize,
    pub trials: usize,
}

impl CoverageRow {
    pub fn coverage(&self) -> f64 {
        self.covered as f64 / self.trials as f64
    }

    pub fn binomial_se(&self) -> f64 {
        let p = self.coverage();
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityRow {
    pub k: usize,
    pub mean_squared_error: f64,
    /// `1 / mean |P_e - P̂_e|²`.
    pub inverse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub coverage: Vec<CoverageRow>,
    pub linearity: Vec<LinearityRow>,
    pub fit: LinearFit,
}

/// `|P_e - P̂_e|` for univariate two-class draws with known σ.
fn lemma1_deviations(k: usize, snr_db: f64, sigma: f64, trials: usize, seed: u64) -> Result<Vec<f64>> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let spec = SyntheticSpec { n_ways: 2, k_shots: k, dim: 1, snr_db, sigma, seed: derive_seed(seed, t as u64), n_query: 0 };
            let st = generate_isotropic_task(&spec)?;
            let means = st.task.class_means();
            let p_hat = binary_error_probability((means[0][0] - means[1][0]).abs(), sigma)?;
            Ok((st.bayes_error.expect("binary") - p_hat).abs())
        })
        .collect()
}

/// Empirical coverage of the confidence half-width, and the linear trend of
/// the inverse mean squared deviation in `k`.
pub fn run_lemma1_experiment(cfg: &Lemma1Config) -> Result<Lemma1Report> {
    let mut coverage = Vec::new();
    for (ki, &k) in cfg.coverage_k_grid.iter().enumerate() {
        let dev = lemma1_deviations(k, cfg.snr_db, cfg.sigma, cfg.coverage_trials, cell_seed(cfg.seed, 0, ki))?;
        for &alpha in &cfg.alphas {
            let epsilon = lemma1_bound(k, alpha)?.epsilon;
            let covered = dev.iter().filter(|&&d| d <= epsilon).count();
            coverage.push(CoverageRow { k, alpha, epsilon, covered, trials: dev.len() });
        }
    }
    let mut linearity = Vec::new();
    for (ki, &k) in cfg.linearity_k_grid.iter().enumerate() {
        let dev = lemma1_deviations(k, cfg.snr_db, cfg.sigma, cfg.linearity_trials, cell_seed(cfg.seed, 1, ki))?;
        let mse = dev.iter().map(|d| d * d).sum::<f64>() / dev.len() as f64;
        linearity.push(LinearityRow { k, mean_squared_error: mse, inverse: 1.0 / mse });
    }
    let fit = linear_fit(&linearity.iter().map(|r| (r.k as f64, r.inverse)).collect::<Vec<_>>())?;
    Ok(Lemma1Report { coverage, linearity, fit })
}

/// Predictors compared in the SNR sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Predictor {
    OursUnbiased,
    OursBiased,
    Cv,
    Oracle,
}

impl Predictor {
    pub const ALL: [Predictor; 4] = [Predictor::OursUnbiased, Predictor::OursBiased, Predictor::Cv, Predictor::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Predictor::OursUnbiased => "ours-unbiased",
            Predictor::OursBiased => "ours-biased",
            Predictor::Cv => "cv",
            Predictor::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_ways: usize,
    pub k_shots: usize,
    pub dim: usize,
    pub snr_grid: Vec<f64>,
    pub tasks: usize,
    pub seed: u64,
    pub predictors: Vec<Predictor>,
    pub covariance: CovarianceChoice,
    pub monte_carlo: MonteCarloConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_ways: 2,
            k_shots: 10,
            dim: 512,
            snr_grid: vec![-5.0, -2.5, 0.0, 2.5, 5.0, 7.5, 10.0],
            tasks: 10_000,
            seed: 0,
            predictors: Predictor::ALL.to_vec(),
            covariance: CovarianceChoice::Fixed(CovarianceVariant::SharedIsotropic),
            monte_carlo: MonteCarloConfig::default(),
        }
    }
}

/// Per-task MAPE of every predictor at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub snr_db: f64,
    pub columns: Vec<(Predictor, Vec<f64>)>,
}

impl SweepCell {
    pub fn values(&self, p: Predictor) -> Option<&[f64]> {
        self.columns.iter().find(|(q, _)| *q == p).map(|(_, v)| v.as_slice())
    }

    pub fn summary(&self, p: Predictor) -> Option<MeanSe> {
        self.values(p).map(MeanSe::of)
    }
}

/// Predicted error probability clipped to the range implied by accuracy in
/// `[1/n, 1]`.
pub fn clip_error(p: f64, n_ways: usize) -> f64 {
    p.clamp(0.0, 1.0 - 1.0 / n_ways as f64)
}

/// MAPE of each predictor against the fitted classifier's true error over
/// `tasks` isotropic tasks per SNR.
pub fn run_snr_sweep(cfg: &SweepConfig) -> Result<Vec<SweepCell>> {
    cfg.snr_grid
        .iter()
        .enumerate()
        .map(|(si, &snr_db)| {
            let rows: Vec<Vec<f64>> = (0..cfg.tasks)
                .into_par_iter()
                .map(|t| {
                    let seed = derive_seed(cell_seed(cfg.seed, 2, si), t as u64);
                    let spec = SyntheticSpec { n_ways: cfg.n_ways, k_shots: cfg.k_shots, dim: cfg.dim, snr_db, sigma: 1.0, seed, n_query: 0 };
                    let st = generate_isotropic_task(&spec)?;
                    let mc = cfg.monte_carlo.with_seed(derive_seed(seed, 1));
                    let truth = st.classifier_error(&mc)?;
                    cfg.predictors
                        .iter()
                        .map(|p| {
                            let estimate = match p {
                                Predictor::OursUnbiased | Predictor::OursBiased => {
                                    let opts = PredictOptions {
                                        covariance: cfg.covariance,
                                        bias_correction: *p == Predictor::OursUnbiased,
                                        monte_carlo: mc.with_seed(derive_seed(seed, 2)),
                                        ..Default::default()
                                    };
                                    predict_accuracy(&st.task, &opts)?.estimate.p_error
                                }
                                Predictor::Cv => loo_cross_validation(&st.task)?.p_error,
                                Predictor::Oracle => oracle_error(&st.centers, st.sigma, &mc.with_seed(derive_seed(seed, 3)))?.p_error,
                            };
                            mape(clip_error(estimate, cfg.n_ways), truth)
                        })
                        .collect()
                })
                .collect::<Result<_>>()?;
            let columns = cfg
                .predictors
                .iter()
                .enumerate()
                .map(|(i, &p)| (p, rows.iter().map(|r| r[i]).collect()))
                .collect();
            Ok(SweepCell { snr_db, columns })
        })
        .collect()
}
