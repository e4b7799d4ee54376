//! Predicting the accuracy of a nearest-class-mean classifier on a few-shot
//! task from its support samples alone.
//!
//! Class-conditional densities are modeled as Gaussians. Squared distances
//! between empirical class means are corrected for the positive bias that
//! small samples introduce, and the probability of error is then evaluated
//! in closed form for two classes or by sampling a virtual validation set
//! around centers reconstructed by multidimensional scaling.
//!
//! ```
//! use shotcast_core::synthetic::{generate_isotropic_task, SyntheticSpec};
//! use shotcast_core::{predict_accuracy, PredictOptions};
//!
//! let spec = SyntheticSpec { n_ways: 5, k_shots: 5, dim: 32, snr_db: 3.0, ..Default::default() };
//! let generated = generate_isotropic_task(&spec).unwrap();
//! let prediction = predict_accuracy(&generated.task, &PredictOptions::default()).unwrap();
//! assert!(prediction.accuracy() > 0.2 && prediction.accuracy() <= 1.0);
//! ```

pub mod analytic;
pub mod baselines;
pub mod error;
pub mod estimators;
pub mod mds;
pub mod metrics;
pub mod model;
pub mod montecarlo;
pub mod pipeline;
pub mod seeding;
pub mod stats;
pub mod synthetic;

pub use nalgebra::{DMatrix, DVector};

pub use analytic::{binary_error_probability, binary_predict, lemma1_bound, std_normal_cdf, std_normal_quantile, ConfidenceBound};
pub use baselines::{calibrate_db_regression, davies_bouldin_index, loo_cross_validation, predict_accuracy_db, DbCalibration};
pub use error::{Error, Result};
pub use estimators::{
    corrected_distance_matrix, fit_covariance, naive_squared_distance, select_covariance_model, unbiased_squared_distance,
    CovarianceModel, CovarianceVariant, DistanceMatrix, GaussianTaskModel,
};
pub use mds::{embed_centers, CenterConfiguration, MdsOptions, StressMode};
pub use metrics::{gaussian_kl, mape, roc_curve, RocCurve};
pub use model::{fit_class_means, ncm_classify, nearest_index, project_to_class_subspace, ClassLabel, FeatureSet, FeatureVector, FewShotTask, ProjectedTask};
pub use montecarlo::{estimate_error_monte_carlo, quadrature_oracle_error, ErrorEstimate, Method, MonteCarloConfig};
pub use pipeline::{oracle_error, predict_accuracy, CovarianceChoice, PredictOptions, Prediction};
