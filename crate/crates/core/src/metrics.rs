//! Evaluation metrics and the covariance-model comparison experiment.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit_covariance, CovarianceVariant};
use crate::model::column_mean;
use crate::seeding::{derive_seed, stream_rng};
use crate::stats::MeanSe;

/// `|P_e - P̂_e| / (1 - P_e)`.
pub fn mape(p_hat: f64, p_true: f64) -> Result<f64> {
    if p_true >= 1.0 {
        return Err(Error::UndefinedMape);
    }
    Ok((p_true - p_hat).abs() / (1.0 - p_true))
}

/// Arithmetic mean of per-task MAPE values.
pub fn mean_mape(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no tasks".into()));
    }
    let total = pairs.iter().map(|&(h, t)| mape(h, t)).sum::<Result<f64>>()?;
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from `(0,0)` to `(1,1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC of predicted accuracies against truths binarized at `threshold`
/// (positive means easy: true accuracy at or above the threshold). Tied
/// scores share one vertex; the area uses the trapezoid rule.
pub fn roc_curve(scores: &[f64], truths: &[f64], threshold: f64) -> Result<RocCurve> {
    if scores.len() != truths.len() {
        return Err(Error::InvalidArgument("scores and truths differ in length".into()));
    }
    let labels: Vec<bool> = truths.iter().map(|&t| t >= threshold).collect();
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateRoc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
    Ok(RocCurve { points, auc })
}

/// `KL(N(μ₁, Σ₁) ‖ N(μ₂, Σ₂))` in closed form.
pub fn gaussian_kl(mu1: &DVector<f64>, sigma1: &DMatrix<f64>, mu2: &DVector<f64>, sigma2: &DMatrix<f64>) -> Result<f64> {
    let d = mu1.len();
    for m in [sigma1, sigma2] {
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: m.nrows() });
        }
    }
    if mu2.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: mu2.len() });
    }
    let ch2 = sigma2.clone().cholesky().ok_or(Error::SingularCovariance)?;
    let ch1 = sigma1.clone().cholesky().ok_or(Error::SingularCovariance)?;
    let logdet = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let trace_term = ch2.solve(sigma1).trace();
    let diff = mu2 - mu1;
    let quad = diff.dot(&ch2.solve(&diff));
    let kl = 0.5 * (trace_term + quad - d as f64 + logdet(&ch2.l()) - logdet(&ch1.l()));
    Ok(kl.max(0.0))
}

/// Mean KL divergence of one covariance model at one shot count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlRow {
    pub k: usize,
    pub variant: CovarianceVariant,
    pub mean_kl: f64,
    pub std_err: f64,
    pub count: usize,
}

pub const MIN_REFERENCE_POOL: usize = 100;

/// For each shot count and covariance model: fit on a `k`-subsample of
/// every class, and measure `KL(fitted ‖ reference)` where the reference is
/// the full-covariance fit on the whole pool. Averages run over classes,
/// tasks, and `draws` subsamples per task.
///
/// `tasks[t][c]` is the `dim × pool` sample matrix of class `c`.
pub fn model_selection_experiment(
    tasks: &[Vec<DMatrix<f64>>],
    k_grid: &[usize],
    draws: usize,
    seed: u64,
) -> Result<Vec<KlRow>> {
    for pools in tasks {
        for (c, p) in pools.iter().enumerate() {
            if p.ncols() < MIN_REFERENCE_POOL {
                return Err(Error::PoolTooSmall { class: c, count: p.ncols(), needed: MIN_REFERENCE_POOL });
            }
        }
    }
    if let Some(&k) = k_grid.iter().find(|&&k| k < 2) {
        return Err(Error::InvalidArgument(format!("shot count {k} too small for variance models")));
    }
    let references: Vec<Vec<(DVector<f64>, DMatrix<f64>)>> = tasks
        .iter()
        .map(|pools| {
            let fit = fit_covariance(pools, CovarianceVariant::FullPerClass)?;
            Ok(pools.iter().enumerate().map(|(c, p)| (column_mean(p), fit.class_covariance(c))).collect())
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (ki, &k) in k_grid.iter().enumerate() {
        // samples[variant] = per (task, draw, class) KL values
        let per_unit: Vec<Vec<Vec<f64>>> = (0..tasks.len() * draws)
            .into_par_iter()
            .map(|unit| {
                let (t, draw) = (unit / draws, unit % draws);
                let pools = &tasks[t];
                let unit_seed = derive_seed(seed, (ki * tasks.len() * draws + unit) as u64);
                let mut rng = stream_rng(unit_seed, draw as u64);
                let subs: Vec<DMatrix<f64>> = pools
                    .iter()
                    .map(|p| {
                        if k > p.ncols() {
                            return Err(Error::PoolTooSmall { class: 0, count: p.ncols(), needed: k });
                        }
                        let idx = sample(&mut rng, p.ncols(), k);
                        let mut cols: Vec<usize> = idx.into_vec();
                        cols.sort_unstable();
                        Ok(p.select_columns(&cols))
                    })
                    .collect::<Result<_>>()?;
                CovarianceVariant::ALL
                    .iter()
                    .map(|&v| {
                        let fit = fit_covariance(&subs, v)?;
                        subs.iter()
                            .enumerate()
                            .map(|(c, s)| {
                                let (ref_mu, ref_cov) = &references[t][c];
                                gaussian_kl(&column_mean(s), &fit.class_covariance(c), ref_mu, ref_cov)
                            })
                            .collect::<Result<Vec<f64>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        for (vi, &variant) in CovarianceVariant::ALL.iter().enumerate() {
            let values: Vec<f64> = per_unit.iter().flat_map(|u| u[vi].iter().cloned()).collect();
            let s = MeanSe::of(&values);
            rows.push(KlRow { k, variant, mean_kl: s.mean, std_err: s.se, count: values.len() });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn mape_cases() {
        assert_eq!(mape(0.3, 0.3).unwrap(), 0.0);
        assert!((mape(0.1, 0.2).unwrap() - 0.125).abs() < 1e-15);
        assert!((mape(0.1, 0.2).unwrap() - mape(0.3, 0.2).unwrap()).abs() < 1e-15);
        assert_eq!(mape(0.1, 1.0).unwrap_err(), Error::UndefinedMape);
    }

    #[test]
    fn roc_cases() {
        let perfect = roc_curve(&[0.9, 0.8, 0.3, 0.2], &[0.95, 0.9, 0.5, 0.4], 0.85).unwrap();
        assert_eq!(perfect.auc, 1.0);
        let flat = roc_curve(&[0.5; 4], &[0.95, 0.9, 0.5, 0.4], 0.85).unwrap();
        assert_eq!(flat.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(flat.auc, 0.5);
        // pairs (easy, hard): (0.9,0.8) (0.9,0.6) (0.7,0.6) ordered, (0.7,0.8) not → 3/4
        let hand = roc_curve(&[0.9, 0.8, 0.7, 0.6], &[0.9, 0.5, 0.9, 0.5], 0.85).unwrap();
        assert!((hand.auc - 0.75).abs() < 1e-15);
        assert_eq!(roc_curve(&[0.1, 0.2], &[0.9, 0.95], 0.85).unwrap_err(), Error::DegenerateRoc);
    }

    #[test]
    fn kl_cases() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let mu = dvector![0.3, -1.0];
        assert!(gaussian_kl(&mu, &i2, &mu, &i2).unwrap().abs() < 1e-15);
        let one = DMatrix::from_element(1, 1, 1.0);
        assert!((gaussian_kl(&dvector![0.0], &one, &dvector![1.5], &one).unwrap() - 1.125).abs() < 1e-15);
        let four = DMatrix::from_element(1, 1, 4.0);
        let expected = 0.5 * (0.25 - 1.0 + 4f64.ln());
        assert!((gaussian_kl(&dvector![0.0], &one, &dvector![0.0], &four).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.3181).abs() < 1e-4);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(gaussian_kl(&mu, &i2, &mu, &singular).unwrap_err(), Error::SingularCovariance);
    }
}
