//! Comparison predictors: leave-one-out cross-validation and a
//! Davies-Bouldin score mapped to accuracy by linear regression.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{nearest_index, FewShotTask};
use crate::montecarlo::{ErrorEstimate, Method};

/// Exhaustive leave-one-out error of the NCM classifier on the support set.
///
/// Each sample is classified against its own class mean recomputed without
/// it and the other classes' full means.
pub fn loo_cross_validation(task: &FewShotTask) -> Result<ErrorEstimate> {
    let (errors, events) = loo_counts(task)?;
    Ok(ErrorEstimate::new(errors as f64 / events as f64, Method::Cv))
}

/// `(errors, classification events)` of the leave-one-out sweep.
pub fn loo_counts(task: &FewShotTask) -> Result<(usize, usize)> {
    if task.support().iter().any(|m| m.ncols() < 2) {
        return Err(Error::CrossValidationOneShot);
    }
    let sums: Vec<DVector<f64>> = task.support().iter().map(|m| m.column_sum()).collect();
    let means = task.class_means();
    let mut errors = 0;
    let mut events = 0;
    for (c, samples) in task.support().iter().enumerate() {
        let k = samples.ncols() as f64;
        for z in samples.column_iter() {
            let held_out: DVector<f64> = (&sums[c] - z) / (k - 1.0);
            let candidates = means.iter().enumerate().map(|(j, m)| if j == c { held_out.as_slice() } else { m.as_slice() });
            let z = z.into_owned();
            if nearest_index(z.as_slice(), candidates) != c {
                errors += 1;
            }
            events += 1;
        }
    }
    Ok((errors, events))
}

/// Davies-Bouldin index of the support set in the original feature space:
/// the class-averaged worst ratio of summed scatter to center separation.
pub fn davies_bouldin_index(task: &FewShotTask) -> Result<f64> {
    let means = task.class_means();
    let scatter: Vec<f64> = task
        .support()
        .iter()
        .zip(&means)
        .map(|(m, mu)| m.column_iter().map(|z| (z - mu).norm()).sum::<f64>() / m.ncols() as f64)
        .collect();
    let n = means.len();
    let mut total = 0.0;
    for c in 0..n {
        let mut worst = f64::NEG_INFINITY;
        for o in (0..n).filter(|&o| o != c) {
            let sep = (&means[c] - &means[o]).norm();
            if sep == 0.0 {
                return Err(Error::DegenerateDbDenominator);
            }
            worst = worst.max((scatter[c] + scatter[o]) / sep);
        }
        total += worst;
    }
    Ok(total / n as f64)
}

/// Least-squares map `accuracy ≈ slope · DB + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbCalibration {
    pub slope: f64,
    pub intercept: f64,
    pub n_calibration_tasks: usize,
}

/// Ordinary least squares on `(DB score, true accuracy)` pairs.
pub fn calibrate_db_regression(points: &[(f64, f64)]) -> Result<DbCalibration> {
    let (slope, intercept) = ols(points)?;
    Ok(DbCalibration { slope, intercept, n_calibration_tasks: points.len() })
}

/// Simple linear regression `(slope, intercept)`, centered for stability.
pub fn ols(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::DegenerateCalibration);
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= f64::EPSILON * points.iter().map(|p| p.0 * p.0).sum::<f64>() || sxx == 0.0 {
        return Err(Error::DegenerateCalibration);
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Calibrated accuracy, clipped to `[1/n, 1]`.
pub fn predict_accuracy_db(db: f64, cal: &DbCalibration, n_ways: usize) -> f64 {
    (cal.slope * db + cal.intercept).clamp(1.0 / n_ways as f64, 1.0)
}

/// DB prediction expressed as an error estimate.
pub fn db_error_estimate(task: &FewShotTask, cal: &DbCalibration) -> Result<ErrorEstimate> {
    let acc = predict_accuracy_db(davies_bouldin_index(task)?, cal, task.n_ways());
    Ok(ErrorEstimate::new(1.0 - acc, Method::DbIndex))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClassLabel;
    use nalgebra::DMatrix;

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
    fn separable_clusters_have_zero_loo_error() {
        let t = task(&[&[&[0.0, 0.0], &[0.1, 0.0]], &[&[10.0, 10.0], &[10.1, 10.0]]]);
        assert_eq!(loo_cross_validation(&t).unwrap().p_error, 0.0);
    }

    #[test]
    fn identical_points_follow_tie_break() {
        // every held-out mean and every other mean coincide with the sample:
        // all ties go to class 0, so class 0 is always right and class 1 always wrong
        let t = task(&[&[&[1.0], &[1.0]], &[&[1.0], &[1.0]]]);
        assert_eq!(loo_counts(&t).unwrap(), (2, 4));
        assert_eq!(loo_cross_validation(&t).unwrap().p_error, 0.5);
    }

    #[test]
    fn loo_rejects_one_shot() {
        let t = task(&[&[&[0.0]], &[&[1.0]]]);
        assert_eq!(loo_cross_validation(&t).unwrap_err(), Error::CrossValidationOneShot);
    }

    #[test]
    fn db_cases() {
        let t = task(&[&[&[0.0]], &[&[1.0]]]);
        assert_eq!(davies_bouldin_index(&t).unwrap(), 0.0);
        // scatters: class 0 → 1, class 1 → 0.5; separation 4; DB = 1.5/4
        let t = task(&[&[&[-1.0], &[1.0]], &[&[3.5], &[4.5]]]);
        assert!((davies_bouldin_index(&t).unwrap() - 0.375).abs() < 1e-15);
        let t = task(&[&[&[0.0], &[2.0]], &[&[1.0], &[1.0]]]);
        assert_eq!(davies_bouldin_index(&t).unwrap_err(), Error::DegenerateDbDenominator);
    }

    #[test]
    fn calibration_cases() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64 * 0.5, -0.3 * i as f64 * 0.5 + 0.9)).collect();
        let cal = calibrate_db_regression(&pts).unwrap();
        assert!((cal.slope + 0.3).abs() < 1e-14 && (cal.intercept - 0.9).abs() < 1e-14);
        assert_eq!(cal.n_calibration_tasks, 6);
        let flat = calibrate_db_regression(&[(0.0, 0.7), (1.0, 0.7), (3.0, 0.7)]).unwrap();
        assert!(flat.slope.abs() < 1e-15);
        assert!(calibrate_db_regression(&[(1.0, 0.2), (1.0, 0.9)]).is_err());
        assert!(calibrate_db_regression(&[(1.0, 0.2)]).is_err());
    }

    #[test]
    fn db_prediction_clipping() {
        let cal = DbCalibration { slope: 1.0, intercept: 0.0, n_calibration_tasks: 2 };
        assert_eq!(predict_accuracy_db(1.2, &cal, 5), 1.0);
        assert_eq!(predict_accuracy_db(0.1, &cal, 5), 0.2);
        assert_eq!(predict_accuracy_db(0.6, &cal, 5), 0.6);
    }
}
