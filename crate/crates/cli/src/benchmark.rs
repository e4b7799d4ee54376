//! End-to-end comparison of accuracy predictors on sampled episodes or on
//! synthetic isotropic tasks.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use shotcast_core::baselines::davies_bouldin_index;
use shotcast_core::seeding::{derive_seed, stream_rng};
use shotcast_core::stats::MeanSe;
use shotcast_core::synthetic::{generate_isotropic_task, SyntheticSpec};
use shotcast_core::{
    calibrate_db_regression, loo_cross_validation, mape, oracle_error, predict_accuracy, predict_accuracy_db, roc_curve,
    CovarianceChoice, DbCalibration, Error, FewShotTask, FeatureVector, MonteCarloConfig, PredictOptions,
};

use crate::episodes::{sample_episode, true_accuracy, DEFAULT_N_QUERY};
use crate::error::{CliError, Result};
use crate::output::{fmt_f64, Sink};
use crate::store::FeatureStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMethod {
    OursUnbiased,
    OursBiased,
    Cv,
    Db,
    Oracle,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 5] =
        [BenchMethod::OursUnbiased, BenchMethod::OursBiased, BenchMethod::Cv, BenchMethod::Db, BenchMethod::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::OursUnbiased => "ours-unbiased",
            BenchMethod::OursBiased => "ours-biased",
            BenchMethod::Cv => "cv",
            BenchMethod::Db => "db",
            BenchMethod::Oracle => "oracle",
        }
    }
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMethod {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        BenchMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown method `{s}`")))
    }
}

/// Isotropic generator settings. Each task's SNR is drawn uniformly from
/// `[snr_db, snr_db + snr_spread]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSource {
    pub dim: usize,
    pub snr_db: f64,
    pub snr_spread: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub enum Source {
    Store(FeatureStore),
    Synthetic(SyntheticSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub n_ways: usize,
    pub k_grid: Vec<usize>,
    pub tasks: usize,
    pub n_query: usize,
    pub seed: u64,
    pub methods: Vec<BenchMethod>,
    pub covariance: CovarianceChoice,
    pub mc_samples: usize,
    pub alpha: f64,
    pub threshold: f64,
    /// Used for every `k` when present; otherwise synthetic sources are
    /// calibrated per `k` on `calibration_tasks` separate tasks.
    pub calibration: Option<DbCalibration>,
    pub calibration_tasks: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_ways: 5,
            k_grid: vec![5],
            tasks: 1000,
            n_query: DEFAULT_N_QUERY,
            seed: 0,
            methods: vec![BenchMethod::OursUnbiased, BenchMethod::OursBiased, BenchMethod::Cv],
            covariance: CovarianceChoice::Auto,
            mc_samples: shotcast_core::montecarlo::DEFAULT_SAMPLES_PER_CLASS,
            alpha: shotcast_core::analytic::DEFAULT_ALPHA,
            threshold: 0.85,
            calibration: None,
            calibration_tasks: 200,
        }
    }
}

/// One evaluated task. `predictions` follows the configured method order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: usize,
    pub seed: u64,
    pub k: usize,
    pub n_ways: usize,
    pub snr_db: Option<f64>,
    pub true_accuracy: f64,
    pub low_confidence: bool,
    pub predictions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapeRow {
    pub k: usize,
    pub method: BenchMethod,
    pub mape: f64,
    pub std_err: f64,
    pub tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRow {
    pub k: usize,
    pub method: BenchMethod,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub k: usize,
    pub method: BenchMethod,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub methods: Vec<BenchMethod>,
    pub records: Vec<TaskRecord>,
    pub mape: Vec<MapeRow>,
    /// Absent for a `k` when every truth falls on one side of the threshold.
    pub roc: Vec<RocRow>,
    pub roc_points: Vec<RocPoint>,
}

impl BenchmarkResult {
    pub fn records_for(&self, k: usize) -> impl Iterator<Item = &TaskRecord> {
        self.records.iter().filter(move |r| r.k == k)
    }

    pub fn column(&self, k: usize, method: BenchMethod) -> Option<Vec<f64>> {
        let i = self.methods.iter().position(|&m| m == method)?;
        Some(self.records_for(k).map(|r| r.predictions[i]).collect())
    }

    pub fn truths(&self, k: usize) -> Vec<f64> {
        self.records_for(k).map(|r| r.true_accuracy).collect()
    }

    pub fn mape_row(&self, k: usize, method: BenchMethod) -> Option<&MapeRow> {
        self.mape.iter().find(|r| r.k == k && r.method == method)
    }

    pub fn roc_row(&self, k: usize, method: BenchMethod) -> Option<&RocRow> {
        self.roc.iter().find(|r| r.k == k && r.method == method)
    }
}

/// A task ready for the predictors, with its truth.
struct Evaluated {
    task: FewShotTask,
    seed: u64,
    snr_db: Option<f64>,
    truth: f64,
    low_confidence: bool,
    centers: Option<(Vec<FeatureVector>, f64)>,
}

fn mc(samples: usize, seed: u64) -> MonteCarloConfig {
    MonteCarloConfig { samples_per_class: samples, seed, parallel_streams: 1 }
}

fn draw(source: &Source, cfg: &BenchmarkConfig, k: usize, index: usize, root: u64) -> Result<Evaluated> {
    match source {
        Source::Store(store) => {
            let ep = sample_episode(store, cfg.n_ways, k, cfg.n_query, index, root)?;
            let truth = true_accuracy(&ep.task)?;
            Ok(Evaluated { task: ep.task, seed: ep.seed, snr_db: None, truth, low_confidence: ep.low_confidence, centers: None })
        }
        Source::Synthetic(s) => {
            let seed = derive_seed(root, index as u64);
            let snr_db = if s.snr_spread > 0.0 { s.snr_db + s.snr_spread * stream_rng(seed, 7).random::<f64>() } else { s.snr_db };
            let spec = SyntheticSpec { n_ways: cfg.n_ways, k_shots: k, dim: s.dim, snr_db, sigma: s.sigma, seed, n_query: 0 };
            let st = generate_isotropic_task(&spec)?;
            let truth = 1.0 - st.classifier_error(&mc(cfg.mc_samples, derive_seed(seed, 1)))?;
            Ok(Evaluated { task: st.task, seed, snr_db: Some(snr_db), truth, low_confidence: false, centers: Some((st.centers, st.sigma)) })
        }
    }
}

fn clip(acc: f64, n: usize) -> f64 {
    acc.clamp(1.0 / n as f64, 1.0)
}

fn predict(method: BenchMethod, e: &Evaluated, cfg: &BenchmarkConfig, cal: Option<&DbCalibration>) -> Result<f64> {
    let n = e.task.n_ways();
    let acc = match method {
        BenchMethod::OursUnbiased | BenchMethod::OursBiased => {
            let opts = PredictOptions {
                covariance: cfg.covariance,
                bias_correction: method == BenchMethod::OursUnbiased,
                monte_carlo: mc(cfg.mc_samples, derive_seed(e.seed, 2)),
                alpha: cfg.alpha,
                ..Default::default()
            };
            predict_accuracy(&e.task, &opts)?.accuracy()
        }
        BenchMethod::Cv => loo_cross_validation(&e.task)?.accuracy(),
        BenchMethod::Db => predict_accuracy_db(davies_bouldin_index(&e.task)?, cal.ok_or(CliError::MissingCalibration)?, n),
        BenchMethod::Oracle => {
            let (centers, sigma) = e.centers.as_ref().ok_or(CliError::OracleNeedsSynthetic)?;
            oracle_error(centers, *sigma, &mc(cfg.mc_samples, derive_seed(e.seed, 3)))?.accuracy()
        }
    };
    Ok(clip(acc, n))
}

const CALIBRATION_STREAM: u64 = 0xCA1B;

/// `(DB score, true accuracy)` over `tasks` tasks drawn apart from any
/// benchmark tasks of the same seed.
pub fn calibration_points(source: &Source, cfg: &BenchmarkConfig, k: usize, tasks: usize) -> Result<Vec<(f64, f64)>> {
    let root = derive_seed(derive_seed(cfg.seed, CALIBRATION_STREAM), k as u64);
    (0..tasks)
        .into_par_iter()
        .map(|i| {
            let e = draw(source, cfg, k, i, root)?;
            Ok((davies_bouldin_index(&e.task)?, e.truth))
        })
        .collect()
}

/// Least-squares DB calibration pooled over every `k` of the grid.
pub fn calibrate_db(source: &Source, cfg: &BenchmarkConfig) -> Result<DbCalibration> {
    let mut points = Vec::new();
    for &k in &cfg.k_grid {
        points.extend(calibration_points(source, cfg, k, cfg.tasks)?);
    }
    Ok(calibrate_db_regression(&points)?)
}

fn check(source: &Source, cfg: &BenchmarkConfig) -> Result<()> {
    if cfg.methods.is_empty() || cfg.k_grid.is_empty() || cfg.tasks == 0 {
        return Err(CliError::Usage("benchmark needs methods, shot counts and tasks".into()));
    }
    if cfg.methods.contains(&BenchMethod::Db) && cfg.calibration.is_none() && matches!(source, Source::Store(_)) {
        return Err(CliError::MissingCalibration);
    }
    if cfg.methods.contains(&BenchMethod::Oracle) && matches!(source, Source::Store(_)) {
        return Err(CliError::OracleNeedsSynthetic);
    }
    Ok(())
}

/// Runs every method on `cfg.tasks` tasks per shot count. Records come out
/// in `(k, task index)` order whatever the size of the thread pool.
pub fn run_benchmark(source: &Source, cfg: &BenchmarkConfig) -> Result<BenchmarkResult> {
    check(source, cfg)?;
    let mut result =
        BenchmarkResult { methods: cfg.methods.clone(), records: Vec::new(), mape: Vec::new(), roc: Vec::new(), roc_points: Vec::new() };
    for &k in &cfg.k_grid {
        let cal = match (cfg.methods.contains(&BenchMethod::Db), cfg.calibration) {
            (false, _) => None,
            (true, Some(c)) => Some(c),
            (true, None) => Some(calibrate_db_regression(&calibration_points(source, cfg, k, cfg.calibration_tasks)?)?),
        };
        let root = derive_seed(cfg.seed, k as u64);
        let records: Vec<TaskRecord> = (0..cfg.tasks)
            .into_par_iter()
            .map(|i| {
                let e = draw(source, cfg, k, i, root)?;
                let predictions = cfg.methods.iter().map(|&m| predict(m, &e, cfg, cal.as_ref())).collect::<Result<_>>()?;
                Ok(TaskRecord {
                    task_id: i,
                    seed: e.seed,
                    k,
                    n_ways: cfg.n_ways,
                    snr_db: e.snr_db,
                    true_accuracy: e.truth,
                    low_confidence: e.low_confidence,
                    predictions,
                })
            })
            .collect::<Result<_>>()?;
        let truths: Vec<f64> = records.iter().map(|r| r.true_accuracy).collect();
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let preds: Vec<f64> = records.iter().map(|r| r.predictions[mi]).collect();
            let per_task = preds.iter().zip(&truths).map(|(&p, &t)| mape(1.0 - p, 1.0 - t)).collect::<Result<Vec<f64>, _>>()?;
            let s = MeanSe::of(&per_task);
            result.mape.push(MapeRow { k, method, mape: s.mean, std_err: s.se, tasks: s.n });
            match roc_curve(&preds, &truths, cfg.threshold) {
                Ok(roc) => {
                    let positives = truths.iter().filter(|&&t| t >= cfg.threshold).count();
                    result.roc.push(RocRow { k, method, auc: roc.auc, positives, negatives: truths.len() - positives });
                    result.roc_points.extend(roc.points.iter().map(|&(fpr, tpr)| RocPoint { k, method, fpr, tpr }));
                }
                Err(Error::DegenerateRoc) => {}
                Err(e) => return Err(e.into()),
            }
        }
        result.records.extend(records);
    }
    Ok(result)
}

pub const RECORD_COLUMNS: [&str; 7] = ["task_id", "seed", "k", "n_ways", "snr_db", "true_accuracy", "low_confidence"];

#[derive(Serialize)]
struct RecordJson<'a> {
    task_id: usize,
    seed: u64,
    k: usize,
    n_ways: usize,
    snr_db: Option<f64>,
    true_accuracy: f64,
    low_confidence: bool,
    predictions: BTreeMap<&'a str, f64>,
}

/// Emits `records`, `mape`, `roc` and `roc_points` tables.
pub fn emit_benchmark(result: &BenchmarkResult, sink: &Sink) -> Result<()> {
    let mut header: Vec<String> = RECORD_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(result.methods.iter().map(|m| m.name().to_string()));
    let rows: Vec<Vec<String>> = result
        .records
        .iter()
        .map(|r| {
            let mut row = vec![
                r.task_id.to_string(),
                r.seed.to_string(),
                r.k.to_string(),
                r.n_ways.to_string(),
                r.snr_db.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.true_accuracy),
                r.low_confidence.to_string(),
            ];
            row.extend(r.predictions.iter().map(|&p| fmt_f64(p)));
            row
        })
        .collect();
    let json: Vec<RecordJson> = result
        .records
        .iter()
        .map(|r| RecordJson {
            task_id: r.task_id,
            seed: r.seed,
            k: r.k,
            n_ways: r.n_ways,
            snr_db: r.snr_db,
            true_accuracy: r.true_accuracy,
            low_confidence: r.low_confidence,
            predictions: result.methods.iter().map(|m| m.name()).zip(r.predictions.iter().cloned()).collect(),
        })
        .collect();
    sink.columns("records", &header, &rows, &json)?;
    sink.table("mape", &result.mape)?;
    sink.table("roc", &result.roc)?;
    sink.table("roc_points", &result.roc_points)?;
    Ok(())
}
