//! Command-line front end.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use shotcast_core::metrics::model_selection_experiment;
use shotcast_core::synthetic::{
    anisotropic_pools, run_bias_experiment, run_lemma1_experiment, run_snr_sweep, run_variance_experiment, Lemma1Config,
    Predictor, SweepConfig,
};
use shotcast_core::{
    predict_accuracy, roc_curve, CovarianceChoice, CovarianceVariant, DbCalibration, DMatrix, Error, FewShotTask,
    MonteCarloConfig, PredictOptions,
};

use crate::benchmark::{calibrate_db, emit_benchmark, run_benchmark, BenchMethod, BenchmarkConfig, RocPoint, RocRow, Source, SyntheticSource, RECORD_COLUMNS};
use crate::episodes::DEFAULT_N_QUERY;
use crate::error::{CliError, Result};
use crate::output::Sink;
use crate::store::{load_features, FeatureFormat, FeatureStore};

#[derive(Debug, Parser)]
#[command(name = "shotcast", version, about = "Predict nearest-class-mean accuracy on few-shot tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict the accuracy of one task whose samples are all support samples.
    Predict(Common),
    /// Compare predictors on sampled episodes or synthetic tasks.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        bench: BenchArgs,
        /// Comma-separated subset of ours-unbiased, ours-biased, cv, db, oracle.
        #[arg(long, default_value = "ours-unbiased,ours-biased,cv")]
        methods: String,
        /// JSON calibration for the db method, as written by calibrate-db.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Synthetic tasks per shot count used to calibrate db when no file is given.
        #[arg(long, default_value_t = 200)]
        calibration_tasks: usize,
    },
    /// Fit the linear map from Davies-Bouldin score to accuracy.
    CalibrateDb {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        bench: BenchArgs,
    },
    /// Coverage of the binary confidence half-width and its 1/k trend.
    Lemma1 {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        linearity_tasks: usize,
    },
    /// Bias of the naive and corrected squared-distance estimators.
    Bias(Common),
    /// Variance of the naive and corrected squared-distance estimators.
    Variance(Common),
    /// MAPE of each predictor across an SNR grid.
    SnrSweep(Common),
    /// KL divergence of each covariance model against a large-sample fit.
    KlModels {
        #[command(flatten)]
        common: Common,
        /// Subsamples per reference task and shot count.
        #[arg(long, default_value_t = 10)]
        draws: usize,
        /// Samples per class of synthetic reference pools.
        #[arg(long, default_value_t = 200)]
        pool: usize,
    },
    /// ROC curves from a benchmark records.csv.
    Roc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        records: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Feature file; synthetic isotropic tasks are used when absent.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// csv or jsonl; guessed from the extension when absent.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub n_ways: Option<usize>,
    /// One value or a comma-separated grid.
    #[arg(long)]
    pub k_shots: Option<String>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// auto, identity, shared-iso, iso-per-class or full.
    #[arg(long, default_value = "auto")]
    pub cov_model: String,
    /// Monte-Carlo samples per class.
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub no_bias_correction: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 0.85)]
    pub threshold: f64,
    /// Output directory; tables go to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv, json or both.
    #[arg(long, default_value = "both")]
    pub emit: String,
    /// Worker threads; output does not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Dimension of synthetic features.
    #[arg(long)]
    pub dim: Option<usize>,
    /// SNR in dB of synthetic tasks; one value or a comma-separated grid.
    #[arg(long, allow_hyphen_values = true)]
    pub snr_db: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Query samples per class for ground truth on feature files.
    #[arg(long, default_value_t = DEFAULT_N_QUERY)]
    pub n_query: usize,
    /// Width of the uniform SNR range above --snr-db for synthetic tasks.
    #[arg(long, default_value_t = 0.0)]
    pub snr_spread: f64,
}

pub fn parse_grid<T: FromStr>(raw: &str, flag: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| CliError::Usage(format!("invalid value `{s}` for --{flag}"))))
        .collect()
}

pub fn parse_covariance(raw: &str) -> Result<CovarianceChoice> {
    if raw == "auto" {
        return Ok(CovarianceChoice::Auto);
    }
    CovarianceVariant::from_str(raw).map(CovarianceChoice::Fixed).map_err(|_| CliError::Usage(format!("unknown covariance model `{raw}`")))
}

impl Common {
    fn k_grid(&self, default: &[usize]) -> Result<Vec<usize>> {
        self.k_shots.as_deref().map_or(Ok(default.to_vec()), |s| parse_grid(s, "k-shots"))
    }

    fn snr_grid(&self, default: &[f64]) -> Result<Vec<f64>> {
        self.snr_db.as_deref().map_or(Ok(default.to_vec()), |s| parse_grid(s, "snr-db"))
    }

    fn sink(&self) -> Result<Sink> {
        Sink::new(self.out.clone(), self.emit.parse()?)
    }

    fn monte_carlo(&self) -> MonteCarloConfig {
        MonteCarloConfig {
            samples_per_class: self.mc_samples.unwrap_or(shotcast_core::montecarlo::DEFAULT_SAMPLES_PER_CLASS),
            seed: self.seed,
            parallel_streams: 0,
        }
    }

    fn store(&self) -> Result<Option<FeatureStore>> {
        let Some(path) = &self.features else { return Ok(None) };
        let format = match &self.format {
            Some(f) => f.parse()?,
            None => FeatureFormat::from_path(path)?,
        };
        load_features(path, format).map(Some)
    }

    fn source(&self, spread: f64) -> Result<Source> {
        Ok(match self.store()? {
            Some(s) => Source::Store(s),
            None => Source::Synthetic(SyntheticSource {
                dim: self.dim.unwrap_or(512),
                snr_db: self.snr_grid(&[0.0])?[0],
                snr_spread: spread,
                sigma: 1.0,
            }),
        })
    }

    fn bench_config(&self, bench: &BenchArgs) -> Result<BenchmarkConfig> {
        let d = BenchmarkConfig::default();
        Ok(BenchmarkConfig {
            n_ways: self.n_ways.unwrap_or(d.n_ways),
            k_grid: self.k_grid(&d.k_grid)?,
            tasks: self.tasks.unwrap_or(d.tasks),
            n_query: bench.n_query,
            seed: self.seed,
            covariance: parse_covariance(&self.cov_model)?,
            mc_samples: self.mc_samples.unwrap_or(d.mc_samples),
            alpha: self.alpha.unwrap_or(d.alpha),
            threshold: self.threshold,
            ..d
        })
    }
}

/// Runs a parsed command line inside a thread pool of the requested size.
pub fn run(cli: Cli) -> Result<()> {
    let workers = match &cli.command {
        Command::Predict(c) | Command::Bias(c) | Command::Variance(c) | Command::SnrSweep(c) => c.workers,
        Command::Benchmark { common, .. }
        | Command::CalibrateDb { common, .. }
        | Command::Lemma1 { common, .. }
        | Command::KlModels { common, .. }
        | Command::Roc { common, .. } => common.workers,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Predict(c) => predict(&c),
        Command::Benchmark { common, bench, methods, calibration, calibration_tasks } => {
            let mut cfg = common.bench_config(&bench)?;
            cfg.methods = parse_grid(&methods, "methods")?;
            cfg.calibration = calibration.as_deref().map(read_calibration).transpose()?;
            cfg.calibration_tasks = calibration_tasks;
            let result = run_benchmark(&common.source(bench.snr_spread)?, &cfg)?;
            emit_benchmark(&result, &common.sink()?)
        }
        Command::CalibrateDb { common, bench } => {
            let mut cfg = common.bench_config(&bench)?;
            cfg.tasks = common.tasks.unwrap_or(200);
            let cal = calibrate_db(&common.source(bench.snr_spread)?, &cfg)?;
            common.sink()?.document("calibration", &cal)
        }
        Command::Lemma1 { common, linearity_tasks } => lemma1(&common, linearity_tasks),
        Command::Bias(c) => bias(&c),
        Command::Variance(c) => variance(&c),
        Command::SnrSweep(c) => snr_sweep(&c),
        Command::KlModels { common, draws, pool } => kl_models(&common, draws, pool),
        Command::Roc { common, records } => roc(&common, &records),
    }
}

pub fn read_calibration(path: &Path) -> Result<DbCalibration> {
    let raw = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| CliError::Parse { line: e.line() as u64, message: e.to_string() })
}

#[derive(Serialize)]
struct PredictionRow {
    n_ways: usize,
    k_shots: usize,
    covariance: &'static str,
    method: shotcast_core::Method,
    p_error: f64,
    accuracy: f64,
    bound_half_width: Option<f64>,
    bias_corrected: bool,
    samples_per_class: Option<usize>,
    seed: Option<u64>,
}

fn predict(c: &Common) -> Result<()> {
    let store = c.store()?.ok_or_else(|| CliError::Usage("predict needs --features".into()))?;
    let task = FewShotTask::from_feature_sets(store.to_feature_set()?, None)?;
    let opts = PredictOptions {
        covariance: parse_covariance(&c.cov_model)?,
        bias_correction: !c.no_bias_correction,
        monte_carlo: c.monte_carlo(),
        alpha: c.alpha.unwrap_or(shotcast_core::analytic::DEFAULT_ALPHA),
        ..Default::default()
    };
    let p = predict_accuracy(&task, &opts)?;
    let e = p.estimate;
    let row = PredictionRow {
        n_ways: task.n_ways(),
        k_shots: task.k_shots(),
        covariance: p.variant.name(),
        method: e.method,
        p_error: e.p_error,
        accuracy: e.accuracy(),
        bound_half_width: e.bound_half_width,
        bias_corrected: e.bias_corrected,
        samples_per_class: e.samples_per_class,
        seed: e.seed,
    };
    c.sink()?.table("prediction", &[row])
}

#[derive(Serialize)]
struct CoverageOut {
    k: usize,
    alpha: f64,
    epsilon: f64,
    covered: usize,
    trials: usize,
    coverage: f64,
    binomial_se: f64,
}

fn lemma1(c: &Common, linearity_tasks: usize) -> Result<()> {
    let d = Lemma1Config::default();
    let cfg = Lemma1Config {
        coverage_k_grid: c.k_grid(&d.coverage_k_grid)?,
        alphas: c.alpha.map_or(d.alphas.clone(), |a| vec![a]),
        coverage_trials: c.tasks.unwrap_or(d.coverage_trials),
        linearity_trials: linearity_tasks,
        snr_db: c.snr_grid(&[d.snr_db])?[0],
        seed: c.seed,
        ..d
    };
    let report = run_lemma1_experiment(&cfg)?;
    let sink = c.sink()?;
    let coverage: Vec<CoverageOut> = report
        .coverage
        .iter()
        .map(|r| CoverageOut {
            k: r.k,
            alpha: r.alpha,
            epsilon: r.epsilon,
            covered: r.covered,
            trials: r.trials,
            coverage: r.coverage(),
            binomial_se: r.binomial_se(),
        })
        .collect();
    sink.table("coverage", &coverage)?;
    sink.table("linearity", &report.linearity)?;
    sink.table("linearity_fit", &[report.fit])
}

#[derive(Serialize)]
struct BiasOut {
    dim: usize,
    k: usize,
    snr_db: f64,
    true_squared_distance: f64,
    naive_bias: f64,
    naive_se: f64,
    unbiased_bias: f64,
    unbiased_se: f64,
    normalized_naive: f64,
    normalized_unbiased: f64,
    expected_naive_bias: f64,
}

fn bias(c: &Common) -> Result<()> {
    let cells = run_bias_experiment(
        c.dim.unwrap_or(512),
        &c.k_grid(&[5, 10, 20])?,
        &c.snr_grid(&[-5.0, 0.0, 5.0, 10.0])?,
        c.tasks.unwrap_or(10_000),
        c.seed,
    )?;
    let rows: Vec<BiasOut> = cells
        .iter()
        .map(|b| BiasOut {
            dim: b.dim,
            k: b.k,
            snr_db: b.snr_db,
            true_squared_distance: b.true_squared_distance,
            naive_bias: b.naive.mean,
            naive_se: b.naive.se,
            unbiased_bias: b.unbiased.mean,
            unbiased_se: b.unbiased.se,
            normalized_naive: b.normalized_naive(),
            normalized_unbiased: b.normalized_unbiased(),
            expected_naive_bias: b.expected_naive_bias,
        })
        .collect();
    c.sink()?.table("bias", &rows)
}

#[derive(Serialize)]
struct VarianceOut {
    dim: usize,
    k: usize,
    snr_db: f64,
    naive_variance: f64,
    naive_se: f64,
    unbiased_variance: f64,
    unbiased_se: f64,
    difference_se: f64,
}

fn variance(c: &Common) -> Result<()> {
    let k = c.k_grid(&[10])?[0];
    let cells = run_variance_experiment(
        c.dim.unwrap_or(512),
        k,
        &c.snr_grid(&[-5.0, -2.5, 0.0, 2.5, 5.0, 7.5, 10.0])?,
        c.tasks.unwrap_or(10_000),
        c.seed,
    )?;
    let rows: Vec<VarianceOut> = cells
        .iter()
        .map(|v| VarianceOut {
            dim: v.dim,
            k: v.k,
            snr_db: v.snr_db,
            naive_variance: v.naive.variance,
            naive_se: v.naive.se,
            unbiased_variance: v.unbiased.variance,
            unbiased_se: v.unbiased.se,
            difference_se: v.difference_se,
        })
        .collect();
    c.sink()?.table("variance", &rows)
}

#[derive(Serialize)]
struct SweepOut {
    snr_db: f64,
    predictor: &'static str,
    mape: f64,
    std_err: f64,
    tasks: usize,
}

fn snr_sweep(c: &Common) -> Result<()> {
    let d = SweepConfig::default();
    let covariance = match c.cov_model.as_str() {
        "auto" => d.covariance,
        other => parse_covariance(other)?,
    };
    let mut predictors = Predictor::ALL.to_vec();
    if c.no_bias_correction {
        predictors.retain(|&p| p != Predictor::OursUnbiased);
    }
    let cfg = SweepConfig {
        n_ways: c.n_ways.unwrap_or(d.n_ways),
        k_shots: c.k_grid(&[d.k_shots])?[0],
        dim: c.dim.unwrap_or(d.dim),
        snr_grid: c.snr_grid(&d.snr_grid)?,
        tasks: c.tasks.unwrap_or(d.tasks),
        seed: c.seed,
        predictors,
        covariance,
        monte_carlo: c.monte_carlo(),
    };
    let cells = run_snr_sweep(&cfg)?;
    let rows: Vec<SweepOut> = cells
        .iter()
        .flat_map(|cell| {
            cell.columns.iter().map(|(p, _)| {
                let s = cell.summary(*p).expect("column present");
                SweepOut { snr_db: cell.snr_db, predictor: p.name(), mape: s.mean, std_err: s.se, tasks: s.n }
            })
        })
        .collect();
    c.sink()?.table("snr_sweep", &rows)
}

#[derive(Serialize)]
struct KlOut {
    k: usize,
    covariance: &'static str,
    mean_kl: f64,
    std_err: f64,
    count: usize,
}

fn kl_models(c: &Common, draws: usize, pool: usize) -> Result<()> {
    let n = c.n_ways.unwrap_or(5);
    let count = c.tasks.unwrap_or(10);
    let tasks: Vec<Vec<DMatrix<f64>>> = match c.store()? {
        Some(store) => {
            if store.n_classes() < n {
                return Err(CliError::TooFewClasses { available: store.n_classes(), needed: n });
            }
            // consecutive class windows, wrapping around the sorted inventory
            (0..count).map(|t| (0..n).map(|j| store.pool((t * n + j) % store.n_classes()).clone()).collect()).collect()
        }
        None => {
            let dim = c.dim.unwrap_or(10);
            (0..count)
                .map(|t| anisotropic_pools(n, dim, pool, shotcast_core::seeding::derive_seed(c.seed, t as u64)))
                .collect::<std::result::Result<_, Error>>()?
        }
    };
    let rows = model_selection_experiment(&tasks, &c.k_grid(&[2, 5, 10, 20, 50])?, draws, c.seed)?;
    let out: Vec<KlOut> = rows
        .iter()
        .map(|r| KlOut { k: r.k, covariance: r.variant.name(), mean_kl: r.mean_kl, std_err: r.std_err, count: r.count })
        .collect();
    c.sink()?.table("kl_models", &out)
}

fn roc(c: &Common, records: &Path) -> Result<()> {
    let mut rdr = csv::Reader::from_path(records).map_err(|e| CliError::Usage(format!("{}: {e}", records.display())))?;
    let header = rdr.headers().map_err(|e| CliError::Parse { line: 1, message: e.to_string() })?.clone();
    if header.len() <= RECORD_COLUMNS.len() || header.iter().zip(RECORD_COLUMNS).any(|(a, b)| a != b) {
        return Err(CliError::Parse { line: 1, message: "not a benchmark records file".into() });
    }
    let methods: Vec<BenchMethod> = header.iter().skip(RECORD_COLUMNS.len()).map(str::parse).collect::<Result<_>>()?;
    // (k, truth, predictions) in file order
    let mut rows: Vec<(usize, f64, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Parse { line: e.position().map_or(0, |p| p.line()), message: e.to_string() })?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            rec.get(i).and_then(|v| v.parse().ok()).ok_or(CliError::Parse { line, message: format!("bad value in column {i}") })
        };
        let k = rec.get(2).and_then(|v| v.parse().ok()).ok_or(CliError::Parse { line, message: "bad k".into() })?;
        let preds = (RECORD_COLUMNS.len()..header.len()).map(num).collect::<Result<_>>()?;
        rows.push((k, num(5)?, preds));
    }
    let mut ks: Vec<usize> = rows.iter().map(|r| r.0).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut table = Vec::new();
    let mut points = Vec::new();
    for k in ks {
        let sel: Vec<&(usize, f64, Vec<f64>)> = rows.iter().filter(|r| r.0 == k).collect();
        let truths: Vec<f64> = sel.iter().map(|r| r.1).collect();
        for (mi, &method) in methods.iter().enumerate() {
            let scores: Vec<f64> = sel.iter().map(|r| r.2[mi]).collect();
            let curve = roc_curve(&scores, &truths, c.threshold)?;
            let positives = truths.iter().filter(|&&t| t >= c.threshold).count();
            table.push(RocRow { k, method, auc: curve.auc, positives, negatives: truths.len() - positives });
            points.extend(curve.points.iter().map(|&(fpr, tpr)| RocPoint { k, method, fpr, tpr }));
        }
    }
    let sink = c.sink()?;
    sink.table("roc", &table)?;
    sink.table("roc_points", &points)
}

/// Converts an error into the process exit status.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) => e.exit_code(),
    }
}

