//! Feature ingestion, episode sampling, benchmarks and the `shotcast`
//! command line.

pub mod app;
pub mod benchmark;
pub mod episodes;
pub mod error;
pub mod output;
pub mod store;

pub use benchmark::{run_benchmark, BenchMethod, BenchmarkConfig, BenchmarkResult, Source, SyntheticSource, TaskRecord};
pub use episodes::{sample_episodes, true_accuracy, Episode};
pub use error::{CliError, Result};
pub use store::{load_features, FeatureFormat, FeatureStore};
