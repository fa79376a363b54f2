//! Benchmark registry, configuration, artifact persistence and test suites.

pub mod artifact;
pub mod benchmarks;
pub mod config;
pub mod suite;

pub use artifact::{load_artifact, save_artifact};
pub use benchmarks::{
    make_family, make_problem, Discretization, ProblemId, QuadratureSpec, TrainingGrid,
};
pub use config::{load_spec, BenchmarkSpec, Config, Method};
pub use suite::{
    load_artifacts, oracle_suite, run_methods, run_offline, run_suite, solve_method, write_csv,
    MethodSummary, OfflineOutput, OracleCheck, RunDigest, RunSummary, TimingEntry,
};
