//! Episode driver, metrics, baselines and run artifacts.

mod config;
mod episode;
mod export;
mod metrics;
mod training;

pub use config::RunConfig;
pub use episode::{
    decision_consistency, paired_traces, run_baseline, run_episode, state_hash, ActionTrace, Baseline, EpisodeConfig,
    EpisodeResult, ShadowPolicy, Timings, TraceEntry,
};
pub use export::{
    export_run, read_json, write_cycles_csv, write_json, write_solutions_csv, ExportPaths, RunMetadata,
};
pub use metrics::{archive_igd, feasible_nondominated, igd};
pub use training::ProblemRotation;
