//! Operational shell: TOML configuration, experiment orchestration,
//! metrics/summary CSVs, binary checkpoints, latent-graph export, and SVG
//! plot emission.

pub mod checkpoint;
pub mod config;
pub mod export;
pub mod metrics;
pub mod plot;
pub mod runner;

pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, CheckpointError};
pub use config::{parse_graph_spec, ConfigError, ExperimentConfig};
pub use export::{latent_graph_matrix, write_edge_list_csv, write_matrix_csv};
pub use metrics::{
    final_window_mean, write_metrics_csv, write_returns_csv, write_summary_csv, METRICS_HEADER,
};
pub use runner::{
    ablation_suite, export_graph_artifacts, run_experiment, AblationReport, AblationRow,
    ExperimentSummary, HarnessError,
};
