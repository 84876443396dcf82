//! Experiment orchestration: train per seed (in parallel when available),
//! persist raw CSVs and checkpoints per seed, aggregate mean/std return
//! curves into a deterministic summary, and drive the masking/feature
//! ablation suites.

use super::checkpoint::{save_checkpoint, CheckpointError};
use super::config::{ConfigError, ExperimentConfig};
use super::export::{latent_graph_matrix, write_edge_list_csv, write_matrix_csv};
use super::metrics::{
    final_window_mean, mean, std_dev, write_metrics_csv, write_returns_csv, write_summary_csv,
};
use super::plot::write_return_curves_svg;
use crate::mask::MaskFeatureConfig;
use crate::trainer::{MaskMode, Method, Trainer};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("all seeds failed; first error: {0}")]
    AllSeedsFailed(String),
}

pub struct SeedOutcome {
    pub seed: u64,
    /// Per-episode returns; None if this seed failed.
    pub returns: Option<Vec<f64>>,
    pub error: Option<String>,
}

pub struct ExperimentSummary {
    pub out_dir: PathBuf,
    pub per_seed: Vec<SeedOutcome>,
    /// Final-window mean return per successful seed.
    pub final_means: Vec<f64>,
}

fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<SeedOutcome, HarnessError> {
    let env_config = cfg.env_config()?;
    let mut trainer = Trainer::new(cfg.train_config(), env_config, seed);
    let every = cfg.experiment.checkpoint_every;
    let mut ckpt_err: Option<CheckpointError> = None;
    let mut updates = 0u64;
    let result = trainer.train_with(&mut |tr, _row| {
        updates += 1;
        if every > 0 && updates % every == 0 && ckpt_err.is_none() {
            let p = out_dir.join(format!("checkpoint_seed{seed}_update{updates}.ckpt"));
            if let Err(e) = save_checkpoint(&p, tr, cfg) {
                ckpt_err = Some(e);
            }
        }
    });
    if let Some(e) = ckpt_err {
        return Err(e.into());
    }
    match result {
        Ok(res) => {
            write_metrics_csv(&out_dir.join(format!("metrics_seed{seed}.csv")), &res.metrics)?;
            write_returns_csv(
                &out_dir.join(format!("returns_seed{seed}.csv")),
                &res.episode_returns,
            )?;
            save_checkpoint(&out_dir.join(format!("checkpoint_seed{seed}.ckpt")), &trainer, cfg)?;
            Ok(SeedOutcome { seed, returns: Some(res.episode_returns), error: None })
        }
        Err(e) => Ok(SeedOutcome { seed, returns: None, error: Some(e.to_string()) }),
    }
}

/// Train every seed of the config, writing per-seed raw artifacts plus a
/// deterministic cross-seed summary. Individual seed failures are recorded
/// in failures.csv and do not abort the experiment.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentSummary, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml())?;

    let seeds = cfg.experiment.seeds.clone();
    #[cfg(feature = "parallel")]
    let results: Vec<Result<SeedOutcome, HarnessError>> =
        seeds.par_iter().map(|&s| run_seed(cfg, s, out_dir)).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<SeedOutcome, HarnessError>> =
        seeds.iter().map(|&s| run_seed(cfg, s, out_dir)).collect();

    let mut per_seed = Vec::new();
    for r in results {
        per_seed.push(r?);
    }

    let curves: Vec<Vec<f64>> =
        per_seed.iter().filter_map(|o| o.returns.clone()).collect();
    if curves.is_empty() {
        let first = per_seed
            .iter()
            .find_map(|o| o.error.clone())
            .unwrap_or_else(|| "unknown".to_string());
        return Err(HarnessError::AllSeedsFailed(first));
    }
    write_summary_csv(&out_dir.join("summary.csv"), &curves)?;

    let failures: Vec<&SeedOutcome> =
        per_seed.iter().filter(|o| o.error.is_some()).collect();
    if !failures.is_empty() {
        let mut f = std::fs::File::create(out_dir.join("failures.csv"))?;
        writeln!(f, "seed,error")?;
        for o in failures {
            writeln!(f, "{},{}", o.seed, o.error.as_deref().unwrap_or(""))?;
        }
    }

    if cfg.experiment.emit_svg {
        let mean_curve: Vec<f64> = (0..curves[0].len())
            .map(|i| mean(&curves.iter().map(|c| c[i]).collect::<Vec<f64>>()))
            .collect();
        write_return_curves_svg(&out_dir.join("returns.svg"), &curves, &mean_curve)?;
    }

    let final_means = curves
        .iter()
        .map(|c| final_window_mean(c, cfg.experiment.final_window))
        .collect();
    Ok(ExperimentSummary { out_dir: out_dir.to_path_buf(), per_seed, final_means })
}

/// Train once on the first seed and export the aggregated latent graph.
pub fn export_graph_artifacts(
    trainer: &Trainer,
    probe_seed: u64,
    out_dir: &Path,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let n = trainer.env.node_count();
    let m = latent_graph_matrix(trainer, probe_seed);
    write_matrix_csv(&out_dir.join("latent_graph.csv"), n, &m)?;
    write_edge_list_csv(&out_dir.join("latent_edges.csv"), n, &m)?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: String,
    pub per_seed_final: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

pub struct AblationReport {
    pub masking: Vec<AblationRow>,
    pub features: Vec<AblationRow>,
}

fn ablation_row(
    cfg: &ExperimentConfig,
    label: &str,
    out_dir: &Path,
) -> Result<AblationRow, HarnessError> {
    let summary = run_experiment(cfg, &out_dir.join(label))?;
    Ok(AblationRow {
        label: label.to_string(),
        mean: mean(&summary.final_means),
        std: std_dev(&summary.final_means),
        per_seed_final: summary.final_means,
    })
}

fn write_table(path: &Path, rows: &[AblationRow]) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "label,mean_final_return,std_final_return")?;
    for r in rows {
        writeln!(f, "{},{},{}", r.label, r.mean, r.std)?;
    }
    Ok(())
}

/// The two ablation axes: masking strategy {learned, none, random} and
/// mask input features {state, trajectory, policy, all}, each over the
/// config's seed list. Returns per-seed finals for significance checks.
pub fn ablation_suite(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<AblationReport, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let mut base = cfg.clone();
    base.trainer.method = Method::BayesG;
    base.trainer.free_logit_init = None;

    let mut masking = Vec::new();
    for mode in [MaskMode::Learned, MaskMode::None, MaskMode::Random] {
        let mut c = base.clone();
        c.trainer.mask_mode = mode;
        masking.push(ablation_row(&c, &format!("masking_{}", mode.as_str()), out_dir)?);
    }

    let feature_sets = [
        ("features_state", MaskFeatureConfig::STATE),
        ("features_trajectory", MaskFeatureConfig::TRAJECTORY),
        ("features_policy", MaskFeatureConfig::POLICY),
        ("features_all", MaskFeatureConfig::ALL),
    ];
    let mut features = Vec::new();
    for (label, set) in feature_sets {
        let mut c = base.clone();
        c.trainer.mask_mode = MaskMode::Learned;
        c.trainer.mask_features = set.into();
        features.push(ablation_row(&c, label, out_dir)?);
    }

    write_table(&out_dir.join("ablation_masking.csv"), &masking)?;
    write_table(&out_dir.join("ablation_features.csv"), &features)?;
    Ok(AblationReport { masking, features })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(seeds: Vec<u64>) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.seeds = seeds;
        cfg.env.graph = "grid:2x2".to_string();
        cfg.env.episode_len = 20;
        cfg.trainer.episodes = 2;
        cfg.trainer.rollout_len = 8;
        cfg.trainer.embed_dim = 3;
        cfg.trainer.lstm_dim = 4;
        cfg
    }

    #[test]
    fn emits_per_seed_and_summary_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(vec![1, 2]);
        let summary = run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(summary.final_means.len(), 2);
        for s in [1u64, 2] {
            assert!(dir.path().join(format!("metrics_seed{s}.csv")).exists());
            assert!(dir.path().join(format!("returns_seed{s}.csv")).exists());
            assert!(dir.path().join(format!("checkpoint_seed{s}.ckpt")).exists());
        }
        assert!(dir.path().join("summary.csv").exists());
        assert!(dir.path().join("returns.svg").exists());
        assert!(dir.path().join("config.toml").exists());
        assert!(!dir.path().join("failures.csv").exists());
    }

    #[test]
    fn rerun_summary_is_byte_identical() {
        let cfg = tiny_config(vec![4, 5]);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        run_experiment(&cfg, d1.path()).unwrap();
        run_experiment(&cfg, d2.path()).unwrap();
        let a = std::fs::read(d1.path().join("summary.csv")).unwrap();
        let b = std::fs::read(d2.path().join("summary.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_seed_summary_equals_raw_returns() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(vec![3]);
        run_experiment(&cfg, dir.path()).unwrap();
        let raw = std::fs::read_to_string(dir.path().join("returns_seed3.csv")).unwrap();
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        let raw_vals: Vec<&str> =
            raw.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
        for (line, raw_v) in summary.lines().skip(1).zip(raw_vals) {
            let mut cols = line.split(',');
            cols.next();
            assert_eq!(cols.next().unwrap(), raw_v);
            assert_eq!(cols.next().unwrap(), "0");
        }
    }

    #[test]
    fn periodic_checkpoints_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(vec![1]);
        cfg.experiment.checkpoint_every = 2;
        run_experiment(&cfg, dir.path()).unwrap();
        assert!(dir.path().join("checkpoint_seed1_update2.ckpt").exists());
    }

    #[test]
    fn ablation_has_three_masking_and_four_feature_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(vec![1]);
        cfg.trainer.episodes = 1;
        let report = ablation_suite(&cfg, dir.path()).unwrap();
        assert_eq!(report.masking.len(), 3);
        assert_eq!(report.features.len(), 4);
        let labels: Vec<&str> = report.masking.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["masking_learned", "masking_none", "masking_random"]);
        assert!(dir.path().join("ablation_masking.csv").exists());
        assert!(dir.path().join("ablation_features.csv").exists());
    }
}
