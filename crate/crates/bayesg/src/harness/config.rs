//! TOML experiment configuration. Sections mirror the modules they
//! configure; every field has a default, unknown keys are rejected, and
//! parse(serialize(c)) == c.

use crate::env::EnvConfig;
use crate::exec::ExecConfig;
use crate::graph::EnvGraph;
use crate::mask::{MaskFeatureConfig, PriorConfig};
use crate::trainer::{MaskMode, Method, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("io error reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub env: EnvSection,
    pub trainer: TrainerSection,
    pub prior: PriorSection,
    pub optim: OptimSection,
    pub exec: ExecSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Artifact directory; the BAYESG_OUT env var overrides it.
    pub out_dir: String,
    pub seeds: Vec<u64>,
    /// Save a checkpoint every N updates (0 = final checkpoint only).
    pub checkpoint_every: u64,
    /// Fraction of trailing episodes summarized as the "final" return.
    pub final_window: f64,
    /// Seed for evaluation rollouts and latent-graph probes.
    pub eval_seed: u64,
    pub emit_svg: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            out_dir: "runs".to_string(),
            seeds: vec![0],
            checkpoint_every: 0,
            final_window: 0.2,
            eval_seed: 10_000,
            emit_svg: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    /// `grid:RxC` or `file:<edge-list path>`.
    pub graph: String,
    pub phase_count: usize,
    pub saturation: u64,
    pub arrival_rate: f64,
    pub peak_amplitude: f64,
    pub episode_len: usize,
    pub reward_scale: f64,
    pub capacity: u64,
    /// Pin the routing layout across seeds; unset derives it per run seed.
    pub map_seed: Option<u64>,
}

impl Default for EnvSection {
    fn default() -> Self {
        // mirror EnvConfig::new defaults
        let d = EnvConfig::new(EnvGraph::grid(1, 1));
        Self {
            graph: "grid:3x3".to_string(),
            phase_count: d.phase_count,
            saturation: d.saturation,
            arrival_rate: d.arrival_rate,
            peak_amplitude: d.peak_amplitude,
            episode_len: d.episode_len,
            reward_scale: d.reward_scale,
            capacity: d.capacity,
            map_seed: d.map_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub entropy_sign: f64,
    pub rollout_len: usize,
    pub episodes: usize,
    pub lr_theta: f64,
    pub lr_omega: f64,
    pub lr_phi: f64,
    pub embed_dim: usize,
    pub lstm_dim: usize,
    pub method: Method,
    pub mask_mode: MaskMode,
    pub mask_features: MaskFeaturesSection,
    pub elbo_weight: f64,
    pub free_logit_init: Option<f64>,
    pub mask_loss_samples: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            gamma: d.gamma,
            alpha: d.alpha,
            beta: d.beta,
            entropy_sign: d.entropy_sign,
            rollout_len: d.rollout_len,
            episodes: d.episodes,
            lr_theta: d.lr_theta,
            lr_omega: d.lr_omega,
            lr_phi: d.lr_phi,
            embed_dim: d.embed_dim,
            lstm_dim: d.lstm_dim,
            method: d.method,
            mask_mode: d.mask_mode,
            mask_features: MaskFeaturesSection::default(),
            elbo_weight: d.elbo_weight,
            free_logit_init: d.free_logit_init,
            mask_loss_samples: d.mask_loss_samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskFeaturesSection {
    pub state: bool,
    pub policy: bool,
    pub trajectory: bool,
}

impl Default for MaskFeaturesSection {
    fn default() -> Self {
        Self { state: true, policy: true, trajectory: true }
    }
}

impl From<MaskFeaturesSection> for MaskFeatureConfig {
    fn from(s: MaskFeaturesSection) -> Self {
        Self { state: s.state, policy: s.policy, trajectory: s.trajectory }
    }
}

impl From<MaskFeatureConfig> for MaskFeaturesSection {
    fn from(s: MaskFeatureConfig) -> Self {
        Self { state: s.state, policy: s.policy, trajectory: s.trajectory }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    pub lambda: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub anneal_steps: u64,
}

impl Default for PriorSection {
    fn default() -> Self {
        let d = PriorConfig::default();
        Self {
            lambda: d.lambda,
            tau_start: d.tau_start,
            tau_end: d.tau_end,
            anneal_steps: d.anneal_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSection {
    pub kind: crate::diff::OptimKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
}

impl Default for OptimSection {
    fn default() -> Self {
        let d = crate::diff::OptimConfig::default();
        Self {
            kind: d.kind,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            clip_norm: d.clip_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecSection {
    pub delta_control: u64,
    pub delta_comm: u64,
    pub drop_prob: f64,
    pub delay_ticks: u64,
    pub mean_mask: bool,
    pub episodes: usize,
}

impl Default for ExecSection {
    fn default() -> Self {
        Self {
            delta_control: 1,
            delta_comm: 1,
            drop_prob: 0.0,
            delay_ticks: 0,
            mean_mask: false,
            episodes: 1,
        }
    }
}

/// Parse `grid:RxC` or `file:<edge-list>` into a graph.
pub fn parse_graph_spec(spec: &str) -> Result<EnvGraph, ConfigError> {
    if let Some(dims) = spec.strip_prefix("grid:") {
        let (r, c) = dims
            .split_once(['x', 'X'])
            .ok_or_else(|| ConfigError::Invalid(format!("bad grid spec '{spec}'")))?;
        let rows: usize =
            r.parse().map_err(|e| ConfigError::Invalid(format!("grid rows: {e}")))?;
        let cols: usize =
            c.parse().map_err(|e| ConfigError::Invalid(format!("grid cols: {e}")))?;
        if rows == 0 || cols == 0 {
            return Err(ConfigError::Invalid("grid dimensions must be positive".into()));
        }
        Ok(EnvGraph::grid(rows, cols))
    } else if let Some(path) = spec.strip_prefix("file:") {
        let text = std::fs::read_to_string(path)?;
        EnvGraph::parse(&text).map_err(|e| ConfigError::Invalid(format!("edge list: {e}")))
    } else {
        Err(ConfigError::Invalid(format!(
            "graph spec '{spec}' must start with 'grid:' or 'file:'"
        )))
    }
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.trainer;
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.experiment.seeds.is_empty() {
            return bad("experiment.seeds must be non-empty".into());
        }
        if !(self.experiment.final_window > 0.0 && self.experiment.final_window <= 1.0) {
            return bad(format!("final_window {} outside (0, 1]", self.experiment.final_window));
        }
        if !(t.gamma > 0.0 && t.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", t.gamma));
        }
        if !(0.0..=1.0).contains(&t.alpha) {
            return bad(format!("alpha {} outside [0, 1]", t.alpha));
        }
        if t.rollout_len == 0 || t.episodes == 0 {
            return bad("rollout_len and episodes must be positive".into());
        }
        if t.embed_dim == 0 || t.lstm_dim == 0 {
            return bad("embed_dim and lstm_dim must be positive".into());
        }
        if t.entropy_sign != 1.0 && t.entropy_sign != -1.0 {
            return bad(format!("entropy_sign {} must be 1 or -1", t.entropy_sign));
        }
        let f = &t.mask_features;
        if t.method == Method::BayesG
            && t.mask_mode == MaskMode::Learned
            && t.free_logit_init.is_none()
            && !(f.state || f.policy || f.trajectory)
        {
            return bad("learned network mask needs at least one feature group".into());
        }
        if !(self.prior.lambda > 0.0 && self.prior.lambda < 1.0) {
            return bad(format!("prior.lambda {} outside (0, 1)", self.prior.lambda));
        }
        if self.prior.tau_start <= 0.0 || self.prior.tau_end <= 0.0 {
            return bad("prior temperatures must be positive".into());
        }
        if self.env.phase_count < 2 {
            return bad("env.phase_count must be at least 2".into());
        }
        if self.env.episode_len == 0 {
            return bad("env.episode_len must be positive".into());
        }
        if self.env.arrival_rate < 0.0 {
            return bad(format!("env.arrival_rate {} negative", self.env.arrival_rate));
        }
        if self.exec.delta_comm == 0 || self.exec.delta_comm > self.exec.delta_control {
            return bad(format!(
                "exec.delta_comm {} must be in 1..={}",
                self.exec.delta_comm, self.exec.delta_control
            ));
        }
        if !(0.0..=1.0).contains(&self.exec.drop_prob) {
            return bad(format!("exec.drop_prob {} outside [0, 1]", self.exec.drop_prob));
        }
        // cheap graph spec sanity for grid specs; file specs are checked at use
        if !self.env.graph.starts_with("grid:") && !self.env.graph.starts_with("file:") {
            return bad(format!("env.graph '{}' must start with 'grid:' or 'file:'", self.env.graph));
        }
        Ok(())
    }

    pub fn env_config(&self) -> Result<EnvConfig, ConfigError> {
        Ok(self.env_config_with(parse_graph_spec(&self.env.graph)?))
    }

    /// Same dynamics parameters over an explicitly supplied graph (used
    /// when the graph was embedded in a checkpoint).
    pub fn env_config_with(&self, graph: EnvGraph) -> EnvConfig {
        let mut e = EnvConfig::new(graph);
        e.phase_count = self.env.phase_count;
        e.saturation = self.env.saturation;
        e.arrival_rate = self.env.arrival_rate;
        e.peak_amplitude = self.env.peak_amplitude;
        e.episode_len = self.env.episode_len;
        e.reward_scale = self.env.reward_scale;
        e.capacity = self.env.capacity;
        e.map_seed = self.env.map_seed;
        e
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.trainer;
        TrainConfig {
            gamma: t.gamma,
            alpha: t.alpha,
            beta: t.beta,
            entropy_sign: t.entropy_sign,
            rollout_len: t.rollout_len,
            episodes: t.episodes,
            lr_theta: t.lr_theta,
            lr_omega: t.lr_omega,
            lr_phi: t.lr_phi,
            embed_dim: t.embed_dim,
            lstm_dim: t.lstm_dim,
            method: t.method,
            mask_mode: t.mask_mode,
            mask_features: t.mask_features.clone().into(),
            prior: PriorConfig {
                lambda: self.prior.lambda,
                tau_start: self.prior.tau_start,
                tau_end: self.prior.tau_end,
                anneal_steps: self.prior.anneal_steps,
            },
            elbo_weight: t.elbo_weight,
            free_logit_init: t.free_logit_init,
            mask_loss_samples: t.mask_loss_samples,
            optim: crate::diff::OptimConfig {
                kind: self.optim.kind,
                beta1: self.optim.beta1,
                beta2: self.optim.beta2,
                epsilon: self.optim.epsilon,
                clip_norm: self.optim.clip_norm,
            },
        }
    }

    pub fn exec_config(&self) -> ExecConfig {
        ExecConfig {
            delta_control: self.exec.delta_control,
            delta_comm: self.exec.delta_comm,
            drop_prob: self.exec.drop_prob,
            delay_ticks: self.exec.delay_ticks,
            mean_mask: self.exec.mean_mask,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_documented_defaults() {
        let cfg = ExperimentConfig::parse_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.trainer.gamma, 0.99);
        assert_eq!(cfg.trainer.alpha, 0.9);
        assert_eq!(cfg.trainer.rollout_len, 40);
        assert_eq!(cfg.prior.lambda, 0.5);
        assert_eq!(cfg.env.graph, "grid:3x3");
    }

    #[test]
    fn round_trip_identity() {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.seeds = vec![3, 5, 8];
        cfg.trainer.method = Method::NeurComm;
        cfg.trainer.free_logit_init = Some(2.5);
        cfg.env.graph = "grid:5x5".to_string();
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::parse_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::parse_str("[trainer]\ngamm = 0.9\n").is_err());
        assert!(ExperimentConfig::parse_str("[bogus_section]\nx = 1\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        for text in [
            "[trainer]\ngamma = 0.0\n",
            "[trainer]\nalpha = 1.5\n",
            "[trainer]\nentropy_sign = 0.5\n",
            "[prior]\nlambda = 1.0\n",
            "[env]\ngraph = \"ring:5\"\n",
            "[exec]\ndelta_comm = 3\ndelta_control = 2\n",
            "[experiment]\nseeds = []\n",
        ] {
            assert!(ExperimentConfig::parse_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn grid_spec_parsing() {
        let g = parse_graph_spec("grid:2x3").unwrap();
        assert_eq!(g.node_count(), 6);
        assert!(parse_graph_spec("grid:0x3").is_err());
        assert!(parse_graph_spec("grid:abc").is_err());
        assert!(parse_graph_spec("file:/nonexistent/x.txt").is_err());
    }

    #[test]
    fn file_spec_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("edges.txt");
        std::fs::write(&p, "nodes 3\n0 1\n1 2\n").unwrap();
        let g = parse_graph_spec(&format!("file:{}", p.display())).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edges().len(), 2);
    }

    #[test]
    fn conversions_carry_fields() {
        let cfg = ExperimentConfig::parse_str(
            "[trainer]\nmethod = \"commnet\"\nmask_mode = \"random\"\n[env]\nepisode_len = 77\n",
        )
        .unwrap();
        let tc = cfg.train_config();
        assert_eq!(tc.method, Method::CommNet);
        assert_eq!(tc.mask_mode, MaskMode::Random);
        let ec = cfg.env_config().unwrap();
        assert_eq!(ec.episode_len, 77);
        assert_eq!(ec.graph.node_count(), 9);
    }
}
