//! End-to-end training: rollout collection with per-step mask sampling,
//! spatially discounted returns and advantages, the graph-based actor loss
//! with ELBO regularization, critic regression, and per-agent updates every
//! |B| steps. Baselines (IA2C, CommNet, NeurComm) share the loop with the
//! encoder swapped. Per-agent work is data-parallel behind the `parallel`
//! feature; results are identical under any worker count because every
//! agent owns its random streams and parameters.

use crate::diff::{Gradients, OptimConfig, OptimError, Optimizer, Tape, Tensor, Var};
use crate::env::{EnvConfig, EnvError, QueueEnv};
use crate::graph::EgoGraph;
use crate::mask::{
    effective_subgraph, effective_subgraph_on_tape, elbo_regularizer_on_tape, logistic_noise,
    mask_entropy, prior_log_prob_expectation, relaxed_mask_on_tape, EdgeLogitNet,
    MaskFeatureConfig, PriorConfig,
};
use crate::nn::{
    actor_distribution, bayesg_encode, commnet_encode, critic_value, ia2c_encode, lstm_step,
    neurcomm_encode, Linear, LstmCell,
};
use crate::rng::{derive, mix, Stream};
use crate::rollout::{advantages, spatially_discounted_returns};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("non-finite loss at episode {episode}, update {update}, agent {agent}: {detail}")]
    NonFinite { episode: usize, update: u64, agent: usize, detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    BayesG,
    Ia2c,
    CommNet,
    NeurComm,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::BayesG => "bayesg",
            Method::Ia2c => "ia2c",
            Method::CommNet => "commnet",
            Method::NeurComm => "neurcomm",
        }
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bayesg" => Ok(Method::BayesG),
            "ia2c" => Ok(Method::Ia2c),
            "commnet" => Ok(Method::CommNet),
            "neurcomm" => Ok(Method::NeurComm),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Learned,
    None,
    Random,
}

impl MaskMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MaskMode::Learned => "learned",
            MaskMode::None => "none",
            MaskMode::Random => "random",
        }
    }
}

impl FromStr for MaskMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "learned" => Ok(MaskMode::Learned),
            "none" => Ok(MaskMode::None),
            "random" => Ok(MaskMode::Random),
            other => Err(format!("unknown mask mode '{other}'")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Spatial discount applied to neighbor rewards.
    pub alpha: f64,
    /// Entropy coefficient beta.
    pub beta: f64,
    /// +1.0 adds beta * H(pi) to the minimized loss (the objective as
    /// defined); -1.0 flips to the conventional exploration bonus.
    pub entropy_sign: f64,
    /// Rollout/minibatch length |B|.
    pub rollout_len: usize,
    pub episodes: usize,
    pub lr_theta: f64,
    pub lr_omega: f64,
    pub lr_phi: f64,
    pub embed_dim: usize,
    pub lstm_dim: usize,
    pub method: Method,
    pub mask_mode: MaskMode,
    pub mask_features: MaskFeatureConfig,
    pub prior: PriorConfig,
    pub elbo_weight: f64,
    /// When set, edge logits are free per-edge parameters initialized to
    /// this value instead of the feature-conditioned edge-logit network.
    pub free_logit_init: Option<f64>,
    /// Extra relaxed mask samples averaged into the actor loss (1 = the
    /// single recorded sample, as in the training loop as written).
    pub mask_loss_samples: usize,
    pub optim: OptimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 0.9,
            beta: 0.01,
            entropy_sign: 1.0,
            rollout_len: 40,
            episodes: 100,
            lr_theta: 5e-4,
            lr_omega: 2.5e-4,
            lr_phi: 5e-4,
            embed_dim: 32,
            lstm_dim: 64,
            method: Method::BayesG,
            mask_mode: MaskMode::Learned,
            mask_features: MaskFeatureConfig::ALL,
            prior: PriorConfig::default(),
            elbo_weight: 1.0,
            free_logit_init: None,
            mask_loss_samples: 1,
            optim: OptimConfig::default(),
        }
    }
}

/// Channel encoders. IA2C applies the same three per-channel maps as
/// BayesG but to the agent's own rows only, so a neighborless BayesG agent
/// and an IA2C agent coincide exactly.
#[derive(Clone, Debug)]
pub enum EncoderParams {
    BayesG { obs: Linear, pol: Linear, traj: Linear },
    Ia2c { obs: Linear, pol: Linear, traj: Linear },
    CommNet { state: Linear, traj: Linear },
    NeurComm { state: Linear, pol: Linear, traj: Linear },
}

#[derive(Clone, Debug)]
pub enum MaskParams {
    /// Direct per-edge logits [1, m].
    Free(Tensor),
    /// Feature-conditioned edge-logit network psi.
    Network(EdgeLogitNet),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Theta,
    Omega,
    Phi,
}

#[derive(Clone, Debug)]
pub struct AgentParams {
    pub encoder: EncoderParams,
    pub lstm: LstmCell,
    pub actor: Linear,
    pub critic: Linear,
    pub mask: Option<MaskParams>,
}

/// Static per-agent layout shared by trainer, executor, and checkpoints.
#[derive(Clone, Copy, Debug)]
pub struct AgentDims {
    pub obs: usize,
    pub fingerprint: usize,
    pub embed: usize,
    pub lstm: usize,
    pub actions: usize,
    pub degree: usize,
}

impl AgentDims {
    pub fn enc_width(&self, method: Method) -> usize {
        match method {
            Method::BayesG | Method::Ia2c | Method::NeurComm => 3 * self.embed,
            Method::CommNet => self.embed,
        }
    }

    pub fn critic_extra(&self, method: Method) -> usize {
        match method {
            Method::Ia2c => 0,
            _ => self.degree * self.fingerprint,
        }
    }
}

pub fn mask_feat_dim(features: MaskFeatureConfig, dims: &AgentDims) -> usize {
    let mut d = 0;
    if features.state {
        d += 2 * dims.obs;
    }
    if features.policy {
        d += 2 * dims.fingerprint;
    }
    if features.trajectory {
        d += 2 * dims.lstm;
    }
    d
}

impl AgentParams {
    /// Component-tagged init streams: each submodule draws from its own
    /// stream so methods sharing a submodule initialize it identically.
    pub fn init(cfg: &TrainConfig, dims: &AgentDims, agent: usize, seed: u64) -> Self {
        let comp = |c: u64| derive(seed, Stream::ParamInit, (agent as u64) * 8 + c);
        let n = dims.degree + 1;
        let encoder = match cfg.method {
            Method::BayesG => EncoderParams::BayesG {
                obs: Linear::new(dims.obs, dims.embed, &mut comp(0)),
                pol: Linear::new(dims.fingerprint, dims.embed, &mut comp(1)),
                traj: Linear::new(dims.lstm, dims.embed, &mut comp(2)),
            },
            Method::Ia2c => EncoderParams::Ia2c {
                obs: Linear::new(dims.obs, dims.embed, &mut comp(0)),
                pol: Linear::new(dims.fingerprint, dims.embed, &mut comp(1)),
                traj: Linear::new(dims.lstm, dims.embed, &mut comp(2)),
            },
            Method::CommNet => EncoderParams::CommNet {
                state: Linear::new(n * dims.obs, dims.embed, &mut comp(0)),
                traj: Linear::new(dims.lstm, dims.embed, &mut comp(2)),
            },
            Method::NeurComm => EncoderParams::NeurComm {
                state: Linear::new(n * dims.obs, dims.embed, &mut comp(0)),
                pol: Linear::new(
                    if dims.degree > 0 { dims.degree * dims.fingerprint } else { 1 },
                    dims.embed,
                    &mut comp(1),
                ),
                traj: Linear::new(
                    if dims.degree > 0 { dims.degree * dims.lstm } else { 1 },
                    dims.embed,
                    &mut comp(2),
                ),
            },
        };
        let enc_width = dims.enc_width(cfg.method);
        let lstm = LstmCell::new(enc_width, dims.lstm, &mut comp(3));
        let actor = Linear::new(dims.lstm, dims.actions, &mut comp(4));
        let critic = Linear::new(dims.lstm + dims.critic_extra(cfg.method), 1, &mut comp(5));
        let mask = if cfg.method == Method::BayesG
            && cfg.mask_mode == MaskMode::Learned
            && dims.degree > 0
        {
            Some(match cfg.free_logit_init {
                Some(v) => {
                    MaskParams::Free(Tensor::matrix(1, dims.degree, vec![v; dims.degree]))
                }
                None => MaskParams::Network(EdgeLogitNet::new(
                    mask_feat_dim(cfg.mask_features, dims),
                    0.1,
                    &mut comp(6),
                )),
            })
        } else {
            None
        };
        Self { encoder, lstm, actor, critic, mask }
    }

    /// Canonical flat order: theta tensors, then omega, then phi.
    pub fn flat(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        match &self.encoder {
            EncoderParams::BayesG { obs, pol, traj }
            | EncoderParams::Ia2c { obs, pol, traj } => {
                for l in [obs, pol, traj] {
                    out.push(&l.weight);
                    out.push(&l.bias);
                }
            }
            EncoderParams::CommNet { state, traj } => {
                for l in [state, traj] {
                    out.push(&l.weight);
                    out.push(&l.bias);
                }
            }
            EncoderParams::NeurComm { state, pol, traj } => {
                for l in [state, pol, traj] {
                    out.push(&l.weight);
                    out.push(&l.bias);
                }
            }
        }
        out.push(&self.lstm.weight);
        out.push(&self.lstm.bias);
        out.push(&self.actor.weight);
        out.push(&self.actor.bias);
        out.push(&self.critic.weight);
        out.push(&self.critic.bias);
        match &self.mask {
            Some(MaskParams::Free(t)) => out.push(t),
            Some(MaskParams::Network(net)) => {
                out.push(&net.weight);
                out.push(&net.bias);
            }
            None => {}
        }
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        match &mut self.encoder {
            EncoderParams::BayesG { obs, pol, traj }
            | EncoderParams::Ia2c { obs, pol, traj } => {
                for l in [obs, pol, traj] {
                    out.push(&mut l.weight);
                    out.push(&mut l.bias);
                }
            }
            EncoderParams::CommNet { state, traj } => {
                for l in [state, traj] {
                    out.push(&mut l.weight);
                    out.push(&mut l.bias);
                }
            }
            EncoderParams::NeurComm { state, pol, traj } => {
                for l in [state, pol, traj] {
                    out.push(&mut l.weight);
                    out.push(&mut l.bias);
                }
            }
        }
        out.push(&mut self.lstm.weight);
        out.push(&mut self.lstm.bias);
        out.push(&mut self.actor.weight);
        out.push(&mut self.actor.bias);
        out.push(&mut self.critic.weight);
        out.push(&mut self.critic.bias);
        match &mut self.mask {
            Some(MaskParams::Free(t)) => out.push(t),
            Some(MaskParams::Network(net)) => {
                out.push(&mut net.weight);
                out.push(&mut net.bias);
            }
            None => {}
        }
        out
    }

    fn enc_linear_count(&self) -> usize {
        match &self.encoder {
            EncoderParams::CommNet { .. } => 2,
            _ => 3,
        }
    }

    pub fn names(&self) -> Vec<String> {
        let enc: &[&str] = match &self.encoder {
            EncoderParams::CommNet { .. } => &["enc_state", "enc_traj"],
            EncoderParams::NeurComm { .. } => &["enc_state", "enc_pol", "enc_traj"],
            _ => &["enc_obs", "enc_pol", "enc_traj"],
        };
        let mut names: Vec<String> = Vec::new();
        for e in enc {
            names.push(format!("{e}.w"));
            names.push(format!("{e}.b"));
        }
        for p in ["lstm.w", "lstm.b", "actor.w", "actor.b", "critic.w", "critic.b"] {
            names.push(p.to_string());
        }
        match &self.mask {
            Some(MaskParams::Free(_)) => names.push("mask.logits".to_string()),
            Some(MaskParams::Network(_)) => {
                names.push("mask.w".to_string());
                names.push("mask.b".to_string());
            }
            None => {}
        }
        names
    }

    /// Family of each tensor in `flat()` order.
    pub fn families(&self) -> Vec<Family> {
        let enc_n = self.enc_linear_count();
        let mut f = vec![Family::Theta; 2 * enc_n + 4]; // encoders + lstm + actor
        f.push(Family::Omega);
        f.push(Family::Omega);
        match &self.mask {
            Some(MaskParams::Free(_)) => f.push(Family::Phi),
            Some(MaskParams::Network(_)) => {
                f.push(Family::Phi);
                f.push(Family::Phi);
            }
            None => {}
        }
        f
    }
}

/// Tape variables mirroring `AgentParams::flat()` order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub vars: Vec<Var>,
    enc_n: usize,
    has_network_mask: bool,
    has_free_mask: bool,
}

impl ParamVars {
    pub fn leaf(tape: &mut Tape, p: &AgentParams) -> Self {
        let vars = p.flat().into_iter().map(|t| tape.leaf(t.clone())).collect();
        Self::from_vars(p, vars)
    }

    pub fn from_vars(p: &AgentParams, vars: Vec<Var>) -> Self {
        Self {
            vars,
            enc_n: p.enc_linear_count(),
            has_network_mask: matches!(p.mask, Some(MaskParams::Network(_))),
            has_free_mask: matches!(p.mask, Some(MaskParams::Free(_))),
        }
    }

    fn enc(&self, i: usize) -> (Var, Var) {
        (self.vars[2 * i], self.vars[2 * i + 1])
    }

    fn lstm(&self) -> (Var, Var) {
        (self.vars[2 * self.enc_n], self.vars[2 * self.enc_n + 1])
    }

    fn actor(&self) -> (Var, Var) {
        (self.vars[2 * self.enc_n + 2], self.vars[2 * self.enc_n + 3])
    }

    fn critic(&self) -> (Var, Var) {
        (self.vars[2 * self.enc_n + 4], self.vars[2 * self.enc_n + 5])
    }

    fn mask_free(&self) -> Option<Var> {
        self.has_free_mask.then(|| self.vars[2 * self.enc_n + 6])
    }

    fn mask_net(&self) -> Option<(Var, Var)> {
        self.has_network_mask
            .then(|| (self.vars[2 * self.enc_n + 6], self.vars[2 * self.enc_n + 7]))
    }
}

/// Local recurrent state carried across steps and reset per episode.
#[derive(Clone, Debug)]
pub struct AgentState {
    pub h: Tensor,
    pub c: Tensor,
    pub fingerprint: Vec<f64>,
}

impl AgentState {
    pub fn zero(lstm_dim: usize, actions: usize) -> Self {
        Self {
            h: Tensor::matrix(1, lstm_dim, vec![0.0; lstm_dim]),
            c: Tensor::matrix(1, lstm_dim, vec![0.0; lstm_dim]),
            fingerprint: vec![0.0; actions],
        }
    }
}

/// What an agent knows about its neighbors when deciding: current
/// observations, previous fingerprints, previous trajectory states, in
/// ascending neighbor order. The executor fills these from message caches.
#[derive(Clone, Debug)]
pub struct NeighborView {
    pub obs: Vec<Vec<f64>>,
    pub fp: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub states: Tensor,
    pub fingerprints: Tensor,
    pub trajectories: Tensor,
    pub mask_feats: Option<Tensor>,
    pub mask_noise: Vec<f64>,
    pub mask_values: Vec<f64>,
    pub tau: f64,
    pub h_in: Tensor,
    pub c_in: Tensor,
    pub action: usize,
    pub neighbor_onehot: Option<Tensor>,
    pub value: f64,
    pub log_prob: f64,
}

pub struct Decision {
    pub action: usize,
    pub pi: Vec<f64>,
    pub new_h: Tensor,
    pub new_c: Tensor,
    pub record: StepRecord,
}

fn channel_matrix(own: &[f64], nbrs: &[Vec<f64>], width: usize) -> Tensor {
    let mut data = Vec::with_capacity((1 + nbrs.len()) * width);
    data.extend_from_slice(own);
    for r in nbrs {
        debug_assert_eq!(r.len(), width);
        data.extend_from_slice(r);
    }
    Tensor::matrix(1 + nbrs.len(), width, data)
}

pub(crate) fn build_mask_feats(
    features: MaskFeatureConfig,
    own_obs: &[f64],
    own_fp: &[f64],
    own_h: &[f64],
    view: &NeighborView,
) -> Tensor {
    let m = view.obs.len();
    let mut rows: Vec<f64> = Vec::new();
    for j in 0..m {
        if features.state {
            rows.extend_from_slice(own_obs);
            rows.extend_from_slice(&view.obs[j]);
        }
        if features.policy {
            rows.extend_from_slice(own_fp);
            rows.extend_from_slice(&view.fp[j]);
        }
        if features.trajectory {
            rows.extend_from_slice(own_h);
            rows.extend_from_slice(&view.h[j]);
        }
    }
    let d = rows.len() / m;
    Tensor::matrix(m, d, rows)
}

fn encode_on_tape(
    tape: &mut Tape,
    method: Method,
    pv: &ParamVars,
    s: Var,
    p: Var,
    h: Var,
    a_eff: Option<Var>,
) -> Var {
    match method {
        Method::BayesG => {
            let (ow, ob) = pv.enc(0);
            let (pw, pb) = pv.enc(1);
            let (tw, tb) = pv.enc(2);
            bayesg_encode(tape, (s, p, h), a_eff.expect("bayesg needs A_eff"), ow, ob, pw, pb, tw, tb)
        }
        Method::Ia2c => {
            let (ow, ob) = pv.enc(0);
            let (pw, pb) = pv.enc(1);
            let (tw, tb) = pv.enc(2);
            let es = ia2c_encode(tape, s, ow, ob);
            let ep = ia2c_encode(tape, p, pw, pb);
            let eh = ia2c_encode(tape, h, tw, tb);
            tape.concat_cols(&[es, ep, eh])
        }
        Method::CommNet => {
            let (sw, sb) = pv.enc(0);
            let (tw, tb) = pv.enc(1);
            commnet_encode(tape, s, h, sw, sb, tw, tb)
        }
        Method::NeurComm => {
            let (sw, sb) = pv.enc(0);
            let (pw, pb) = pv.enc(1);
            let (tw, tb) = pv.enc(2);
            neurcomm_encode(tape, s, p, h, sw, sb, pw, pb, tw, tb)
        }
    }
}

/// Mask the communication structure, encode, advance the LSTM, and sample
/// an action — the per-agent decision shared verbatim by training rollout,
/// evaluation rollout, and decentralized execution.
#[allow(clippy::too_many_arguments)]
pub fn decide(
    params: &AgentParams,
    state: &AgentState,
    ego: &EgoGraph,
    dims: &AgentDims,
    method: Method,
    mask_mode: MaskMode,
    features: MaskFeatureConfig,
    own_obs: &[f64],
    view: &NeighborView,
    tau: f64,
    hard: bool,
    // mean_mask: threshold the posterior mean (phi > 0) instead of drawing
    // a per-step sample; only meaningful with `hard`, skips the noise draw
    mean_mask: bool,
    rng_mask: &mut ChaCha8Rng,
    rng_random: &mut ChaCha8Rng,
    rng_action: &mut ChaCha8Rng,
) -> Decision {
    let m = ego.neighbor_count();
    let states = channel_matrix(own_obs, &view.obs, dims.obs);
    let fingerprints = channel_matrix(&state.fingerprint, &view.fp, dims.fingerprint);
    let trajectories = channel_matrix(state.h.data(), &view.h, dims.lstm);

    let mut tape = Tape::new();

    // mask sampling (BayesG only; baselines communicate unmasked)
    let mut mask_noise = Vec::new();
    let mut mask_feats = None;
    let mask_values: Vec<f64> = if method != Method::BayesG || m == 0 {
        vec![1.0; m]
    } else {
        match mask_mode {
            MaskMode::None => vec![1.0; m],
            MaskMode::Random => (0..m).map(|_| f64::from(rng_random.gen_bool(0.5))).collect(),
            MaskMode::Learned => {
                let phi = match params.mask.as_ref().expect("learned mode has mask params") {
                    MaskParams::Free(t) => tape.constant(t.clone()),
                    MaskParams::Network(net) => {
                        let feats = build_mask_feats(
                            features,
                            own_obs,
                            &state.fingerprint,
                            state.h.data(),
                            view,
                        );
                        let fv = tape.constant(feats.clone());
                        mask_feats = Some(feats);
                        let w = tape.constant(net.weight.clone());
                        let b = tape.constant(net.bias.clone());
                        EdgeLogitNet::logits_on_tape(&mut tape, w, b, fv)
                    }
                };
                if mean_mask {
                    let vals = tape.value(phi).data().to_vec();
                    vals.iter().map(|&v| f64::from(v > 0.0)).collect()
                } else {
                    mask_noise = logistic_noise(rng_mask, m);
                    let z = relaxed_mask_on_tape(&mut tape, phi, &mask_noise, tau);
                    let relaxed = tape.value(z).data().to_vec();
                    if hard {
                        relaxed.iter().map(|&v| f64::from(v > 0.5)).collect()
                    } else {
                        relaxed
                    }
                }
            }
        }
    };

    let s = tape.constant(states.clone());
    let p = tape.constant(fingerprints.clone());
    let hc = tape.constant(trajectories.clone());
    let a_eff = (method == Method::BayesG).then(|| {
        let a = effective_subgraph(&mask_values, ego);
        tape.constant(Tensor::matrix(ego.size(), ego.size(), a))
    });
    let pv = {
        let vars = params.flat().into_iter().map(|t| tape.constant(t.clone())).collect();
        ParamVars::from_vars(params, vars)
    };
    let enc = encode_on_tape(&mut tape, method, &pv, s, p, hc, a_eff);
    let h_in = tape.constant(state.h.clone());
    let c_in = tape.constant(state.c.clone());
    let (lw, lb) = pv.lstm();
    let (h_new, c_new) = lstm_step(&mut tape, h_in, c_in, enc, lw, lb, dims.lstm);
    let (aw, ab) = pv.actor();
    let pi_var = actor_distribution(&mut tape, h_new, aw, ab);
    let pi = tape.value(pi_var).data().to_vec();

    let draw: f64 = rng_action.gen();
    let mut acc = 0.0;
    let mut action = pi.len() - 1;
    for (k, &pk) in pi.iter().enumerate() {
        acc += pk;
        if draw < acc {
            action = k;
            break;
        }
    }
    let log_prob = pi[action].ln().max(-30.0);

    Decision {
        action,
        pi: pi.clone(),
        new_h: tape.value(h_new).clone(),
        new_c: tape.value(c_new).clone(),
        record: StepRecord {
            states,
            fingerprints,
            trajectories,
            mask_feats,
            mask_noise,
            mask_values,
            tau,
            h_in: state.h.clone(),
            c_in: state.c.clone(),
            action,
            neighbor_onehot: None,
            value: 0.0,
            log_prob,
        },
    }
}

fn onehot_actions(actions: &[usize], width: usize) -> Tensor {
    let mut data = vec![0.0; actions.len() * width];
    for (k, &a) in actions.iter().enumerate() {
        data[k * width + a] = 1.0;
    }
    Tensor::matrix(1, actions.len() * width, data)
}

/// Rollout-time value V(h, u_N) under the current critic.
pub fn compute_value(
    params: &AgentParams,
    method: Method,
    dims: &AgentDims,
    h: &Tensor,
    neighbor_actions: &[usize],
) -> (f64, Option<Tensor>) {
    let onehot = (dims.critic_extra(method) > 0)
        .then(|| onehot_actions(neighbor_actions, dims.fingerprint));
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let w = tape.constant(params.critic.weight.clone());
    let b = tape.constant(params.critic.bias.clone());
    let v = match &onehot {
        Some(o) => {
            let ov = tape.constant(o.clone());
            critic_value(&mut tape, hv, ov, w, b)
        }
        None => {
            let lin = tape.linear(hv, w, b);
            tape.reshape(lin, vec![])
        }
    };
    (tape.value(v).item(), onehot)
}

#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    pub beta: f64,
    pub entropy_sign: f64,
    pub elbo_weight: f64,
    pub lambda: f64,
    pub mask_loss_samples: usize,
}

impl LossConfig {
    pub fn from_train(cfg: &TrainConfig) -> Self {
        Self {
            beta: cfg.beta,
            entropy_sign: cfg.entropy_sign,
            elbo_weight: cfg.elbo_weight,
            lambda: cfg.prior.lambda,
            mask_loss_samples: cfg.mask_loss_samples.max(1),
        }
    }
}

pub struct LossVars {
    pub policy: Var,
    pub value: Var,
    pub elbo: Var,
    pub total: Var,
    pub prior_loss: f64,
    pub mask_entropy: f64,
    pub clamped: usize,
    /// Replayed log-probabilities of the recorded actions, for on-policy
    /// consistency checks.
    pub log_probs: Vec<f64>,
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t);
    }
    tape.scale(acc, 1.0 / terms.len() as f64)
}

/// Replay a recorded batch under the leafed parameters and assemble every
/// loss component on one tape. The per-step LSTM input state is the
/// recorded snapshot (per-step gradients; the recurrence itself is not
/// unrolled across the batch). The critic branch consumes a detached copy
/// of the hidden state, so its gradient reaches only the critic head; the
/// actor/ELBO branches never touch the critic parameters.
#[allow(clippy::too_many_arguments)]
pub fn agent_loss_on_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    method: Method,
    mask_mode: MaskMode,
    ego: &EgoGraph,
    dims: &AgentDims,
    batch: &[StepRecord],
    returns: &[f64],
    advs: &[f64],
    lcfg: &LossConfig,
    extra_noise_rng: Option<&mut ChaCha8Rng>,
) -> LossVars {
    assert!(!batch.is_empty());
    assert_eq!(batch.len(), returns.len());
    let learned = method == Method::BayesG
        && mask_mode == MaskMode::Learned
        && ego.neighbor_count() > 0;

    let mut extra_rng = extra_noise_rng;
    let mut policy_terms = Vec::with_capacity(batch.len());
    let mut value_terms = Vec::with_capacity(batch.len());
    let mut reg_terms = Vec::with_capacity(batch.len());
    let mut prior_sum = 0.0;
    let mut entropy_sum = 0.0;
    let mut clamped = 0;
    let mut log_probs = Vec::with_capacity(batch.len());

    for (rec, (&ret, &adv)) in batch.iter().zip(returns.iter().zip(advs)) {
        let s = tape.constant(rec.states.clone());
        let p = tape.constant(rec.fingerprints.clone());
        let hc = tape.constant(rec.trajectories.clone());

        let phi = if learned {
            Some(match (pv.mask_free(), pv.mask_net()) {
                (Some(f), _) => f,
                (_, Some((w, b))) => {
                    let feats = tape
                        .constant(rec.mask_feats.as_ref().expect("network mask features").clone());
                    EdgeLogitNet::logits_on_tape(tape, w, b, feats)
                }
                _ => unreachable!("learned mode without mask vars"),
            })
        } else {
            None
        };

        // one replayed sample from the recorded noise, plus optional fresh
        // samples averaged into the policy term
        let n_samples = if learned { lcfg.mask_loss_samples } else { 1 };
        let mut sample_terms = Vec::with_capacity(n_samples);
        let mut first_log_prob = 0.0;
        for sample in 0..n_samples {
            let a_eff = match (learned, method) {
                (true, _) => {
                    let noise: Vec<f64> = if sample == 0 {
                        rec.mask_noise.clone()
                    } else {
                        logistic_noise(
                            extra_rng.as_mut().expect("extra samples need an rng"),
                            ego.neighbor_count(),
                        )
                    };
                    let z = relaxed_mask_on_tape(tape, phi.unwrap(), &noise, rec.tau);
                    Some(effective_subgraph_on_tape(tape, z, ego))
                }
                (false, Method::BayesG) => {
                    let a = effective_subgraph(&rec.mask_values, ego);
                    Some(tape.constant(Tensor::matrix(ego.size(), ego.size(), a)))
                }
                _ => None,
            };
            let enc = encode_on_tape(tape, method, pv, s, p, hc, a_eff);
            let h_in = tape.constant(rec.h_in.clone());
            let c_in = tape.constant(rec.c_in.clone());
            let (lw, lb) = pv.lstm();
            let (h_t, _) = lstm_step(tape, h_in, c_in, enc, lw, lb, dims.lstm);
            let (aw, ab) = pv.actor();
            let pi = actor_distribution(tape, h_t, aw, ab);

            let p_u = tape.value(pi).data()[rec.action];
            let logp = if p_u < (-30.0f64).exp() {
                clamped += 1;
                tape.constant(Tensor::scalar(-30.0))
            } else {
                let idx = tape.index(pi, rec.action);
                tape.log(idx)
            };
            if sample == 0 {
                first_log_prob = tape.value(logp).item();
            }
            let guarded = tape.add_scalar(pi, 1e-12);
            let logpi = tape.log(guarded);
            let plogp = tape.mul(pi, logpi);
            let ent_neg = tape.sum(plogp); // sum pi log pi = -H
            // -logp * A + sign * beta * H
            let t1 = tape.scale(logp, -adv);
            let t2 = tape.scale(ent_neg, -lcfg.entropy_sign * lcfg.beta);
            sample_terms.push(tape.add(t1, t2));

            // value loss only on the recorded sample: the critic reads a
            // detached hidden state, so extra mask samples are irrelevant
            if sample == 0 {
                let h_det = tape.constant(tape.value(h_t).clone());
                let (cw, cb) = pv.critic();
                let v = match &rec.neighbor_onehot {
                    Some(o) => {
                        let ov = tape.constant(o.clone());
                        critic_value(tape, h_det, ov, cw, cb)
                    }
                    None => {
                        let lin = tape.linear(h_det, cw, cb);
                        tape.reshape(lin, vec![])
                    }
                };
                let d = tape.add_scalar(v, -ret);
                value_terms.push(tape.mul(d, d));
            }
        }
        log_probs.push(first_log_prob);
        policy_terms.push(mean_of(tape, &sample_terms));

        if let Some(phi) = phi {
            reg_terms.push(elbo_regularizer_on_tape(tape, phi, lcfg.lambda));
            let phi_vals = tape.value(phi).data().to_vec();
            prior_sum -= prior_log_prob_expectation(&phi_vals, lcfg.lambda)
                .expect("lambda validated in config");
            entropy_sum += mask_entropy(&phi_vals);
        }
    }

    let policy = mean_of(tape, &policy_terms);
    let value = mean_of(tape, &value_terms);
    let elbo = if reg_terms.is_empty() {
        tape.constant(Tensor::scalar(0.0))
    } else {
        let reg_mean = mean_of(tape, &reg_terms);
        tape.scale(reg_mean, -lcfg.elbo_weight)
    };
    let pv_sum = tape.add(policy, value);
    let total = tape.add(pv_sum, elbo);
    let b = batch.len() as f64;
    LossVars {
        policy,
        value,
        elbo,
        total,
        prior_loss: if reg_terms.is_empty() { 0.0 } else { prior_sum / b },
        mask_entropy: if reg_terms.is_empty() { 0.0 } else { entropy_sum / b },
        clamped,
        log_probs,
    }
}

/// One row of the metrics stream, written per update.
#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: usize,
    pub mean_return: f64,
    /// Seconds since training started; the only nondeterministic column.
    pub wall_clock_s: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub elbo_loss: f64,
    pub prior_loss: f64,
    pub mask_entropy: f64,
    pub total_loss: f64,
}

pub struct TrainResult {
    pub episode_returns: Vec<f64>,
    pub metrics: Vec<MetricsRow>,
    pub clamp_count: usize,
}

pub struct AgentSlot {
    pub id: usize,
    pub ego: EgoGraph,
    pub dims: AgentDims,
    pub params: AgentParams,
    pub state: AgentState,
    /// Per-family optimizers: theta, omega, phi.
    pub opts: [Optimizer; 3],
    rng_mask: ChaCha8Rng,
    rng_random: ChaCha8Rng,
    rng_action: ChaCha8Rng,
    rng_extra: ChaCha8Rng,
    batch: Vec<StepRecord>,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub env: QueueEnv,
    pub slots: Vec<AgentSlot>,
    pub seed: u64,
    rewards_buf: Vec<Vec<f64>>,
    update_count: u64,
    global_step: u64,
    pub clamp_count: usize,
}

fn map_agents<T, F>(slots: &mut [AgentSlot], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut AgentSlot) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        slots.par_iter_mut().map(&f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        slots.iter_mut().map(|s| f(s)).collect()
    }
}

impl Trainer {
    pub fn new(cfg: TrainConfig, env_cfg: EnvConfig, seed: u64) -> Self {
        let env = QueueEnv::new(env_cfg, seed);
        let n = env.node_count();
        let slots = (0..n)
            .map(|i| {
                let ego = env.config.graph.ego_graph(i).expect("valid node");
                let dims = AgentDims {
                    obs: env.obs_width(),
                    fingerprint: env.config.phase_count,
                    embed: cfg.embed_dim,
                    lstm: cfg.lstm_dim,
                    actions: env.config.phase_count,
                    degree: ego.neighbor_count(),
                };
                let params = AgentParams::init(&cfg, &dims, i, seed);
                let fam = params.families();
                let count = |f: Family| fam.iter().filter(|&&x| x == f).count();
                let opts = [
                    Optimizer::new(cfg.optim.clone(), count(Family::Theta)),
                    Optimizer::new(cfg.optim.clone(), count(Family::Omega)),
                    Optimizer::new(cfg.optim.clone(), count(Family::Phi)),
                ];
                AgentSlot {
                    id: i,
                    ego,
                    dims,
                    state: AgentState::zero(cfg.lstm_dim, env.config.phase_count),
                    params,
                    opts,
                    rng_mask: derive(seed, Stream::MaskNoise, i as u64),
                    rng_random: derive(seed, Stream::RandomMask, i as u64),
                    rng_action: derive(seed, Stream::ActionSample, i as u64),
                    rng_extra: derive(seed, Stream::MaskNoise, 10_000 + i as u64),
                    batch: Vec::new(),
                }
            })
            .collect();
        Self {
            cfg,
            env,
            slots,
            seed,
            rewards_buf: Vec::new(),
            update_count: 0,
            global_step: 0,
            clamp_count: 0,
        }
    }

    pub fn train(&mut self) -> Result<TrainResult, TrainError> {
        self.train_with(&mut |_, _| {})
    }

    /// Like `train`, but invokes `on_update` after every parameter update
    /// (e.g. for periodic checkpointing).
    pub fn train_with(
        &mut self,
        on_update: &mut dyn FnMut(&Trainer, &MetricsRow),
    ) -> Result<TrainResult, TrainError> {
        let started = std::time::Instant::now();
        let mut episode_returns: Vec<f64> = Vec::new();
        let mut metrics = Vec::new();
        for episode in 0..self.cfg.episodes {
            self.env.reset(mix(self.seed, episode as u64));
            for slot in &mut self.slots {
                slot.state = AgentState::zero(self.cfg.lstm_dim, slot.dims.actions);
                slot.batch.clear();
            }
            self.rewards_buf.clear();
            let mut ep_return = 0.0;

            for _t in 0..self.env.config.episode_len {
                let out = self.rollout_step()?;
                ep_return += out.rewards.iter().sum::<f64>();
                self.global_step += 1;

                let filled = self.slots[0].batch.len();
                if filled == self.cfg.rollout_len + 1 || out.done {
                    let mut row = self.update(out.done, episode, &episode_returns)?;
                    row.wall_clock_s = started.elapsed().as_secs_f64();
                    on_update(self, &row);
                    metrics.push(row);
                }
            }
            episode_returns.push(ep_return);
        }
        Ok(TrainResult { episode_returns, metrics, clamp_count: self.clamp_count })
    }

    /// One synchronous control step: every agent decides from the shared
    /// pre-step snapshot, the environment advances, then rollout values are
    /// computed under the just-taken neighbor actions.
    fn rollout_step(&mut self) -> Result<crate::env::StepOutcome, TrainError> {
        let n = self.slots.len();
        let obs: Vec<Vec<f64>> = (0..n).map(|i| self.env.observe(i)).collect();
        let fps: Vec<Vec<f64>> = self.slots.iter().map(|s| s.state.fingerprint.clone()).collect();
        let hs: Vec<Vec<f64>> = self.slots.iter().map(|s| s.state.h.data().to_vec()).collect();
        let tau = self.cfg.prior.temperature(self.update_count);
        let cfg = &self.cfg;

        let decisions: Vec<Decision> = map_agents(&mut self.slots, |slot| {
            let view = NeighborView {
                obs: slot.ego.members()[1..].iter().map(|&j| obs[j].clone()).collect(),
                fp: slot.ego.members()[1..].iter().map(|&j| fps[j].clone()).collect(),
                h: slot.ego.members()[1..].iter().map(|&j| hs[j].clone()).collect(),
            };
            decide(
                &slot.params,
                &slot.state,
                &slot.ego,
                &slot.dims,
                cfg.method,
                cfg.mask_mode,
                cfg.mask_features,
                &obs[slot.id],
                &view,
                tau,
                false,
                false,
                &mut slot.rng_mask,
                &mut slot.rng_random,
                &mut slot.rng_action,
            )
        });

        let actions: Vec<usize> = decisions.iter().map(|d| d.action).collect();
        let out = self.env.step(&actions)?;

        for (slot, dec) in self.slots.iter_mut().zip(decisions) {
            let nbr_actions: Vec<usize> =
                slot.ego.members()[1..].iter().map(|&j| actions[j]).collect();
            let (value, onehot) =
                compute_value(&slot.params, self.cfg.method, &slot.dims, &dec.new_h, &nbr_actions);
            let mut rec = dec.record;
            rec.value = value;
            rec.neighbor_onehot = onehot;
            slot.batch.push(rec);
            slot.state = AgentState { h: dec.new_h, c: dec.new_c, fingerprint: dec.pi };
        }
        self.rewards_buf.push(out.rewards.clone());
        Ok(out)
    }

    fn update(
        &mut self,
        terminal: bool,
        episode: usize,
        completed_returns: &[f64],
    ) -> Result<MetricsRow, TrainError> {
        let filled = self.slots[0].batch.len();
        let b = if terminal { filled } else { self.cfg.rollout_len };
        let rewards: Vec<Vec<f64>> = self.rewards_buf[..b].to_vec();
        let lcfg = LossConfig::from_train(&self.cfg);
        let cfg = &self.cfg;
        let update_id = self.update_count;

        type AgentOutcome = Result<(f64, f64, f64, f64, f64, usize), TrainError>;
        let results: Vec<AgentOutcome> = map_agents(&mut self.slots, |slot| {
            let bootstrap = if terminal { 0.0 } else { slot.batch[b].value };
            let neighbors: Vec<usize> = slot.ego.members()[1..].to_vec();
            let returns = spatially_discounted_returns(
                &rewards, slot.id, &neighbors, cfg.gamma, cfg.alpha, bootstrap,
            );
            let values: Vec<f64> = slot.batch[..b].iter().map(|r| r.value).collect();
            let advs = advantages(&returns, &values);

            let mut tape = Tape::new();
            let pv = ParamVars::leaf(&mut tape, &slot.params);
            let lv = agent_loss_on_tape(
                &mut tape,
                &pv,
                cfg.method,
                cfg.mask_mode,
                &slot.ego,
                &slot.dims,
                &slot.batch[..b],
                &returns,
                &advs,
                &lcfg,
                Some(&mut slot.rng_extra),
            );
            let total = tape.value(lv.total).item();
            if !total.is_finite() {
                return Err(TrainError::NonFinite {
                    episode,
                    update: update_id,
                    agent: slot.id,
                    detail: format!(
                        "policy {} value {} elbo {} over batch of {b} (returns {:?})",
                        tape.value(lv.policy).item(),
                        tape.value(lv.value).item(),
                        tape.value(lv.elbo).item(),
                        returns
                    ),
                });
            }
            let grads = tape.backward(lv.total);
            apply_update(slot, &tape, &pv, &grads, cfg)?;
            slot.batch.drain(..b);
            Ok((
                tape.value(lv.policy).item(),
                tape.value(lv.value).item(),
                tape.value(lv.elbo).item(),
                lv.prior_loss,
                lv.mask_entropy,
                lv.clamped,
            ))
        });

        self.rewards_buf.drain(..b);
        self.update_count += 1;

        let n = self.slots.len() as f64;
        let mut agg = [0.0f64; 5];
        for r in results {
            let (p, v, e, pr, me, cl) = r?;
            agg[0] += p;
            agg[1] += v;
            agg[2] += e;
            agg[3] += pr;
            agg[4] += me;
            self.clamp_count += cl;
        }
        let window = &completed_returns[completed_returns.len().saturating_sub(10)..];
        let mean_return = if window.is_empty() {
            0.0
        } else {
            window.iter().sum::<f64>() / window.len() as f64
        };
        Ok(MetricsRow {
            step: self.global_step,
            episode: completed_returns.len(),
            mean_return,
            wall_clock_s: 0.0,
            policy_loss: agg[0] / n,
            value_loss: agg[1] / n,
            elbo_loss: agg[2] / n,
            prior_loss: agg[3] / n,
            mask_entropy: agg[4] / n,
            total_loss: (agg[0] + agg[1] + agg[2]) / n,
        })
    }

    /// (update_count, global_step) — persisted in checkpoints.
    pub fn counters(&self) -> (u64, u64) {
        (self.update_count, self.global_step)
    }

    pub fn set_counters(&mut self, update_count: u64, global_step: u64) {
        self.update_count = update_count;
        self.global_step = global_step;
    }

    /// Evaluation rollout: one episode under hard masks with streams
    /// derived from `eval_seed`; no learning. The executor reproduces this
    /// exactly under an ideal channel.
    pub fn evaluate(&self, eval_seed: u64) -> Result<EvalRun, TrainError> {
        evaluate_policy(
            &self.cfg,
            &self.env,
            &self.slots.iter().map(|s| s.params.clone()).collect::<Vec<_>>(),
            &self.slots.iter().map(|s| s.ego.clone()).collect::<Vec<_>>(),
            &self.slots.iter().map(|s| s.dims).collect::<Vec<_>>(),
            eval_seed,
        )
    }
}

fn apply_update(
    slot: &mut AgentSlot,
    tape: &Tape,
    pv: &ParamVars,
    grads: &Gradients,
    cfg: &TrainConfig,
) -> Result<(), OptimError> {
    let families = slot.params.families();
    let names = slot.params.names();
    let gtensors: Vec<Tensor> = pv.vars.iter().map(|&v| grads.get(v, tape)).collect();
    for (fi, fam) in [Family::Theta, Family::Omega, Family::Phi].into_iter().enumerate() {
        let idx: Vec<usize> =
            (0..families.len()).filter(|&k| families[k] == fam).collect();
        if idx.is_empty() {
            continue;
        }
        let lr = match fam {
            Family::Theta => cfg.lr_theta,
            Family::Omega => cfg.lr_omega,
            Family::Phi => cfg.lr_phi,
        };
        let fam_grads: Vec<Tensor> = idx.iter().map(|&k| gtensors[k].clone()).collect();
        let fam_names: Vec<&str> = idx.iter().map(|&k| names[k].as_str()).collect();
        let lrs = vec![lr; idx.len()];
        let mut flat = slot.params.flat_mut();
        // take the family's tensors out of the flat view, preserving order
        let mut fam_params: Vec<&mut Tensor> = Vec::with_capacity(idx.len());
        let mut rest = flat.drain(..);
        let mut k = 0;
        for (pos, t) in rest.by_ref().enumerate() {
            if k < idx.len() && pos == idx[k] {
                fam_params.push(t);
                k += 1;
            }
        }
        slot.opts[fi].step(&mut fam_params, &fam_grads, &lrs, &fam_names)?;
    }
    Ok(())
}

pub struct EvalRun {
    pub total_return: f64,
    /// actions[t][agent]
    pub actions: Vec<Vec<usize>>,
    /// Per-agent policy averaged over the episode.
    pub mean_policy: Vec<Vec<f64>>,
    /// mask_values[t][agent][edge] (hard samples).
    pub mask_values: Vec<Vec<Vec<f64>>>,
}

/// Run one greedy-free evaluation episode: same decision path as training
/// but with hard mask samples and fresh streams derived from `eval_seed`.
pub fn evaluate_policy(
    cfg: &TrainConfig,
    env_template: &QueueEnv,
    params: &[AgentParams],
    egos: &[EgoGraph],
    dims: &[AgentDims],
    eval_seed: u64,
) -> Result<EvalRun, TrainError> {
    let mut env = env_template.clone();
    env.reset(eval_seed);
    let n = env.node_count();
    let mut states: Vec<AgentState> =
        dims.iter().map(|d| AgentState::zero(d.lstm, d.actions)).collect();
    let mut rng_mask: Vec<ChaCha8Rng> =
        (0..n).map(|i| derive(eval_seed, Stream::MaskNoise, i as u64)).collect();
    let mut rng_random: Vec<ChaCha8Rng> =
        (0..n).map(|i| derive(eval_seed, Stream::RandomMask, i as u64)).collect();
    let mut rng_action: Vec<ChaCha8Rng> =
        (0..n).map(|i| derive(eval_seed, Stream::ActionSample, i as u64)).collect();

    let mut total_return = 0.0;
    let mut all_actions = Vec::new();
    let mut all_masks = Vec::new();
    let mut policy_sums = vec![vec![0.0; env.config.phase_count]; n];
    let tau = cfg.prior.tau_end;

    for _t in 0..env.config.episode_len {
        let obs: Vec<Vec<f64>> = (0..n).map(|i| env.observe(i)).collect();
        let fps: Vec<Vec<f64>> = states.iter().map(|s| s.fingerprint.clone()).collect();
        let hs: Vec<Vec<f64>> = states.iter().map(|s| s.h.data().to_vec()).collect();

        let mut actions = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        let mut new_states = Vec::with_capacity(n);
        for i in 0..n {
            let view = NeighborView {
                obs: egos[i].members()[1..].iter().map(|&j| obs[j].clone()).collect(),
                fp: egos[i].members()[1..].iter().map(|&j| fps[j].clone()).collect(),
                h: egos[i].members()[1..].iter().map(|&j| hs[j].clone()).collect(),
            };
            let dec = decide(
                &params[i],
                &states[i],
                &egos[i],
                &dims[i],
                cfg.method,
                cfg.mask_mode,
                cfg.mask_features,
                &obs[i],
                &view,
                tau,
                true,
                false,
                &mut rng_mask[i],
                &mut rng_random[i],
                &mut rng_action[i],
            );
            actions.push(dec.action);
            masks.push(dec.record.mask_values.clone());
            for (k, &p) in dec.pi.iter().enumerate() {
                policy_sums[i][k] += p;
            }
            new_states.push(AgentState {
                h: dec.new_h,
                c: dec.new_c,
                fingerprint: dec.pi,
            });
        }
        let out = env.step(&actions)?;
        total_return += out.rewards.iter().sum::<f64>();
        states = new_states;
        all_actions.push(actions);
        all_masks.push(masks);
    }
    let steps = env.config.episode_len as f64;
    let mean_policy = policy_sums
        .into_iter()
        .map(|row| row.into_iter().map(|x| x / steps).collect())
        .collect();
    Ok(EvalRun { total_return, actions: all_actions, mean_policy, mask_values: all_masks })
}
