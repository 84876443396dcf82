//! Decentralized execution on an integer microtick clock. Agents exchange
//! (s_j, pi_{j,prev}, h_{j,prev}) messages over a lossy, delaying bus and
//! decide from their local caches only; a never-heard-from neighbor reads
//! as zeros, a silent one as its last received snapshot. Under an ideal
//! channel (no drop, no delay, comm every control tick) the run reproduces
//! the centralized evaluation rollout bit for bit.

use crate::env::{EnvError, QueueEnv};
use crate::graph::EgoGraph;
use crate::rng::{derive, Stream};
use crate::trainer::{
    decide, AgentDims, AgentParams, AgentState, NeighborView, TrainConfig,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid schedule: delta_comm {comm} must be in 1..={control} (delta_control)")]
    BadSchedule { comm: u64, control: u64 },
    #[error("drop probability {0} outside [0, 1]")]
    BadDropProb(f64),
}

#[derive(Clone, Copy, Debug)]
pub struct ExecConfig {
    /// Microticks per control (environment) step.
    pub delta_control: u64,
    /// Microticks between broadcasts; must not exceed `delta_control`.
    pub delta_comm: u64,
    pub drop_prob: f64,
    /// Delivery latency in microticks.
    pub delay_ticks: u64,
    /// Threshold the posterior mean (phi > 0) instead of sampling a hard
    /// mask per control step.
    pub mean_mask: bool,
}

impl ExecConfig {
    pub fn ideal() -> Self {
        Self { delta_control: 1, delta_comm: 1, drop_prob: 0.0, delay_ticks: 0, mean_mask: false }
    }

    fn validate(&self) -> Result<(), ExecError> {
        if self.delta_comm == 0 || self.delta_comm > self.delta_control {
            return Err(ExecError::BadSchedule {
                comm: self.delta_comm,
                control: self.delta_control,
            });
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(ExecError::BadDropProb(self.drop_prob));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Payload {
    obs: Vec<f64>,
    fp: Vec<f64>,
    h: Vec<f64>,
}

struct InFlight {
    due: u64,
    to: usize,
    from: usize,
    payload: Payload,
}

#[derive(Clone, Debug, Default)]
pub struct EdgeStats {
    pub from: usize,
    pub to: usize,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Mean hard mask value the receiver assigned to this edge across
    /// control steps (1.0 for unmasked methods/modes).
    pub retained_fraction: f64,
}

#[derive(Clone, Debug, Default)]
pub struct MessageAccounting {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub per_edge: Vec<EdgeStats>,
}

pub struct ExecReport {
    pub total_return: f64,
    /// actions[t][agent]
    pub actions: Vec<Vec<usize>>,
    /// rewards[t][agent]
    pub rewards: Vec<Vec<f64>>,
    /// Total vehicles queued at each node after each control step.
    pub queue_sums: Vec<Vec<u64>>,
    pub messages: MessageAccounting,
}

/// Run one execution episode. Streams are derived from `eval_seed` exactly
/// as in the evaluation rollout; the bus draws from its own per-edge
/// streams, so channel conditions never perturb decision randomness.
pub fn execute(
    cfg: &TrainConfig,
    exec: &ExecConfig,
    env_template: &QueueEnv,
    params: &[AgentParams],
    egos: &[EgoGraph],
    dims: &[AgentDims],
    eval_seed: u64,
) -> Result<ExecReport, ExecError> {
    exec.validate()?;
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

    // directed edge index, bus rng, and cache slot per (from -> to)
    let mut edge_of = std::collections::HashMap::new();
    let mut stats: Vec<EdgeStats> = Vec::new();
    let mut rng_bus: Vec<ChaCha8Rng> = Vec::new();
    let mut retained_sum: Vec<f64> = Vec::new();
    for (i, ego) in egos.iter().enumerate() {
        for &j in &ego.members()[1..] {
            let id = stats.len();
            edge_of.insert((i, j), id);
            stats.push(EdgeStats { from: i, to: j, ..EdgeStats::default() });
            rng_bus.push(derive(eval_seed, Stream::ExecBus, (i * n + j) as u64));
            retained_sum.push(0.0);
        }
    }

    // caches[i] holds one slot per ego neighbor of i, in ascending order
    let mut caches: Vec<Vec<Payload>> = egos
        .iter()
        .zip(dims)
        .map(|(ego, d)| {
            vec![
                Payload {
                    obs: vec![0.0; d.obs],
                    fp: vec![0.0; d.fingerprint],
                    h: vec![0.0; d.lstm],
                };
                ego.neighbor_count()
            ]
        })
        .collect();
    let mut in_flight: Vec<InFlight> = Vec::new();

    let mut total_return = 0.0;
    let mut all_actions = Vec::new();
    let mut all_rewards = Vec::new();
    let mut all_queue_sums = Vec::new();
    let tau = cfg.prior.tau_end;
    let total_ticks = env.config.episode_len as u64 * exec.delta_control;
    let mut control_steps = 0u64;

    for tick in 0..total_ticks {
        if tick % exec.delta_comm == 0 {
            for i in 0..n {
                let payload = Payload {
                    obs: env.observe(i),
                    fp: states[i].fingerprint.clone(),
                    h: states[i].h.data().to_vec(),
                };
                for &j in &egos[i].members()[1..] {
                    let e = edge_of[&(i, j)];
                    stats[e].sent += 1;
                    if rng_bus[e].gen::<f64>() < exec.drop_prob {
                        stats[e].dropped += 1;
                    } else {
                        in_flight.push(InFlight {
                            due: tick + exec.delay_ticks,
                            to: j,
                            from: i,
                            payload: payload.clone(),
                        });
                    }
                }
            }
        }

        // deliver everything due by now, oldest first so a fresher message
        // from the same sender overwrites a staler one
        in_flight.sort_by_key(|m| m.due);
        let mut rest = Vec::new();
        for msg in in_flight.drain(..) {
            if msg.due <= tick {
                let slot = egos[msg.to].members()[1..]
                    .iter()
                    .position(|&x| x == msg.from)
                    .expect("messages travel only along graph edges");
                stats[edge_of[&(msg.from, msg.to)]].delivered += 1;
                caches[msg.to][slot] = msg.payload;
            } else {
                rest.push(msg);
            }
        }
        in_flight = rest;

        if tick % exec.delta_control == 0 {
            let mut actions = Vec::with_capacity(n);
            let mut new_states = Vec::with_capacity(n);
            for i in 0..n {
                let view = NeighborView {
                    obs: caches[i].iter().map(|p| p.obs.clone()).collect(),
                    fp: caches[i].iter().map(|p| p.fp.clone()).collect(),
                    h: caches[i].iter().map(|p| p.h.clone()).collect(),
                };
                let own_obs = env.observe(i);
                let dec = decide(
                    &params[i],
                    &states[i],
                    &egos[i],
                    &dims[i],
                    cfg.method,
                    cfg.mask_mode,
                    cfg.mask_features,
                    &own_obs,
                    &view,
                    tau,
                    true,
                    exec.mean_mask,
                    &mut rng_mask[i],
                    &mut rng_random[i],
                    &mut rng_action[i],
                );
                for (k, &j) in egos[i].members()[1..].iter().enumerate() {
                    retained_sum[edge_of[&(j, i)]] += dec.record.mask_values[k];
                }
                actions.push(dec.action);
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
            all_queue_sums.push((0..n).map(|i| env.queues(i).iter().sum()).collect());
            all_rewards.push(out.rewards);
            control_steps += 1;
        }
    }

    let mut messages = MessageAccounting::default();
    for (e, mut s) in stats.into_iter().enumerate() {
        s.retained_fraction = if control_steps > 0 {
            retained_sum[e] / control_steps as f64
        } else {
            0.0
        };
        messages.sent += s.sent;
        messages.delivered += s.delivered;
        messages.dropped += s.dropped;
        messages.per_edge.push(s);
    }
    Ok(ExecReport {
        total_return,
        actions: all_actions,
        rewards: all_rewards,
        queue_sums: all_queue_sums,
        messages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::graph::EnvGraph;
    use crate::mask::MaskFeatureConfig;
    use crate::trainer::{MaskMode, Method, Trainer};

    fn trained(seed: u64) -> Trainer {
        let cfg = TrainConfig {
            rollout_len: 8,
            episodes: 2,
            embed_dim: 4,
            lstm_dim: 6,
            method: Method::BayesG,
            mask_mode: MaskMode::Learned,
            mask_features: MaskFeatureConfig::ALL,
            ..TrainConfig::default()
        };
        let mut env = EnvConfig::new(EnvGraph::grid(2, 2));
        env.episode_len = 30;
        let mut tr = Trainer::new(cfg, env, seed);
        tr.train().unwrap();
        tr
    }

    fn pieces(tr: &Trainer) -> (Vec<AgentParams>, Vec<EgoGraph>, Vec<AgentDims>) {
        (
            tr.slots.iter().map(|s| s.params.clone()).collect(),
            tr.slots.iter().map(|s| s.ego.clone()).collect(),
            tr.slots.iter().map(|s| s.dims).collect(),
        )
    }

    #[test]
    fn ideal_channel_reproduces_evaluation_exactly() {
        let tr = trained(11);
        let (params, egos, dims) = pieces(&tr);
        let eval = tr.evaluate(77).unwrap();
        let rep = execute(
            &tr.cfg, &ExecConfig::ideal(), &tr.env, &params, &egos, &dims, 77,
        )
        .unwrap();
        assert_eq!(rep.actions, eval.actions);
        assert_eq!(rep.total_return, eval.total_return);
    }

    #[test]
    fn ideal_channel_with_slow_comm_still_reproduces() {
        // comm twice per control step changes message counts, not content
        let tr = trained(11);
        let (params, egos, dims) = pieces(&tr);
        let eval = tr.evaluate(78).unwrap();
        let exec = ExecConfig { delta_control: 4, delta_comm: 2, drop_prob: 0.0, delay_ticks: 0, mean_mask: false };
        let rep = execute(&tr.cfg, &exec, &tr.env, &params, &egos, &dims, 78).unwrap();
        assert_eq!(rep.actions, eval.actions);
        assert_eq!(rep.messages.sent, 2 * rep.actions.len() as u64 * rep.messages.per_edge.len() as u64);
    }

    #[test]
    fn accounting_balances_and_counts_comm_ticks() {
        let tr = trained(13);
        let (params, egos, dims) = pieces(&tr);
        let exec = ExecConfig { delta_control: 1, delta_comm: 1, drop_prob: 0.3, delay_ticks: 0, mean_mask: false };
        let rep = execute(&tr.cfg, &exec, &tr.env, &params, &egos, &dims, 5).unwrap();
        assert_eq!(rep.messages.sent, rep.messages.delivered + rep.messages.dropped);
        // grid(2,2): 8 directed edges, one send per control tick each
        assert_eq!(rep.messages.per_edge.len(), 8);
        assert_eq!(rep.messages.sent, 8 * 30);
        assert!(rep.messages.dropped > 0 && rep.messages.delivered > 0);
        for e in &rep.messages.per_edge {
            assert!((0.0..=1.0).contains(&e.retained_fraction));
        }
    }

    #[test]
    fn total_blackout_still_runs_on_zero_caches() {
        let tr = trained(13);
        let (params, egos, dims) = pieces(&tr);
        let exec = ExecConfig { delta_control: 1, delta_comm: 1, drop_prob: 1.0, delay_ticks: 0, mean_mask: false };
        let rep = execute(&tr.cfg, &exec, &tr.env, &params, &egos, &dims, 5).unwrap();
        assert_eq!(rep.messages.delivered, 0);
        assert!(rep.total_return.is_finite());
        assert_eq!(rep.actions.len(), 30);
    }

    #[test]
    fn undeliverable_delay_equals_total_blackout() {
        // messages that never arrive within the horizon are equivalent to
        // dropping everything: caches stay at their zero init
        let tr = trained(13);
        let (params, egos, dims) = pieces(&tr);
        let blackout = ExecConfig { delta_control: 1, delta_comm: 1, drop_prob: 1.0, delay_ticks: 0, mean_mask: false };
        let late = ExecConfig { delta_control: 1, delta_comm: 1, drop_prob: 0.0, delay_ticks: 10_000, mean_mask: false };
        let a = execute(&tr.cfg, &blackout, &tr.env, &params, &egos, &dims, 5).unwrap();
        let b = execute(&tr.cfg, &late, &tr.env, &params, &egos, &dims, 5).unwrap();
        assert_eq!(a.actions, b.actions);
        assert_eq!(b.messages.delivered, 0);
    }

    #[test]
    fn one_step_delay_uses_stale_snapshots() {
        let tr = trained(17);
        let (params, egos, dims) = pieces(&tr);
        let ideal = execute(
            &tr.cfg, &ExecConfig::ideal(), &tr.env, &params, &egos, &dims, 9,
        )
        .unwrap();
        let delayed = ExecConfig { delta_control: 1, delta_comm: 1, drop_prob: 0.0, delay_ticks: 1, mean_mask: false };
        let rep = execute(&tr.cfg, &delayed, &tr.env, &params, &egos, &dims, 9).unwrap();
        // everything still arrives, one control step late
        assert_eq!(rep.messages.dropped, 0);
        assert!(rep.messages.delivered < rep.messages.sent); // last batch in flight
        assert_ne!(rep.actions, ideal.actions);
    }

    #[test]
    fn schedule_and_probability_validation() {
        let tr = trained(17);
        let (params, egos, dims) = pieces(&tr);
        let bad = ExecConfig { delta_control: 2, delta_comm: 3, drop_prob: 0.0, delay_ticks: 0, mean_mask: false };
        assert!(execute(&tr.cfg, &bad, &tr.env, &params, &egos, &dims, 1).is_err());
        let bad = ExecConfig { delta_control: 1, delta_comm: 1, drop_prob: 1.5, delay_ticks: 0, mean_mask: false };
        assert!(execute(&tr.cfg, &bad, &tr.env, &params, &egos, &dims, 1).is_err());
    }

    #[test]
    fn messages_confined_to_graph_edges() {
        let tr = trained(19);
        let (params, egos, dims) = pieces(&tr);
        let rep = execute(
            &tr.cfg, &ExecConfig::ideal(), &tr.env, &params, &egos, &dims, 3,
        )
        .unwrap();
        let g = &tr.env.config.graph;
        for e in &rep.messages.per_edge {
            assert!(g.has_edge(e.from, e.to), "{} -> {}", e.from, e.to);
        }
    }
}
