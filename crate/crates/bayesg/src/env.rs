//! Synthetic queue-network traffic environment. Each node is an
//! intersection holding per-approach vehicle queues: one external approach
//! fed by Poisson arrivals plus one approach per incident edge fed by the
//! upstream neighbor's outflow. Actions pick a signal phase; green
//! approaches discharge up to the saturation flow; discharged vehicles are
//! split among downstream approaches (or exit) by a static seeded routing
//! table. Vehicles are integer-counted, so conservation checks are exact.

use crate::graph::EnvGraph;
use crate::rng::{derive, Stream};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("agent {agent}: action {action} out of range (phase count {phases})")]
    InvalidAction { agent: usize, action: usize, phases: usize },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
}

#[derive(Clone, Debug)]
pub struct EnvConfig {
    pub graph: EnvGraph,
    /// Signal phases per node; approach a is green when a mod phase_count
    /// equals the chosen phase.
    pub phase_count: usize,
    /// Vehicles discharged per green approach per step.
    pub saturation: u64,
    /// Mean external arrivals per node per step (Poisson).
    pub arrival_rate: f64,
    /// Peak-hour ramp amplitude: the rate is scaled by
    /// 1 + amplitude * triangle(t/T), peaking mid-episode.
    pub peak_amplitude: f64,
    pub episode_len: usize,
    pub reward_scale: f64,
    /// Per-approach queue cap; outflow blocked by a full downstream
    /// approach is held at the upstream node.
    pub capacity: u64,
    /// Seed for the fixed road layout (routing tables). None derives it
    /// from the run seed, giving every run its own map; setting it pins the
    /// map so that different training seeds face the same network and only
    /// arrivals/initialization/exploration vary.
    pub map_seed: Option<u64>,
}

impl EnvConfig {
    pub fn new(graph: EnvGraph) -> Self {
        Self {
            graph,
            phase_count: 2,
            saturation: 2,
            arrival_rate: 0.6,
            peak_amplitude: 1.0,
            episode_len: 500,
            reward_scale: 10.0,
            capacity: 40,
            map_seed: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    pub done: bool,
}

#[derive(Clone)]
pub struct QueueEnv {
    pub config: EnvConfig,
    /// queues[i][0] = external approach; queues[i][1 + k] = approach fed by
    /// the k-th neighbor of i in ascending node order.
    queues: Vec<Vec<u64>>,
    phases: Vec<usize>,
    halt_steps: Vec<u64>,
    t: usize,
    arrival_rngs: Vec<ChaCha8Rng>,
    /// routing[i] = integer weights over [neighbors of i ascending..., exit].
    routing: Vec<Vec<u64>>,
    pub arrivals_total: u64,
    pub exits_total: u64,
}

impl QueueEnv {
    pub fn new(config: EnvConfig, seed: u64) -> Self {
        let n = config.graph.node_count();
        let map_seed = config.map_seed.unwrap_or(seed);
        let routing = (0..n)
            .map(|i| {
                let mut rng = derive(map_seed, Stream::EnvRouting, i as u64);
                let dests = config.graph.degree(i) + 1;
                (0..dests).map(|_| rng.gen_range(1..=4u64)).collect()
            })
            .collect();
        let mut env = Self {
            config,
            queues: Vec::new(),
            phases: Vec::new(),
            halt_steps: Vec::new(),
            t: 0,
            arrival_rngs: Vec::new(),
            routing,
            arrivals_total: 0,
            exits_total: 0,
        };
        env.reset(seed);
        env
    }

    /// Reset queues to the initial distribution (all zero) and reseed the
    /// per-node arrival streams. The routing table stays fixed.
    pub fn reset(&mut self, seed: u64) {
        let n = self.config.graph.node_count();
        self.queues = (0..n).map(|i| vec![0; self.config.graph.degree(i) + 1]).collect();
        self.phases = vec![0; n];
        self.halt_steps = vec![0; n];
        self.t = 0;
        self.arrival_rngs =
            (0..n).map(|i| derive(seed, Stream::EnvArrivals, i as u64)).collect();
        self.arrivals_total = 0;
        self.exits_total = 0;
    }

    pub fn node_count(&self) -> usize {
        self.config.graph.node_count()
    }

    pub fn total_vehicles(&self) -> u64 {
        self.queues.iter().flatten().sum()
    }

    /// Test hook: overwrite one node's routing weights
    /// ([neighbors ascending..., exit]).
    pub fn set_routing_weights(&mut self, node: usize, weights: Vec<u64>) {
        assert_eq!(weights.len(), self.config.graph.degree(node) + 1);
        assert!(weights.iter().sum::<u64>() > 0);
        self.routing[node] = weights;
    }

    /// Test hook: force a queue value (counted as arrivals so conservation
    /// stays balanced).
    pub fn set_queue(&mut self, node: usize, approach: usize, value: u64) {
        let old = self.queues[node][approach];
        self.queues[node][approach] = value;
        self.arrivals_total = self.arrivals_total + value - old.min(value);
        self.exits_total += old.saturating_sub(value);
    }

    pub fn queues(&self, node: usize) -> &[u64] {
        &self.queues[node]
    }

    pub fn phase(&self, node: usize) -> usize {
        self.phases[node]
    }

    fn approach_from(&self, node: usize, upstream: usize) -> usize {
        let pos = self.config.graph.neighbors(node)
            .iter()
            .position(|&j| j == upstream)
            .expect("upstream must be a neighbor");
        1 + pos
    }

    fn arrival_lambda(&self) -> f64 {
        let frac = if self.config.episode_len > 1 {
            self.t as f64 / (self.config.episode_len - 1) as f64
        } else {
            0.0
        };
        let triangle = 1.0 - (2.0 * frac - 1.0).abs(); // 0 at the ends, 1 mid-episode
        self.config.arrival_rate * (1.0 + self.config.peak_amplitude * triangle)
    }

    /// Advance one control step. Order: green discharge with
    /// downstream-capacity blocking, routing, external arrivals, reward.
    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError> {
        let n = self.node_count();
        if actions.len() != n {
            return Err(EnvError::ActionCount { expected: n, got: actions.len() });
        }
        for (i, &a) in actions.iter().enumerate() {
            if a >= self.config.phase_count {
                return Err(EnvError::InvalidAction {
                    agent: i,
                    action: a,
                    phases: self.config.phase_count,
                });
            }
        }

        let pre = self.queues.clone();
        let mut inflow: Vec<Vec<u64>> = self.queues.iter().map(|q| vec![0; q.len()]).collect();
        let mut exits = 0u64;

        for i in 0..n {
            self.phases[i] = actions[i];
            let neighbors: Vec<usize> = self.config.graph.neighbors(i).to_vec();

            // tentative per-approach discharge on green approaches
            let mut removed = vec![0u64; self.queues[i].len()];
            let mut pooled = 0u64;
            for a in 0..self.queues[i].len() {
                if a % self.config.phase_count == actions[i] {
                    let d = self.queues[i][a].min(self.config.saturation);
                    self.queues[i][a] -= d;
                    removed[a] = d;
                    pooled += d;
                }
            }

            // split the pooled outflow by static integer weights; the last
            // destination takes the remainder so the split is exact
            let weights = &self.routing[i];
            let total_w: u64 = weights.iter().sum();
            let mut parts = vec![0u64; weights.len()];
            let mut assigned = 0u64;
            for k in 0..weights.len() - 1 {
                parts[k] = pooled * weights[k] / total_w;
                assigned += parts[k];
            }
            *parts.last_mut().unwrap() = pooled - assigned;

            // downstream capacity check against pre-step queues; blocked
            // vehicles return to the green approaches they left
            let mut blocked = 0u64;
            for (k, &j) in neighbors.iter().enumerate() {
                let slot = self.approach_from(j, i);
                let free = self.config.capacity.saturating_sub(pre[j][slot]);
                let sent = parts[k].min(free);
                blocked += parts[k] - sent;
                inflow[j][slot] += sent;
            }
            exits += *parts.last().unwrap();
            for a in 0..removed.len() {
                if blocked == 0 {
                    break;
                }
                let back = blocked.min(removed[a]);
                self.queues[i][a] += back;
                blocked -= back;
            }
            debug_assert_eq!(blocked, 0);
        }

        // deliver routed inflow, then external arrivals (clamped to cap)
        let lambda = self.arrival_lambda();
        for i in 0..n {
            for a in 0..self.queues[i].len() {
                self.queues[i][a] += inflow[i][a];
            }
            let drawn = if lambda > 0.0 {
                Poisson::new(lambda).unwrap().sample(&mut self.arrival_rngs[i]) as u64
            } else {
                0
            };
            let free = self.config.capacity.saturating_sub(self.queues[i][0]);
            let entered = drawn.min(free);
            self.queues[i][0] += entered;
            self.arrivals_total += entered;
        }
        self.exits_total += exits;

        let rewards: Vec<f64> = (0..n)
            .map(|i| {
                let halted: u64 = self.queues[i].iter().sum();
                if halted > 0 {
                    self.halt_steps[i] += 1;
                }
                -(halted as f64) / self.config.reward_scale
            })
            .collect();
        self.t += 1;
        Ok(StepOutcome { rewards, done: self.t >= self.config.episode_len })
    }

    /// Constant width across agents: max_degree + 1 normalized queue slots
    /// (zero-padded), one-hot phase, normalized cumulative halt-age.
    pub fn obs_width(&self) -> usize {
        self.config.graph.max_degree() + 1 + self.config.phase_count + 1
    }

    pub fn observe(&self, i: usize) -> Vec<f64> {
        let slots = self.config.graph.max_degree() + 1;
        let cap = self.config.capacity as f64;
        let mut obs = Vec::with_capacity(self.obs_width());
        for a in 0..slots {
            let q = self.queues[i].get(a).copied().unwrap_or(0);
            obs.push((q as f64 / cap).min(1.0));
        }
        for p in 0..self.config.phase_count {
            obs.push(if p == self.phases[i] { 1.0 } else { 0.0 });
        }
        obs.push(self.halt_steps[i] as f64 / self.config.episode_len as f64);
        obs
    }

    /// Paired-simulation locality witness: perturb node k's external queue,
    /// step both copies with the same actions, and compare node i's state.
    /// Returns true when node i's next state is identical.
    pub fn locality_probe(&self, i: usize, k: usize, actions: &[usize]) -> bool {
        let mut base = self.clone();
        let mut perturbed = self.clone();
        let bump = perturbed.queues[k][0].max(1) * 2 + 3;
        perturbed.queues[k][0] = bump.min(perturbed.config.capacity);
        base.step(actions).unwrap();
        perturbed.step(actions).unwrap();
        base.queues[i] == perturbed.queues[i] && base.phases[i] == perturbed.phases[i]
    }
}
