//! BayesG: decentralized networked multi-agent actor-critic learning with
//! variational inference of sparse latent communication subgraphs, plus a
//! synthetic queue-network traffic environment, baselines, ablations, and
//! a decentralized-execution simulator.

pub mod diff;
pub mod env;
pub mod exec;
pub mod graph;
pub mod harness;
pub mod mask;
pub mod nn;
pub mod rng;
pub mod rollout;
pub mod trainer;
