//! Variational Bernoulli edge masks over ego-graphs: Gumbel-sigmoid
//! (binary-concrete) relaxed sampling, effective-subgraph construction,
//! and the closed-form ELBO regularizer terms.
//!
//! One logit per center-incident ego-edge (the variational family is a
//! factorized Bernoulli over the agent's neighbors). Neighbor-neighbor
//! edges inside the ego-graph carry messages unmasked; they have no
//! variational parameters.

use crate::diff::{sigmoid_scalar, Tape, Tensor, Var};
use crate::graph::EgoGraph;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("retention bias lambda must lie strictly inside (0,1), got {0}")]
    BadLambda(f64),
}

/// A sampled mask over an agent's ego-edges. Relaxed values lie strictly
/// inside (0,1); hard values are exactly 0 or 1. The logistic noise draws
/// are kept so the sample can be reproduced on a tape at update time.
#[derive(Clone, Debug)]
pub struct MaskSample {
    pub values: Vec<f64>,
    pub noise: Vec<f64>,
    pub temperature: f64,
    pub hard: bool,
}

/// Prior retention bias and temperature schedule.
#[derive(Clone, Debug)]
pub struct PriorConfig {
    pub lambda: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub anneal_steps: u64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { lambda: 0.5, tau_start: 1.0, tau_end: 0.1, anneal_steps: 1 }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<(), MaskError> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(MaskError::BadLambda(self.lambda));
        }
        if self.tau_start <= 0.0 || self.tau_end <= 0.0 {
            return Err(MaskError::BadTemperature(self.tau_start.min(self.tau_end)));
        }
        Ok(())
    }

    /// Geometric anneal from tau_start to tau_end over `anneal_steps`
    /// updates, holding at tau_end afterwards.
    pub fn temperature(&self, step: u64) -> f64 {
        if step >= self.anneal_steps || self.anneal_steps == 0 {
            return self.tau_end;
        }
        let frac = step as f64 / self.anneal_steps as f64;
        self.tau_start * (self.tau_end / self.tau_start).powf(frac)
    }
}

/// Draw logistic noise L = log u - log(1-u), u ~ Uniform(0,1).
pub fn logistic_noise(rng: &mut impl Rng, count: usize) -> Vec<f64> {
    (0..count)
        .map(|_| {
            // keep u strictly inside (0,1)
            let u: f64 = loop {
                let u = rng.gen::<f64>();
                if u > 0.0 && u < 1.0 {
                    break u;
                }
            };
            u.ln() - (1.0 - u).ln()
        })
        .collect()
}

/// Gumbel-sigmoid sample: relaxed z = sigmoid((phi + L)/tau); hard mode
/// thresholds the relaxed value at 0.5 (straight-through gradients are the
/// relaxed gradients when replayed on a tape).
pub fn sample_mask(
    phi: &[f64],
    tau: f64,
    rng: &mut impl Rng,
    hard: bool,
) -> Result<MaskSample, MaskError> {
    if tau <= 0.0 {
        return Err(MaskError::BadTemperature(tau));
    }
    let noise = logistic_noise(rng, phi.len());
    Ok(sample_mask_with_noise(phi, tau, &noise, hard))
}

/// Deterministic replay of a sample from recorded noise.
pub fn sample_mask_with_noise(phi: &[f64], tau: f64, noise: &[f64], hard: bool) -> MaskSample {
    let values: Vec<f64> = phi
        .iter()
        .zip(noise)
        .map(|(&p, &l)| {
            let relaxed = sigmoid_scalar((p + l) / tau);
            if hard {
                if relaxed > 0.5 {
                    1.0
                } else {
                    0.0
                }
            } else {
                relaxed
            }
        })
        .collect();
    let mask = MaskSample { values, noise: noise.to_vec(), temperature: tau, hard };
    // relaxed values are strictly inside (0,1) in exact arithmetic; f64
    // saturation can land on the endpoints at low temperature
    debug_assert!(mask
        .values
        .iter()
        .all(|&z| if hard { z == 0.0 || z == 1.0 } else { (0.0..=1.0).contains(&z) }));
    mask
}

/// Relaxed sample replayed on a tape so gradients flow into the logits.
/// `phi` is a [1, m] variable, `noise` the recorded draws.
pub fn relaxed_mask_on_tape(tape: &mut Tape, phi: Var, noise: &[f64], tau: f64) -> Var {
    let l = tape.constant(Tensor::matrix(1, noise.len(), noise.to_vec()));
    let shifted = tape.add(phi, l);
    let scaled = tape.scale(shifted, 1.0 / tau);
    tape.sigmoid(scaled)
}

/// A_eff = Z ⊙ ego adjacency, expanded to matrix form: mask value z_j
/// scales the (center, j) and (j, center) entries; neighbor-neighbor
/// entries pass through unmasked.
pub fn effective_subgraph(mask_values: &[f64], ego: &EgoGraph) -> Vec<f64> {
    assert_eq!(
        mask_values.len(),
        ego.neighbor_count(),
        "mask has {} values for {} ego-edges",
        mask_values.len(),
        ego.neighbor_count()
    );
    let n = ego.size();
    let mut a = ego.adjacency().to_vec();
    for j in 1..n {
        let z = mask_values[j - 1];
        a[j] *= z; // (0, j)
        a[j * n] *= z; // (j, 0)
    }
    a
}

/// Tape version of `effective_subgraph`: `z` is a [1, m] variable.
/// Built as z @ P + C where P places each z_j at its two symmetric
/// center-incident positions and C holds the unmasked entries.
pub fn effective_subgraph_on_tape(tape: &mut Tape, z: Var, ego: &EgoGraph) -> Var {
    let n = ego.size();
    let m = ego.neighbor_count();
    let mut placement = vec![0.0; m * n * n];
    let mut fixed = ego.adjacency().to_vec();
    for j in 1..n {
        if ego.adjacency_entry(0, j) == 1.0 {
            placement[(j - 1) * n * n + j] = 1.0;
            placement[(j - 1) * n * n + j * n] = 1.0;
            fixed[j] = 0.0;
            fixed[j * n] = 0.0;
        }
    }
    let p = tape.constant(Tensor::matrix(m.max(1), n * n, if m == 0 { vec![0.0; n * n] } else { placement }));
    let zp = if m == 0 {
        tape.constant(Tensor::matrix(1, n * n, vec![0.0; n * n]))
    } else {
        tape.matmul(z, p)
    };
    let flat = tape.reshape(zp, vec![n, n]);
    let c = tape.constant(Tensor::matrix(n, n, fixed));
    tape.add(flat, c)
}

/// Exact expectation of the log prior under q: sum over edges of
/// sigma(phi) log(lambda) + (1 - sigma(phi)) log(1 - lambda).
pub fn prior_log_prob_expectation(phi: &[f64], lambda: f64) -> Result<f64, MaskError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(MaskError::BadLambda(lambda));
    }
    Ok(phi
        .iter()
        .map(|&p| {
            let s = sigmoid_scalar(p);
            s * lambda.ln() + (1.0 - s) * (1.0 - lambda).ln()
        })
        .sum())
}

/// Entropy of the factorized Bernoulli posterior, summed over edges.
pub fn mask_entropy(phi: &[f64]) -> f64 {
    phi.iter().map(|&p| bernoulli_entropy(sigmoid_scalar(p))).sum()
}

fn bernoulli_entropy(s: f64) -> f64 {
    let a = if s > 0.0 { -s * s.ln() } else { 0.0 };
    let b = if s < 1.0 { -(1.0 - s) * (1.0 - s).ln() } else { 0.0 };
    a + b
}

/// The published final grouping of the ELBO regularizer:
/// sum over edges of (lambda + sigma) log sigma + (2 - lambda - sigma) log(1 - sigma).
/// The tiny offset inside the logs only matters when sigma(phi) saturates
/// to an exact f64 endpoint (|phi| beyond ~37), where it keeps the value
/// finite instead of -inf; at ordinary logits it is absorbed by rounding.
const LOG_GUARD: f64 = 1e-300;

pub fn elbo_regularizer(phi: &[f64], lambda: f64) -> f64 {
    phi.iter()
        .map(|&p| {
            let s = sigmoid_scalar(p);
            (lambda + s) * (s + LOG_GUARD).ln() + (2.0 - lambda - s) * (1.0 - s + LOG_GUARD).ln()
        })
        .sum()
}

/// The prior-style term of the published final grouping:
/// lambda log sigma + (1 - lambda) log(1 - sigma), summed over edges.
/// Note this weights log sigma(phi) by lambda, the transpose of
/// `prior_log_prob_expectation`; the two coincide only when
/// sigma(phi) = lambda. See `elbo_regularizer_residual`.
pub fn regrouped_prior_term(phi: &[f64], lambda: f64) -> f64 {
    phi.iter()
        .map(|&p| {
            let s = sigmoid_scalar(p);
            lambda * (s + LOG_GUARD).ln() + (1.0 - lambda) * (1.0 - s + LOG_GUARD).ln()
        })
        .sum()
}

/// Closed-form difference between the published final grouping and the
/// exact prior-expectation-plus-entropy form, per edge:
///   [lambda log s + (1-lambda) log(1-s) - H(s)]
/// - [s log lambda + (1-s) log(1-lambda) + H(s)]
/// where s = sigma(phi) and H is the Bernoulli entropy.
pub fn elbo_regularizer_residual(phi: &[f64], lambda: f64) -> f64 {
    elbo_regularizer(phi, lambda)
        - (prior_log_prob_expectation(phi, lambda).expect("lambda checked by caller")
            + mask_entropy(phi))
}

/// Tape version of `elbo_regularizer` for gradient flow into phi ([1, m]).
pub fn elbo_regularizer_on_tape(tape: &mut Tape, phi: Var, lambda: f64) -> Var {
    let s = tape.sigmoid(phi);
    let s_guard = tape.add_scalar(s, LOG_GUARD);
    let log_s = tape.log(s_guard);
    let neg_s = tape.scale(s, -1.0);
    let one_minus_s = tape.add_scalar(neg_s, 1.0);
    // guard added after forming 1 - sigma: folding it into the 1.0 above
    // would be absorbed and leave log(0) reachable at saturation
    let guarded_1ms = tape.add_scalar(one_minus_s, LOG_GUARD);
    let log_1ms = tape.log(guarded_1ms);
    let w1 = tape.add_scalar(s, lambda);
    let t1 = tape.mul(w1, log_s);
    let w2 = tape.add_scalar(neg_s, 2.0 - lambda);
    let t2 = tape.mul(w2, log_1ms);
    let total = tape.add(t1, t2);
    tape.sum(total)
}

/// Which feature groups feed the edge-logit network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskFeatureConfig {
    pub state: bool,
    pub policy: bool,
    pub trajectory: bool,
}

impl MaskFeatureConfig {
    pub const ALL: Self = Self { state: true, policy: true, trajectory: true };
    pub const STATE: Self = Self { state: true, policy: false, trajectory: false };
    pub const POLICY: Self = Self { state: false, policy: true, trajectory: false };
    pub const TRAJECTORY: Self = Self { state: false, policy: false, trajectory: true };

    pub fn parse(names: &str) -> Result<Self, String> {
        let mut cfg = Self { state: false, policy: false, trajectory: false };
        for name in names.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "state" => cfg.state = true,
                "policy" => cfg.policy = true,
                "traj" | "trajectory" => cfg.trajectory = true,
                other => return Err(format!("unknown mask feature set '{other}'")),
            }
        }
        if !(cfg.state || cfg.policy || cfg.trajectory) {
            return Err("mask feature set is empty".to_string());
        }
        Ok(cfg)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.state {
            parts.push("state");
        }
        if self.policy {
            parts.push("policy");
        }
        if self.trajectory {
            parts.push("trajectory");
        }
        parts.join("+")
    }
}

impl Default for MaskFeatureConfig {
    fn default() -> Self {
        Self::ALL
    }
}

/// Edge-logit network psi: one linear map shared across an agent's
/// ego-edges, applied to per-edge feature rows.
#[derive(Clone, Debug)]
pub struct EdgeLogitNet {
    pub weight: Tensor, // [feat_dim, 1]
    pub bias: Tensor,   // [1, 1]
}

impl EdgeLogitNet {
    pub fn new(feat_dim: usize, init_scale: f64, rng: &mut impl Rng) -> Self {
        let weight = Tensor::matrix(
            feat_dim,
            1,
            (0..feat_dim).map(|_| rng.gen_range(-init_scale..init_scale)).collect(),
        );
        Self { weight, bias: Tensor::matrix(1, 1, vec![0.0]) }
    }

    /// feats: [m, feat_dim] variable of per-edge features -> phi [1, m].
    pub fn logits_on_tape(tape: &mut Tape, w: Var, b: Var, feats: Var) -> Var {
        let raw = tape.linear(feats, w, b); // [m, 1]
        let (m, _) = tape.value(raw).rows_cols();
        tape.reshape(raw, vec![1, m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::check::finite_diff_check;
    use crate::graph::EnvGraph;
    use crate::rng::{derive, Stream};
    use rand::Rng;

    #[test]
    fn saturated_logit_forces_retention() {
        let mut rng = derive(1, Stream::MaskNoise, 0);
        for _ in 0..100 {
            let m = sample_mask(&[50.0], 0.5, &mut rng, false).unwrap();
            assert!(m.values[0] > 0.999_999);
            let h = sample_mask(&[50.0], 0.5, &mut rng, true).unwrap();
            assert_eq!(h.values[0], 1.0);
        }
    }

    #[test]
    fn relaxed_crossing_probability_matches_sigmoid() {
        // P(z > 0.5) = P(phi + L > 0) = sigma(phi); at phi = 0 this is 0.5
        let mut rng = derive(2, Stream::MaskNoise, 0);
        let mut above = 0usize;
        let n = 10_000;
        for _ in 0..n {
            let m = sample_mask(&[0.0], 0.1, &mut rng, false).unwrap();
            if m.values[0] > 0.5 {
                above += 1;
            }
        }
        let freq = above as f64 / n as f64;
        assert!((0.48..=0.52).contains(&freq), "crossing freq {freq}");
    }

    #[test]
    fn hard_retention_frequency_matches_bernoulli() {
        // phi = logit(0.8): hard retention frequency ~ 0.8
        let phi = (0.8f64 / 0.2).ln();
        let mut rng = derive(3, Stream::MaskNoise, 0);
        let n = 10_000;
        let mut kept = 0usize;
        for _ in 0..n {
            let m = sample_mask(&[phi], 0.7, &mut rng, true).unwrap();
            if m.values[0] == 1.0 {
                kept += 1;
            }
        }
        let freq = kept as f64 / n as f64;
        assert!((0.78..=0.82).contains(&freq), "retention freq {freq}");
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        let mut rng = derive(4, Stream::MaskNoise, 0);
        assert!(sample_mask(&[0.0], 0.0, &mut rng, false).is_err());
        assert!(sample_mask(&[0.0], -1.0, &mut rng, false).is_err());
    }

    #[test]
    fn temperature_anneal_is_geometric_and_holds() {
        let p = PriorConfig { lambda: 0.5, tau_start: 1.0, tau_end: 0.1, anneal_steps: 100 };
        assert!((p.temperature(0) - 1.0).abs() < 1e-12);
        assert!((p.temperature(50) - (0.1f64).sqrt()).abs() < 1e-12);
        assert!((p.temperature(100) - 0.1).abs() < 1e-12);
        assert!((p.temperature(10_000) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn lower_temperature_sharpens_samples() {
        // mean distance of relaxed z from {0,1} decreases as tau decreases
        let mut dists = Vec::new();
        for &tau in &[1.0, 0.3, 0.01] {
            let mut rng = derive(5, Stream::MaskNoise, 9);
            let mut total = 0.0;
            for _ in 0..10_000 {
                let m = sample_mask(&[0.3], tau, &mut rng, false).unwrap();
                let z = m.values[0];
                total += z.min(1.0 - z);
            }
            dists.push(total / 10_000.0);
        }
        assert!(dists[0] > dists[1] && dists[1] > dists[2], "{dists:?}");
    }

    #[test]
    fn effective_subgraph_identity_and_zero() {
        let g = EnvGraph::grid(3, 3);
        let ego = g.ego_graph(4).unwrap();
        let ones = vec![1.0; ego.neighbor_count()];
        assert_eq!(effective_subgraph(&ones, &ego), ego.adjacency().to_vec());
        let zeros = vec![0.0; ego.neighbor_count()];
        let a = effective_subgraph(&zeros, &ego);
        // center row/col zeroed; neighbor-neighbor entries (none here for
        // the grid center, whose neighbors are pairwise non-adjacent)
        assert!(a.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn effective_subgraph_mixed_hand_product() {
        // triangle: neighbor-neighbor edge (1,2) stays; center edges scaled
        let g = EnvGraph::parse("0 1\n0 2\n1 2\n").unwrap();
        let ego = g.ego_graph(0).unwrap();
        let a = effective_subgraph(&[0.25, 0.75], &ego);
        let n = 3;
        assert_eq!(a[0 * n + 1], 0.25);
        assert_eq!(a[1 * n + 0], 0.25);
        assert_eq!(a[0 * n + 2], 0.75);
        assert_eq!(a[2 * n + 0], 0.75);
        assert_eq!(a[1 * n + 2], 1.0);
        assert_eq!(a[2 * n + 1], 1.0);
    }

    #[test]
    fn tape_subgraph_matches_scalar_path_and_respects_support() {
        let g = EnvGraph::parse("0 1\n0 2\n1 2\n0 3\n").unwrap();
        let ego = g.ego_graph(0).unwrap();
        let zvals = vec![0.2, 0.9, 0.5];
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::matrix(1, 3, zvals.clone()));
        let a = effective_subgraph_on_tape(&mut tape, z, &ego);
        let expect = effective_subgraph(&zvals, &ego);
        assert_eq!(tape.value(a).data(), expect.as_slice());
        for (i, (&got, &env)) in expect.iter().zip(ego.adjacency()).enumerate() {
            assert!(got <= env, "entry {i}: {got} > {env}");
        }
    }

    #[test]
    fn prior_expectation_symmetric_case_and_entropy_identity() {
        // phi = 0, lambda = 0.5 -> -ln 2 per edge
        let v = prior_log_prob_expectation(&[0.0], 0.5).unwrap();
        assert!((v + std::f64::consts::LN_2).abs() < 1e-12);
        // sigma(phi) = lambda -> prior expectation = -(Bernoulli entropy)
        let lambda: f64 = 0.3;
        let phi = (lambda / (1.0 - lambda)).ln();
        let p = prior_log_prob_expectation(&[phi], lambda).unwrap();
        assert!((p + mask_entropy(&[phi])).abs() < 1e-12);
        assert!(prior_log_prob_expectation(&[0.0], 1.0).is_err());
        assert!(prior_log_prob_expectation(&[0.0], 0.0).is_err());
    }

    #[test]
    fn prior_expectation_matches_monte_carlo() {
        let mut rng = derive(6, Stream::MaskNoise, 0);
        for _ in 0..5 {
            let phi: f64 = rng.gen_range(-2.0..2.0);
            let lambda: f64 = rng.gen_range(0.1..0.9);
            let exact = prior_log_prob_expectation(&[phi], lambda).unwrap();
            let n = 100_000;
            let mut total = 0.0;
            let mut totsq = 0.0;
            for _ in 0..n {
                let m = sample_mask(&[phi], 0.5, &mut rng, true).unwrap();
                let lp = if m.values[0] == 1.0 { lambda.ln() } else { (1.0 - lambda).ln() };
                total += lp;
                totsq += lp * lp;
            }
            let mean = total / n as f64;
            let var = totsq / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!(
                (exact - mean).abs() <= 3.0 * se + 1e-9,
                "exact {exact} vs mc {mean} (se {se})"
            );
        }
    }

    #[test]
    fn entropy_values() {
        assert!((mask_entropy(&[0.0]) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(mask_entropy(&[20.0]) < 1e-7);
        assert!(mask_entropy(&[-20.0]) < 1e-7);
        // direct per-edge evaluation oracle on 5 random logits
        let mut rng = derive(7, Stream::MaskNoise, 0);
        let phis: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let direct: f64 = phis
            .iter()
            .map(|&p| {
                let s = sigmoid_scalar(p);
                -s * s.ln() - (1.0 - s) * (1.0 - s).ln()
            })
            .sum();
        assert!((mask_entropy(&phis) - direct).abs() < 1e-12);
    }

    #[test]
    fn elbo_regularizer_symmetric_case() {
        // sigma = 0.5, lambda = 0.5, one edge -> -2 ln 2
        let v = elbo_regularizer(&[0.0], 0.5);
        assert!((v + 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn elbo_regularizer_regrouping_identity() {
        // published final grouping == regrouped prior term minus entropy
        let mut rng = derive(8, Stream::MaskNoise, 0);
        for _ in 0..100 {
            let phi: Vec<f64> = (0..4).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let lambda: f64 = rng.gen_range(0.05..0.95);
            let lhs = elbo_regularizer(&phi, lambda);
            let rhs = regrouped_prior_term(&phi, lambda) - mask_entropy(&phi);
            assert!((lhs - rhs).abs() < 1e-10 * phi.len() as f64, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn elbo_regularizer_gradient_matches_finite_differences() {
        let mut rng = derive(9, Stream::MaskNoise, 0);
        for _ in 0..20 {
            let phi: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let lambda: f64 = rng.gen_range(0.1..0.9);
            let err = finite_diff_check(
                |t, vars| elbo_regularizer_on_tape(t, vars[0], lambda),
                &[Tensor::matrix(1, 3, phi.clone())],
            );
            assert!(err < 1e-6, "rel err {err}");
        }
    }

    #[test]
    fn tape_regularizer_matches_scalar() {
        let phi = vec![0.3, -1.2, 2.0];
        let lambda = 0.4;
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::matrix(1, 3, phi.clone()));
        let r = elbo_regularizer_on_tape(&mut tape, p, lambda);
        assert!((tape.value(r).item() - elbo_regularizer(&phi, lambda)).abs() < 1e-12);
    }

    #[test]
    fn mask_feature_parsing() {
        assert_eq!(MaskFeatureConfig::parse("state").unwrap(), MaskFeatureConfig::STATE);
        assert_eq!(
            MaskFeatureConfig::parse("state,policy,traj").unwrap(),
            MaskFeatureConfig::ALL
        );
        assert!(MaskFeatureConfig::parse("bogus").is_err());
        assert!(MaskFeatureConfig::parse("").is_err());
    }

    #[test]
    fn zero_weight_edge_network_gives_bias_logits() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::matrix(4, 1, vec![0.0; 4]));
        let b = tape.leaf(Tensor::matrix(1, 1, vec![0.7]));
        let feats = tape.constant(Tensor::matrix(3, 4, (0..12).map(|i| i as f64).collect()));
        let phi = EdgeLogitNet::logits_on_tape(&mut tape, w, b, feats);
        assert_eq!(tape.value(phi).data(), &[0.7, 0.7, 0.7]);
    }
}
