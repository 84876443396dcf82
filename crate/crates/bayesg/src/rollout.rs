//! Spatially discounted n-step returns and advantages over an on-policy
//! minibatch. The return mixes the agent's own rewards with
//! alpha-attenuated neighbor rewards and bootstraps from the rollout-time
//! value at the batch boundary (zero at terminals).

/// R_{i,tau} for every tau in a batch of length B:
///   sum_{kappa=0}^{B-1-tau} gamma^kappa * sum_{j in V_i} alpha^{d_ij} r_{j,tau+kappa}
///   + gamma^{B-tau} * bootstrap
/// computed by a backward recursion. `rewards` is [step][agent];
/// `neighbors` are the 1-hop neighbors of agent `i` (hop distance 1).
pub fn spatially_discounted_returns(
    rewards: &[Vec<f64>],
    i: usize,
    neighbors: &[usize],
    gamma: f64,
    alpha: f64,
    bootstrap: f64,
) -> Vec<f64> {
    let b = rewards.len();
    let mut out = vec![0.0; b];
    let mut acc = bootstrap;
    for tau in (0..b).rev() {
        let mut local = rewards[tau][i];
        for &j in neighbors {
            local += alpha * rewards[tau][j];
        }
        acc = local + gamma * acc;
        out[tau] = acc;
    }
    out
}

/// A_{i,tau} = R_{i,tau} - v_{i,tau}; the caller treats the result as a
/// constant during differentiation.
pub fn advantages(returns: &[f64], values: &[f64]) -> Vec<f64> {
    assert_eq!(returns.len(), values.len());
    returns.iter().zip(values).map(|(r, v)| r - v).collect()
}
