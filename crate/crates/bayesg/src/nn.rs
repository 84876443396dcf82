//! Encoder and head architectures: masked graph-convolution channels,
//! MLP channel encoders for the baselines, an LSTM cell for trajectory
//! features, and actor/critic heads. All functions are pure over tape
//! variables; parameters are owned elsewhere and leafed onto tapes by the
//! caller.

use crate::diff::{Tape, Tensor, Var};
use rand::Rng;

/// A single affine map. "MLP" channels in the encoders are one linear
/// layer plus relu, which is all the desk-scale scenarios need.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor, // [d_in, d_out]
    pub bias: Tensor,   // [1, d_out]
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (d_in.max(1) as f64).sqrt();
        let weight = Tensor::matrix(
            d_in,
            d_out,
            (0..d_in * d_out).map(|_| rng.gen_range(-scale..scale)).collect(),
        );
        Self { weight, bias: Tensor::matrix(1, d_out, vec![0.0; d_out]) }
    }
}

/// Symmetric GCN normalization with self-loops:
/// D^{-1/2} (A_eff + I) D^{-1/2} where D is the row-degree of A_eff + I.
/// Self-loops guarantee strictly positive degrees even under a fully
/// masked A_eff.
pub fn gcn_normalize(tape: &mut Tape, a_eff: Var) -> Var {
    let (n, n2) = tape.value(a_eff).rows_cols();
    assert_eq!(n, n2, "gcn_normalize: A_eff must be square, got {:?}", tape.value(a_eff).shape());
    let eye = tape.constant(Tensor::eye(n));
    let a_hat = tape.add(a_eff, eye);
    let deg = tape.sum_rows(a_hat); // [n,1], entries >= 1
    let log_deg = tape.log(deg);
    let scaled = tape.scale(log_deg, -0.5);
    let dinv_sqrt = tape.exp(scaled); // deg^{-1/2}
    let d_col = dinv_sqrt; // [n,1]
    let d_row = tape.reshape(dinv_sqrt, vec![1, n]);
    let outer = tape.matmul(d_col, d_row); // [n,n] with entries d_i^{-1/2} d_j^{-1/2}
    tape.mul(a_hat, outer)
}

/// One masked graph-convolution: relu(D^{-1/2}(A_eff+I)D^{-1/2} X W + b).
pub fn gcn_layer(tape: &mut Tape, x: Var, a_eff: Var, w: Var, b: Var) -> Var {
    let norm = gcn_normalize(tape, a_eff);
    let agg = tape.matmul(norm, x);
    let z = tape.linear(agg, w, b);
    tape.relu(z)
}

/// Per-agent feature bundle over the ego-graph members. Row 0 is the
/// center; row order matches `EgoGraph::members`.
#[derive(Clone, Debug)]
pub struct AgentChannels {
    pub states: Tensor,       // [n, d_s]
    pub policies: Tensor,     // [n, d_pi]
    pub trajectories: Tensor, // [n, d_h]
}

/// BayesG encoding: center rows of three independent GCN channels over
/// states, policy fingerprints, and trajectory features, concatenated.
#[allow(clippy::too_many_arguments)]
pub fn bayesg_encode(
    tape: &mut Tape,
    channels: (Var, Var, Var),
    a_eff: Var,
    obs_w: Var,
    obs_b: Var,
    pol_w: Var,
    pol_b: Var,
    traj_w: Var,
    traj_b: Var,
) -> Var {
    let (s, p, h) = channels;
    let cs = gcn_layer(tape, s, a_eff, obs_w, obs_b);
    let cp = gcn_layer(tape, p, a_eff, pol_w, pol_b);
    let ch = gcn_layer(tape, h, a_eff, traj_w, traj_b);
    let rs = tape.slice_rows(cs, 0, 1);
    let rp = tape.slice_rows(cp, 0, 1);
    let rh = tape.slice_rows(ch, 0, 1);
    tape.concat_cols(&[rs, rp, rh])
}

/// CommNet encoding: MLP_state([s_i, s_N]) + MLP_traj(mean(h_N)).
/// Neighborless agents use a zero mean vector.
pub fn commnet_encode(
    tape: &mut Tape,
    states: Var,       // [n, d_s]
    trajectories: Var, // [n, d_h]
    state_w: Var,
    state_b: Var,
    traj_w: Var,
    traj_b: Var,
) -> Var {
    let (n, d_s) = tape.value(states).rows_cols();
    let flat_states = tape.reshape(states, vec![1, n * d_s]);
    let state_term = mlp(tape, flat_states, state_w, state_b);
    let (_, d_h) = tape.value(trajectories).rows_cols();
    let mean_h = if n > 1 {
        let nbr = tape.slice_rows(trajectories, 1, n);
        let summed = col_mean(tape, nbr);
        summed
    } else {
        tape.constant(Tensor::matrix(1, d_h, vec![0.0; d_h]))
    };
    let traj_term = mlp(tape, mean_h, traj_w, traj_b);
    tape.add(state_term, traj_term)
}

/// NeurComm encoding: MLP_state([s_i, s_N]) || MLP_policy(pi_N) || MLP_traj(h_N).
#[allow(clippy::too_many_arguments)]
pub fn neurcomm_encode(
    tape: &mut Tape,
    states: Var,
    policies: Var,
    trajectories: Var,
    state_w: Var,
    state_b: Var,
    pol_w: Var,
    pol_b: Var,
    traj_w: Var,
    traj_b: Var,
) -> Var {
    let (n, d_s) = tape.value(states).rows_cols();
    let flat_states = tape.reshape(states, vec![1, n * d_s]);
    let state_term = mlp(tape, flat_states, state_w, state_b);
    let pol_in = neighbor_flat(tape, policies);
    let pol_term = mlp(tape, pol_in, pol_w, pol_b);
    let traj_in = neighbor_flat(tape, trajectories);
    let traj_term = mlp(tape, traj_in, traj_w, traj_b);
    tape.concat_cols(&[state_term, pol_term, traj_term])
}

/// IA2C encoding: local observation only.
pub fn ia2c_encode(tape: &mut Tape, states: Var, state_w: Var, state_b: Var) -> Var {
    let own = tape.slice_rows(states, 0, 1);
    mlp(tape, own, state_w, state_b)
}

fn mlp(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let z = tape.linear(x, w, b);
    tape.relu(z)
}

/// Flatten neighbor rows (rows 1..n) into a single row; a neighborless
/// agent yields a zero-width placeholder handled by the caller's weights.
fn neighbor_flat(tape: &mut Tape, x: Var) -> Var {
    let (n, d) = tape.value(x).rows_cols();
    if n > 1 {
        let nbr = tape.slice_rows(x, 1, n);
        tape.reshape(nbr, vec![1, (n - 1) * d])
    } else {
        tape.constant(Tensor::matrix(1, 1, vec![0.0]))
    }
}

fn col_mean(tape: &mut Tape, x: Var) -> Var {
    let (m, _) = tape.value(x).rows_cols();
    let ones = tape.constant(Tensor::matrix(1, m, vec![1.0 / m as f64; m]));
    tape.matmul(ones, x)
}

/// LSTM cell parameters: one stacked weight for the four gates.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub weight: Tensor, // [d_h + d_x, 4 d_h]
    pub bias: Tensor,   // [1, 4 d_h]
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(d_x: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        let lin = Linear::new(d_h + d_x, 4 * d_h, rng);
        Self { weight: lin.weight, bias: lin.bias, hidden: d_h }
    }
}

/// Standard LSTM recurrence. Gate order in the stacked weight:
/// input, forget, output, candidate.
pub fn lstm_step(
    tape: &mut Tape,
    h_prev: Var, // [1, d_h]
    c_prev: Var, // [1, d_h]
    x: Var,      // [1, d_x]
    w: Var,
    b: Var,
    d_h: usize,
) -> (Var, Var) {
    let hx = tape.concat_cols(&[h_prev, x]);
    let gates = tape.linear(hx, w, b);
    let i_raw = tape.slice_cols(gates, 0, d_h);
    let f_raw = tape.slice_cols(gates, d_h, 2 * d_h);
    let o_raw = tape.slice_cols(gates, 2 * d_h, 3 * d_h);
    let g_raw = tape.slice_cols(gates, 3 * d_h, 4 * d_h);
    let i = tape.sigmoid(i_raw);
    let f = tape.sigmoid(f_raw);
    let o = tape.sigmoid(o_raw);
    let g = tape.tanh(g_raw);
    let fc = tape.mul(f, c_prev);
    let ig = tape.mul(i, g);
    let c = tape.add(fc, ig);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc);
    (h, c)
}

/// Actor head: softmax over action logits, [1, n_actions].
pub fn actor_distribution(tape: &mut Tape, h: Var, w: Var, b: Var) -> Var {
    let logits = tape.linear(h, w, b);
    tape.softmax(logits)
}

/// Critic head: scalar value from the hidden state and one-hot encoded
/// neighbor actions.
pub fn critic_value(tape: &mut Tape, h: Var, neighbor_actions: Var, w: Var, b: Var) -> Var {
    let joined = tape.concat_cols(&[h, neighbor_actions]);
    let v = tape.linear(joined, w, b);
    tape.reshape(v, vec![])
}

/// Policy entropy -(sum p log p). The epsilon inside the log keeps a
/// fully saturated distribution from producing 0 * -inf.
pub fn policy_entropy(tape: &mut Tape, probs: Var) -> Var {
    let shifted = tape.add_scalar(probs, 1e-12);
    let logp = tape.log(shifted);
    let plogp = tape.mul(probs, logp);
    let s = tape.sum(plogp);
    tape.scale(s, -1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::check::finite_diff_check;
    use crate::rng::{derive, Stream};
    use rand::Rng;

    fn leaf(t: &mut Tape, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        t.leaf(Tensor::matrix(rows, cols, data))
    }

    #[test]
    fn gcn_normalization_two_fully_connected_members() {
        // A_eff + I all-ones (2x2): degrees 2, every normalized entry 0.5
        let mut t = Tape::new();
        let a = leaf(&mut t, 2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let norm = gcn_normalize(&mut t, a);
        for &v in t.value(norm).data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn gcn_fully_masked_is_identity_transform() {
        let mut t = Tape::new();
        let a = leaf(&mut t, 3, 3, vec![0.0; 9]);
        let norm = gcn_normalize(&mut t, a);
        assert_eq!(t.value(norm).data(), Tensor::eye(3).data());
    }

    #[test]
    fn gcn_relaxed_entry_matches_closed_form_2x2() {
        // A_eff = [[0, z],[z, 0]] with z = 0.5: degrees 1.5,
        // off-diagonal normalized entry = 0.5 / 1.5, diagonal = 1 / 1.5
        let z = 0.5;
        let mut t = Tape::new();
        let a = leaf(&mut t, 2, 2, vec![0.0, z, z, 0.0]);
        let norm = gcn_normalize(&mut t, a);
        let d = t.value(norm).data();
        assert!((d[0] - 1.0 / 1.5).abs() < 1e-12);
        assert!((d[1] - 0.5 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn gcn_gradients_match_finite_differences() {
        let mut rng = derive(21, Stream::ParamInit, 0);
        for _ in 0..25 {
            let x = Tensor::matrix(3, 2, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
            // strictly positive relaxed adjacency keeps relu kinks away
            let mut a = vec![0.0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        let v = rng.gen_range(0.1..0.9);
                        a[i * 3 + j] = v;
                        a[j * 3 + i] = v;
                    }
                }
            }
            let a = Tensor::matrix(3, 3, a);
            let w = Tensor::matrix(2, 4, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let b = Tensor::matrix(1, 4, (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect());
            let err = finite_diff_check(
                |t, v| {
                    let out = gcn_layer(t, v[0], v[1], v[2], v[3]);
                    t.mean(out)
                },
                &[x, a, w, b],
            );
            assert!(err < 1e-4, "rel err {err}");
        }
    }

    #[test]
    fn bayesg_zero_channels_zero_biases_gives_zero() {
        let mut t = Tape::new();
        let s = leaf(&mut t, 2, 3, vec![0.0; 6]);
        let p = leaf(&mut t, 2, 2, vec![0.0; 4]);
        let h = leaf(&mut t, 2, 4, vec![0.0; 8]);
        let a = leaf(&mut t, 2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let mk = |t: &mut Tape, din: usize| {
            let w = leaf(t, din, 5, vec![0.3; din * 5]);
            let b = leaf(t, 1, 5, vec![0.0; 5]);
            (w, b)
        };
        let (ow, ob) = mk(&mut t, 3);
        let (pw, pb) = mk(&mut t, 2);
        let (tw, tb) = mk(&mut t, 4);
        let out = bayesg_encode(&mut t, (s, p, h), a, ow, ob, pw, pb, tw, tb);
        assert!(t.value(out).data().iter().all(|&x| x == 0.0));
        assert_eq!(t.value(out).rows_cols(), (1, 15));
    }

    #[test]
    fn masked_encoding_is_independent_of_neighbor_features() {
        // with A_eff = 0, perturbing neighbor rows leaves the output
        // unchanged, exact equality
        let mut rng = derive(22, Stream::ParamInit, 1);
        let run = |nbr_scale: f64, rng_seed: u64| {
            let mut prng = derive(rng_seed, Stream::ParamInit, 0);
            let mut t = Tape::new();
            let mut sdat: Vec<f64> = (0..6).map(|_| prng.gen_range(-1.0..1.0)).collect();
            let mut pdat: Vec<f64> = (0..4).map(|_| prng.gen_range(-1.0..1.0)).collect();
            let mut hdat: Vec<f64> = (0..8).map(|_| prng.gen_range(-1.0..1.0)).collect();
            for v in sdat[3..].iter_mut() {
                *v *= nbr_scale;
            }
            for v in pdat[2..].iter_mut() {
                *v *= nbr_scale;
            }
            for v in hdat[4..].iter_mut() {
                *v *= nbr_scale;
            }
            let s = t.leaf(Tensor::matrix(2, 3, sdat));
            let p = t.leaf(Tensor::matrix(2, 2, pdat));
            let h = t.leaf(Tensor::matrix(2, 4, hdat));
            let a = t.leaf(Tensor::matrix(2, 2, vec![0.0; 4]));
            let mk = |t: &mut Tape, din: usize, prng: &mut rand_chacha::ChaCha8Rng| {
                let w = t.leaf(Tensor::matrix(
                    din,
                    5,
                    (0..din * 5).map(|_| prng.gen_range(-1.0..1.0)).collect(),
                ));
                let b = t.leaf(Tensor::matrix(
                    1,
                    5,
                    (0..5).map(|_| prng.gen_range(-1.0..1.0)).collect(),
                ));
                (w, b)
            };
            let (ow, ob) = mk(&mut t, 3, &mut prng);
            let (pw, pb) = mk(&mut t, 2, &mut prng);
            let (tw, tb) = mk(&mut t, 4, &mut prng);
            let out = bayesg_encode(&mut t, (s, p, h), a, ow, ob, pw, pb, tw, tb);
            t.value(out).data().to_vec()
        };
        for _ in 0..100 {
            let seed: u64 = rng.gen();
            assert_eq!(run(1.0, seed), run(7.5, seed));
        }
    }

    #[test]
    fn unmasked_encoding_depends_on_neighbor_features() {
        // with the full ego adjacency, perturbing neighbor features changes
        // the output whenever weights are nonzero (randomized check)
        let mut rng = derive(23, Stream::ParamInit, 2);
        let mut differing = 0;
        for trial in 0..100 {
            let run = |nbr_scale: f64| {
                let mut prng = derive(1000 + trial, Stream::ParamInit, 0);
                let mut t = Tape::new();
                let mut sdat: Vec<f64> = (0..6).map(|_| prng.gen_range(0.1..1.0)).collect();
                for v in sdat[3..].iter_mut() {
                    *v *= nbr_scale;
                }
                let s = t.leaf(Tensor::matrix(2, 3, sdat));
                let a = t.leaf(Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]));
                let w = t.leaf(Tensor::matrix(
                    3,
                    4,
                    (0..12).map(|_| prng.gen_range(0.1..1.0)).collect(),
                ));
                let b = t.leaf(Tensor::matrix(1, 4, vec![0.0; 4]));
                let out = gcn_layer(&mut t, s, a, w, b);
                t.value(out).data().to_vec()
            };
            if run(1.0) != run(2.0) {
                differing += 1;
            }
            let _ = rng.gen::<f64>();
        }
        assert_eq!(differing, 100);
    }

    #[test]
    fn single_member_bayesg_equals_self_mlp_path() {
        // a 1-member ego-graph reduces each GCN channel to
        // relu(x W + b): the normalized matrix is the 1x1 identity
        let mut prng = derive(24, Stream::ParamInit, 0);
        let x = Tensor::matrix(1, 3, (0..3).map(|_| prng.gen_range(-1.0..1.0)).collect());
        let w = Tensor::matrix(3, 4, (0..12).map(|_| prng.gen_range(-1.0..1.0)).collect());
        let b = Tensor::matrix(1, 4, (0..4).map(|_| prng.gen_range(-1.0..1.0)).collect());
        let mut t = Tape::new();
        let xv = t.leaf(x.clone());
        let av = t.leaf(Tensor::matrix(1, 1, vec![0.0]));
        let wv = t.leaf(w.clone());
        let bv = t.leaf(b.clone());
        let gcn = gcn_layer(&mut t, xv, av, wv, bv);
        let mut t2 = Tape::new();
        let xv2 = t2.leaf(x);
        let wv2 = t2.leaf(w);
        let bv2 = t2.leaf(b);
        let lin = t2.linear(xv2, wv2, bv2);
        let plain = t2.relu(lin);
        assert_eq!(t.value(gcn).data(), t2.value(plain).data());
    }

    #[test]
    fn commnet_zero_case_and_mean_idempotence() {
        // zero inputs, zero biases -> zero vector
        let mut t = Tape::new();
        let s = leaf(&mut t, 1, 2, vec![0.0; 2]);
        let h = leaf(&mut t, 1, 3, vec![0.0; 3]);
        let sw = leaf(&mut t, 2, 4, vec![0.5; 8]);
        let sb = leaf(&mut t, 1, 4, vec![0.0; 4]);
        let tw = leaf(&mut t, 3, 4, vec![0.5; 12]);
        let tb = leaf(&mut t, 1, 4, vec![0.0; 4]);
        let out = commnet_encode(&mut t, s, h, sw, sb, tw, tb);
        assert!(t.value(out).data().iter().all(|&x| x == 0.0));

        // mean-pool idempotence on identical rows: the trajectory term for
        // two identical neighbors equals that for one
        let traj_term = |rows: Vec<Vec<f64>>| {
            let mut t = Tape::new();
            let n = rows.len() + 1;
            let mut data = vec![0.0; 3]; // center row, ignored by the mean
            for r in &rows {
                data.extend_from_slice(r);
            }
            let h = t.leaf(Tensor::matrix(n, 3, data));
            let s = t.leaf(Tensor::matrix(n, 1, vec![0.0; n]));
            let sw = t.leaf(Tensor::matrix(n, 4, vec![0.0; 4 * n]));
            let sb = t.leaf(Tensor::matrix(1, 4, vec![0.0; 4]));
            let tw = t.leaf(Tensor::matrix(3, 4, (0..12).map(|i| 0.1 * i as f64).collect()));
            let tb = t.leaf(Tensor::matrix(1, 4, vec![0.05; 4]));
            let out = commnet_encode(&mut t, s, h, sw, sb, tw, tb);
            t.value(out).data().to_vec()
        };
        let row = vec![0.4, -0.2, 0.9];
        assert_eq!(traj_term(vec![row.clone()]), traj_term(vec![row.clone(), row]));
    }

    #[test]
    fn commnet_manual_forward_oracle_d2() {
        // hand-sized case: 1 neighbor, d_s = d_h = 2, embed 1
        // state term: relu([s_i s_n] . w_s) ; traj term: relu(h_n . w_t)
        let mut t = Tape::new();
        let s = leaf(&mut t, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let h = leaf(&mut t, 2, 2, vec![0.0, 0.0, 0.5, -1.0]);
        let sw = leaf(&mut t, 4, 1, vec![0.1, 0.2, 0.3, 0.4]);
        let sb = leaf(&mut t, 1, 1, vec![0.05]);
        let tw = leaf(&mut t, 2, 1, vec![1.0, 0.5]);
        let tb = leaf(&mut t, 1, 1, vec![0.0]);
        let out = commnet_encode(&mut t, s, h, sw, sb, tw, tb);
        // state: 1*.1 + 2*.2 + 3*.3 + 4*.4 + .05 = 3.05; traj: .5 - .5 = 0
        assert!((t.value(out).item() - 3.05).abs() < 1e-12);
    }

    #[test]
    fn neurcomm_zero_case_and_manual_oracle() {
        let mut t = Tape::new();
        let s = leaf(&mut t, 2, 1, vec![0.0, 0.0]);
        let p = leaf(&mut t, 2, 2, vec![0.0; 4]);
        let h = leaf(&mut t, 2, 1, vec![0.0, 0.0]);
        let sw = leaf(&mut t, 2, 2, vec![0.4; 4]);
        let sb = leaf(&mut t, 1, 2, vec![0.0; 2]);
        let pw = leaf(&mut t, 2, 2, vec![0.4; 4]);
        let pb = leaf(&mut t, 1, 2, vec![0.0; 2]);
        let tw = leaf(&mut t, 1, 2, vec![0.4; 2]);
        let tb = leaf(&mut t, 1, 2, vec![0.0; 2]);
        let out = neurcomm_encode(&mut t, s, p, h, sw, sb, pw, pb, tw, tb);
        assert!(t.value(out).data().iter().all(|&x| x == 0.0));
        assert_eq!(t.value(out).rows_cols(), (1, 6));

        // manual oracle, d = 2 everywhere, embed 1
        let mut t = Tape::new();
        let s = leaf(&mut t, 2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let p = leaf(&mut t, 2, 2, vec![0.5, 0.5, 0.25, 0.75]);
        let h = leaf(&mut t, 2, 2, vec![0.0, 0.0, 1.0, -1.0]);
        let sw = leaf(&mut t, 4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let sb = leaf(&mut t, 1, 1, vec![0.0]);
        let pw = leaf(&mut t, 2, 1, vec![2.0, 4.0]);
        let pb = leaf(&mut t, 1, 1, vec![0.0]);
        let tw = leaf(&mut t, 2, 1, vec![1.0, 1.0]);
        let tb = leaf(&mut t, 1, 1, vec![0.5]);
        let out = neurcomm_encode(&mut t, s, p, h, sw, sb, pw, pb, tw, tb);
        // state: 1*1 + 0*2 + 0*3 + 1*4 = 5; policy: .25*2 + .75*4 = 3.5;
        // traj: relu(1 - 1 + .5) = .5
        assert_eq!(t.value(out).data(), &[5.0, 3.5, 0.5]);
    }

    #[test]
    fn lstm_zero_weights_zero_state() {
        let mut t = Tape::new();
        let h = leaf(&mut t, 1, 2, vec![0.0; 2]);
        let c = leaf(&mut t, 1, 2, vec![0.0; 2]);
        let x = leaf(&mut t, 1, 3, vec![1.0, -2.0, 0.5]);
        let w = leaf(&mut t, 5, 8, vec![0.0; 40]);
        let b = leaf(&mut t, 1, 8, vec![0.0; 8]);
        let (h1, _) = lstm_step(&mut t, h, c, x, w, b, 2);
        assert!(t.value(h1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_forget_gate_saturation_limit() {
        // huge forget bias, zero input gate bias offsets: c ~ c_prev + i*g
        let d_h = 1;
        let mut t = Tape::new();
        let h = leaf(&mut t, 1, 1, vec![0.0]);
        let c = leaf(&mut t, 1, 1, vec![0.7]);
        let x = leaf(&mut t, 1, 1, vec![0.3]);
        let w = leaf(&mut t, 2, 4, vec![0.0; 8]);
        // gate order i, f, o, g
        let b = leaf(&mut t, 1, 4, vec![0.0, 50.0, 0.0, 0.2]);
        let (_, c1) = lstm_step(&mut t, h, c, x, w, b, d_h);
        let expected = 0.7 + 0.5 * (0.2f64).tanh();
        assert!((t.value(c1).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn lstm_scalar_hand_computation() {
        // 1-dim state, hand-computed cell
        let (wh, wx) = (0.5, -0.3);
        let bias = [0.1, 0.2, -0.1, 0.4];
        let (h0, c0, x0): (f64, f64, f64) = (0.2, -0.4, 0.9);
        let pre: Vec<f64> = bias.iter().map(|b| b + wh * h0 + wx * x0).collect();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (i, f, o, g) = (sig(pre[0]), sig(pre[1]), sig(pre[2]), pre[3].tanh());
        let c_expect = f * c0 + i * g;
        let h_expect = o * c_expect.tanh();

        let mut t = Tape::new();
        let h = leaf(&mut t, 1, 1, vec![h0]);
        let c = leaf(&mut t, 1, 1, vec![c0]);
        let x = leaf(&mut t, 1, 1, vec![x0]);
        let w = leaf(&mut t, 2, 4, vec![wh, wh, wh, wh, wx, wx, wx, wx]);
        let b = leaf(&mut t, 1, 4, bias.to_vec());
        let (h1, c1) = lstm_step(&mut t, h, c, x, w, b, 1);
        assert!((t.value(h1).item() - h_expect).abs() < 1e-12);
        assert!((t.value(c1).item() - c_expect).abs() < 1e-12);
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let mut rng = derive(25, Stream::ParamInit, 3);
        for _ in 0..25 {
            let d_h = 2;
            let d_x = 3;
            let gen = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect()
            };
            let err = finite_diff_check(
                |t, v| {
                    let (h1, c1) = lstm_step(t, v[0], v[1], v[2], v[3], v[4], d_h);
                    let joined = t.concat_cols(&[h1, c1]);
                    t.mean(joined)
                },
                &[
                    Tensor::matrix(1, d_h, gen(d_h, &mut rng)),
                    Tensor::matrix(1, d_h, gen(d_h, &mut rng)),
                    Tensor::matrix(1, d_x, gen(d_x, &mut rng)),
                    Tensor::matrix(d_h + d_x, 4 * d_h, gen((d_h + d_x) * 4 * d_h, &mut rng)),
                    Tensor::matrix(1, 4 * d_h, gen(4 * d_h, &mut rng)),
                ],
            );
            assert!(err < 1e-4, "rel err {err}");
        }
    }

    #[test]
    fn actor_head_normalization_and_uniformity() {
        // zero logits -> uniform; normalization holds across random draws
        let mut t = Tape::new();
        let h = leaf(&mut t, 1, 3, vec![0.4, -0.1, 0.0]);
        let w = leaf(&mut t, 3, 4, vec![0.0; 12]);
        let b = leaf(&mut t, 1, 4, vec![0.0; 4]);
        let pi = actor_distribution(&mut t, h, w, b);
        for &p in t.value(pi).data() {
            assert!((p - 0.25).abs() < 1e-15);
        }
        let ent = policy_entropy(&mut t, pi);
        assert!((t.value(ent).item() - (4.0f64).ln()).abs() < 1e-9);

        let mut rng = derive(26, Stream::ParamInit, 4);
        for _ in 0..1000 {
            let mut t = Tape::new();
            let h = t.leaf(Tensor::matrix(1, 3, (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect()));
            let w = t.leaf(Tensor::matrix(3, 5, (0..15).map(|_| rng.gen_range(-3.0..3.0)).collect()));
            let b = t.leaf(Tensor::matrix(1, 5, (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect()));
            let pi = actor_distribution(&mut t, h, w, b);
            let total: f64 = t.value(pi).data().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn critic_head_is_finite_scalar_and_differentiable() {
        let mut rng = derive(27, Stream::ParamInit, 5);
        for _ in 0..25 {
            let gen = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
            };
            let err = finite_diff_check(
                |t, v| critic_value(t, v[0], v[1], v[2], v[3]),
                &[
                    Tensor::matrix(1, 3, gen(3, &mut rng)),
                    Tensor::matrix(1, 4, vec![0.0, 1.0, 0.0, 0.0]),
                    Tensor::matrix(7, 1, gen(7, &mut rng)),
                    Tensor::matrix(1, 1, gen(1, &mut rng)),
                ],
            );
            assert!(err < 1e-4, "rel err {err}");
        }
    }
}
