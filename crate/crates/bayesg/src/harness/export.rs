//! Latent-graph export: the global latent graph aggregated from per-agent
//! ego-graph masks. Entry (i, j) is the retention probability sigma(phi_ij)
//! of i's edge to neighbor j (0 for non-edges, 1 on the diagonal); rows may
//! be asymmetric because masks are per-agent.

use crate::diff::{sigmoid_scalar, Tape};
use crate::mask::EdgeLogitNet;
use crate::trainer::{build_mask_feats, MaskMode, MaskParams, Method, NeighborView, Trainer};
use std::io::Write;
use std::path::Path;

/// Dense N x N retention-probability matrix, row-major. Feature-conditioned
/// masks are probed at the freshly reset environment state (zero queues,
/// zero fingerprints and trajectories) under `probe_seed`.
pub fn latent_graph_matrix(trainer: &Trainer, probe_seed: u64) -> Vec<f64> {
    let n = trainer.env.node_count();
    let mut env = trainer.env.clone();
    env.reset(probe_seed);
    let obs: Vec<Vec<f64>> = (0..n).map(|i| env.observe(i)).collect();

    let mut mat = vec![0.0; n * n];
    for slot in &trainer.slots {
        let i = slot.id;
        mat[i * n + i] = 1.0;
        let neighbors = &slot.ego.members()[1..];
        let probs: Vec<f64> = match (&slot.params.mask, trainer.cfg.mask_mode) {
            (Some(MaskParams::Free(t)), _) => {
                t.data().iter().map(|&p| sigmoid_scalar(p)).collect()
            }
            (Some(MaskParams::Network(net)), _) => {
                let zeros_fp = vec![0.0; slot.dims.fingerprint];
                let zeros_h = vec![0.0; slot.dims.lstm];
                let view = NeighborView {
                    obs: neighbors.iter().map(|&j| obs[j].clone()).collect(),
                    fp: vec![zeros_fp.clone(); neighbors.len()],
                    h: vec![zeros_h.clone(); neighbors.len()],
                };
                let feats = build_mask_feats(
                    trainer.cfg.mask_features,
                    &obs[i],
                    &zeros_fp,
                    &zeros_h,
                    &view,
                );
                let mut tape = Tape::new();
                let fv = tape.constant(feats);
                let w = tape.constant(net.weight.clone());
                let b = tape.constant(net.bias.clone());
                let phi = EdgeLogitNet::logits_on_tape(&mut tape, w, b, fv);
                tape.value(phi).data().iter().map(|&p| sigmoid_scalar(p)).collect()
            }
            (None, MaskMode::Random) if trainer.cfg.method == Method::BayesG => {
                vec![0.5; neighbors.len()]
            }
            // unmasked communication: every physical edge retained
            (None, _) => vec![1.0; neighbors.len()],
        };
        for (&j, &p) in neighbors.iter().zip(&probs) {
            mat[i * n + j] = p;
        }
    }
    mat
}

pub fn write_matrix_csv(path: &Path, n: usize, mat: &[f64]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| mat[i * n + j].to_string()).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()
}

pub fn write_edge_list_csv(path: &Path, n: usize, mat: &[f64]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "from,to,retention")?;
    for i in 0..n {
        for j in 0..n {
            if i != j && mat[i * n + j] > 0.0 {
                writeln!(f, "{i},{j},{}", mat[i * n + j])?;
            }
        }
    }
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::graph::EnvGraph;
    use crate::trainer::TrainConfig;

    fn cfg(method: Method, mode: MaskMode, free: Option<f64>) -> TrainConfig {
        TrainConfig {
            rollout_len: 8,
            episodes: 1,
            embed_dim: 4,
            lstm_dim: 6,
            method,
            mask_mode: mode,
            free_logit_init: free,
            ..TrainConfig::default()
        }
    }

    fn env(rows: usize, cols: usize) -> EnvConfig {
        let mut e = EnvConfig::new(EnvGraph::grid(rows, cols));
        e.episode_len = 16;
        e
    }

    #[test]
    fn zero_logits_export_half_probabilities() {
        let tr = Trainer::new(cfg(Method::BayesG, MaskMode::Learned, Some(0.0)), env(2, 2), 1);
        let m = latent_graph_matrix(&tr, 7);
        let g = &tr.env.config.graph;
        let n = g.node_count();
        for i in 0..n {
            for j in 0..n {
                let expected = if i == j {
                    1.0
                } else if g.has_edge(i, j) {
                    0.5
                } else {
                    0.0
                };
                assert_eq!(m[i * n + j], expected, "({i},{j})");
            }
        }
    }

    #[test]
    fn support_equals_adjacency_for_all_modes() {
        for (method, mode) in [
            (Method::BayesG, MaskMode::Learned),
            (Method::BayesG, MaskMode::None),
            (Method::BayesG, MaskMode::Random),
            (Method::CommNet, MaskMode::Learned),
        ] {
            let tr = Trainer::new(cfg(method, mode, None), env(3, 3), 2);
            let m = latent_graph_matrix(&tr, 3);
            let g = &tr.env.config.graph;
            let n = g.node_count();
            for i in 0..n {
                for j in 0..n {
                    let on_support = i == j || g.has_edge(i, j);
                    assert_eq!(m[i * n + j] > 0.0, on_support, "{method:?} {mode:?} ({i},{j})");
                    assert!(m[i * n + j] <= 1.0);
                }
            }
        }
    }

    #[test]
    fn trained_network_mask_may_be_asymmetric() {
        let mut tr = Trainer::new(cfg(Method::BayesG, MaskMode::Learned, None), env(3, 3), 11);
        tr.train().unwrap();
        let m = latent_graph_matrix(&tr, 5);
        let n = tr.env.node_count();
        let asym = tr
            .env
            .config
            .graph
            .edges()
            .iter()
            .any(|&(i, j)| m[i * n + j] != m[j * n + i]);
        assert!(asym, "per-agent masks should not be forced symmetric");
    }

    #[test]
    fn csv_shapes() {
        let tr = Trainer::new(cfg(Method::BayesG, MaskMode::Learned, Some(1.0)), env(2, 2), 1);
        let m = latent_graph_matrix(&tr, 7);
        let dir = tempfile::tempdir().unwrap();
        let mp = dir.path().join("latent.csv");
        let ep = dir.path().join("edges.csv");
        write_matrix_csv(&mp, 4, &m).unwrap();
        write_edge_list_csv(&ep, 4, &m).unwrap();
        let text = std::fs::read_to_string(&mp).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().all(|l| l.split(',').count() == 4));
        let text = std::fs::read_to_string(&ep).unwrap();
        // 8 directed ego edges + header
        assert_eq!(text.lines().count(), 9);
    }
}
