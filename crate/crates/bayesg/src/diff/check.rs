//! Central finite-difference gradient checking. Used only by tests and the
//! acceptance suite; independent of the reverse sweep it validates.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Build the scalar function twice per perturbed coordinate and compare the
/// analytic gradient against central differences. Returns the worst
/// relative error max(|g_ad - g_fd| / max(1, |g_fd|)) across all leaf
/// coordinates.
pub fn finite_diff_check(
    f: impl Fn(&mut Tape, &[Var]) -> Var,
    leaves: &[Tensor],
) -> f64 {
    let eval = |inputs: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
        let root = f(&mut t, &vars);
        t.value(root).item()
    };

    // analytic gradients
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|x| tape.leaf(x.clone())).collect();
    let root = f(&mut tape, &vars);
    let grads = tape.backward(root);

    let mut worst: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        let g_ad = grads.get(vars[li], &tape);
        for ci in 0..leaf.len() {
            let mut plus: Vec<Tensor> = leaves.to_vec();
            plus[li].data_mut()[ci] += FD_STEP;
            let mut minus: Vec<Tensor> = leaves.to_vec();
            minus[li].data_mut()[ci] -= FD_STEP;
            let g_fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let denom = g_fd.abs().max(1.0);
            let err = (g_ad.data()[ci] - g_fd).abs() / denom;
            worst = worst.max(err);
        }
    }
    worst
}
