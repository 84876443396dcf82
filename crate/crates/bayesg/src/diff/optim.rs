//! Parameter updates: plain SGD or Adam, with global-norm gradient
//! clipping applied before each update. A NaN gradient aborts the update
//! and surfaces a diagnostic instead of corrupting parameters.

use super::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter '{name}' at step {step}")]
    NonFiniteGradient { name: String, step: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global-norm clip threshold over all gradients of one update.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { kind: OptimKind::Adam, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, clip_norm: 40.0 }
    }
}

/// Per-parameter optimizer slot (Adam moments; unused for SGD).
#[derive(Clone, Debug, Default)]
pub struct ParamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

pub struct Optimizer {
    pub config: OptimConfig,
    pub step: u64,
    pub states: Vec<ParamState>,
}

impl Optimizer {
    pub fn new(config: OptimConfig, param_count: usize) -> Self {
        Self { config, step: 0, states: vec![ParamState::default(); param_count] }
    }

    /// Apply one update across a parameter group. `params`, `grads`, and
    /// `lrs` are parallel slices; each entry has its own learning rate so
    /// actor/critic/mask families can differ within one step counter.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        lrs: &[f64],
        names: &[&str],
    ) -> Result<(), OptimError> {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), lrs.len());
        for (gi, g) in grads.iter().enumerate() {
            if !g.all_finite() {
                return Err(OptimError::NonFiniteGradient {
                    name: names.get(gi).unwrap_or(&"?").to_string(),
                    step: self.step,
                });
            }
        }
        self.step += 1;

        let total_sq: f64 = grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum();
        let norm = total_sq.sqrt();
        let clip = if norm > self.config.clip_norm { self.config.clip_norm / norm } else { 1.0 };

        for (pi, param) in params.iter_mut().enumerate() {
            let lr = lrs[pi];
            let gdat = grads[pi].data();
            match self.config.kind {
                OptimKind::Sgd => {
                    for (p, &g) in param.data_mut().iter_mut().zip(gdat) {
                        *p -= lr * clip * g;
                    }
                }
                OptimKind::Adam => {
                    let st = &mut self.states[pi];
                    if st.m.len() != gdat.len() {
                        st.m = vec![0.0; gdat.len()];
                        st.v = vec![0.0; gdat.len()];
                    }
                    let b1 = self.config.beta1;
                    let b2 = self.config.beta2;
                    let t = self.step as i32;
                    let bc1 = 1.0 - b1.powi(t);
                    let bc2 = 1.0 - b2.powi(t);
                    for (k, (p, &g0)) in param.data_mut().iter_mut().zip(gdat).enumerate() {
                        let g = clip * g0;
                        st.m[k] = b1 * st.m[k] + (1.0 - b1) * g;
                        st.v[k] = b2 * st.v[k] + (1.0 - b2) * g * g;
                        let mhat = st.m[k] / bc1;
                        let vhat = st.v[k] / bc2;
                        *p -= lr * mhat / (vhat.sqrt() + self.config.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}
