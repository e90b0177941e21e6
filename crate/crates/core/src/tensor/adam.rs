//! Adam optimizer with bias correction.

use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamHyper {
    pub fn with_lr(lr: f32) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamHyper,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor], hyper: AdamHyper) -> Self {
        Self {
            hyper,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update over a parameter collection. NaN anywhere in the gradients
/// rejects the whole step and leaves parameters and state untouched.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::InvalidArg {
            op: "adam_step",
            msg: format!(
                "parameter/gradient/state counts differ: {} vs {} vs {}",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if g.data().iter().any(|v| v.is_nan()) {
            return Err(TensorError::NanGradient);
        }
    }

    state.t += 1;
    let h = state.hyper;
    let bc1 = 1.0 - (h.beta1 as f64).powi(state.t as i32);
    let bc2 = 1.0 - (h.beta2 as f64).powi(state.t as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for (j, (&gv, pv)) in g.data().iter().zip(p.data_mut()).enumerate() {
            m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * gv;
            v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * gv * gv;
            let m_hat = m[j] as f64 / bc1;
            let v_hat = v[j] as f64 / bc2;
            *pv -= (h.lr as f64 * m_hat / (v_hat.sqrt() + h.eps as f64)) as f32;
        }
    }
    Ok(())
}
