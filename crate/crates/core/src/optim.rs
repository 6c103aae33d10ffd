//! Adam with bias-corrected moment estimates.

use crate::error::{ensure_dim, invalid, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> AdamConfig<T> {
    pub fn new(learning_rate: T, beta1: T, beta2: T, epsilon: T) -> Result<Self> {
        let unit = |b: T| b > T::zero() && b < T::one();
        if !(learning_rate > T::zero()) || !unit(beta1) || !unit(beta2) || !(epsilon > T::zero()) {
            return Err(invalid("adam needs lr > 0, 0 < beta1, beta2 < 1 and epsilon > 0"));
        }
        Ok(Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        })
    }
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        Self {
            learning_rate: T::lit(1e-4),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
        }
    }
}

/// First and second moments for a list of tensors, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes
            .into_iter()
            .map(|n| (vec![T::zero(); n], vec![T::zero(); n]))
            .unzip();
        Self { t: 0, m, v }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }
}

/// One Adam update applied in place to every tensor.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    cfg: &AdamConfig<T>,
) -> Result<()> {
    ensure_dim("gradient tensors", params.len(), grads.len())?;
    ensure_dim("adam state tensors", params.len(), state.m.len())?;
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        ensure_dim("gradient length", p.len(), g.len())?;
        ensure_dim("adam state length", p.len(), m.len())?;
    }
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = T::one() - b1.powi(state.t);
    let c2 = T::one() - b2.powi(state.t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] = p[i] - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}
