use crate::error::{shape_err, Result};
use crate::graph::{ParamId, Weights};
use crate::tensor::Float;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Float> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Float>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(shape_err(
            "adam_step",
            format!(
                "params {}, grads {}, moments {}/{} differ in length",
                params.len(),
                grads.len(),
                state.m.len(),
                state.v.len()
            ),
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one = T::one();
    let c1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(t));
    let c2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(t));
    let lr = T::from_f64_lossy(lr);
    let eps = T::from_f64_lossy(cfg.eps);
    for i in 0..params.len() {
        let g = grads[i];
        let m = b1 * state.m[i] + (one - b1) * g;
        let v = b2 * state.v[i] + (one - b2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every trainable tensor of a [`Weights`] set, reading the
/// gradients stored in each tensor's gradient slot.
#[derive(Clone, Debug)]
pub struct Optimizer<T: Float = f32> {
    cfg: AdamConfig,
    states: Vec<Option<AdamState<T>>>,
}

impl<T: Float> Optimizer<T> {
    pub fn new(weights: &Weights<T>, cfg: AdamConfig) -> Self {
        let states = weights
            .ids()
            .map(|id| {
                weights
                    .trainable_ids()
                    .any(|t| t == id)
                    .then(|| AdamState::new(weights.get(id).len()))
            })
            .collect();
        Self { cfg, states }
    }

    pub fn state(&self, id: ParamId) -> Option<&AdamState<T>> {
        self.states.get(id.0).and_then(Option::as_ref)
    }

    /// Applies one update and clears the consumed gradients. Tensors without
    /// a stored gradient are left untouched.
    pub fn step(&mut self, weights: &mut Weights<T>, lr: f64) -> Result<()> {
        for (i, state) in self.states.iter_mut().enumerate() {
            let Some(state) = state else { continue };
            let tensor = weights.get_mut(ParamId(i));
            let Some(grad) = tensor.take_grad() else { continue };
            adam_step(tensor.data_mut(), &grad, state, lr, &self.cfg)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: AdamConfig = AdamConfig {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0f64, -2.0, 3.5];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 1e-3, &CFG).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0f64];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 1e-3, &CFG).unwrap();
        assert!((p[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_matches_scalar_oracle() {
        // Independent scalar recurrence for f(p) = p^2.
        let (mut q, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut oracle = Vec::new();
        for t in 1..=10 {
            let g = 2.0 * q;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            q -= 0.1 * mh / (vh.sqrt() + 1e-8);
            oracle.push(q);
        }
        let mut p = vec![1.0f64];
        let mut s = AdamState::new(1);
        let mut prev = 1.0f64;
        for expect in oracle {
            let g = 2.0 * p[0];
            adam_step(&mut p, &[g], &mut s, 0.1, &CFG).unwrap();
            assert!((p[0] - expect).abs() < 1e-12);
            assert!(p[0].abs() < prev.abs());
            prev = p[0];
        }
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = vec![0.3f32, -0.7];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[5.0, -1.0], &mut s, 0.0, &CFG).unwrap();
        assert_eq!(p, vec![0.3, -0.7]);
        assert!(s.v.iter().all(|&v| v >= 0.0));
    }
}
