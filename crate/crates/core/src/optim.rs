//! Adam with bias correction and per-position freezing.
//!
//! For every parameter not frozen, with `t` the step count after increment:
//!
//! ```text
//! m ← β1 m + (1 − β1) g
//! v ← β2 v + (1 − β2) g²
//! w ← w − lr · (m / (1 − β1ᵗ)) / (sqrt(v / (1 − β2ᵗ)) + ε)
//! ```
//!
//! Frozen weights keep their value, `m` and `v` bit-for-bit. Biases are never
//! frozen. L2 regularisation is expected inside the gradient.
//!
//! Gradients, moments and weights within a few orders of magnitude of the
//! subnormal range are flushed to zero (see [`Scalar::flush`]). Weights fed
//! only by the L2 term decay geometrically, and subnormal arithmetic would
//! otherwise slow training several-fold.

use ndarray::Zip;
use thiserror::Error;

use crate::net::{DenseNetwork, Gradients};
use crate::prune::ZeroPositionSet;
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient in layer {0}")]
    NonFiniteGradient(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> AdamConfig<T> {
    /// Given learning rate with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn with_lr(lr: T) -> Self {
        Self {
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
        }
    }
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        Self::with_lr(T::of(0.005))
    }
}

/// First/second moments per parameter tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig<T>,
    pub m: Gradients<T>,
    pub v: Gradients<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &DenseNetwork<T>, config: AdamConfig<T>) -> Self {
        Self {
            config,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
        }
    }

    /// Zero moments and step count; hyperparameters are kept.
    pub fn reset(&mut self) {
        for g in [&mut self.m, &mut self.v] {
            g.weights.iter_mut().for_each(|w| w.fill(T::zero()));
            g.biases.iter_mut().for_each(|b| b.fill(T::zero()));
        }
        self.t = 0;
    }

    pub fn is_congruent(&self, net: &DenseNetwork<T>) -> bool {
        self.m.is_congruent(net) && self.v.is_congruent(net)
    }

    /// One Adam update of `net` from `grads`, skipping positions in `frozen`.
    pub fn step(
        &mut self,
        net: &mut DenseNetwork<T>,
        grads: &Gradients<T>,
        frozen: Option<&ZeroPositionSet>,
    ) -> Result<(), OptimError> {
        if !grads.is_congruent(net) || !self.is_congruent(net) {
            return Err(OptimError::ShapeMismatch(
                "gradients or optimizer state do not match the network".into(),
            ));
        }
        if let Some(z) = frozen {
            if !z.is_compatible(net) {
                return Err(OptimError::ShapeMismatch(
                    "frozen mask does not match the network".into(),
                ));
            }
        }
        if let Some(layer) = grads.first_non_finite() {
            return Err(OptimError::NonFiniteGradient(layer));
        }

        self.t += 1;
        let c = self.config;
        let exponent = i32::try_from(self.t).unwrap_or(i32::MAX);
        let correction1 = T::one() - c.beta1.powi(exponent);
        let correction2 = T::one() - c.beta2.powi(exponent);
        let update = Update {
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
            correction1,
            correction2,
        };

        for layer in 0..net.num_layers() {
            let (mut weights, mut bias) = net.params_mut(layer);
            let weights = weights.as_slice_mut().expect("row-major weights");
            let m = self.m.weights[layer].as_slice_mut().expect("row-major moments");
            let v = self.v.weights[layer].as_slice_mut().expect("row-major moments");
            let g = grads.weights[layer].as_slice().expect("row-major gradients");
            match frozen {
                Some(z) => {
                    let mask = z.layer_mask(layer);
                    for i in 0..weights.len() {
                        if !mask[i] {
                            update.apply(&mut weights[i], &mut m[i], &mut v[i], g[i]);
                        }
                    }
                }
                None => {
                    for i in 0..weights.len() {
                        update.apply(&mut weights[i], &mut m[i], &mut v[i], g[i]);
                    }
                }
            }
            Zip::from(&mut bias)
                .and(&mut self.m.biases[layer])
                .and(&mut self.v.biases[layer])
                .and(&grads.biases[layer])
                .for_each(|w, m, v, &g| update.apply(w, m, v, g));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Update<T> {
    lr: T,
    beta1: T,
    beta2: T,
    epsilon: T,
    correction1: T,
    correction2: T,
}

impl<T: Scalar> Update<T> {
    #[inline]
    fn apply(&self, w: &mut T, m: &mut T, v: &mut T, g: T) {
        let g = g.flush();
        *m = (self.beta1 * *m + (T::one() - self.beta1) * g).flush();
        *v = (self.beta2 * *v + (T::one() - self.beta2) * g * g).flush();
        let m_hat = *m / self.correction1;
        let v_hat = *v / self.correction2;
        *w = (*w - self.lr * m_hat / (v_hat.sqrt() + self.epsilon)).flush();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Architecture, DenseLayer};
    use crate::prune::{commit, PruneSelection, Position};
    use ndarray::array;

    fn scalar_net(w: f64) -> DenseNetwork<f64> {
        DenseNetwork::from_layers(vec![DenseLayer {
            weights: array![[w]],
            bias: array![0.0],
        }])
        .unwrap()
    }

    fn scalar_grad(g: f64) -> Gradients<f64> {
        Gradients {
            weights: vec![array![[g]]],
            biases: vec![array![0.0]],
        }
    }

    #[test]
    fn worked_single_step() {
        let mut net = scalar_net(1.0);
        let mut adam = AdamState::new(&net, AdamConfig::with_lr(0.005));
        adam.step(&mut net, &scalar_grad(0.5), None).unwrap();
        approx::assert_relative_eq!(adam.m.weights[0][[0, 0]], 0.05, epsilon = 1e-15);
        approx::assert_relative_eq!(adam.v.weights[0][[0, 0]], 0.00025, epsilon = 1e-15);
        // 1 - 0.005 * 0.5 / (0.5 + 1e-8)
        let expected = 1.0 - 0.005 * 0.5 / (0.5 + 1e-8);
        approx::assert_relative_eq!(net.weights(0)[[0, 0]], expected, epsilon = 1e-15);
        assert_eq!(format!("{:.6}", net.weights(0)[[0, 0]]), "0.995000");
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op_from_fresh_state() {
        let arch = Architecture::new(vec![4, 3, 2]).unwrap();
        let mut net = DenseNetwork::<f64>::init(&arch, 3);
        let before = net.clone();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        adam.step(&mut net, &Gradients::zeros_like(&before), None).unwrap();
        assert!(net.bits_eq(&before));
    }

    #[test]
    fn frozen_positions_ignore_huge_gradients() {
        let mut net = DenseNetwork::from_layers(vec![DenseLayer {
            weights: array![[0.3, -0.2]],
            bias: array![0.1],
        }])
        .unwrap();
        let mut z = ZeroPositionSet::for_network(&net);
        let sel = PruneSelection::<f64> {
            positions: vec![Position::new(0, 0, 1)],
            thresholds: vec![],
        };
        commit(&mut z, &sel, &mut net).unwrap();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let grads = Gradients {
            weights: vec![array![[1.0, 1e30]]],
            biases: vec![array![1.0]],
        };
        for _ in 0..5 {
            adam.step(&mut net, &grads, Some(&z)).unwrap();
        }
        assert_eq!(net.weights(0)[[0, 1]].to_bits(), 0.0f64.to_bits());
        assert_eq!(adam.m.weights[0][[0, 1]], 0.0);
        assert_eq!(adam.v.weights[0][[0, 1]], 0.0);
        assert!(net.weights(0)[[0, 0]] < 0.3);
        assert_eq!(adam.t, 5);
    }

    #[test]
    fn reset_restores_fresh_behaviour() {
        let arch = Architecture::new(vec![3, 2]).unwrap();
        let start = DenseNetwork::<f64>::init(&arch, 1);
        let mut grads = Gradients::zeros_like(&start);
        grads.weights[0].fill(0.25);
        grads.biases[0].fill(-0.5);

        let mut fresh = AdamState::new(&start, AdamConfig::with_lr(0.01));
        let mut a = start.clone();
        fresh.step(&mut a, &grads, None).unwrap();

        let mut used = AdamState::new(&start, AdamConfig::with_lr(0.01));
        let mut scratch = start.clone();
        for _ in 0..3 {
            used.step(&mut scratch, &grads, None).unwrap();
        }
        used.reset();
        let snapshot = used.clone();
        used.reset();
        assert_eq!(used, snapshot);
        assert_eq!(used.config.lr, 0.01);
        assert_eq!(used.t, 0);

        let mut b = start.clone();
        used.step(&mut b, &grads, None).unwrap();
        assert!(a.bits_eq(&b));
        assert_eq!(fresh, used);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut net = scalar_net(1.0);
        let mut adam = AdamState::new(&net, AdamConfig::default());
        assert!(matches!(
            adam.step(&mut net, &scalar_grad(f64::NAN), None),
            Err(OptimError::NonFiniteGradient(0))
        ));
        let wrong = Gradients {
            weights: vec![array![[1.0, 2.0]]],
            biases: vec![array![0.0]],
        };
        assert!(matches!(
            adam.step(&mut net, &wrong, None),
            Err(OptimError::ShapeMismatch(_))
        ));
        assert_eq!(adam.t, 0);
    }
}
