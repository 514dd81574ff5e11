use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::real::Real;

/// Adam with bias correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// Applies one update to every parameter that has a gradient. The whole
    /// step is rejected, leaving the store untouched, if any gradient is
    /// non-finite or mis-shaped.
    pub fn step<T: Real>(&self, store: &mut ParamStore<T>, grads: &[(ParamId, Vec<T>)]) -> Result<()> {
        for (id, g) in grads {
            let p = store.param(*id);
            if g.len() != p.tensor.len() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.tensor.shape().to_vec(),
                    rhs: alloc::vec![g.len()],
                });
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (c1, c2) = (T::ONE - b1, T::ONE - b2);
        let eps = T::from_f64(self.eps);
        for (id, g) in grads {
            let p = store.param_mut(*id);
            p.step_count += 1;
            let t = p.step_count as i32;
            let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
            let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
            let step = T::from_f64(self.lr / bc1);
            let bc2_sqrt = T::from_f64(libm::sqrt(bc2));
            let w = p.tensor.data_mut();
            for i in 0..g.len() {
                let gi = g[i];
                p.adam_m[i] = b1 * p.adam_m[i] + c1 * gi;
                p.adam_v[i] = b2 * p.adam_v[i] + c2 * gi * gi;
                // lr * m_hat / (sqrt(v_hat) + eps), with both corrections folded in
                w[i] -= step * p.adam_m[i] / (p.adam_v[i].sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = ParamStore::<f32>::new();
        let id = s.add_param("w", Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let before = s.param(id).tensor.clone();
        Adam::default().step(&mut s, &[(id, vec![0.0; 3])]).unwrap();
        assert_eq!(s.param(id).tensor, before);
        assert_eq!(s.param(id).step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add_param("w", Tensor::zeros(&[3]));
        Adam::with_lr(1e-3).step(&mut s, &[(id, vec![5.0, -0.2, 300.0])]).unwrap();
        for (w, sign) in s.param(id).tensor.data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((w - sign * 1e-3).abs() < 1e-9, "{w}");
        }
    }

    #[test]
    fn identical_gradients_evolve_identically() {
        let mut s = ParamStore::<f32>::new();
        let a = s.add_param("a", Tensor::full(&[2], 0.3));
        let b = s.add_param("b", Tensor::full(&[2], 0.3));
        for k in 0..5 {
            let g = vec![0.1 * k as f32, -0.7];
            Adam::default().step(&mut s, &[(a, g.clone()), (b, g)]).unwrap();
        }
        assert_eq!(s.param(a).tensor, s.param(b).tensor);
        assert_eq!(s.param(a).adam_v, s.param(b).adam_v);
    }

    #[test]
    fn non_finite_gradient_rejected_without_side_effects() {
        let mut s = ParamStore::<f32>::new();
        let a = s.add_param("a", Tensor::full(&[2], 0.3));
        let b = s.add_param("b", Tensor::full(&[1], 0.3));
        let before = s.clone();
        let err = Adam::default().step(&mut s, &[(a, vec![1.0, 1.0]), (b, vec![f32::NAN])]).unwrap_err();
        assert_eq!(err, Error::NonFiniteGradient("b".into()));
        assert_eq!(s, before);
    }
}
