//! Adam with bias correction and a cosine learning-rate schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates per parameter plus the step count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One in-place update of every parameter. A non-finite gradient aborts
    /// before any parameter is touched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Contract(format!(
                "{} gradients and {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                store.len()
            )));
        }
        for (id, g) in store.ids().zip(grads) {
            if g.shape() != store.get(id).shape() {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: store.get(id).shape(),
                    rhs: g.shape(),
                });
            }
            if let Some(k) = g.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::Diverged(format!(
                    "gradient of {} entry {k} is {} at step {}",
                    store.name(id),
                    g.data()[k],
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in store.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))`; `step` is clamped
/// to `total`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total_steps == 0 {
        return lr_max;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.register("p", Tensor::row_vector(values));
        s
    }

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let mut s = store(&[1.0, 1.0, 1.0]);
        let mut adam = Adam::new(&s);
        let lr = 0.01;
        adam.step(&mut s, &[Tensor::row_vector(&[3.0, -0.002, 250.0])], lr).unwrap();
        let p = s.get(s.find("p").unwrap());
        for (x, sign) in p.data().iter().zip([1.0, -1.0, 1.0]) {
            let moved = 1.0 - x;
            assert!((moved - sign * lr).abs() < 1e-6, "{moved}");
            assert!(moved.abs() <= lr + 1e-6);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(&[0.5, -2.0]);
        let before = s.clone();
        let mut adam = Adam::new(&s);
        for _ in 0..3 {
            adam.step(&mut s, &[Tensor::zeros(1, 2)], 0.1).unwrap();
        }
        assert_eq!(s, before);
    }

    #[test]
    fn deterministic_over_five_steps() {
        let run = || {
            let mut s = store(&[0.1, 0.2, 0.3]);
            let mut adam = Adam::new(&s);
            for k in 0..5 {
                let g = Tensor::row_vector(&[k as f64 - 2.0, 0.5, -(k as f64).sin()]);
                adam.step(&mut s, &[g], 0.01).unwrap();
            }
            s
        };
        let (a, b) = (run(), run());
        let bits = |s: &ParamStore| s.tensors()[0].data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn nan_gradient_aborts_untouched() {
        let mut s = store(&[1.0, 2.0]);
        let before = s.clone();
        let mut adam = Adam::new(&s);
        let err = adam.step(&mut s, &[Tensor::row_vector(&[0.0, f64::NAN])], 0.1).unwrap_err();
        assert!(matches!(err, Error::Diverged(ref m) if m.contains("p entry 1")), "{err}");
        assert_eq!(s, before);
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn cosine_schedule_examples() {
        let (hi, lo) = (1e-3, 1e-5);
        assert_eq!(cosine_lr(0, 100, hi, lo), hi);
        assert!((cosine_lr(100, 100, hi, lo) - lo).abs() < 1e-18);
        assert!((cosine_lr(50, 100, hi, lo) - (hi + lo) / 2.0).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for s in 0..=100 {
            let lr = cosine_lr(s, 100, hi, lo);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
