use std::collections::BTreeMap;

use super::{c, ParamSet, Real};
use crate::error::TensorError;

/// Adam with bias-corrected moments. Moment buffers are keyed by parameter
/// name and persist across [`Adam::step`] calls.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// GAN-friendly defaults: beta1 = 0.5, beta2 = 0.999, eps = 1e-8.
    pub fn with_lr(lr: f64) -> Self {
        Self::new(lr, 0.5, 0.999, 1e-8)
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Update every parameter from its accumulated gradient. Every parameter
    /// must carry a gradient; gradients are left in place.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<(), TensorError> {
        if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
            return Err(TensorError::MissingGrad(p.name.clone()));
        }
        self.t += 1;
        let (b1, b2) = (c::<T>(self.beta1), c::<T>(self.beta2));
        let one = T::one();
        let bc1 = c::<T>(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = c::<T>(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (c::<T>(self.lr), c::<T>(self.eps));
        for p in params.iter_mut() {
            let grad = p.grad.as_ref().expect("checked above");
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (vec![T::zero(); grad.len()], vec![T::zero(); grad.len()]));
            for (((w, &g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
