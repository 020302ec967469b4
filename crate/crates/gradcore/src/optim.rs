//! SGD with momentum and L2 weight decay folded into the velocity.

use crate::error::{GradError, Result};
use crate::model::Model;
use crate::scalar::Scalar;

/// Momentum SGD state: `v ← m·v + g + wd·w`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    pub weight_decay: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(model: &Model<T>, lr: T, momentum: T, weight_decay: T) -> Result<Self> {
        if !(lr > T::zero()) {
            return Err(GradError::InvalidHyperparameter(format!("learning rate {lr} must be positive")));
        }
        if !(momentum >= T::zero() && momentum < T::one()) {
            return Err(GradError::InvalidHyperparameter(format!("momentum {momentum} outside [0, 1)")));
        }
        if !(weight_decay >= T::zero()) {
            return Err(GradError::InvalidHyperparameter(format!("weight decay {weight_decay} negative")));
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            velocity: model.params().iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        })
    }

    /// lr 0.03, momentum 0.9, weight decay 5e-4.
    pub fn with_defaults(model: &Model<T>) -> Self {
        Self::new(model, T::from_f64(0.03), T::from_f64(0.9), T::from_f64(5e-4)).expect("valid defaults")
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    /// Applies one update and clears the gradients. Fails before touching any
    /// weight when a gradient is missing.
    pub fn step(&mut self, model: &mut Model<T>) -> Result<()> {
        if self.velocity.len() != model.params().len() {
            return Err(GradError::Incongruent("optimizer built for another model".into()));
        }
        if let Some(i) = model.params().iter().position(|p| p.grad().is_none()) {
            return Err(GradError::MissingGradient(model.param_names()[i].clone()));
        }
        let (lr, m, wd) = (self.lr, self.momentum, self.weight_decay);
        for (p, v) in model.params_mut().iter_mut().zip(&mut self.velocity) {
            let g = p.take_grad().expect("checked above");
            for ((w, vel), gi) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *vel = m * *vel + gi + wd * *w;
                *w = *w - lr * *vel;
            }
        }
        Ok(())
    }
}
