//! Unlabeled batch-size curriculum (B-EXP), loss weighting, learning-rate
//! decay and per-class pseudo-label thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Labeled batch size.
    pub l: usize,
    /// Unlabeled to labeled ratio; the maximum unlabeled batch is `mu * l`.
    pub mu: usize,
    pub total_iterations: u64,
    pub alpha: f64,
    pub cbs_enabled: bool,
    pub base_lambda: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            l: 64,
            mu: 7,
            total_iterations: 1 << 20,
            alpha: 0.7,
            cbs_enabled: false,
            base_lambda: 1.0,
        }
    }
}

impl ScheduleConfig {
    pub fn u(&self) -> usize {
        self.mu * self.l
    }

    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, message: String| Error::Config {
            key: format!("schedule.{key}"),
            message,
        };
        if self.l == 0 {
            return Err(err("l", "labeled batch size must be at least 1".into()));
        }
        if self.total_iterations == 0 {
            return Err(err("total_iterations", "must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(err("alpha", format!("{} outside [0, 1)", self.alpha)));
        }
        if !(self.base_lambda >= 0.0 && self.base_lambda.is_finite()) {
            return Err(err("base_lambda", format!("{} is not a nonnegative number", self.base_lambda)));
        }
        Ok(())
    }
}

/// `u · (1 − (1 − t/T) / ((1 − α) + α(1 − t/T)))`.
pub fn bexp(u: f64, t: f64, total: f64, alpha: f64) -> Result<f64> {
    if total <= 0.0 {
        return Err(Error::Schedule("T must be positive".into()));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Schedule(format!("alpha {alpha} outside [0, 1)")));
    }
    if !(0.0..=total).contains(&t) {
        return Err(Error::Schedule(format!("t {t} outside [0, {total}]")));
    }
    let r = 1.0 - t / total;
    Ok(u * (1.0 - r / ((1.0 - alpha) + alpha * r)))
}

/// `u_t` at iteration `t`: rounded B-EXP clamped to `[0, u]`, or `u` without the curriculum.
pub fn unlabeled_batch_size(cfg: &ScheduleConfig, t: u64) -> Result<usize> {
    let u = cfg.u();
    if !cfg.cbs_enabled {
        return Ok(u);
    }
    curriculum_batch(u, t, cfg.total_iterations, cfg.alpha)
}

/// `round(bexp(u, t, T, alpha))` clamped to `[0, u]`.
pub fn curriculum_batch(u: usize, t: u64, total: u64, alpha: f64) -> Result<usize> {
    let v = bexp(u as f64, t as f64, total as f64, alpha)?;
    Ok((v.round().max(0.0) as usize).min(u))
}

/// Continuous mean of `bexp / u` over `t ∈ [0, T]`. The `alpha → 0` limit is
/// 1/2 but is rejected here.
pub fn mean_bexp_fraction(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Schedule(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(1.0 - 1.0 / alpha + (1.0 - alpha) / (alpha * alpha) * (1.0 / (1.0 - alpha)).ln())
}

/// Discrete mean of `u_t / u` over `t ∈ {0, …, T−1}`.
pub fn discrete_mean_fraction(cfg: &ScheduleConfig) -> Result<f64> {
    let mut sum = 0u64;
    for t in 0..cfg.total_iterations {
        sum += unlabeled_batch_size(cfg, t)? as u64;
    }
    Ok(sum as f64 / (cfg.u() as f64 * cfg.total_iterations as f64))
}

pub fn lambda_coeff(cfg: &ScheduleConfig, u_t: usize) -> f64 {
    cfg.base_lambda * u_t as f64 / cfg.l as f64
}

/// Loss weight used at batch size `u_t`: scaled with the curriculum, the
/// plain `base_lambda` when the curriculum is off.
pub fn lambda_at(cfg: &ScheduleConfig, u_t: usize) -> f64 {
    if cfg.cbs_enabled {
        lambda_coeff(cfg, u_t)
    } else {
        cfg.base_lambda
    }
}

pub fn cosine_lr(lr0: f64, t: u64, total: u64) -> f64 {
    lr0 * (7.0 * std::f64::consts::PI * t as f64 / (16.0 * total as f64)).cos()
}

/// Convex mapping `x / (2 − x)`.
pub fn convex_map(x: f64) -> f64 {
    x / (2.0 - x)
}

/// Cached confident predictions of every unlabeled sample and their class counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CplState {
    predictions: Vec<i32>,
    sigma: Vec<usize>,
    unused: usize,
    pub tau: f64,
    pub cpl_enabled: bool,
}

impl CplState {
    pub fn new(unlabeled: usize, classes: usize, tau: f64, cpl_enabled: bool) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config {
                key: "threshold.tau".into(),
                message: format!("{tau} outside (0, 1]"),
            });
        }
        Ok(Self {
            predictions: vec![-1; unlabeled],
            sigma: vec![0; classes],
            unused: unlabeled,
            tau,
            cpl_enabled,
        })
    }

    pub fn predictions(&self) -> &[i32] {
        &self.predictions
    }

    pub fn sigma(&self) -> &[usize] {
        &self.sigma
    }

    /// Samples never predicted above `tau`.
    pub fn unused(&self) -> usize {
        self.unused
    }

    /// Stores the prediction of sample `index` when `confidence > tau`.
    pub fn record(&mut self, index: usize, class: usize, confidence: f64) -> Result<()> {
        let len = self.predictions.len();
        let slot = self
            .predictions
            .get_mut(index)
            .ok_or(Error::SampleIndex { index, len })?;
        if class >= self.sigma.len() {
            return Err(Error::Schedule(format!("class {class} outside [0, {})", self.sigma.len())));
        }
        if confidence <= self.tau {
            return Ok(());
        }
        match *slot {
            -1 => self.unused -= 1,
            old => self.sigma[old as usize] -= 1,
        }
        *slot = class as i32;
        self.sigma[class] += 1;
        Ok(())
    }

    /// Per-class thresholds `T_c = M(β_c) · τ`, or flat `τ` when disabled.
    pub fn thresholds(&self) -> Vec<f64> {
        if !self.cpl_enabled {
            return vec![self.tau; self.sigma.len()];
        }
        let max_sigma = self.sigma.iter().copied().max().unwrap_or(0);
        let denom = max_sigma.max(self.unused);
        self.sigma
            .iter()
            .map(|&s| {
                let beta = if denom == 0 { 1.0 } else { s as f64 / denom as f64 };
                convex_map(beta) * self.tau
            })
            .collect()
    }
}

pub fn cpl_record(state: &mut CplState, index: usize, class: usize, confidence: f64) -> Result<()> {
    state.record(index, class, confidence)
}

pub fn cpl_thresholds(state: &CplState) -> Vec<f64> {
    state.thresholds()
}
