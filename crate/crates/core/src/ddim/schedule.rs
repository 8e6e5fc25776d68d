use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear β schedule with cumulative signal retention ᾱ.
///
/// `alpha_bar[0] = 1` is the data end; `alpha_bar[t] = ∏_{s≤t} (1 − β_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    t_max: usize,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

pub fn make_schedule(t_max: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if t_max < 1 {
        return Err(Error::Argument("schedule needs T >= 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Argument(format!("need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")));
    }
    let beta: Vec<f64> =
        (0..t_max)
            .map(|i| {
                if t_max == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64
                }
            })
            .collect();
    let mut alpha_bar = Vec::with_capacity(t_max + 1);
    alpha_bar.push(1.0);
    let mut acc = 1.0;
    for b in &beta {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    Ok(DiffusionSchedule { t_max, beta, alpha_bar })
}

impl DiffusionSchedule {
    pub fn t_max(&self) -> usize {
        self.t_max
    }

    /// β_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// ᾱ_t for t in 0..=T.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// DDIM noise scale for the jump t → t_prev.
    pub fn sigma(&self, t: usize, t_prev: usize, eta: f64) -> f64 {
        let at = self.alpha_bar[t];
        let ap = self.alpha_bar[t_prev];
        let v = (1.0 - ap) / (1.0 - at) * (1.0 - at / ap);
        eta * v.max(0.0).sqrt()
    }

    /// `round(T·k/steps)` for k = steps, …, 0: strictly decreasing, from T to 0.
    pub fn uniform_subsequence(&self, steps: usize) -> Result<Vec<usize>> {
        if steps < 1 || steps > self.t_max {
            return Err(Error::Argument(format!("steps must be in 1..={}, got {steps}", self.t_max)));
        }
        Ok((0..=steps).rev().map(|k| ((self.t_max * k) as f64 / steps as f64).round() as usize).collect())
    }
}
