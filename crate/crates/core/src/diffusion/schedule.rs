use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the β curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Linear,
}

/// Per-step noise levels for `t = 1..=T`. Accessors take the 1-based step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;
const BETA_CAP: f64 = 0.999;

/// β linearly spaced from `beta_min` to `beta_max` over `steps` steps.
pub fn build_schedule(steps: usize, kind: ScheduleKind, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::Config(format!(
            "β bounds must satisfy 0 < min ≤ max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let betas = match kind {
        ScheduleKind::Linear if steps == 1 => vec![beta_min],
        ScheduleKind::Linear => (0..steps)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
            .collect(),
    };
    NoiseSchedule::from_betas(betas)
}

impl NoiseSchedule {
    /// The default linear curve rescaled so that `steps` steps corrupt about
    /// as much as 1000 steps of the reference range.
    pub fn default_for(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        let s = 1000.0 / steps as f64;
        let hi = (DEFAULT_BETA_MAX * s).min(BETA_CAP);
        let lo = (DEFAULT_BETA_MIN * s).min(hi);
        build_schedule(steps, ScheduleKind::Linear, lo, hi)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::Config("every β must lie in (0, 1)".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let sigmas = (0..betas.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                let denom = 1.0 - alpha_bars[i];
                if denom > 0.0 {
                    ((1.0 - prev) / denom * betas[i]).sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            sigmas,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative signal retention; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Reverse-step standard deviation (square root of the posterior
    /// variance); zero at `t = 1`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_step_products() {
        let s = build_schedule(2, ScheduleKind::Linear, 0.1, 0.2).unwrap();
        assert_eq!(s.betas(), &[0.1, 0.2]);
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.9 * 0.8).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
        // σ₂² = (1 − 0.9)/(1 − 0.72)·0.2
        assert!((s.sigma(2).powi(2) - 0.1 / 0.28 * 0.2).abs() < 1e-15);
        assert_eq!(s.sigma(1), 0.0);
    }

    #[test]
    fn single_step() {
        let s = build_schedule(1, ScheduleKind::Linear, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5]);
    }

    #[test]
    fn defaults_strictly_decrease() {
        let s = NoiseSchedule::default_for(1000).unwrap();
        assert!((s.beta(1) - 1e-4).abs() < 1e-15 && (s.beta(1000) - 0.02).abs() < 1e-15);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bars().iter().all(|a| *a > 0.0 && *a <= 1.0));
        let short = NoiseSchedule::default_for(100).unwrap();
        assert!((short.beta(100) - 0.2).abs() < 1e-12);
        assert!(short.alpha_bar(100) < 1e-4);
        let tiny = NoiseSchedule::default_for(2).unwrap();
        assert_eq!(tiny.beta(2), 0.999);
    }

    #[test]
    fn invalid_bounds() {
        for (lo, hi) in [(0.0, 0.1), (0.2, 0.1), (0.1, 1.0), (-0.1, 0.5)] {
            assert!(matches!(build_schedule(5, ScheduleKind::Linear, lo, hi), Err(Error::Config(_))));
        }
        assert!(build_schedule(0, ScheduleKind::Linear, 0.1, 0.2).is_err());
    }
}
