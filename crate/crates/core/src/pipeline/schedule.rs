use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete-time variance-preserving noise schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub train_timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Intervals in the full sampling grid.
    pub full_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            train_timesteps: 1000,
            beta_start: 0.00085,
            beta_end: 0.012,
            full_steps: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    alphas_cumprod: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas linear in `√β` between the endpoints.
    pub fn scaled_linear(config: ScheduleConfig) -> Result<Self> {
        let n = config.train_timesteps;
        if n < 2 || config.full_steps == 0 || config.full_steps > n {
            return Err(Error::invalid("schedule needs ≥2 timesteps and 1..=T grid steps"));
        }
        let (a, b) = (config.beta_start.sqrt(), config.beta_end.sqrt());
        let mut prod = 1.0;
        let alphas_cumprod = (0..n)
            .map(|i| {
                let s = a + (b - a) * i as f64 / (n - 1) as f64;
                prod *= 1.0 - s * s;
                prod
            })
            .collect();
        Ok(Self { config, alphas_cumprod })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1` for the clean latent.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas_cumprod[(t - 1).min(self.alphas_cumprod.len() - 1)]
        }
    }

    /// `(√ᾱ_t, √(1−ᾱ_t))`.
    pub fn alpha_sigma(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        (ab.sqrt(), (1.0 - ab).sqrt())
    }

    /// Ascending timesteps `t_0 = 0 < … < t_steps` on a uniform grid of
    /// `max(full_steps, steps)` intervals over the training horizon. Fewer
    /// steps than the full grid cover its low-noise end.
    pub fn grid(&self, steps: usize) -> Result<Vec<usize>> {
        if steps == 0 {
            return Err(Error::invalid("at least one step is required"));
        }
        let intervals = self.config.full_steps.max(steps);
        let horizon = self.config.train_timesteps;
        if intervals > horizon {
            return Err(Error::invalid(format!("{steps} steps exceed {horizon} timesteps")));
        }
        Ok((0..=steps)
            .map(|i| ((i * horizon) as f64 / intervals as f64).round() as usize)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let s = NoiseSchedule::scaled_linear(ScheduleConfig::default()).unwrap();
        assert_eq!(s.grid(10).unwrap(), (0..=10).map(|i| i * 50).collect::<Vec<_>>());
        assert_eq!(*s.grid(20).unwrap().last().unwrap(), 1000);
        assert_eq!(s.grid(40).unwrap()[1], 25);
        assert!(s.grid(0).is_err());
    }

    #[test]
    fn alpha_bar_is_decreasing_from_one() {
        let s = NoiseSchedule::scaled_linear(ScheduleConfig::default()).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        let mut prev = 1.0;
        for t in 1..=1000 {
            let a = s.alpha_bar(t);
            assert!(a < prev && a > 0.0);
            prev = a;
        }
        assert!((s.alpha_bar(1000) - 0.00466).abs() < 1e-4);
    }
}
