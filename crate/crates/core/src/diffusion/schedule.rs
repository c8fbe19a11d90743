use serde::{Deserialize, Serialize};

use super::DiffusionError;

/// Linear β schedule parameters; the persisted form of [`NoiseSchedule`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    /// β_T = 0.2 drives ᾱ_T to about 1e-5 so the chain can start from N(0, I).
    fn default() -> Self {
        Self {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.2,
        }
    }
}

/// `β_t`, `α_t = 1 − β_t` and `ᾱ_t = ∏_{s≤t} α_s` for `t = 1..=T`, stored 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleConfig", into = "ScheduleConfig")]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl TryFrom<ScheduleConfig> for NoiseSchedule {
    type Error = DiffusionError;

    fn try_from(c: ScheduleConfig) -> Result<Self, Self::Error> {
        Self::new(c)
    }
}

impl From<NoiseSchedule> for ScheduleConfig {
    fn from(s: NoiseSchedule) -> Self {
        s.config
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(ScheduleConfig::default()).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self, DiffusionError> {
        let ScheduleConfig {
            steps,
            beta_start,
            beta_end,
        } = config;
        if steps == 0 || steps > 100_000 {
            return Err(DiffusionError::InvalidArgument(format!("schedule steps {steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DiffusionError::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            config,
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn index(&self, t: usize) -> usize {
        assert!(t >= 1 && t <= self.steps(), "timestep {t} outside 1..={}", self.steps());
        t - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[self.index(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[self.index(t)]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[self.index(t)]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.beta(t).sqrt()
    }

    pub fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::StepOutOfRange { t, steps: self.steps() });
        }
        Ok(())
    }
}
