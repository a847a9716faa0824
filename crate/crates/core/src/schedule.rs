//! Step-size sequences for the three coupled recursions.

use serde::{Deserialize, Serialize};

/// `scale / ((1 + t)^exponent * ln(e + t)^log_power)`; `scale = 0` freezes
/// the recursion it drives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSize {
    pub scale: f64,
    pub exponent: f64,
    #[serde(default)]
    pub log_power: u32,
}

impl StepSize {
    pub const fn power(scale: f64, exponent: f64) -> Self {
        Self { scale, exponent, log_power: 0 }
    }

    pub const fn frozen() -> Self {
        Self::power(0.0, 0.0)
    }

    pub fn is_frozen(&self) -> bool {
        self.scale == 0.0
    }

    pub fn at(&self, t: u64) -> f64 {
        if self.is_frozen() {
            return 0.0;
        }
        let t = t as f64;
        let mut v = self.scale / (1.0 + t).powf(self.exponent);
        if self.log_power > 0 {
            v /= (std::f64::consts::E + t).ln().powi(self.log_power as i32);
        }
        v
    }

    /// `sum_t a_t = infinity`.
    pub fn diverges(&self) -> bool {
        !self.is_frozen() && (self.exponent < 1.0 || (self.exponent == 1.0 && self.log_power <= 1))
    }

    /// `sum_t a_t^2 < infinity`.
    pub fn square_summable(&self) -> bool {
        self.is_frozen() || self.exponent > 0.5 || (self.exponent == 0.5 && self.log_power >= 1)
    }

    /// `self_t / faster_t -> 0`.
    pub fn vanishes_against(&self, faster: &StepSize) -> bool {
        if self.is_frozen() {
            return true;
        }
        if faster.is_frozen() {
            return false;
        }
        (self.exponent, self.log_power) > (faster.exponent, faster.log_power)
    }
}

/// `alpha` drives the value updates, `beta` the prices, `gamma` the budgets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedules {
    pub alpha: StepSize,
    pub beta: StepSize,
    pub gamma: StepSize,
}

impl Default for Schedules {
    fn default() -> Self {
        Self { alpha: StepSize::power(1.0, 0.6), beta: StepSize::power(1.0, 0.8), gamma: StepSize::power(1.0, 1.0) }
    }
}

impl Schedules {
    /// `alpha_t = 1/(1+t)`, `beta_t = 1/((1+t) ln(e+t))`, budgets frozen:
    /// the classic two-timescale pair. No power-log sequence fits strictly
    /// between `beta` and zero while still diverging, so `gamma` is off.
    pub fn harmonic_two_timescale() -> Self {
        Self {
            alpha: StepSize::power(1.0, 1.0),
            beta: StepSize { scale: 1.0, exponent: 1.0, log_power: 1 },
            gamma: StepSize::frozen(),
        }
    }

    pub fn check(&self) -> ScheduleReport {
        let mut items = Vec::new();
        for (name, s) in [("alpha", &self.alpha), ("beta", &self.beta), ("gamma", &self.gamma)] {
            if s.is_frozen() {
                items.push((format!("{name} frozen"), true));
                continue;
            }
            items.push((format!("sum {name}_t = inf"), s.diverges()));
            items.push((format!("sum {name}_t^2 < inf"), s.square_summable()));
        }
        items.push(("beta_t / alpha_t -> 0".into(), self.beta.vanishes_against(&self.alpha)));
        items.push(("gamma_t / beta_t -> 0".into(), self.gamma.vanishes_against(&self.beta)));
        ScheduleReport { items }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleReport {
    pub items: Vec<(String, bool)>,
}

impl ScheduleReport {
    pub fn all_hold(&self) -> bool {
        self.items.iter().all(|(_, ok)| *ok)
    }
}

/// Decaying exploration rate `eps_t = initial / (1 + t / horizon)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exploration {
    pub initial: f64,
    pub horizon: f64,
}

impl Default for Exploration {
    fn default() -> Self {
        Self { initial: 0.2, horizon: 1e4 }
    }
}

impl Exploration {
    pub fn at(&self, t: u64) -> f64 {
        if self.initial == 0.0 {
            return 0.0;
        }
        self.initial / (1.0 + t as f64 / self.horizon)
    }
}
