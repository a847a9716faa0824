//! Projected subgradient link prices.

use serde::{Deserialize, Serialize};

pub const DEFAULT_PRICE_CAP: f64 = 100.0;
pub const DEFAULT_INITIAL_PRICE: f64 = 1.0;

/// `lambda_l <- clamp(lambda_l + beta (q_l - b_l), 0, cap)` for every entry.
pub fn price_update(prices: &mut [f64], observed: &[f64], budgets: &[f64], beta: f64, cap: f64) {
    debug_assert!(prices.len() == observed.len() && prices.len() == budgets.len());
    for ((p, &q), &b) in prices.iter_mut().zip(observed).zip(budgets) {
        *p = (*p + beta * (q - b)).clamp(0.0, cap);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceConfig {
    /// Upper clamp `K`.
    pub cap: f64,
    pub initial: f64,
    /// Weight of the newest observation in an exponential moving average of
    /// the queues; `None` uses the instantaneous queues.
    pub smoothing: Option<f64>,
}

impl Default for PriceConfig {
    fn default() -> Self {
        Self { cap: DEFAULT_PRICE_CAP, initial: DEFAULT_INITIAL_PRICE, smoothing: None }
    }
}

/// Price vector over links or tunnels.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceController {
    prices: Vec<f64>,
    config: PriceConfig,
    smoothed: Option<Vec<f64>>,
}

impl PriceController {
    pub fn new(len: usize, config: PriceConfig) -> Self {
        Self { prices: vec![config.initial.clamp(0.0, config.cap); len], config, smoothed: None }
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn cap(&self) -> f64 {
        self.config.cap
    }

    pub fn set_prices(&mut self, prices: &[f64]) {
        for (p, &v) in self.prices.iter_mut().zip(prices) {
            *p = v.clamp(0.0, self.config.cap);
        }
    }

    pub fn update(&mut self, observed: &[f64], budgets: &[f64], beta: f64) {
        if beta == 0.0 {
            return;
        }
        let q = match self.config.smoothing {
            None => observed,
            Some(w) => {
                let s = self.smoothed.get_or_insert_with(|| observed.to_vec());
                for (s, &o) in s.iter_mut().zip(observed) {
                    *s += w * (o - *s);
                }
                s.as_slice()
            }
        };
        price_update(&mut self.prices, q, budgets, beta, self.config.cap);
    }
}
