//! Overlay controllers behind one interface.
//!
//! Each slot the engine calls [`Controller::decide`] with the start-of-slot
//! state, applies the returned injections, steps the underlay and then calls
//! [`Controller::observe`] with the slot record.

mod backpressure;
mod poc;
mod poc_tunnel;
mod split;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::budget::BudgetMode;
use crate::error::{Error, Result};
use crate::network::{QueueState, SlotRecord, Underlay};
use crate::price::PriceConfig;
use crate::schedule::{Exploration, Schedules};

pub use backpressure::Backpressure;
pub use poc::Poc;
pub use poc_tunnel::PocTunnel;
pub use split::{FixedSplit, RandomSplit};

/// What a controller may look at. Each controller documents which parts it
/// reads.
#[derive(Clone, Copy)]
pub struct View<'a> {
    pub slot: u64,
    pub underlay: &'a Underlay,
    pub state: &'a QueueState,
}

pub trait Controller: Send {
    fn kind(&self) -> ControllerKind;

    /// Writes one injection vector per flow, aligned with
    /// [`Underlay::ingress`].
    fn decide(&mut self, view: &View<'_>, out: &mut [Vec<u32>]) -> Result<()>;

    /// Post-slot feedback.
    fn observe(&mut self, _view: &View<'_>, _rec: &SlotRecord) -> Result<()> {
        Ok(())
    }

    /// Current prices (per link for POC, per tunnel for POC-T).
    fn prices(&self) -> &[f64] {
        &[]
    }

    fn budgets(&self) -> &[f64] {
        &[]
    }

    /// Labels of the priced entities, aligned with [`Controller::prices`].
    fn price_labels(&self) -> Vec<String> {
        Vec::new()
    }

    /// Internal state as named CSV tables.
    fn dump(&self) -> Vec<(String, String)> {
        Vec::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    Poc,
    PocTunnel,
    Backpressure,
    OverlayBackpressure,
    RandomSplit,
    FixedSplit,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 6] = [
        Self::Poc,
        Self::PocTunnel,
        Self::Backpressure,
        Self::OverlayBackpressure,
        Self::RandomSplit,
        Self::FixedSplit,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Self::Poc => "poc",
            Self::PocTunnel => "poc-t",
            Self::Backpressure => "bp",
            Self::OverlayBackpressure => "obp",
            Self::RandomSplit => "random-split",
            Self::FixedSplit => "fixed-split",
        }
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.id() == s).ok_or_else(|| Error::UnknownController(s.to_owned()))
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Hyperparameters shared by the controllers; each reads what it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub price: PriceConfig,
    pub schedules: Schedules,
    pub exploration: Exploration,
    /// Total queue budget `B`.
    pub total_budget: Option<f64>,
    /// Mean delay target; sets `B` to target times the total arrival rate.
    pub delay_target: Option<f64>,
    /// Sets `B` from a pilot run of a reference policy; see
    /// [`crate::sim::resolve_reference_budget`].
    pub reference_budget: Option<ReferenceBudget>,
    /// Initial budget split; uniform when absent.
    pub initial_budgets: Option<Vec<f64>>,
    pub budget_mode: BudgetMode,
    /// Clip for the queue components of the learning state; defaults to the
    /// buffer cap.
    pub state_clip: Option<u32>,
    /// POC-T: route on the least tunnel price instead of the least holding cost.
    pub least_price: bool,
    /// Fixed-split weights per flow, aligned with the ingress links.
    pub split_weights: Option<Vec<Vec<f64>>>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            price: PriceConfig::default(),
            schedules: Schedules::default(),
            exploration: Exploration::default(),
            total_budget: None,
            delay_target: None,
            reference_budget: None,
            initial_budgets: None,
            budget_mode: BudgetMode::Instantaneous,
            state_clip: None,
            least_price: false,
            split_weights: None,
        }
    }
}

impl ControllerConfig {
    /// Resolves `B` for a network.
    pub fn total_budget(&self, underlay: &Underlay) -> Result<f64> {
        if self.reference_budget.is_some() {
            return Err(Error::Config("reference_budget has to be resolved by a pilot run first".into()));
        }
        let b = match (self.total_budget, self.delay_target) {
            (Some(b), None) => b,
            (None, Some(d)) => d * underlay.spec().total_arrival_rate(),
            (Some(_), Some(_)) => {
                return Err(Error::Config("set only one of total_budget, delay_target and reference_budget".into()))
            }
            (None, None) => {
                return Err(Error::Config(
                    "price-based controllers need total_budget, delay_target or reference_budget".into(),
                ))
            }
        };
        if !(b >= 0.0) || !b.is_finite() {
            return Err(Error::Config(format!("total budget {b} must be a nonnegative number")));
        }
        Ok(b)
    }
}

/// `B` as `scale` times the average total queue of `controller` over a
/// pilot run of `horizon` slots with the same network and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceBudget {
    pub controller: String,
    pub horizon: u64,
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

/// Stream of the controller's random number generator for a run seed; the
/// network uses streams 1 to 4 of the same seed.
pub const CONTROLLER_STREAM: u64 = 5;

pub fn controller_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CONTROLLER_STREAM);
    rng
}

pub fn build_controller(
    kind: ControllerKind,
    underlay: &Underlay,
    config: &ControllerConfig,
    seed: u64,
) -> Result<Box<dyn Controller>> {
    let rng = controller_rng(seed);
    Ok(match kind {
        ControllerKind::Poc => Box::new(Poc::new(underlay, config, rng)?),
        ControllerKind::PocTunnel => Box::new(PocTunnel::new(underlay, config)?),
        ControllerKind::Backpressure => Box::new(Backpressure::new(false)),
        ControllerKind::OverlayBackpressure => Box::new(Backpressure::new(true)),
        ControllerKind::RandomSplit => Box::new(RandomSplit::new(rng)),
        ControllerKind::FixedSplit => Box::new(FixedSplit::new(underlay, config.split_weights.as_deref())?),
    })
}

fn check_budget_len(budgets: &[f64], len: usize, total: f64) -> Result<()> {
    if budgets.len() != len {
        return Err(Error::Config(format!("initial_budgets has {} entries, expected {len}", budgets.len())));
    }
    let sum: f64 = budgets.iter().sum();
    if budgets.iter().any(|&b| b < 0.0) || (sum - total).abs() > 1e-9 * total.max(1.0) {
        return Err(Error::Config(format!("initial_budgets must be nonnegative and sum to {total}, got {sum}")));
    }
    Ok(())
}
