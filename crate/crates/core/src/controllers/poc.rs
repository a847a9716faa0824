use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_budget_len, Controller, ControllerConfig, ControllerKind, View};
use crate::budget::BudgetTuner;
use crate::error::Result;
use crate::network::Underlay;
use crate::price::PriceController;
use crate::qlearning::{FlowLearner, FlowState, QTable};
use crate::schedule::Schedules;

/// Price-based overlay controller: per-flow Q-learning on holding costs,
/// link prices, replicator budgets.
///
/// Reads each flow's own route queues and source pool, plus the link totals
/// `||Q_l||` for the price layer.
pub struct Poc {
    learners: Vec<FlowLearner>,
    routes: Vec<Vec<usize>>,
    prices: PriceController,
    budgets: BudgetTuner,
    schedules: Schedules,
    prev: Vec<Option<(FlowState, usize)>>,
    /// One exploration stream per flow, so flows never see each other's draws.
    rngs: Vec<ChaCha8Rng>,
    t: u64,
    link_names: Vec<String>,
    observed: Vec<f64>,
    route_prices: Vec<f64>,
}

impl Poc {
    pub fn new(underlay: &Underlay, config: &ControllerConfig, mut rng: ChaCha8Rng) -> Result<Self> {
        let spec = underlay.spec();
        let clip = config.state_clip.unwrap_or(spec.buffer_cap);
        let mut learners = Vec::with_capacity(spec.flows.len());
        for f in 0..spec.flows.len() {
            let caps = underlay.injection_caps(f);
            let total_cap: u32 = caps.iter().sum();
            let table = QTable::new(spec.flows[f].route.len(), caps, clip, clip.max(total_cap))?;
            learners.push(FlowLearner::new(table, config.schedules.alpha, config.exploration));
        }
        let nl = spec.links.len();
        let total = config.total_budget(underlay)?;
        let mut budgets = BudgetTuner::new(nl, total, config.budget_mode);
        if let Some(b) = &config.initial_budgets {
            check_budget_len(b, nl, total)?;
            budgets.set_budgets(b);
        }
        Ok(Self {
            learners,
            routes: spec.flows.iter().map(|f| f.route.clone()).collect(),
            prices: PriceController::new(nl, config.price),
            budgets,
            schedules: config.schedules,
            prev: vec![None; spec.flows.len()],
            rngs: (0..spec.flows.len()).map(|_| ChaCha8Rng::from_rng(&mut rng).expect("chacha never fails")).collect(),
            t: 0,
            link_names: spec.links.iter().map(|l| l.name.clone()).collect(),
            observed: vec![0.0; nl],
            route_prices: Vec::new(),
        })
    }

    pub fn learner(&self, flow: usize) -> &FlowLearner {
        &self.learners[flow]
    }

    pub fn set_prices(&mut self, prices: &[f64]) {
        self.prices.set_prices(prices);
    }

    fn fill_route_prices(&mut self, flow: usize) {
        let p = self.prices.prices();
        self.route_prices.clear();
        self.route_prices.extend(self.routes[flow].iter().map(|&l| p[l]));
    }
}

/// The flow's own queue vector (route order) and source pool.
pub(crate) fn flow_state(view: &View<'_>, flow: usize) -> FlowState {
    FlowState { queues: view.state.flow_queue(flow).collect(), available: view.state.pool_len(flow) }
}

impl Controller for Poc {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Poc
    }

    fn decide(&mut self, view: &View<'_>, out: &mut [Vec<u32>]) -> Result<()> {
        let states: Vec<FlowState> = (0..self.learners.len()).map(|f| flow_state(view, f)).collect();

        for (f, s) in states.iter().enumerate() {
            if let Some((ps, pa)) = self.prev[f].take() {
                self.fill_route_prices(f);
                self.learners[f].learn(&ps, pa, s, &self.route_prices);
            }
        }

        for (l, o) in self.observed.iter_mut().enumerate() {
            *o = view.state.link_total(l) as f64;
        }
        self.prices.update(&self.observed, self.budgets.budgets(), self.schedules.beta.at(self.t));
        self.budgets.update(self.prices.prices(), &self.schedules.gamma);

        for (f, s) in states.into_iter().enumerate() {
            let a = self.learners[f].act(&s, &mut self.rngs[f]);
            out[f].clear();
            out[f].extend_from_slice(&self.learners[f].table.actions(&s)[a]);
            self.prev[f] = Some((s, a));
        }
        self.t += 1;
        Ok(())
    }

    fn prices(&self) -> &[f64] {
        self.prices.prices()
    }

    fn budgets(&self) -> &[f64] {
        self.budgets.budgets()
    }

    fn price_labels(&self) -> Vec<String> {
        self.link_names.clone()
    }

    fn dump(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (f, l) in self.learners.iter().enumerate() {
            let mut buf = Vec::new();
            l.table.export(&mut buf).expect("writing to memory");
            out.push((format!("qtable-flow{f}.csv"), String::from_utf8(buf).expect("ascii table")));
        }
        let mut links = String::from("link,price,budget\n");
        for (i, name) in self.link_names.iter().enumerate() {
            links += &format!("{name},{:?},{:?}\n", self.prices.prices()[i], self.budgets.budgets()[i]);
        }
        out.push(("link-state.csv".into(), links));
        out
    }
}
