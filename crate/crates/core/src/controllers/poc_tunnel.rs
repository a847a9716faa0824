use super::{check_budget_len, Controller, ControllerConfig, ControllerKind, View};
use crate::budget::BudgetTuner;
use crate::error::{Error, Result};
use crate::network::{SlotRecord, Underlay};
use crate::price::PriceController;
use crate::schedule::Schedules;

/// Tunnel-level POC. Every ingress link is a tunnel to the flow's
/// destination; the controller tracks packets in flight per tunnel from its
/// own injections and the destination's delivery and loss reports, prices
/// the tunnels and routes each packet on the least `lambda_tau * Qhat_tau`.
///
/// Reads only the source pools; never the underlay queues.
pub struct PocTunnel {
    /// Per flow: tunnel indices into the flat tunnel arrays.
    flow_tunnels: Vec<Vec<usize>>,
    /// Flat tunnel list: (flow, ingress link, injection cap).
    tunnels: Vec<(usize, usize, u32)>,
    virtual_queues: Vec<i64>,
    prices: PriceController,
    budgets: BudgetTuner,
    schedules: Schedules,
    least_price: bool,
    t: u64,
    labels: Vec<String>,
    observed: Vec<f64>,
}

impl PocTunnel {
    pub fn new(underlay: &Underlay, config: &ControllerConfig) -> Result<Self> {
        let spec = underlay.spec();
        let mut flow_tunnels = Vec::new();
        let mut tunnels = Vec::new();
        let mut labels = Vec::new();
        for f in 0..spec.flows.len() {
            let mut ids = Vec::new();
            for (&l, &cap) in underlay.ingress(f).iter().zip(underlay.injection_caps(f)) {
                ids.push(tunnels.len());
                tunnels.push((f, l, cap));
                labels.push(format!("{}:{}", spec.flows[f].name, spec.links[l].name));
            }
            flow_tunnels.push(ids);
        }
        let n = tunnels.len();
        let total = config.total_budget(underlay)?;
        let mut budgets = BudgetTuner::new(n, total, config.budget_mode);
        if let Some(b) = &config.initial_budgets {
            check_budget_len(b, n, total)?;
            budgets.set_budgets(b);
        }
        Ok(Self {
            flow_tunnels,
            tunnels,
            virtual_queues: vec![0; n],
            prices: PriceController::new(n, config.price),
            budgets,
            schedules: config.schedules,
            least_price: config.least_price,
            t: 0,
            labels,
            observed: vec![0.0; n],
        })
    }

    /// `Qhat` per tunnel, flat order (flows in order, ingress links ascending).
    pub fn virtual_queues(&self) -> &[i64] {
        &self.virtual_queues
    }

    /// `(flow, ingress link)` of each tunnel.
    pub fn tunnels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.tunnels.iter().map(|&(f, l, _)| (f, l))
    }
}

impl Controller for PocTunnel {
    fn kind(&self) -> ControllerKind {
        ControllerKind::PocTunnel
    }

    fn decide(&mut self, view: &View<'_>, out: &mut [Vec<u32>]) -> Result<()> {
        for (o, &q) in self.observed.iter_mut().zip(&self.virtual_queues) {
            *o = q as f64;
        }
        self.prices.update(&self.observed, self.budgets.budgets(), self.schedules.beta.at(self.t));
        self.budgets.update(self.prices.prices(), &self.schedules.gamma);
        let prices = self.prices.prices();

        for (f, ids) in self.flow_tunnels.iter().enumerate() {
            let alloc = &mut out[f];
            alloc.clear();
            alloc.resize(ids.len(), 0);
            let total_cap: u32 = ids.iter().map(|&i| self.tunnels[i].2).sum();
            let n = view.state.pool_len(f).min(total_cap);
            for _ in 0..n {
                let mut best: Option<(f64, usize)> = None;
                for (k, &i) in ids.iter().enumerate() {
                    if alloc[k] >= self.tunnels[i].2 {
                        continue;
                    }
                    let cost = if self.least_price {
                        prices[i]
                    } else {
                        prices[i] * (self.virtual_queues[i] + alloc[k] as i64) as f64
                    };
                    if best.is_none_or(|(c, _)| cost < c) {
                        best = Some((cost, k));
                    }
                }
                let (_, k) = best.expect("remaining capacity");
                alloc[k] += 1;
            }
        }
        self.t += 1;
        Ok(())
    }

    fn observe(&mut self, _view: &View<'_>, rec: &SlotRecord) -> Result<()> {
        for (i, &(_, l, _)) in self.tunnels.iter().enumerate() {
            let q = &mut self.virtual_queues[i];
            *q += rec.injected[l] as i64 - rec.tunnel_delivered[l] as i64 - rec.tunnel_dropped[l] as i64;
            if *q < 0 {
                return Err(Error::NegativeVirtualQueue { tunnel: i, value: *q });
            }
        }
        Ok(())
    }

    fn prices(&self) -> &[f64] {
        self.prices.prices()
    }

    fn budgets(&self) -> &[f64] {
        self.budgets.budgets()
    }

    fn price_labels(&self) -> Vec<String> {
        self.labels.clone()
    }

    fn dump(&self) -> Vec<(String, String)> {
        let mut s = String::from("tunnel,virtual_queue,price,budget\n");
        for (i, label) in self.labels.iter().enumerate() {
            s += &format!(
                "{label},{},{:?},{:?}\n",
                self.virtual_queues[i],
                self.prices.prices()[i],
                self.budgets.budgets()[i]
            );
        }
        vec![("tunnels.csv".into(), s)]
    }
}
