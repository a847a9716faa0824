//! Slot loop, metrics and rate sweeps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::controllers::{build_controller, Controller, ControllerConfig, ControllerKind, View};
use crate::error::{Error, Result};
use crate::network::{NetworkRng, NetworkSpec, Underlay, UnderlayPolicy};

/// Sojourn times at or above this many slots share the last histogram bin.
pub const DELAY_HISTOGRAM_BINS: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub horizon: u64,
    pub seed: u64,
    pub underlay: String,
    pub controller: String,
    /// Slots between rows of the sampled time series.
    pub stride: u64,
    /// Slots excluded from averages; 10% of the horizon when absent.
    pub warmup: Option<u64>,
    /// Final fraction of the horizon summarized in the price tail statistics.
    pub tail_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 100_000,
            seed: 1,
            underlay: "static-split".into(),
            controller: "poc".into(),
            stride: 1000,
            warmup: None,
            tail_fraction: 0.1,
        }
    }
}

impl SimConfig {
    pub fn warmup_slots(&self) -> u64 {
        self.warmup.unwrap_or(self.horizon / 10)
    }

    pub fn tail_start(&self) -> u64 {
        let tail = (self.tail_fraction * self.horizon as f64).ceil() as u64;
        self.horizon - tail.min(self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.warmup_slots() >= self.horizon {
            return Err(Error::Config(format!(
                "warmup {} must be below the horizon {}",
                self.warmup_slots(),
                self.horizon
            )));
        }
        if !(0.0..=1.0).contains(&self.tail_fraction) {
            return Err(Error::Config(format!("tail_fraction {} outside [0, 1]", self.tail_fraction)));
        }
        Ok(())
    }
}

/// One row of the sampled time series.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub slot: u64,
    pub link_queues: Vec<u32>,
    pub flow_queues: Vec<u64>,
    pub pools: Vec<u32>,
    pub prices: Vec<f64>,
    pub budgets: Vec<f64>,
    /// Running average of the total network queue since the warmup.
    pub running_avg_queue: f64,
}

/// Everything a run reports. Averages cover the post-warmup slots only.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsLog {
    pub controller: String,
    pub seed: u64,
    pub horizon: u64,
    pub warmup: u64,
    pub link_names: Vec<String>,
    pub flow_names: Vec<String>,
    pub price_labels: Vec<String>,
    pub samples: Vec<Sample>,
    /// Time-averaged `||Q_l||`.
    pub avg_link_queue: Vec<f64>,
    /// Time-averaged network queue of each flow (source pool excluded).
    pub avg_flow_queue: Vec<f64>,
    /// Time-averaged packets of each flow in the system (source pool included).
    pub avg_flow_in_system: Vec<f64>,
    pub arrivals: Vec<u64>,
    pub delivered: Vec<u64>,
    pub delay_sum: Vec<u64>,
    pub delay_max: Vec<u64>,
    /// Per flow, counts of sojourn times `0, 1, ...`, last bin open-ended.
    pub delay_histogram: Vec<Vec<u64>>,
    pub queue_drops: Vec<u64>,
    pub pool_drops: Vec<u64>,
    /// Injections per ingress link.
    pub injected: Vec<u64>,
    pub final_prices: Vec<f64>,
    pub final_budgets: Vec<f64>,
    /// Mean price of each entity over the tail.
    pub tail_mean_prices: Vec<f64>,
    /// Smallest and largest `max_l lambda_l` over the tail slots.
    pub tail_max_price_range: Option<(f64, f64)>,
}

impl MetricsLog {
    pub fn measured_slots(&self) -> u64 {
        self.horizon - self.warmup
    }

    pub fn avg_total_queue(&self) -> f64 {
        self.avg_link_queue.iter().sum()
    }

    pub fn avg_delay(&self, flow: usize) -> Option<f64> {
        (self.delivered[flow] > 0).then(|| self.delay_sum[flow] as f64 / self.delivered[flow] as f64)
    }

    /// Mean sojourn over all delivered packets; zero when nothing was delivered.
    pub fn avg_delay_all(&self) -> f64 {
        let n: u64 = self.delivered.iter().sum();
        if n == 0 {
            return 0.0;
        }
        self.delay_sum.iter().sum::<u64>() as f64 / n as f64
    }

    pub fn throughput(&self, flow: usize) -> f64 {
        self.delivered[flow] as f64 / self.measured_slots() as f64
    }

    pub fn total_throughput(&self) -> f64 {
        (0..self.flow_names.len()).map(|f| self.throughput(f)).sum()
    }

    pub fn arrival_rate(&self, flow: usize) -> f64 {
        self.arrivals[flow] as f64 / self.measured_slots() as f64
    }

    pub fn drops(&self, flow: usize) -> u64 {
        self.queue_drops[flow] + self.pool_drops[flow]
    }

    pub fn total_drops(&self) -> u64 {
        (0..self.flow_names.len()).map(|f| self.drops(f)).sum()
    }

    /// `mean sojourn * delivery rate` against the time-averaged number of the
    /// flow's packets in the system.
    pub fn little_check(&self, flow: usize) -> LittleCheck {
        let lhs = self.avg_delay(flow).unwrap_or(0.0) * self.throughput(flow);
        let rhs = self.avg_flow_in_system[flow];
        let rel_err = if rhs == 0.0 { lhs.abs() } else { (lhs - rhs).abs() / rhs };
        LittleCheck { flow, lhs, rhs, rel_err }
    }

    /// Sampled time series, one row per stride.
    pub fn series_csv(&self) -> String {
        let mut s = String::from("slot");
        for n in &self.link_names {
            let _ = write!(s, ",queue:{n}");
        }
        for n in &self.flow_names {
            let _ = write!(s, ",flow_queue:{n},pool:{n}");
        }
        for n in &self.price_labels {
            let _ = write!(s, ",price:{n}");
        }
        for n in &self.price_labels {
            let _ = write!(s, ",budget:{n}");
        }
        s.push_str(",running_avg_queue\n");
        for r in &self.samples {
            let _ = write!(s, "{}", r.slot);
            for q in &r.link_queues {
                let _ = write!(s, ",{q}");
            }
            for (q, p) in r.flow_queues.iter().zip(&r.pools) {
                let _ = write!(s, ",{q},{p}");
            }
            for p in r.prices.iter().chain(&r.budgets) {
                let _ = write!(s, ",{p:?}");
            }
            let _ = writeln!(s, ",{:?}", r.running_avg_queue);
        }
        s
    }

    /// Per-flow summary table.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "flow,arrival_rate,throughput,avg_delay,max_delay,avg_queue,avg_in_system,queue_drops,pool_drops\n",
        );
        for (f, name) in self.flow_names.iter().enumerate() {
            let _ = writeln!(
                s,
                "{name},{:?},{:?},{:?},{},{:?},{:?},{},{}",
                self.arrival_rate(f),
                self.throughput(f),
                self.avg_delay(f).unwrap_or(0.0),
                self.delay_max[f],
                self.avg_flow_queue[f],
                self.avg_flow_in_system[f],
                self.queue_drops[f],
                self.pool_drops[f],
            );
        }
        s
    }

    /// Per-link averages plus final and tail prices and budgets.
    pub fn links_csv(&self) -> String {
        let mut s = String::from("link,avg_queue,injected\n");
        for (l, name) in self.link_names.iter().enumerate() {
            let _ = writeln!(s, "{name},{:?},{}", self.avg_link_queue[l], self.injected[l]);
        }
        if !self.price_labels.is_empty() {
            s.push_str("\nentity,final_price,tail_mean_price,final_budget\n");
            for (i, name) in self.price_labels.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{name},{:?},{:?},{:?}",
                    self.final_prices[i],
                    self.tail_mean_prices[i],
                    self.final_budgets.get(i).copied().unwrap_or(0.0)
                );
            }
        }
        s
    }

    pub fn delay_histogram_csv(&self) -> String {
        let mut s = String::from("flow,sojourn,count\n");
        for (f, name) in self.flow_names.iter().enumerate() {
            for (d, &c) in self.delay_histogram[f].iter().enumerate() {
                if c > 0 {
                    let _ = writeln!(s, "{name},{d},{c}");
                }
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LittleCheck {
    pub flow: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
}

/// Replaces a `reference_budget` by the `total_budget` it yields: runs the
/// reference policy for its pilot horizon on `spec` with the seed and
/// underlay of `config`. Other configurations come back unchanged.
pub fn resolve_reference_budget(
    spec: &NetworkSpec,
    config: &SimConfig,
    controller: &ControllerConfig,
) -> Result<ControllerConfig> {
    let Some(r) = &controller.reference_budget else {
        return Ok(controller.clone());
    };
    if controller.total_budget.is_some() || controller.delay_target.is_some() {
        return Err(Error::Config("set only one of total_budget, delay_target and reference_budget".into()));
    }
    if !(r.scale > 0.0) || !r.scale.is_finite() {
        return Err(Error::Config(format!("reference_budget scale {} must be positive", r.scale)));
    }
    let kind: ControllerKind = r.controller.parse()?;
    if matches!(kind, ControllerKind::Poc | ControllerKind::PocTunnel) {
        return Err(Error::Config(format!("reference_budget needs a controller without a budget, not {kind}")));
    }
    let pilot = SimConfig {
        horizon: r.horizon,
        controller: r.controller.clone(),
        stride: r.horizon.max(1),
        warmup: None,
        ..config.clone()
    };
    let plain = ControllerConfig { reference_budget: None, ..controller.clone() };
    let log = run_simulation(spec, &pilot, &plain)?;
    Ok(ControllerConfig { total_budget: Some(r.scale * log.avg_total_queue()), ..plain })
}

/// Builds the controller named in `config` and runs it.
pub fn run_simulation(spec: &NetworkSpec, config: &SimConfig, controller: &ControllerConfig) -> Result<MetricsLog> {
    config.validate()?;
    let policy: UnderlayPolicy = config.underlay.parse()?;
    let kind: ControllerKind = config.controller.parse()?;
    let underlay = Underlay::new(spec.clone(), policy)?;
    let controller = match kind {
        ControllerKind::Poc | ControllerKind::PocTunnel => resolve_reference_budget(spec, config, controller)?,
        _ => controller.clone(),
    };
    let mut ctrl = build_controller(kind, &underlay, &controller, config.seed)?;
    run_with_controller(&underlay, config, ctrl.as_mut())
}

/// Runs a prepared controller. Each slot: record the start-of-slot state,
/// `decide`, step the underlay, `observe`.
pub fn run_with_controller(underlay: &Underlay, config: &SimConfig, ctrl: &mut dyn Controller) -> Result<MetricsLog> {
    config.validate()?;
    let spec = underlay.spec();
    let nl = spec.links.len();
    let nf = spec.flows.len();
    let warmup = config.warmup_slots();
    let tail_start = config.tail_start();
    let mut rng = NetworkRng::new(config.seed);
    let mut state = underlay.new_state();
    let mut rec = underlay.new_record();
    let mut injections: Vec<Vec<u32>> = (0..nf).map(|f| vec![0; underlay.ingress(f).len()]).collect();

    let mut link_sum = vec![0u64; nl];
    let mut flow_sum = vec![0u64; nf];
    let mut system_sum = vec![0u64; nf];
    let mut arrivals = vec![0u64; nf];
    let mut delivered = vec![0u64; nf];
    let mut delay_sum = vec![0u64; nf];
    let mut delay_max = vec![0u64; nf];
    let mut histogram = vec![vec![0u64; DELAY_HISTOGRAM_BINS]; nf];
    let mut queue_drops = vec![0u64; nf];
    let mut pool_drops = vec![0u64; nf];
    let mut injected = vec![0u64; nl];
    let mut samples = Vec::new();
    let mut tail_price_sum: Vec<f64> = Vec::new();
    let mut tail_range: Option<(f64, f64)> = None;
    let mut total_sum = 0u64;

    for t in 0..config.horizon {
        let measured = t >= warmup;
        if measured {
            for (l, s) in link_sum.iter_mut().enumerate() {
                let q = state.link_total(l) as u64;
                *s += q;
                total_sum += q;
            }
            for f in 0..nf {
                flow_sum[f] += state.flow_network_total(f);
                system_sum[f] += state.flow_in_system(f);
            }
        }

        let view = View { slot: t, underlay, state: &state };
        ctrl.decide(&view, &mut injections)?;

        let prices = ctrl.prices();
        if t >= tail_start && !prices.is_empty() {
            if tail_price_sum.is_empty() {
                tail_price_sum = vec![0.0; prices.len()];
            }
            let mut m = f64::NEG_INFINITY;
            for (s, &p) in tail_price_sum.iter_mut().zip(prices) {
                *s += p;
                m = m.max(p);
            }
            tail_range = Some(tail_range.map_or((m, m), |(lo, hi)| (lo.min(m), hi.max(m))));
        }
        if t % config.stride == 0 {
            let n_meas = if measured { t - warmup + 1 } else { 0 };
            samples.push(Sample {
                slot: t,
                link_queues: (0..nl).map(|l| state.link_total(l)).collect(),
                flow_queues: (0..nf).map(|f| state.flow_network_total(f)).collect(),
                pools: (0..nf).map(|f| state.pool_len(f)).collect(),
                prices: prices.to_vec(),
                budgets: ctrl.budgets().to_vec(),
                running_avg_queue: if n_meas > 0 { total_sum as f64 / n_meas as f64 } else { 0.0 },
            });
        }

        underlay.step(&mut state, &injections, &mut rng, t, &mut rec)?;

        if measured {
            for f in 0..nf {
                arrivals[f] += rec.external_arrivals[f] as u64;
                pool_drops[f] += rec.pool_drops[f] as u64;
            }
            for (e, &d) in rec.drops.iter().enumerate() {
                queue_drops[underlay.layout().entry_key(e).1] += d as u64;
            }
            for (i, &u) in injected.iter_mut().zip(&rec.injected) {
                *i += u as u64;
            }
            for d in &rec.delivered {
                let s = d.sojourn();
                delivered[d.flow] += 1;
                delay_sum[d.flow] += s;
                delay_max[d.flow] = delay_max[d.flow].max(s);
                histogram[d.flow][(s as usize).min(DELAY_HISTOGRAM_BINS - 1)] += 1;
            }
        }

        let view = View { slot: t, underlay, state: &state };
        ctrl.observe(&view, &rec)?;
    }

    let n = (config.horizon - warmup) as f64;
    let tail_len = (config.horizon - tail_start) as f64;
    Ok(MetricsLog {
        controller: ctrl.kind().id().to_owned(),
        seed: config.seed,
        horizon: config.horizon,
        warmup,
        link_names: spec.links.iter().map(|l| l.name.clone()).collect(),
        flow_names: spec.flows.iter().map(|f| f.name.clone()).collect(),
        price_labels: ctrl.price_labels(),
        samples,
        avg_link_queue: link_sum.iter().map(|&s| s as f64 / n).collect(),
        avg_flow_queue: flow_sum.iter().map(|&s| s as f64 / n).collect(),
        avg_flow_in_system: system_sum.iter().map(|&s| s as f64 / n).collect(),
        arrivals,
        delivered,
        delay_sum,
        delay_max,
        delay_histogram: histogram,
        queue_drops,
        pool_drops,
        injected,
        final_prices: ctrl.prices().to_vec(),
        final_budgets: ctrl.budgets().to_vec(),
        tail_mean_prices: tail_price_sum.iter().map(|s| s / tail_len).collect(),
        tail_max_price_range: tail_range,
    })
}

/// One row of a rate sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub controller: String,
    pub rate: f64,
    pub seed: u64,
    pub avg_delay: f64,
    pub avg_queue: f64,
    pub throughput: f64,
    pub drops: u64,
}

/// Runs every `(controller, rate, seed)` combination. Each flow's mean
/// arrival rate is set to `rate`; runs with the same seed share their
/// arrival and capacity randomness across controllers.
pub fn sweep_arrival_rate(
    spec: &NetworkSpec,
    config: &SimConfig,
    controller: &ControllerConfig,
    controllers: &[String],
    rates: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if controllers.is_empty() {
        return Err(Error::Config("no controllers to sweep".into()));
    }
    for c in controllers {
        c.parse::<ControllerKind>()?;
    }
    let mut jobs = Vec::new();
    for c in controllers {
        for &rate in rates {
            for &seed in seeds {
                jobs.push((c.clone(), rate, seed));
            }
        }
    }
    let run = |(c, rate, seed): &(String, f64, u64)| -> Result<SweepRow> {
        let spec = spec.with_arrival_rate(*rate)?;
        let cfg = SimConfig { seed: *seed, controller: c.clone(), ..config.clone() };
        let log = run_simulation(&spec, &cfg, controller)?;
        Ok(SweepRow {
            controller: c.clone(),
            rate: *rate,
            seed: *seed,
            avg_delay: log.avg_delay_all(),
            avg_queue: log.avg_total_queue(),
            throughput: log.total_throughput(),
            drops: log.total_drops(),
        })
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<Result<SweepRow>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Result<SweepRow>> = jobs.iter().map(run).collect();
    rows.into_iter().collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("controller,rate,seed,avg_delay,avg_queue,throughput,drops\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:?},{},{:?},{:?},{:?},{}",
            r.controller, r.rate, r.seed, r.avg_delay, r.avg_queue, r.throughput, r.drops
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_checks() {
        let mut c = SimConfig { horizon: 10, ..SimConfig::default() };
        assert!(c.validate().is_ok());
        assert_eq!(c.warmup_slots(), 1);
        c.stride = 0;
        assert!(c.validate().is_err());
        c.stride = 1;
        c.warmup = Some(10);
        assert!(c.validate().is_err());
        c.horizon = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn tail_start() {
        let c = SimConfig { horizon: 1000, tail_fraction: 0.1, ..SimConfig::default() };
        assert_eq!(c.tail_start(), 900);
    }
}
