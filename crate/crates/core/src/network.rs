//! Network model and one-slot underlay dynamics.
//!
//! A [`NetworkSpec`] describes the graph, the per-link capacity laws, the
//! flows, the static capacity split `mu[link][flow]` and the per-flow
//! randomized routing matrices. [`Underlay`] owns a validated spec plus the
//! derived index structures and advances a [`QueueState`] by one slot.
//!
//! Event order inside a slot:
//!
//! 1. the overlay moves packets from source pools into ingress queues,
//! 2. link capacities are sampled,
//! 3. every link serves packets present at the start of the slot and routes
//!    them to the next queue (or delivers them),
//! 4. external arrivals join the source pools,
//! 5. queues above the buffer cap drop their newest packets.
//!
//! Injected and routed packets are appended after service, so each queue
//! follows `q' = min(C, (q - D)^+ + A)`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Overlay,
    Underlay,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub role: NodeRole,
}

/// Per-slot i.i.d. packet count: link service capability or flow arrivals.
///
/// `Bernoulli { n, p }` is the sum of `n` independent Bernoulli(`p`) trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CountDistribution {
    Deterministic { value: u32 },
    Bernoulli { n: u32, p: f64 },
}

pub type CapacityDistribution = CountDistribution;
pub type ArrivalDistribution = CountDistribution;

impl CountDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            Self::Deterministic { value } => value as f64,
            Self::Bernoulli { n, p } => n as f64 * p,
        }
    }

    /// Largest value the distribution can produce.
    pub fn max(&self) -> u32 {
        match *self {
            Self::Deterministic { value } => value,
            Self::Bernoulli { n, p } if p > 0.0 => n,
            Self::Bernoulli { .. } => 0,
        }
    }

    /// Draws one value. Consumes a fixed number of uniforms (`n` for
    /// Bernoulli, none for deterministic) so that streams stay aligned
    /// across runs that differ only in control decisions.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match *self {
            Self::Deterministic { value } => value,
            Self::Bernoulli { n, p } => {
                let mut k = 0;
                for _ in 0..n {
                    if rng.gen::<f64>() < p {
                        k += 1;
                    }
                }
                k
            }
        }
    }

    /// Same family with the given mean: Bernoulli keeps `n` and sets
    /// `p = mean / n`; deterministic requires an integral mean.
    pub fn with_mean(&self, mean: f64) -> Result<Self> {
        if !(mean >= 0.0) {
            return Err(Error::Config(format!("negative rate {mean}")));
        }
        match *self {
            Self::Deterministic { .. } => {
                if mean.fract() != 0.0 {
                    return Err(Error::Config(format!("deterministic arrivals cannot have non-integral rate {mean}")));
                }
                Ok(Self::Deterministic { value: mean as u32 })
            }
            Self::Bernoulli { n, .. } => {
                if n == 0 && mean > 0.0 || mean > n as f64 {
                    return Err(Error::Config(format!("rate {mean} exceeds the per-slot maximum {n}")));
                }
                let p = if n == 0 { 0.0 } else { mean / n as f64 };
                Ok(Self::Bernoulli { n, p })
            }
        }
    }

    fn problem(&self) -> Option<String> {
        match *self {
            Self::Deterministic { .. } => None,
            Self::Bernoulli { p, .. } if !(0.0..=1.0).contains(&p) => Some(format!("bernoulli p = {p} outside [0, 1]")),
            Self::Bernoulli { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub name: String,
    pub tail: usize,
    pub head: usize,
    pub capacity: CapacityDistribution,
    /// Overrides the per-slot injection cap of an ingress link.
    pub injection_cap: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    pub name: String,
    pub source: usize,
    pub destination: usize,
    pub arrivals: ArrivalDistribution,
    /// Links that may carry the flow (`R_f`), ascending link index.
    pub route: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub flows: Vec<FlowSpec>,
    /// `sharing[link][flow]`: fraction of the link's capacity given to the flow.
    pub sharing: Vec<Vec<f64>>,
    /// `routing[flow][link]`: `(next link, probability)` rows.
    pub routing: Vec<Vec<Vec<(usize, f64)>>>,
    /// Per-queue buffer cap `C`.
    pub buffer_cap: u32,
}

impl NetworkSpec {
    pub fn link_index(&self, name: &str) -> Result<usize> {
        self.links
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownName { kind: "link", name: name.to_owned() })
    }

    pub fn flow_index(&self, name: &str) -> Result<usize> {
        self.flows
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::UnknownName { kind: "flow", name: name.to_owned() })
    }

    pub fn in_route(&self, flow: usize, link: usize) -> bool {
        self.flows[flow].route.binary_search(&link).is_ok()
    }

    /// A link whose head is the flow's destination: served packets leave the network.
    pub fn is_terminal(&self, flow: usize, link: usize) -> bool {
        self.links[link].head == self.flows[flow].destination
    }

    /// Links of `R_f` leaving the flow's source, ascending index.
    pub fn ingress_links(&self, flow: usize) -> Vec<usize> {
        let src = self.flows[flow].source;
        self.flows[flow].route.iter().copied().filter(|&l| self.links[l].tail == src).collect()
    }

    /// Per-slot injection cap of an ingress link; defaults to the link's
    /// mean capacity rounded up.
    pub fn injection_cap(&self, link: usize) -> u32 {
        let l = &self.links[link];
        l.injection_cap.unwrap_or_else(|| l.capacity.mean().ceil() as u32)
    }

    pub fn flows_on_link(&self, link: usize) -> Vec<usize> {
        (0..self.flows.len()).filter(|&f| self.in_route(f, link)).collect()
    }

    /// Copy of the spec with every flow's mean arrival rate set to `rate`.
    pub fn with_arrival_rate(&self, rate: f64) -> Result<NetworkSpec> {
        let mut out = self.clone();
        for f in &mut out.flows {
            f.arrivals = f.arrivals.with_mean(rate)?;
        }
        Ok(out)
    }

    pub fn total_arrival_rate(&self) -> f64 {
        self.flows.iter().map(|f| f.arrivals.mean()).sum()
    }
}

/// One violated modelling assumption.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    SharingSum { link: String, sum: f64 },
    SharingOffRoute { link: String, flow: String, ratio: f64 },
    SharingRange { link: String, flow: String, ratio: f64 },
    RoutingSum { flow: String, link: String, sum: f64 },
    RoutingRow { flow: String, link: String, msg: String },
    OverlayToOverlay { link: String },
    EndpointNotOverlay { flow: String, node: String },
    SharedSource { node: String, flows: Vec<String> },
    UnderlayDisconnected { components: usize },
    NoIngress { flow: String },
    Distribution { owner: String, msg: String },
    BufferCap,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SharingSum { link, sum } => {
                write!(f, "sharing ratios on link {link} sum to {sum}, expected 1")
            }
            Self::SharingOffRoute { link, flow, ratio } => {
                write!(f, "flow {flow} has ratio {ratio} on link {link} outside its route")
            }
            Self::SharingRange { link, flow, ratio } => {
                write!(f, "ratio {ratio} of flow {flow} on link {link} outside [0, 1]")
            }
            Self::RoutingSum { flow, link, sum } => {
                write!(f, "routing row of flow {flow} at link {link} sums to {sum}, expected 1")
            }
            Self::RoutingRow { flow, link, msg } => {
                write!(f, "routing row of flow {flow} at link {link}: {msg}")
            }
            Self::OverlayToOverlay { link } => {
                write!(f, "link {link} joins two overlay nodes")
            }
            Self::EndpointNotOverlay { flow, node } => {
                write!(f, "flow {flow} endpoint {node} is not an overlay node")
            }
            Self::SharedSource { node, flows } => {
                write!(f, "flows {} share source node {node}", flows.join(", "))
            }
            Self::UnderlayDisconnected { components } => {
                write!(f, "underlay subgraph is not weakly connected ({components} components)")
            }
            Self::NoIngress { flow } => write!(f, "flow {flow} has no ingress link in its route"),
            Self::Distribution { owner, msg } => write!(f, "{owner}: {msg}"),
            Self::BufferCap => write!(f, "buffer cap must be at least 1"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return writeln!(f, "PASS");
        }
        writeln!(f, "FAIL ({} violations)", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Checks every structural assumption of the model. Never fails; all
/// problems are collected into the report.
pub fn validate(spec: &NetworkSpec) -> ValidationReport {
    let mut out = Vec::new();
    let node = |i: usize| spec.nodes[i].name.clone();
    let overlay = |i: usize| spec.nodes[i].role == NodeRole::Overlay;

    if spec.buffer_cap == 0 {
        out.push(Violation::BufferCap);
    }

    for (li, link) in spec.links.iter().enumerate() {
        if overlay(link.tail) && overlay(link.head) {
            out.push(Violation::OverlayToOverlay { link: link.name.clone() });
        }
        if let Some(msg) = link.capacity.problem() {
            out.push(Violation::Distribution { owner: format!("link {}", link.name), msg });
        }
        let mut sum = 0.0;
        let mut used = false;
        for (fi, flow) in spec.flows.iter().enumerate() {
            let ratio = spec.sharing[li][fi];
            if !(0.0..=1.0).contains(&ratio) {
                out.push(Violation::SharingRange { link: link.name.clone(), flow: flow.name.clone(), ratio });
            }
            if spec.in_route(fi, li) {
                used = true;
            } else if ratio != 0.0 {
                out.push(Violation::SharingOffRoute { link: link.name.clone(), flow: flow.name.clone(), ratio });
            }
            sum += ratio;
        }
        if (used || sum != 0.0) && (sum - 1.0).abs() > SUM_TOL {
            out.push(Violation::SharingSum { link: link.name.clone(), sum });
        }
    }

    for (fi, flow) in spec.flows.iter().enumerate() {
        for end in [flow.source, flow.destination] {
            if !overlay(end) {
                out.push(Violation::EndpointNotOverlay { flow: flow.name.clone(), node: node(end) });
            }
        }
        if let Some(msg) = flow.arrivals.problem() {
            out.push(Violation::Distribution { owner: format!("flow {}", flow.name), msg });
        }
        if spec.ingress_links(fi).is_empty() {
            out.push(Violation::NoIngress { flow: flow.name.clone() });
        }
        for (li, row) in spec.routing[fi].iter().enumerate() {
            let link = &spec.links[li];
            let in_route = spec.in_route(fi, li);
            let terminal = spec.is_terminal(fi, li);
            let bad = |msg: String| Violation::RoutingRow { flow: flow.name.clone(), link: link.name.clone(), msg };
            if !in_route || terminal {
                if !row.is_empty() {
                    out.push(bad("row present for a link that is off-route or terminal".into()));
                }
                continue;
            }
            let mut sum = 0.0;
            for &(next, p) in row {
                if !(0.0..=1.0).contains(&p) {
                    out.push(bad(format!("probability {p} outside [0, 1]")));
                }
                if !spec.in_route(fi, next) {
                    out.push(bad(format!("next link {} is outside the route", spec.links[next].name)));
                }
                if spec.links[next].tail != link.head {
                    out.push(bad(format!(
                        "next link {} does not start at node {}",
                        spec.links[next].name,
                        node(link.head)
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > SUM_TOL {
                out.push(Violation::RoutingSum { flow: flow.name.clone(), link: link.name.clone(), sum });
            }
        }
    }

    let mut by_source: Vec<(usize, Vec<String>)> = Vec::new();
    for flow in &spec.flows {
        match by_source.iter_mut().find(|(s, _)| *s == flow.source) {
            Some((_, names)) => names.push(flow.name.clone()),
            None => by_source.push((flow.source, vec![flow.name.clone()])),
        }
    }
    for (src, flows) in by_source {
        if flows.len() > 1 {
            out.push(Violation::SharedSource { node: node(src), flows });
        }
    }

    let components = underlay_components(spec);
    if components > 1 {
        out.push(Violation::UnderlayDisconnected { components });
    }

    ValidationReport { violations: out }
}

/// Weakly connected components of the subgraph induced by underlay nodes.
fn underlay_components(spec: &NetworkSpec) -> usize {
    let n = spec.nodes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for link in &spec.links {
        let (a, b) = (link.tail, link.head);
        if spec.nodes[a].role == NodeRole::Underlay && spec.nodes[b].role == NodeRole::Underlay {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
    }
    let mut roots: Vec<usize> =
        (0..n).filter(|&i| spec.nodes[i].role == NodeRole::Underlay).map(|i| find(&mut parent, i)).collect();
    roots.sort_unstable();
    roots.dedup();
    roots.len()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UnderlayPolicy {
    /// Fixed capacity split `mu`, unused shares are wasted.
    #[default]
    StaticSplit,
    /// Each capacity unit serves the currently longest queue on the link.
    LongestQueueFirst,
}

impl FromStr for UnderlayPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static-split" => Ok(Self::StaticSplit),
            "longest-queue-first" | "lqf" => Ok(Self::LongestQueueFirst),
            other => Err(Error::UnknownUnderlayPolicy(other.to_owned())),
        }
    }
}

impl fmt::Display for UnderlayPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::StaticSplit => "static-split",
            Self::LongestQueueFirst => "longest-queue-first",
        })
    }
}

/// A packet with its external arrival slot, the slot it joined its current
/// queue and the ingress link (tunnel) it was injected on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Packet {
    pub born: u64,
    pub entered: u64,
    pub tunnel: u32,
}

const NO_TUNNEL: u32 = u32::MAX;

/// Dense indexing of the `(link, flow)` queues that may be nonempty.
#[derive(Clone, Debug, PartialEq)]
pub struct QueueLayout {
    entry: Vec<Vec<Option<usize>>>,
    entries: Vec<(usize, usize)>,
    link_entries: Vec<Vec<usize>>,
    flow_entries: Vec<Vec<usize>>,
    num_links: usize,
}

impl QueueLayout {
    pub fn new(spec: &NetworkSpec) -> Self {
        let nl = spec.links.len();
        let nf = spec.flows.len();
        let mut entry = vec![vec![None; nf]; nl];
        let mut entries = Vec::new();
        let mut link_entries = vec![Vec::new(); nl];
        let mut flow_entries = vec![Vec::new(); nf];
        for (fi, flow) in spec.flows.iter().enumerate() {
            for &l in &flow.route {
                let e = entries.len();
                entries.push((l, fi));
                entry[l][fi] = Some(e);
                flow_entries[fi].push(e);
            }
        }
        for (e, &(l, _)) in entries.iter().enumerate() {
            link_entries[l].push(e);
        }
        for le in &mut link_entries {
            le.sort_by_key(|&e| entries[e].1);
        }
        Self { entry, entries, link_entries, flow_entries, num_links: nl }
    }

    pub fn entry(&self, link: usize, flow: usize) -> Option<usize> {
        self.entry[link][flow]
    }

    /// `(link, flow)` of a queue entry.
    pub fn entry_key(&self, e: usize) -> (usize, usize) {
        self.entries[e]
    }

    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn num_links(&self) -> usize {
        self.num_links
    }

    pub fn num_flows(&self) -> usize {
        self.flow_entries.len()
    }

    /// Entries of a flow, in route order.
    pub fn flow_entries(&self, flow: usize) -> &[usize] {
        &self.flow_entries[flow]
    }

    /// Entries sharing a link, ascending flow index.
    pub fn link_entries(&self, link: usize) -> &[usize] {
        &self.link_entries[link]
    }
}

/// Per-link per-flow FIFO queues plus per-flow source pools.
#[derive(Clone, Debug, PartialEq)]
pub struct QueueState {
    layout: Arc<QueueLayout>,
    cap: u32,
    queues: Vec<VecDeque<Packet>>,
    pools: Vec<VecDeque<Packet>>,
    in_flight: Vec<u32>,
}

impl QueueState {
    pub fn new(spec: &NetworkSpec) -> Self {
        Self::with_layout(Arc::new(QueueLayout::new(spec)), spec.buffer_cap)
    }

    pub fn with_layout(layout: Arc<QueueLayout>, cap: u32) -> Self {
        Self {
            queues: vec![VecDeque::new(); layout.num_entries()],
            pools: vec![VecDeque::new(); layout.num_flows()],
            in_flight: vec![0; layout.num_links()],
            layout,
            cap,
        }
    }

    pub fn layout(&self) -> &QueueLayout {
        &self.layout
    }

    pub fn buffer_cap(&self) -> u32 {
        self.cap
    }

    /// `Q^f_l`; zero for links outside the flow's route.
    pub fn len(&self, link: usize, flow: usize) -> u32 {
        self.layout.entry(link, flow).map_or(0, |e| self.queues[e].len() as u32)
    }

    pub fn entry_len(&self, e: usize) -> u32 {
        self.queues[e].len() as u32
    }

    pub fn queue(&self, link: usize, flow: usize) -> Option<&VecDeque<Packet>> {
        self.layout.entry(link, flow).map(|e| &self.queues[e])
    }

    /// `Q^f` in route order.
    pub fn flow_queue(&self, flow: usize) -> impl Iterator<Item = u32> + '_ {
        self.layout.flow_entries(flow).iter().map(move |&e| self.queues[e].len() as u32)
    }

    /// `||Q_l||`.
    pub fn link_total(&self, link: usize) -> u32 {
        self.layout.link_entries(link).iter().map(|&e| self.queues[e].len() as u32).sum()
    }

    /// Packets waiting at the flow's source (not yet injected).
    pub fn pool_len(&self, flow: usize) -> u32 {
        self.pools[flow].len() as u32
    }

    /// Packets injected on a tunnel (ingress link) and still in the network.
    pub fn in_flight(&self, tunnel: usize) -> u32 {
        self.in_flight[tunnel]
    }

    /// `||Q||`, all link queues.
    pub fn total_network(&self) -> u64 {
        self.queues.iter().map(|q| q.len() as u64).sum()
    }

    pub fn flow_network_total(&self, flow: usize) -> u64 {
        self.layout.flow_entries(flow).iter().map(|&e| self.queues[e].len() as u64).sum()
    }

    /// Packets of the flow anywhere in the system, source pool included.
    pub fn flow_in_system(&self, flow: usize) -> u64 {
        self.flow_network_total(flow) + self.pools[flow].len() as u64
    }

    pub fn total_in_system(&self) -> u64 {
        self.total_network() + self.pools.iter().map(|p| p.len() as u64).sum::<u64>()
    }

    /// Appends `count` packets to a link queue, ignoring the buffer cap.
    /// Intended for building test and oracle states.
    pub fn fill(&mut self, link: usize, flow: usize, count: u32, born: u64, tunnel: Option<usize>) {
        let e =
            self.layout.entry(link, flow).unwrap_or_else(|| panic!("link {link} is not in the route of flow {flow}"));
        let tunnel = tunnel.map_or(NO_TUNNEL, |t| t as u32);
        for _ in 0..count {
            self.queues[e].push_back(Packet { born, entered: born, tunnel });
        }
        if tunnel != NO_TUNNEL {
            self.in_flight[tunnel as usize] += count;
        }
    }

    /// Appends `count` packets to a flow's source pool.
    pub fn fill_pool(&mut self, flow: usize, count: u32, born: u64) {
        for _ in 0..count {
            self.pools[flow].push_back(Packet { born, entered: born, tunnel: NO_TUNNEL });
        }
    }

    /// Checks the buffer bound and the in-flight bookkeeping.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut counted = vec![0u32; self.in_flight.len()];
        for (e, q) in self.queues.iter().enumerate() {
            if q.len() as u32 > self.cap {
                return Err(format!("entry {e} holds {} > cap {}", q.len(), self.cap));
            }
            for p in q {
                if p.tunnel != NO_TUNNEL {
                    counted[p.tunnel as usize] += 1;
                }
            }
        }
        if counted != self.in_flight {
            return Err(format!("in-flight {:?} != counted {:?}", self.in_flight, counted));
        }
        for (f, p) in self.pools.iter().enumerate() {
            if p.len() as u32 > self.cap {
                return Err(format!("pool {f} holds {} > cap {}", p.len(), self.cap));
            }
        }
        Ok(())
    }
}

/// A delivered packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub flow: usize,
    pub link: usize,
    pub born: u64,
    pub entered: u64,
    pub slot: u64,
}

impl Delivery {
    /// Slots between external arrival and delivery.
    pub fn sojourn(&self) -> u64 {
        self.slot - self.born
    }
}

/// Everything that happened during one slot. Reused across slots.
#[derive(Clone, Debug, Default)]
pub struct SlotRecord {
    pub slot: u64,
    /// Per link.
    pub capacities: Vec<u32>,
    /// Per entry: capacity units assigned to the queue.
    pub shares: Vec<u32>,
    /// Per entry.
    pub departures: Vec<u32>,
    /// Per entry: injected plus routed packets offered to the queue.
    pub arrivals: Vec<u32>,
    /// Per entry: overflow drops.
    pub drops: Vec<u32>,
    /// Per link (tunnel): packets injected by the overlay.
    pub injected: Vec<u32>,
    /// Per link (tunnel): packets of that tunnel delivered this slot.
    pub tunnel_delivered: Vec<u32>,
    /// Per link (tunnel): packets of that tunnel dropped this slot.
    pub tunnel_dropped: Vec<u32>,
    /// Per flow.
    pub external_arrivals: Vec<u32>,
    /// Per flow: arrivals dropped at a full source pool.
    pub pool_drops: Vec<u32>,
    /// Per flow.
    pub deliveries: Vec<u32>,
    pub delivered: Vec<Delivery>,
    staged: Vec<Vec<Packet>>,
}

impl SlotRecord {
    pub fn new(layout: &QueueLayout) -> Self {
        let (ne, nl, nf) = (layout.num_entries(), layout.num_links(), layout.num_flows());
        Self {
            slot: 0,
            capacities: vec![0; nl],
            shares: vec![0; ne],
            departures: vec![0; ne],
            arrivals: vec![0; ne],
            drops: vec![0; ne],
            injected: vec![0; nl],
            tunnel_delivered: vec![0; nl],
            tunnel_dropped: vec![0; nl],
            external_arrivals: vec![0; nf],
            pool_drops: vec![0; nf],
            deliveries: vec![0; nf],
            delivered: Vec::new(),
            staged: vec![Vec::new(); ne],
        }
    }

    fn reset(&mut self, slot: u64) {
        self.slot = slot;
        for v in [
            &mut self.capacities,
            &mut self.shares,
            &mut self.departures,
            &mut self.arrivals,
            &mut self.drops,
            &mut self.injected,
            &mut self.tunnel_delivered,
            &mut self.tunnel_dropped,
            &mut self.external_arrivals,
            &mut self.pool_drops,
            &mut self.deliveries,
        ] {
            v.iter_mut().for_each(|x| *x = 0);
        }
        self.delivered.clear();
        for s in &mut self.staged {
            s.clear();
        }
    }

    pub fn total_drops(&self) -> u64 {
        self.drops.iter().chain(&self.pool_drops).map(|&d| d as u64).sum()
    }
}

/// Independent random streams for the four sources of randomness. Keeping
/// them apart makes arrivals and capacities identical across controllers
/// that share a seed.
#[derive(Clone, Debug)]
pub struct NetworkRng {
    pub capacity: ChaCha8Rng,
    pub sharing: ChaCha8Rng,
    pub routing: ChaCha8Rng,
    pub arrivals: ChaCha8Rng,
}

impl NetworkRng {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Self { capacity: stream(1), sharing: stream(2), routing: stream(3), arrivals: stream(4) }
    }
}

/// A validated network plus the derived tables used to step it.
#[derive(Clone, Debug)]
pub struct Underlay {
    spec: NetworkSpec,
    layout: Arc<QueueLayout>,
    policy: UnderlayPolicy,
    ingress: Vec<Vec<usize>>,
    caps: Vec<Vec<u32>>,
    /// Per link: cumulative sharing ratios aligned with `layout.link_entries`.
    share_cdf: Vec<Vec<f64>>,
    /// Per entry: `None` when terminal, else `(next entry, cumulative prob)`.
    successors: Vec<Option<Vec<(usize, f64)>>>,
}

impl Underlay {
    pub fn new(spec: NetworkSpec, policy: UnderlayPolicy) -> Result<Self> {
        let report = validate(&spec);
        if !report.passed() {
            return Err(Error::Invalid(report.to_string()));
        }
        let layout = Arc::new(QueueLayout::new(&spec));
        let ingress: Vec<Vec<usize>> = (0..spec.flows.len()).map(|f| spec.ingress_links(f)).collect();
        let caps = ingress.iter().map(|ls| ls.iter().map(|&l| spec.injection_cap(l)).collect()).collect();
        let share_cdf = (0..spec.links.len())
            .map(|l| {
                let mut acc = 0.0;
                layout
                    .link_entries(l)
                    .iter()
                    .map(|&e| {
                        acc += spec.sharing[l][layout.entry_key(e).1];
                        acc
                    })
                    .collect()
            })
            .collect();
        let successors = (0..layout.num_entries())
            .map(|e| {
                let (l, f) = layout.entry_key(e);
                if spec.is_terminal(f, l) {
                    return None;
                }
                let mut acc = 0.0;
                Some(
                    spec.routing[f][l]
                        .iter()
                        .filter(|&&(_, p)| p > 0.0)
                        .map(|&(next, p)| {
                            acc += p;
                            (layout.entry(next, f).expect("validated route"), acc)
                        })
                        .collect(),
                )
            })
            .collect();
        Ok(Self { spec, layout, policy, ingress, caps, share_cdf, successors })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn policy(&self) -> UnderlayPolicy {
        self.policy
    }

    pub fn layout(&self) -> &Arc<QueueLayout> {
        &self.layout
    }

    pub fn new_state(&self) -> QueueState {
        QueueState::with_layout(self.layout.clone(), self.spec.buffer_cap)
    }

    pub fn new_record(&self) -> SlotRecord {
        SlotRecord::new(&self.layout)
    }

    /// Ingress links of a flow; injection vectors are indexed in this order.
    pub fn ingress(&self, flow: usize) -> &[usize] {
        &self.ingress[flow]
    }

    /// Per-slot injection caps aligned with [`Underlay::ingress`].
    pub fn injection_caps(&self, flow: usize) -> &[u32] {
        &self.caps[flow]
    }

    pub fn num_flows(&self) -> usize {
        self.spec.flows.len()
    }

    pub fn num_links(&self) -> usize {
        self.spec.links.len()
    }

    pub fn sample_capacities<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [u32]) {
        for (c, link) in out.iter_mut().zip(&self.spec.links) {
            *c = link.capacity.sample(rng);
        }
    }

    pub fn sample_arrivals<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [u32]) {
        for (a, flow) in out.iter_mut().zip(&self.spec.flows) {
            *a = flow.arrivals.sample(rng);
        }
    }

    /// Runs one full slot.
    pub fn step(
        &self,
        state: &mut QueueState,
        injections: &[Vec<u32>],
        rng: &mut NetworkRng,
        slot: u64,
        rec: &mut SlotRecord,
    ) -> Result<()> {
        rec.reset(slot);
        self.inject(state, injections, rec)?;
        let mut caps = std::mem::take(&mut rec.capacities);
        self.sample_capacities(&mut rng.capacity, &mut caps);
        self.serve_and_route(state, &caps, &mut rng.sharing, &mut rng.routing, slot, rec);
        rec.capacities = caps;
        self.admit_arrivals(state, &mut rng.arrivals, slot, rec);
        Ok(())
    }

    /// Moves packets from source pools to the staging area of their ingress
    /// queues. They join the queue after service.
    pub fn inject(&self, state: &mut QueueState, injections: &[Vec<u32>], rec: &mut SlotRecord) -> Result<()> {
        if injections.len() != self.num_flows() {
            return Err(Error::Config(format!(
                "expected injections for {} flows, got {}",
                self.num_flows(),
                injections.len()
            )));
        }
        for (f, alloc) in injections.iter().enumerate() {
            let caps = &self.caps[f];
            let available = state.pool_len(f);
            let total: u32 = alloc.iter().sum();
            if alloc.len() != caps.len() || alloc.iter().zip(caps).any(|(u, c)| u > c) || total > available {
                return Err(Error::BadInjection { flow: f, requested: alloc.clone(), caps: caps.clone(), available });
            }
            for (&link, &u) in self.ingress[f].iter().zip(alloc) {
                let e = self.layout.entry(link, f).expect("ingress in route");
                for _ in 0..u {
                    let mut p = state.pools[f].pop_front().expect("checked availability");
                    p.tunnel = link as u32;
                    rec.staged[e].push(p);
                }
                rec.injected[link] += u;
                state.in_flight[link] += u;
            }
        }
        Ok(())
    }

    /// Serves every queue from its start-of-slot contents, routes or
    /// delivers the served packets, then appends all staged packets with
    /// newest-first overflow drops.
    pub fn serve_and_route<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        &self,
        state: &mut QueueState,
        capacities: &[u32],
        share_rng: &mut R1,
        route_rng: &mut R2,
        slot: u64,
        rec: &mut SlotRecord,
    ) {
        rec.slot = slot;
        for link in 0..self.num_links() {
            let entries = self.layout.link_entries(link);
            let cap = capacities[link];
            match self.policy {
                UnderlayPolicy::StaticSplit => {
                    let cdf = &self.share_cdf[link];
                    if entries.len() == 1 && cdf[0] >= 1.0 - SUM_TOL {
                        rec.shares[entries[0]] = cap;
                    } else {
                        for _ in 0..cap {
                            let u: f64 = share_rng.gen();
                            if let Some(k) = cdf.iter().position(|&c| u < c) {
                                rec.shares[entries[k]] += 1;
                            } else if let Some(&last) = entries.last() {
                                // ratios sum to 1 up to rounding
                                rec.shares[last] += 1;
                            }
                        }
                    }
                }
                UnderlayPolicy::LongestQueueFirst => {
                    for _ in 0..cap {
                        // ties go to the lowest flow index
                        let mut best: Option<(u32, usize)> = None;
                        for &e in entries {
                            let rem = (state.queues[e].len() as u32).saturating_sub(rec.shares[e]);
                            if rem > 0 && best.is_none_or(|(r, _)| rem > r) {
                                best = Some((rem, e));
                            }
                        }
                        match best {
                            Some((_, e)) => rec.shares[e] += 1,
                            None => break,
                        }
                    }
                }
            }
            for &e in entries {
                let d = rec.shares[e].min(state.queues[e].len() as u32);
                rec.departures[e] = d;
                let (_, flow) = self.layout.entry_key(e);
                for _ in 0..d {
                    let p = state.queues[e].pop_front().expect("departures bounded by length");
                    match &self.successors[e] {
                        None => {
                            rec.deliveries[flow] += 1;
                            if p.tunnel != NO_TUNNEL {
                                rec.tunnel_delivered[p.tunnel as usize] += 1;
                                state.in_flight[p.tunnel as usize] -= 1;
                            }
                            rec.delivered.push(Delivery { flow, link, born: p.born, entered: p.entered, slot });
                        }
                        Some(next) => {
                            let target = if next.len() == 1 {
                                next[0].0
                            } else {
                                let u: f64 = route_rng.gen();
                                next.iter().find(|&&(_, c)| u < c).unwrap_or(&next[next.len() - 1]).0
                            };
                            rec.staged[target].push(p);
                        }
                    }
                }
            }
        }

        let cap = state.cap as usize;
        for e in 0..self.layout.num_entries() {
            let staged = &mut rec.staged[e];
            rec.arrivals[e] = staged.len() as u32;
            let room = cap.saturating_sub(state.queues[e].len());
            for (i, mut p) in staged.drain(..).enumerate() {
                if i < room {
                    p.entered = slot;
                    state.queues[e].push_back(p);
                } else {
                    rec.drops[e] += 1;
                    if p.tunnel != NO_TUNNEL {
                        rec.tunnel_dropped[p.tunnel as usize] += 1;
                        state.in_flight[p.tunnel as usize] -= 1;
                    }
                }
            }
        }
    }

    /// External arrivals join the source pools, dropping beyond the cap.
    pub fn admit_arrivals<R: Rng + ?Sized>(
        &self,
        state: &mut QueueState,
        rng: &mut R,
        slot: u64,
        rec: &mut SlotRecord,
    ) {
        self.sample_arrivals(rng, &mut rec.external_arrivals);
        let cap = state.cap as usize;
        for (f, &a) in rec.external_arrivals.iter().enumerate() {
            for _ in 0..a {
                if state.pools[f].len() < cap {
                    state.pools[f].push_back(Packet { born: slot, entered: slot, tunnel: NO_TUNNEL });
                } else {
                    rec.pool_drops[f] += 1;
                }
            }
        }
    }
}
