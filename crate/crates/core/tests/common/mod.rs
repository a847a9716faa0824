#![allow(dead_code)]

use overlay_poc::network::{CountDistribution, FlowSpec, Link, NetworkSpec, Node, NodeRole, QueueState, Underlay};
use rand::Rng;

/// A random valid network: an underlay chain `u0 -> u1 -> ...`, and flows
/// that enter the chain through one or two ingress links and leave it
/// through their own exit link. Routing is deterministic, so every packet
/// served on a link has a single next queue.
pub fn random_network<R: Rng>(rng: &mut R) -> NetworkSpec {
    let chain = rng.gen_range(2..=5usize);
    let nf = rng.gen_range(1..=3usize);
    let cap = rng.gen_range(1..=6u32);
    let mut nodes: Vec<Node> = (0..chain).map(|i| Node { name: format!("u{i}"), role: NodeRole::Underlay }).collect();
    for f in 0..nf {
        nodes.push(Node { name: format!("s{f}"), role: NodeRole::Overlay });
        nodes.push(Node { name: format!("d{f}"), role: NodeRole::Overlay });
    }
    let src = |f: usize| chain + 2 * f;
    let dst = |f: usize| chain + 2 * f + 1;

    let mut links = Vec::new();
    let add = |links: &mut Vec<Link>, name: String, tail: usize, head: usize, rng: &mut R| {
        let capacity = if rng.gen_bool(0.3) {
            CountDistribution::Deterministic { value: rng.gen_range(0..=3) }
        } else {
            CountDistribution::Bernoulli { n: rng.gen_range(1..=3), p: rng.gen_range(0.05..0.95) }
        };
        let injection_cap = rng.gen_bool(0.5).then(|| rng.gen_range(1..=3));
        links.push(Link { name, tail, head, capacity, injection_cap });
        links.len() - 1
    };
    let chain_links: Vec<usize> =
        (0..chain - 1).map(|i| add(&mut links, format!("u{i}-u{}", i + 1), i, i + 1, rng)).collect();

    struct Path {
        ingress: usize,
        hops: Vec<usize>,
        exit: usize,
    }
    let mut paths: Vec<Vec<Path>> = Vec::new();
    for f in 0..nf {
        let exit_node = rng.gen_range(1..chain);
        let exit = add(&mut links, format!("u{exit_node}-d{f}"), exit_node, dst(f), rng);
        let tunnels = rng.gen_range(1..=2usize);
        let mut starts: Vec<usize> = (0..tunnels).map(|_| rng.gen_range(0..=exit_node)).collect();
        starts.sort_unstable();
        starts.dedup();
        let mut ps = Vec::new();
        for a in starts {
            let ingress = add(&mut links, format!("s{f}-u{a}"), src(f), a, rng);
            ps.push(Path { ingress, hops: chain_links[a..exit_node].to_vec(), exit });
        }
        paths.push(ps);
    }

    let nl = links.len();
    let mut flows = Vec::new();
    let mut routing = vec![vec![Vec::new(); nl]; nf];
    for (f, ps) in paths.iter().enumerate() {
        let mut route = Vec::new();
        for p in ps {
            let seq: Vec<usize> = std::iter::once(p.ingress).chain(p.hops.iter().copied()).chain([p.exit]).collect();
            for w in seq.windows(2) {
                routing[f][w[0]] = vec![(w[1], 1.0)];
            }
            route.extend(seq);
        }
        route.sort_unstable();
        route.dedup();
        let arrivals = CountDistribution::Bernoulli { n: rng.gen_range(1..=3), p: rng.gen_range(0.05..0.95) };
        flows.push(FlowSpec { name: format!("f{f}"), source: src(f), destination: dst(f), arrivals, route });
    }

    let mut sharing = vec![vec![0.0; nf]; nl];
    for (l, row) in sharing.iter_mut().enumerate() {
        let users: Vec<usize> = (0..nf).filter(|&f| flows[f].route.contains(&l)).collect();
        if users.is_empty() {
            continue;
        }
        let w: Vec<f64> = users.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        let mut acc = 0.0;
        for (i, &f) in users.iter().enumerate() {
            row[f] = if i + 1 == users.len() { 1.0 - acc } else { w[i] / total };
            acc += row[f];
        }
    }
    NetworkSpec { nodes, links, flows, sharing, routing, buffer_cap: cap }
}

/// Fills every queue and pool with a random number of packets, at most the cap.
pub fn random_state<R: Rng>(underlay: &Underlay, rng: &mut R) -> QueueState {
    let spec = underlay.spec();
    let mut state = underlay.new_state();
    let cap = spec.buffer_cap;
    for e in 0..underlay.layout().num_entries() {
        let (l, f) = underlay.layout().entry_key(e);
        let n = rng.gen_range(0..=cap);
        let tunnel = underlay.ingress(f).contains(&l).then_some(l);
        state.fill(l, f, n, 0, tunnel);
    }
    for f in 0..spec.flows.len() {
        state.fill_pool(f, rng.gen_range(0..=cap), 0);
    }
    state
}

/// A random feasible injection for every flow.
pub fn random_injections<R: Rng>(underlay: &Underlay, state: &QueueState, rng: &mut R) -> Vec<Vec<u32>> {
    (0..underlay.num_flows())
        .map(|f| {
            let caps = underlay.injection_caps(f);
            let mut left = state.pool_len(f);
            caps.iter()
                .map(|&c| {
                    let u = rng.gen_range(0..=c.min(left));
                    left -= u;
                    u
                })
                .collect()
        })
        .collect()
}

/// Checks one slot against `q' = min(C, (q - D)^+ + A)` computed by hand
/// from the recorded capacity shares. Returns a description of the first
/// mismatch.
pub fn check_recurrence(
    underlay: &Underlay,
    before: &QueueState,
    after: &QueueState,
    injections: &[Vec<u32>],
    rec: &overlay_poc::network::SlotRecord,
) -> Result<(), String> {
    let spec = underlay.spec();
    let layout = underlay.layout();
    let ne = layout.num_entries();
    let cap = spec.buffer_cap;

    for l in 0..spec.links.len() {
        if layout.link_entries(l).is_empty() {
            continue;
        }
        let shares: u32 = layout.link_entries(l).iter().map(|&e| rec.shares[e]).sum();
        if shares != rec.capacities[l] {
            return Err(format!("link {l}: shares {shares} != capacity {}", rec.capacities[l]));
        }
    }

    let mut offered = vec![0u32; ne];
    let mut delivered = vec![0u32; spec.flows.len()];
    for e in 0..ne {
        let (l, f) = layout.entry_key(e);
        let served = rec.shares[e].min(before.entry_len(e));
        match spec.routing[f][l].first() {
            None => delivered[f] += served,
            Some(&(next, _)) => offered[layout.entry(next, f).unwrap()] += served,
        }
    }
    for (f, alloc) in injections.iter().enumerate() {
        for (&l, &u) in underlay.ingress(f).iter().zip(alloc) {
            offered[layout.entry(l, f).unwrap()] += u;
        }
    }
    for e in 0..ne {
        let q = before.entry_len(e);
        let raw = q.saturating_sub(rec.shares[e]) + offered[e];
        let expect = raw.min(cap);
        if after.entry_len(e) != expect {
            return Err(format!(
                "entry {e}: got {} expected {expect} (q {q}, D {}, A {})",
                after.entry_len(e),
                rec.shares[e],
                offered[e]
            ));
        }
        if rec.drops[e] != raw - expect {
            return Err(format!("entry {e}: drops {} expected {}", rec.drops[e], raw - expect));
        }
    }
    for f in 0..spec.flows.len() {
        if rec.deliveries[f] != delivered[f] {
            return Err(format!("flow {f}: delivered {} expected {}", rec.deliveries[f], delivered[f]));
        }
        let injected: u32 = injections[f].iter().sum();
        let raw = before.pool_len(f) - injected + rec.external_arrivals[f];
        if after.pool_len(f) != raw.min(cap) || rec.pool_drops[f] != raw - raw.min(cap) {
            return Err(format!("flow {f}: pool {} expected {}", after.pool_len(f), raw.min(cap)));
        }
    }
    after.check_invariants()
}

/// Stationary mean of `q' = min(C, (q - D)^+ + A)` with Bernoulli(`p`)
/// arrivals and Bernoulli(`mu`) service, as a birth-death chain.
pub fn birth_death_mean(p: f64, mu: f64, cap: u32) -> f64 {
    let down = mu * (1.0 - p);
    let mut pi = vec![1.0];
    for k in 1..=cap {
        let up = if k == 1 { p } else { p * (1.0 - mu) };
        pi.push(pi[k as usize - 1] * up / down);
    }
    let z: f64 = pi.iter().sum();
    pi.iter().enumerate().map(|(k, w)| k as f64 * w / z).sum()
}

pub fn single_tunnel(p: f64, mu: f64, cap: u32) -> overlay_poc::network::NetworkSpec {
    let text = format!(
        r#"
[network]
buffer_cap = {cap}
nodes = [{{ name = "s", role = "overlay" }}, {{ name = "u", role = "underlay" }}, {{ name = "d", role = "overlay" }}]
links = [
    {{ name = "a", tail = "s", head = "u", capacity = {{ kind = "bernoulli", n = 1, p = {mu} }} }},
    {{ name = "exit", tail = "u", head = "d", capacity = {{ kind = "deterministic", value = 1 }} }},
]
[[network.flows]]
name = "f"
source = "s"
destination = "d"
arrivals = {{ kind = "bernoulli", n = 1, p = {p} }}
route = ["a", "exit"]
routing = [{{ from = "a", to = "exit", p = 1.0 }}]
"#
    );
    overlay_poc::scenario::Scenario::from_toml(&text).unwrap().network
}

/// One flow with two disjoint tunnels of service rates `mu_a` and `mu_b`
/// into fast exit links.
pub fn two_tunnels(p: f64, mu_a: f64, mu_b: f64, cap: u32) -> overlay_poc::network::NetworkSpec {
    let text = format!(
        r#"
[network]
buffer_cap = {cap}
nodes = [
    {{ name = "s", role = "overlay" }}, {{ name = "u", role = "underlay" }},
    {{ name = "v", role = "underlay" }}, {{ name = "d", role = "overlay" }},
]
links = [
    {{ name = "a", tail = "s", head = "u", capacity = {{ kind = "bernoulli", n = 1, p = {mu_a} }} }},
    {{ name = "b", tail = "s", head = "v", capacity = {{ kind = "bernoulli", n = 1, p = {mu_b} }} }},
    {{ name = "u-v", tail = "u", head = "v", capacity = {{ kind = "deterministic", value = 1 }} }},
    {{ name = "u-d", tail = "u", head = "d", capacity = {{ kind = "deterministic", value = 2 }} }},
    {{ name = "v-d", tail = "v", head = "d", capacity = {{ kind = "deterministic", value = 2 }} }},
]
[[network.flows]]
name = "f"
source = "s"
destination = "d"
arrivals = {{ kind = "bernoulli", n = 1, p = {p} }}
route = ["a", "b", "u-d", "v-d"]
routing = [{{ from = "a", to = "u-d", p = 1.0 }}, {{ from = "b", to = "v-d", p = 1.0 }}]
"#
    );
    overlay_poc::scenario::Scenario::from_toml(&text).unwrap().network
}
