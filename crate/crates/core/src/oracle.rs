//! Exact dynamic-programming oracle for small networks.
//!
//! Under the static capacity split every flow sees its links through an
//! independent thinning of the link capacity, so each flow is an MDP of its
//! own. [`FlowMdp`] enumerates the states reachable from the empty network
//! (route queues plus the source pool), the same injection actions the
//! learner uses and the exact one-slot transition law of [`crate::network`].

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::network::{CountDistribution, NetworkSpec};
use crate::qlearning::{ActionSet, FlowState};

pub const DEFAULT_STATE_CAP: usize = 200_000;

/// Probability mass function of a count distribution, index = count.
pub fn pmf(d: &CountDistribution) -> Vec<f64> {
    match *d {
        CountDistribution::Deterministic { value } => {
            let mut v = vec![0.0; value as usize + 1];
            v[value as usize] = 1.0;
            v
        }
        CountDistribution::Bernoulli { n, p } => binomial(n, p),
    }
}

fn binomial(n: u32, p: f64) -> Vec<f64> {
    let mut v = vec![0.0; n as usize + 1];
    v[0] = 1.0;
    for _ in 0..n {
        for k in (0..v.len()).rev() {
            let keep = v[k] * (1.0 - p);
            let moved = if k > 0 { v[k - 1] * p } else { 0.0 };
            v[k] = keep + moved;
        }
    }
    v
}

/// Law of `Binomial(C, mu)` with `C` drawn from `capacity`.
fn thinned(capacity: &[f64], mu: f64) -> Vec<f64> {
    if mu >= 1.0 - 1e-12 {
        return capacity.to_vec();
    }
    let mut out = vec![0.0; capacity.len()];
    for (c, &pc) in capacity.iter().enumerate() {
        if pc == 0.0 {
            continue;
        }
        for (k, pk) in binomial(c as u32, mu).into_iter().enumerate() {
            out[k] += pc * pk;
        }
    }
    out
}

/// Probabilities of every way to send `d` packets to successors with
/// probabilities `probs`.
fn multinomial(d: u32, probs: &[f64]) -> Vec<(Vec<u32>, f64)> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(probs.len());
    fn rec(d: u32, probs: &[f64], cur: &mut Vec<u32>, prob: f64, out: &mut Vec<(Vec<u32>, f64)>) {
        let k = cur.len();
        if k + 1 == probs.len() {
            cur.push(d);
            out.push((cur.clone(), prob * probs[k].powi(d as i32)));
            cur.pop();
            return;
        }
        // choose how many of the remaining d go to successor k
        let mut coeff = 1.0;
        for j in 0..=d {
            if j > 0 {
                coeff *= (d - j + 1) as f64 / j as f64;
            }
            cur.push(j);
            rec(d - j, probs, cur, prob * coeff * probs[k].powi(j as i32), out);
            cur.pop();
        }
    }
    if probs.is_empty() {
        return Vec::new();
    }
    rec(d, probs, &mut cur, 1.0, &mut out);
    out
}

/// One flow's enumerated MDP.
#[derive(Clone, Debug)]
pub struct FlowMdp {
    pub flow: usize,
    /// Route links, ascending link index; queue vectors use this order.
    pub route: Vec<usize>,
    pub states: Vec<FlowState>,
    pub actions: ActionSet,
    /// `transitions[s][a]`: `(next state, probability)`, ascending state.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    index: HashMap<FlowState, usize>,
}

struct LinkLaw {
    share: Vec<f64>,
    /// Route positions of successors with their probabilities; empty when terminal.
    next: Vec<(usize, f64)>,
}

impl FlowMdp {
    pub fn build(spec: &NetworkSpec, flow: usize, state_cap: usize) -> Result<Self> {
        let f = spec.flows.get(flow).ok_or_else(|| Error::Oracle(format!("no flow with index {flow}")))?;
        let route = f.route.clone();
        let pos = |l: usize| route.iter().position(|&r| r == l);
        let laws: Vec<LinkLaw> = route
            .iter()
            .map(|&l| {
                let share = thinned(&pmf(&spec.links[l].capacity), spec.sharing[l][flow]);
                let next = if spec.is_terminal(flow, l) {
                    Vec::new()
                } else {
                    spec.routing[flow][l]
                        .iter()
                        .filter(|&&(_, p)| p > 0.0)
                        .map(|&(n, p)| (pos(n).expect("routing stays on the route"), p))
                        .collect()
                };
                LinkLaw { share, next }
            })
            .collect();
        let ingress = spec.ingress_links(flow);
        let ingress_pos: Vec<usize> = ingress.iter().map(|&l| pos(l).expect("ingress on route")).collect();
        let caps: Vec<u32> = ingress.iter().map(|&l| spec.injection_cap(l)).collect();
        let actions = ActionSet::new(&caps);
        let arrivals = pmf(&f.arrivals);
        let cap = spec.buffer_cap;

        let zero = FlowState { queues: vec![0; route.len()], available: 0 };
        let mut states = vec![zero.clone()];
        let mut index = HashMap::from([(zero, 0usize)]);
        let mut transitions: Vec<Vec<Vec<(usize, f64)>>> = Vec::new();
        let mut frontier = VecDeque::from([0usize]);
        while let Some(si) = frontier.pop_front() {
            let s = states[si].clone();
            let mut rows = Vec::new();
            for u in actions.actions(s.available) {
                let law = step_law(&s, u, &ingress_pos, &laws, &arrivals, cap);
                let mut row = Vec::with_capacity(law.len());
                for (next, p) in law {
                    let ni = match index.get(&next) {
                        Some(&i) => i,
                        None => {
                            let i = states.len();
                            if i >= state_cap {
                                return Err(Error::StateSpaceTooLarge { states: i + 1, cap: state_cap });
                            }
                            states.push(next.clone());
                            index.insert(next, i);
                            frontier.push_back(i);
                            i
                        }
                    };
                    row.push((ni, p));
                }
                row.sort_by_key(|&(i, _)| i);
                rows.push(row);
            }
            debug_assert_eq!(transitions.len(), si);
            transitions.push(rows);
        }
        Ok(Self { flow, route, states, actions, transitions, index })
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.transitions.iter().map(Vec::len).sum()
    }

    pub fn state_index(&self, s: &FlowState) -> Option<usize> {
        self.index.get(s).copied()
    }

    /// Index of the empty state; its first action is the reference pair.
    pub fn reference(&self) -> usize {
        0
    }

    /// Per-state holding cost for prices aligned with the route.
    pub fn costs(&self, route_prices: &[f64]) -> Vec<f64> {
        self.states.iter().map(|s| crate::qlearning::holding_cost(&s.queues, route_prices)).collect()
    }

    /// Relative value iteration on action values,
    /// `Q(s,u) = c(s) + E min Q(s',.) - Q(ref)`, with half damping to rule
    /// out periodicity.
    pub fn solve(&self, route_prices: &[f64]) -> Result<RviSolution> {
        const TOL: f64 = 1e-12;
        const MAX_ITER: usize = 2_000_000;
        let c = self.costs(route_prices);
        let mut q: Vec<Vec<f64>> = self.transitions.iter().map(|r| vec![0.0; r.len()]).collect();
        let mut mins = vec![0.0; self.num_states()];
        for it in 0..MAX_ITER {
            for (m, row) in mins.iter_mut().zip(&q) {
                *m = row.iter().copied().fold(f64::INFINITY, f64::min);
            }
            let reference = q[0][0];
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (s, rows) in self.transitions.iter().enumerate() {
                for (a, row) in rows.iter().enumerate() {
                    let ev: f64 = row.iter().map(|&(n, p)| p * mins[n]).sum();
                    let t = c[s] + ev - reference;
                    let new = 0.5 * q[s][a] + 0.5 * t;
                    let d = new - q[s][a];
                    lo = lo.min(d);
                    hi = hi.max(d);
                    q[s][a] = new;
                }
            }
            if hi - lo < TOL && hi.abs().max(lo.abs()) < TOL {
                let policy = q.iter().map(|row| argmin(row)).collect();
                return Ok(RviSolution { gain: q[0][0], values: q, policy, iterations: it + 1 });
            }
        }
        Err(Error::Oracle(format!("relative value iteration did not converge in {MAX_ITER} sweeps")))
    }

    /// Stationary distribution of the chain under a deterministic policy.
    pub fn stationary(&self, policy: &[usize]) -> Vec<f64> {
        let n = self.num_states();
        let mut pi = vec![1.0 / n as f64; n];
        let mut next = vec![0.0; n];
        for _ in 0..10_000_000 {
            next.iter_mut().for_each(|x| *x = 0.0);
            for (s, &p) in pi.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for &(t, q) in &self.transitions[s][policy[s]] {
                    next[t] += p * q;
                }
            }
            let mut diff = 0.0;
            for (a, b) in pi.iter_mut().zip(&next) {
                let v = 0.5 * *a + 0.5 * b;
                diff += (v - *a).abs();
                *a = v;
            }
            if diff < 1e-15 {
                break;
            }
        }
        pi
    }

    /// Stationary mean queue of every route link, route order.
    pub fn link_means(&self, policy: &[usize]) -> Vec<f64> {
        let pi = self.stationary(policy);
        let mut m = vec![0.0; self.route.len()];
        for (p, s) in pi.iter().zip(&self.states) {
            for (mi, &q) in m.iter_mut().zip(&s.queues) {
                *mi += p * q as f64;
            }
        }
        m
    }

    /// Stationary mean of the source pool.
    pub fn pool_mean(&self, policy: &[usize]) -> f64 {
        let pi = self.stationary(policy);
        pi.iter().zip(&self.states).map(|(p, s)| p * s.available as f64).sum()
    }
}

fn argmin(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v < row[best] {
            best = i;
        }
    }
    best
}

fn step_law(
    s: &FlowState,
    u: &[u32],
    ingress_pos: &[usize],
    laws: &[LinkLaw],
    arrivals: &[f64],
    cap: u32,
) -> Vec<(FlowState, f64)> {
    let n = laws.len();
    // queue after service, plus incoming packets, before the cap
    let mut dist: HashMap<Vec<u32>, f64> = HashMap::new();
    let mut base = s.queues.clone();
    for (&p, &x) in ingress_pos.iter().zip(u) {
        base[p] += x;
    }
    dist.insert(base, 1.0);
    for (i, law) in laws.iter().enumerate() {
        let q = s.queues[i];
        let mut dep = vec![0.0; q as usize + 1];
        for (c, &p) in law.share.iter().enumerate() {
            dep[(c as u32).min(q) as usize] += p;
        }
        let mut out: HashMap<Vec<u32>, f64> = HashMap::new();
        for (v, &pv) in &dist {
            for (d, &pd) in dep.iter().enumerate() {
                if pd == 0.0 {
                    continue;
                }
                let mut w = v.clone();
                w[i] -= d as u32;
                if law.next.is_empty() || d == 0 {
                    *out.entry(w).or_default() += pv * pd;
                    continue;
                }
                let probs: Vec<f64> = law.next.iter().map(|&(_, p)| p).collect();
                for (split, pm) in multinomial(d as u32, &probs) {
                    let mut x = w.clone();
                    for (&(j, _), k) in law.next.iter().zip(split) {
                        x[j] += k;
                    }
                    *out.entry(x).or_default() += pv * pd * pm;
                }
            }
        }
        dist = out;
    }
    let injected: u32 = u.iter().sum();
    let pool = s.available - injected;
    let mut law: HashMap<FlowState, f64> = HashMap::new();
    for (v, pv) in dist {
        let queues: Vec<u32> = v.iter().map(|&x| x.min(cap)).collect();
        debug_assert_eq!(queues.len(), n);
        for (a, &pa) in arrivals.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            let next = FlowState { queues: queues.clone(), available: (pool + a as u32).min(cap) };
            *law.entry(next).or_default() += pv * pa;
        }
    }
    let mut out: Vec<(FlowState, f64)> = law.into_iter().collect();
    out.sort_by(|a, b| (a.0.available, &a.0.queues).cmp(&(b.0.available, &b.0.queues)));
    out
}

/// Converged relative action values of a [`FlowMdp`].
#[derive(Clone, Debug)]
pub struct RviSolution {
    pub values: Vec<Vec<f64>>,
    /// Optimal average holding cost.
    pub gain: f64,
    /// Lowest-index minimizer per state.
    pub policy: Vec<usize>,
    pub iterations: usize,
}

impl RviSolution {
    /// Actions within `tol` (relative) of the state's minimum.
    pub fn optimal_actions(&self, state: usize, tol: f64) -> Vec<usize> {
        let row = &self.values[state];
        let m = row.iter().copied().fold(f64::INFINITY, f64::min);
        let slack = tol * (1.0 + m.abs());
        (0..row.len()).filter(|&a| row[a] <= m + slack).collect()
    }

    /// Difference between the best and second-best action value.
    pub fn action_gap(&self, state: usize) -> f64 {
        let mut v = self.values[state].clone();
        if v.len() < 2 {
            return f64::INFINITY;
        }
        v.sort_by(f64::total_cmp);
        v[1] - v[0]
    }
}

/// `D(lambda) = sum_f min_pi sum_l lambda_l Qbar^f_l - sum_l lambda_l B_l`
/// by exact DP per flow. `prices` and `budgets` are indexed by link.
pub fn dual_function_estimate(spec: &NetworkSpec, prices: &[f64], budgets: &[f64], state_cap: usize) -> Result<f64> {
    let mut total = 0.0;
    for f in 0..spec.flows.len() {
        let mdp = FlowMdp::build(spec, f, state_cap)?;
        let rp: Vec<f64> = mdp.route.iter().map(|&l| prices[l]).collect();
        total += mdp.solve(&rp)?.gain;
    }
    let penalty: f64 = prices.iter().zip(budgets).map(|(l, b)| l * b).sum();
    Ok(total - penalty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_and_thinning() {
        let b = binomial(2, 0.4);
        assert!((b[0] - 0.36).abs() < 1e-15 && (b[1] - 0.48).abs() < 1e-15 && (b[2] - 0.16).abs() < 1e-15);
        // thinning Bernoulli(1, .5) by .5 gives Bernoulli(1, .25)
        let t = thinned(&binomial(1, 0.5), 0.5);
        assert!((t[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn multinomial_sums_to_one() {
        let m = multinomial(3, &[0.2, 0.3, 0.5]);
        assert_eq!(m.len(), 10);
        let s: f64 = m.iter().map(|(_, p)| p).sum();
        assert!((s - 1.0).abs() < 1e-14);
        let all_last = m.iter().find(|(v, _)| v == &vec![0, 0, 3]).unwrap().1;
        assert!((all_last - 0.125).abs() < 1e-15);
    }
}
