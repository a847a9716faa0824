//! Per-flow relative-value-iteration Q-learning.
//!
//! Each flow keeps a sparse table `V(q, u)` keyed by its own queue vector
//! (links of its route, clipped) plus the number of packets waiting at its
//! source, and by the allocation `u` of those packets over its ingress links.
//! The update subtracts the value of a fixed reference pair so the table
//! stays relative:
//!
//! ```text
//! V(q_t, u_t) <- (1 - a) V(q_t, u_t) + a [ sum_l lambda_l q_l(t) + min_u V(q_{t+1}, u) - V(q_0, u_0) ]
//! ```
//!
//! Nothing here reads another flow's queues.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::schedule::{Exploration, StepSize};

/// Price-weighted queue mass `sum_l lambda_l q_l` charged to one flow.
pub fn holding_cost(queues: &[u32], prices: &[f64]) -> f64 {
    debug_assert_eq!(queues.len(), prices.len());
    queues.iter().zip(prices).map(|(&q, &p)| q as f64 * p).sum()
}

/// Feasible injection vectors, grouped by how many packets are injected.
///
/// A flow with `a` packets waiting injects `min(a, sum caps)` of them; the
/// allocations of that many packets with `u_k <= caps[k]` are listed in
/// ascending lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSet {
    caps: Vec<u32>,
    by_count: Vec<Vec<Vec<u32>>>,
}

impl ActionSet {
    pub fn new(caps: &[u32]) -> Self {
        let total: u32 = caps.iter().sum();
        let by_count = (0..=total)
            .map(|n| {
                let mut out = Vec::new();
                let mut cur = Vec::with_capacity(caps.len());
                enumerate(caps, n, &mut cur, &mut out);
                out
            })
            .collect();
        Self { caps: caps.to_vec(), by_count }
    }

    pub fn caps(&self) -> &[u32] {
        &self.caps
    }

    pub fn total_cap(&self) -> u32 {
        self.by_count.len() as u32 - 1
    }

    pub fn injected(&self, available: u32) -> u32 {
        available.min(self.total_cap())
    }

    pub fn actions(&self, available: u32) -> &[Vec<u32>] {
        &self.by_count[self.injected(available) as usize]
    }
}

fn enumerate(caps: &[u32], remaining: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    let k = cur.len();
    if k == caps.len() {
        if remaining == 0 {
            out.push(cur.clone());
        }
        return;
    }
    let rest: u32 = caps[k + 1..].iter().sum();
    let lo = remaining.saturating_sub(rest);
    for u in lo..=caps[k].min(remaining) {
        cur.push(u);
        enumerate(caps, remaining - u, cur, out);
        cur.pop();
    }
}

/// What one flow observes at the start of a slot.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct FlowState {
    /// `Q^f` over the flow's route, route order.
    pub queues: Vec<u32>,
    /// Packets waiting at the source.
    pub available: u32,
}

/// Mixed-radix encoding of a clipped [`FlowState`] into a `u64` key.
#[derive(Clone, Debug, PartialEq)]
pub struct StateCodec {
    queue_clip: u32,
    available_clip: u32,
    len: usize,
}

impl StateCodec {
    pub fn new(len: usize, queue_clip: u32, available_clip: u32) -> Result<Self> {
        let mut space: u128 = (available_clip as u128) + 1;
        for _ in 0..len {
            space *= queue_clip as u128 + 1;
            if space > u64::MAX as u128 {
                return Err(Error::Config(format!(
                    "state space of {len} queues clipped at {queue_clip} does not fit a 64-bit key"
                )));
            }
        }
        Ok(Self { queue_clip, available_clip, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn encode(&self, s: &FlowState) -> u64 {
        debug_assert_eq!(s.queues.len(), self.len);
        let radix = self.queue_clip as u64 + 1;
        let mut key = s.available.min(self.available_clip) as u64;
        for &q in &s.queues {
            key = key * radix + q.min(self.queue_clip) as u64;
        }
        key
    }

    pub fn decode(&self, mut key: u64) -> FlowState {
        let radix = self.queue_clip as u64 + 1;
        let mut queues = vec![0; self.len];
        for q in queues.iter_mut().rev() {
            *q = (key % radix) as u32;
            key /= radix;
        }
        FlowState { queues, available: key as u32 }
    }

    pub fn clip(&self, s: &FlowState) -> FlowState {
        self.decode(self.encode(s))
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Row {
    values: Vec<f64>,
    visits: Vec<u64>,
}

/// Sparse relative action-value table for one flow. Entries are created on
/// first update; unvisited pairs read as zero.
#[derive(Clone, Debug)]
pub struct QTable {
    codec: StateCodec,
    actions: ActionSet,
    rows: HashMap<u64, Row>,
}

impl QTable {
    pub fn new(num_queues: usize, caps: &[u32], queue_clip: u32, available_clip: u32) -> Result<Self> {
        Ok(Self {
            codec: StateCodec::new(num_queues, queue_clip, available_clip)?,
            actions: ActionSet::new(caps),
            rows: HashMap::new(),
        })
    }

    pub fn codec(&self) -> &StateCodec {
        &self.codec
    }

    pub fn action_set(&self) -> &ActionSet {
        &self.actions
    }

    /// Number of states with at least one stored value.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Reference pair `(q_0, u_0)`: empty network, nothing waiting, the
    /// single (empty) injection.
    pub fn reference(&self) -> (FlowState, usize) {
        (FlowState { queues: vec![0; self.codec.len()], available: 0 }, 0)
    }

    pub fn value(&self, s: &FlowState, action: usize) -> f64 {
        self.value_by_key(self.codec.encode(s), action)
    }

    fn value_by_key(&self, key: u64, action: usize) -> f64 {
        self.rows.get(&key).map_or(0.0, |r| r.values[action])
    }

    pub fn visits(&self, s: &FlowState, action: usize) -> u64 {
        self.rows.get(&self.codec.encode(s)).map_or(0, |r| r.visits[action])
    }

    /// Actions available in `s` (allocation vectors).
    pub fn actions(&self, s: &FlowState) -> &[Vec<u32>] {
        self.actions.actions(s.available.min(self.codec.available_clip))
    }

    /// `min_u V(s, u)`.
    pub fn min_value(&self, s: &FlowState) -> f64 {
        self.min_value_by_key(self.codec.encode(s))
    }

    fn min_value_by_key(&self, key: u64) -> f64 {
        match self.rows.get(&key) {
            Some(r) => r.values.iter().copied().fold(f64::INFINITY, f64::min),
            None => 0.0,
        }
    }

    /// `argmin_u V(s, u)`, lexicographically smallest allocation on ties.
    pub fn greedy(&self, s: &FlowState) -> usize {
        match self.rows.get(&self.codec.encode(s)) {
            None => 0,
            Some(r) => {
                let mut best = 0;
                for (i, &v) in r.values.iter().enumerate().skip(1) {
                    if v < r.values[best] {
                        best = i;
                    }
                }
                best
            }
        }
    }

    /// Greedy with probability `1 - epsilon`, otherwise uniform over the
    /// feasible actions. Always consumes one uniform draw, plus one more
    /// when exploring.
    pub fn select_action<R: Rng + ?Sized>(&self, s: &FlowState, epsilon: f64, rng: &mut R) -> usize {
        let n = self.actions(s).len();
        if rng.gen::<f64>() < epsilon {
            rng.gen_range(0..n)
        } else {
            self.greedy(s)
        }
    }

    /// One RVI update for the observed transition `(from, action) -> to`.
    /// `prices` are aligned with the flow's route.
    pub fn update(&mut self, from: &FlowState, action: usize, to: &FlowState, prices: &[f64], alpha: f64) {
        if alpha == 0.0 {
            return;
        }
        let cost = holding_cost(&from.queues, prices);
        let next = self.min_value_by_key(self.codec.encode(to));
        let (r, ra) = self.reference();
        let reference = self.value_by_key(self.codec.encode(&r), ra);
        let target = cost + next - reference;
        let row = self.row_mut(from);
        row.values[action] = (1.0 - alpha) * row.values[action] + alpha * target;
    }

    /// Counts a visit of `(s, action)` and returns the new count.
    pub fn visit(&mut self, s: &FlowState, action: usize) -> u64 {
        let row = self.row_mut(s);
        row.visits[action] += 1;
        row.visits[action]
    }

    fn row_mut(&mut self, s: &FlowState) -> &mut Row {
        let key = self.codec.encode(s);
        let n = self.actions(s).len();
        self.rows.entry(key).or_insert_with(|| Row { values: vec![0.0; n], visits: vec![0; n] })
    }

    /// Writes `state,available,action,value,visits` rows sorted by state key.
    /// Vector fields are space separated.
    pub fn export<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "state,available,action,value,visits")?;
        let mut keys: Vec<u64> = self.rows.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            let s = self.codec.decode(key);
            let row = &self.rows[&key];
            let qs = join(&s.queues);
            for (i, u) in self.actions(&s).iter().enumerate() {
                writeln!(w, "{qs},{},{},{:?},{}", s.available, join(u), row.values[i], row.visits[i])?;
            }
        }
        Ok(())
    }

    /// Loads rows written by [`QTable::export`] into this table, replacing
    /// any stored values for the same pairs.
    pub fn import<R: BufRead>(&mut self, r: R) -> Result<()> {
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::TableImport { line: lineno, msg: msg.to_owned() };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(bad("expected 5 columns"));
            }
            let queues = parse_vec(cols[0]).ok_or_else(|| bad("bad state"))?;
            let available = cols[1].trim().parse().map_err(|_| bad("bad available count"))?;
            let action = parse_vec(cols[2]).ok_or_else(|| bad("bad action"))?;
            let value: f64 = cols[3].trim().parse().map_err(|_| bad("bad value"))?;
            let visits: u64 = cols[4].trim().parse().map_err(|_| bad("bad visit count"))?;
            if queues.len() != self.codec.len() {
                return Err(bad("state length does not match the route"));
            }
            let s = FlowState { queues, available };
            if self.codec.clip(&s) != s {
                return Err(bad("state outside the clipped state space"));
            }
            let idx = self
                .actions(&s)
                .iter()
                .position(|u| *u == action)
                .ok_or_else(|| bad("action infeasible in this state"))?;
            let row = self.row_mut(&s);
            row.values[idx] = value;
            row.visits[idx] = visits;
        }
        Ok(())
    }
}

fn join(v: &[u32]) -> String {
    v.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_vec(s: &str) -> Option<Vec<u32>> {
    s.split_whitespace().map(|x| x.parse().ok()).collect()
}

/// Q-table plus its step-size and exploration schedules.
///
/// Step sizes follow each pair's own visit count, the usual choice for
/// asynchronous Q-learning; exploration decays with the flow's slot count.
#[derive(Clone, Debug)]
pub struct FlowLearner {
    pub table: QTable,
    pub alpha: StepSize,
    pub exploration: Exploration,
    steps: u64,
}

impl FlowLearner {
    pub fn new(table: QTable, alpha: StepSize, exploration: Exploration) -> Self {
        Self { table, alpha, exploration, steps: 0 }
    }

    /// Records the transition and applies the update with the pair's step size.
    pub fn learn(&mut self, from: &FlowState, action: usize, to: &FlowState, prices: &[f64]) {
        if self.alpha.is_frozen() {
            return;
        }
        let n = self.table.visit(from, action);
        let alpha = self.alpha.at(n - 1);
        self.table.update(from, action, to, prices, alpha);
    }

    pub fn act<R: Rng + ?Sized>(&mut self, s: &FlowState, rng: &mut R) -> usize {
        let eps = self.exploration.at(self.steps);
        self.steps += 1;
        self.table.select_action(s, eps, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn st(q: &[u32], a: u32) -> FlowState {
        FlowState { queues: q.to_vec(), available: a }
    }

    #[test]
    fn holding_cost_examples() {
        assert_eq!(holding_cost(&[4, 7], &[0.0, 0.0]), 0.0);
        assert_eq!(holding_cost(&[2, 3], &[1.0, 0.5]), 3.5);
    }

    #[test]
    fn action_sets_are_lexicographic_and_capped() {
        let a = ActionSet::new(&[1, 2]);
        assert_eq!(a.actions(0), &[vec![0, 0]]);
        assert_eq!(a.actions(1), &[vec![0, 1], vec![1, 0]]);
        assert_eq!(a.actions(2), &[vec![0, 2], vec![1, 1]]);
        assert_eq!(a.actions(3), &[vec![1, 2]]);
        assert_eq!(a.actions(9), &[vec![1, 2]]);
    }

    #[test]
    fn codec_round_trips_and_clips() {
        let c = StateCodec::new(3, 4, 2).unwrap();
        let s = st(&[0, 4, 2], 1);
        assert_eq!(c.decode(c.encode(&s)), s);
        assert_eq!(c.clip(&st(&[9, 1, 5], 7)), st(&[4, 1, 4], 2));
        assert_eq!(c.encode(&st(&[0, 0, 0], 0)), 0);
        assert!(StateCodec::new(40, 100, 10).is_err());
    }

    #[test]
    fn zero_step_leaves_table_unchanged() {
        let mut t = QTable::new(2, &[1, 1], 3, 2).unwrap();
        t.update(&st(&[1, 1], 1), 0, &st(&[0, 1], 0), &[1.0, 1.0], 0.5);
        let before = t.value(&st(&[1, 1], 1), 0);
        t.update(&st(&[1, 1], 1), 0, &st(&[2, 2], 0), &[5.0, 5.0], 0.0);
        assert_eq!(t.value(&st(&[1, 1], 1), 0), before);
    }

    #[test]
    fn deterministic_cycle_converges_to_average_cost() {
        // Reference (0) -> (2) -> (0) -> ... with price 0.7. The relative
        // values solve h_ref = c_ref + h_b - h_ref and h_b = c_b, so the
        // reference pair settles at the average cost 0.7.
        let mut t = QTable::new(1, &[0], 5, 0).unwrap();
        let (r, _) = t.reference();
        let b = st(&[2], 0);
        for n in 1..=20_000u64 {
            let a = 1.0 / (n as f64).powf(0.6);
            t.update(&r, 0, &b, &[0.7], a);
            t.update(&b, 0, &r, &[0.7], a);
        }
        assert!((t.value(&r, 0) - 0.7).abs() < 1e-3, "{}", t.value(&r, 0));
        assert!((t.value(&b, 0) - 1.4).abs() < 1e-3, "{}", t.value(&b, 0));
    }

    #[test]
    fn ties_pick_lexicographically_smallest() {
        let t = QTable::new(2, &[1, 1], 3, 2).unwrap();
        let s = st(&[1, 2], 1);
        assert_eq!(t.greedy(&s), 0);
        assert_eq!(t.actions(&s)[0], vec![0, 1]);
    }

    #[test]
    fn greedy_picks_minimum() {
        let mut t = QTable::new(2, &[1, 1], 3, 2).unwrap();
        let s = st(&[1, 2], 1);
        t.update(&s, 0, &s, &[1.0, 1.0], 1.0);
        assert_eq!(t.greedy(&s), 1);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let t = QTable::new(3, &[1, 1, 1], 3, 3).unwrap();
        let s = st(&[0, 0, 0], 1);
        assert_eq!(t.actions(&s).len(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0f64; 3];
        let n = 10_000;
        for _ in 0..n {
            counts[t.select_action(&s, 1.0, &mut rng)] += 1.0;
        }
        let e = n as f64 / 3.0;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        // 99.9% quantile of chi-square with 2 degrees of freedom
        assert!(chi2 < 13.82, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn export_import_round_trip() {
        let mut t = QTable::new(2, &[1, 1], 3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let s = st(&[rng.gen_range(0..4), rng.gen_range(0..4)], rng.gen_range(0..3));
            let to = st(&[rng.gen_range(0..4), rng.gen_range(0..4)], rng.gen_range(0..3));
            let a = rng.gen_range(0..t.actions(&s).len());
            t.visit(&s, a);
            t.update(&s, a, &to, &[0.3, 1.7], 0.25);
        }
        let mut buf = Vec::new();
        t.export(&mut buf).unwrap();
        let mut u = QTable::new(2, &[1, 1], 3, 2).unwrap();
        u.import(buf.as_slice()).unwrap();
        let mut again = Vec::new();
        u.export(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn import_rejects_infeasible_rows() {
        let mut t = QTable::new(2, &[1, 1], 3, 2).unwrap();
        let bad = "state,available,action,value,visits\n1 1,1,1 1,0.5,3\n";
        assert!(matches!(t.import(bad.as_bytes()), Err(Error::TableImport { line: 2, .. })));
    }
}
