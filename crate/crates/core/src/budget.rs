//! Replicator-dynamics tuning of the budget split `B` on the simplex
//! `{B >= 0, sum B = total}`.
//!
//! The drift runs on the fractions `b = B / total`:
//!
//! ```text
//! b_l <- b_l + gamma b_l (lambda_l - sum_k lambda_k b_k)
//! ```
//!
//! followed by a Euclidean projection back onto the simplex.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::StepSize;

/// Fraction of the total budget below which a live coordinate is not allowed
/// to fall.
pub const BUDGET_FLOOR: f64 = 1e-6;

/// Euclidean projection of `x` onto `{y >= 0, sum y = total}`
/// (sort-and-threshold).
pub fn project_simplex(x: &[f64], total: f64) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        acc += v;
        let t = (acc - total) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    x.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// One replicator step on the budget vector. Coordinates that are zero stay
/// zero; positive ones are floored at `BUDGET_FLOOR * total` before the
/// projection.
pub fn replicator_step(budgets: &[f64], prices: &[f64], gamma: f64, total: f64) -> Vec<f64> {
    debug_assert_eq!(budgets.len(), prices.len());
    if total <= 0.0 {
        return vec![0.0; budgets.len()];
    }
    let b: Vec<f64> = budgets.iter().map(|&x| x / total).collect();
    let avg: f64 = b.iter().zip(prices).map(|(b, l)| b * l).sum();
    let floor = BUDGET_FLOOR * total;
    let next: Vec<f64> = b
        .iter()
        .zip(prices)
        .map(|(&bi, &li)| {
            if bi <= 0.0 {
                return 0.0;
            }
            (total * (bi + gamma * bi * (li - avg))).max(floor)
        })
        .collect();
    project_simplex(&next, total)
}

/// `sum_l B*_l ln(B*_l / B_l)`; `+inf` when some `B_l = 0` with `B*_l > 0`.
pub fn lyapunov_value(budgets: &[f64], target: &[f64]) -> f64 {
    let mut v = 0.0;
    for (&b, &s) in budgets.iter().zip(target) {
        if s <= 0.0 {
            continue;
        }
        if b <= 0.0 {
            return f64::INFINITY;
        }
        v += s * (s / b).ln();
    }
    v
}

/// Right-hand side of the normalized replicator ODE at `budgets`.
pub fn replicator_field(budgets: &[f64], prices: &[f64], total: f64) -> Vec<f64> {
    let avg: f64 = budgets.iter().zip(prices).map(|(b, l)| b * l).sum::<f64>() / total;
    budgets.iter().zip(prices).map(|(&b, &l)| b * (l - avg)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory holds the initial point")
    }
}

/// RK4 integration of `dB/dt = B (lambda(B) - <lambda(B), B> / total)`.
/// Fails if an iterate leaves the simplex by more than `1e-9 * total`.
pub fn integrate_replicator_ode<F>(lambda: F, b0: &[f64], total: f64, horizon: f64, dt: f64) -> Result<Trajectory>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(Error::Config(format!("bad integration grid: horizon {horizon}, dt {dt}")));
    }
    let field = |b: &[f64]| replicator_field(b, &lambda(b), total);
    let steps = (horizon / dt).ceil() as usize;
    let mut times = vec![0.0];
    let mut states = vec![b0.to_vec()];
    let mut b = b0.to_vec();
    let mut t = 0.0;
    for i in 0..steps {
        let h = (horizon - i as f64 * dt).min(dt);
        b = rk4(&field, &b, h);
        t += h;
        check_simplex(&b, total, t)?;
        times.push(t);
        states.push(b.clone());
    }
    Ok(Trajectory { times, states })
}

fn rk4<F: Fn(&[f64]) -> Vec<f64>>(f: &F, b: &[f64], h: f64) -> Vec<f64> {
    let axpy = |a: f64, x: &[f64], y: &[f64]| -> Vec<f64> { y.iter().zip(x).map(|(y, x)| y + a * x).collect() };
    let k1 = f(b);
    let k2 = f(&axpy(h / 2.0, &k1, b));
    let k3 = f(&axpy(h / 2.0, &k2, b));
    let k4 = f(&axpy(h, &k3, b));
    (0..b.len()).map(|i| b[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

fn check_simplex(b: &[f64], total: f64, time: f64) -> Result<()> {
    let sum: f64 = b.iter().sum();
    let min = b.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * total.max(1.0);
    if (sum - total).abs() > tol || min < -tol || !sum.is_finite() {
        return Err(Error::SimplexViolation { time, sum, min });
    }
    Ok(())
}

/// Iterates of the discrete recursion with `gamma_t`, paired with their ODE
/// times `sum_{k < n} gamma_k`.
pub fn discrete_trajectory<F>(lambda: F, b0: &[f64], total: f64, gamma: &StepSize, iterations: u64) -> Trajectory
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut times = Vec::with_capacity(iterations as usize + 1);
    let mut states = Vec::with_capacity(iterations as usize + 1);
    let mut b = b0.to_vec();
    let mut t = 0.0;
    times.push(t);
    states.push(b.clone());
    for n in 0..iterations {
        let g = gamma.at(n);
        b = replicator_step(&b, &lambda(&b), g, total);
        t += g;
        times.push(t);
        states.push(b.clone());
    }
    Trajectory { times, states }
}

/// Largest distance between the discrete iterates from index `start` over
/// ODE time `window` and the RK4 solution started from iterate `start`.
/// The ODE is integrated on the iterate times, each interval split into
/// `substeps` RK4 steps.
pub fn tracking_gap<F>(lambda: F, discrete: &Trajectory, start: usize, window: f64, total: f64, substeps: usize) -> f64
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let field = |b: &[f64]| replicator_field(b, &lambda(b), total);
    let t0 = discrete.times[start];
    let mut y = discrete.states[start].clone();
    let mut gap: f64 = 0.0;
    for n in start + 1..discrete.times.len() {
        let h = (discrete.times[n] - discrete.times[n - 1]) / substeps as f64;
        for _ in 0..substeps {
            y = rk4(&field, &y, h);
        }
        let d = sup_dist(&y, &discrete.states[n]);
        gap = gap.max(d);
        if discrete.times[n] - t0 >= window {
            break;
        }
    }
    gap
}

pub fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Uniform sample from `{B >= 0, sum B = total}`.
pub fn sample_simplex<R: Rng + ?Sized>(dim: usize, total: f64, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..dim).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| total * x / s).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityReport {
    pub pairs: usize,
    pub satisfied: usize,
    /// Largest `<B - B', lambda(B) - lambda(B')>` seen, normalized by
    /// `|B - B'|^2`.
    pub worst: f64,
}

impl MonotonicityReport {
    pub fn fraction(&self) -> f64 {
        if self.pairs == 0 {
            return 0.0;
        }
        self.satisfied as f64 / self.pairs as f64
    }
}

impl std::fmt::Display for MonotonicityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{} pairs strictly monotone ({:.2}%), worst normalized inner product {:.6e}",
            self.satisfied,
            self.pairs,
            100.0 * self.fraction(),
            self.worst
        )
    }
}

/// Checks `<B - B', lambda(B) - lambda(B')> < 0` on `samples` random pairs.
pub fn monotonicity_probe<F, R>(lambda: F, dim: usize, total: f64, samples: usize, rng: &mut R) -> MonotonicityReport
where
    F: Fn(&[f64]) -> Vec<f64>,
    R: Rng + ?Sized,
{
    let mut acc = MonotonicityAcc::default();
    for _ in 0..samples {
        let a = sample_simplex(dim, total, rng);
        let b = sample_simplex(dim, total, rng);
        acc.push(&a, &lambda(&a), &b, &lambda(&b));
    }
    acc.finish()
}

/// Same check over every pair of measured `(B, lambda(B))` points.
pub fn monotonicity_of_samples(points: &[(Vec<f64>, Vec<f64>)]) -> MonotonicityReport {
    let mut acc = MonotonicityAcc::default();
    for (i, (a, la)) in points.iter().enumerate() {
        for (b, lb) in &points[i + 1..] {
            acc.push(a, la, b, lb);
        }
    }
    acc.finish()
}

struct MonotonicityAcc {
    pairs: usize,
    satisfied: usize,
    worst: f64,
}

impl Default for MonotonicityAcc {
    fn default() -> Self {
        Self { pairs: 0, satisfied: 0, worst: f64::NEG_INFINITY }
    }
}

impl MonotonicityAcc {
    fn push(&mut self, a: &[f64], la: &[f64], b: &[f64], lb: &[f64]) {
        let mut dot = 0.0;
        let mut norm = 0.0;
        for i in 0..a.len() {
            let d = a[i] - b[i];
            dot += d * (la[i] - lb[i]);
            norm += d * d;
        }
        if norm == 0.0 {
            return;
        }
        self.pairs += 1;
        if dot < 0.0 {
            self.satisfied += 1;
        }
        self.worst = self.worst.max(dot / norm);
    }

    fn finish(self) -> MonotonicityReport {
        MonotonicityReport { pairs: self.pairs, satisfied: self.satisfied, worst: self.worst }
    }
}

/// Which prices drive the budget recursion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BudgetMode {
    /// One step per slot with the current prices.
    Instantaneous,
    /// One step per epoch with the prices averaged over the epoch.
    Averaged { epoch: u64 },
}

/// Budget split plus its update rule.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetTuner {
    budgets: Vec<f64>,
    total: f64,
    mode: BudgetMode,
    price_sum: Vec<f64>,
    slots: u64,
    steps: u64,
}

impl BudgetTuner {
    /// Starts from the uniform split.
    pub fn new(len: usize, total: f64, mode: BudgetMode) -> Self {
        Self {
            budgets: vec![total / len.max(1) as f64; len],
            total,
            mode,
            price_sum: vec![0.0; len],
            slots: 0,
            steps: 0,
        }
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn set_budgets(&mut self, budgets: &[f64]) {
        self.budgets = project_simplex(budgets, self.total);
    }

    /// Feeds one slot of prices. `gamma` maps the step counter to a step size.
    pub fn update(&mut self, prices: &[f64], gamma: &StepSize) {
        if gamma.is_frozen() {
            return;
        }
        match self.mode {
            BudgetMode::Instantaneous => {
                self.budgets = replicator_step(&self.budgets, prices, gamma.at(self.steps), self.total);
                self.steps += 1;
            }
            BudgetMode::Averaged { epoch } => {
                for (s, p) in self.price_sum.iter_mut().zip(prices) {
                    *s += p;
                }
                self.slots += 1;
                if self.slots >= epoch.max(1) {
                    let avg: Vec<f64> = self.price_sum.iter().map(|s| s / self.slots as f64).collect();
                    self.budgets = replicator_step(&self.budgets, &avg, gamma.at(self.steps), self.total);
                    self.steps += 1;
                    self.slots = 0;
                    self.price_sum.iter_mut().for_each(|s| *s = 0.0);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        sup_dist(a, b) <= tol
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5], 1.0), vec![0.2, 0.3, 0.5]);
        assert!(close(&project_simplex(&[1.5, -0.5], 1.0), &[1.0, 0.0], 1e-15));
        assert!(close(&project_simplex(&[0.0, 0.0], 4.0), &[2.0, 2.0], 1e-15));
    }

    #[test]
    fn uniform_prices_leave_budgets() {
        let b = vec![0.5, 1.5, 2.0];
        let out = replicator_step(&b, &[3.0, 3.0, 3.0], 0.7, 4.0);
        assert!(close(&out, &b, 1e-15));
    }

    #[test]
    fn faces_are_invariant() {
        let out = replicator_step(&[0.0, 2.0, 0.0], &[5.0, 1.0, 9.0], 0.3, 2.0);
        assert_eq!(out, vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn arithmetic_example() {
        let out = replicator_step(&[0.6, 0.4], &[2.0, 1.0], 0.1, 1.0);
        assert!(close(&out, &[0.624, 0.376], 1e-15), "{out:?}");
    }

    #[test]
    fn lyapunov_examples() {
        assert_eq!(lyapunov_value(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        let v = lyapunov_value(&[0.5, 0.5], &[0.6, 0.4]);
        assert!((v - (0.6 * 1.2f64.ln() + 0.4 * 0.8f64.ln())).abs() < 1e-15);
        assert!((v - 0.02014).abs() < 1e-5);
        assert_eq!(lyapunov_value(&[0.0, 1.0], &[0.5, 0.5]), f64::INFINITY);
    }

    #[test]
    fn constant_uniform_field_is_stationary() {
        let tr = integrate_replicator_ode(|_| vec![1.0, 1.0, 1.0], &[0.2, 0.3, 0.5], 1.0, 5.0, 0.01).unwrap();
        assert!(close(tr.last(), &[0.2, 0.3, 0.5], 1e-15));
    }

    #[test]
    fn ode_rejects_bad_grid() {
        assert!(integrate_replicator_ode(|_| vec![1.0], &[1.0], 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn ode_reports_simplex_violation() {
        // a field that is not a replicator field for this total: rescaled budgets
        let err = integrate_replicator_ode(|b| b.iter().map(|x| -1e3 * x).collect(), &[0.5, 1.5], 1.0, 1.0, 0.5);
        assert!(matches!(err, Err(Error::SimplexViolation { .. })));
    }

    #[test]
    fn probe_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = [1.0, 2.0, 3.0];
        let mono = monotonicity_probe(|b| (0..3).map(|i| c[i] - 2.0 * b[i]).collect(), 3, 1.0, 500, &mut rng);
        assert_eq!(mono.fraction(), 1.0);
        let flat = monotonicity_probe(|_| vec![1.0; 3], 3, 1.0, 500, &mut rng);
        assert_eq!(flat.fraction(), 0.0);
        let anti = monotonicity_probe(|b| b.iter().map(|x| 2.0 * x).collect(), 3, 1.0, 500, &mut rng);
        assert_eq!(anti.fraction(), 0.0);
    }

    #[test]
    fn averaged_mode_steps_once_per_epoch() {
        let mut t = BudgetTuner::new(2, 1.0, BudgetMode::Averaged { epoch: 3 });
        let g = StepSize::power(0.5, 0.0);
        t.update(&[2.0, 0.0], &g);
        t.update(&[2.0, 0.0], &g);
        assert_eq!(t.budgets(), &[0.5, 0.5]);
        t.update(&[2.0, 0.0], &g);
        assert!(close(t.budgets(), &replicator_step(&[0.5, 0.5], &[2.0, 0.0], 0.5, 1.0), 1e-15));
    }
}
