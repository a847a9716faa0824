//! Empirical checks of the budget layer on a scenario.
//!
//! Budgets are frozen at sampled points of the simplex, the price and
//! learning layers run until the prices settle, and the tail-averaged prices
//! give measurements of the price map `lambda(B)`. The measured pairs are
//! probed for monotonicity directly. Per-entity affine fits
//! `lambda_l ~ a_l + s_l B_l` then serve as a surrogate map on which the
//! discrete budget recursion is compared with its ODE and checked for
//! Lyapunov descent.

use std::fmt::{self, Write as _};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::budget::{
    discrete_trajectory, lyapunov_value, monotonicity_of_samples, sample_simplex, tracking_gap, MonotonicityReport,
};
use crate::controllers::{build_controller, ControllerConfig, ControllerKind};
use crate::error::{Error, Result};
use crate::network::{NetworkSpec, Underlay};
use crate::schedule::StepSize;
use crate::sim::{resolve_reference_budget, run_simulation, SimConfig};

/// Iteration counts at which ODE-tracking windows start.
pub const TRACKING_STARTS: [usize; 3] = [10, 100, 1000];

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnoseConfig {
    /// Budget points to measure.
    pub points: usize,
    /// Slots per measurement.
    pub horizon: u64,
    pub seed: u64,
    /// A price-based controller: `poc` or `poc-t`.
    pub controller: ControllerKind,
    /// Weight of the uniform split mixed into each sampled point, keeping
    /// every budget away from zero.
    pub uniform_mix: f64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self { points: 8, horizon: 200_000, seed: 1, controller: ControllerKind::Poc, uniform_mix: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasuredPoint {
    pub budgets: Vec<f64>,
    pub prices: Vec<f64>,
}

/// Independent least-squares lines `lambda_l = a_l + s_l B_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineFit {
    pub intercept: Vec<f64>,
    pub slope: Vec<f64>,
    /// Coefficient of determination per entity; zero when the prices do not vary.
    pub r2: Vec<f64>,
}

impl AffineFit {
    pub fn fit(points: &[MeasuredPoint]) -> Self {
        let dim = points.first().map_or(0, |p| p.budgets.len());
        let n = points.len() as f64;
        let mut fit = Self { intercept: vec![0.0; dim], slope: vec![0.0; dim], r2: vec![0.0; dim] };
        for l in 0..dim {
            let mx = points.iter().map(|p| p.budgets[l]).sum::<f64>() / n;
            let my = points.iter().map(|p| p.prices[l]).sum::<f64>() / n;
            let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
            for p in points {
                let (dx, dy) = (p.budgets[l] - mx, p.prices[l] - my);
                sxx += dx * dx;
                sxy += dx * dy;
                syy += dy * dy;
            }
            let s = if sxx > 0.0 { sxy / sxx } else { 0.0 };
            fit.slope[l] = s;
            fit.intercept[l] = my - s * mx;
            fit.r2[l] = if sxx > 0.0 && syy > 0.0 { sxy * sxy / (sxx * syy) } else { 0.0 };
        }
        fit
    }

    pub fn eval(&self, budgets: &[f64]) -> Vec<f64> {
        budgets.iter().enumerate().map(|(l, b)| self.intercept[l] + self.slope[l] * b).collect()
    }

    /// Every slope negative, so the surrogate map is strictly monotone.
    pub fn is_monotone(&self) -> bool {
        self.slope.iter().all(|&s| s < 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub labels: Vec<String>,
    pub total: f64,
    pub points: Vec<MeasuredPoint>,
    pub monotonicity: MonotonicityReport,
    pub fit: AffineFit,
    /// Limit of the discrete recursion on the surrogate map.
    pub fixed_point: Vec<f64>,
    /// `(window start, sup gap, ODE time covered)` against the RK4
    /// trajectory, in the time of the map scaled to a price spread of one
    /// half. Windows are cut short at the end of the recursion.
    pub tracking: Vec<(usize, f64, f64)>,
    /// Lyapunov value along the surrogate recursion started from the
    /// uniform split.
    pub lyapunov: Vec<f64>,
    /// Iterations after the tenth at which the Lyapunov value rose.
    pub lyapunov_rises: usize,
}

/// Measures the price map of a scenario and runs the budget-layer checks.
pub fn diagnose(
    spec: &NetworkSpec,
    sim: &SimConfig,
    controller: &ControllerConfig,
    cfg: &DiagnoseConfig,
) -> Result<Diagnostics> {
    if !matches!(cfg.controller, ControllerKind::Poc | ControllerKind::PocTunnel) {
        return Err(Error::Config(format!("diagnose needs a price-based controller, not {}", cfg.controller)));
    }
    if cfg.points < 2 {
        return Err(Error::Config("diagnose needs at least two budget points".into()));
    }
    if !(0.0..=1.0).contains(&cfg.uniform_mix) {
        return Err(Error::Config(format!("uniform_mix {} outside [0, 1]", cfg.uniform_mix)));
    }
    let controller = &resolve_reference_budget(spec, sim, controller)?;
    let underlay = Underlay::new(spec.clone(), sim.underlay.parse()?)?;
    let probe = build_controller(cfg.controller, &underlay, controller, cfg.seed)?;
    let labels = probe.price_labels();
    let total = controller.total_budget(&underlay)?;
    let dim = labels.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let uniform = total / dim as f64;
    let budgets: Vec<Vec<f64>> = (0..cfg.points)
        .map(|_| {
            sample_simplex(dim, total, &mut rng)
                .into_iter()
                .map(|b| cfg.uniform_mix * uniform + (1.0 - cfg.uniform_mix) * b)
                .collect()
        })
        .collect();

    let run_config = SimConfig {
        horizon: cfg.horizon,
        seed: cfg.seed,
        controller: cfg.controller.id().into(),
        stride: cfg.horizon,
        warmup: None,
        tail_fraction: 0.5,
        ..sim.clone()
    };
    let measure = |b: &Vec<f64>| -> Result<MeasuredPoint> {
        let mut c = controller.clone();
        c.schedules.gamma = StepSize::frozen();
        c.initial_budgets = Some(b.clone());
        let log = run_simulation(spec, &run_config, &c)?;
        Ok(MeasuredPoint { budgets: b.clone(), prices: log.tail_mean_prices })
    };
    #[cfg(feature = "parallel")]
    let points: Vec<Result<MeasuredPoint>> = {
        use rayon::prelude::*;
        budgets.par_iter().map(measure).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let points: Vec<Result<MeasuredPoint>> = budgets.iter().map(measure).collect();
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;

    let pairs: Vec<(Vec<f64>, Vec<f64>)> = points.iter().map(|p| (p.budgets.clone(), p.prices.clone())).collect();
    let monotonicity = monotonicity_of_samples(&pairs);
    let fit = AffineFit::fit(&points);

    // The recursion runs on the map scaled to a price spread of one half, so
    // the first harmonic step stays inside the simplex; scaling the map is
    // the same as rescaling time.
    let spread = points
        .iter()
        .map(|p| {
            let hi = p.prices.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lo = p.prices.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            hi - lo
        })
        .fold(0.0, f64::max);
    let scale = if spread > 0.5 { 0.5 / spread } else { 1.0 };
    let map = |b: &[f64]| fit.eval(b).into_iter().map(|x| scale * x).collect::<Vec<f64>>();

    let start = vec![uniform; dim];
    let settle = discrete_trajectory(map, &start, total, &StepSize::power(0.5, 0.6), 20_000);
    let fixed_point = settle.last().to_vec();

    let harmonic = discrete_trajectory(map, &start, total, &StepSize::power(1.0, 1.0), 5_000);
    let end = *harmonic.times.last().expect("nonempty");
    let tracking = TRACKING_STARTS
        .iter()
        .map(|&s| (s, tracking_gap(map, &harmonic, s, 1.0, total, 8), (end - harmonic.times[s]).min(1.0)))
        .collect();

    let lyapunov: Vec<f64> = settle.states.iter().take(2_000).map(|b| lyapunov_value(b, &fixed_point)).collect();
    let lyapunov_rises = lyapunov[10.min(lyapunov.len())..].windows(2).filter(|w| w[1] > w[0] + 1e-12).count();

    Ok(Diagnostics { labels, total, points, monotonicity, fit, fixed_point, tracking, lyapunov, lyapunov_rises })
}

impl Diagnostics {
    /// One row per measured point: budgets then prices.
    pub fn points_csv(&self) -> String {
        let mut s = String::from("point");
        for l in &self.labels {
            let _ = write!(s, ",budget_{l}");
        }
        for l in &self.labels {
            let _ = write!(s, ",price_{l}");
        }
        s.push('\n');
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(s, "{i}");
            for x in p.budgets.iter().chain(&p.prices) {
                let _ = write!(s, ",{x:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn fit_csv(&self) -> String {
        let mut s = String::from("entity,intercept,slope,r2,fixed_point\n");
        for (l, name) in self.labels.iter().enumerate() {
            let f = &self.fit;
            let _ = writeln!(s, "{name},{:?},{:?},{:?},{:?}", f.intercept[l], f.slope[l], f.r2[l], self.fixed_point[l]);
        }
        s
    }

    pub fn tracking_csv(&self) -> String {
        let mut s = String::from("window_start,sup_gap,ode_time_covered\n");
        for (start, gap, covered) in &self.tracking {
            let _ = writeln!(s, "{start},{gap:?},{covered:?}");
        }
        s
    }

    pub fn lyapunov_csv(&self) -> String {
        let mut s = String::from("iteration,lyapunov\n");
        for (i, v) in self.lyapunov.iter().enumerate() {
            let _ = writeln!(s, "{i},{v:?}");
        }
        s
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "measured points: {} over {} priced entities, total budget {}",
            self.points.len(),
            self.labels.len(),
            self.total
        )?;
        writeln!(f, "monotonicity of measured prices: {}", self.monotonicity)?;
        let negative = self.fit.slope.iter().filter(|&&s| s < 0.0).count();
        writeln!(f, "affine surrogate: {negative}/{} slopes negative", self.labels.len())?;
        let gaps: Vec<String> = self.tracking.iter().map(|(s, g, c)| format!("{s}: {g:.3e} over {c:.3}")).collect();
        writeln!(f, "ODE tracking sup gap by window start: {}", gaps.join(", "))?;
        write!(f, "Lyapunov rises after iteration 10: {}", self.lyapunov_rises)
    }
}
