//! Browser bindings: each export takes plain numbers and strings and returns
//! a JSON string for the page to plot.

use overlay_poc::budget::{discrete_trajectory, integrate_replicator_ode, lyapunov_value};
use overlay_poc::scenario::{Scenario, BUNDLED};
use overlay_poc::schedule::StepSize;
use overlay_poc::sim::{run_simulation, sweep_arrival_rate, SimConfig};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn scenario_names() -> String {
    json!(BUNDLED.iter().map(|(n, _)| *n).collect::<Vec<_>>()).to_string()
}

/// Discrete budget recursion against the replicator ODE for the linear price
/// map `lambda_l(B) = c_l - d B_l`, both started from `start` (rescaled onto
/// the simplex of size `total`).
#[wasm_bindgen]
pub fn replicator_demo(
    c: Vec<f64>,
    d: f64,
    total: f64,
    start: Vec<f64>,
    iterations: u32,
    gamma_scale: f64,
    gamma_exponent: f64,
) -> Result<String, JsError> {
    if c.is_empty() || c.len() != start.len() {
        return Err(js("c and start need the same nonzero length"));
    }
    if !(d > 0.0 && total > 0.0) {
        return Err(js("d and total must be positive"));
    }
    let s: f64 = start.iter().sum();
    if !(s > 0.0) || start.iter().any(|&x| x < 0.0) {
        return Err(js("start needs nonnegative entries with a positive sum"));
    }
    let b0: Vec<f64> = start.iter().map(|x| x * total / s).collect();
    let lambda = |b: &[f64]| c.iter().zip(b).map(|(ci, bi)| ci - d * bi).collect::<Vec<f64>>();

    let gamma = StepSize::power(gamma_scale, gamma_exponent);
    let discrete = discrete_trajectory(lambda, &b0, total, &gamma, iterations as u64);
    let end = *discrete.times.last().unwrap_or(&0.0);
    let ode = integrate_replicator_ode(lambda, &b0, total, end.max(1e-9), (end / 2000.0).max(1e-4)).map_err(js)?;

    // interior fixed point when every coordinate stays positive
    let kappa = (c.iter().sum::<f64>() - d * total) / c.len() as f64;
    let target: Vec<f64> = c.iter().map(|ci| (ci - kappa) / d).collect();
    let interior = target.iter().all(|&x| x > 0.0);
    let lyapunov: Vec<f64> =
        if interior { discrete.states.iter().map(|b| lyapunov_value(b, &target)).collect() } else { Vec::new() };

    let thin = |n: usize| (n / 1000).max(1);
    let pick = |v: &[Vec<f64>], every: usize| v.iter().step_by(every).cloned().collect::<Vec<_>>();
    let pick_t = |v: &[f64], every: usize| v.iter().step_by(every).copied().collect::<Vec<_>>();
    let dk = thin(discrete.states.len());
    let ok = thin(ode.states.len());
    Ok(json!({
        "discrete": { "times": pick_t(&discrete.times, dk), "states": pick(&discrete.states, dk) },
        "ode": { "times": pick_t(&ode.times, ok), "states": pick(&ode.states, ok) },
        "fixed_point": if interior { Some(&target) } else { None },
        "lyapunov": pick_t(&lyapunov, dk),
    })
    .to_string())
}

fn scenario(name: &str) -> Result<Scenario, JsError> {
    Scenario::bundled(name).map_err(js)
}

/// One run of a bundled scenario with every flow's arrival rate set to `rate`.
#[wasm_bindgen]
pub fn simulate(name: &str, controller: &str, rate: f64, horizon: u32, seed: u32) -> Result<String, JsError> {
    let sc = scenario(name)?;
    let spec = sc.network.with_arrival_rate(rate).map_err(js)?;
    let horizon = horizon as u64;
    let cfg = SimConfig {
        horizon,
        seed: seed as u64,
        controller: controller.to_owned(),
        stride: (horizon / 400).max(1),
        ..sc.sim.clone()
    };
    let log = run_simulation(&spec, &cfg, &sc.controller).map_err(js)?;
    let samples: Vec<_> = log
        .samples
        .iter()
        .map(|s| {
            json!({
                "slot": s.slot,
                "queue": s.link_queues.iter().map(|&q| q as u64).sum::<u64>(),
                "running_avg": s.running_avg_queue,
                "max_price": s.prices.iter().copied().fold(0.0, f64::max),
                "budgets": s.budgets,
            })
        })
        .collect();
    Ok(json!({
        "links": log.link_names,
        "price_labels": log.price_labels,
        "samples": samples,
        "avg_link_queue": log.avg_link_queue,
        "final_budgets": log.final_budgets,
        "final_prices": log.final_prices,
        "avg_delay": log.avg_delay_all(),
        "throughput": log.total_throughput(),
        "drops": log.total_drops(),
    })
    .to_string())
}

/// Average delay and queue per (controller, rate) for comma-separated lists.
#[wasm_bindgen]
pub fn sweep(name: &str, controllers: &str, rates: &str, horizon: u32, seed: u32) -> Result<String, JsError> {
    let sc = scenario(name)?;
    let controllers: Vec<String> =
        controllers.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
    let rates = rates
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|r| r.parse::<f64>().map_err(|e| js(format!("rate `{r}`: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = SimConfig { horizon: horizon as u64, stride: horizon.max(1) as u64, ..sc.sim.clone() };
    let rows =
        sweep_arrival_rate(&sc.network, &cfg, &sc.controller, &controllers, &rates, &[seed as u64]).map_err(js)?;
    let rows: Vec<_> = rows
        .iter()
        .map(|r| json!({ "controller": r.controller, "rate": r.rate, "avg_delay": r.avg_delay, "avg_queue": r.avg_queue, "drops": r.drops }))
        .collect();
    Ok(json!(rows).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicator_demo_reaches_the_fixed_point() {
        let out = replicator_demo(vec![3.0, 2.6, 2.2, 2.0], 4.0, 1.0, vec![1.0; 4], 5000, 0.5, 0.6).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        let fp: Vec<f64> = serde_json::from_value(v["fixed_point"].clone()).unwrap();
        let last: Vec<f64> =
            serde_json::from_value(v["discrete"]["states"].as_array().unwrap().last().unwrap().clone()).unwrap();
        for (a, b) in fp.iter().zip(&last) {
            assert!((a - b).abs() < 1e-3, "{fp:?} {last:?}");
        }
    }

    #[test]
    fn simulate_and_sweep_return_json() {
        let v: serde_json::Value =
            serde_json::from_str(&simulate("toy-parallel", "poc", 0.5, 5000, 1).unwrap()).unwrap();
        assert!(v["samples"].as_array().unwrap().len() > 10);
        let v: serde_json::Value =
            serde_json::from_str(&sweep("fig2", "random-split, obp", "0.2,0.4", 3000, 1).unwrap()).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 4);
    }

    #[test]
    fn names_are_listed() {
        assert!(scenario_names().contains("fig2"));
    }
}
