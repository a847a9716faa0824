mod common;

use overlay_poc::controllers::{ControllerConfig, ControllerKind};
use overlay_poc::scenario::Scenario;
use overlay_poc::sim::{run_simulation, sweep_arrival_rate, sweep_csv, SimConfig};

#[test]
fn single_queue_matches_the_birth_death_chain() {
    for (p, mu, cap) in [(0.3, 0.5, 10), (0.6, 0.65, 6), (0.5, 0.9, 3)] {
        let spec = common::single_tunnel(p, mu, cap);
        let sim = SimConfig { horizon: 1_000_000, controller: "fixed-split".into(), ..SimConfig::default() };
        let log = run_simulation(&spec, &sim, &ControllerConfig::default()).unwrap();
        let exact = common::birth_death_mean(p, mu, cap);
        let got = log.avg_link_queue[0];
        assert!((got - exact).abs() / exact < 0.02, "p {p} mu {mu}: {got} vs {exact}");
    }
}

#[test]
fn identical_seeds_give_identical_tables() {
    let sc = Scenario::bundled("fig2").unwrap();
    for kind in ControllerKind::ALL {
        let sim = SimConfig { horizon: 5_000, seed: 42, stride: 100, controller: kind.id().into(), ..sc.sim.clone() };
        let a = run_simulation(&sc.network, &sim, &sc.controller).unwrap();
        let b = run_simulation(&sc.network, &sim, &sc.controller).unwrap();
        assert_eq!(a.series_csv(), b.series_csv(), "{kind}");
        assert_eq!(a.summary_csv(), b.summary_csv(), "{kind}");
        assert_eq!(a.links_csv(), b.links_csv(), "{kind}");
        assert_eq!(a.delay_histogram_csv(), b.delay_histogram_csv(), "{kind}");
        let other = SimConfig { seed: 43, ..sim };
        let c = run_simulation(&sc.network, &other, &sc.controller).unwrap();
        assert_ne!(a.series_csv(), c.series_csv(), "{kind}");
    }
}

#[test]
fn seeds_share_arrivals_across_controllers() {
    let sc = Scenario::bundled("fig2").unwrap();
    let arrivals: Vec<Vec<u64>> = ["poc", "bp", "random-split"]
        .iter()
        .map(|k| {
            let sim = SimConfig { horizon: 20_000, seed: 3, controller: (*k).into(), ..sc.sim.clone() };
            run_simulation(&sc.network, &sim, &sc.controller).unwrap().arrivals
        })
        .collect();
    assert!(arrivals.windows(2).all(|w| w[0] == w[1]), "{arrivals:?}");
}

#[test]
fn littles_law_holds_without_drops() {
    let sc = Scenario::bundled("fig2").unwrap();
    for kind in ["poc-t", "obp", "random-split"] {
        let spec = sc.network.with_arrival_rate(0.4).unwrap();
        let sim = SimConfig { horizon: 200_000, controller: kind.into(), ..sc.sim.clone() };
        let log = run_simulation(&spec, &sim, &sc.controller).unwrap();
        assert_eq!(log.total_drops(), 0, "{kind}");
        for f in 0..2 {
            let c = log.little_check(f);
            assert!(c.rel_err < 0.05, "{kind} flow {f}: {c:?}");
        }
    }
}

#[test]
fn sweep_queues_grow_with_load() {
    let sc = Scenario::bundled("fig2").unwrap();
    let sim = SimConfig { horizon: 30_000, ..sc.sim.clone() };
    let controllers = vec!["random-split".to_owned(), "obp".to_owned()];
    let rates = [0.2, 0.4, 0.6, 0.8];
    let rows = sweep_arrival_rate(&sc.network, &sim, &sc.controller, &controllers, &rates, &[1, 2]).unwrap();
    assert_eq!(rows.len(), controllers.len() * rates.len() * 2);
    for c in &controllers {
        for seed in [1, 2] {
            let q: Vec<f64> =
                rows.iter().filter(|r| &r.controller == c && r.seed == seed).map(|r| r.avg_queue).collect();
            assert!(q.windows(2).all(|w| w[0] <= w[1]), "{c}: {q:?}");
        }
    }
    let csv = sweep_csv(&rows);
    assert!(csv.starts_with("controller,rate,seed,"));
    assert_eq!(csv.lines().count(), rows.len() + 1);
    assert!(sweep_arrival_rate(&sc.network, &sim, &sc.controller, &[], &rates, &[1]).is_err());
}

#[test]
fn bad_configs_are_rejected() {
    let sc = Scenario::bundled("toy-parallel").unwrap();
    let cfg = &sc.controller;
    for bad in [
        SimConfig { horizon: 0, ..SimConfig::default() },
        SimConfig { stride: 0, ..SimConfig::default() },
        SimConfig { horizon: 10, warmup: Some(10), ..SimConfig::default() },
        SimConfig { controller: "nope".into(), ..SimConfig::default() },
        SimConfig { underlay: "fifo".into(), ..SimConfig::default() },
    ] {
        assert!(run_simulation(&sc.network, &bad, cfg).is_err(), "{bad:?}");
    }
    let no_budget = ControllerConfig::default();
    assert!(run_simulation(&sc.network, &SimConfig::default(), &no_budget).is_err());
}

#[test]
fn longest_queue_first_runs_end_to_end() {
    let sc = Scenario::bundled("fig2").unwrap();
    let sim = SimConfig { horizon: 20_000, underlay: "lqf".into(), controller: "poc-t".into(), ..sc.sim.clone() };
    let log = run_simulation(&sc.network, &sim, &sc.controller).unwrap();
    assert!(log.total_throughput() > 0.5);
}

#[test]
fn reference_budgets_come_from_a_pilot_run() {
    use overlay_poc::controllers::ReferenceBudget;
    use overlay_poc::sim::resolve_reference_budget;

    let sc = Scenario::bundled("fig2").unwrap();
    let sim = SimConfig { horizon: 20_000, seed: 4, ..sc.sim.clone() };
    let reference = ReferenceBudget { controller: "random-split".into(), horizon: 10_000, scale: 0.5 };
    let cfg =
        ControllerConfig { delay_target: None, reference_budget: Some(reference.clone()), ..sc.controller.clone() };

    let resolved = resolve_reference_budget(&sc.network, &sim, &cfg).unwrap();
    let pilot = SimConfig { horizon: 10_000, stride: 10_000, controller: "random-split".into(), ..sim.clone() };
    let expect = 0.5 * run_simulation(&sc.network, &pilot, &sc.controller).unwrap().avg_total_queue();
    assert_eq!(resolved.total_budget, Some(expect));
    assert!(resolved.reference_budget.is_none());

    let a = run_simulation(&sc.network, &sim, &cfg).unwrap();
    let b = run_simulation(&sc.network, &sim, &resolved).unwrap();
    assert_eq!(a.series_csv(), b.series_csv());
    assert!((a.final_budgets.iter().sum::<f64>() - expect).abs() < 1e-9);

    // conflicting or circular settings
    let both = ControllerConfig { delay_target: Some(2.0), ..cfg.clone() };
    assert!(resolve_reference_budget(&sc.network, &sim, &both).is_err());
    let circular = ReferenceBudget { controller: "poc".into(), ..reference };
    let cfg = ControllerConfig { reference_budget: Some(circular), ..cfg };
    assert!(resolve_reference_budget(&sc.network, &sim, &cfg).is_err());
}
