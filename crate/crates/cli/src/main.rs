use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use overlay_poc::controllers::{build_controller, ControllerKind};
use overlay_poc::diagnose::{diagnose, DiagnoseConfig};
use overlay_poc::network::{validate, Underlay};
use overlay_poc::scenario::{Scenario, BUNDLED};
use overlay_poc::sim::{resolve_reference_budget, run_with_controller, sweep_arrival_rate, sweep_csv, SimConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Overlay routing simulator: validate scenarios, run simulations and rate
/// sweeps, and diagnose the budget layer.
#[derive(Parser)]
#[command(name = "overlay-poc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file without running it.
    Validate(Common),
    /// Run one simulation and write its metric tables.
    Run {
        #[command(flatten)]
        common: Common,
        /// Overrides the scenario's controller.
        #[arg(long)]
        controller: Option<String>,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every (controller, rate, seed) combination and write one table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated per-flow arrival rates.
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        /// Comma-separated controller names.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        controllers: Option<Vec<String>>,
        /// Comma-separated seeds; `--seed` gives a single one.
        #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Measure the price map at frozen budgets and report monotonicity,
    /// ODE tracking and Lyapunov descent.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        points: usize,
        /// Slots per measured point.
        #[arg(long, default_value_t = 200_000)]
        horizon: u64,
        #[arg(long, default_value = "poc")]
        controller: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
}

struct Loaded {
    scenario: Scenario,
    source: String,
    sha256: String,
}

fn load(name: &str) -> Result<Loaded> {
    let path = Path::new(name);
    let (text, source) = if path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        (text, path.display().to_string())
    } else if let Some((_, text)) = BUNDLED.iter().find(|(n, _)| *n == name) {
        ((*text).to_owned(), format!("bundled:{name}"))
    } else {
        let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
        bail!("no scenario file `{name}` and no bundled scenario of that name (bundled: {})", names.join(", "));
    };
    let scenario = Scenario::from_toml(&text).with_context(|| format!("loading {source}"))?;
    let sha256 = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    Ok(Loaded { scenario, source, sha256 })
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    scenario: &'a str,
    scenario_sha256: &'a str,
    seeds: Vec<u64>,
    sim: &'a SimConfig,
    controllers: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    rates: Vec<f64>,
    files: Vec<String>,
}

fn write_tables(out: &Path, tables: &[(String, String)]) -> Result<Vec<String>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut files = Vec::new();
    for (name, body) in tables {
        let path = out.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        files.push(name.clone());
    }
    Ok(files)
}

fn write_manifest(out: &Path, manifest: &Manifest<'_>) -> Result<()> {
    let text = toml::to_string(manifest).context("serializing the manifest")?;
    fs::write(out.join("manifest.toml"), text).context("writing manifest.toml")
}

fn cmd_validate(common: &Common) -> Result<bool> {
    let loaded = load(&common.scenario)?;
    let sc = &loaded.scenario;
    let report = validate(&sc.network);
    println!("{}: {report}", loaded.source);
    let mut ok = report.passed();
    if let Err(e) = sc.sim.validate() {
        println!("sim: {e}");
        ok = false;
    }
    if ok {
        let policy = sc.sim.underlay.parse()?;
        let underlay = Underlay::new(sc.network.clone(), policy)?;
        // the pilot run is skipped here; a placeholder budget checks the rest
        let mut controller = sc.controller.clone();
        if let Some(r) = controller.reference_budget.take() {
            match r.controller.parse::<ControllerKind>() {
                Ok(ControllerKind::Poc | ControllerKind::PocTunnel) | Err(_) => {
                    println!("reference_budget: `{}` is not a controller without a budget", r.controller);
                    ok = false;
                }
                Ok(_) if controller.total_budget.is_some() || controller.delay_target.is_some() => {
                    println!("reference_budget: set only one of total_budget, delay_target and reference_budget");
                    ok = false;
                }
                Ok(_) => controller.total_budget = Some(r.scale),
            }
        }
        for name in sc.sweep.controllers.iter().chain([&sc.sim.controller]) {
            let check = name.parse::<ControllerKind>().and_then(|k| build_controller(k, &underlay, &controller, 1));
            if let Err(e) = check {
                println!("controller {name}: {e}");
                ok = false;
            }
        }
    }
    println!("sha256 {}", loaded.sha256);
    Ok(ok)
}

fn cmd_run(common: &Common, controller: Option<String>, horizon: Option<u64>, out: &Path) -> Result<()> {
    let loaded = load(&common.scenario)?;
    let sc = &loaded.scenario;
    let mut sim = sc.sim.clone();
    if let Some(c) = controller {
        sim.controller = c;
    }
    if let Some(h) = horizon {
        sim.horizon = h;
    }
    if let Some(s) = common.seed {
        sim.seed = s;
    }
    let kind: ControllerKind = sim.controller.parse()?;
    let underlay = Underlay::new(sc.network.clone(), sim.underlay.parse()?)?;
    let controller = match kind {
        ControllerKind::Poc | ControllerKind::PocTunnel => resolve_reference_budget(&sc.network, &sim, &sc.controller)?,
        _ => sc.controller.clone(),
    };
    let mut ctrl = build_controller(kind, &underlay, &controller, sim.seed)?;
    let log = run_with_controller(&underlay, &sim, ctrl.as_mut())?;

    let mut tables = vec![
        ("series.csv".to_owned(), log.series_csv()),
        ("summary.csv".to_owned(), log.summary_csv()),
        ("links.csv".to_owned(), log.links_csv()),
        ("delay_histogram.csv".to_owned(), log.delay_histogram_csv()),
    ];
    tables.extend(ctrl.dump());
    let files = write_tables(out, &tables)?;
    write_manifest(
        out,
        &Manifest {
            command: "run",
            version: env!("CARGO_PKG_VERSION"),
            scenario: &loaded.source,
            scenario_sha256: &loaded.sha256,
            seeds: vec![sim.seed],
            sim: &sim,
            controllers: vec![kind.id().to_owned()],
            rates: Vec::new(),
            files,
        },
    )?;
    println!("{}", log.summary_csv().trim_end());
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_sweep(
    common: &Common,
    rates: Option<Vec<f64>>,
    controllers: Option<Vec<String>>,
    seeds: Option<Vec<u64>>,
    horizon: Option<u64>,
    out: &Path,
) -> Result<()> {
    let loaded = load(&common.scenario)?;
    let sc = &loaded.scenario;
    let rates = rates.unwrap_or_else(|| sc.sweep.rates.clone());
    let controllers = controllers.unwrap_or_else(|| sc.sweep.controllers.clone());
    let seeds = match (seeds, common.seed) {
        (Some(s), _) => s,
        (None, Some(s)) => vec![s],
        (None, None) => sc.sweep.seeds.clone(),
    };
    ensure!(!controllers.is_empty(), "the controller list is empty");
    ensure!(!rates.is_empty(), "the rate list is empty");
    ensure!(!seeds.is_empty(), "the seed list is empty");
    let mut sim = SimConfig { seed: seeds[0], ..sc.sim.clone() };
    if let Some(h) = horizon {
        sim.horizon = h;
    }
    let rows = sweep_arrival_rate(&sc.network, &sim, &sc.controller, &controllers, &rates, &seeds)?;
    let table = sweep_csv(&rows);
    let files = write_tables(out, &[("sweep.csv".to_owned(), table.clone())])?;
    write_manifest(
        out,
        &Manifest {
            command: "sweep",
            version: env!("CARGO_PKG_VERSION"),
            scenario: &loaded.source,
            scenario_sha256: &loaded.sha256,
            seeds,
            sim: &sim,
            controllers,
            rates,
            files,
        },
    )?;
    print!("{table}");
    Ok(())
}

fn cmd_diagnose(common: &Common, points: usize, horizon: u64, controller: &str, out: &Path) -> Result<()> {
    let loaded = load(&common.scenario)?;
    let sc = &loaded.scenario;
    let cfg = DiagnoseConfig {
        points,
        horizon,
        seed: common.seed.unwrap_or(sc.sim.seed),
        controller: controller.parse()?,
        ..DiagnoseConfig::default()
    };
    let d = diagnose(&sc.network, &sc.sim, &sc.controller, &cfg)?;
    let tables = [
        ("diagnose_points.csv".to_owned(), d.points_csv()),
        ("diagnose_fit.csv".to_owned(), d.fit_csv()),
        ("diagnose_tracking.csv".to_owned(), d.tracking_csv()),
        ("diagnose_lyapunov.csv".to_owned(), d.lyapunov_csv()),
        ("diagnose_report.txt".to_owned(), format!("{d}\n")),
    ];
    let files = write_tables(out, &tables)?;
    let sim = SimConfig { horizon, seed: cfg.seed, controller: controller.to_owned(), ..sc.sim.clone() };
    write_manifest(
        out,
        &Manifest {
            command: "diagnose",
            version: env!("CARGO_PKG_VERSION"),
            scenario: &loaded.source,
            scenario_sha256: &loaded.sha256,
            seeds: vec![cfg.seed],
            sim: &sim,
            controllers: vec![cfg.controller.id().to_owned()],
            rates: Vec::new(),
            files,
        },
    )?;
    println!("{d}");
    Ok(())
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate(common) => {
            if !cmd_validate(&common)? {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Run { common, controller, horizon, out } => cmd_run(&common, controller, horizon, &out)?,
        Command::Sweep { common, rates, controllers, seeds, horizon, out } => {
            let controllers = controllers.map(|c| c.into_iter().filter(|s| !s.trim().is_empty()).collect::<Vec<_>>());
            if controllers.as_ref().is_some_and(Vec::is_empty) {
                Cli::command().error(ErrorKind::InvalidValue, "--controllers needs at least one controller").exit();
            }
            cmd_sweep(&common, rates, controllers, seeds, horizon, &out)?
        }
        Command::Diagnose { common, points, horizon, controller, out } => {
            cmd_diagnose(&common, points, horizon, &controller, &out)?
        }
    }
    Ok(ExitCode::SUCCESS)
}
