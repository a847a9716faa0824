//! TOML scenario files.
//!
//! ```toml
//! [network]
//! buffer_cap = 20
//! nodes = [{ name = "s", role = "overlay" }, { name = "u", role = "underlay" }, ...]
//!
//! [[network.links]]
//! name = "s-u"
//! tail = "s"
//! head = "u"
//! capacity = { kind = "bernoulli", n = 1, p = 0.5 }
//! injection_cap = 1              # optional, ingress links only
//! sharing = { f1 = 0.5, f2 = 0.5 } # optional when one flow uses the link
//!
//! [[network.flows]]
//! name = "f1"
//! source = "s"
//! destination = "d"
//! arrivals = { kind = "bernoulli", n = 2, p = 0.3 }
//! route = ["s-u", "u-d"]
//! routing = [{ from = "s-u", to = "u-d", p = 1.0 }]
//!
//! [sim]         # SimConfig
//! [controller]  # ControllerConfig
//! [sweep]       # rates, controllers, seeds
//! ```
//!
//! Unknown keys are rejected. A link without a `sharing` table is split
//! equally among the flows whose routes contain it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controllers::ControllerConfig;
use crate::error::{Error, Result};
use crate::network::{CountDistribution, FlowSpec, Link, NetworkSpec, Node, NodeRole};
use crate::sim::SimConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub name: String,
    pub role: NodeRole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEntry {
    pub name: String,
    pub tail: String,
    pub head: String,
    pub capacity: CountDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection_cap: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharing: Option<BTreeMap<String, f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingEntry {
    pub from: String,
    pub to: String,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowEntry {
    pub name: String,
    pub source: String,
    pub destination: String,
    pub arrivals: CountDistribution,
    pub route: Vec<String>,
    #[serde(default)]
    pub routing: Vec<RoutingEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub buffer_cap: u32,
    pub nodes: Vec<NodeEntry>,
    pub links: Vec<LinkEntry>,
    pub flows: Vec<FlowEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub rates: Vec<f64>,
    pub controllers: Vec<String>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            rates: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            controllers: ["poc", "poc-t", "bp", "obp", "random-split"].map(String::from).to_vec(),
            seeds: vec![1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub network: NetworkFile,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

/// A parsed scenario with the network resolved to indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub description: Option<String>,
    pub network: NetworkSpec,
    pub sim: SimConfig,
    pub controller: ControllerConfig,
    pub sweep: SweepConfig,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text)?;
        Ok(Self {
            network: file.network.resolve()?,
            description: file.description,
            sim: file.sim,
            controller: file.controller,
            sweep: file.sweep,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// One of the scenarios shipped with the crate.
    pub fn bundled(name: &str) -> Result<Self> {
        let text = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::UnknownName { kind: "bundled scenario", name: name.to_owned() })?;
        Self::from_toml(text)
    }
}

pub const BUNDLED: [(&str, &str); 4] = [
    ("fig2", include_str!("../scenarios/fig2.toml")),
    ("fig5", include_str!("../scenarios/fig5.toml")),
    ("toy-parallel", include_str!("../scenarios/toy-parallel.toml")),
    ("infeasible-b", include_str!("../scenarios/infeasible-b.toml")),
];

impl NetworkFile {
    pub fn resolve(&self) -> Result<NetworkSpec> {
        let node = |name: &str| -> Result<usize> {
            self.nodes
                .iter()
                .position(|n| n.name == name)
                .ok_or_else(|| Error::UnknownName { kind: "node", name: name.to_owned() })
        };
        let link = |name: &str| -> Result<usize> {
            self.links
                .iter()
                .position(|l| l.name == name)
                .ok_or_else(|| Error::UnknownName { kind: "link", name: name.to_owned() })
        };
        let flow = |name: &str| -> Result<usize> {
            self.flows
                .iter()
                .position(|f| f.name == name)
                .ok_or_else(|| Error::UnknownName { kind: "flow", name: name.to_owned() })
        };
        duplicates("node", self.nodes.iter().map(|n| &n.name))?;
        duplicates("link", self.links.iter().map(|l| &l.name))?;
        duplicates("flow", self.flows.iter().map(|f| &f.name))?;

        let nodes = self.nodes.iter().map(|n| Node { name: n.name.clone(), role: n.role }).collect();
        let mut links = Vec::with_capacity(self.links.len());
        for l in &self.links {
            links.push(Link {
                name: l.name.clone(),
                tail: node(&l.tail)?,
                head: node(&l.head)?,
                capacity: l.capacity,
                injection_cap: l.injection_cap,
            });
        }
        let nl = links.len();
        let nf = self.flows.len();
        let mut flows = Vec::with_capacity(nf);
        let mut routing = vec![vec![Vec::new(); nl]; nf];
        for (fi, f) in self.flows.iter().enumerate() {
            let mut route = Vec::with_capacity(f.route.len());
            for name in &f.route {
                route.push(link(name)?);
            }
            route.sort_unstable();
            if route.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Scenario(format!("flow `{}` lists a route link twice", f.name)));
            }
            for r in &f.routing {
                routing[fi][link(&r.from)?].push((link(&r.to)?, r.p));
            }
            flows.push(FlowSpec {
                name: f.name.clone(),
                source: node(&f.source)?,
                destination: node(&f.destination)?,
                arrivals: f.arrivals,
                route,
            });
        }
        let mut sharing = vec![vec![0.0; nf]; nl];
        for (li, l) in self.links.iter().enumerate() {
            match &l.sharing {
                Some(map) => {
                    for (fname, &mu) in map {
                        sharing[li][flow(fname)?] = mu;
                    }
                }
                None => {
                    let users: Vec<usize> = (0..nf).filter(|&f| flows[f].route.contains(&li)).collect();
                    for &f in &users {
                        sharing[li][f] = 1.0 / users.len() as f64;
                    }
                }
            }
        }
        Ok(NetworkSpec { nodes, links, flows, sharing, routing, buffer_cap: self.buffer_cap })
    }
}

fn duplicates<'a>(kind: &'static str, names: impl Iterator<Item = &'a String>) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::Scenario(format!("duplicate {kind} name `{n}`")));
        }
    }
    Ok(())
}
