use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Controller, ControllerKind, View};
use crate::error::{Error, Result};
use crate::network::Underlay;

/// Sends every available packet (up to the caps), each to a tunnel drawn
/// uniformly among those with room left. Reads only the source pools.
pub struct RandomSplit {
    rng: ChaCha8Rng,
    open: Vec<usize>,
}

impl RandomSplit {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng, open: Vec::new() }
    }
}

impl Controller for RandomSplit {
    fn kind(&self) -> ControllerKind {
        ControllerKind::RandomSplit
    }

    fn decide(&mut self, view: &View<'_>, out: &mut [Vec<u32>]) -> Result<()> {
        for (f, alloc) in out.iter_mut().enumerate() {
            let caps = view.underlay.injection_caps(f);
            alloc.clear();
            alloc.resize(caps.len(), 0);
            let n = view.state.pool_len(f).min(caps.iter().sum());
            for _ in 0..n {
                self.open.clear();
                self.open.extend((0..caps.len()).filter(|&k| alloc[k] < caps[k]));
                let k = self.open[self.rng.gen_range(0..self.open.len())];
                alloc[k] += 1;
            }
        }
        Ok(())
    }
}

/// Smooth weighted round-robin over the tunnels with room left.
/// Reads only the source pools.
pub struct FixedSplit {
    weights: Vec<Vec<f64>>,
    current: Vec<Vec<f64>>,
}

impl FixedSplit {
    pub fn new(underlay: &Underlay, weights: Option<&[Vec<f64>]>) -> Result<Self> {
        let nf = underlay.num_flows();
        let weights: Vec<Vec<f64>> = match weights {
            None => (0..nf).map(|f| vec![1.0; underlay.ingress(f).len()]).collect(),
            Some(w) => {
                if w.len() != nf {
                    return Err(Error::Config(format!("split_weights has {} rows, expected {nf}", w.len())));
                }
                for (f, row) in w.iter().enumerate() {
                    let n = underlay.ingress(f).len();
                    if row.len() != n || row.iter().any(|&x| !(x >= 0.0)) || row.iter().sum::<f64>() <= 0.0 {
                        return Err(Error::Config(format!(
                            "split_weights for flow {f} needs {n} nonnegative entries with a positive sum"
                        )));
                    }
                }
                w.to_vec()
            }
        };
        let current = weights.iter().map(|w| vec![0.0; w.len()]).collect();
        Ok(Self { weights, current })
    }
}

impl Controller for FixedSplit {
    fn kind(&self) -> ControllerKind {
        ControllerKind::FixedSplit
    }

    fn decide(&mut self, view: &View<'_>, out: &mut [Vec<u32>]) -> Result<()> {
        for (f, alloc) in out.iter_mut().enumerate() {
            let caps = view.underlay.injection_caps(f);
            alloc.clear();
            alloc.resize(caps.len(), 0);
            let w = &self.weights[f];
            let cur = &mut self.current[f];
            let n = view.state.pool_len(f).min(caps.iter().sum());
            for _ in 0..n {
                let mut total = 0.0;
                let mut best: Option<usize> = None;
                for k in 0..caps.len() {
                    if alloc[k] >= caps[k] || w[k] == 0.0 {
                        continue;
                    }
                    cur[k] += w[k];
                    total += w[k];
                    if best.is_none_or(|b| cur[k] > cur[b]) {
                        best = Some(k);
                    }
                }
                let Some(k) = best else { break };
                cur[k] -= total;
                alloc[k] += 1;
            }
        }
        Ok(())
    }
}
