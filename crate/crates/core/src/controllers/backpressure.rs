use super::{Controller, ControllerKind, View};
use crate::error::Result;

/// Backpressure on overlay endpoint queues.
///
/// A tunnel's weight is the source queue minus the destination queue, which
/// is always zero here. The overlay variant also subtracts the packets the
/// source has in flight on the tunnel. Tunnels with positive weight are
/// filled up to their injection caps, largest weight first, ties to the
/// lower ingress link.
///
/// Reads the source pools and, for the overlay variant, the in-flight counts.
pub struct Backpressure {
    in_flight_aware: bool,
    order: Vec<(i64, usize)>,
}

impl Backpressure {
    pub fn new(in_flight_aware: bool) -> Self {
        Self { in_flight_aware, order: Vec::new() }
    }

    /// `W_tau` for each ingress link of `flow`.
    pub fn weights(&self, view: &View<'_>, flow: usize) -> Vec<i64> {
        let start = view.state.pool_len(flow) as i64;
        let end = 0;
        view.underlay
            .ingress(flow)
            .iter()
            .map(|&l| {
                let w = start - end;
                if self.in_flight_aware {
                    w - view.state.in_flight(l) as i64
                } else {
                    w
                }
            })
            .collect()
    }
}

impl Controller for Backpressure {
    fn kind(&self) -> ControllerKind {
        if self.in_flight_aware {
            ControllerKind::OverlayBackpressure
        } else {
            ControllerKind::Backpressure
        }
    }

    fn decide(&mut self, view: &View<'_>, out: &mut [Vec<u32>]) -> Result<()> {
        for (f, alloc) in out.iter_mut().enumerate() {
            let caps = view.underlay.injection_caps(f);
            alloc.clear();
            alloc.resize(caps.len(), 0);
            let w = self.weights(view, f);
            self.order.clear();
            self.order.extend(w.iter().enumerate().filter(|(_, &w)| w > 0).map(|(k, &w)| (-w, k)));
            self.order.sort_unstable();
            let mut left = view.state.pool_len(f);
            for &(_, k) in &self.order {
                let u = caps[k].min(left);
                alloc[k] = u;
                left -= u;
            }
        }
        Ok(())
    }
}
