//! Transport seam between the server and node roles. The emulation is
//! single-process, so the default transport is an in-memory queue, but the
//! federated loops only touch this trait; a networked deployment would swap
//! the implementation without changing the coordination code.

use crate::weights::WeightSet;

/// One node's contribution to a federated round.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightUpdate {
    pub node_id: usize,
    pub weights: WeightSet,
    pub sample_count: usize,
}

pub trait Transport {
    /// Server publishes the current global weights.
    fn publish_global(&mut self, weights: WeightSet);

    /// Node fetches the latest published weights.
    fn fetch_global(&self) -> Option<&WeightSet>;

    /// Node submits its locally trained weights.
    fn submit(&mut self, update: WeightUpdate);

    /// Server collects all pending updates, ordered by node id.
    fn drain(&mut self) -> Vec<WeightUpdate>;
}

/// In-memory message queue used by the single-process emulation.
#[derive(Debug, Default)]
pub struct InProcessTransport {
    global: Option<WeightSet>,
    inbox: Vec<WeightUpdate>,
}

impl InProcessTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Transport for InProcessTransport {
    fn publish_global(&mut self, weights: WeightSet) {
        self.global = Some(weights);
    }

    fn fetch_global(&self) -> Option<&WeightSet> {
        self.global.as_ref()
    }

    fn submit(&mut self, update: WeightUpdate) {
        self.inbox.push(update);
    }

    fn drain(&mut self) -> Vec<WeightUpdate> {
        let mut updates = std::mem::take(&mut self.inbox);
        updates.sort_by_key(|u| u.node_id);
        updates
    }
}
