use std::collections::VecDeque;

use crate::ratealloc::{
    compute_abr_capacity, Algorithm, AllocatorState, ErDecision, IntervalMeasurement, RateAllocError,
    VcId, VcObservation,
};

use super::{Cell, Payload, CELL_BITS};

/// A switch output port: FIFO queue onto one link plus the measurement
/// that drives the port's explicit-rate feedback.
#[derive(Debug, Clone)]
pub struct PortState {
    pub port_id: String,
    pub algorithm: Algorithm,
    pub allocator_state: AllocatorState<f64>,
    pub link_bandwidth: f64,
    pub target_utilization: f64,
    pub vbr_cbr_usage: f64,
    pub interval_start: f64,
    pub cells_this_interval: u64,
    /// Indexed by the port-local VC index.
    pub per_vc_cell_counts: Vec<u64>,
    pub per_vc_last_ccr: Vec<Option<f64>>,
    pub vcs: Vec<VcId>,
    pub queue: VecDeque<Cell>,
    pub busy: bool,
    pub measuring_source_rates: bool,
    /// Frozen feedback for the current interval.
    pub decision: ErDecision<f64>,
    er_by_local: Vec<f64>,
    pub interval_generation: u64,
}

/// Outcome of closing an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalReport {
    pub measurement: IntervalMeasurement<f64>,
    pub result: Result<ErDecision<f64>, RateAllocError>,
}

impl PortState {
    pub fn new(
        port_id: String,
        algorithm: Algorithm,
        link_bandwidth: f64,
        target_utilization: f64,
        vbr_cbr_usage: f64,
        delta: f64,
        vcs: Vec<VcId>,
    ) -> Self {
        let capacity = compute_abr_capacity(link_bandwidth, target_utilization, vbr_cbr_usage);
        let n = vcs.len();
        Self {
            port_id,
            algorithm,
            allocator_state: AllocatorState::seeded(capacity, n, delta),
            link_bandwidth,
            target_utilization,
            vbr_cbr_usage,
            interval_start: 0.0,
            cells_this_interval: 0,
            per_vc_cell_counts: vec![0; n],
            per_vc_last_ccr: vec![None; n],
            decision: ErDecision::open(capacity, vcs.iter().copied()),
            er_by_local: vec![capacity; n],
            vcs,
            queue: VecDeque::new(),
            busy: false,
            measuring_source_rates: algorithm.measures_source_rates(),
            interval_generation: 0,
        }
    }

    pub fn abr_capacity(&self) -> f64 {
        compute_abr_capacity(self.link_bandwidth, self.target_utilization, self.vbr_cbr_usage)
    }

    /// Counts and enqueues a forward cell. Returns true when the interval
    /// has reached its cell budget.
    pub fn accept(&mut self, cell: Cell, local_vc: usize, interval_cells: u32) -> bool {
        self.cells_this_interval += 1;
        self.per_vc_cell_counts[local_vc] += 1;
        if let Payload::Rm(rm) = &cell.payload {
            self.per_vc_last_ccr[local_vc] = Some(rm.ccr);
        }
        self.queue.push_back(cell);
        self.cells_this_interval >= u64::from(interval_cells)
    }

    /// ER this port currently grants a VC.
    pub fn er_for(&self, local_vc: usize) -> f64 {
        self.er_by_local[local_vc]
    }

    pub fn measurement(&self, now: f64) -> IntervalMeasurement<f64> {
        let elapsed = now - self.interval_start;
        let to_mbps = |cells: u64| {
            if elapsed > 0.0 {
                cells as f64 * CELL_BITS / elapsed / 1e6
            } else {
                0.0
            }
        };
        let per_vc = self
            .vcs
            .iter()
            .enumerate()
            .map(|(i, &vc_id)| {
                let count = self.per_vc_cell_counts[i];
                VcObservation {
                    vc_id,
                    ccr_from_rm: self.per_vc_last_ccr[i],
                    measured_rate: self.measuring_source_rates.then(|| to_mbps(count)),
                    saw_cell: count > 0,
                }
            })
            .collect();
        IntervalMeasurement {
            abr_input_rate: to_mbps(self.cells_this_interval),
            link_bandwidth: self.link_bandwidth,
            target_utilization: self.target_utilization,
            vbr_cbr_usage: self.vbr_cbr_usage,
            per_vc,
        }
    }

    /// Closes the interval at `now`: runs the allocator, freezes its
    /// decision for the next interval (or keeps the old one on error), and
    /// resets the counters. The latched CCRs carry over.
    pub fn close_interval(&mut self, now: f64) -> IntervalReport {
        let measurement = self.measurement(now);
        let result = self.algorithm.decide(&measurement, &mut self.allocator_state);
        if let Ok(decision) = &result {
            for (i, vc) in self.vcs.iter().enumerate() {
                self.er_by_local[i] = decision.er(*vc).expect("decision covers every port VC");
            }
            self.decision = decision.clone();
        }
        self.interval_start = now;
        self.cells_this_interval = 0;
        self.per_vc_cell_counts.iter_mut().for_each(|c| *c = 0);
        self.interval_generation += 1;
        IntervalReport { measurement, result }
    }
}
