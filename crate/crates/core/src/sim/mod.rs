//! Cell-level discrete-event simulation of ABR sources, switches, links and
//! destinations.
//!
//! Forward cells queue FIFO at every switch output port and cross links at
//! line rate plus propagation delay. Destinations turn forward RM cells
//! around immediately. Backward RM cells travel the reverse path with
//! propagation delay only, and each switch they pass lowers their ER to the
//! value frozen at its forward output port for that VC. Ports close a
//! measurement interval after `interval_cells` arrivals or `interval_max_s`,
//! whichever comes first.

mod event;
mod port;
mod source;

use thiserror::Error;

use crate::metrics::{AcrSample, AllocatorFault, PortSample, TraceSet, VcInfo};
use crate::ratealloc::VcId;
use crate::scenario::{Scenario, ScenarioError};

pub use event::{Event, EventKind, EventQueue};
pub use port::{IntervalReport, PortState};
pub use source::{Emission, SourceState};

/// ATM cell, header included.
pub const CELL_BITS: f64 = 424.0;

/// Time to put one cell on the wire at `rate_mbps`.
pub fn cell_time_s(rate_mbps: f64) -> f64 {
    CELL_BITS / (rate_mbps * 1e6)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmCell {
    pub vc_id: VcId,
    pub direction: Direction,
    pub ccr: f64,
    pub er: f64,
    pub timestamp_sent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Data,
    Rm(RmCell),
}

/// A cell in the network. `hop` is the index (into the VC's route) of the
/// link the cell is on: forward cells arrive at `route[hop + 1]`, backward
/// RM cells at `route[hop]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub vc: usize,
    pub hop: usize,
    pub payload: Payload,
}

impl Cell {
    fn is_backward(&self) -> bool {
        matches!(&self.payload, Payload::Rm(rm) if rm.direction == Direction::Backward)
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("ScenarioInvalid: {0}")]
    ScenarioInvalid(#[from] ScenarioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimStats {
    pub events: u64,
    pub cells_emitted: u64,
    pub cells_delivered: u64,
    /// Forward cells on a wire at the end of the run.
    pub cells_in_flight: u64,
    /// Forward cells waiting or in service at ports at the end of the run.
    pub cells_queued: u64,
    pub frms_emitted: u64,
    pub brms_received: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: TraceSet,
    pub stats: SimStats,
}

#[derive(Debug, Clone)]
struct LinkRt {
    bandwidth: f64,
    delay: f64,
}

#[derive(Debug, Clone, Copy)]
struct Hop {
    link: usize,
    /// Switch output port feeding this link, with the VC's index at it.
    port: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct VcRt {
    hops: Vec<Hop>,
    start: f64,
    stop: f64,
    generation: u64,
}

/// Hooks into cell-level events. Every method defaults to doing nothing.
pub trait SimObserver {
    /// A source put a cell on its access link.
    fn emitted(&mut self, _vc: usize, _time: f64, _acr: f64, _send_rate: f64) {}

    /// A switch stamped a backward RM cell arriving from `route[hop + 1]`.
    fn stamped(&mut self, _vc: usize, _hop: usize, _er_before: f64, _er_after: f64) {}

    /// A backward RM cell reached its source.
    fn returned(&mut self, _vc: usize, _time: f64, _er: f64) {}
}

struct NoObserver;

impl SimObserver for NoObserver {}

pub struct Simulation<'o> {
    now: f64,
    duration: f64,
    interval_cells: u32,
    interval_max: f64,
    queue: EventQueue,
    links: Vec<LinkRt>,
    ports: Vec<PortState>,
    sources: Vec<SourceState>,
    vcs: Vec<VcRt>,
    vc_ids: Vec<String>,
    trace: TraceSet,
    stats: SimStats,
    observer: Box<dyn SimObserver + 'o>,
}

impl<'o> Simulation<'o> {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        scenario.validate()?;

        let links: Vec<LinkRt> = scenario
            .links
            .iter()
            .map(|l| LinkRt {
                bandwidth: l.bandwidth_mbps,
                delay: scenario.propagation_delay_s(l),
            })
            .collect();
        let link_index = |id: &str| scenario.links.iter().position(|l| l.id == id).unwrap();

        // One port per link leaving a switch that carries at least one VC.
        let mut port_of_link: Vec<Option<usize>> = vec![None; links.len()];
        let mut port_vcs: Vec<Vec<VcId>> = Vec::new();
        let mut port_links: Vec<usize> = Vec::new();
        let mut vcs = Vec::with_capacity(scenario.vcs.len());
        for (v, vc) in scenario.vcs.iter().enumerate() {
            let mut hops = Vec::with_capacity(vc.route.len() - 1);
            for l in scenario.vc_links(vc) {
                let li = link_index(&l.id);
                let port = if scenario.switch(&l.from).is_some() {
                    let p = *port_of_link[li].get_or_insert_with(|| {
                        port_vcs.push(Vec::new());
                        port_links.push(li);
                        port_vcs.len() - 1
                    });
                    port_vcs[p].push(VcId(v as u32));
                    Some((p, port_vcs[p].len() - 1))
                } else {
                    None
                };
                hops.push(Hop { link: li, port });
            }
            vcs.push(VcRt {
                hops,
                start: vc.start_time_s,
                stop: vc.stop_time_s.unwrap_or(f64::INFINITY),
                generation: 0,
            });
        }

        let ports: Vec<PortState> = port_links
            .iter()
            .zip(port_vcs)
            .map(|(&li, members)| {
                let spec = &scenario.links[li];
                let sw = scenario.switch(&spec.from).unwrap();
                PortState::new(
                    spec.id.clone(),
                    sw.algorithm,
                    spec.bandwidth_mbps,
                    sw.target_utilization,
                    sw.vbr_cbr_usage_mbps,
                    sw.delta,
                    members,
                )
            })
            .collect();

        let sources = scenario
            .vcs
            .iter()
            .enumerate()
            .map(|(v, vc)| {
                SourceState::new(
                    VcId(v as u32),
                    vc.icr_mbps,
                    vc.pcr_mbps,
                    vc.rif,
                    vc.app_cap_mbps,
                    scenario.nrm,
                    vc.start_time_s,
                )
            })
            .collect();

        let trace = TraceSet {
            vcs: scenario
                .vcs
                .iter()
                .map(|vc| VcInfo {
                    id: vc.id.clone(),
                    app_cap_mbps: vc.app_cap_mbps,
                    rtt_s: scenario.rtt_s(vc),
                })
                .collect(),
            port_ids: ports.iter().map(|p| p.port_id.clone()).collect(),
            acr: Vec::new(),
            ports: Vec::new(),
            faults: Vec::new(),
            end_time_s: scenario.sim_duration_s,
        };

        Ok(Self {
            now: 0.0,
            duration: scenario.sim_duration_s,
            interval_cells: scenario.interval_cells,
            interval_max: scenario.interval_max_s,
            queue: EventQueue::default(),
            links,
            ports,
            sources,
            vcs,
            vc_ids: scenario.vcs.iter().map(|v| v.id.clone()).collect(),
            trace,
            stats: SimStats::default(),
            observer: Box::new(NoObserver),
        })
    }

    pub fn with_observer(mut self, observer: impl SimObserver + 'o) -> Self {
        self.observer = Box::new(observer);
        self
    }

    pub fn ports(&self) -> &[PortState] {
        &self.ports
    }

    pub fn sources(&self) -> &[SourceState] {
        &self.sources
    }

    pub fn run(mut self) -> RunOutput {
        for p in 0..self.ports.len() {
            self.queue.push(self.interval_max, EventKind::IntervalEnd { port: p, generation: 0 });
        }
        for v in 0..self.vcs.len() {
            let start = self.vcs[v].start;
            if start <= self.duration {
                self.queue.push(start, EventKind::SourceSend { vc: v, generation: 0 });
                self.record_acr(v, start);
            }
        }

        while let Some(t) = self.queue.peek_time() {
            if t > self.duration {
                break;
            }
            let event = self.queue.pop().unwrap();
            self.now = event.time;
            self.stats.events += 1;
            match event.kind {
                EventKind::SourceSend { vc, generation } => self.on_source_send(vc, generation),
                EventKind::CellArrival { cell } => {
                    if cell.is_backward() {
                        self.on_backward_arrival(cell)
                    } else {
                        self.on_forward_arrival(cell)
                    }
                }
                EventKind::CellDeparture { port } => self.on_departure(port),
                EventKind::IntervalEnd { port, generation } => {
                    if generation == self.ports[port].interval_generation {
                        self.close_interval(port);
                    }
                }
            }
        }

        self.stats.cells_in_flight = self
            .queue
            .iter()
            .filter(|e| matches!(&e.kind, EventKind::CellArrival { cell } if !cell.is_backward()))
            .count() as u64;
        self.stats.cells_queued = self.ports.iter().map(|p| p.queue.len() as u64).sum();
        RunOutput {
            trace: self.trace,
            stats: self.stats,
        }
    }

    fn record_acr(&mut self, vc: usize, time: f64) {
        self.trace.acr.push(AcrSample {
            time_s: time,
            vc_id: self.vc_ids[vc].clone(),
            acr_mbps: self.sources[vc].acr,
        });
    }

    fn on_source_send(&mut self, vc: usize, generation: u64) {
        if generation != self.vcs[vc].generation || self.now >= self.vcs[vc].stop {
            return;
        }
        let emission = self.sources[vc].emit(self.now);
        let source = &self.sources[vc];
        self.observer.emitted(vc, self.now, source.acr, source.send_rate());
        self.stats.cells_emitted += 1;
        if matches!(emission.payload, Payload::Rm(_)) {
            self.stats.frms_emitted += 1;
        }
        let first = self.vcs[vc].hops[0].link;
        let arrive = self.now + cell_time_s(self.links[first].bandwidth) + self.links[first].delay;
        self.queue.push(
            arrive,
            EventKind::CellArrival {
                cell: Cell {
                    vc,
                    hop: 0,
                    payload: emission.payload,
                },
            },
        );
        if emission.next_send_time.is_finite() {
            self.queue
                .push(emission.next_send_time, EventKind::SourceSend { vc, generation });
        }
    }

    fn on_forward_arrival(&mut self, cell: Cell) {
        let vc = cell.vc;
        let next_hop = cell.hop + 1;
        if next_hop == self.vcs[vc].hops.len() {
            self.stats.cells_delivered += 1;
            if let Payload::Rm(rm) = cell.payload {
                // Immediate turnaround at the destination.
                let brm = RmCell {
                    direction: Direction::Backward,
                    ..rm
                };
                self.send_backward(vc, cell.hop, brm);
            }
            return;
        }
        let (port, local) = self.vcs[vc].hops[next_hop]
            .port
            .expect("interior route nodes are switches");
        let link = self.vcs[vc].hops[next_hop].link;
        let cell = Cell { hop: next_hop, ..cell };
        let full = self.ports[port].accept(cell, local, self.interval_cells);
        if !self.ports[port].busy {
            self.ports[port].busy = true;
            self.queue
                .push(self.now + cell_time_s(self.links[link].bandwidth), EventKind::CellDeparture { port });
        }
        if full {
            self.close_interval(port);
        }
    }

    /// Puts a backward RM cell on link `hop` of the VC's route, headed for
    /// `route[hop]`.
    fn send_backward(&mut self, vc: usize, hop: usize, rm: RmCell) {
        let delay = self.links[self.vcs[vc].hops[hop].link].delay;
        self.queue.push(
            self.now + delay,
            EventKind::CellArrival {
                cell: Cell {
                    vc,
                    hop,
                    payload: Payload::Rm(rm),
                },
            },
        );
    }

    fn on_backward_arrival(&mut self, cell: Cell) {
        let Payload::Rm(mut rm) = cell.payload else {
            unreachable!("only RM cells travel backward")
        };
        let vc = cell.vc;
        if cell.hop == 0 {
            self.stats.brms_received += 1;
            self.observer.returned(vc, self.now, rm.er);
            self.sources[vc].receive_brm(&rm);
            self.record_acr(vc, self.now);
            if let Some(t) = self.sources[vc].rescheduled_send(self.now) {
                let state = &mut self.vcs[vc];
                state.generation += 1;
                self.sources[vc].next_send_time = t;
                let generation = state.generation;
                self.queue.push(t, EventKind::SourceSend { vc, generation });
            }
            return;
        }
        // route[hop] is a switch; its forward port for this VC is hops[hop].
        let (port, local) = self.vcs[vc].hops[cell.hop]
            .port
            .expect("interior route nodes are switches");
        let before = rm.er;
        rm.er = rm.er.min(self.ports[port].er_for(local));
        self.observer.stamped(vc, cell.hop, before, rm.er);
        self.send_backward(vc, cell.hop - 1, rm);
    }

    fn on_departure(&mut self, port: usize) {
        let cell = self.ports[port]
            .queue
            .pop_front()
            .expect("departure from a busy port");
        let link = self.vcs[cell.vc].hops[cell.hop].link;
        self.queue
            .push(self.now + self.links[link].delay, EventKind::CellArrival { cell });
        if self.ports[port].queue.is_empty() {
            self.ports[port].busy = false;
        } else {
            self.queue
                .push(self.now + cell_time_s(self.links[link].bandwidth), EventKind::CellDeparture { port });
        }
    }

    fn close_interval(&mut self, port: usize) {
        let now = self.now;
        let report = self.ports[port].close_interval(now);
        let p = &self.ports[port];
        match report.result {
            Ok(d) => self.trace.ports.push(PortSample {
                time_s: now,
                port_id: p.port_id.clone(),
                z: d.load_factor,
                n_eff: d.n_eff,
                fair_share_mbps: d.fair_share,
                queue_cells: p.queue.len() as u64,
            }),
            Err(e) => self.trace.faults.push(AllocatorFault {
                time_s: now,
                port_id: p.port_id.clone(),
                message: e.to_string(),
            }),
        }
        let generation = p.interval_generation;
        self.queue
            .push(now + self.interval_max, EventKind::IntervalEnd { port, generation });
    }
}

/// Runs a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<RunOutput, SimError> {
    Ok(Simulation::new(scenario)?.run())
}

impl<O: SimObserver + ?Sized> SimObserver for &mut O {
    fn emitted(&mut self, vc: usize, time: f64, acr: f64, send_rate: f64) {
        (**self).emitted(vc, time, acr, send_rate)
    }

    fn stamped(&mut self, vc: usize, hop: usize, er_before: f64, er_after: f64) {
        (**self).stamped(vc, hop, er_before, er_after)
    }

    fn returned(&mut self, vc: usize, time: f64, er: f64) {
        (**self).returned(vc, time, er)
    }
}
