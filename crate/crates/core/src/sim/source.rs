use crate::ratealloc::VcId;

use super::{cell_time_s, Direction, Payload, RmCell};

/// An ABR source. Sends at min(ACR, app cap); every `nrm`-th cell is a
/// forward RM cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceState {
    pub vc_id: VcId,
    pub acr: f64,
    pub icr: f64,
    pub pcr: f64,
    pub rif: f64,
    pub app_cap: Option<f64>,
    pub nrm: u32,
    pub cells_sent: u64,
    pub cells_since_last_frm: u32,
    pub next_send_time: f64,
    pub last_send_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub payload: Payload,
    /// Infinite when the send rate is zero.
    pub next_send_time: f64,
}

impl SourceState {
    pub fn new(vc_id: VcId, icr: f64, pcr: f64, rif: f64, app_cap: Option<f64>, nrm: u32, start_time: f64) -> Self {
        Self {
            vc_id,
            acr: icr,
            icr,
            pcr,
            rif,
            app_cap,
            nrm,
            cells_sent: 0,
            cells_since_last_frm: 0,
            next_send_time: start_time,
            last_send_time: None,
        }
    }

    pub fn send_rate(&self) -> f64 {
        self.app_cap.map_or(self.acr, |c| self.acr.min(c))
    }

    fn gap_s(&self) -> f64 {
        let rate = self.send_rate();
        if rate > 0.0 {
            cell_time_s(rate)
        } else {
            f64::INFINITY
        }
    }

    /// Emits the cell due at `now`.
    pub fn emit(&mut self, now: f64) -> Emission {
        self.cells_sent += 1;
        self.cells_since_last_frm += 1;
        let payload = if self.cells_since_last_frm == self.nrm {
            self.cells_since_last_frm = 0;
            Payload::Rm(RmCell {
                vc_id: self.vc_id,
                direction: Direction::Forward,
                ccr: self.acr,
                er: self.pcr,
                timestamp_sent: now,
            })
        } else {
            Payload::Data
        };
        self.last_send_time = Some(now);
        self.next_send_time = now + self.gap_s();
        Emission {
            payload,
            next_send_time: self.next_send_time,
        }
    }

    /// Applies a backward RM cell. With RIF = 1 the ACR jumps straight to the
    /// returned ER; otherwise increases are limited to RIF x PCR per cell.
    /// Returns the new ACR.
    pub fn receive_brm(&mut self, cell: &RmCell) -> f64 {
        debug_assert_eq!(cell.direction, Direction::Backward);
        debug_assert_eq!(cell.vc_id, self.vc_id);
        let target = if self.rif >= 1.0 {
            cell.er
        } else {
            (self.acr + self.rif * self.pcr).min(cell.er)
        };
        self.acr = target.min(self.pcr).max(0.0);
        self.acr
    }

    /// Earlier send time implied by a rate increase, if any.
    pub fn rescheduled_send(&self, now: f64) -> Option<f64> {
        let last = self.last_send_time?;
        let candidate = (last + self.gap_s()).max(now);
        (candidate < self.next_send_time).then_some(candidate)
    }
}
