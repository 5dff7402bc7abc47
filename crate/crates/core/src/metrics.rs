//! Traces produced by a run, steady-state summaries, fairness indices and the
//! CSV trace format.
//!
//! `acr.csv` has columns `time_s,vc_id,acr_mbps`; `port.csv` has
//! `time_s,port_id,z,n_eff,fair_share_mbps,queue_cells`. Both carry a header
//! row and are ordered by time.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("EmptyWindow: {0}")]
    EmptyWindow(String),
    #[error("AllZero: fairness index needs at least one positive value")]
    AllZero,
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

/// ACR of one source right after a change (and once at start).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcrSample {
    pub time_s: f64,
    pub vc_id: String,
    pub acr_mbps: f64,
}

/// Port quantities at the close of a measurement interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortSample {
    pub time_s: f64,
    pub port_id: String,
    pub z: f64,
    pub n_eff: f64,
    pub fair_share_mbps: f64,
    pub queue_cells: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceRow<'a> {
    Acr(&'a AcrSample),
    Port(&'a PortSample),
}

impl TraceRow<'_> {
    pub fn time_s(&self) -> f64 {
        match self {
            TraceRow::Acr(a) => a.time_s,
            TraceRow::Port(p) => p.time_s,
        }
    }
}

/// An interval whose allocator call failed; the port kept its previous
/// decision.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocatorFault {
    pub time_s: f64,
    pub port_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VcInfo {
    pub id: String,
    /// Application send ceiling, when the source is application-limited.
    pub app_cap_mbps: Option<f64>,
    pub rtt_s: f64,
}

impl VcInfo {
    pub fn send_rate(&self, acr: f64) -> f64 {
        self.app_cap_mbps.map_or(acr, |c| acr.min(c))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceSet {
    pub vcs: Vec<VcInfo>,
    pub port_ids: Vec<String>,
    pub acr: Vec<AcrSample>,
    pub ports: Vec<PortSample>,
    pub faults: Vec<AllocatorFault>,
    pub end_time_s: f64,
}

impl TraceSet {
    /// All samples merged in time order (ACR before port rows on ties).
    pub fn rows(&self) -> Vec<TraceRow<'_>> {
        let mut rows: Vec<TraceRow<'_>> = self
            .acr
            .iter()
            .map(TraceRow::Acr)
            .chain(self.ports.iter().map(TraceRow::Port))
            .collect();
        rows.sort_by(|a, b| a.time_s().total_cmp(&b.time_s()));
        rows
    }

    pub fn acr_of<'a>(&'a self, vc_id: &'a str) -> impl Iterator<Item = &'a AcrSample> + 'a {
        self.acr.iter().filter(move |s| s.vc_id == vc_id)
    }

    pub fn port_of<'a>(&'a self, port_id: &'a str) -> impl Iterator<Item = &'a PortSample> + 'a {
        self.ports.iter().filter(move |s| s.port_id == port_id)
    }

    /// ACR in force at `t` (step function), if the source had started.
    pub fn acr_at(&self, vc_id: &str, t: f64) -> Option<f64> {
        self.acr_of(vc_id).take_while(|s| s.time_s <= t).last().map(|s| s.acr_mbps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VcSummary {
    pub vc_id: String,
    pub mean_acr_mbps: f64,
    /// Mean of min(ACR, app cap): what the source actually sends.
    pub mean_send_rate_mbps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortSummary {
    pub port_id: String,
    pub mean_z: f64,
    pub mean_n_eff: f64,
    pub mean_fair_share_mbps: f64,
    pub max_queue_cells: u64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub window_start_s: f64,
    pub window_end_s: f64,
    pub vcs: Vec<VcSummary>,
    pub ports: Vec<PortSummary>,
}

impl Summary {
    pub fn vc(&self, id: &str) -> Option<&VcSummary> {
        self.vcs.iter().find(|v| v.vc_id == id)
    }

    pub fn port(&self, id: &str) -> Option<&PortSummary> {
        self.ports.iter().find(|p| p.port_id == id)
    }
}

/// Time-weighted mean of a step function over `[t0, t1]`. `steps` must be
/// time-ordered; the first step must start at or before `t0`.
fn step_mean(steps: &[(f64, f64)], t0: f64, t1: f64) -> Option<f64> {
    let first = steps.iter().rposition(|&(t, _)| t <= t0)?;
    if t1 <= t0 {
        return Some(steps[first].1);
    }
    let mut area = 0.0;
    for (i, &(t, v)) in steps.iter().enumerate().skip(first) {
        if t >= t1 {
            break;
        }
        let from = t.max(t0);
        let to = steps.get(i + 1).map_or(t1, |n| n.0.min(t1));
        area += v * (to - from);
    }
    Some(area / (t1 - t0))
}

/// Means over the trailing `window_fraction` of the run. ACRs are averaged
/// over time (they are step functions); port quantities over the interval
/// samples that close inside the window.
pub fn steady_state_summary(trace: &TraceSet, window_fraction: f64) -> Result<Summary, MetricsError> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(MetricsError::EmptyWindow(format!(
            "window fraction {window_fraction} outside (0, 1]"
        )));
    }
    let t1 = trace.end_time_s;
    let t0 = t1 - window_fraction * t1;

    let mut vcs = Vec::with_capacity(trace.vcs.len());
    for info in &trace.vcs {
        let acr: Vec<(f64, f64)> = trace.acr_of(&info.id).map(|s| (s.time_s, s.acr_mbps)).collect();
        let send: Vec<(f64, f64)> = acr.iter().map(|&(t, a)| (t, info.send_rate(a))).collect();
        let empty = || MetricsError::EmptyWindow(format!("vc {} has no ACR before {t0}", info.id));
        vcs.push(VcSummary {
            vc_id: info.id.clone(),
            mean_acr_mbps: step_mean(&acr, t0, t1).ok_or_else(empty)?,
            mean_send_rate_mbps: step_mean(&send, t0, t1).ok_or_else(empty)?,
        });
    }

    let mut ports = Vec::with_capacity(trace.port_ids.len());
    for id in &trace.port_ids {
        let window: Vec<&PortSample> = trace.port_of(id).filter(|s| s.time_s >= t0).collect();
        if window.is_empty() {
            return Err(MetricsError::EmptyWindow(format!("port {id} has no samples after {t0}")));
        }
        let n = window.len() as f64;
        ports.push(PortSummary {
            port_id: id.clone(),
            mean_z: window.iter().map(|s| s.z).sum::<f64>() / n,
            mean_n_eff: window.iter().map(|s| s.n_eff).sum::<f64>() / n,
            mean_fair_share_mbps: window.iter().map(|s| s.fair_share_mbps).sum::<f64>() / n,
            max_queue_cells: window.iter().map(|s| s.queue_cells).max().unwrap_or(0),
            samples: window.len(),
        });
    }
    Ok(Summary {
        window_start_s: t0,
        window_end_s: t1,
        vcs,
        ports,
    })
}

/// `(sum x)^2 / (n * sum x^2)`.
pub fn jain_fairness_index<T: Scalar>(values: &[T]) -> Result<T, MetricsError> {
    let (sum, sum_sq) = values
        .iter()
        .fold((T::zero(), T::zero()), |(s, q), &x| (s + x, q + x * x));
    if !(sum_sq > T::zero()) {
        return Err(MetricsError::AllZero);
    }
    Ok(sum * sum / (T::from_count(values.len()) * sum_sq))
}

/// Shortest round-trip decimal, padded with zeros to at least 9 significant
/// digits.
pub fn format_value(v: f64) -> String {
    let mut s = format!("{v}");
    if !v.is_finite() {
        return s;
    }
    let digits: String = s.chars().filter(|c| c.is_ascii_digit()).collect();
    let significant = digits.trim_start_matches('0').len().max(1);
    if significant < 9 {
        if !s.contains('.') {
            s.push('.');
        }
        s.extend(std::iter::repeat_n('0', 9 - significant));
    }
    s
}

pub const ACR_CSV: &str = "acr.csv";
pub const PORT_CSV: &str = "port.csv";

/// Writes `acr.csv` and `port.csv` into `dir`, creating it if needed.
pub fn write_csv(trace: &TraceSet, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf), MetricsError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let acr_path = dir.join(ACR_CSV);
    let mut w = csv::Writer::from_path(&acr_path)?;
    w.write_record(["time_s", "vc_id", "acr_mbps"])?;
    for s in &trace.acr {
        w.write_record([format_value(s.time_s), s.vc_id.clone(), format_value(s.acr_mbps)])?;
    }
    w.flush()?;

    let port_path = dir.join(PORT_CSV);
    let mut w = csv::Writer::from_path(&port_path)?;
    w.write_record(["time_s", "port_id", "z", "n_eff", "fair_share_mbps", "queue_cells"])?;
    for s in &trace.ports {
        w.write_record([
            format_value(s.time_s),
            s.port_id.clone(),
            format_value(s.z),
            format_value(s.n_eff),
            format_value(s.fair_share_mbps),
            s.queue_cells.to_string(),
        ])?;
    }
    w.flush()?;
    Ok((acr_path, port_path))
}

/// Samples read back from a directory written by [`write_csv`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTrace {
    pub acr: Vec<AcrSample>,
    pub ports: Vec<PortSample>,
}

pub fn read_csv(dir: impl AsRef<Path>) -> Result<CsvTrace, MetricsError> {
    let dir = dir.as_ref();
    let acr = csv::Reader::from_path(dir.join(ACR_CSV))?
        .deserialize()
        .collect::<Result<_, _>>()?;
    let ports = csv::Reader::from_path(dir.join(PORT_CSV))?
        .deserialize()
        .collect::<Result<_, _>>()?;
    Ok(CsvTrace { acr, ports })
}
