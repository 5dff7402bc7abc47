//! Scenario files and the two built-in configurations.
//!
//! A scenario is a TOML document with units spelled out in key names:
//!
//! ```toml
//! name = "example"
//! sim_duration_s = 0.4
//!
//! [[link]]
//! id = "SW1-SW2"
//! from = "SW1"
//! to = "SW2"
//! bandwidth_mbps = 155.52
//! length_km = 1000.0
//!
//! [[switch]]
//! id = "SW1"
//! algorithm = "erica-neff-measured"
//! target_utilization = 0.9
//!
//! [[vc]]
//! id = "S1"
//! route = ["S1", "SW1", "SW2", "D1"]
//! icr_mbps = 10.0
//! pcr_mbps = 155.52
//! ```
//!
//! Unknown keys are rejected. Every output port of a switch (one per link
//! leaving it) runs the switch's algorithm. The first and last node of a
//! route are the VC's source and destination; every node in between must be a
//! declared switch, and every hop must be a declared link.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maxmin::AllocationProblem;
use crate::ratealloc::{compute_abr_capacity, Algorithm, DEFAULT_DELTA};

pub const DEFAULT_NRM: u32 = 32;
pub const DEFAULT_INTERVAL_CELLS: u32 = 100;
pub const DEFAULT_INTERVAL_MAX_S: f64 = 1e-3;
pub const DEFAULT_PROPAGATION_US_PER_KM: f64 = 5.0;

const FIG2_TEXT: &str = include_str!("../scenarios/fig2.scn");
const FIG3_TEXT: &str = include_str!("../scenarios/fig3.scn");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("ParseError at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("ParseError: cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("ValidationError: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation(msg.into())
}

fn default_nrm() -> u32 {
    DEFAULT_NRM
}
fn default_interval_cells() -> u32 {
    DEFAULT_INTERVAL_CELLS
}
fn default_interval_max_s() -> f64 {
    DEFAULT_INTERVAL_MAX_S
}
fn default_propagation() -> f64 {
    DEFAULT_PROPAGATION_US_PER_KM
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_rif() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub bandwidth_mbps: f64,
    pub length_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSpec {
    pub id: String,
    pub algorithm: Algorithm,
    pub target_utilization: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub vbr_cbr_usage_mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VcSpec {
    pub id: String,
    pub route: Vec<String>,
    pub icr_mbps: f64,
    pub pcr_mbps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_cap_mbps: Option<f64>,
    #[serde(default = "default_rif")]
    pub rif: f64,
    #[serde(default)]
    pub start_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_time_s: Option<f64>,
}

impl VcSpec {
    /// Ceiling on what the source can ever send.
    pub fn send_ceiling_mbps(&self) -> f64 {
        self.app_cap_mbps.map_or(self.pcr_mbps, |c| c.min(self.pcr_mbps))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub sim_duration_s: f64,
    /// One forward RM cell every `nrm` cells.
    #[serde(default = "default_nrm")]
    pub nrm: u32,
    #[serde(default = "default_interval_cells")]
    pub interval_cells: u32,
    #[serde(default = "default_interval_max_s")]
    pub interval_max_s: f64,
    #[serde(default = "default_propagation")]
    pub propagation_us_per_km: f64,
    #[serde(rename = "link", default)]
    pub links: Vec<LinkSpec>,
    #[serde(rename = "switch", default)]
    pub switches: Vec<SwitchSpec>,
    #[serde(rename = "vc", default)]
    pub vcs: Vec<VcSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    /// 17 VCs: S1..S15 share link 1, then S1, S16 and S17 share link 2.
    Fig2Upstream,
    /// Three sources on a common bottleneck, S1 application-limited to 10 Mbps.
    Fig3ThreeSource,
}

impl Builtin {
    pub const ALL: [Builtin; 2] = [Builtin::Fig2Upstream, Builtin::Fig3ThreeSource];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Fig2Upstream => "fig2",
            Builtin::Fig3ThreeSource => "fig3",
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            Builtin::Fig2Upstream => FIG2_TEXT,
            Builtin::Fig3ThreeSource => FIG3_TEXT,
        }
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Builtin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Builtin::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown builtin `{s}` (expected fig2 or fig3)"))
    }
}

pub fn builtin(which: Builtin) -> Scenario {
    parse_scenario(which.text()).expect("built-in scenario is valid")
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ScenarioError::Parse {
            line,
            column,
            message: e.message().trim().to_owned(),
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_scenario(&text)
}

/// Serializes back to the scenario format; the inverse of [`parse_scenario`].
pub fn render_scenario(scenario: &Scenario) -> String {
    toml::to_string(scenario).expect("scenario serializes")
}

fn positive_finite(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !positive_finite(self.sim_duration_s) {
            return Err(invalid("sim_duration_s must be positive"));
        }
        if self.nrm == 0 {
            return Err(invalid("nrm must be at least 1"));
        }
        if self.interval_cells == 0 {
            return Err(invalid("interval_cells must be at least 1"));
        }
        if !positive_finite(self.interval_max_s) {
            return Err(invalid("interval_max_s must be positive"));
        }
        if !(self.propagation_us_per_km.is_finite() && self.propagation_us_per_km >= 0.0) {
            return Err(invalid("propagation_us_per_km must be non-negative"));
        }

        let mut link_ids = HashSet::new();
        let mut hops = HashSet::new();
        for l in &self.links {
            if !link_ids.insert(l.id.as_str()) {
                return Err(invalid(format!("duplicate link id `{}`", l.id)));
            }
            if l.from == l.to {
                return Err(invalid(format!("link `{}` is a self-loop", l.id)));
            }
            if !hops.insert((l.from.as_str(), l.to.as_str())) {
                return Err(invalid(format!("duplicate link {} -> {}", l.from, l.to)));
            }
            if !positive_finite(l.bandwidth_mbps) {
                return Err(invalid(format!("link `{}` bandwidth_mbps must be positive", l.id)));
            }
            if !(l.length_km.is_finite() && l.length_km >= 0.0) {
                return Err(invalid(format!("link `{}` length_km must be non-negative", l.id)));
            }
        }

        let mut switch_ids = HashSet::new();
        for s in &self.switches {
            if !switch_ids.insert(s.id.as_str()) {
                return Err(invalid(format!("duplicate switch id `{}`", s.id)));
            }
            if !(s.target_utilization > 0.0 && s.target_utilization <= 1.0) {
                return Err(invalid(format!(
                    "switch `{}` target_utilization must lie in (0, 1]",
                    s.id
                )));
            }
            if !(s.delta.is_finite() && s.delta >= 0.0) {
                return Err(invalid(format!("switch `{}` delta must be non-negative", s.id)));
            }
            if !(s.vbr_cbr_usage_mbps.is_finite() && s.vbr_cbr_usage_mbps >= 0.0) {
                return Err(invalid(format!("switch `{}` vbr_cbr_usage_mbps must be non-negative", s.id)));
            }
        }

        if self.vcs.is_empty() {
            return Err(invalid("scenario declares no vc"));
        }
        let mut vc_ids = HashSet::new();
        for vc in &self.vcs {
            if !vc_ids.insert(vc.id.as_str()) {
                return Err(invalid(format!("duplicate vc id `{}`", vc.id)));
            }
            if vc.route.len() < 2 {
                return Err(invalid(format!("vc `{}` route needs a source and a destination", vc.id)));
            }
            let mut seen = HashSet::new();
            for node in &vc.route {
                if !seen.insert(node.as_str()) {
                    return Err(invalid(format!("vc `{}` route visits `{node}` twice", vc.id)));
                }
            }
            for pair in vc.route.windows(2) {
                if !hops.contains(&(pair[0].as_str(), pair[1].as_str())) {
                    return Err(invalid(format!(
                        "vc `{}` routes through undeclared link {} -> {}",
                        vc.id, pair[0], pair[1]
                    )));
                }
            }
            let last = vc.route.len() - 1;
            for (i, node) in vc.route.iter().enumerate() {
                let is_switch = switch_ids.contains(node.as_str());
                if (i == 0 || i == last) && is_switch {
                    return Err(invalid(format!("vc `{}` endpoint `{node}` is a switch", vc.id)));
                }
                if i != 0 && i != last && !is_switch {
                    return Err(invalid(format!(
                        "vc `{}` passes through `{node}` which is not a declared switch",
                        vc.id
                    )));
                }
            }
            if !positive_finite(vc.pcr_mbps) {
                return Err(invalid(format!("vc `{}` pcr_mbps must be positive", vc.id)));
            }
            if !positive_finite(vc.icr_mbps) {
                return Err(invalid(format!("vc `{}` icr_mbps must be positive", vc.id)));
            }
            if vc.icr_mbps > vc.pcr_mbps {
                return Err(invalid(format!("vc `{}` has icr_mbps > pcr_mbps", vc.id)));
            }
            if vc.app_cap_mbps.is_some_and(|c| !positive_finite(c)) {
                return Err(invalid(format!("vc `{}` app_cap_mbps must be positive", vc.id)));
            }
            if !(vc.rif > 0.0 && vc.rif <= 1.0) {
                return Err(invalid(format!("vc `{}` rif must lie in (0, 1]", vc.id)));
            }
            if !(vc.start_time_s.is_finite() && vc.start_time_s >= 0.0) {
                return Err(invalid(format!("vc `{}` start_time_s must be non-negative", vc.id)));
            }
            if vc.stop_time_s.is_some_and(|t| !(t.is_finite() && t > vc.start_time_s)) {
                return Err(invalid(format!("vc `{}` stop_time_s must follow start_time_s", vc.id)));
            }
        }
        Ok(())
    }

    pub fn switch(&self, id: &str) -> Option<&SwitchSpec> {
        self.switches.iter().find(|s| s.id == id)
    }

    pub fn link_between(&self, from: &str, to: &str) -> Option<&LinkSpec> {
        self.links.iter().find(|l| l.from == from && l.to == to)
    }

    /// Links traversed by a VC, in order.
    pub fn vc_links(&self, vc: &VcSpec) -> Vec<&LinkSpec> {
        vc.route
            .windows(2)
            .map(|p| self.link_between(&p[0], &p[1]).expect("validated route"))
            .collect()
    }

    pub fn propagation_delay_s(&self, link: &LinkSpec) -> f64 {
        link.length_km * self.propagation_us_per_km * 1e-6
    }

    /// Round-trip propagation time of a VC's path.
    pub fn rtt_s(&self, vc: &VcSpec) -> f64 {
        2.0 * self
            .vc_links(vc)
            .into_iter()
            .map(|l| self.propagation_delay_s(l))
            .sum::<f64>()
    }

    /// Every switch now runs `algorithm`.
    pub fn with_algorithm(mut self, algorithm: Algorithm) -> Self {
        for s in &mut self.switches {
            s.algorithm = algorithm;
        }
        self
    }

    pub fn with_duration(mut self, sim_duration_s: f64) -> Self {
        self.sim_duration_s = sim_duration_s;
        self
    }

    /// ABR capacity a switch port offers on `link`, or `None` when the link
    /// does not leave a switch.
    pub fn port_capacity_mbps(&self, link: &LinkSpec) -> Option<f64> {
        self.switch(&link.from)
            .map(|s| compute_abr_capacity(link.bandwidth_mbps, s.target_utilization, s.vbr_cbr_usage_mbps))
    }

    /// The max-min problem the switches are trying to solve. Switch ports
    /// offer their ABR capacity (or `abr_capacity_override`); links leaving a
    /// source offer raw bandwidth; sources are capped at min(PCR, app cap).
    pub fn oracle_problem(&self, abr_capacity_override: Option<f64>) -> AllocationProblem<f64> {
        let mut problem = AllocationProblem::new();
        let mut used: HashMap<&str, ()> = HashMap::new();
        for vc in &self.vcs {
            for l in self.vc_links(vc) {
                used.insert(l.id.as_str(), ());
            }
        }
        for l in self.links.iter().filter(|l| used.contains_key(l.id.as_str())) {
            let capacity = match self.port_capacity_mbps(l) {
                Some(c) => abr_capacity_override.unwrap_or(c),
                None => l.bandwidth_mbps,
            };
            problem = problem.link(l.id.clone(), capacity);
        }
        for vc in &self.vcs {
            let route: Vec<String> = self.vc_links(vc).into_iter().map(|l| l.id.clone()).collect();
            problem = problem.flow(vc.id.clone(), route, Some(vc.send_ceiling_mbps()));
        }
        problem
    }
}
