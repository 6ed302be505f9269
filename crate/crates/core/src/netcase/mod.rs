//! Per-unit network model and MATPOWER case loading.
//!
//! A [`Network`] is built once (normally by [`parse_matpower`]) and then only
//! read. All electrical quantities are per-unit on `base_mva`; angles are in
//! radians; generator costs keep their MATPOWER meaning ($/h as a polynomial
//! in MW) and are converted on evaluation.

mod matpower;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matpower::parse_matpower;

/// Angle-difference limit applied when a case leaves it unbounded (0 or ±360°).
pub const DEFAULT_ANGLE_LIMIT_DEG: f64 = 30.0;

/// Series impedance substituted for lines recorded with r = x = 0.
const MIN_SERIES_REACTANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("malformed case: {0}")]
    MalformedCase(String),
    #[error("unsupported generator cost in row {row}: {reason}")]
    UnsupportedCost { row: usize, reason: String },
    #[error("no reference (slack) bus in case")]
    NoSlackBus,
    #[error("{kind} {index} references unknown bus {bus}")]
    DanglingReference {
        kind: &'static str,
        index: usize,
        bus: u32,
    },
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// External bus number from the case file.
    pub id: u32,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    pub g_shunt: f64,
    pub b_shunt: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Bus {
    pub fn has_load(&self) -> bool {
        self.p_load != 0.0 || self.q_load != 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    /// Internal index of the from bus.
    pub from: usize,
    /// Internal index of the to bus.
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance.
    pub charging: f64,
    /// Off-nominal tap ratio (1 for plain lines).
    pub tap: f64,
    /// Phase shift in radians.
    pub shift: f64,
    /// Apparent-power rating at each end; `None` means unlimited.
    pub s_max: Option<f64>,
    pub angle_min: f64,
    pub angle_max: f64,
}

impl Line {
    /// Series admittance `(g, b)` with `g + jb = 1 / (r + jx)`.
    pub fn series_admittance(&self) -> (f64, f64) {
        let (r, x) = if self.r == 0.0 && self.x == 0.0 {
            (0.0, MIN_SERIES_REACTANCE)
        } else {
            (self.r, self.x)
        };
        let d = r * r + x * x;
        (r / d, -x / d)
    }
}

/// Polynomial cost `c2·P² + c1·P + c0` in $/h with `P` in MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenCost {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl GenCost {
    pub fn eval(&self, p_pu: f64, base_mva: f64) -> f64 {
        let p = p_pu * base_mva;
        (self.c2 * p + self.c1) * p + self.c0
    }

    /// Derivative with respect to the per-unit output.
    pub fn derivative(&self, p_pu: f64, base_mva: f64) -> f64 {
        (2.0 * self.c2 * p_pu * base_mva + self.c1) * base_mva
    }

    /// Second derivative with respect to the per-unit output.
    pub fn curvature(&self, base_mva: f64) -> f64 {
        2.0 * self.c2 * base_mva * base_mva
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// Internal bus index.
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Voltage set point recorded in the case (used only for initialization).
    pub v_set: f64,
    pub cost: GenCost,
}

impl Generator {
    /// A unit with a non-degenerate real-power range takes part in recourse.
    pub fn is_dispatchable(&self) -> bool {
        self.p_max > self.p_min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub slack: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    IsolatedBus(u32),
    ZeroImpedanceLine(usize),
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::IsolatedBus(id) => write!(f, "isolated bus {id}"),
            Warning::ZeroImpedanceLine(k) => {
                write!(f, "zero-impedance line {k} (modelled with x = {MIN_SERIES_REACTANCE})")
            }
        }
    }
}

impl Network {
    /// Assembles a network and checks every model invariant.
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        generators: Vec<Generator>,
        slack: usize,
    ) -> Result<Self, CaseError> {
        let net = Network {
            base_mva,
            buses,
            lines,
            generators,
            slack,
        };
        validate(&net)?;
        Ok(net)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn load_count(&self) -> usize {
        self.buses.iter().filter(|b| b.has_load()).count()
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Generator indices attached to each bus.
    pub fn bus_generators(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.buses.len()];
        for (g, gen) in self.generators.iter().enumerate() {
            out[gen.bus].push(g);
        }
        out
    }

    /// Buses whose voltage magnitude is a set point (PV and slack), ascending.
    pub fn controlled_buses(&self) -> Vec<usize> {
        (0..self.buses.len())
            .filter(|&i| self.buses[i].kind != BusKind::Pq)
            .collect()
    }

    /// Number of distinct neighbouring buses.
    pub fn degrees(&self) -> Vec<usize> {
        let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); self.buses.len()];
        for l in &self.lines {
            nbrs[l.from].push(l.to);
            nbrs[l.to].push(l.from);
        }
        nbrs.into_iter()
            .map(|mut v| {
                v.sort_unstable();
                v.dedup();
                v.len()
            })
            .collect()
    }

    pub fn total_cost(&self, p: &[f64]) -> f64 {
        self.generators
            .iter()
            .zip(p)
            .map(|(g, &pg)| g.cost.eval(pg, self.base_mva))
            .sum()
    }

    /// Normalized text form (JSON) that parses back to an identical network.
    pub fn to_normalized_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("network is always serializable")
    }

    pub fn from_normalized_text(text: &str) -> Result<Self, CaseError> {
        let net: Network =
            serde_json::from_str(text).map_err(|e| CaseError::MalformedCase(e.to_string()))?;
        validate(&net)?;
        Ok(net)
    }
}

/// Checks the network invariants; returns non-fatal findings as warnings.
pub fn validate(net: &Network) -> Result<Vec<Warning>, CaseError> {
    let invalid = |msg: String| Err(CaseError::InvalidNetwork(msg));
    let nb = net.buses.len();
    if !(net.base_mva > 0.0) {
        return invalid(format!("base MVA {} is not positive", net.base_mva));
    }
    if net.slack >= nb {
        return Err(CaseError::NoSlackBus);
    }
    let slack_count = net.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
    if slack_count == 0 || net.buses[net.slack].kind != BusKind::Slack {
        return Err(CaseError::NoSlackBus);
    }
    if slack_count > 1 {
        return invalid(format!("{slack_count} slack buses"));
    }
    let mut seen = HashMap::new();
    for (i, b) in net.buses.iter().enumerate() {
        if let Some(j) = seen.insert(b.id, i) {
            return invalid(format!("bus id {} repeated at rows {j} and {i}", b.id));
        }
        if !(b.v_min > 0.0) {
            return invalid(format!("bus {}: v_min {} not positive", b.id, b.v_min));
        }
        if b.v_min > b.v_max {
            return invalid(format!("bus {}: v_min > v_max", b.id));
        }
    }
    let mut has_gen = vec![false; nb];
    for (g, gen) in net.generators.iter().enumerate() {
        if gen.bus >= nb {
            return Err(CaseError::DanglingReference {
                kind: "generator",
                index: g,
                bus: gen.bus as u32,
            });
        }
        has_gen[gen.bus] = true;
        if gen.p_min > gen.p_max {
            return invalid(format!("generator {g}: p_min > p_max"));
        }
        if gen.q_min > gen.q_max {
            return invalid(format!("generator {g}: q_min > q_max"));
        }
        if gen.cost.c2 < 0.0 {
            return invalid(format!("generator {g}: cost is not convex"));
        }
    }
    for (i, b) in net.buses.iter().enumerate() {
        match b.kind {
            BusKind::Pv if !has_gen[i] => {
                return invalid(format!("PV bus {} has no generator", b.id))
            }
            BusKind::Pq if has_gen[i] => {
                return invalid(format!("PQ bus {} has a generator", b.id))
            }
            BusKind::Slack if !has_gen[i] => {
                return invalid(format!("slack bus {} has no generator", b.id))
            }
            _ => {}
        }
    }
    let mut warnings = Vec::new();
    let mut degree = vec![0usize; nb];
    for (k, l) in net.lines.iter().enumerate() {
        if l.from >= nb || l.to >= nb {
            return Err(CaseError::DanglingReference {
                kind: "line",
                index: k,
                bus: l.from.max(l.to) as u32,
            });
        }
        if l.from == l.to {
            return invalid(format!("line {k} is a self loop"));
        }
        if !(l.tap > 0.0) {
            return invalid(format!("line {k}: tap ratio {} not positive", l.tap));
        }
        if let Some(s) = l.s_max {
            if !(s >= 0.0) {
                return invalid(format!("line {k}: negative rating"));
            }
        }
        if !(l.angle_min <= 0.0 && 0.0 <= l.angle_max) {
            return invalid(format!("line {k}: angle limits exclude 0"));
        }
        if l.r == 0.0 && l.x == 0.0 {
            warnings.push(Warning::ZeroImpedanceLine(k));
        }
        degree[l.from] += 1;
        degree[l.to] += 1;
    }
    for (i, b) in net.buses.iter().enumerate() {
        if degree[i] == 0 {
            warnings.push(Warning::IsolatedBus(b.id));
        }
    }
    Ok(warnings)
}
