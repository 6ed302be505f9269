use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::PfState;
use crate::netcase::Network;

/// Violation magnitude assigned to a scenario whose power flow diverged.
pub const U_MAX: f64 = 10.0;

/// Canonical identifier of one safety limit. Line and generator indices are
/// zero-based positions in the network; bus entries carry the external bus id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ConstraintId {
    FlowFrom(usize),
    FlowTo(usize),
    AngleMax(usize),
    AngleMin(usize),
    PMax(usize),
    PMin(usize),
    QMax(usize),
    QMin(usize),
    VMax(u32),
    VMin(u32),
    PfDiverged,
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ConstraintId::*;
        match *self {
            FlowFrom(k) => write!(f, "flow_from:{k}"),
            FlowTo(k) => write!(f, "flow_to:{k}"),
            AngleMax(k) => write!(f, "angle_max:{k}"),
            AngleMin(k) => write!(f, "angle_min:{k}"),
            PMax(g) => write!(f, "pmax_gen:{g}"),
            PMin(g) => write!(f, "pmin_gen:{g}"),
            QMax(g) => write!(f, "qmax_gen:{g}"),
            QMin(g) => write!(f, "qmin_gen:{g}"),
            VMax(b) => write!(f, "vmax:{b}"),
            VMin(b) => write!(f, "vmin:{b}"),
            PfDiverged => write!(f, "pf_diverged"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unrecognized constraint id {0:?}")]
pub struct ParseConstraintIdError(pub String);

impl FromStr for ConstraintId {
    type Err = ParseConstraintIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use ConstraintId::*;
        let bad = || ParseConstraintIdError(s.to_string());
        if s == "pf_diverged" {
            return Ok(PfDiverged);
        }
        let (kind, idx) = s.split_once(':').ok_or_else(bad)?;
        let n: usize = idx.parse().map_err(|_| bad())?;
        let id = || u32::try_from(n).map_err(|_| bad());
        Ok(match kind {
            "flow_from" => FlowFrom(n),
            "flow_to" => FlowTo(n),
            "angle_max" => AngleMax(n),
            "angle_min" => AngleMin(n),
            "pmax_gen" => PMax(n),
            "pmin_gen" => PMin(n),
            "qmax_gen" => QMax(n),
            "qmin_gen" => QMin(n),
            "vmax" => VMax(id()?),
            "vmin" => VMin(id()?),
            _ => return Err(bad()),
        })
    }
}

impl From<ConstraintId> for String {
    fn from(c: ConstraintId) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for ConstraintId {
    type Error = ParseConstraintIdError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub scenario: usize,
    pub converged: bool,
    /// Violated constraints with relative violation `u > 0`, sorted by id.
    pub entries: Vec<(ConstraintId, f64)>,
}

impl ViolationRecord {
    pub fn unconverged(scenario: usize) -> Self {
        ViolationRecord {
            scenario,
            converged: false,
            entries: Vec::new(),
        }
    }

    pub fn is_violating(&self) -> bool {
        !self.converged || !self.entries.is_empty()
    }

    /// Largest relative violation; `U_MAX` for a diverged flow, 0 when clean.
    pub fn max_u(&self) -> f64 {
        if !self.converged {
            return U_MAX;
        }
        self.entries.iter().map(|e| e.1).fold(0.0, f64::max)
    }

    pub fn count(&self) -> usize {
        if self.converged {
            self.entries.len()
        } else {
            1
        }
    }

    /// Sorted set of violated ids; a diverged flow is the pseudo-constraint `pf_diverged`.
    pub fn constraint_set(&self) -> Vec<ConstraintId> {
        if self.converged {
            self.entries.iter().map(|e| e.0).collect()
        } else {
            vec![ConstraintId::PfDiverged]
        }
    }

    /// Constraint with the largest `u`; ties go to the smaller id.
    pub fn most_violated(&self) -> Option<ConstraintId> {
        if !self.converged {
            return Some(ConstraintId::PfDiverged);
        }
        let mut best: Option<(ConstraintId, f64)> = None;
        for &(c, u) in &self.entries {
            if best.is_none_or(|(_, bu)| u > bu) {
                best = Some((c, u));
            }
        }
        best.map(|b| b.0)
    }

    /// `u` of one constraint (0 if not violated).
    pub fn u_of(&self, c: ConstraintId) -> f64 {
        if !self.converged {
            return U_MAX;
        }
        self.entries
            .binary_search_by(|e| e.0.cmp(&c))
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }

    /// Drops entries at or below `tol`.
    pub fn above(&self, tol: f64) -> ViolationRecord {
        ViolationRecord {
            scenario: self.scenario,
            converged: self.converged,
            entries: self.entries.iter().copied().filter(|e| e.1 > tol).collect(),
        }
    }
}

/// Relative violation of `lo <= x <= hi`.
pub fn box_violation(x: f64, lo: f64, hi: f64) -> f64 {
    let (a, b) = pair(x, lo, hi);
    a.max(b).max(0.0)
}

/// Relative violation of `|S| <= s_max`.
pub fn flow_violation(p: f64, q: f64, s_max: f64) -> f64 {
    ((p.hypot(q) - s_max) / s_max).max(0.0)
}

// upper-side and lower-side parts of `box_violation`
fn pair(x: f64, lo: f64, hi: f64) -> (f64, f64) {
    let norm = (hi - lo).abs().max(1e-6);
    ((x - hi) / norm, (lo - x) / norm)
}

pub fn evaluate_violations(net: &Network, st: &PfState, scenario: usize) -> ViolationRecord {
    use ConstraintId::*;
    let mut entries = Vec::new();
    let mut push = |c: ConstraintId, u: f64| {
        if u > 0.0 {
            entries.push((c, u));
        }
    };
    for (k, l) in net.lines.iter().enumerate() {
        if let Some(s) = l.s_max {
            push(FlowFrom(k), flow_violation(st.pf[k], st.qf[k], s));
            push(FlowTo(k), flow_violation(st.pt[k], st.qt[k], s));
        }
        let d = st.theta[l.from] - st.theta[l.to];
        let (hi, lo) = pair(d, l.angle_min, l.angle_max);
        push(AngleMax(k), hi);
        push(AngleMin(k), lo);
    }
    for (g, gen) in net.generators.iter().enumerate() {
        let (hi, lo) = pair(st.gen_p[g], gen.p_min, gen.p_max);
        push(PMax(g), hi);
        push(PMin(g), lo);
        let (hi, lo) = pair(st.gen_q[g], gen.q_min, gen.q_max);
        push(QMax(g), hi);
        push(QMin(g), lo);
    }
    for (i, b) in net.buses.iter().enumerate() {
        let (hi, lo) = pair(st.v[i], b.v_min, b.v_max);
        push(VMax(b.id), hi);
        push(VMin(b.id), lo);
    }
    entries.sort_by_key(|a| a.0);
    ViolationRecord {
        scenario,
        converged: true,
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::super::testnet::four_bus;
    use super::super::{solve_pf, InjectionSpec, PfOptions};
    use super::*;
    use proptest::prelude::*;

    fn solved() -> (Network, PfState) {
        let net = four_bus();
        let spec = InjectionSpec {
            gen_p: vec![0.8, 0.7, 0.2],
            p_demand: net.buses.iter().map(|b| b.p_load).collect(),
            q_demand: net.buses.iter().map(|b| b.q_load).collect(),
            v_set: vec![1.02, 1.01, 1.0, 1.0],
        };
        let st = solve_pf(&net, &spec, None, &PfOptions::default()).unwrap();
        (net, st)
    }

    #[test]
    fn ids_round_trip_through_strings() {
        for c in [
            ConstraintId::FlowFrom(17),
            ConstraintId::VMax(23),
            ConstraintId::QMax(5),
            ConstraintId::PfDiverged,
        ] {
            assert_eq!(c.to_string().parse::<ConstraintId>().unwrap(), c);
        }
        assert_eq!(ConstraintId::FlowFrom(17).to_string(), "flow_from:17");
        assert!("flow:1".parse::<ConstraintId>().is_err());
        let json = serde_json::to_string(&ConstraintId::QMax(5)).unwrap();
        assert_eq!(json, "\"qmax_gen:5\"");
    }

    #[test]
    fn flow_at_105_percent_gives_five_percent() {
        assert!((flow_violation(1.05, 0.0, 1.0) - 0.05).abs() < 1e-12);
        assert!((flow_violation(0.63, 0.84, 1.0) - 0.05).abs() < 1e-12);
        assert_eq!(flow_violation(0.5, 0.5, 1.0), 0.0);
    }

    #[test]
    fn interior_point_has_empty_record() {
        let (net, st) = solved();
        let r = evaluate_violations(&net, &st, 0);
        assert!(r.converged && r.entries.is_empty(), "{:?}", r.entries);
        assert!(!r.is_violating());
        assert_eq!(r.max_u(), 0.0);
    }

    #[test]
    fn tight_rating_is_flagged_at_both_ends() {
        let (mut net, st) = solved();
        let s = st.pf[1].hypot(st.qf[1]).min(st.pt[1].hypot(st.qt[1]));
        net.lines[1].s_max = Some(0.5 * s);
        let r = evaluate_violations(&net, &st, 3);
        let set = r.constraint_set();
        assert!(set.contains(&ConstraintId::FlowFrom(1)));
        assert!(set.contains(&ConstraintId::FlowTo(1)));
        assert_eq!(r.scenario, 3);
        assert!(r.max_u() >= 1.0 - 1e-12);
    }

    #[test]
    fn unconverged_record_semantics() {
        let r = ViolationRecord::unconverged(4);
        assert!(r.is_violating());
        assert_eq!(r.max_u(), U_MAX);
        assert_eq!(r.constraint_set(), vec![ConstraintId::PfDiverged]);
    }

    proptest! {
        #[test]
        fn box_violation_strictly_increases_past_bound(lo in -2.0..0.0f64, w in 0.0..3.0f64, e in 1e-6..1.0f64, k in 1.01..3.0f64) {
            let hi = lo + w;
            let u1 = box_violation(hi + e, lo, hi);
            let u2 = box_violation(hi + k * e, lo, hi);
            prop_assert!(u1 > 0.0 && u2 > u1);
            let l1 = box_violation(lo - e, lo, hi);
            prop_assert!(box_violation(lo - k * e, lo, hi) > l1);
            prop_assert_eq!(box_violation(lo + 0.5 * w, lo, hi), 0.0);
        }

        #[test]
        fn flow_violation_strictly_increases(p in -2.0..2.0f64, q in -2.0..2.0f64, k in 1.01..3.0f64) {
            prop_assume!(p.hypot(q) > 1e-3);
            let smax = 0.9 * p.hypot(q);
            prop_assert!(flow_violation(k * p, k * q, smax) > flow_violation(p, q, smax));
        }
    }
}
