//! AGC recourse, Newton–Raphson power flow and safety-limit evaluation.

pub mod flows;
mod newton;
mod violations;

pub use newton::{solve_pf, PfError, PfOptions};
pub use violations::{
    box_violation, evaluate_violations, flow_violation, ConstraintId, ParseConstraintIdError, ViolationRecord, U_MAX,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netcase::Network;
use crate::uncertainty::Scenario;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatingPointError {
    #[error("{what} has length {got}, expected {expected}")]
    Length {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("participation factors must be non-negative and sum to 1 (sum = {0})")]
    Participation(f64),
}

/// First-stage decisions plus the AGC participation factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Nominal real output per generator, p.u.
    pub p0: Vec<f64>,
    /// Voltage set point per controlled bus, aligned with `Network::controlled_buses`.
    pub v0: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl OperatingPoint {
    pub fn new(
        net: &Network,
        p0: Vec<f64>,
        v0: Vec<f64>,
        alpha: Vec<f64>,
    ) -> Result<Self, OperatingPointError> {
        let ng = net.generators.len();
        let nc = net.controlled_buses().len();
        for (what, got, expected) in [
            ("p0", p0.len(), ng),
            ("v0", v0.len(), nc),
            ("alpha", alpha.len(), ng),
        ] {
            if got != expected {
                return Err(OperatingPointError::Length { what, got, expected });
            }
        }
        let sum: f64 = alpha.iter().sum();
        if alpha.iter().any(|&a| a < 0.0 || !a.is_finite()) || (sum - 1.0).abs() > 1e-12 {
            return Err(OperatingPointError::Participation(sum));
        }
        Ok(OperatingPoint { p0, v0, alpha })
    }

    /// Per-bus voltage targets, 1.0 at PQ buses.
    pub fn bus_voltages(&self, net: &Network) -> Vec<f64> {
        let mut v = vec![1.0; net.n_buses()];
        for (k, b) in net.controlled_buses().into_iter().enumerate() {
            v[b] = self.v0[k];
        }
        v
    }
}

/// Equal participation over the units with a non-degenerate real-power range.
///
/// Units with `p_min == p_max` (synchronous condensers, must-run blocks) get zero.
/// Falls back to all units if none is dispatchable.
pub fn default_participation(net: &Network) -> Vec<f64> {
    let disp: Vec<bool> = net.generators.iter().map(|g| g.is_dispatchable()).collect();
    let count = disp.iter().filter(|&&d| d).count();
    if count == 0 {
        let n = net.generators.len() as f64;
        return vec![1.0 / n; net.generators.len()];
    }
    let share = 1.0 / count as f64;
    let mut alpha: Vec<f64> = disp.iter().map(|&d| if d { share } else { 0.0 }).collect();
    // make the sum exactly 1 despite rounding
    let err: f64 = 1.0 - alpha.iter().sum::<f64>();
    if let Some(last) = disp.iter().rposition(|&d| d) {
        alpha[last] += err;
    }
    alpha
}

/// `1/|G|` over every generator.
pub fn uniform_participation(net: &Network) -> Vec<f64> {
    let n = net.generators.len();
    vec![1.0 / n as f64; n]
}

/// Power-flow targets after recourse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    /// Scheduled real output per generator (slack-bus units additionally absorb losses).
    pub gen_p: Vec<f64>,
    /// Real demand per bus including the fluctuation.
    pub p_demand: Vec<f64>,
    pub q_demand: Vec<f64>,
    /// Voltage magnitude target per bus; only controlled buses are binding.
    pub v_set: Vec<f64>,
}

pub fn apply_recourse(net: &Network, op: &OperatingPoint, s: &Scenario) -> InjectionSpec {
    let mismatch = s.total_dp();
    let gen_p = op
        .p0
        .iter()
        .zip(&op.alpha)
        .map(|(&p, &a)| p + mismatch * a)
        .collect();
    let (dp, dq) = s.per_bus(net.n_buses());
    InjectionSpec {
        gen_p,
        p_demand: net.buses.iter().zip(&dp).map(|(b, d)| b.p_load + d).collect(),
        q_demand: net.buses.iter().zip(&dq).map(|(b, d)| b.q_load + d).collect(),
        v_set: op.bus_voltages(net),
    }
}

/// Full AC solution for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfState {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Net injection per bus (generation minus demand).
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub pf: Vec<f64>,
    pub qf: Vec<f64>,
    pub pt: Vec<f64>,
    pub qt: Vec<f64>,
    /// Realized output per generator.
    pub gen_p: Vec<f64>,
    pub gen_q: Vec<f64>,
    pub iterations: usize,
}

/// Recourse followed by a power flow.
pub fn solve_scenario(
    net: &Network,
    op: &OperatingPoint,
    s: &Scenario,
    warm: Option<&PfState>,
) -> Result<PfState, PfError> {
    solve_pf(net, &apply_recourse(net, op, s), warm, &PfOptions::default())
}

/// Splits a bus total over its units in proportion to their ranges, anchored at the lower limits.
pub(crate) fn split_by_range(total: f64, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let n = lo.len();
    let range: f64 = lo.iter().zip(hi).map(|(l, h)| h - l).sum();
    if range > 1e-9 {
        let base: f64 = lo.iter().sum();
        let frac = (total - base) / range;
        lo.iter().zip(hi).map(|(l, h)| l + frac * (h - l)).collect()
    } else {
        vec![total / n as f64; n]
    }
}
