//! Multi-scenario AC optimal power flow.

mod model;

pub use model::SopfModel;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::netcase::Network;
use crate::nlp::{self, IpmError, IpmOptions};
use crate::powerflow::{OperatingPoint, PfState};
use crate::uncertainty::{Origin, Scenario};

/// Ordered scenario collection with the base scenario first and no repeated points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSet {
    scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    pub fn new(base: Scenario) -> Self {
        ScenarioSet { scenarios: vec![base] }
    }

    /// Base scenario with zero fluctuation over the given buses.
    pub fn base_only(buses: &[usize]) -> Self {
        let n = buses.len();
        Self::new(Scenario {
            buses: buses.into(),
            dp: vec![0.0; n],
            dq: vec![0.0; n],
            origin: Origin::Base,
        })
    }

    /// Appends unless an identical point is already present.
    pub fn push(&mut self, s: Scenario) -> bool {
        if self.scenarios.iter().any(|o| o.same_point(&s)) {
            return false;
        }
        self.scenarios.push(s);
        true
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn as_slice(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Scenario> {
        self.scenarios.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SopfDiagnostics {
    pub iterations: usize,
    pub stationarity: f64,
    pub eq_residual: f64,
    pub ineq_residual: f64,
    pub complementarity: f64,
    pub barrier: f64,
    pub n_variables: usize,
    pub n_equalities: usize,
    pub n_inequalities: usize,
}

/// Raw primal values kept for warm starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    pub first_stage: Vec<f64>,
    pub blocks: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SopfSolution {
    pub op: OperatingPoint,
    /// One state per scenario of the solved set, in order.
    pub states: Vec<PfState>,
    /// Nominal generation cost, $/h.
    pub objective: f64,
    pub diagnostics: SopfDiagnostics,
    pub warm: WarmStart,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SopfError {
    #[error("scenario OPF is infeasible (iteration {iterations}, constraint violation {violation:.3e})")]
    Infeasible { iterations: usize, violation: f64 },
    #[error("scenario OPF did not converge in {iterations} iterations")]
    MaxIterations { iterations: usize },
    #[error("numerical failure in scenario OPF: {0}")]
    NumericFailure(String),
    #[error("empty scenario set")]
    EmptyScenarioSet,
}

impl From<IpmError> for SopfError {
    fn from(e: IpmError) -> Self {
        match e {
            IpmError::Infeasible { iterations, violation } => SopfError::Infeasible { iterations, violation },
            IpmError::MaxIterations { iterations, .. } => SopfError::MaxIterations { iterations },
            IpmError::NumericFailure(m) => SopfError::NumericFailure(m),
        }
    }
}

pub fn solve_sopf(
    net: &Network,
    omega: &ScenarioSet,
    alpha: &[f64],
    warm: Option<&SopfSolution>,
) -> Result<SopfSolution, SopfError> {
    solve_with(net, omega, alpha, warm, &IpmOptions::default())
}

pub fn solve_with(
    net: &Network,
    omega: &ScenarioSet,
    alpha: &[f64],
    warm: Option<&SopfSolution>,
    opts: &IpmOptions,
) -> Result<SopfSolution, SopfError> {
    if omega.is_empty() {
        return Err(SopfError::EmptyScenarioSet);
    }
    let model = SopfModel::new(net, omega.as_slice(), alpha);
    let x0 = match warm {
        Some(w) => model.warm_point(&w.warm.first_stage, &w.warm.blocks),
        None => model.initial_point(),
    };
    let r = nlp::solve(&model, x0, opts)?;
    let states = (0..model.n_scenarios()).map(|s| model.state(&r.x, s)).collect();
    let (first_stage, blocks) = model.split(&r.x);
    Ok(SopfSolution {
        op: model.operating_point(&r.x),
        states,
        objective: r.objective,
        diagnostics: SopfDiagnostics {
            iterations: r.iterations,
            stationarity: r.stationarity,
            eq_residual: r.eq_residual,
            ineq_residual: r.ineq_residual,
            complementarity: r.complementarity,
            barrier: r.barrier,
            n_variables: nlp::Nlp::n(&model),
            n_equalities: nlp::Nlp::m_eq(&model),
            n_inequalities: nlp::Nlp::m_ineq(&model),
        },
        warm: WarmStart { first_stage, blocks },
    })
}

/// Scenario OPF over the base scenario alone.
pub fn deterministic_opf(net: &Network, alpha: &[f64]) -> Result<SopfSolution, SopfError> {
    solve_sopf(net, &ScenarioSet::base_only(&[]), alpha, None)
}

/// Variables and constraint values of the NLP at a solution.
pub fn dump_nlp(net: &Network, omega: &ScenarioSet, sol: &SopfSolution) -> Value {
    let model = SopfModel::new(net, omega.as_slice(), &sol.op.alpha);
    let x = model.warm_point(&sol.warm.first_stage, &sol.warm.blocks);
    model.describe(&x)
}
