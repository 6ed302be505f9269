//! Monte-Carlo assessment of an operating point and Hoeffding confidence bounds.

use std::collections::BTreeMap;
use std::io;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netcase::Network;
use crate::powerflow::{evaluate_violations, solve_scenario, ConstraintId, OperatingPoint, ViolationRecord};
use crate::uncertainty::{BoxUncertainty, Scenario};

#[derive(Debug, Error)]
pub enum AssessError {
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("operating point has {got} generators, network has {expected}")]
    Mismatch { got: usize, expected: usize },
    #[error("failed to build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub samples: usize,
    pub seed: u64,
    pub records: Vec<ViolationRecord>,
    /// Fraction of samples with at least one violation or a diverged flow.
    pub sv_estimate: f64,
    /// Largest relative violation over all samples.
    pub max_violation: f64,
    pub violating: usize,
    pub unconverged: usize,
    /// Fraction of samples violating each constraint, by id.
    pub frequencies: BTreeMap<ConstraintId, f64>,
    pub wall_time_s: f64,
    #[serde(skip)]
    pub scenarios: Vec<Scenario>,
}

impl AssessmentReport {
    /// Aggregates per-sample records. Order of `records` must follow `scenarios`.
    pub fn from_records(seed: u64, scenarios: Vec<Scenario>, records: Vec<ViolationRecord>, wall_time_s: f64) -> Self {
        let samples = records.len();
        let violating = records.iter().filter(|r| r.is_violating()).count();
        let unconverged = records.iter().filter(|r| !r.converged).count();
        let max_violation = records.iter().map(|r| r.max_u()).fold(0.0, f64::max);
        let mut counts: BTreeMap<ConstraintId, usize> = BTreeMap::new();
        for r in &records {
            for c in r.constraint_set() {
                *counts.entry(c).or_default() += 1;
            }
        }
        let denom = samples.max(1) as f64;
        AssessmentReport {
            samples,
            seed,
            sv_estimate: violating as f64 / denom,
            max_violation,
            violating,
            unconverged,
            frequencies: counts.into_iter().map(|(c, n)| (c, n as f64 / denom)).collect(),
            records,
            wall_time_s,
            scenarios,
        }
    }

    pub fn violating_records(&self) -> impl Iterator<Item = &ViolationRecord> {
        self.records.iter().filter(|r| r.is_violating())
    }

    /// Same outcome as `other`, ignoring timing.
    pub fn same_outcome(&self, other: &AssessmentReport) -> bool {
        self.samples == other.samples
            && self.seed == other.seed
            && self.records == other.records
            && self.sv_estimate == other.sv_estimate
            && self.max_violation == other.max_violation
            && self.frequencies == other.frequencies
    }
}

#[derive(Debug, Clone, Default)]
pub struct AssessOptions {
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

/// Draws `samples` scenarios and checks each with recourse and a power flow.
pub fn assess(
    net: &Network,
    op: &OperatingPoint,
    bx: &BoxUncertainty,
    samples: usize,
    seed: u64,
    opts: &AssessOptions,
) -> Result<AssessmentReport, AssessError> {
    if samples == 0 {
        return Err(AssessError::NoSamples);
    }
    let scenarios = bx.sample_batch(samples, seed);
    assess_scenarios(net, op, bx, scenarios, seed, opts)
}

/// Like [`assess`] over an explicit scenario list.
pub fn assess_scenarios(
    net: &Network,
    op: &OperatingPoint,
    bx: &BoxUncertainty,
    scenarios: Vec<Scenario>,
    seed: u64,
    opts: &AssessOptions,
) -> Result<AssessmentReport, AssessError> {
    if scenarios.is_empty() {
        return Err(AssessError::NoSamples);
    }
    if op.p0.len() != net.generators.len() {
        return Err(AssessError::Mismatch {
            got: op.p0.len(),
            expected: net.generators.len(),
        });
    }
    let start = Instant::now();
    let base = solve_scenario(net, op, &bx.base_scenario(), None).ok();
    let run = |s: &[Scenario]| -> Vec<ViolationRecord> {
        s.par_iter()
            .enumerate()
            .map(|(k, sc)| match solve_scenario(net, op, sc, base.as_ref()) {
                Ok(st) => evaluate_violations(net, &st, k),
                Err(_) => ViolationRecord::unconverged(k),
            })
            .collect()
    };
    let records = match opts.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| AssessError::Pool(e.to_string()))?
            .install(|| run(&scenarios)),
        None => run(&scenarios),
    };
    Ok(AssessmentReport::from_records(
        seed,
        scenarios,
        records,
        start.elapsed().as_secs_f64(),
    ))
}

/// True when the estimated violation probability is within the threshold.
pub fn stop_check(report: &AssessmentReport, tau: f64) -> bool {
    report.sv_estimate <= tau
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBound {
    pub tau: f64,
    pub samples: usize,
    pub m: f64,
    pub delta: f64,
    /// `√(2M² ln(1/δ))`
    pub alpha: f64,
    pub bound: f64,
}

impl ConfidenceBound {
    pub fn statement(&self) -> String {
        format!(
            "SV < {:.6} with probability > {:.4} (tau = {}, S = {}, M = {})",
            self.bound,
            1.0 - self.delta,
            self.tau,
            self.samples,
            self.m
        )
    }
}

pub fn hoeffding_bound(tau: f64, samples: usize, m: f64, delta: f64) -> ConfidenceBound {
    let alpha = (2.0 * m * m * (1.0 / delta).ln()).sqrt();
    ConfidenceBound {
        tau,
        samples,
        m,
        delta,
        alpha,
        bound: tau + alpha / (samples as f64).sqrt(),
    }
}

/// Writes the sample × constraint matrix of relative violations. Columns are
/// the constraints violated in at least one sample, in id order.
pub fn write_violation_matrix<W: io::Write>(records: &[ViolationRecord], out: W) -> csv::Result<()> {
    let mut cols: Vec<ConstraintId> = records.iter().flat_map(|r| r.constraint_set()).collect();
    cols.sort();
    cols.dedup();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample".to_string()];
    header.extend(cols.iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.scenario.to_string()];
        for &c in &cols {
            let u = if c == ConstraintId::PfDiverged {
                if r.converged { 0.0 } else { crate::powerflow::U_MAX }
            } else if r.converged {
                r.u_of(c)
            } else {
                crate::powerflow::U_MAX
            };
            row.push(u.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
