//! Scenario design: dominant-sample selection, critical directions by lasso,
//! and enhancement to the box extremes.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::montecarlo::AssessmentReport;
use crate::powerflow::{ConstraintId, ViolationRecord, U_MAX};
use crate::sopf::ScenarioSet;
use crate::uncertainty::{BoxUncertainty, Origin, Scenario};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstructError {
    #[error("no violating samples to select from")]
    NoViolations,
    #[error("no samples violate {0}")]
    EmptyConstraintSample(ConstraintId),
    #[error("scenario has {got} coordinates, box has {expected}")]
    Dimension { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Mv,
    Nc,
    Hybrid,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Mv => "mv",
            Policy::Nc => "nc",
            Policy::Hybrid => "hybrid",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown policy {0:?} (expected mv, nc or hybrid)")]
pub struct ParsePolicyError(String);

impl FromStr for Policy {
    type Err = ParsePolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mv" => Ok(Policy::Mv),
            "nc" => Ok(Policy::Nc),
            "hybrid" => Ok(Policy::Hybrid),
            _ => Err(ParsePolicyError(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScore {
    /// Index of the sample in its assessment.
    pub sample: usize,
    pub mv: f64,
    pub nc: usize,
    pub weight: f64,
    pub constraint_set: Vec<ConstraintId>,
}

/// Scores the violating records and ranks them best first.
pub fn score(records: &[ViolationRecord], policy: Policy) -> Result<Vec<ScenarioScore>, ConstructError> {
    let mut out: Vec<ScenarioScore> = records
        .iter()
        .filter(|r| r.is_violating())
        .map(|r| ScenarioScore {
            sample: r.scenario,
            mv: r.max_u(),
            nc: r.count(),
            weight: 0.0,
            constraint_set: r.constraint_set(),
        })
        .collect();
    if out.is_empty() {
        return Err(ConstructError::NoViolations);
    }
    let max_mv = out.iter().map(|s| s.mv).fold(0.0, f64::max);
    let max_nc = out.iter().map(|s| s.nc).max().unwrap_or(1) as f64;
    for s in &mut out {
        s.weight = s.mv / max_mv + s.nc as f64 / max_nc;
    }
    let desc = |a: f64, b: f64| b.total_cmp(&a);
    out.sort_by(|a, b| {
        let primary = match policy {
            Policy::Mv => desc(a.mv, b.mv).then(b.nc.cmp(&a.nc)),
            Policy::Nc => b.nc.cmp(&a.nc).then(desc(a.mv, b.mv)),
            Policy::Hybrid => desc(a.weight, b.weight)
                .then(desc(a.mv, b.mv))
                .then(b.nc.cmp(&a.nc)),
        };
        primary.then(a.sample.cmp(&b.sample))
    });
    Ok(out)
}

/// Walks the ranking and keeps up to `k` samples whose violated-constraint
/// sets are new to this batch and to `existing_sets`.
pub fn select_dominant(ranked: &[ScenarioScore], k: usize, existing_sets: &[Vec<ConstraintId>]) -> Vec<ScenarioScore> {
    let mut kept: Vec<ScenarioScore> = Vec::new();
    for s in ranked {
        if kept.len() >= k {
            break;
        }
        let seen = kept.iter().any(|o| o.constraint_set == s.constraint_set)
            || existing_sets.contains(&s.constraint_set);
        if !seen {
            kept.push(s.clone());
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    P,
    Q,
}

/// Sparse linear model of one constraint's violation over normalized fluctuations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub intercept: f64,
    pub dp: Vec<f64>,
    pub dq: Vec<f64>,
    pub lambda: f64,
    pub lambda_max: f64,
    /// Coordinates left out because their box has zero width.
    pub excluded: Vec<(usize, Channel)>,
    pub sweeps: usize,
    pub duality_gap: f64,
}

impl Direction {
    pub fn zero(n: usize) -> Self {
        Direction {
            intercept: 0.0,
            dp: vec![0.0; n],
            dq: vec![0.0; n],
            lambda: 0.0,
            lambda_max: 0.0,
            excluded: Vec::new(),
            sweeps: 0,
            duality_gap: 0.0,
        }
    }

    /// Fraction of coefficients with magnitude at most `tau2`.
    pub fn sparsity(&self, tau2: f64) -> f64 {
        let all = self.dp.iter().chain(&self.dq);
        let n = self.dp.len() + self.dq.len();
        if n == 0 {
            return 1.0;
        }
        all.filter(|d| d.abs() <= tau2).count() as f64 / n as f64
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LassoFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub lambda_max: f64,
    pub sweeps: usize,
    pub gap: f64,
}

fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

const GAP_TOL: f64 = 1e-8;
const STEP_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100_000;

/// `min Σ (y − d₀ − Xd)² + λ‖d‖₁` with unpenalized intercept, by cyclic
/// coordinate descent. `cols` are the feature columns. `trace` collects the
/// objective after every sweep.
pub(crate) fn lasso(cols: &[Vec<f64>], y: &[f64], lambda: f64, mut trace: Option<&mut Vec<f64>>) -> LassoFit {
    let m = y.len();
    let ybar = y.iter().sum::<f64>() / m as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / m as f64).collect();
    let xc: Vec<Vec<f64>> = cols
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| v - mu).collect())
        .collect();
    let nrm2: Vec<f64> = xc.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let lambda_max = 2.0 * xc.iter().map(|c| dot(c, &yc).abs()).fold(0.0, f64::max);
    let mut d = vec![0.0; cols.len()];
    if lambda >= lambda_max {
        return LassoFit {
            intercept: ybar,
            coef: d,
            lambda_max,
            sweeps: 0,
            gap: 0.0,
        };
    }
    let mut r = yc.clone();
    let half = 0.5 * lambda;
    let objective = |r: &[f64], d: &[f64]| dot(r, r) + lambda * d.iter().map(|v| v.abs()).sum::<f64>();
    let gap_of = |r: &[f64], d: &[f64]| {
        // dual of the ½-scaled problem, rescaled back
        let xtr = xc.iter().map(|c| dot(c, r).abs()).fold(0.0, f64::max);
        let s = if xtr > half { half / xtr } else { 1.0 };
        let yy = dot(&yc, &yc);
        let dist: f64 = yc.iter().zip(r).map(|(a, b)| (a - s * b).powi(2)).sum();
        objective(r, d) - (yy - dist)
    };
    let mut sweeps = 0;
    let mut gap = gap_of(&r, &d);
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut max_step: f64 = 0.0;
        for j in 0..d.len() {
            if nrm2[j] == 0.0 {
                continue;
            }
            let rho = dot(&xc[j], &r) + nrm2[j] * d[j];
            let new = soft(rho, half) / nrm2[j];
            let step = new - d[j];
            if step != 0.0 {
                for (ri, xi) in r.iter_mut().zip(&xc[j]) {
                    *ri -= xi * step;
                }
                d[j] = new;
            }
            max_step = max_step.max(step.abs() * nrm2[j].sqrt());
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(objective(&r, &d));
        }
        gap = gap_of(&r, &d);
        if gap <= GAP_TOL && max_step <= STEP_TOL {
            break;
        }
    }
    LassoFit {
        intercept: ybar - dot(&means, &d),
        coef: d,
        lambda_max,
        sweeps,
        gap,
    }
}

/// Fits the critical direction of one constraint from its violating samples.
pub fn fit_direction(samples: &[(&Scenario, f64)], bx: &BoxUncertainty, lambda_frac: f64) -> Result<Direction, ConstructError> {
    let n = bx.len();
    if let Some((s, _)) = samples.iter().find(|(s, _)| s.dp.len() != n || s.dq.len() != n) {
        return Err(ConstructError::Dimension { got: s.dp.len(), expected: n });
    }
    let (hp, hq) = bx.half_widths();
    let mut cols = Vec::new();
    let mut slots = Vec::new();
    let mut excluded = Vec::new();
    for i in 0..n {
        for (ch, h) in [(Channel::P, hp[i]), (Channel::Q, hq[i])] {
            if h <= 0.0 {
                excluded.push((i, ch));
                continue;
            }
            let col = samples
                .iter()
                .map(|(s, _)| match ch {
                    Channel::P => s.dp[i] / h,
                    Channel::Q => s.dq[i] / h,
                })
                .collect();
            cols.push(col);
            slots.push((i, ch));
        }
    }
    let y: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let mut dir = Direction::zero(n);
    dir.excluded = excluded;
    if y.is_empty() {
        return Ok(dir);
    }
    // λ_max does not depend on λ; one cheap pass to get it
    let lambda_max = lasso(&cols, &y, f64::INFINITY, None).lambda_max;
    let lambda = lambda_frac * lambda_max;
    let fit = lasso(&cols, &y, lambda, None);
    for (&(i, ch), &c) in slots.iter().zip(&fit.coef) {
        match ch {
            Channel::P => dir.dp[i] = c,
            Channel::Q => dir.dq[i] = c,
        }
    }
    dir.intercept = fit.intercept;
    dir.lambda = lambda;
    dir.lambda_max = lambda_max;
    dir.sweeps = fit.sweeps;
    dir.duality_gap = fit.gap;
    Ok(dir)
}

/// Moves each coordinate with a significant coefficient to the box bound its sign points at.
pub fn enhance(t: &Scenario, d: &Direction, bx: &BoxUncertainty, tau2: f64) -> Scenario {
    let mut out = t.clone();
    for (i, b) in bx.bounds().iter().enumerate() {
        if d.dp[i] > tau2 {
            out.dp[i] = b.p_hi;
        } else if d.dp[i] < -tau2 {
            out.dp[i] = b.p_lo;
        }
        if d.dq[i] > tau2 {
            out.dq[i] = b.q_hi;
        } else if d.dq[i] < -tau2 {
            out.dq[i] = b.q_lo;
        }
    }
    out.origin = Origin::Enhanced;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchOptions {
    pub policy: Policy,
    pub k: usize,
    pub lambda_frac: f64,
    pub tau2: f64,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            policy: Policy::Mv,
            k: 5,
            lambda_frac: 0.1,
            tau2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sample: usize,
    pub mv: f64,
    pub nc: usize,
    pub weight: f64,
    pub critical: ConstraintId,
    pub regression_samples: usize,
    pub lambda: f64,
    pub lambda_max: f64,
    pub sparsity: f64,
    pub changed_coordinates: usize,
    /// The enhanced point was already present, so the raw sample was used.
    pub raw_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub scenarios: Vec<Scenario>,
    /// Violated-constraint set recorded for each new scenario.
    pub constraint_sets: Vec<Vec<ConstraintId>>,
    pub provenance: Vec<Provenance>,
    /// Selection had to ignore `existing_sets` because every violated set was already recorded.
    pub relaxed_dedup: bool,
}

/// Designs up to `k` new scenarios from one assessment.
pub fn build_batch(
    report: &AssessmentReport,
    existing: &ScenarioSet,
    existing_sets: &[Vec<ConstraintId>],
    bx: &BoxUncertainty,
    opts: &BatchOptions,
) -> Result<Batch, ConstructError> {
    let ranked = score(&report.records, opts.policy)?;
    let mut selected = select_dominant(&ranked, opts.k, existing_sets);
    let relaxed_dedup = selected.is_empty();
    if relaxed_dedup {
        selected = select_dominant(&ranked, opts.k, &[]);
    }
    let designed: Vec<(Scenario, Provenance)> = selected
        .par_iter()
        .map(|sel| design_one(report, sel, bx, opts))
        .collect::<Result<_, _>>()?;

    let mut batch = Batch {
        scenarios: Vec::new(),
        constraint_sets: Vec::new(),
        provenance: Vec::new(),
        relaxed_dedup,
    };
    for ((enhanced, mut prov), sel) in designed.into_iter().zip(&selected) {
        let fresh = |s: &Scenario, b: &Batch| {
            !existing.iter().any(|o| o.same_point(s)) && !b.scenarios.iter().any(|o| o.same_point(s))
        };
        let chosen = if fresh(&enhanced, &batch) {
            Some(enhanced)
        } else {
            let mut raw = report.scenarios[sel.sample].clone();
            raw.origin = Origin::Selected;
            prov.raw_fallback = true;
            fresh(&raw, &batch).then_some(raw)
        };
        if let Some(s) = chosen {
            batch.scenarios.push(s);
            batch.constraint_sets.push(sel.constraint_set.clone());
            batch.provenance.push(prov);
        }
    }
    Ok(batch)
}

fn design_one(
    report: &AssessmentReport,
    sel: &ScenarioScore,
    bx: &BoxUncertainty,
    opts: &BatchOptions,
) -> Result<(Scenario, Provenance), ConstructError> {
    let rec = &report.records[sel.sample];
    let critical = rec.most_violated().ok_or(ConstructError::NoViolations)?;
    let samples: Vec<(&Scenario, f64)> = report
        .records
        .iter()
        .filter_map(|r| {
            let u = if critical == ConstraintId::PfDiverged {
                if r.converged { 0.0 } else { U_MAX }
            } else if r.converged {
                r.u_of(critical)
            } else {
                0.0
            };
            (u > 0.0).then(|| (&report.scenarios[r.scenario], u))
        })
        .collect();
    if samples.is_empty() {
        return Err(ConstructError::EmptyConstraintSample(critical));
    }
    let d = fit_direction(&samples, bx, opts.lambda_frac)?;
    let raw = &report.scenarios[sel.sample];
    let mut enhanced = enhance(raw, &d, bx, opts.tau2);
    let changed = raw
        .dp
        .iter()
        .zip(&enhanced.dp)
        .chain(raw.dq.iter().zip(&enhanced.dq))
        .filter(|(a, b)| a != b)
        .count();
    if changed == 0 {
        enhanced.origin = Origin::Selected;
    }
    let prov = Provenance {
        sample: sel.sample,
        mv: sel.mv,
        nc: sel.nc,
        weight: sel.weight,
        critical,
        regression_samples: samples.len(),
        lambda: d.lambda,
        lambda_max: d.lambda_max,
        sparsity: d.sparsity(opts.tau2),
        changed_coordinates: changed,
        raw_fallback: false,
    };
    Ok((enhanced, prov))
}
