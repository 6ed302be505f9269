//! Primal-dual interior point with slacks, in the style of MIPS/IPOPT:
//! `h(x) + z = 0, z > 0` under a log barrier, Newton steps on the perturbed
//! KKT conditions, fraction-to-boundary, monotone barrier decrease and
//! inertia-correcting regularization of the reduced KKT matrix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Nlp;
use crate::sparse::{Csc, Ldl, LdlError, Triplets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpmOptions {
    pub tol_eq: f64,
    pub tol_ineq: f64,
    pub tol_stat: f64,
    pub tol_comp: f64,
    pub max_iter: usize,
    pub gamma0: f64,
    /// Trace one line per iteration to stderr.
    pub verbose: bool,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            tol_eq: 1e-6,
            tol_ineq: 1e-6,
            tol_stat: 1e-6,
            tol_comp: 1e-6,
            max_iter: 500,
            gamma0: 0.1,
            verbose: std::env::var_os("DDSOPF_IPM_TRACE").is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpmResult {
    pub x: Vec<f64>,
    pub lam: Vec<f64>,
    pub mu: Vec<f64>,
    pub z: Vec<f64>,
    /// Unscaled objective at `x`.
    pub objective: f64,
    pub iterations: usize,
    /// Scaled stationarity residual.
    pub stationarity: f64,
    pub eq_residual: f64,
    pub ineq_residual: f64,
    pub complementarity: f64,
    pub barrier: f64,
    pub objective_scale: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IpmError {
    #[error("problem appears infeasible after {iterations} iterations (violation {violation:e})")]
    Infeasible { iterations: usize, violation: f64 },
    #[error("iteration limit of {iterations} reached")]
    MaxIterations {
        iterations: usize,
        last: Box<IpmResult>,
    },
    #[error("numeric failure: {0}")]
    NumericFailure(String),
}

const TAU: f64 = 0.995;
const DELTA_C: f64 = 1e-8;
const STALL_LIMIT: usize = 60;
const MULTIPLIER_LIMIT: f64 = 1e10;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn one_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Rows of a coordinate matrix as `(col, val)` lists.
fn rows_of(t: &Triplets) -> Csc {
    let tt = Triplets {
        n_rows: t.n_cols,
        n_cols: t.n_rows,
        rows: t.cols.clone(),
        cols: t.rows.clone(),
        vals: t.vals.clone(),
    };
    tt.to_csc()
}

pub fn solve(nlp: &impl Nlp, x0: Vec<f64>, opts: &IpmOptions) -> Result<IpmResult, IpmError> {
    let n = nlp.n();
    let me = nlp.m_eq();
    let mi = nlp.m_ineq();
    assert_eq!(x0.len(), n);
    let dim = n + me;

    let mut x = x0;
    let g0 = nlp.gradient(&x);
    let gnorm = inf_norm(&g0);
    let sf = if gnorm > 100.0 { 100.0 / gnorm } else { 1.0 };

    let h0 = nlp.ineq(&x);
    let mut z: Vec<f64> = h0.iter().map(|&h| (-h).max(1.0)).collect();
    let mut gamma = opts.gamma0;
    let gamma_min = opts.tol_comp / 10.0;
    let mut mu: Vec<f64> = z.iter().map(|&zi| gamma / zi).collect();
    let mut lam = vec![0.0; me];

    let mut ldl: Option<Ldl> = None;
    let mut dw_last: f64 = 0.0;
    let mut best_feas = f64::INFINITY;
    let mut stall = 0usize;

    for it in 0..=opts.max_iter {
        let grad = nlp.gradient(&x);
        let c = nlp.eq(&x);
        let h = nlp.ineq(&x);
        let jc = nlp.eq_jacobian(&x);
        let jh = nlp.ineq_jacobian(&x);
        let jc_csc = jc.to_csc();
        let jh_csc = jh.to_csc();

        let mut lx: Vec<f64> = grad.iter().map(|g| sf * g).collect();
        for (a, b) in lx.iter_mut().zip(jc_csc.mul_t_vec(&lam)) {
            *a += b;
        }
        for (a, b) in lx.iter_mut().zip(jh_csc.mul_t_vec(&mu)) {
            *a += b;
        }

        let eq_inf = inf_norm(&c);
        let ineq_inf = h.iter().fold(0.0f64, |m, &v| m.max(v));
        let sd = ((one_norm(&lam) + one_norm(&mu)) / ((me + mi).max(1) as f64)).max(100.0) / 100.0;
        let sc = (one_norm(&mu) / (mi.max(1) as f64)).max(100.0) / 100.0;
        let stat = inf_norm(&lx) / sd;
        let comp = z.iter().zip(&mu).fold(0.0f64, |m, (a, b)| m.max(a * b)) / sc;

        let snapshot = |x: &[f64],
                        lam: &[f64],
                        mu: &[f64],
                        z: &[f64],
                        gamma: f64| IpmResult {
            x: x.to_vec(),
            lam: lam.to_vec(),
            mu: mu.to_vec(),
            z: z.to_vec(),
            objective: nlp.objective(x),
            iterations: it,
            stationarity: stat,
            eq_residual: eq_inf,
            ineq_residual: ineq_inf,
            complementarity: comp,
            barrier: gamma,
            objective_scale: sf,
        };

        if opts.verbose {
            eprintln!(
                "ipm {it:4} f={:.8e} eq={eq_inf:.2e} ineq={ineq_inf:.2e} stat={stat:.2e} comp={comp:.2e} gamma={gamma:.1e} dw={dw_last:.1e}",
                nlp.objective(&x)
            );
        }

        if eq_inf <= opts.tol_eq
            && ineq_inf <= opts.tol_ineq
            && stat <= opts.tol_stat
            && comp <= opts.tol_comp
        {
            return Ok(snapshot(&x, &lam, &mu, &z, gamma));
        }
        if it == opts.max_iter {
            return Err(IpmError::MaxIterations {
                iterations: it,
                last: Box::new(snapshot(&x, &lam, &mu, &z, gamma)),
            });
        }

        let feas = eq_inf.max(ineq_inf);
        if feas < 0.99 * best_feas {
            best_feas = feas;
            stall = 0;
        } else if feas > 10.0 * opts.tol_eq.max(opts.tol_ineq) {
            stall += 1;
        }
        let big = inf_norm(&lam).max(inf_norm(&mu));
        if stall > STALL_LIMIT || big > MULTIPLIER_LIMIT || !big.is_finite() {
            return Err(IpmError::Infeasible {
                iterations: it,
                violation: feas,
            });
        }

        // barrier update on inner convergence
        let hz = h.iter().zip(&z).fold(0.0f64, |m, (a, b)| m.max((a + b).abs()));
        loop {
            let cdev = z
                .iter()
                .zip(&mu)
                .fold(0.0f64, |m, (a, b)| m.max((a * b - gamma).abs()))
                / sc;
            let err = eq_inf.max(hz).max(stat).max(cdev);
            if err <= 10.0 * gamma && gamma > gamma_min {
                gamma = (gamma / 10.0).max(gamma_min);
            } else {
                break;
            }
        }

        // reduced KKT matrix, lower triangle
        let hess = nlp.hessian(&x, sf, &lam, &mu);
        let jh_rows = rows_of(&jh);
        let mut k = Triplets::with_capacity(dim, dim, hess.len() + jc.len() + dim + 8 * jh.len());
        for i in 0..dim {
            k.push(i, i, 0.0);
        }
        for t in 0..hess.len() {
            k.push_lower(hess.rows[t], hess.cols[t], hess.vals[t]);
        }
        for r in 0..mi {
            let d = mu[r] / z[r];
            let span = jh_rows.col_ptr[r]..jh_rows.col_ptr[r + 1];
            for a in span.clone() {
                for b in span.start..=a {
                    let (ca, cb) = (jh_rows.row_idx[a], jh_rows.row_idx[b]);
                    let v = d * jh_rows.vals[a] * jh_rows.vals[b];
                    k.push_lower(ca, cb, v);
                }
            }
        }
        for t in 0..jc.len() {
            k.push(n + jc.rows[t], jc.cols[t], jc.vals[t]);
        }
        let kkt = k.to_csc();

        let w: Vec<f64> = (0..mi).map(|r| (mu[r] * h[r] + gamma) / z[r]).collect();
        let mut rhs = vec![0.0; dim];
        let jtw = jh_csc.mul_t_vec(&w);
        for i in 0..n {
            rhs[i] = -(lx[i] + jtw[i]);
        }
        for r in 0..me {
            rhs[n + r] = -c[r];
        }

        let needs_analysis = ldl.as_ref().is_none_or(|l| !l.matches_pattern(&kkt));
        if needs_analysis {
            ldl = Some(Ldl::analyze(&kkt).map_err(|e| IpmError::NumericFailure(e.to_string()))?);
        }
        let fac = ldl.as_mut().unwrap();
        let mut shift = vec![0.0; dim];
        for s in shift.iter_mut().skip(n) {
            *s = -DELTA_C;
        }
        let good = |r: &Result<crate::sparse::Inertia, LdlError>| {
            matches!(r, Ok(i) if i.positive == n && i.negative == me)
        };
        let mut dw = 0.0;
        if !good(&fac.factor(&kkt, Some(&shift))) {
            dw = if dw_last == 0.0 { 1e-4 } else { (dw_last / 3.0).max(1e-20) };
            loop {
                for s in shift.iter_mut().take(n) {
                    *s = dw;
                }
                if good(&fac.factor(&kkt, Some(&shift))) {
                    break;
                }
                dw *= if dw_last == 0.0 { 100.0 } else { 8.0 };
                if dw > 1e40 {
                    return Err(IpmError::NumericFailure(
                        "inertia correction exhausted".to_string(),
                    ));
                }
            }
            dw_last = dw;
        }

        // solve with refinement against the matrix without the δc perturbation
        let apply = |v: &[f64]| {
            let mut y = kkt.sym_lower_mul_vec(v);
            for i in 0..n {
                y[i] += dw * v[i];
            }
            y
        };
        let mut sol = rhs.clone();
        fac.solve(&mut sol);
        let mut res_norm = f64::INFINITY;
        for _ in 0..5 {
            let r: Vec<f64> = apply(&sol).iter().zip(&rhs).map(|(a, b)| b - a).collect();
            let nr = inf_norm(&r);
            if nr <= 1e-12 * (1.0 + inf_norm(&rhs)) || nr >= 0.5 * res_norm {
                break;
            }
            res_norm = nr;
            let mut d = r;
            fac.solve(&mut d);
            for (s, di) in sol.iter_mut().zip(&d) {
                *s += di;
            }
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(IpmError::NumericFailure("non-finite Newton step".to_string()));
        }

        let dx = &sol[..n];
        let dlam = &sol[n..];
        let jdx = jh_csc.mul_vec(dx);
        let dz: Vec<f64> = (0..mi).map(|r| -h[r] - z[r] - jdx[r]).collect();
        let dmu: Vec<f64> = (0..mi)
            .map(|r| -mu[r] + (gamma - mu[r] * dz[r]) / z[r])
            .collect();

        let step = |v: &[f64], dv: &[f64]| {
            v.iter()
                .zip(dv)
                .filter(|(_, &d)| d < 0.0)
                .fold(1.0f64, |a, (&vi, &d)| a.min(-TAU * vi / d))
        };
        let ap = step(&z, &dz);
        let ad = step(&mu, &dmu);

        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += ap * d;
        }
        for (zi, d) in z.iter_mut().zip(&dz) {
            *zi += ap * d;
        }
        for (li, d) in lam.iter_mut().zip(dlam) {
            *li += ad * d;
        }
        for (mi_, d) in mu.iter_mut().zip(&dmu) {
            *mi_ += ad * d;
        }
    }
    unreachable!("loop returns at max_iter")
}
