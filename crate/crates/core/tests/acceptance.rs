//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria that reproduce published numbers are reported but only gate the
//! test when `DDSOPF_STRICT_ACCEPTANCE=1`; the implementation checks (7, 8 and
//! the large-case smoke test) always gate.

use std::f64::consts::PI;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ddsopf::construct::{enhance, fit_direction, score, select_dominant, Direction, Policy};
use ddsopf::driver::{load_case, run_ddsopf_on, run_random_baseline_on, DriverError, RunConfig, RunOutcome};
use ddsopf::montecarlo::{assess, hoeffding_bound, AssessOptions};
use ddsopf::netcase::{Bus, BusKind, GenCost, Generator, Line, Network};
use ddsopf::powerflow::{apply_recourse, default_participation, solve_scenario, OperatingPoint, PfState};
use ddsopf::sopf::deterministic_opf;
use ddsopf::uncertainty::{BoxUncertainty, BusFilter, FluctuationBounds, Scenario};

struct Verdict {
    id: &'static str,
    name: &'static str,
    gates: bool,
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Ledger {
    lines: Vec<Verdict>,
}

impl Ledger {
    fn record(&mut self, id: &'static str, name: &'static str, gates: bool, pass: bool, detail: String) {
        println!("[{}] criterion {id} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push(Verdict { id, name, gates, pass, detail });
    }
}

fn case_path(pglib: &str, bundled: &str) -> PathBuf {
    if let Ok(dir) = std::env::var("DDSOPF_CASE_DIR") {
        let p = PathBuf::from(dir).join(pglib);
        if p.exists() {
            return p;
        }
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../cases").join(bundled)
}

fn case24() -> PathBuf {
    case_path("pglib_opf_case24_ieee_rts.m", "case24_ieee_rts.m")
}
fn case73() -> PathBuf {
    case_path("pglib_opf_case73_ieee_rts.m", "case73_rts96.m")
}
fn case118() -> PathBuf {
    case_path("pglib_opf_case118_ieee.m", "case118.m")
}
fn case1354() -> PathBuf {
    case_path("pglib_opf_case1354_pegase.m", "case1354pegase.m")
}

fn file_name(p: &std::path::Path) -> String {
    p.file_name().unwrap().to_string_lossy().into_owned()
}

fn config(case: PathBuf, policy: Policy) -> RunConfig {
    RunConfig {
        case,
        policy,
        ..RunConfig::default()
    }
}

/// Converged run, the unconverged outcome, or the error text.
fn run(net: &Network, cfg: &RunConfig) -> Result<RunOutcome, String> {
    match run_ddsopf_on(net, cfg) {
        Ok(o) => Ok(o),
        Err(DriverError::MaxIterationsExceeded(o)) => Err(format!(
            "no convergence in {} iterations (|Omega| = {}, P_vio = {:.2}%)",
            o.report.iterations,
            o.report.omega_size,
            100.0 * o.report.out_of_sample.sv_estimate
        )),
        Err(e) => Err(e.to_string()),
    }
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target.abs()
}

fn describe(o: &RunOutcome) -> String {
    format!(
        "{} iterations, |Omega| = {}, P_vio = {:.2}%, cost = {:.4e}",
        o.report.iterations,
        o.report.omega_size,
        100.0 * o.report.out_of_sample.sv_estimate,
        o.report.objective
    )
}

fn criterion_1(l: &mut Ledger, net73: &Network) -> Option<f64> {
    let cfg = config(case73(), Policy::Mv);
    match run(net73, &cfg) {
        Ok(o) => {
            let r = &o.report;
            let pass = r.iterations <= 3
                && r.omega_size <= 16
                && r.out_of_sample.sv_estimate <= 0.005
                && within(r.objective, 1.948e5, 0.01);
            l.record("1", "73-bus convergence", false, pass, format!("{} on {}", describe(&o), file_name(&cfg.case)));
            Some(r.out_of_sample.sv_estimate)
        }
        Err(e) => {
            l.record("1", "73-bus convergence", false, false, format!("{e} on {}", file_name(&cfg.case)));
            None
        }
    }
}

fn criterion_2(l: &mut Ledger) {
    let cfg = config(case24(), Policy::Mv);
    let net = load_case(&cfg.case).unwrap();
    let (pass, detail) = match run(&net, &cfg) {
        Ok(o) => {
            let r = &o.report;
            let pass = r.iterations <= 6
                && r.omega_size <= 15
                && r.out_of_sample.sv_estimate <= 0.005
                && within(r.objective, 6.502e4, 0.01);
            (pass, describe(&o))
        }
        Err(e) => (false, e),
    };
    l.record("2", "24-bus convergence", false, pass, format!("{detail} on {}", file_name(&cfg.case)));
}

fn criterion_3(l: &mut Ledger, net73: &Network) {
    let ablated = RunConfig {
        lambda_frac: 1.0,
        ..config(case73(), Policy::Nc)
    };
    let enhanced = config(case73(), Policy::Nc);
    let (pass, detail) = match (run(net73, &ablated), run(net73, &enhanced)) {
        (Ok(a), Ok(e)) => {
            let (na, ne) = (a.report.omega_size, e.report.omega_size);
            let reduction = 1.0 - ne as f64 / na as f64;
            let pass = na <= 45 && a.report.out_of_sample.sv_estimate <= 0.005 && reduction >= 0.4;
            (
                pass,
                format!(
                    "selection only: {}; with enhancement: {}; reduction {:.0}%",
                    describe(&a),
                    describe(&e),
                    100.0 * reduction
                ),
            )
        }
        (a, e) => (
            false,
            format!(
                "selection only: {}; with enhancement: {}",
                a.map(|o| describe(&o)).unwrap_or_else(|s| s),
                e.map(|o| describe(&o)).unwrap_or_else(|s| s)
            ),
        ),
    };
    l.record("3", "selection-only ablation", false, pass, detail);
}

fn criterion_4(l: &mut Ledger, net73: &Network, c1: Option<f64>) {
    let cfg = config(case73(), Policy::Mv);
    let (pass, detail) = match run_random_baseline_on(net73, &cfg, 50) {
        Ok(o) => {
            let v = o.report.out_of_sample.sv_estimate;
            match c1 {
                Some(c1) => (
                    v >= 0.03 && v > c1,
                    format!("random n = 50 leaves {:.2}% against {:.2}% for criterion 1", 100.0 * v, 100.0 * c1),
                ),
                None => (
                    false,
                    format!(
                        "random n = 50 leaves {:.2}%; no criterion 1 result to compare against",
                        100.0 * v
                    ),
                ),
            }
        }
        Err(e) => (false, e.to_string()),
    };
    l.record("4", "random baseline gap", false, pass, detail);
}

fn criterion_5_6(l: &mut Ledger, net73: &Network) {
    let mut insecure = Vec::new();
    let mut costs = Vec::new();
    let mut pass5 = true;
    let mut pass6 = true;
    for (path, target) in [(case24(), 6.34e4), (case73(), 1.90e5), (case118(), 9.72e4)] {
        let net = if path == case73() { net73.clone() } else { load_case(&path).unwrap() };
        let det = deterministic_opf(&net, &default_participation(&net)).unwrap();
        let ok = within(det.objective, target, 0.01);
        pass6 &= ok;
        costs.push(format!("{} {:.4e} (target {:.3e})", file_name(&path), det.objective, target));
        if target != 6.34e4 {
            let bx = BoxUncertainty::with_filter(&net, 0.03, BusFilter::AllLoads);
            let rep = assess(&net, &det.op, &bx, 1000, 42, &AssessOptions::default()).unwrap();
            pass5 &= rep.sv_estimate >= 0.95;
            insecure.push(format!("{} {:.1}%", file_name(&path), 100.0 * rep.sv_estimate));
        }
    }
    l.record("5", "base-case insecurity", false, pass5, insecure.join(", "));
    l.record("6", "deterministic base costs", false, pass6, costs.join(", "));
}

fn criterion_7(l: &mut Ledger, net24: &Network) {
    let b = hoeffding_bound(0.0, 1000, 1.0, 0.05);
    // independent evaluation: sqrt(2 ln(1/δ) / S)
    let oracle = (2.0 * (20.0f64).ln() / 1000.0).sqrt();
    let cfg = config(case24(), Policy::Mv);
    let note = run_random_baseline_on(net24, &cfg, 0).map(|o| o.report.bound_note).unwrap_or_default();
    let documented = note.contains("0.0774") && note.contains("not below 1%");
    let pass = (b.bound - oracle).abs() < 1e-6 && documented;
    l.record(
        "7",
        "Hoeffding arithmetic",
        true,
        pass,
        format!("bound {:.8} vs {:.8}; report note present: {documented}", b.bound, oracle),
    );
}

fn rand_net(rng: &mut ChaCha8Rng) -> Network {
    let n = rng.random_range(2..=4usize);
    let kind = |i: usize| match i {
        0 => BusKind::Slack,
        1 if n > 2 => BusKind::Pv,
        _ => BusKind::Pq,
    };
    let buses = (0..n)
        .map(|i| Bus {
            id: (i + 1) as u32,
            kind: kind(i),
            p_load: if i == 0 { 0.0 } else { rng.random_range(0.0..0.6) },
            q_load: if i == 0 { 0.0 } else { rng.random_range(-0.1..0.3) },
            g_shunt: rng.random_range(0.0..0.05),
            b_shunt: rng.random_range(-0.05..0.1),
            v_min: 0.9,
            v_max: 1.1,
        })
        .collect();
    let mut lines = Vec::new();
    for i in 1..n {
        let from = rng.random_range(0..i);
        lines.push(Line {
            from,
            to: i,
            r: rng.random_range(0.005..0.05),
            x: rng.random_range(0.05..0.3),
            charging: rng.random_range(0.0..0.1),
            tap: if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.95..1.05) },
            shift: if rng.random_bool(0.7) { 0.0 } else { rng.random_range(-0.1..0.1) },
            s_max: None,
            angle_min: -PI,
            angle_max: PI,
        });
    }
    let gen = |bus| Generator {
        bus,
        p_min: 0.0,
        p_max: 2.0,
        q_min: -2.0,
        q_max: 2.0,
        v_set: 1.0,
        cost: GenCost { c2: 0.0, c1: 10.0, c0: 0.0 },
    };
    let mut gens = vec![gen(0)];
    if n > 2 {
        gens.push(gen(1));
    }
    Network::new(100.0, buses, lines, gens, 0).unwrap()
}

/// Dense complex bus injections `S = V conj(Y V)`.
fn dense_injections(net: &Network, st: &PfState) -> Vec<Complex64> {
    let n = net.n_buses();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for l in &net.lines {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(l.r, l.x);
        let t = Complex64::from_polar(l.tap, l.shift);
        let bc = Complex64::new(0.0, l.charging / 2.0);
        y[l.from][l.from] += (ys + bc) / (l.tap * l.tap);
        y[l.to][l.to] += ys + bc;
        y[l.from][l.to] -= ys / t.conj();
        y[l.to][l.from] -= ys / t;
    }
    for (i, b) in net.buses.iter().enumerate() {
        y[i][i] += Complex64::new(b.g_shunt, b.b_shunt);
    }
    let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(st.v[i], st.theta[i])).collect();
    (0..n)
        .map(|i| {
            let iy: Complex64 = (0..n).map(|j| y[i][j] * v[j]).sum();
            v[i] * iy.conj()
        })
        .collect()
}

fn pf_oracle_equivalence() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut solved = 0;
    for trial in 0..200 {
        let net = rand_net(&mut rng);
        let ng = net.generators.len();
        let p0 = vec![0.1; ng];
        let v0 = vec![1.0 + rng.random_range(-0.03..0.03); net.controlled_buses().len()];
        let op = OperatingPoint::new(&net, p0, v0, default_participation(&net)).unwrap();
        let base = BoxUncertainty::with_filter(&net, 0.0, BusFilter::AllLoads).base_scenario();
        let Ok(st) = solve_scenario(&net, &op, &base, None) else { continue };
        solved += 1;
        for (i, s) in dense_injections(&net, &st).iter().enumerate() {
            if (s.re - st.p[i]).abs() > 1e-8 || (s.im - st.q[i]).abs() > 1e-8 {
                return Err(format!("trial {trial} bus {i}: dense {s} vs ({}, {})", st.p[i], st.q[i]));
            }
            let b = &net.buses[i];
            if b.kind == BusKind::Pq && ((s.re + b.p_load).abs() > 1e-8 || (s.im + b.q_load).abs() > 1e-8) {
                return Err(format!("trial {trial} bus {i}: PQ injection does not match demand"));
            }
        }
    }
    if solved < 150 {
        return Err(format!("only {solved} of 200 random flows converged"));
    }
    Ok(solved)
}

fn sign_pattern_oracle(cols: &[Vec<f64>], y: &[f64], lambda: f64) -> f64 {
    let (m, p) = (y.len(), cols.len());
    let mut best = f64::INFINITY;
    for code in 0..3usize.pow(p as u32) {
        let signs: Vec<f64> = (0..p).map(|j| (code / 3usize.pow(j as u32) % 3) as f64 - 1.0).collect();
        let active: Vec<usize> = (0..p).filter(|&j| signs[j] != 0.0).collect();
        let a = DMatrix::from_fn(m, active.len() + 1, |i, c| if c == 0 { 1.0 } else { cols[active[c - 1]][i] });
        let yv = DVector::from_column_slice(y);
        let mut rhs = a.transpose() * &yv;
        for (c, &j) in active.iter().enumerate() {
            rhs[c + 1] -= 0.5 * lambda * signs[j];
        }
        let Some(sol) = (a.transpose() * &a).lu().solve(&rhs) else { continue };
        if active.iter().enumerate().any(|(c, &j)| sol[c + 1] * signs[j] <= 0.0) {
            continue;
        }
        let obj = (&yv - &a * &sol).norm_squared() + lambda * sol.iter().skip(1).map(|v| v.abs()).sum::<f64>();
        best = best.min(obj);
    }
    best
}

fn lasso_oracle() -> Result<usize, String> {
    let unit = FluctuationBounds { p_lo: -1.0, p_hi: 1.0, q_lo: 0.0, q_hi: 0.0 };
    let bx = BoxUncertainty::new(vec![0, 1, 2], vec![unit; 3]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut count = 0;
    for trial in 0..60 {
        let frac = [0.0, 0.05, 0.3, 0.7, 1.1][trial % 5];
        let samples: Vec<Scenario> = (0..6)
            .map(|k| {
                let mut s = bx.sample_one(trial as u64, k);
                s.dp = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                s
            })
            .collect();
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..2.0)).collect();
        let pairs: Vec<(&Scenario, f64)> = samples.iter().zip(y.iter().copied()).collect();
        let d = fit_direction(&pairs, &bx, frac).map_err(|e| e.to_string())?;
        let cols: Vec<Vec<f64>> = (0..3).map(|j| samples.iter().map(|s| s.dp[j]).collect()).collect();
        let obj: f64 = (0..6)
            .map(|i| (y[i] - d.intercept - (0..3).map(|j| d.dp[j] * cols[j][i]).sum::<f64>()).powi(2))
            .sum::<f64>()
            + d.lambda * d.dp.iter().map(|v| v.abs()).sum::<f64>();
        let best = sign_pattern_oracle(&cols, &y, d.lambda);
        if (obj - best).abs() > 1e-6 {
            return Err(format!("trial {trial}: lasso {obj} vs oracle {best}"));
        }
        count += 1;
    }
    Ok(count)
}

fn enhancement_properties(net: &Network) -> Result<usize, String> {
    let bx = BoxUncertainty::with_filter(net, 0.03, BusFilter::AllLoads);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..100 {
        let t = bx.sample_one(9, k);
        let mut d = Direction::zero(bx.len());
        for i in 0..bx.len() {
            d.dp[i] = rng.random_range(-0.01..0.01);
            d.dq[i] = rng.random_range(-0.01..0.01);
        }
        let e = enhance(&t, &d, &bx, 1e-3);
        if !bx.contains(&e) {
            return Err(format!("sample {k}: enhanced point leaves the box"));
        }
        if !enhance(&e, &d, &bx, 1e-3).same_point(&e) {
            return Err(format!("sample {k}: enhancement is not idempotent"));
        }
    }
    Ok(100)
}

fn dedup_and_schedule(net: &Network) -> Result<String, String> {
    let alpha = default_participation(net);
    let det = deterministic_opf(net, &alpha).map_err(|e| e.to_string())?;
    let bx = BoxUncertainty::with_filter(net, 0.03, BusFilter::AllLoads);
    let one = assess(net, &det.op, &bx, 300, 3, &AssessOptions { workers: Some(1) }).map_err(|e| e.to_string())?;
    let many = assess(net, &det.op, &bx, 300, 3, &AssessOptions { workers: Some(4) }).map_err(|e| e.to_string())?;
    if !one.same_outcome(&many) {
        return Err("1-worker and 4-worker assessments differ".into());
    }
    for policy in [Policy::Mv, Policy::Nc, Policy::Hybrid] {
        let ranked = score(&one.records, policy).map_err(|e| e.to_string())?;
        for k in [1, 5, 20] {
            let picked = select_dominant(&ranked, k, &[]);
            let mut sets: Vec<_> = picked.iter().map(|s| s.constraint_set.clone()).collect();
            sets.sort();
            sets.dedup();
            if picked.len() > k || sets.len() != picked.len() {
                return Err(format!("{policy} k = {k}: duplicate constraint sets selected"));
            }
        }
    }
    Ok(format!("{} violating samples", one.violating))
}

fn recourse_properties(net: &Network) -> Result<(), String> {
    let alpha = default_participation(net);
    let sum: f64 = alpha.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(format!("sum of participation factors is {sum}"));
    }
    let det = deterministic_opf(net, &alpha).map_err(|e| e.to_string())?;
    let bx = BoxUncertainty::with_filter(net, 0.03, BusFilter::AllLoads);
    for k in 0..20 {
        let a = bx.sample_one(21, 2 * k);
        let b = bx.sample_one(21, 2 * k + 1);
        let mut ab = a.clone();
        for i in 0..ab.dp.len() {
            ab.dp[i] += b.dp[i];
            ab.dq[i] += b.dq[i];
        }
        let shift = |s: &Scenario| -> Vec<f64> {
            let spec = apply_recourse(net, &det.op, s);
            spec.gen_p.iter().zip(&det.op.p0).map(|(g, p)| g - p).collect()
        };
        let (sa, sb, sab) = (shift(&a), shift(&b), shift(&ab));
        for g in 0..sa.len() {
            if (sab[g] - sa[g] - sb[g]).abs() > 1e-12 {
                return Err(format!("recourse is not linear at unit {g}"));
            }
        }
        let total: f64 = sa.iter().sum();
        if (total - a.total_dp()).abs() > 1e-12 {
            return Err(format!("recourse moves {total} against a mismatch of {}", a.total_dp()));
        }
    }
    Ok(())
}

fn criterion_8(l: &mut Ledger, net24: &Network) {
    let mut parts = Vec::new();
    let mut pass = true;
    let mut check = |name: &str, r: Result<String, String>| match r {
        Ok(s) => parts.push(format!("{name} ok ({s})")),
        Err(e) => {
            pass = false;
            parts.push(format!("{name} FAILED: {e}"));
        }
    };
    check("PF oracle", pf_oracle_equivalence().map(|n| format!("{n} nets")));
    check("lasso oracle", lasso_oracle().map(|n| format!("{n} instances")));
    check("enhancement", enhancement_properties(net24).map(|n| format!("{n} points")));
    check("dedup and schedule", dedup_and_schedule(net24));
    check("recourse", recourse_properties(net24).map(|_| "20 pairs".into()));
    l.record("8", "property suites", true, pass, parts.join("; "));
}

fn smoke_1354(l: &mut Ledger) {
    let path = case1354();
    let detail = (|| -> Result<String, String> {
        let net = load_case(&path).map_err(|e| e.to_string())?;
        let load: f64 = net.buses.iter().map(|b| b.p_load).sum();
        let cap: f64 = net.generators.iter().map(|g| g.p_max).sum();
        let p0: Vec<f64> = net
            .generators
            .iter()
            .map(|g| (g.p_max * load / cap).clamp(g.p_min, g.p_max))
            .collect();
        let v0: Vec<f64> = net
            .controlled_buses()
            .iter()
            .map(|&b| net.generators.iter().find(|g| g.bus == b).map_or(1.0, |g| g.v_set))
            .collect();
        let op = OperatingPoint::new(&net, p0, v0, default_participation(&net)).map_err(|e| e.to_string())?;
        let base = BoxUncertainty::with_filter(&net, 0.0, BusFilter::AllLoads).base_scenario();
        let st = solve_scenario(&net, &op, &base, None).map_err(|e| e.to_string())?;
        Ok(format!("{} buses, base flow converged in {} iterations", net.n_buses(), st.iterations))
    })();
    let pass = detail.is_ok();
    l.record(
        "smoke",
        "1354-bus parse and power flow",
        true,
        pass,
        format!("{} on {}", detail.unwrap_or_else(|e| e), file_name(&path)),
    );
}

fn main() {
    let strict = std::env::var("DDSOPF_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1");
    let net24 = load_case(&case24()).unwrap();
    let net73 = load_case(&case73()).unwrap();
    let mut l = Ledger::default();
    let c1 = criterion_1(&mut l, &net73);
    criterion_2(&mut l);
    criterion_3(&mut l, &net73);
    criterion_4(&mut l, &net73, c1);
    criterion_5_6(&mut l, &net73);
    criterion_7(&mut l, &net24);
    criterion_8(&mut l, &net24);
    smoke_1354(&mut l);

    println!("\nsummary");
    for c in &l.lines {
        println!(
            "  {:<6} {:<32} {}{}",
            c.id,
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            if c.gates || strict { "" } else { " (report only)" }
        );
    }
    let failed: Vec<_> = l.lines.iter().filter(|c| !c.pass && (c.gates || strict)).collect();
    assert!(
        failed.is_empty(),
        "failed: {}",
        failed.iter().map(|c| format!("{} ({})", c.id, c.detail)).collect::<Vec<_>>().join("; ")
    );
}
