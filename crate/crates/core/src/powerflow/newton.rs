use thiserror::Error;

use super::flows::{branch_models, bus_injections, BranchModel};
use super::{split_by_range, InjectionSpec, PfState};
use crate::netcase::{BusKind, Network};
use crate::sparse::{lu_solve, Triplets};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PfError {
    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:e})")]
    NonConvergence { iterations: usize, mismatch: f64 },
    #[error("singular power-flow Jacobian")]
    SingularJacobian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            tol: 1e-8,
            max_iter: 30,
        }
    }
}

struct Layout {
    // column of θ_i, v_i in the unknown vector (usize::MAX when fixed)
    t_col: Vec<usize>,
    v_col: Vec<usize>,
    n: usize,
}

const FIXED: usize = usize::MAX;

impl Layout {
    fn new(net: &Network) -> Layout {
        let nb = net.n_buses();
        let mut t_col = vec![FIXED; nb];
        let mut v_col = vec![FIXED; nb];
        let mut n = 0;
        for (i, t) in t_col.iter_mut().enumerate() {
            if i != net.slack {
                *t = n;
                n += 1;
            }
        }
        for (i, v) in v_col.iter_mut().enumerate() {
            if net.buses[i].kind == BusKind::Pq {
                *v = n;
                n += 1;
            }
        }
        Layout { t_col, v_col, n }
    }
}

/// Newton–Raphson in polar coordinates. Tries the warm start (if any), then a flat start.
pub fn solve_pf(
    net: &Network,
    spec: &InjectionSpec,
    warm: Option<&PfState>,
    opts: &PfOptions,
) -> Result<PfState, PfError> {
    let models = branch_models(net);
    let layout = Layout::new(net);
    let nb = net.n_buses();
    let fixed_v = |i: usize, v: f64| {
        if net.buses[i].kind == BusKind::Pq {
            v
        } else {
            spec.v_set[i]
        }
    };
    let flat: (Vec<f64>, Vec<f64>) = ((0..nb).map(|i| fixed_v(i, 1.0)).collect(), vec![0.0; nb]);

    let mut starts = Vec::with_capacity(2);
    if let Some(w) = warm {
        assert_eq!(w.v.len(), nb, "warm start dimension mismatch");
        starts.push(((0..nb).map(|i| fixed_v(i, w.v[i])).collect(), w.theta.clone()));
    }
    starts.push(flat);

    let mut sched_p = vec![0.0; nb];
    for (g, gen) in net.generators.iter().enumerate() {
        sched_p[gen.bus] += spec.gen_p[g];
    }
    let target_p: Vec<f64> = (0..nb).map(|i| sched_p[i] - spec.p_demand[i]).collect();

    let mut last_err = PfError::SingularJacobian;
    let mut spent = 0;
    for (mut v, mut theta) in starts {
        match newton(net, &models, &layout, &target_p, spec, &mut v, &mut theta, opts) {
            Ok(it) => return Ok(finish(net, &models, spec, v, theta, spent + it)),
            Err((e, it)) => {
                spent += it;
                last_err = e;
            }
        }
    }
    Err(last_err)
}

#[allow(clippy::too_many_arguments)]
fn newton(
    net: &Network,
    models: &[BranchModel],
    layout: &Layout,
    target_p: &[f64],
    spec: &InjectionSpec,
    v: &mut [f64],
    theta: &mut [f64],
    opts: &PfOptions,
) -> Result<usize, (PfError, usize)> {
    let nb = net.n_buses();
    let mut f = vec![0.0; layout.n];
    let mut it = 0;
    loop {
        let (p, q) = bus_injections(net, models, v, theta);
        let mut worst: f64 = 0.0;
        for i in 0..nb {
            if layout.t_col[i] != FIXED {
                let r = p[i] - target_p[i];
                f[layout.t_col[i]] = r;
                worst = worst.max(r.abs());
            }
            if layout.v_col[i] != FIXED {
                let r = q[i] + spec.q_demand[i];
                f[layout.v_col[i]] = r;
                worst = worst.max(r.abs());
            }
        }
        if !worst.is_finite() || worst > 1e10 {
            return Err((
                PfError::NonConvergence { iterations: it, mismatch: worst },
                it,
            ));
        }
        if worst <= opts.tol {
            return Ok(it);
        }
        if it >= opts.max_iter {
            return Err((
                PfError::NonConvergence { iterations: it, mismatch: worst },
                it,
            ));
        }
        let jac = jacobian(net, models, layout, v, theta).to_csc();
        let mut dx: Vec<f64> = f.iter().map(|r| -r).collect();
        lu_solve(&jac, &mut dx).map_err(|_| (PfError::SingularJacobian, it))?;
        for i in 0..nb {
            if layout.t_col[i] != FIXED {
                theta[i] += dx[layout.t_col[i]];
            }
            if layout.v_col[i] != FIXED {
                v[i] += dx[layout.v_col[i]];
            }
        }
        it += 1;
    }
}

fn jacobian(
    net: &Network,
    models: &[BranchModel],
    layout: &Layout,
    v: &[f64],
    theta: &[f64],
) -> Triplets {
    let mut t = Triplets::with_capacity(layout.n, layout.n, 16 * models.len() + 2 * v.len());
    let mut put = |row: usize, bus_i: usize, bus_j: usize, g: [f64; 4]| {
        if row == FIXED {
            return;
        }
        for (col, val) in [
            (layout.t_col[bus_i], g[0]),
            (layout.t_col[bus_j], g[1]),
            (layout.v_col[bus_i], g[2]),
            (layout.v_col[bus_j], g[3]),
        ] {
            if col != FIXED {
                t.push(row, col, val);
            }
        }
    };
    for m in models {
        let (fb, tb) = (m.from, m.to);
        put(layout.t_col[fb], fb, tb, m.pf.grad(v[fb], v[tb], theta[fb], theta[tb]).1);
        put(layout.v_col[fb], fb, tb, m.qf.grad(v[fb], v[tb], theta[fb], theta[tb]).1);
        put(layout.t_col[tb], tb, fb, m.pt.grad(v[tb], v[fb], theta[tb], theta[fb]).1);
        put(layout.v_col[tb], tb, fb, m.qt.grad(v[tb], v[fb], theta[tb], theta[fb]).1);
    }
    for (i, b) in net.buses.iter().enumerate() {
        let vc = layout.v_col[i];
        if vc == FIXED {
            continue;
        }
        if layout.t_col[i] != FIXED && b.g_shunt != 0.0 {
            t.push(layout.t_col[i], vc, 2.0 * b.g_shunt * v[i]);
        }
        if b.b_shunt != 0.0 {
            t.push(vc, vc, -2.0 * b.b_shunt * v[i]);
        }
    }
    t
}

fn finish(
    net: &Network,
    models: &[BranchModel],
    spec: &InjectionSpec,
    v: Vec<f64>,
    theta: Vec<f64>,
    iterations: usize,
) -> PfState {
    let (p, q) = bus_injections(net, models, &v, &theta);
    let mut pf = Vec::with_capacity(models.len());
    let mut qf = Vec::with_capacity(models.len());
    let mut pt = Vec::with_capacity(models.len());
    let mut qt = Vec::with_capacity(models.len());
    for m in models {
        let (a, b, c, d) = m.flows(&v, &theta);
        pf.push(a);
        qf.push(b);
        pt.push(c);
        qt.push(d);
    }
    let mut gen_p = spec.gen_p.clone();
    let mut gen_q = vec![0.0; net.generators.len()];
    for (bus, gens) in net.bus_generators().iter().enumerate() {
        if gens.is_empty() {
            continue;
        }
        if bus == net.slack {
            let scheduled: f64 = gens.iter().map(|&g| spec.gen_p[g]).sum();
            let extra = (p[bus] + spec.p_demand[bus] - scheduled) / gens.len() as f64;
            for &g in gens {
                gen_p[g] += extra;
            }
        }
        let lo: Vec<f64> = gens.iter().map(|&g| net.generators[g].q_min).collect();
        let hi: Vec<f64> = gens.iter().map(|&g| net.generators[g].q_max).collect();
        let split = split_by_range(q[bus] + spec.q_demand[bus], &lo, &hi);
        for (k, &g) in gens.iter().enumerate() {
            gen_q[g] = split[k];
        }
    }
    PfState {
        v,
        theta,
        p,
        q,
        pf,
        qf,
        pt,
        qt,
        gen_p,
        gen_q,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::super::testnet::*;
    use super::super::{apply_recourse, default_participation, OperatingPoint};
    use super::*;
    use crate::netcase::{validate, Line};
    use crate::uncertainty::BoxUncertainty;
    use nalgebra::{DMatrix, DVector};
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn two_bus(x: f64, p: f64, q: f64) -> Network {
        Network::new(
            100.0,
            vec![bus(1, BusKind::Slack, 0.0, 0.0), bus(2, BusKind::Pq, p, q)],
            vec![line(0, 1, 0.0, x)],
            vec![gen(0, 0.0, 5.0)],
            0,
        )
        .unwrap()
    }

    fn base_spec(net: &Network) -> InjectionSpec {
        InjectionSpec {
            gen_p: net.generators.iter().map(|g| 0.5 * (g.p_min + g.p_max)).collect(),
            p_demand: net.buses.iter().map(|b| b.p_load).collect(),
            q_demand: net.buses.iter().map(|b| b.q_load).collect(),
            v_set: net.generators.iter().fold(vec![1.0; net.n_buses()], |mut v, g| {
                v[g.bus] = g.v_set;
                v
            }),
        }
    }

    #[test]
    fn two_bus_matches_closed_form() {
        // lossless line, load P + jQ at bus 2, slack at v = 1
        for &(x, p, q) in &[(0.1, 1.0, 0.3), (0.05, 2.0, -0.2), (0.2, 0.5, 0.5)] {
            let net = two_bus(x, p, q);
            let st = solve_pf(&net, &base_spec(&net), None, &PfOptions::default()).unwrap();
            let a = 1.0 - 2.0 * q * x;
            let v2sq = 0.5 * (a + (a * a - 4.0 * x * x * (p * p + q * q)).sqrt());
            let th2 = -(p * x).atan2(q * x + v2sq);
            assert!((st.v[1] - v2sq.sqrt()).abs() < 1e-8, "v {} vs {}", st.v[1], v2sq.sqrt());
            assert!((st.theta[1] - th2).abs() < 1e-8);
            // lossless: slack supplies exactly the load
            assert!((st.gen_p[0] - p).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_load_gives_flat_solution() {
        let mut net = four_bus();
        for b in &mut net.buses {
            b.p_load = 0.0;
            b.q_load = 0.0;
        }
        let mut spec = base_spec(&net);
        spec.gen_p = vec![0.0; 3];
        spec.v_set = vec![1.02; 4];
        let st = solve_pf(&net, &spec, None, &PfOptions::default()).unwrap();
        for i in 0..4 {
            assert!((st.v[i] - 1.02).abs() < 1e-12);
            assert!(st.theta[i].abs() < 1e-12);
        }
        assert!(st.pf.iter().chain(&st.qt).all(|f| f.abs() < 1e-12));
    }

    #[test]
    fn residuals_vanish_and_warm_start_is_cheaper() {
        let net = four_bus();
        let alpha = default_participation(&net);
        let p0 = vec![0.8, 0.7, 0.2];
        let op = OperatingPoint::new(&net, p0, vec![1.02, 1.01], alpha).unwrap();
        let bx = BoxUncertainty::from_fraction(&net, 0.05, |_| true);
        let base = solve_pf(
            &net,
            &apply_recourse(&net, &op, &bx.base_scenario()),
            None,
            &PfOptions::default(),
        )
        .unwrap();
        for s in bx.sample_batch(20, 5) {
            let spec = apply_recourse(&net, &op, &s);
            let cold = solve_pf(&net, &spec, None, &PfOptions::default()).unwrap();
            let warm = solve_pf(&net, &spec, Some(&base), &PfOptions::default()).unwrap();
            assert!(warm.iterations <= cold.iterations);
            for (i, b) in net.buses.iter().enumerate() {
                let gp: f64 = (0..3).filter(|&g| net.generators[g].bus == i).map(|g| cold.gen_p[g]).sum();
                let gq: f64 = (0..3).filter(|&g| net.generators[g].bus == i).map(|g| cold.gen_q[g]).sum();
                assert!((cold.p[i] - (gp - spec.p_demand[i])).abs() < 1e-8, "P at {}", b.id);
                assert!((cold.q[i] - (gq - spec.q_demand[i])).abs() < 1e-8, "Q at {}", b.id);
            }
        }
    }

    #[test]
    fn flows_are_consistent_with_voltages() {
        let net = four_bus();
        let st = solve_pf(&net, &base_spec(&net), None, &PfOptions::default()).unwrap();
        let models = branch_models(&net);
        for (k, m) in models.iter().enumerate() {
            let (a, b, c, d) = m.flows(&st.v, &st.theta);
            assert_eq!((a, b, c, d), (st.pf[k], st.qf[k], st.pt[k], st.qt[k]));
        }
    }

    #[test]
    fn heavy_load_fails_cleanly() {
        let net = two_bus(0.5, 5.0, 2.0);
        let r = solve_pf(&net, &base_spec(&net), None, &PfOptions::default());
        assert!(matches!(r, Err(PfError::NonConvergence { .. }) | Err(PfError::SingularJacobian)));
    }

    // Independent dense solver: complex bus admittance matrix, finite-difference Jacobian.
    fn dense_oracle(net: &Network, spec: &InjectionSpec) -> Option<(Vec<f64>, Vec<f64>)> {
        let nb = net.n_buses();
        let mut y = vec![vec![Complex64::new(0.0, 0.0); nb]; nb];
        for l in &net.lines {
            let (f, t) = (l.from, l.to);
            let ys = Complex64::new(1.0, 0.0) / Complex64::new(l.r, l.x);
            let tap = Complex64::from_polar(l.tap, l.shift);
            let half = Complex64::new(0.0, l.charging / 2.0);
            y[f][f] += (ys + half) / (tap * tap.conj());
            y[f][t] += -ys / tap.conj();
            y[t][f] += -ys / tap;
            y[t][t] += ys + half;
        }
        for (i, b) in net.buses.iter().enumerate() {
            y[i][i] += Complex64::new(b.g_shunt, b.b_shunt);
        }
        let mut sched = vec![0.0; nb];
        for (g, gen) in net.generators.iter().enumerate() {
            sched[gen.bus] += spec.gen_p[g];
        }
        let pq: Vec<usize> = (0..nb).filter(|&i| net.buses[i].kind == BusKind::Pq).collect();
        let ns: Vec<usize> = (0..nb).filter(|&i| i != net.slack).collect();
        let unpack = |x: &DVector<f64>| {
            let mut v: Vec<f64> = (0..nb)
                .map(|i| if net.buses[i].kind == BusKind::Pq { 1.0 } else { spec.v_set[i] })
                .collect();
            let mut th = vec![0.0; nb];
            for (k, &i) in ns.iter().enumerate() {
                th[i] = x[k];
            }
            for (k, &i) in pq.iter().enumerate() {
                v[i] = x[ns.len() + k];
            }
            (v, th)
        };
        let resid = |x: &DVector<f64>| {
            let (v, th) = unpack(x);
            let vc: Vec<Complex64> = (0..nb).map(|i| Complex64::from_polar(v[i], th[i])).collect();
            let s: Vec<Complex64> = (0..nb)
                .map(|i| vc[i] * (0..nb).map(|j| y[i][j] * vc[j]).sum::<Complex64>().conj())
                .collect();
            let mut r = Vec::new();
            for &i in &ns {
                r.push(s[i].re - (sched[i] - spec.p_demand[i]));
            }
            for &i in &pq {
                r.push(s[i].im + spec.q_demand[i]);
            }
            DVector::from_vec(r)
        };
        let n = ns.len() + pq.len();
        let mut x = DVector::from_iterator(n, (0..n).map(|k| if k < ns.len() { 0.0 } else { 1.0 }));
        for _ in 0..50 {
            let r = resid(&x);
            if r.amax() < 1e-12 {
                let (v, th) = unpack(&x);
                return Some((v, th));
            }
            let h = 1e-7;
            let mut jac = DMatrix::zeros(n, n);
            for k in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                jac.set_column(k, &((resid(&xp) - resid(&xm)) / (2.0 * h)));
            }
            x -= jac.lu().solve(&r)?;
        }
        None
    }

    fn arb_net() -> impl Strategy<Value = (Network, InjectionSpec)> {
        (2usize..=4)
            .prop_flat_map(|nb| {
                (
                    Just(nb),
                    proptest::collection::vec((0.0..0.03f64, 0.05..0.2f64, 0.0..0.05f64, 0.95..1.05f64, -0.1..0.1f64), nb + 1),
                    proptest::collection::vec((0.0..0.6f64, -0.1..0.3f64, any::<bool>()), nb),
                    proptest::collection::vec(0.97..1.05f64, nb),
                )
            })
            .prop_map(|(nb, lines, loads, vs)| {
                let mut buses = Vec::new();
                for (i, &(p, q, pv)) in loads.iter().enumerate() {
                    let kind = if i == 0 {
                        BusKind::Slack
                    } else if pv {
                        BusKind::Pv
                    } else {
                        BusKind::Pq
                    };
                    buses.push(bus(i as u32 + 1, kind, p, q));
                }
                // spanning path plus one chord
                let mut ls: Vec<Line> = Vec::new();
                for (k, &(r, x, bc, tap, sh)) in lines.iter().enumerate() {
                    let (f, t) = if k + 1 < nb {
                        (k, k + 1)
                    } else if nb > 2 && k == nb - 1 {
                        (0, nb - 1)
                    } else {
                        continue;
                    };
                    let mut l = line(f, t, r, x);
                    l.charging = bc;
                    l.tap = tap;
                    l.shift = sh;
                    ls.push(l);
                }
                let mut gens = Vec::new();
                for (i, b) in buses.iter().enumerate() {
                    if b.kind != BusKind::Pq {
                        let mut g = gen(i, 0.0, 2.0);
                        g.v_set = vs[i];
                        gens.push(g);
                    }
                }
                let net = Network::new(100.0, buses, ls, gens, 0).unwrap();
                let mut spec = base_spec(&net);
                let total: f64 = net.buses.iter().map(|b| b.p_load).sum();
                let share = total / net.generators.len() as f64;
                spec.gen_p = vec![share; net.generators.len()];
                (net, spec)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn agrees_with_dense_oracle((net, spec) in arb_net()) {
            validate(&net).unwrap();
            let st = solve_pf(&net, &spec, None, &PfOptions::default()).unwrap();
            let (v, th) = dense_oracle(&net, &spec).expect("oracle diverged");
            for i in 0..net.n_buses() {
                prop_assert!((st.v[i] - v[i]).abs() < 1e-8);
                prop_assert!((st.theta[i] - th[i]).abs() < 1e-8);
            }
        }
    }
}
