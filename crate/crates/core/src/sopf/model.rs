//! The multi-scenario AC-OPF as an [`Nlp`].
//!
//! Variables: first-stage `p0` (dispatchable units) and `v0` (controlled
//! buses), then per scenario `θ` (non-slack buses), `v` (PQ buses), `q`
//! (units with a reactive range) and, except in the base scenario, the slack
//! absorption `e`. Voltages at controlled buses are `v0` in every scenario.

use serde_json::{json, Value};

use crate::netcase::{BusKind, Network};
use crate::nlp::Nlp;
use crate::powerflow::flows::{branch_models, bus_injections, BranchModel, EndTerm};
use crate::powerflow::{OperatingPoint, PfState};
use crate::sparse::Triplets;
use crate::uncertainty::Scenario;

pub(crate) const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
struct Block {
    theta: Vec<usize>,
    v: Vec<usize>,
    q: Vec<usize>,
    e: usize,
    start: usize,
    end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RowLabel {
    FlowFrom(usize, usize),
    FlowTo(usize, usize),
    AngleMax(usize, usize),
    AngleMin(usize, usize),
    VMax(usize, usize),
    VMin(usize, usize),
    QMax(usize, usize),
    QMin(usize, usize),
    PMax(usize, usize),
    PMin(usize, usize),
    P0Max(usize),
    P0Min(usize),
    V0Max(usize),
    V0Min(usize),
}

#[derive(Debug, Clone)]
enum IneqKind {
    /// `pf² + qf² − s² ≤ 0` at one end.
    Flow { s: usize, line: usize, from_end: bool, s_max: f64 },
    /// `Σ coef·x + constant ≤ 0`.
    Linear { terms: Vec<(usize, f64)>, constant: f64 },
}

#[derive(Debug, Clone)]
struct IneqRow {
    kind: IneqKind,
    label: RowLabel,
}

pub struct SopfModel<'a> {
    net: &'a Network,
    models: Vec<BranchModel>,
    alpha: Vec<f64>,
    p0_var: Vec<usize>,
    v0_var: Vec<usize>,
    controlled: Vec<usize>,
    bus_gens: Vec<Vec<usize>>,
    n_slack_gens: usize,
    blocks: Vec<Block>,
    pd: Vec<Vec<f64>>,
    qd: Vec<Vec<f64>>,
    mismatch: Vec<f64>,
    ineq_rows: Vec<IneqRow>,
    n: usize,
    nb: usize,
}

fn ranged(lo: f64, hi: f64) -> bool {
    hi - lo > 1e-9
}

impl<'a> SopfModel<'a> {
    pub fn new(net: &'a Network, scenarios: &[Scenario], alpha: &[f64]) -> Self {
        let nb = net.n_buses();
        let ng = net.generators.len();
        let mut n = 0;
        let next = |cond: bool, n: &mut usize| {
            if cond {
                *n += 1;
                *n - 1
            } else {
                NONE
            }
        };
        let p0_var: Vec<usize> = net
            .generators
            .iter()
            .map(|g| next(ranged(g.p_min, g.p_max), &mut n))
            .collect();
        let controlled = net.controlled_buses();
        let mut v0_var = vec![NONE; nb];
        for &b in &controlled {
            v0_var[b] = next(true, &mut n);
        }
        let mut blocks = Vec::with_capacity(scenarios.len());
        for s in 0..scenarios.len() {
            let start = n;
            let theta = (0..nb).map(|i| next(i != net.slack, &mut n)).collect();
            let v = (0..nb)
                .map(|i| next(net.buses[i].kind == BusKind::Pq, &mut n))
                .collect();
            let q = net
                .generators
                .iter()
                .map(|g| next(ranged(g.q_min, g.q_max), &mut n))
                .collect();
            let e = next(s > 0, &mut n);
            blocks.push(Block { theta, v, q, e, start, end: n });
        }
        let bus_gens = net.bus_generators();
        let n_slack_gens = bus_gens[net.slack].len();

        let mut pd = Vec::new();
        let mut qd = Vec::new();
        let mut mismatch = Vec::new();
        for sc in scenarios {
            let (dp, dq) = sc.per_bus(nb);
            pd.push(net.buses.iter().zip(&dp).map(|(b, d)| b.p_load + d).collect());
            qd.push(net.buses.iter().zip(&dq).map(|(b, d)| b.q_load + d).collect());
            mismatch.push(sc.total_dp());
        }

        let mut m = SopfModel {
            net,
            models: branch_models(net),
            alpha: alpha.to_vec(),
            p0_var,
            v0_var,
            controlled,
            bus_gens,
            n_slack_gens,
            blocks,
            pd,
            qd,
            mismatch,
            ineq_rows: Vec::new(),
            n,
            nb,
        };
        m.ineq_rows = m.build_ineq_rows();
        debug_assert!(ng == m.alpha.len());
        m
    }

    fn build_ineq_rows(&self) -> Vec<IneqRow> {
        let net = self.net;
        let mut rows = Vec::new();
        let bound = |rows: &mut Vec<IneqRow>, var: usize, lo: f64, hi: f64, lh: RowLabel, ll: RowLabel| {
            rows.push(IneqRow {
                kind: IneqKind::Linear { terms: vec![(var, 1.0)], constant: -hi },
                label: lh,
            });
            rows.push(IneqRow {
                kind: IneqKind::Linear { terms: vec![(var, -1.0)], constant: lo },
                label: ll,
            });
        };
        for (g, gen) in net.generators.iter().enumerate() {
            if self.p0_var[g] != NONE {
                bound(&mut rows, self.p0_var[g], gen.p_min, gen.p_max, RowLabel::P0Max(g), RowLabel::P0Min(g));
            }
        }
        for &b in &self.controlled {
            let bus = &net.buses[b];
            bound(&mut rows, self.v0_var[b], bus.v_min, bus.v_max, RowLabel::V0Max(b), RowLabel::V0Min(b));
        }
        for (s, blk) in self.blocks.iter().enumerate() {
            for (k, l) in net.lines.iter().enumerate() {
                if let Some(smax) = l.s_max {
                    rows.push(IneqRow {
                        kind: IneqKind::Flow { s, line: k, from_end: true, s_max: smax },
                        label: RowLabel::FlowFrom(s, k),
                    });
                    rows.push(IneqRow {
                        kind: IneqKind::Flow { s, line: k, from_end: false, s_max: smax },
                        label: RowLabel::FlowTo(s, k),
                    });
                }
            }
            for (k, l) in net.lines.iter().enumerate() {
                let mut terms = Vec::new();
                if blk.theta[l.from] != NONE {
                    terms.push((blk.theta[l.from], 1.0));
                }
                if blk.theta[l.to] != NONE {
                    terms.push((blk.theta[l.to], -1.0));
                }
                let neg: Vec<(usize, f64)> = terms.iter().map(|&(v, c)| (v, -c)).collect();
                rows.push(IneqRow {
                    kind: IneqKind::Linear { terms, constant: -l.angle_max },
                    label: RowLabel::AngleMax(s, k),
                });
                rows.push(IneqRow {
                    kind: IneqKind::Linear { terms: neg, constant: l.angle_min },
                    label: RowLabel::AngleMin(s, k),
                });
            }
            for (i, bus) in net.buses.iter().enumerate() {
                if blk.v[i] != NONE {
                    bound(&mut rows, blk.v[i], bus.v_min, bus.v_max, RowLabel::VMax(s, i), RowLabel::VMin(s, i));
                }
            }
            for (g, gen) in net.generators.iter().enumerate() {
                if blk.q[g] != NONE {
                    bound(&mut rows, blk.q[g], gen.q_min, gen.q_max, RowLabel::QMax(s, g), RowLabel::QMin(s, g));
                }
            }
            if s == 0 {
                continue;
            }
            for (g, gen) in net.generators.iter().enumerate() {
                let slack_gen = gen.bus == net.slack;
                let mut terms = Vec::new();
                if self.p0_var[g] != NONE {
                    terms.push((self.p0_var[g], 1.0));
                }
                if slack_gen {
                    terms.push((blk.e, 1.0 / self.n_slack_gens as f64));
                }
                // a row with nothing to act on cannot be influenced by dispatch
                if terms.is_empty() || (self.alpha[g] == 0.0 && !slack_gen) {
                    continue;
                }
                let fixed = if self.p0_var[g] == NONE { gen.p_min } else { 0.0 };
                let shift = fixed + self.mismatch[s] * self.alpha[g];
                let neg: Vec<(usize, f64)> = terms.iter().map(|&(v, c)| (v, -c)).collect();
                rows.push(IneqRow {
                    kind: IneqKind::Linear { terms, constant: shift - gen.p_max },
                    label: RowLabel::PMax(s, g),
                });
                rows.push(IneqRow {
                    kind: IneqKind::Linear { terms: neg, constant: gen.p_min - shift },
                    label: RowLabel::PMin(s, g),
                });
            }
        }
        rows
    }

    pub fn n_scenarios(&self) -> usize {
        self.blocks.len()
    }

    #[inline]
    fn vvar(&self, s: usize, i: usize) -> usize {
        let b = self.blocks[s].v[i];
        if b != NONE {
            b
        } else {
            self.v0_var[i]
        }
    }

    fn p0_value(&self, x: &[f64], g: usize) -> f64 {
        match self.p0_var[g] {
            NONE => self.net.generators[g].p_min,
            k => x[k],
        }
    }

    fn q_value(&self, x: &[f64], s: usize, g: usize) -> f64 {
        match self.blocks[s].q[g] {
            NONE => self.net.generators[g].q_min,
            k => x[k],
        }
    }

    /// Realized real output of unit `g` in scenario `s`.
    fn gen_p(&self, x: &[f64], s: usize, g: usize) -> f64 {
        let mut p = self.p0_value(x, g) + self.mismatch[s] * self.alpha[g];
        if s > 0 && self.net.generators[g].bus == self.net.slack {
            p += x[self.blocks[s].e] / self.n_slack_gens as f64;
        }
        p
    }

    fn voltages(&self, x: &[f64], s: usize) -> (Vec<f64>, Vec<f64>) {
        let blk = &self.blocks[s];
        let v = (0..self.nb).map(|i| x[self.vvar(s, i)]).collect();
        let t = (0..self.nb)
            .map(|i| if blk.theta[i] == NONE { 0.0 } else { x[blk.theta[i]] })
            .collect();
        (v, t)
    }

    fn local(&self, s: usize, m: &BranchModel, from_end: bool) -> [usize; 4] {
        let blk = &self.blocks[s];
        let (i, j) = if from_end { (m.from, m.to) } else { (m.to, m.from) };
        [blk.theta[i], blk.theta[j], self.vvar(s, i), self.vvar(s, j)]
    }

    /// Flat starting point: voltage midpoints, zero angles, range midpoints.
    pub fn initial_point(&self) -> Vec<f64> {
        let net = self.net;
        let mut x = vec![0.0; self.n];
        for (g, gen) in net.generators.iter().enumerate() {
            if self.p0_var[g] != NONE {
                x[self.p0_var[g]] = 0.5 * (gen.p_min + gen.p_max);
            }
        }
        for &b in &self.controlled {
            let bus = &net.buses[b];
            x[self.v0_var[b]] = 0.5 * (bus.v_min + bus.v_max);
        }
        for s in 0..self.blocks.len() {
            self.flat_block(&mut x, s);
        }
        x
    }

    fn flat_block(&self, x: &mut [f64], s: usize) {
        let net = self.net;
        let blk = &self.blocks[s];
        for (i, bus) in net.buses.iter().enumerate() {
            if blk.theta[i] != NONE {
                x[blk.theta[i]] = 0.0;
            }
            if blk.v[i] != NONE {
                x[blk.v[i]] = 0.5 * (bus.v_min + bus.v_max);
            }
        }
        for (g, gen) in net.generators.iter().enumerate() {
            if blk.q[g] != NONE {
                x[blk.q[g]] = 0.5 * (gen.q_min + gen.q_max);
            }
        }
        if blk.e != NONE {
            x[blk.e] = 0.0;
        }
    }

    /// First-stage values and per-scenario blocks of `x`.
    pub fn split(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let first = self.blocks.first().map_or(self.n, |b| b.start);
        let blocks = self.blocks.iter().map(|b| x[b.start..b.end].to_vec()).collect();
        (x[..first].to_vec(), blocks)
    }

    /// Starting point reusing a previous first stage and the scenario blocks
    /// shared with it (matched by position). Blocks of the wrong size are
    /// flat-initialized.
    pub fn warm_point(&self, first: &[f64], blocks: &[Vec<f64>]) -> Vec<f64> {
        let mut x = self.initial_point();
        let n_first = self.blocks.first().map_or(self.n, |b| b.start);
        if first.len() == n_first {
            x[..n_first].copy_from_slice(first);
        }
        for (a, b) in self.blocks.iter().zip(blocks) {
            if b.len() == a.end - a.start {
                x[a.start..a.end].copy_from_slice(b);
            }
        }
        x
    }

    pub fn operating_point(&self, x: &[f64]) -> OperatingPoint {
        OperatingPoint {
            p0: (0..self.net.generators.len()).map(|g| self.p0_value(x, g)).collect(),
            v0: self.controlled.iter().map(|&b| x[self.v0_var[b]]).collect(),
            alpha: self.alpha.clone(),
        }
    }

    pub fn state(&self, x: &[f64], s: usize) -> PfState {
        let net = self.net;
        let (v, theta) = self.voltages(x, s);
        let (p, q) = bus_injections(net, &self.models, &v, &theta);
        let mut pf = Vec::new();
        let mut qf = Vec::new();
        let mut pt = Vec::new();
        let mut qt = Vec::new();
        for m in &self.models {
            let (a, b, c, d) = m.flows(&v, &theta);
            pf.push(a);
            qf.push(b);
            pt.push(c);
            qt.push(d);
        }
        let ng = net.generators.len();
        PfState {
            gen_p: (0..ng).map(|g| self.gen_p(x, s, g)).collect(),
            gen_q: (0..ng).map(|g| self.q_value(x, s, g)).collect(),
            v,
            theta,
            p,
            q,
            pf,
            qf,
            pt,
            qt,
            iterations: 0,
        }
    }

    fn ineq_value(&self, x: &[f64], row: &IneqRow) -> f64 {
        match &row.kind {
            IneqKind::Linear { terms, constant } => {
                terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>() + constant
            }
            IneqKind::Flow { s, line, from_end, s_max } => {
                let (fp, fq) = self.end_flow(x, *s, *line, *from_end);
                fp * fp + fq * fq - s_max * s_max
            }
        }
    }

    fn end_terms(&self, line: usize, from_end: bool) -> (EndTerm, EndTerm) {
        let m = &self.models[line];
        if from_end {
            (m.pf, m.qf)
        } else {
            (m.pt, m.qt)
        }
    }

    fn end_args(&self, x: &[f64], s: usize, line: usize, from_end: bool) -> (f64, f64, f64, f64) {
        let m = &self.models[line];
        let blk = &self.blocks[s];
        let (i, j) = if from_end { (m.from, m.to) } else { (m.to, m.from) };
        let th = |b: usize| if blk.theta[b] == NONE { 0.0 } else { x[blk.theta[b]] };
        (x[self.vvar(s, i)], x[self.vvar(s, j)], th(i), th(j))
    }

    fn end_flow(&self, x: &[f64], s: usize, line: usize, from_end: bool) -> (f64, f64) {
        let (tp, tq) = self.end_terms(line, from_end);
        let (vi, vj, ti, tj) = self.end_args(x, s, line, from_end);
        (tp.value(vi, vj, ti, tj), tq.value(vi, vj, ti, tj))
    }

    /// Names and values of variables and constraint rows, for diagnostics dumps.
    pub fn describe(&self, x: &[f64]) -> Value {
        let net = self.net;
        let mut vars = vec![Value::Null; self.n];
        for (g, &k) in self.p0_var.iter().enumerate() {
            if k != NONE {
                vars[k] = json!({"name": format!("p0:{g}"), "value": x[k]});
            }
        }
        for &b in &self.controlled {
            let k = self.v0_var[b];
            vars[k] = json!({"name": format!("v0:{}", net.buses[b].id), "value": x[k]});
        }
        for (s, blk) in self.blocks.iter().enumerate() {
            for i in 0..self.nb {
                let id = net.buses[i].id;
                if blk.theta[i] != NONE {
                    vars[blk.theta[i]] = json!({"name": format!("s{s}:theta:{id}"), "value": x[blk.theta[i]]});
                }
                if blk.v[i] != NONE {
                    vars[blk.v[i]] = json!({"name": format!("s{s}:v:{id}"), "value": x[blk.v[i]]});
                }
            }
            for (g, &k) in blk.q.iter().enumerate() {
                if k != NONE {
                    vars[k] = json!({"name": format!("s{s}:q:{g}"), "value": x[k]});
                }
            }
            if blk.e != NONE {
                vars[blk.e] = json!({"name": format!("s{s}:e"), "value": x[blk.e]});
            }
        }
        let eq = self.eq(x);
        let eq_rows: Vec<Value> = (0..self.m_eq())
            .map(|r| {
                let (s, rem) = (r / (2 * self.nb), r % (2 * self.nb));
                let (kind, i) = if rem < self.nb { ("pbal", rem) } else { ("qbal", rem - self.nb) };
                json!({"name": format!("s{s}:{kind}:{}", net.buses[i].id), "residual": eq[r]})
            })
            .collect();
        let ineq_rows: Vec<Value> = self
            .ineq_rows
            .iter()
            .map(|row| json!({"name": label_name(net, row.label), "value": self.ineq_value(x, row)}))
            .collect();
        json!({
            "n_variables": self.n,
            "n_equalities": self.m_eq(),
            "n_inequalities": self.ineq_rows.len(),
            "variables": vars,
            "equalities": eq_rows,
            "inequalities": ineq_rows,
        })
    }
}

fn label_name(net: &Network, l: RowLabel) -> String {
    use RowLabel::*;
    let id = |b: usize| net.buses[b].id;
    match l {
        FlowFrom(s, k) => format!("s{s}:flow_from:{k}"),
        FlowTo(s, k) => format!("s{s}:flow_to:{k}"),
        AngleMax(s, k) => format!("s{s}:angle_max:{k}"),
        AngleMin(s, k) => format!("s{s}:angle_min:{k}"),
        VMax(s, b) => format!("s{s}:vmax:{}", id(b)),
        VMin(s, b) => format!("s{s}:vmin:{}", id(b)),
        QMax(s, g) => format!("s{s}:qmax_gen:{g}"),
        QMin(s, g) => format!("s{s}:qmin_gen:{g}"),
        PMax(s, g) => format!("s{s}:pmax_gen:{g}"),
        PMin(s, g) => format!("s{s}:pmin_gen:{g}"),
        P0Max(g) => format!("p0max:{g}"),
        P0Min(g) => format!("p0min:{g}"),
        V0Max(b) => format!("v0max:{}", id(b)),
        V0Min(b) => format!("v0min:{}", id(b)),
    }
}

fn push_hess4(t: &mut Triplets, idx: &[usize; 4], w: f64, h: &[[f64; 4]; 4]) {
    for a in 0..4 {
        if idx[a] == NONE {
            continue;
        }
        for b in 0..=a {
            if idx[b] != NONE {
                t.push_lower(idx[a], idx[b], w * h[a][b]);
            }
        }
    }
}

impl Nlp for SopfModel<'_> {
    fn n(&self) -> usize {
        self.n
    }

    fn m_eq(&self) -> usize {
        2 * self.nb * self.blocks.len()
    }

    fn m_ineq(&self) -> usize {
        self.ineq_rows.len()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let base = self.net.base_mva;
        self.net
            .generators
            .iter()
            .enumerate()
            .map(|(g, gen)| gen.cost.eval(self.p0_value(x, g), base))
            .sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.n];
        for (g, gen) in self.net.generators.iter().enumerate() {
            if self.p0_var[g] != NONE {
                grad[self.p0_var[g]] = gen.cost.derivative(x[self.p0_var[g]], self.net.base_mva);
            }
        }
        grad
    }

    fn eq(&self, x: &[f64]) -> Vec<f64> {
        let nb = self.nb;
        let mut out = vec![0.0; self.m_eq()];
        for s in 0..self.blocks.len() {
            let (v, theta) = self.voltages(x, s);
            let (p, q) = bus_injections(self.net, &self.models, &v, &theta);
            let base = 2 * nb * s;
            for i in 0..nb {
                let mut gp = 0.0;
                let mut gq = 0.0;
                for &g in &self.bus_gens[i] {
                    gp += self.gen_p(x, s, g);
                    gq += self.q_value(x, s, g);
                }
                out[base + i] = p[i] - gp + self.pd[s][i];
                out[base + nb + i] = q[i] - gq + self.qd[s][i];
            }
        }
        out
    }

    fn ineq(&self, x: &[f64]) -> Vec<f64> {
        self.ineq_rows.iter().map(|r| self.ineq_value(x, r)).collect()
    }

    fn eq_jacobian(&self, x: &[f64]) -> Triplets {
        let nb = self.nb;
        let mut t = Triplets::with_capacity(self.m_eq(), self.n, 20 * self.models.len() * self.blocks.len());
        for s in 0..self.blocks.len() {
            let blk = &self.blocks[s];
            let base = 2 * nb * s;
            for (k, m) in self.models.iter().enumerate() {
                for from_end in [true, false] {
                    let (tp, tq) = self.end_terms(k, from_end);
                    let (vi, vj, ti, tj) = self.end_args(x, s, k, from_end);
                    let idx = self.local(s, m, from_end);
                    let bus = if from_end { m.from } else { m.to };
                    let gp = tp.grad(vi, vj, ti, tj).1;
                    let gq = tq.grad(vi, vj, ti, tj).1;
                    for a in 0..4 {
                        if idx[a] != NONE {
                            t.push(base + bus, idx[a], gp[a]);
                            t.push(base + nb + bus, idx[a], gq[a]);
                        }
                    }
                }
            }
            for (i, b) in self.net.buses.iter().enumerate() {
                let vk = self.vvar(s, i);
                t.push(base + i, vk, 2.0 * b.g_shunt * x[vk]);
                t.push(base + nb + i, vk, -2.0 * b.b_shunt * x[vk]);
                for &g in &self.bus_gens[i] {
                    if self.p0_var[g] != NONE {
                        t.push(base + i, self.p0_var[g], -1.0);
                    }
                    if blk.q[g] != NONE {
                        t.push(base + nb + i, blk.q[g], -1.0);
                    }
                }
            }
            if blk.e != NONE {
                t.push(base + self.net.slack, blk.e, -1.0);
            }
        }
        t
    }

    fn ineq_jacobian(&self, x: &[f64]) -> Triplets {
        let mut t = Triplets::with_capacity(self.m_ineq(), self.n, 4 * self.ineq_rows.len());
        for (r, row) in self.ineq_rows.iter().enumerate() {
            match &row.kind {
                IneqKind::Linear { terms, .. } => {
                    for &(v, c) in terms {
                        t.push(r, v, c);
                    }
                }
                IneqKind::Flow { s, line, from_end, .. } => {
                    let (tp, tq) = self.end_terms(*line, *from_end);
                    let (vi, vj, ti, tj) = self.end_args(x, *s, *line, *from_end);
                    let (fp, gp) = tp.grad(vi, vj, ti, tj);
                    let (fq, gq) = tq.grad(vi, vj, ti, tj);
                    let idx = self.local(*s, &self.models[*line], *from_end);
                    for a in 0..4 {
                        if idx[a] != NONE {
                            t.push(r, idx[a], 2.0 * (fp * gp[a] + fq * gq[a]));
                        }
                    }
                }
            }
        }
        t
    }

    fn hessian(&self, x: &[f64], sigma: f64, lam: &[f64], mu: &[f64]) -> Triplets {
        let nb = self.nb;
        let mut t = Triplets::with_capacity(self.n, self.n, 60 * self.models.len() * self.blocks.len());
        for (g, gen) in self.net.generators.iter().enumerate() {
            if self.p0_var[g] != NONE {
                let k = self.p0_var[g];
                t.push(k, k, sigma * gen.cost.curvature(self.net.base_mva));
            }
        }
        for s in 0..self.blocks.len() {
            let base = 2 * nb * s;
            for (k, m) in self.models.iter().enumerate() {
                for from_end in [true, false] {
                    let (tp, tq) = self.end_terms(k, from_end);
                    let (vi, vj, ti, tj) = self.end_args(x, s, k, from_end);
                    let idx = self.local(s, m, from_end);
                    let bus = if from_end { m.from } else { m.to };
                    push_hess4(&mut t, &idx, lam[base + bus], &tp.hess(vi, vj, ti, tj));
                    push_hess4(&mut t, &idx, lam[base + nb + bus], &tq.hess(vi, vj, ti, tj));
                }
            }
            for (i, b) in self.net.buses.iter().enumerate() {
                let vk = self.vvar(s, i);
                let w = 2.0 * b.g_shunt * lam[base + i] - 2.0 * b.b_shunt * lam[base + nb + i];
                t.push(vk, vk, w);
            }
        }
        for (r, row) in self.ineq_rows.iter().enumerate() {
            if let IneqKind::Flow { s, line, from_end, .. } = row.kind {
                let (tp, tq) = self.end_terms(line, from_end);
                let (vi, vj, ti, tj) = self.end_args(x, s, line, from_end);
                let (fp, gp) = tp.grad(vi, vj, ti, tj);
                let (fq, gq) = tq.grad(vi, vj, ti, tj);
                let hp = tp.hess(vi, vj, ti, tj);
                let hq = tq.hess(vi, vj, ti, tj);
                let mut h = [[0.0; 4]; 4];
                for a in 0..4 {
                    for b in 0..4 {
                        h[a][b] = 2.0 * (gp[a] * gp[b] + fp * hp[a][b] + gq[a] * gq[b] + fq * hq[a][b]);
                    }
                }
                let idx = self.local(s, &self.models[line], from_end);
                push_hess4(&mut t, &idx, mu[r], &h);
            }
        }
        t
    }
}
