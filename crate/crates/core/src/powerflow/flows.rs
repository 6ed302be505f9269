//! Branch end-flow terms of the π model with tap and phase shift.
//!
//! Every end flow has the form `a·vi² + vi·vj·(c·cos δ + s·sin δ)` with
//! `δ = θi − θj + φ`, where `i` is the measuring end and `j` the far end.

use crate::netcase::{Line, Network};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndTerm {
    pub a: f64,
    pub c: f64,
    pub s: f64,
    pub phi: f64,
}

/// Variable order for derivatives: `[θi, θj, vi, vj]`.
pub type Grad4 = [f64; 4];
pub type Hess4 = [[f64; 4]; 4];

impl EndTerm {
    #[inline]
    fn cd(&self, ti: f64, tj: f64) -> (f64, f64) {
        let (sn, cs) = (ti - tj + self.phi).sin_cos();
        (self.c * cs + self.s * sn, -self.c * sn + self.s * cs)
    }

    #[inline]
    pub fn value(&self, vi: f64, vj: f64, ti: f64, tj: f64) -> f64 {
        let (c, _) = self.cd(ti, tj);
        self.a * vi * vi + vi * vj * c
    }

    #[inline]
    pub fn grad(&self, vi: f64, vj: f64, ti: f64, tj: f64) -> (f64, Grad4) {
        let (c, d) = self.cd(ti, tj);
        let vv = vi * vj;
        (
            self.a * vi * vi + vv * c,
            [vv * d, -vv * d, 2.0 * self.a * vi + vj * c, vi * c],
        )
    }

    #[inline]
    pub fn hess(&self, vi: f64, vj: f64, ti: f64, tj: f64) -> Hess4 {
        let (c, d) = self.cd(ti, tj);
        let vv = vi * vj;
        let mut h = [[0.0; 4]; 4];
        h[0][0] = -vv * c;
        h[0][1] = vv * c;
        h[1][1] = -vv * c;
        h[0][2] = vj * d;
        h[0][3] = vi * d;
        h[1][2] = -vj * d;
        h[1][3] = -vi * d;
        h[2][2] = 2.0 * self.a;
        h[2][3] = c;
        for r in 0..4 {
            for q in 0..r {
                h[r][q] = h[q][r];
            }
        }
        h
    }
}

/// The four end terms of one branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchModel {
    pub from: usize,
    pub to: usize,
    pub pf: EndTerm,
    pub qf: EndTerm,
    pub pt: EndTerm,
    pub qt: EndTerm,
}

impl BranchModel {
    pub fn new(line: &Line) -> Self {
        let (g, b) = line.series_admittance();
        let t = line.tap;
        let t2 = t * t;
        let bc = line.charging;
        let sh = line.shift;
        BranchModel {
            from: line.from,
            to: line.to,
            pf: EndTerm { a: g / t2, c: -g / t, s: -b / t, phi: -sh },
            qf: EndTerm { a: -(b + 0.5 * bc) / t2, c: b / t, s: -g / t, phi: -sh },
            pt: EndTerm { a: g, c: -g / t, s: -b / t, phi: sh },
            qt: EndTerm { a: -(b + 0.5 * bc), c: b / t, s: -g / t, phi: sh },
        }
    }

    /// `(pf, qf, pt, qt)`.
    pub fn flows(&self, v: &[f64], theta: &[f64]) -> (f64, f64, f64, f64) {
        let (f, t) = (self.from, self.to);
        (
            self.pf.value(v[f], v[t], theta[f], theta[t]),
            self.qf.value(v[f], v[t], theta[f], theta[t]),
            self.pt.value(v[t], v[f], theta[t], theta[f]),
            self.qt.value(v[t], v[f], theta[t], theta[f]),
        )
    }
}

pub fn branch_models(net: &Network) -> Vec<BranchModel> {
    net.lines.iter().map(BranchModel::new).collect()
}

/// Net injections `(P, Q)` implied by `(v, θ)`: line flows out of each bus plus shunts.
pub fn bus_injections(
    net: &Network,
    models: &[BranchModel],
    v: &[f64],
    theta: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = net.n_buses();
    let mut p: Vec<f64> = (0..n).map(|i| net.buses[i].g_shunt * v[i] * v[i]).collect();
    let mut q: Vec<f64> = (0..n).map(|i| -net.buses[i].b_shunt * v[i] * v[i]).collect();
    for m in models {
        let (pf, qf, pt, qt) = m.flows(v, theta);
        p[m.from] += pf;
        q[m.from] += qf;
        p[m.to] += pt;
        q[m.to] += qt;
    }
    (p, q)
}
