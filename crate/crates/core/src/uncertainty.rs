//! Box-uniform load-fluctuation model and scenario sampling.

use std::io;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::netcase::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Base,
    Sampled,
    Selected,
    Enhanced,
}

/// Which buses carry an uncertain load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusFilter {
    /// Every bus with a nonzero load.
    AllLoads,
    /// Loaded buses with exactly one neighbouring bus.
    EndBuses,
}

impl BusFilter {
    pub fn select(self, net: &Network) -> Vec<usize> {
        let degrees = net.degrees();
        (0..net.n_buses())
            .filter(|&i| net.buses[i].has_load())
            .filter(|&i| match self {
                BusFilter::AllLoads => true,
                BusFilter::EndBuses => degrees[i] == 1,
            })
            .collect()
    }
}

/// Per-coordinate bounds of one fluctuating bus, in p.u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationBounds {
    pub p_lo: f64,
    pub p_hi: f64,
    pub q_lo: f64,
    pub q_hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxUncertainty {
    buses: Arc<[usize]>,
    bounds: Vec<FluctuationBounds>,
}

impl BoxUncertainty {
    /// Bounds must satisfy `lo <= 0 <= hi` for each coordinate.
    pub fn new(buses: Vec<usize>, bounds: Vec<FluctuationBounds>) -> Self {
        assert_eq!(buses.len(), bounds.len());
        for b in &bounds {
            assert!(b.p_lo <= 0.0 && 0.0 <= b.p_hi && b.q_lo <= 0.0 && 0.0 <= b.q_hi);
        }
        BoxUncertainty {
            buses: buses.into(),
            bounds,
        }
    }

    /// `±fraction·|P_i|`, `±fraction·|Q_i|` on the buses picked by `keep`.
    pub fn from_fraction(net: &Network, fraction: f64, keep: impl Fn(usize) -> bool) -> Self {
        assert!((0.0..1.0).contains(&fraction), "fraction must lie in [0, 1)");
        let buses: Vec<usize> = (0..net.n_buses())
            .filter(|&i| net.buses[i].has_load() && keep(i))
            .collect();
        let bounds = buses
            .iter()
            .map(|&i| {
                let p = fraction * net.buses[i].p_load.abs();
                let q = fraction * net.buses[i].q_load.abs();
                FluctuationBounds {
                    p_lo: -p,
                    p_hi: p,
                    q_lo: -q,
                    q_hi: q,
                }
            })
            .collect();
        BoxUncertainty::new(buses, bounds)
    }

    pub fn with_filter(net: &Network, fraction: f64, filter: BusFilter) -> Self {
        let chosen = filter.select(net);
        Self::from_fraction(net, fraction, |i| chosen.binary_search(&i).is_ok())
    }

    pub fn len(&self) -> usize {
        self.buses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buses.is_empty()
    }

    pub fn buses(&self) -> &[usize] {
        &self.buses
    }

    pub fn bounds(&self) -> &[FluctuationBounds] {
        &self.bounds
    }

    /// All-zero fluctuation.
    pub fn base_scenario(&self) -> Scenario {
        Scenario {
            buses: self.buses.clone(),
            dp: vec![0.0; self.len()],
            dq: vec![0.0; self.len()],
            origin: Origin::Base,
        }
    }

    /// Draws one scenario from the substream keyed by `(seed, index)`.
    pub fn sample_one(&self, seed: u64, index: u64) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let mut draw = |lo: f64, hi: f64| {
            if hi > lo {
                lo + (hi - lo) * rng.random::<f64>()
            } else {
                lo
            }
        };
        let mut dp = Vec::with_capacity(self.len());
        let mut dq = Vec::with_capacity(self.len());
        for b in &self.bounds {
            dp.push(draw(b.p_lo, b.p_hi));
            dq.push(draw(b.q_lo, b.q_hi));
        }
        Scenario {
            buses: self.buses.clone(),
            dp,
            dq,
            origin: Origin::Sampled,
        }
    }

    /// `count` i.i.d. uniform scenarios. Entry `k` depends only on `(seed, k)`.
    pub fn sample_batch(&self, count: usize, seed: u64) -> Vec<Scenario> {
        (0..count as u64).map(|k| self.sample_one(seed, k)).collect()
    }

    /// Half-widths of the box for every (bus, channel) coordinate, p-channel first.
    pub fn half_widths(&self) -> (Vec<f64>, Vec<f64>) {
        self.bounds
            .iter()
            .map(|b| (0.5 * (b.p_hi - b.p_lo), 0.5 * (b.q_hi - b.q_lo)))
            .unzip()
    }

    pub fn contains(&self, s: &Scenario) -> bool {
        self.bounds.iter().zip(s.dp.iter().zip(&s.dq)).all(|(b, (&p, &q))| {
            b.p_lo <= p && p <= b.p_hi && b.q_lo <= q && q <= b.q_hi
        })
    }
}

/// One realization of the load fluctuation, aligned with its box's buses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub buses: Arc<[usize]>,
    pub dp: Vec<f64>,
    pub dq: Vec<f64>,
    pub origin: Origin,
}

impl Scenario {
    /// Total real-power mismatch `Σ μ^p`.
    pub fn total_dp(&self) -> f64 {
        self.dp.iter().sum()
    }

    /// Same fluctuation vector (origin ignored).
    pub fn same_point(&self, other: &Scenario) -> bool {
        self.buses == other.buses && self.dp == other.dp && self.dq == other.dq
    }

    pub fn is_zero(&self) -> bool {
        self.dp.iter().chain(&self.dq).all(|&v| v == 0.0)
    }

    /// Per-bus fluctuation vectors over the whole network.
    pub fn per_bus(&self, n_buses: usize) -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; n_buses];
        let mut q = vec![0.0; n_buses];
        for (k, &b) in self.buses.iter().enumerate() {
            p[b] += self.dp[k];
            q[b] += self.dq[k];
        }
        (p, q)
    }
}

/// CSV sidecar for a scenario set: one row per (scenario, bus).
pub fn write_scenarios_csv<W: io::Write>(
    net: &Network,
    scenarios: &[Scenario],
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "bus", "dp", "dq", "origin"])?;
    for (k, s) in scenarios.iter().enumerate() {
        let origin = serde_json::to_value(s.origin)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        for (j, &b) in s.buses.iter().enumerate() {
            w.write_record([
                k.to_string(),
                net.buses[b].id.to_string(),
                format!("{:e}", s.dp[j]),
                format!("{:e}", s.dq[j]),
                origin.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
