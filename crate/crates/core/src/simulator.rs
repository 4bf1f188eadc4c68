//! Exact stochastic simulation of the scale-`n` jump processes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Path;
use crate::expr::{CompiledExpr, ExprError};
use crate::flows::{zero_cost_flow, FlowError};
use crate::models::{GeneratingHamiltonians, HamiltonianError, Model};
use crate::numerics::{quantile, slope};

pub const DEFAULT_MAX_EVENTS: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("initial state {q0:?} / n is outside the state space")]
    Start { q0: Vec<i64> },
    #[error("transition '{label}' has negative rate {rate} at q = {q:?}")]
    NegativeRate { label: String, rate: f64, q: Vec<i64> },
    #[error("transition '{label}' has non-finite rate at q = {q:?}")]
    RateOverflow { label: String, q: Vec<i64> },
    #[error("finite-n rate for '{label}': {source}")]
    Expr { label: String, source: ExprError },
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: u64,
    pub horizon: f64,
    pub seed: u64,
    pub max_events: u64,
    /// Replica index; selects an independent stream under the same seed.
    pub replica: u64,
}

impl SimConfig {
    pub fn new(n: u64, horizon: f64, seed: u64) -> Self {
        SimConfig { n, horizon, seed, max_events: DEFAULT_MAX_EVENTS, replica: 0 }
    }

    pub fn with_replica(mut self, replica: u64) -> Self {
        self.replica = replica;
        self
    }

    fn check(&self) -> Result<(), SimError> {
        if self.n == 0 {
            return Err(SimError::Config("n must be at least 1".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SimError::Config(format!("horizon must be positive and finite, got {}", self.horizon)));
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Domain tags separating the random streams of different consumers.
pub mod domain {
    pub const SSA: u64 = 1;
    pub const MONTE_CARLO: u64 = 2;
    pub const PROBE: u64 = 3;
}

/// ChaCha stream keyed by `(seed, domain)` with the replica as stream id.
pub fn stream_rng(seed: u64, domain: u64, replica: u64) -> ChaCha8Rng {
    let a = splitmix(seed);
    let b = splitmix(a ^ domain.wrapping_mul(0xd1b5_4a32_d192_ed03));
    let mut key = [0u8; 32];
    for (i, w) in [a, b, splitmix(b), splitmix(b ^ a)].iter().enumerate() {
        key[8 * i..8 * i + 8].copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replica);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n: u64,
    pub horizon: f64,
    pub dim: usize,
    pub q0: Vec<i64>,
    pub event_times: Vec<f64>,
    /// State after each event, flattened with stride `dim`.
    pub states: Vec<i64>,
    pub transition_ids: Vec<u32>,
    /// True when `max_events` stopped the run before the horizon.
    pub truncated: bool,
    /// Largest truncated-series rate mass dropped at any visited state.
    pub dropped_rate_bound: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.event_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.event_times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[i64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[i64] {
        if self.is_empty() {
            &self.q0
        } else {
            self.state(self.len() - 1)
        }
    }

    /// Right-continuous state at time `t`.
    pub fn state_at(&self, t: f64) -> &[i64] {
        let k = self.event_times.partition_point(|&s| s <= t);
        if k == 0 {
            &self.q0
        } else {
            self.state(k - 1)
        }
    }
}

enum RateSource {
    Scaled(CompiledExpr),
    Direct(CompiledExpr),
}

/// A model compiled for simulation at one scale `n`.
pub struct Simulator<'a> {
    model: &'a Model,
    n: u64,
    labels: Vec<String>,
    jumps: Vec<Vec<i64>>,
    rates: Vec<RateSource>,
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a Model, n: u64) -> Result<Self, SimError> {
        if n == 0 {
            return Err(SimError::Config("n must be at least 1".into()));
        }
        let mut params: BTreeMap<String, f64> = model.params().clone();
        params.insert("n".into(), n as f64);
        let mut labels = Vec::new();
        let mut jumps = Vec::new();
        let mut rates = Vec::new();
        for t in model.transitions() {
            labels.push(t.label.clone());
            jumps.push(t.gamma.clone());
            rates.push(match &t.rate_n {
                Some(e) => RateSource::Direct(
                    e.bind(&params, model.dim()).map_err(|source| SimError::Expr { label: t.label.clone(), source })?,
                ),
                None => RateSource::Scaled(t.rate.clone()),
            });
        }
        Ok(Simulator { model, n, labels, jumps, rates })
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out = self.labels.clone();
        if self.model.offspring().is_some() {
            out.push("offspring".into());
        }
        out
    }

    /// Rates of all transitions at counts `q`; offspring jumps follow the declared
    /// transitions. Returns the rate mass dropped by series truncation.
    fn rates_at(&self, q: &[i64], rates: &mut Vec<f64>, jumps: &mut Vec<Vec<i64>>) -> Result<f64, SimError> {
        let nf = self.n as f64;
        let x: Vec<f64> = q.iter().map(|&c| c as f64 / nf).collect();
        let qf: Vec<f64> = q.iter().map(|&c| c as f64).collect();
        let space = self.model.space();
        rates.clear();
        jumps.truncate(self.jumps.len());
        for (i, src) in self.rates.iter().enumerate() {
            let r = match src {
                RateSource::Scaled(e) => nf * e.value(&x),
                RateSource::Direct(e) => e.value(&qf),
            };
            let target: Vec<f64> = q.iter().zip(&self.jumps[i]).map(|(a, g)| (a + g) as f64 / nf).collect();
            let r = if space.contains_unchecked(&target) { r } else { 0.0 };
            rates.push(r);
        }
        let mut dropped = 0.0;
        if let Some(off) = self.model.offspring() {
            let terms = off.terms(&x);
            for (k, v) in terms.weights {
                rates.push(qf[0] * v);
                if jumps.len() < rates.len() {
                    jumps.push(vec![k as i64]);
                } else {
                    jumps[rates.len() - 1] = vec![k as i64];
                }
            }
            if terms.tail_bound.is_finite() {
                dropped = qf[0] * terms.tail_bound;
            }
        }
        for (i, &r) in rates.iter().enumerate() {
            let label = || self.labels.get(i).cloned().unwrap_or_else(|| format!("offspring{}", i - self.labels.len() + 1));
            if r.is_nan() || r.is_infinite() {
                return Err(SimError::RateOverflow { label: label(), q: q.to_vec() });
            }
            if r < 0.0 {
                return Err(SimError::NegativeRate { label: label(), rate: r, q: q.to_vec() });
            }
        }
        Ok(dropped)
    }

    /// Total jump rate at counts `q`.
    pub fn total_rate(&self, q: &[i64]) -> Result<f64, SimError> {
        let mut rates = Vec::new();
        let mut jumps = self.jumps.clone();
        self.rates_at(q, &mut rates, &mut jumps)?;
        Ok(rates.iter().sum())
    }

    pub fn run(&self, cfg: &SimConfig, q0: &[i64]) -> Result<Trajectory, SimError> {
        cfg.check()?;
        if cfg.n != self.n {
            return Err(SimError::Config(format!("simulator compiled for n = {}, config has n = {}", self.n, cfg.n)));
        }
        let d = self.model.dim();
        let x0: Vec<f64> = q0.iter().map(|&c| c as f64 / self.n as f64).collect();
        if q0.len() != d || !self.model.space().contains_unchecked(&x0) {
            return Err(SimError::Start { q0: q0.to_vec() });
        }
        let mut rng = stream_rng(cfg.seed, domain::SSA, cfg.replica);
        let mut q = q0.to_vec();
        let mut t = 0.0;
        let mut traj = Trajectory {
            n: self.n,
            horizon: cfg.horizon,
            dim: d,
            q0: q0.to_vec(),
            event_times: Vec::new(),
            states: Vec::new(),
            transition_ids: Vec::new(),
            truncated: false,
            dropped_rate_bound: 0.0,
        };
        let mut rates = Vec::with_capacity(self.jumps.len() + 8);
        let mut jumps = self.jumps.clone();
        loop {
            let dropped = self.rates_at(&q, &mut rates, &mut jumps)?;
            traj.dropped_rate_bound = traj.dropped_rate_bound.max(dropped);
            let total: f64 = rates.iter().sum();
            if total <= 0.0 {
                break;
            }
            let u: f64 = rng.random();
            t += -(1.0 - u).ln() / total;
            if t > cfg.horizon {
                break;
            }
            if traj.event_times.len() as u64 >= cfg.max_events {
                traj.truncated = true;
                break;
            }
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = rates.len() - 1;
            for (i, &r) in rates.iter().enumerate() {
                acc += r;
                if target < acc && r > 0.0 {
                    pick = i;
                    break;
                }
            }
            while rates[pick] == 0.0 {
                pick -= 1;
            }
            for (qi, g) in q.iter_mut().zip(&jumps[pick]) {
                *qi += g;
            }
            traj.event_times.push(t);
            traj.states.extend_from_slice(&q);
            traj.transition_ids.push(pick as u32);
        }
        Ok(traj)
    }
}

/// One trajectory of `model` at scale `cfg.n` from counts `q0`.
pub fn simulate(model: &Model, cfg: &SimConfig, q0: &[i64]) -> Result<Trajectory, SimError> {
    Simulator::new(model, cfg.n)?.run(cfg, q0)
}

/// Apply `f` to `reps` independent replicas; results are ordered by replica index.
pub fn ensemble_map<R: Send>(
    model: &Model,
    cfg: &SimConfig,
    q0: &[i64],
    reps: u64,
    f: impl Fn(&Trajectory) -> R + Sync,
) -> Result<Vec<R>, SimError> {
    let sim = Simulator::new(model, cfg.n)?;
    (0..reps).into_par_iter().map(|r| sim.run(&cfg.with_replica(r), q0).map(|t| f(&t))).collect()
}

/// Right-continuous sampling of `X_n(t) / n` on `grid`.
pub fn rescale(traj: &Trajectory, grid: &[f64]) -> Path {
    let nf = traj.n as f64;
    let states = grid.iter().map(|&t| traj.state_at(t).iter().map(|&c| c as f64 / nf).collect()).collect();
    Path { times: grid.to_vec(), states }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthGuardReport {
    pub n: u64,
    pub q_max: u64,
    pub sup_ratio: f64,
    pub fitted_exponent: f64,
    pub warning: bool,
    pub samples: usize,
}

/// Empirical `sup_{q <= q_max} R(q) / (1 + |q|_1)` and the log-log growth exponent of
/// the total rate along the diagonal.
pub fn rate_growth_guard(model: &Model, n: u64, q_max: u64) -> Result<GrowthGuardReport, SimError> {
    let sim = Simulator::new(model, n)?;
    let d = model.dim();
    let q_max = q_max.max(2);
    let levels: Vec<i64> = {
        let mut v: Vec<i64> = (0..=24).map(|i| (q_max as f64).powf(i as f64 / 24.0).round() as i64).collect();
        v.insert(0, 0);
        v.dedup();
        v
    };
    let mut sup = 0.0f64;
    let mut samples = 0;
    let mut diag = Vec::new();
    let mut idx = vec![0usize; d];
    loop {
        let q: Vec<i64> = idx.iter().map(|&i| levels[i]).collect();
        let x: Vec<f64> = q.iter().map(|&c| c as f64 / n as f64).collect();
        if model.space().contains_unchecked(&x) {
            let r = sim.total_rate(&q)?;
            let size: i64 = q.iter().sum();
            sup = sup.max(r / (1.0 + size as f64));
            samples += 1;
            if idx.iter().all(|&i| i == idx[0]) && size > 0 && r > 0.0 {
                diag.push(((1.0 + size as f64).ln(), r.ln()));
            }
        }
        let mut k = 0;
        while k < d {
            idx[k] += 1;
            if idx[k] < levels.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == d {
            break;
        }
    }
    let tail: Vec<(f64, f64)> = diag.iter().copied().skip(diag.len() / 2).collect();
    let fitted_exponent = if tail.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = tail.into_iter().unzip();
        slope(&xs, &ys)
    } else {
        0.0
    };
    Ok(GrowthGuardReport { n, q_max, sup_ratio: sup, fitted_exponent, warning: fitted_exponent > 1.05, samples })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlnEntry {
    pub n: u64,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
    pub truncated_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlnReport {
    pub model: String,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub reps: u64,
    pub seed: u64,
    pub entries: Vec<LlnEntry>,
    /// Medians decrease strictly along the list of scales.
    pub monotone_decrease: bool,
}

/// `sup_t |X_n(t)/n - x(t)|` against the zero-cost flow, over replicas and scales.
pub fn lln_report(
    model: &Model,
    x0: &[f64],
    n_list: &[u64],
    horizon: f64,
    reps: u64,
    seed: u64,
) -> Result<LlnReport, SimError> {
    let ham = GeneratingHamiltonians::build(model)?;
    let steps = 20_000usize;
    let flow = zero_cost_flow(&ham, x0, horizon, horizon / steps as f64)?;
    let flow_at = |t: f64| -> Vec<f64> {
        let s = (t / horizon * steps as f64).clamp(0.0, steps as f64);
        let k = (s.floor() as usize).min(steps - 1);
        let w = s - k as f64;
        let (a, b) = (&flow.path.states[k], &flow.path.states[k + 1]);
        a.iter().zip(b).map(|(u, v)| u + w * (v - u)).collect()
    };
    let dist = |a: &[i64], nf: f64, x: &[f64]| a.iter().zip(x).map(|(c, y)| (*c as f64 / nf - y).abs()).fold(0.0, f64::max);
    let mut entries = Vec::new();
    for &n in n_list {
        let nf = n as f64;
        let q0: Vec<i64> = x0.iter().map(|x| (x * nf).round() as i64).collect();
        let cfg = SimConfig::new(n, horizon, seed);
        let runs = ensemble_map(model, &cfg, &q0, reps, |traj| {
            let mut sup = 0.0f64;
            let mut prev: &[i64] = &traj.q0;
            for k in 0..traj.len() {
                let x = flow_at(traj.event_times[k]);
                sup = sup.max(dist(prev, nf, &x)).max(dist(traj.state(k), nf, &x));
                prev = traj.state(k);
            }
            for j in 0..=100 {
                let t = horizon * j as f64 / 100.0;
                sup = sup.max(dist(traj.state_at(t), nf, &flow_at(t)));
            }
            (sup, traj.truncated)
        })?;
        let devs: Vec<f64> = runs.iter().map(|r| r.0).collect();
        entries.push(LlnEntry {
            n,
            median: quantile(&devs, 0.5),
            p90: quantile(&devs, 0.9),
            max: devs.iter().copied().fold(0.0, f64::max),
            truncated_runs: runs.iter().filter(|r| r.1).count(),
        });
    }
    let monotone_decrease = entries.windows(2).all(|w| w[1].median < w[0].median);
    Ok(LlnReport {
        model: model.name().to_string(),
        x0: x0.to_vec(),
        horizon,
        reps,
        seed,
        entries,
        monotone_decrease,
    })
}
