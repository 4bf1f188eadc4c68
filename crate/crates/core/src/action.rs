//! Path action and its minimization over discretized paths.
//!
//! The discrete action uses the midpoint state and the difference-quotient
//! velocity on each segment. Minimization is projected L-BFGS on the interior
//! knots with finite-difference gradients; infinite densities are replaced during
//! descent by the density at the velocity projected onto the cone of available
//! jumps plus a quadratic penalty on the projection residual.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flows::{zero_cost_flow, FlowError};
use crate::geometry::{dot, GeometryError};
use crate::legendre::{full_at, LegendreError};
use crate::models::{GeneratingHamiltonians, HamiltonianError};
use crate::numerics::nnls;

#[derive(Debug, Error)]
pub enum ActionError {
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Legendre(#[from] LegendreError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Flow(#[from] Box<FlowError>),
    #[error("invalid path: {0}")]
    Path(String),
    #[error("knot {index} at {x:?} lies outside the state space")]
    Outside { index: usize, x: Vec<f64> },
    #[error("horizon must be positive and finite, got {0}")]
    Horizon(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Path {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self, ActionError> {
        let p = Path { times, states };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<(), ActionError> {
        if self.times.len() < 2 || self.times.len() != self.states.len() {
            return Err(ActionError::Path(format!(
                "need at least two knots with matching times ({} times, {} states)",
                self.times.len(),
                self.states.len()
            )));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) || self.times.iter().any(|t| !t.is_finite()) {
            return Err(ActionError::Path("time grid must be finite and strictly increasing".into()));
        }
        let d = self.states[0].len();
        if self.states.iter().any(|s| s.len() != d || s.iter().any(|c| !c.is_finite())) {
            return Err(ActionError::Path("states must be finite with a common dimension".into()));
        }
        Ok(())
    }

    /// Uniform grid on `[0, horizon]` through `f(t)`.
    pub fn from_fn(horizon: f64, segments: usize, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let times: Vec<f64> = (0..=segments).map(|k| horizon * k as f64 / segments as f64).collect();
        let states = times.iter().map(|&t| f(t)).collect();
        Path { times, states }
    }

    pub fn straight(x0: &[f64], x1: &[f64], horizon: f64, segments: usize) -> Self {
        Path::from_fn(horizon, segments, |t| {
            let s = t / horizon;
            x0.iter().zip(x1).map(|(a, b)| a + s * (b - a)).collect()
        })
    }

    pub fn segments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn velocities(&self) -> Vec<Vec<f64>> {
        (0..self.segments())
            .map(|k| {
                let dt = self.times[k + 1] - self.times[k];
                self.states[k + 1].iter().zip(&self.states[k]).map(|(b, a)| (b - a) / dt).collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCost {
    pub velocity: Vec<f64>,
    pub density: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionReport {
    pub total: f64,
    pub per_segment: Vec<SegmentCost>,
    pub infeasible_segments: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

fn midpoint(ham: &GeneratingHamiltonians, a: &[f64], b: &[f64]) -> Vec<f64> {
    let m: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    if ham.space().contains_unchecked(&m) {
        m
    } else {
        ham.space().project_point(&m)
    }
}

/// Midpoint-rule action of a discretized path.
pub fn action(ham: &GeneratingHamiltonians, path: &Path) -> Result<ActionReport, ActionError> {
    path.check()?;
    if path.dim() != ham.dim() {
        return Err(ActionError::Path(format!("path dimension {} does not match model dimension {}", path.dim(), ham.dim())));
    }
    for (index, x) in path.states.iter().enumerate() {
        if !ham.space().contains(x)? {
            return Err(ActionError::Outside { index, x: x.clone() });
        }
    }
    let velocities = path.velocities();
    let per_segment = (0..path.segments())
        .into_par_iter()
        .map(|k| -> Result<SegmentCost, ActionError> {
            let m = midpoint(ham, &path.states[k], &path.states[k + 1]);
            let local = ham.at(&m)?;
            let density = full_at(&local, &velocities[k])?.value;
            Ok(SegmentCost { velocity: velocities[k].clone(), density, weight: path.times[k + 1] - path.times[k] })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(report_from(per_segment))
}

fn report_from(per_segment: Vec<SegmentCost>) -> ActionReport {
    let infeasible_segments: Vec<usize> =
        per_segment.iter().enumerate().filter(|(_, s)| !s.density.is_finite()).map(|(k, _)| k).collect();
    let total = if infeasible_segments.is_empty() {
        per_segment.iter().map(|s| s.weight * s.density).sum()
    } else {
        f64::INFINITY
    };
    let explanation = (!infeasible_segments.is_empty())
        .then(|| format!("{} segment(s) use velocities outside the cone of available jumps", infeasible_segments.len()));
    ActionReport { total, per_segment, infeasible_segments, explanation }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Weight of the quadratic penalty in the barrier surrogate.
    pub penalty: f64,
    pub memory: usize,
    pub fd_step: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions { max_iter: 300, grad_tol: 1e-8, penalty: 1e3, memory: 8, fd_step: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartLog {
    pub name: String,
    pub initial: f64,
    pub optimized: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeDiagnostics {
    pub starts: Vec<StartLog>,
    pub best_start: String,
}

/// A weighted path functional
/// `J(path) = sum_k w_k dt_k L(mid_k, v_k) - sum_k c_k g(x_k)`
/// over paths from `x0`, with a fixed or free terminal knot.
pub struct PathProblem<'a> {
    pub times: Vec<f64>,
    pub x0: Vec<f64>,
    pub end: Option<Vec<f64>>,
    pub segment_weights: Vec<f64>,
    pub knot_weights: Vec<f64>,
    pub payoff: Option<&'a (dyn Fn(&[f64]) -> f64 + Sync)>,
}

impl<'a> PathProblem<'a> {
    pub fn fixed_ends(x0: &[f64], x1: &[f64], horizon: f64, segments: usize) -> Self {
        let times: Vec<f64> = (0..=segments).map(|k| horizon * k as f64 / segments as f64).collect();
        PathProblem {
            times,
            x0: x0.to_vec(),
            end: Some(x1.to_vec()),
            segment_weights: vec![1.0; segments],
            knot_weights: vec![0.0; segments + 1],
            payoff: None,
        }
    }

    fn segments(&self) -> usize {
        self.times.len() - 1
    }

    fn free_knots(&self) -> std::ops::Range<usize> {
        let n = self.segments();
        if self.end.is_some() {
            1..n
        } else {
            1..n + 1
        }
    }

    fn payoff_at(&self, k: usize, x: &[f64]) -> f64 {
        match self.payoff {
            Some(g) if self.knot_weights[k] != 0.0 => self.knot_weights[k] * g(x),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedPath {
    pub path: Path,
    /// True (non-surrogate) value of the functional.
    pub objective: f64,
    pub diagnostics: MinimizeDiagnostics,
}

struct Engine<'a, 'b> {
    ham: &'a GeneratingHamiltonians,
    problem: &'a PathProblem<'b>,
    opts: MinimizeOptions,
}

impl Engine<'_, '_> {
    fn density(&self, a: &[f64], b: &[f64], dt: f64, surrogate: bool) -> f64 {
        let m = midpoint(self.ham, a, b);
        let Ok(local) = self.ham.at(&m) else { return f64::INFINITY };
        let v: Vec<f64> = b.iter().zip(a).map(|(y, x)| (y - x) / dt).collect();
        let l = full_at(&local, &v).map(|r| r.value).unwrap_or(f64::INFINITY);
        if l.is_finite() || !surrogate {
            return l;
        }
        let dirs = local.jump_directions();
        let proj: Vec<f64> = if dirs.is_empty() {
            vec![0.0; v.len()]
        } else {
            let c = nnls(&dirs, &v);
            (0..v.len()).map(|i| dirs.iter().zip(&c).map(|(g, ci)| ci * g[i]).sum()).collect()
        };
        let base = full_at(&local, &proj).map(|r| r.value).unwrap_or(f64::INFINITY);
        let base = if base.is_finite() { base } else { 1e6 };
        let resid: f64 = v.iter().zip(&proj).map(|(a, b)| (a - b) * (a - b)).sum();
        base + self.opts.penalty * resid
    }

    fn segment(&self, k: usize, a: &[f64], b: &[f64], surrogate: bool) -> f64 {
        let t = &self.problem.times;
        let dt = t[k + 1] - t[k];
        let w = self.problem.segment_weights[k];
        if w == 0.0 {
            return 0.0;
        }
        w * dt * self.density(a, b, dt, surrogate)
    }

    fn objective(&self, states: &[Vec<f64>], surrogate: bool) -> f64 {
        let n = self.problem.segments();
        let run: f64 = (0..n).into_par_iter().map(|k| self.segment(k, &states[k], &states[k + 1], surrogate)).sum();
        let pay: f64 = (0..=n).map(|k| self.problem.payoff_at(k, &states[k])).sum();
        run - pay
    }

    /// Terms of the objective that depend on knot `k`.
    fn local(&self, states: &[Vec<f64>], k: usize, xk: &[f64]) -> f64 {
        let n = self.problem.segments();
        let mut s = self.segment(k - 1, &states[k - 1], xk, true);
        if k < n {
            s += self.segment(k, xk, &states[k + 1], true);
        }
        s - self.problem.payoff_at(k, xk)
    }

    fn gradient(&self, states: &[Vec<f64>]) -> Vec<f64> {
        let d = self.problem.x0.len();
        let space = self.ham.space();
        let knots: Vec<usize> = self.problem.free_knots().collect();
        knots
            .par_iter()
            .flat_map_iter(|&k| {
                (0..d).map(move |i| {
                    let x = &states[k];
                    let h = self.opts.fd_step * (1.0 + x[i].abs());
                    let mut plus = x.clone();
                    plus[i] += h;
                    let mut minus = x.clone();
                    minus[i] -= h;
                    let f0 = self.local(states, k, x);
                    let (pin, min) = (space.contains_unchecked(&plus), space.contains_unchecked(&minus));
                    let g = match (pin, min) {
                        (true, true) => (self.local(states, k, &plus) - self.local(states, k, &minus)) / (2.0 * h),
                        (true, false) => (self.local(states, k, &plus) - f0) / h,
                        (false, true) => (f0 - self.local(states, k, &minus)) / h,
                        (false, false) => 0.0,
                    };
                    if g.is_finite() {
                        g
                    } else {
                        0.0
                    }
                })
            })
            .collect()
    }

    fn unpack(&self, z: &[f64], template: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let d = self.problem.x0.len();
        let mut states = template.to_vec();
        for (j, k) in self.problem.free_knots().enumerate() {
            states[k] = z[j * d..(j + 1) * d].to_vec();
        }
        states
    }

    fn project(&self, z: &mut [f64]) {
        let d = self.problem.x0.len();
        let space = self.ham.space();
        for chunk in z.chunks_mut(d) {
            if !space.contains_unchecked(chunk) {
                let p = space.project_point(chunk);
                chunk.copy_from_slice(&p);
            }
        }
    }

    /// Projected L-BFGS from `start`; returns the final states, iterations and convergence flag.
    fn run(&self, start: &[Vec<f64>]) -> (Vec<Vec<f64>>, usize, bool) {
        let d = self.problem.x0.len();
        let mut z: Vec<f64> = self.problem.free_knots().flat_map(|k| start[k].clone()).collect();
        if z.is_empty() {
            return (start.to_vec(), 0, true);
        }
        self.project(&mut z);
        let mut states = self.unpack(&z, start);
        let mut f = self.objective(&states, true);
        let mut g = self.gradient(&states);
        let mut hist: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        let mut stall = 0;
        let mut converged = false;
        let mut it = 0;
        let scale = 1.0 + z.iter().map(|c| c.abs()).fold(0.0, f64::max);
        while it < self.opts.max_iter {
            it += 1;
            let mut trial: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a - b).collect();
            self.project(&mut trial);
            let pg = trial.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if pg <= self.opts.grad_tol || !f.is_finite() {
                converged = pg <= self.opts.grad_tol;
                break;
            }
            let mut dir = lbfgs_direction(&g, &hist);
            if dot(&dir, &g) >= 0.0 {
                hist.clear();
                dir = g.iter().map(|c| -c).collect();
            }
            let dmax = dir.iter().map(|c| c.abs()).fold(0.0, f64::max);
            let mut alpha = if hist.is_empty() { (0.1 * scale / dmax).min(1.0) } else { 1.0 };
            let mut accepted = None;
            for _ in 0..50 {
                let mut zn: Vec<f64> = z.iter().zip(&dir).map(|(a, b)| a + alpha * b).collect();
                self.project(&mut zn);
                let sn = self.unpack(&zn, &states);
                let fnew = self.objective(&sn, true);
                let decrease: f64 = g.iter().zip(zn.iter().zip(&z)).map(|(gi, (a, b))| gi * (a - b)).sum();
                if fnew.is_finite() && fnew <= f + 1e-4 * decrease {
                    accepted = Some((zn, sn, fnew));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((zn, sn, fnew)) = accepted else {
                if hist.is_empty() {
                    break;
                }
                hist.clear();
                continue;
            };
            let gn = self.gradient(&sn);
            let s: Vec<f64> = zn.iter().zip(&z).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                hist.push((s, y));
                if hist.len() > self.opts.memory {
                    hist.remove(0);
                }
            }
            if (f - fnew).abs() <= 1e-15 * (1.0 + f.abs()) {
                stall += 1;
            } else {
                stall = 0;
            }
            z = zn;
            states = sn;
            f = fnew;
            g = gn;
            if stall >= 3 {
                converged = true;
                break;
            }
        }
        debug_assert_eq!(z.len() % d, 0);
        (states, it, converged)
    }
}

fn lbfgs_direction(g: &[f64], hist: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y) in hist.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push((rho, a));
    }
    if let Some((s, y)) = hist.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|c| *c *= gamma);
    }
    for ((s, y), (rho, a)) in hist.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|c| -c).collect()
}

/// Minimize a path functional from each named start; the best true value wins,
/// and no start is ever replaced by a worse optimized path.
pub fn optimize_path(
    ham: &GeneratingHamiltonians,
    problem: &PathProblem<'_>,
    starts: Vec<(String, Vec<Vec<f64>>)>,
    opts: MinimizeOptions,
) -> Result<OptimizedPath, ActionError> {
    let n = problem.segments();
    if problem.segment_weights.len() != n || problem.knot_weights.len() != n + 1 {
        return Err(ActionError::Path("weights do not match the time grid".into()));
    }
    let engine = Engine { ham, problem, opts };
    let runs: Vec<(StartLog, Vec<Vec<f64>>, f64)> = starts
        .into_par_iter()
        .map(|(name, start)| {
            let initial = engine.objective(&start, false);
            let (opt, iterations, converged) = engine.run(&start);
            let optimized = engine.objective(&opt, false);
            let (best, value) = if optimized <= initial || !initial.is_finite() && !optimized.is_finite() {
                (opt, optimized)
            } else {
                (start, initial)
            };
            (StartLog { name, initial, optimized, iterations, converged }, best, value)
        })
        .collect();
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.2 < runs[best].2 {
            best = i;
        }
    }
    let best_start = runs[best].0.name.clone();
    let objective = runs[best].2;
    let states = runs[best].1.clone();
    let starts = runs.into_iter().map(|r| r.0).collect();
    Ok(OptimizedPath {
        path: Path { times: problem.times.clone(), states },
        objective,
        diagnostics: MinimizeDiagnostics { starts, best_start },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizedPath {
    pub path: Path,
    pub report: ActionReport,
    pub diagnostics: MinimizeDiagnostics,
}

fn check_endpoints(ham: &GeneratingHamiltonians, pts: &[&[f64]], horizon: f64) -> Result<(), ActionError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(ActionError::Horizon(horizon));
    }
    for (index, x) in pts.iter().enumerate() {
        if x.len() != ham.dim() {
            return Err(ActionError::Path(format!("endpoint has dimension {}, expected {}", x.len(), ham.dim())));
        }
        if !ham.space().contains(x)? {
            return Err(ActionError::Outside { index, x: x.to_vec() });
        }
    }
    Ok(())
}

/// Zero-cost flow from `x0` until its closest approach to `x1`, then a straight line.
fn splice_start(ham: &GeneratingHamiltonians, x0: &[f64], x1: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>, ActionError> {
    let n = times.len() - 1;
    let horizon = times[n];
    let flow = zero_cost_flow(ham, x0, horizon, horizon / n as f64).map_err(Box::new)?;
    let dist = |x: &[f64]| x.iter().zip(x1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let kstar = (0..n).min_by(|&a, &b| dist(&flow.path.states[a]).total_cmp(&dist(&flow.path.states[b]))).unwrap_or(0);
    let mut states: Vec<Vec<f64>> = flow.path.states[..=kstar].to_vec();
    let from = states[kstar].clone();
    for k in kstar + 1..=n {
        let s = (times[k] - times[kstar]) / (horizon - times[kstar]);
        states.push(from.iter().zip(x1).map(|(a, b)| a + s * (b - a)).collect());
    }
    Ok(states)
}

/// Minimize the action over paths from `x0` to `x1` on `[0, horizon]` with `segments` uniform steps.
pub fn minimize_action(
    ham: &GeneratingHamiltonians,
    x0: &[f64],
    x1: &[f64],
    horizon: f64,
    segments: usize,
    opts: MinimizeOptions,
) -> Result<MinimizedPath, ActionError> {
    check_endpoints(ham, &[x0, x1], horizon)?;
    let segments = segments.max(1);
    let problem = PathProblem::fixed_ends(x0, x1, horizon, segments);
    let straight = Path::straight(x0, x1, horizon, segments).states;
    let splice = splice_start(ham, x0, x1, &problem.times)?;
    let starts = vec![("straight".to_string(), straight), ("zero_cost_splice".to_string(), splice)];
    let opt = optimize_path(ham, &problem, starts, opts)?;
    let mut report = action(ham, &opt.path)?;
    if !report.total.is_finite() {
        report.explanation = Some(format!(
            "no start reaches {x1:?} from {x0:?} in time {horizon} with finite action; the endpoint is likely unreachable"
        ));
    }
    Ok(MinimizedPath { path: opt.path, report, diagnostics: opt.diagnostics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalValue {
    /// `f(path end) - action(path)`: a lower bound for the variational semigroup.
    pub value: f64,
    pub action: f64,
    pub path: Path,
    pub diagnostics: MinimizeDiagnostics,
}

/// Lower bound on `sup_paths f(gamma(t)) - action` over discretized paths from `x`.
pub fn variational_value(
    ham: &GeneratingHamiltonians,
    payoff: &(dyn Fn(&[f64]) -> f64 + Sync),
    t: f64,
    x: &[f64],
    segments: usize,
    opts: MinimizeOptions,
) -> Result<VariationalValue, ActionError> {
    check_endpoints(ham, &[x], t)?;
    let segments = segments.max(1);
    let times: Vec<f64> = (0..=segments).map(|k| t * k as f64 / segments as f64).collect();
    let mut knot_weights = vec![0.0; segments + 1];
    knot_weights[segments] = 1.0;
    let problem = PathProblem {
        times: times.clone(),
        x0: x.to_vec(),
        end: None,
        segment_weights: vec![1.0; segments],
        knot_weights,
        payoff: Some(payoff),
    };
    let flow = zero_cost_flow(ham, x, t, t / segments as f64).map_err(Box::new)?;
    let starts = vec![("rest".to_string(), vec![x.to_vec(); segments + 1]), ("zero_cost".to_string(), flow.path.states)];
    let opt = optimize_path(ham, &problem, starts, opts)?;
    let report = action(ham, &opt.path)?;
    let end = opt.path.states.last().expect("non-empty path");
    Ok(VariationalValue { value: payoff(end) - report.total, action: report.total, path: opt.path, diagnostics: opt.diagnostics })
}

/// `(max |v| - min |v|) / mean |v|` over the segments.
pub fn velocity_variation(path: &Path) -> f64 {
    let speeds: Vec<f64> = path.velocities().iter().map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt()).collect();
    let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
    let (lo, hi) = speeds.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    if mean == 0.0 {
        0.0
    } else {
        (hi - lo) / mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{birth_death_immigration, bundled, yule};

    fn immigration() -> GeneratingHamiltonians {
        GeneratingHamiltonians::build(&birth_death_immigration("0", "0", "1").unwrap()).unwrap()
    }

    fn yule_ham() -> GeneratingHamiltonians {
        GeneratingHamiltonians::build(&yule().unwrap()).unwrap()
    }

    #[test]
    fn rest_point_costs_nothing() {
        let h = GeneratingHamiltonians::build(&bundled("birth_death_immigration").unwrap()).unwrap();
        let r = action(&h, &Path::straight(&[1.0], &[1.0], 2.0, 10)).unwrap();
        assert!(r.total.abs() < 1e-14);
    }

    #[test]
    fn yule_quadratic_path() {
        let r = action(&yule_ham(), &Path::from_fn(1.0, 10_000, |t| vec![t * t])).unwrap();
        let exact = 2f64.ln() - 1.0 / 6.0;
        assert!((r.total - exact).abs() < 1e-4, "{}", r.total);
    }

    #[test]
    fn midpoint_rule_converges_quadratically() {
        let h = GeneratingHamiltonians::build(&bundled("birth_death_immigration").unwrap()).unwrap();
        let f = |t: f64| vec![1.0 + (3.0 * t).sin()];
        let a = |n| action(&h, &Path::from_fn(1.0, n, f)).unwrap().total;
        let (a1, a2, a4) = (a(20), a(40), a(80));
        let ratio = (a1 - a2) / (a2 - a4);
        assert!((ratio - 4.0).abs() < 0.5, "{ratio}");
    }

    #[test]
    fn collinear_knots_do_not_change_action() {
        let h = immigration();
        let a = action(&h, &Path::straight(&[0.0], &[2.0], 1.0, 1)).unwrap().total;
        let b = action(&h, &Path::straight(&[0.0], &[2.0], 1.0, 7)).unwrap().total;
        assert!((a - b).abs() < 1e-12);
        assert!((a - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn infeasible_segments_reported() {
        let r = action(&yule_ham(), &Path::straight(&[1.0], &[0.5], 1.0, 4)).unwrap();
        assert_eq!(r.total, f64::INFINITY);
        assert_eq!(r.infeasible_segments, vec![0, 1, 2, 3]);
    }

    #[test]
    fn immigration_minimizer_is_straight() {
        let m = minimize_action(&immigration(), &[0.0], &[2.0], 1.0, 40, MinimizeOptions::default()).unwrap();
        let exact = 2.0 * 2f64.ln() - 1.0;
        assert!((m.report.total - exact).abs() <= 0.01 * exact);
        assert!(velocity_variation(&m.path) <= 0.01);
        assert!(m.path.states.iter().all(|s| s[0] >= 0.0));
    }

    #[test]
    fn endpoint_on_zero_cost_flow_is_free() {
        let h = GeneratingHamiltonians::build(&bundled("birth_death_immigration").unwrap()).unwrap();
        // exact flow x' = 1 - x from 3
        let end = vec![1.0 + 2.0 * (-1.0f64).exp()];
        let m = minimize_action(&h, &[3.0], &end, 1.0, 50, MinimizeOptions::default()).unwrap();
        assert!(m.report.total <= 1e-6, "{} {:?}", m.report.total, m.diagnostics);
    }

    #[test]
    fn unreachable_endpoint_is_infinite() {
        let m = minimize_action(&yule_ham(), &[1.0], &[0.5], 1.0, 10, MinimizeOptions::default()).unwrap();
        assert_eq!(m.report.total, f64::INFINITY);
        assert!(m.report.explanation.is_some());
    }

    #[test]
    fn minimizer_never_worse_than_starts() {
        let h = GeneratingHamiltonians::build(&bundled("birth_death_immigration").unwrap()).unwrap();
        let m = minimize_action(&h, &[0.5], &[2.0], 1.0, 20, MinimizeOptions::default()).unwrap();
        let best_start = m.diagnostics.starts.iter().map(|s| s.initial).fold(f64::INFINITY, f64::min);
        assert!(m.report.total <= best_start + 1e-12);
    }

    #[test]
    fn constant_payoff_value() {
        let h = GeneratingHamiltonians::build(&bundled("birth_death_immigration").unwrap()).unwrap();
        let r = variational_value(&h, &|_x| 3.0, 1.0, &[2.0], 20, MinimizeOptions::default()).unwrap();
        assert!((r.value - 3.0).abs() < 1e-6, "{}", r.value);
    }

    #[test]
    fn short_time_value_near_payoff() {
        let h = GeneratingHamiltonians::build(&bundled("birth_death_immigration").unwrap()).unwrap();
        let f = |x: &[f64]| -(x[0] - 1.5).powi(2);
        let r = variational_value(&h, &f, 0.01, &[2.0], 5, MinimizeOptions::default()).unwrap();
        assert!((r.value - f(&[2.0])).abs() < 0.05);
        assert!(r.value >= f(&[2.0]) - 0.05);
    }
}
