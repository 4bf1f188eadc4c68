//! Monotone finite-difference solver for the one-dimensional resolvent equation
//! `f - lambda H(x, f') = h`, with boundary pieces combined by max (dagger) or min (ddagger).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{optimize_path, ActionError, MinimizeOptions, PathProblem};
use crate::flows::zero_cost_flow;
use crate::geometry::Polyhedron;
use crate::legendre::P_MAX;
use crate::models::{GeneratingHamiltonians, HamiltonianError, LocalHamiltonian, PieceMask};

/// Fraction of the interval next to a truncation end excluded from reported norms.
pub const SPONGE_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum HjError {
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error("lambda must be positive and finite, got {0}")]
    Lambda(f64),
    #[error("grid: {0}")]
    Grid(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64, history: Vec<f64> },
    #[error("solution is dominated by the truncation (sponge effect {effect:e})")]
    TruncationDominated { effect: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Dagger,
    Ddagger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    /// Node lies on a closed face of E.
    True,
    Truncation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub nodes: Vec<f64>,
    pub hx: f64,
    pub left: BoundaryKind,
    pub right: BoundaryKind,
}

impl Grid1D {
    /// Uniform grid of `intervals` cells on `[lo, hi]`, both ends inside E.
    pub fn new(space: &Polyhedron, lo: f64, hi: f64, intervals: usize) -> Result<Self, HjError> {
        if space.dim() != 1 {
            return Err(HjError::Grid("state space is not one-dimensional".into()));
        }
        if !(hi > lo) || intervals < 2 {
            return Err(HjError::Grid(format!("need lo < hi and at least 2 cells (got [{lo}, {hi}], {intervals})")));
        }
        if !space.contains_unchecked(&[lo]) || !space.contains_unchecked(&[hi]) {
            return Err(HjError::Grid(format!("[{lo}, {hi}] is not inside E")));
        }
        let kind = |x: f64| if space.active_unchecked(&[x]).is_empty() { BoundaryKind::Truncation } else { BoundaryKind::True };
        let hx = (hi - lo) / intervals as f64;
        let nodes = (0..=intervals).map(|i| if i == intervals { hi } else { lo + hx * i as f64 }).collect();
        Ok(Grid1D { nodes, hx, left: kind(lo), right: kind(hi) })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.nodes[0]
    }

    pub fn hi(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Nodes outside the sponge margins.
    pub fn kept(&self) -> Vec<bool> {
        let margin = SPONGE_FRACTION * (self.hi() - self.lo());
        self.nodes
            .iter()
            .map(|&x| {
                let l = self.left == BoundaryKind::True || x >= self.lo() + margin - 1e-12;
                let r = self.right == BoundaryKind::True || x <= self.hi() - margin + 1e-12;
                l && r
            })
            .collect()
    }

    /// Same spacing, truncation ends pushed out by a quarter of the length.
    fn extended(&self, space: &Polyhedron) -> Option<(Grid1D, usize)> {
        let cells = self.len() - 1;
        let extra = (cells / 4).max(1);
        let grow_left = self.left == BoundaryKind::Truncation && space.contains_unchecked(&[self.lo() - extra as f64 * self.hx]);
        let grow_right = self.right == BoundaryKind::Truncation && space.contains_unchecked(&[self.hi() + extra as f64 * self.hx]);
        if !grow_left && !grow_right {
            return None;
        }
        let offset = if grow_left { extra } else { 0 };
        let lo = self.lo() - offset as f64 * self.hx;
        let total = cells + offset + if grow_right { extra } else { 0 };
        let nodes: Vec<f64> = (0..=total).map(|i| lo + self.hx * i as f64).collect();
        Some((
            Grid1D { nodes, hx: self.hx, left: self.left, right: if grow_right { BoundaryKind::Truncation } else { self.right } },
            offset,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Solver {
    /// Newton on the full residual with a tridiagonal solve and backtracking.
    Newton,
    /// `f <- (1 - w) f + w (h + lambda H(f))`.
    DampedJacobi { damping: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub solver: Solver,
    pub tol: f64,
    pub max_iter: usize,
    /// Re-solve on an extended grid and compare on kept nodes.
    pub sponge_check: bool,
    /// Allowed sponge effect relative to `1 + sup |f|`.
    pub sponge_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { solver: Solver::Newton, tol: 1e-10, max_iter: 200, sponge_check: false, sponge_tol: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub variant: Variant,
    pub x: Vec<f64>,
    pub f: Vec<f64>,
    pub h: Vec<f64>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub sponge_effect: Option<f64>,
}

struct Piece {
    mask: PieceMask,
    pbar: f64,
}

struct Node {
    local: LocalHamiltonian,
    pieces: Vec<Piece>,
}

/// Minimiser of the convex map `p -> H_mask(p)`, clamped to `[-P_MAX, P_MAX]`.
fn argmin_p(local: &LocalHamiltonian, mask: PieceMask) -> f64 {
    let d = |p: f64| local.grad(mask, &[p])[0];
    let (mut lo, mut hi) = (-P_MAX, P_MAX);
    if d(lo) >= 0.0 {
        return lo;
    }
    if d(hi) <= 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if d(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

struct Scheme<'a> {
    nodes: Vec<Node>,
    grid: &'a Grid1D,
    lambda: f64,
    variant: Variant,
}

impl<'a> Scheme<'a> {
    fn new(ham: &GeneratingHamiltonians, grid: &'a Grid1D, lambda: f64, variant: Variant) -> Result<Self, HjError> {
        let nodes = grid
            .nodes
            .iter()
            .map(|&x| {
                let local = ham.at(&[x])?;
                let pieces = local.masks().map(|mask| Piece { mask, pbar: argmin_p(&local, mask) }).collect();
                Ok(Node { local, pieces })
            })
            .collect::<Result<Vec<_>, HamiltonianError>>()?;
        Ok(Scheme { nodes, grid, lambda, variant })
    }

    /// Numerical Hamiltonian at node `i` and its partials in the backward and forward differences.
    fn flux(&self, i: usize, f: &[f64]) -> (f64, f64, f64) {
        let hx = self.grid.hx;
        // a missing neighbour acts as a reflecting ghost node (zero difference)
        let a = if i > 0 { (f[i] - f[i - 1]) / hx } else { 0.0 };
        let b = if i + 1 < f.len() { (f[i + 1] - f[i]) / hx } else { 0.0 };
        let (has_a, has_b) = (i > 0, i + 1 < f.len());
        let node = &self.nodes[i];
        let mut best: Option<(f64, f64, f64)> = None;
        for piece in &node.pieces {
            let h = |p: f64| node.local.h(piece.mask, &[p]);
            let dh = |p: f64| node.local.grad(piece.mask, &[p])[0];
            let back = (h(a.min(piece.pbar)), if has_a && a < piece.pbar { dh(a) } else { 0.0 }, 0.0);
            let fwd = (h(b.max(piece.pbar)), 0.0, if has_b && b > piece.pbar { dh(b) } else { 0.0 });
            let val = Some(if back.0 >= fwd.0 { back } else { fwd });
            let val = val.expect("grid has at least two nodes");
            best = match (best, self.variant) {
                (None, _) => Some(val),
                (Some(cur), Variant::Dagger) if val.0 > cur.0 => Some(val),
                (Some(cur), Variant::Ddagger) if val.0 < cur.0 => Some(val),
                (cur, _) => cur,
            };
        }
        best.expect("every node has a piece")
    }

    fn residual(&self, f: &[f64], h: &[f64]) -> Vec<f64> {
        (0..f.len()).map(|i| f[i] - h[i] - self.lambda * self.flux(i, f).0).collect()
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().map(|c| c.abs()).fold(0.0, f64::max)
}

/// Thomas algorithm; `lower[0]` and `upper[n - 1]` are ignored.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

fn iterate(scheme: &Scheme, h: &[f64], opts: &SolveOptions) -> Result<(Vec<f64>, usize, Vec<f64>), HjError> {
    let mut f = h.to_vec();
    let mut r = scheme.residual(&f, h);
    let mut history = vec![sup(&r)];
    let lam_h = scheme.lambda / scheme.grid.hx;
    for it in 0..opts.max_iter {
        let norm = *history.last().unwrap();
        if norm < opts.tol {
            return Ok((f, it, history));
        }
        match opts.solver {
            Solver::Newton => {
                let n = f.len();
                let (mut lo, mut di, mut up) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                for i in 0..n {
                    let (_, ha, hb) = scheme.flux(i, &f);
                    lo[i] = lam_h * ha;
                    di[i] = 1.0 - lam_h * (ha - hb);
                    up[i] = -lam_h * hb;
                }
                let step = solve_tridiagonal(&lo, &di, &up, &r);
                let mut t = 1.0;
                loop {
                    let trial: Vec<f64> = f.iter().zip(&step).map(|(a, s)| a - t * s).collect();
                    let rt = scheme.residual(&trial, h);
                    if sup(&rt) < (1.0 - 1e-4 * t) * norm || t < 1e-10 {
                        f = trial;
                        r = rt;
                        break;
                    }
                    t *= 0.5;
                }
            }
            Solver::DampedJacobi { damping } => {
                f = f.iter().zip(&r).map(|(a, ri)| a - damping * ri).collect();
                r = scheme.residual(&f, h);
            }
        }
        history.push(sup(&r));
    }
    let residual = *history.last().unwrap();
    if residual < opts.tol {
        return Ok((f, opts.max_iter, history));
    }
    Err(HjError::NonConvergence { iterations: opts.max_iter, residual, history })
}

/// Solve `f - lambda H_variant(x, f') = h` on the grid.
pub fn solve_resolvent(
    ham: &GeneratingHamiltonians,
    lambda: f64,
    h: &(dyn Fn(f64) -> f64 + Sync),
    grid: &Grid1D,
    variant: Variant,
    opts: &SolveOptions,
) -> Result<Solution, HjError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(HjError::Lambda(lambda));
    }
    if ham.dim() != 1 {
        return Err(HjError::Grid("state space is not one-dimensional".into()));
    }
    let hv: Vec<f64> = grid.nodes.iter().map(|&x| h(x)).collect();
    let scheme = Scheme::new(ham, grid, lambda, variant)?;
    let (f, iterations, residual_history) = iterate(&scheme, &hv, opts)?;
    let mut sponge_effect = None;
    if opts.sponge_check {
        if let Some((ext, offset)) = grid.extended(ham.space()) {
            let he: Vec<f64> = ext.nodes.iter().map(|&x| h(x)).collect();
            let (fe, _, _) = iterate(&Scheme::new(ham, &ext, lambda, variant)?, &he, opts)?;
            let effect = grid
                .kept()
                .iter()
                .enumerate()
                .filter(|(_, k)| **k)
                .map(|(i, _)| (f[i] - fe[i + offset]).abs())
                .fold(0.0, f64::max);
            if effect > opts.sponge_tol * (1.0 + sup(&f)) {
                return Err(HjError::TruncationDominated { effect });
            }
            sponge_effect = Some(effect);
        }
    }
    Ok(Solution { variant, x: grid.nodes.clone(), f, h: hv, iterations, residual_history, sponge_effect })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapLevel {
    pub intervals: usize,
    pub hx: f64,
    /// `sup |f_dagger - f_ddagger|` over kept nodes.
    pub gap: f64,
    pub max_dagger_minus_ddagger: f64,
    pub max_ddagger_minus_dagger: f64,
    pub iterations: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub lambda: f64,
    pub levels: Vec<GapLevel>,
    /// `gap_{k+1} / gap_k` under halving of `h_x`.
    pub ratios: Vec<f64>,
    /// Nodes where some jump rate is negative. The gap alone does not detect this.
    pub negative_rate_nodes: Vec<f64>,
    pub consistent: bool,
    pub verdict: String,
}

/// Gap ratios accepted as first-order shrinkage.
pub const RATIO_BAND: (f64, f64) = (0.35, 0.65);

/// Solves both variants on `intervals * 2^k` cells for `k = 0..=refinements`.
pub fn comparison_probe(
    ham: &GeneratingHamiltonians,
    lambda: f64,
    h: &(dyn Fn(f64) -> f64 + Sync),
    lo: f64,
    hi: f64,
    intervals: usize,
    refinements: usize,
    opts: &SolveOptions,
) -> Result<ComparisonReport, HjError> {
    let mut levels = Vec::with_capacity(refinements + 1);
    let mut negative_rate_nodes = Vec::new();
    for k in 0..=refinements {
        let grid = Grid1D::new(ham.space(), lo, hi, intervals << k)?;
        let up = solve_resolvent(ham, lambda, h, &grid, Variant::Dagger, opts)?;
        let down = solve_resolvent(ham, lambda, h, &grid, Variant::Ddagger, opts)?;
        if k == refinements {
            for &x in &grid.nodes {
                if ham.at(&[x])?.terms().iter().any(|t| t.rate < 0.0) {
                    negative_rate_nodes.push(x);
                }
            }
        }
        let kept = grid.kept();
        let (mut plus, mut minus) = (0.0f64, 0.0f64);
        for i in (0..grid.len()).filter(|i| kept[*i]) {
            plus = plus.max(up.f[i] - down.f[i]);
            minus = minus.max(down.f[i] - up.f[i]);
        }
        levels.push(GapLevel {
            intervals: intervals << k,
            hx: grid.hx,
            gap: plus.max(minus),
            max_dagger_minus_ddagger: plus,
            max_ddagger_minus_dagger: minus,
            iterations: (up.iterations, down.iterations),
        });
    }
    let exact = levels.iter().all(|l| l.gap <= 1e-12);
    let ratios: Vec<f64> = levels.windows(2).map(|w| if w[0].gap > 0.0 { w[1].gap / w[0].gap } else { 0.0 }).collect();
    let shrinking = !ratios.is_empty() && ratios.iter().all(|r| (RATIO_BAND.0..=RATIO_BAND.1).contains(r));
    let consistent = (exact || shrinking) && negative_rate_nodes.is_empty();
    let verdict = if !negative_rate_nodes.is_empty() {
        format!("inconsistent: negative jump rates at {} grid nodes", negative_rate_nodes.len())
    } else if exact {
        "consistent with comparison principle (schemes agree to round-off)".to_string()
    } else if shrinking {
        "consistent with comparison principle (gap shrinks in proportion to h_x)".to_string()
    } else {
        "inconsistent: gap does not shrink in proportion to h_x".to_string()
    };
    Ok(ComparisonReport { lambda, levels, ratios, negative_rate_nodes, consistent, verdict })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalPoint {
    pub x: f64,
    /// Value of the discretised functional at the best path found; a lower bound up to discretisation.
    pub value: f64,
    pub discounted_action: f64,
    pub best_start: String,
}

/// `sup_gamma int_0^inf lambda^-1 e^{-t/lambda} (h(gamma(t)) - int_0^t L) dt`, truncated at
/// `horizon` with the remaining discount mass placed on the final state.
pub fn variational_resolvent_point(
    ham: &GeneratingHamiltonians,
    lambda: f64,
    h: &(dyn Fn(f64) -> f64 + Sync),
    x: f64,
    horizon: f64,
    segments: usize,
    opts: MinimizeOptions,
) -> Result<VariationalPoint, HjError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(HjError::Lambda(lambda));
    }
    let n = segments.max(2);
    // denser near t = 0 where the discount weight is largest
    let stretch = (horizon / lambda).min(3.0).max(1e-3);
    let times: Vec<f64> =
        (0..=n).map(|k| horizon * ((stretch * k as f64 / n as f64).exp() - 1.0) / (stretch.exp() - 1.0)).collect();
    let disc = |t: f64| (-t / lambda).exp();
    let mut knot_weights = vec![0.0; n + 1];
    let mut segment_weights = vec![0.0; n];
    for k in 0..n {
        let mass = disc(times[k]) - disc(times[k + 1]);
        knot_weights[k] += 0.5 * mass;
        knot_weights[k + 1] += 0.5 * mass;
        segment_weights[k] = lambda * mass / (times[k + 1] - times[k]);
    }
    knot_weights[n] += disc(horizon);
    let payoff = |y: &[f64]| h(y[0]);
    let problem = PathProblem { times: times.clone(), x0: vec![x], end: None, segment_weights, knot_weights, payoff: Some(&payoff) };
    let flow = zero_cost_flow(ham, &[x], horizon, horizon / (4 * n) as f64).map_err(|e| ActionError::Flow(Box::new(e)))?;
    let dt = horizon / (4 * n) as f64;
    let flow_states: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| {
            let k = ((t / dt).floor() as usize).min(4 * n - 1);
            let w = (t / dt - k as f64).clamp(0.0, 1.0);
            let (a, b) = (&flow.path.states[k], &flow.path.states[k + 1]);
            a.iter().zip(b).map(|(p, q)| p + w * (q - p)).collect()
        })
        .collect();
    let starts = vec![("rest".to_string(), vec![vec![x]; n + 1]), ("zero_cost".to_string(), flow_states)];
    let opt = optimize_path(ham, &problem, starts, opts)?;
    let reward: f64 = opt.path.states.iter().zip(&problem.knot_weights).map(|(s, w)| w * h(s[0])).sum();
    Ok(VariationalPoint {
        x,
        value: -opt.objective,
        discounted_action: reward + opt.objective,
        best_start: opt.diagnostics.best_start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{birth_death_harvesting, bundled};
    use rand::{Rng, SeedableRng};

    fn harvesting() -> GeneratingHamiltonians {
        GeneratingHamiltonians::build(&bundled("birth_death_harvesting").unwrap()).unwrap()
    }

    fn smooth(x: f64) -> f64 {
        x.sin() * (-x).exp()
    }

    #[test]
    fn grid_flags() {
        let ham = harvesting();
        let g = Grid1D::new(ham.space(), 0.0, 10.0, 100).unwrap();
        assert_eq!((g.left, g.right), (BoundaryKind::True, BoundaryKind::Truncation));
        let kept = g.kept();
        assert!(kept[0] && kept[80] && !kept[81]);
        assert!(Grid1D::new(ham.space(), -1.0, 1.0, 10).is_err());
    }

    #[test]
    fn constant_is_exact() {
        let ham = harvesting();
        let g = Grid1D::new(ham.space(), 0.0, 10.0, 200).unwrap();
        for v in [Variant::Dagger, Variant::Ddagger] {
            let s = solve_resolvent(&ham, 0.5, &|_| 1.7, &g, v, &SolveOptions::default()).unwrap();
            assert!(s.f.iter().all(|f| (f - 1.7).abs() <= 1e-12));
        }
    }

    #[test]
    fn newton_and_jacobi_agree() {
        let ham = harvesting();
        let g = Grid1D::new(ham.space(), 0.0, 6.0, 60).unwrap();
        let n = solve_resolvent(&ham, 0.05, &smooth, &g, Variant::Dagger, &SolveOptions::default()).unwrap();
        let opts = SolveOptions { solver: Solver::DampedJacobi { damping: 0.5 }, max_iter: 100_000, ..Default::default() };
        let j = solve_resolvent(&ham, 0.05, &smooth, &g, Variant::Dagger, &opts).unwrap();
        assert!(n.f.iter().zip(&j.f).all(|(a, b)| (a - b).abs() < 1e-8));
    }

    #[test]
    fn scheme_is_monotone() {
        let ham = harvesting();
        let g = Grid1D::new(ham.space(), 0.0, 4.0, 40).unwrap();
        let scheme = Scheme::new(&ham, &g, 0.5, Variant::Dagger).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let f: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let i = rng.random_range(0..g.len());
            let base = scheme.flux(i, &f).0;
            for j in [i.wrapping_sub(1), i + 1] {
                if j < g.len() {
                    let mut g2 = f.clone();
                    g2[j] += rng.random_range(0.0..0.5);
                    assert!(scheme.flux(i, &g2).0 >= base - 1e-12);
                }
            }
        }
    }

    #[test]
    fn ordered_data_gives_ordered_solutions() {
        let ham = harvesting();
        let g = Grid1D::new(ham.space(), 0.0, 8.0, 80).unwrap();
        let o = SolveOptions::default();
        let a = solve_resolvent(&ham, 0.5, &smooth, &g, Variant::Ddagger, &o).unwrap();
        let b = solve_resolvent(&ham, 0.5, &|x| smooth(x) + 0.1 * (-x * x).exp(), &g, Variant::Ddagger, &o).unwrap();
        assert!(a.f.iter().zip(&b.f).all(|(x, y)| *x <= y + 1e-9));
        let up = solve_resolvent(&ham, 0.5, &smooth, &g, Variant::Dagger, &o).unwrap();
        assert!(up.f[0] >= a.f[0] - 1e-12);
    }

    #[test]
    fn harvesting_gap_is_first_order() {
        let ham = harvesting();
        let r = comparison_probe(&ham, 0.5, &smooth, 0.0, 10.0, 100, 3, &SolveOptions::default()).unwrap();
        assert!(r.consistent, "{r:?}");
        assert!(r.levels[0].gap <= 5.0 * r.levels[0].hx);
    }

    #[test]
    fn sponge_check_runs() {
        let ham = harvesting();
        let g = Grid1D::new(ham.space(), 0.0, 10.0, 100).unwrap();
        let o = SolveOptions { sponge_check: true, ..Default::default() };
        let s = solve_resolvent(&ham, 0.5, &smooth, &g, Variant::Dagger, &o).unwrap();
        assert!(s.sponge_effect.unwrap() < 1e-3);
    }

    #[test]
    fn variational_constant_and_small_lambda() {
        let ham = GeneratingHamiltonians::build(&bundled("birth_death_immigration").unwrap()).unwrap();
        let c = variational_resolvent_point(&ham, 0.5, &|_| 2.5, 1.5, 10.0, 40, MinimizeOptions::default()).unwrap();
        assert!((c.value - 2.5).abs() < 1e-6, "{c:?}");
        let lam = 0.01;
        let s = variational_resolvent_point(&ham, lam, &|x| x.sin(), 2.0, 0.2, 40, MinimizeOptions::default()).unwrap();
        assert!((s.value - 2f64.sin()).abs() < 20.0 * lam, "{s:?}");
    }

    #[test]
    fn variational_matches_grid() {
        let ham = GeneratingHamiltonians::build(&bundled("birth_death_immigration").unwrap()).unwrap();
        let g = Grid1D::new(ham.space(), 0.0, 10.0, 400).unwrap();
        let h = |x: f64| (-(x - 1.0) * (x - 1.0)).exp();
        let lambda = 0.5;
        let sol = solve_resolvent(&ham, lambda, &h, &g, Variant::Dagger, &SolveOptions::default()).unwrap();
        for x in [0.5, 1.0, 1.5, 2.0, 3.0] {
            let i = (x / g.hx).round() as usize;
            let v = variational_resolvent_point(&ham, lambda, &h, x, 10.0, 60, MinimizeOptions::default()).unwrap();
            let tol = 1e-2f64.max(10.0 * g.hx);
            assert!((v.value - sol.f[i]).abs() <= tol, "x={x}: {} vs {}", v.value, sol.f[i]);
        }
    }

    #[test]
    fn negative_control_flagged() {
        let broken = birth_death_harvesting("lam*x1", "mu*x1", "rho", "-0.5").unwrap();
        let ham = GeneratingHamiltonians::build_unchecked(&broken);
        let r = comparison_probe(&ham, 0.5, &smooth, 0.0, 10.0, 100, 3, &SolveOptions::default());
        match r {
            Ok(r) => {
                // the gap still shrinks like h_x; only the rate check flags the model
                assert!(!r.consistent, "{r:?}");
                assert!(r.ratios.iter().all(|q| (RATIO_BAND.0..=RATIO_BAND.1).contains(q)));
                assert_eq!(r.negative_rate_nodes.first(), Some(&0.0));
            }
            Err(e) => panic!("{e}"),
        }
    }
}
