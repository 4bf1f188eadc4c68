//! Lagrangians as Legendre transforms of the Hamiltonian pieces.
//!
//! `L_J(x, v) = sup_p <p, v> - H_J(x, p)` is solved by projected Newton on the
//! concave dual objective inside the box `|p_i| <= P_MAX`. A coordinate that ends
//! on that artificial bound signals a supremum at infinity: if the objective still
//! increases outward the value is `+inf`, otherwise the value reached is the limit.
//!
//! The full Lagrangian `L` is the transform of `H_dagger`. At a boundary point the
//! upper envelope switches piece with the sign of the harvested coordinates, so the
//! transform is the maximum over sign regions of constrained piece transforms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dot, FaceIndex};
use crate::models::{GeneratingHamiltonians, HamiltonianError, LocalHamiltonian, PieceMask};
use crate::numerics::{golden_min, nnls};

/// Radius of the momentum box used to detect suprema at infinity.
pub const P_MAX: f64 = 60.0;
/// Outward slope above which a supremum at infinity is classified as `+inf`.
pub const SLOPE_TOL: f64 = 1e-8;
const MAX_ITER: usize = 500;

#[derive(Debug, Error)]
pub enum LegendreError {
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error("Newton did not converge after {iterations} iterations (projected gradient {residual:e} at p = {p:?})")]
    NonConvergence { iterations: usize, residual: f64, p: Vec<f64> },
    #[error("boundary pieces at {x:?} do not split by coordinate sign; the transform of H_dagger is unsupported there")]
    NonSeparable { x: Vec<f64> },
    #[error("velocity has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagrangianStatus {
    Attained,
    LimitAtInfinity,
    Infinite,
}

impl std::fmt::Display for LagrangianStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LagrangianStatus::Attained => "attained",
            LagrangianStatus::LimitAtInfinity => "limit_at_infinity",
            LagrangianStatus::Infinite => "infinite",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangianEval {
    pub value: f64,
    pub argmax_p: Option<Vec<f64>>,
    pub status: LagrangianStatus,
    pub iterations: usize,
}

impl LagrangianEval {
    fn infinite(iterations: usize) -> Self {
        LagrangianEval { value: f64::INFINITY, argmax_p: None, status: LagrangianStatus::Infinite, iterations }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullCertificate {
    pub faces: Vec<FaceIndex>,
    pub weights: Vec<f64>,
    pub velocities: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
}

/// `sup_p p v - a (e^p - 1) - b (e^{-p} - 1)` in closed form.
pub fn closed_form_two_sided(a: f64, b: f64, v: f64) -> f64 {
    assert!(a > 0.0 && b >= 0.0, "closed form needs a > 0, b >= 0");
    if b == 0.0 {
        return if v > 0.0 {
            v * (v / a).ln() - v + a
        } else if v == 0.0 {
            a
        } else {
            f64::INFINITY
        };
    }
    let s = (v * v + 4.0 * a * b).sqrt();
    // v + s loses precision for large negative v
    let v_plus_s = if v < 0.0 { 4.0 * a * b / (s - v) } else { v + s };
    v * (v_plus_s / (2.0 * a)).ln() + a + b - s
}

/// Maximizer of the closed-form problem, `log((v + s) / 2a)`.
fn closed_form_argmax(a: f64, b: f64, v: f64) -> Option<f64> {
    if a > 0.0 && b > 0.0 {
        let s = (v * v + 4.0 * a * b).sqrt();
        let v_plus_s = if v < 0.0 { 4.0 * a * b / (s - v) } else { v + s };
        Some((v_plus_s / (2.0 * a)).ln())
    } else if a > 0.0 && v > 0.0 {
        Some((v / a).ln())
    } else if b > 0.0 && v < 0.0 {
        Some(-(-v / b).ln())
    } else {
        None
    }
}

/// Starting momentum from the matched two-sided surrogate (one dimension only).
fn surrogate_start(local: &LocalHamiltonian, mask: PieceMask, v: &[f64]) -> Vec<f64> {
    let d = local.dim();
    if d != 1 {
        return vec![0.0; d];
    }
    let (mut a, mut b) = (0.0, 0.0);
    for t in local.terms().iter().filter(|t| t.drop & mask == 0) {
        if t.gamma[0] > 0.0 {
            a += t.rate * t.gamma[0];
        } else {
            b -= t.rate * t.gamma[0];
        }
    }
    vec![closed_form_argmax(a, b, v[0]).unwrap_or(0.0).clamp(-P_MAX, P_MAX)]
}

/// Maximize `<p, v> - H_mask(x, p)` over the box `lower <= p <= upper`
/// (intersected with `|p_i| <= P_MAX`).
pub fn maximize_dual(
    local: &LocalHamiltonian,
    mask: PieceMask,
    v: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> Result<LagrangianEval, LegendreError> {
    let d = local.dim();
    if v.len() != d {
        return Err(LegendreError::Dimension { expected: d, got: v.len() });
    }
    let lo: Vec<f64> = lower.iter().map(|l| l.max(-P_MAX)).collect();
    let hi: Vec<f64> = upper.iter().map(|u| u.min(P_MAX)).collect();
    let clamp = |p: &mut [f64]| {
        for i in 0..d {
            p[i] = p[i].clamp(lo[i], hi[i]);
        }
    };
    let objective = |p: &[f64]| {
        let h = local.h(mask, p);
        if h.is_finite() {
            dot(p, v) - h
        } else {
            f64::NEG_INFINITY
        }
    };
    let scale: f64 = 1.0
        + v.iter().map(|x| x.abs()).fold(0.0, f64::max)
        + local.terms().iter().filter(|t| t.drop & mask == 0).map(|t| t.rate.abs() * t.gamma.iter().map(|g| g.abs()).sum::<f64>()).sum::<f64>();
    let tol = 1e-13 * scale;

    let mut p = surrogate_start(local, mask, v);
    clamp(&mut p);
    let mut zero = vec![0.0; d];
    clamp(&mut zero);
    if !(objective(&p) >= objective(&zero)) {
        p = zero;
    }
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    while iterations < MAX_ITER {
        iterations += 1;
        let (hv, gh, hs) = local.eval_all(mask, &p);
        let f = dot(&p, v) - hv;
        let g: Vec<f64> = (0..d).map(|i| v[i] - gh[i]).collect();
        let at_lo = |i: usize| p[i] <= lo[i] + 1e-14 * (1.0 + lo[i].abs());
        let at_hi = |i: usize| p[i] >= hi[i] - 1e-14 * (1.0 + hi[i].abs());
        let free: Vec<usize> = (0..d).filter(|&i| !((at_lo(i) && g[i] < 0.0) || (at_hi(i) && g[i] > 0.0))).collect();
        residual = free.iter().map(|&i| g[i].abs()).fold(0.0, f64::max);
        if residual == 0.0 || free.is_empty() {
            converged = true;
            break;
        }
        let step = newton_direction(&hs, &g, &free);
        // a small gradient with a large Newton step is a flat tail, not an optimum
        let step_len = step.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if residual <= tol && step_len <= 1e-6 * (1.0 + p.iter().map(|x| x.abs()).fold(0.0, f64::max)) {
            converged = true;
            break;
        }
        let mut dir = vec![0.0; d];
        for (k, &i) in free.iter().enumerate() {
            dir[i] = step[k];
        }
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-14 {
            let mut trial: Vec<f64> = (0..d).map(|i| p[i] + t * dir[i]).collect();
            clamp(&mut trial);
            let ft = objective(&trial);
            let gain: f64 = (0..d).map(|i| g[i] * (trial[i] - p[i])).sum();
            // near the optimum f is flat to rounding; judge the step by the gradient instead
            let flat = ft.is_finite() && (ft - f).abs() <= 8.0 * f64::EPSILON * (1.0 + f.abs()) && {
                let gt = local.grad(mask, &trial);
                free.iter().map(|&i| (v[i] - gt[i]).abs()).fold(0.0, f64::max) < 0.5 * residual
            };
            if flat || (ft.is_finite() && ft >= f + 1e-4 * gain) {
                let change = (0..d).map(|i| (trial[i] - p[i]).abs()).fold(0.0, f64::max);
                p = trial;
                moved = change > 1e-15 * (1.0 + p.iter().map(|x| x.abs()).fold(0.0, f64::max));
                break;
            }
            t *= 0.5;
        }
        if !moved {
            // no further progress representable in floating point
            converged = residual <= 1e-7 * scale;
            break;
        }
    }
    if !converged {
        return Err(LegendreError::NonConvergence { iterations, residual, p });
    }
    let value = objective(&p);
    let gh = local.grad(mask, &p);
    let mut at_infinity = false;
    let mut outward = 0.0f64;
    for i in 0..d {
        let g = v[i] - gh[i];
        if p[i] >= P_MAX - 1e-9 && upper[i] > P_MAX {
            at_infinity = true;
            outward = outward.max(g);
        }
        if p[i] <= -P_MAX + 1e-9 && lower[i] < -P_MAX {
            at_infinity = true;
            outward = outward.max(-g);
        }
    }
    if at_infinity && outward > SLOPE_TOL {
        return Ok(LagrangianEval::infinite(iterations));
    }
    let status = if at_infinity { LagrangianStatus::LimitAtInfinity } else { LagrangianStatus::Attained };
    Ok(LagrangianEval { value: value.max(0.0), argmax_p: Some(p), status, iterations })
}

/// Levenberg-regularized Newton step on the free coordinates.
fn newton_direction(hs: &DMatrix<f64>, g: &[f64], free: &[usize]) -> Vec<f64> {
    let m = free.len();
    let sub = DMatrix::from_fn(m, m, |r, c| hs[(free[r], free[c])]);
    let rhs = DVector::from_iterator(m, free.iter().map(|&i| g[i]));
    let diag = (0..m).map(|i| sub[(i, i)]).fold(0.0, f64::max);
    let mut mu = 1e-12 * diag + 1e-300;
    for _ in 0..20 {
        let mut reg = sub.clone();
        for i in 0..m {
            reg[(i, i)] += mu;
        }
        if let Some(ch) = reg.cholesky() {
            let s = ch.solve(&rhs);
            if s.iter().all(|x| x.is_finite()) {
                return s.iter().copied().collect();
            }
        }
        mu *= 100.0;
    }
    rhs.iter().copied().collect()
}

fn unbounded(d: usize) -> (Vec<f64>, Vec<f64>) {
    (vec![f64::NEG_INFINITY; d], vec![f64::INFINITY; d])
}

/// `L_J(x, v)` for a face set `J` contained in `J*(x)`.
pub fn legendre_piece(
    ham: &GeneratingHamiltonians,
    faces: &FaceIndex,
    x: &[f64],
    v: &[f64],
) -> Result<LagrangianEval, LegendreError> {
    let local = ham.at(x)?;
    let mask = local.mask_of(faces)?;
    piece_at(&local, mask, v)
}

/// `L_mask` on an already frozen Hamiltonian.
pub fn piece_at(local: &LocalHamiltonian, mask: PieceMask, v: &[f64]) -> Result<LagrangianEval, LegendreError> {
    let (lo, hi) = unbounded(local.dim());
    maximize_dual(local, mask, v, &lo, &hi)
}

/// `L(x, v)`: the Legendre transform of `p -> H_dagger(x, p)`.
pub fn legendre_full(ham: &GeneratingHamiltonians, x: &[f64], v: &[f64]) -> Result<LagrangianEval, LegendreError> {
    let local = ham.at(x)?;
    full_at(&local, v)
}

pub fn full_at(local: &LocalHamiltonian, v: &[f64]) -> Result<LagrangianEval, LegendreError> {
    let d = local.dim();
    if local.switch_mask() == 0 {
        return piece_at(local, 0, v);
    }
    let switches = local.switch_coordinates().ok_or_else(|| LegendreError::NonSeparable { x: local.x().to_vec() })?;
    let mut best: Option<LagrangianEval> = None;
    let mut total_iter = 0;
    for sel in 0u32..(1 << switches.len()) {
        let (mut lo, mut hi) = unbounded(d);
        let mut mask = 0;
        for (k, &(bit, coord)) in switches.iter().enumerate() {
            if sel >> k & 1 == 1 {
                // harvesting switched off: the region where it would be positive
                mask |= 1 << bit;
                lo[coord] = lo[coord].max(0.0);
            } else {
                hi[coord] = hi[coord].min(0.0);
            }
        }
        if (0..d).any(|i| lo[i] > hi[i]) {
            continue;
        }
        let r = maximize_dual(local, mask, v, &lo, &hi)?;
        total_iter += r.iterations;
        let better = match &best {
            None => true,
            Some(b) => r.value > b.value,
        };
        if better {
            best = Some(r);
        }
    }
    let mut out = best.expect("at least one sign region");
    out.iterations = total_iter;
    Ok(out)
}

/// `L_emptyset(x, grad_p H_emptyset(x, 0))`, which vanishes for a consistent solver.
pub fn zero_cost_residual(ham: &GeneratingHamiltonians, x: &[f64]) -> Result<f64, LegendreError> {
    let local = ham.at(x)?;
    let v = local.grad(0, &vec![0.0; local.dim()]);
    Ok(piece_at(&local, 0, &v)?.value)
}

/// Interval of `c` with `v + c u` in the closed cone spanned by `dirs`, within `[-m, m]`.
fn line_domain(dirs: &[Vec<f64>], v: &[f64], u: &[f64], m: f64) -> Option<(f64, f64)> {
    let inside = |c: f64| -> bool {
        let w: Vec<f64> = v.iter().zip(u).map(|(a, b)| a + c * b).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return true;
        }
        if dirs.is_empty() {
            return false;
        }
        let coef = nnls(dirs, &w);
        let mut r = w.clone();
        for (c, dvec) in coef.iter().zip(dirs) {
            for (ri, di) in r.iter_mut().zip(dvec) {
                *ri -= c * di;
            }
        }
        r.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1e-10 * (1.0 + norm)
    };
    let samples = 41;
    let mut seed = None;
    for k in 0..samples {
        let c = -m + 2.0 * m * k as f64 / (samples - 1) as f64;
        if inside(c) {
            seed = Some(c);
            break;
        }
    }
    if seed.is_none() && inside(0.0) {
        seed = Some(0.0);
    }
    let c0 = seed?;
    let edge = |target: f64| -> f64 {
        if inside(target) {
            return target;
        }
        let (mut good, mut bad) = (c0, target);
        for _ in 0..80 {
            let mid = 0.5 * (good + bad);
            if inside(mid) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        good
    };
    Some((edge(-m), edge(m)))
}

/// Domain of `c -> L_mask(x, v + c u)` clipped to `[-m, m]`.
fn piece_line_domain(local: &LocalHamiltonian, mask: PieceMask, v: &[f64], u: &[f64], m: f64) -> Option<(f64, f64)> {
    let dirs = local.piece_directions(mask);
    if local.dim() == 1 {
        let has_pos = dirs.iter().any(|g| g[0] > 0.0);
        let has_neg = dirs.iter().any(|g| g[0] < 0.0);
        let lo_v = if has_neg { f64::NEG_INFINITY } else { 0.0 };
        let hi_v = if has_pos { f64::INFINITY } else { 0.0 };
        // v + c u in [lo_v, hi_v] with u = +-1
        let (a, b) = if u[0] > 0.0 { (lo_v - v[0], hi_v - v[0]) } else { (v[0] - hi_v, v[0] - lo_v) };
        let (a, b) = (a.max(-m), b.min(m));
        return if a <= b { Some((a, b)) } else { None };
    }
    line_domain(&dirs, v, u, m)
}

/// Best two-piece decomposition `lambda L_q(v_q) + (1 - lambda) L_p(v_p)` with
/// `v_q - v_p` parallel to `u`.
fn pair_hull(
    local: &LocalHamiltonian,
    p_mask: PieceMask,
    q_mask: PieceMask,
    v: &[f64],
    u: &[f64],
) -> Result<(f64, HullCertificate), LegendreError> {
    let m = 1e3 * (1.0 + v.iter().map(|x| x.abs()).fold(0.0, f64::max));
    let dom_p = piece_line_domain(local, p_mask, v, u, m);
    let dom_q = piece_line_domain(local, q_mask, v, u, m);
    let shift = |c: f64| -> Vec<f64> { v.iter().zip(u).map(|(a, b)| a + c * b).collect() };
    let cost = |mask: PieceMask, c: f64| -> f64 {
        match piece_at(local, mask, &shift(c)) {
            Ok(r) => r.value,
            Err(_) => f64::INFINITY,
        }
    };
    // inner problem at fixed weight: minimize over w = lambda * c_q
    let inner = |lam: f64| -> (f64, f64) {
        if lam <= 0.0 {
            return (0.0, cost(p_mask, 0.0));
        }
        if lam >= 1.0 {
            return (0.0, cost(q_mask, 0.0));
        }
        let (Some((qa, qb)), Some((pa, pb))) = (dom_q, dom_p) else {
            return (0.0, f64::INFINITY);
        };
        let lo = (lam * qa).max(-(1.0 - lam) * pb);
        let hi = (lam * qb).min(-(1.0 - lam) * pa);
        if lo > hi {
            return (0.0, f64::INFINITY);
        }
        let f = |w: f64| lam * cost(q_mask, w / lam) + (1.0 - lam) * cost(p_mask, -w / (1.0 - lam));
        golden_min(f, lo, hi, 1e-10 * (1.0 + hi - lo), 200)
    };
    let (lam, val) = golden_min(|l| inner(l).1, 0.0, 1.0, 1e-8, 200);
    let (w, _) = inner(lam);
    let (cq, cp) = if lam > 0.0 && lam < 1.0 { (w / lam, -w / (1.0 - lam)) } else { (0.0, 0.0) };
    let cert = HullCertificate {
        faces: vec![local.face_set(p_mask), local.face_set(q_mask)],
        weights: vec![1.0 - lam, lam],
        velocities: vec![shift(cp), shift(cq)],
        costs: vec![cost(p_mask, cp), cost(q_mask, cq)],
    };
    Ok((val, cert))
}

/// Convex-hull Lagrangian `L_hat(x, v)`.
///
/// In one dimension the two-piece decomposition is searched exactly. In higher
/// dimensions only pairs of pieces differing in one switched face, with velocity
/// split along the harvested coordinate, are searched; the result is then an
/// upper bound on the true hull.
pub fn lagrangian_hull(
    ham: &GeneratingHamiltonians,
    x: &[f64],
    v: &[f64],
) -> Result<(f64, HullCertificate), LegendreError> {
    let local = ham.at(x)?;
    hull_at(&local, v)
}

pub fn hull_at(local: &LocalHamiltonian, v: &[f64]) -> Result<(f64, HullCertificate), LegendreError> {
    let single = |mask: PieceMask| -> Result<(f64, HullCertificate), LegendreError> {
        let r = piece_at(local, mask, v)?;
        Ok((
            r.value,
            HullCertificate { faces: vec![local.face_set(mask)], weights: vec![1.0], velocities: vec![v.to_vec()], costs: vec![r.value] },
        ))
    };
    let mut best = single(0)?;
    if local.switch_mask() == 0 {
        return Ok(best);
    }
    let switches = local.switch_coordinates().ok_or_else(|| LegendreError::NonSeparable { x: local.x().to_vec() })?;
    let d = local.dim();
    let consider = |cand: (f64, HullCertificate), best: &mut (f64, HullCertificate)| {
        if cand.0 < best.0 {
            *best = cand;
        }
    };
    for m in local.masks() {
        consider(single(m)?, &mut best);
    }
    for m in local.masks() {
        for &(bit, coord) in &switches {
            if m >> bit & 1 == 1 {
                continue;
            }
            let mut u = vec![0.0; d];
            u[coord] = 1.0;
            consider(pair_hull(local, m, m | 1 << bit, v, &u)?, &mut best);
        }
    }
    Ok(best)
}

/// `sup_v <p, v> - L(x, v)` over the velocity grid plus the gradients of every
/// active piece at `p`.
pub fn conjugate_on_grid(
    ham: &GeneratingHamiltonians,
    x: &[f64],
    p: &[f64],
    v_grid: &[Vec<f64>],
) -> Result<f64, LegendreError> {
    let local = ham.at(x)?;
    let mut candidates: Vec<Vec<f64>> = local.masks().map(|m| local.grad(m, p)).collect();
    candidates.extend(v_grid.iter().cloned());
    let mut best = f64::NEG_INFINITY;
    for v in &candidates {
        let l = full_at(&local, v)?;
        if l.value.is_finite() {
            best = best.max(dot(p, v) - l.value);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{bundled, yule, GeneratingHamiltonians};
    use proptest::prelude::*;

    fn two_sided(a: f64, b: f64) -> GeneratingHamiltonians {
        let m = crate::models::birth_death_immigration("0", &format!("{b}"), &format!("{a}")).unwrap();
        GeneratingHamiltonians::build_unchecked(&m)
    }

    fn grid_sup(a: f64, b: f64, v: f64, lo: f64, hi: f64, step: f64) -> f64 {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n)
            .map(|i| {
                let p = lo + i as f64 * step;
                p * v - a * (p.exp() - 1.0) - b * ((-p).exp() - 1.0)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn closed_form_against_grid() {
        for &(a, b, v) in &[(2.0, 0.5, 1.0), (1.0, 1.0, 1.5), (0.1, 10.0, -4.0), (10.0, 0.1, 3.0), (1.0, 1.0, 0.0)] {
            let grid = grid_sup(a, b, v, -15.0, 15.0, 1e-4);
            let cf = closed_form_two_sided(a, b, v);
            assert!((grid - cf).abs() < 1e-7, "{a} {b} {v}: {grid} vs {cf}");
        }
        assert!((closed_form_two_sided(1.0, 0.0, 2.0) - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-15);
        assert!((closed_form_two_sided(1.0, 1.0, 1.5) - 0.539_720_770_839_918).abs() < 1e-12);
        assert_eq!(closed_form_two_sided(1.0, 1.0, 0.0), 0.0);
        assert_eq!(closed_form_two_sided(1.0, 0.0, 0.0), 1.0);
        assert_eq!(closed_form_two_sided(1.0, 0.0, -1.0), f64::INFINITY);
    }

    #[test]
    fn yule_table() {
        let h = GeneratingHamiltonians::build(&yule().unwrap()).unwrap();
        let empty = FaceIndex::empty();
        let r = legendre_piece(&h, &empty, &[1.0], &[1.0]).unwrap();
        assert!(r.value.abs() < 1e-14 && r.argmax_p.unwrap()[0].abs() < 1e-12);
        let r = legendre_piece(&h, &empty, &[1.0], &[2.0]).unwrap();
        assert!((r.value - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-12);
        let r = legendre_piece(&h, &empty, &[1.0], &[0.0]).unwrap();
        assert_eq!(r.status, LagrangianStatus::LimitAtInfinity);
        assert!((r.value - 1.0).abs() < 1e-12);
        let r = legendre_piece(&h, &empty, &[1.0], &[-0.5]).unwrap();
        assert_eq!(r.status, LagrangianStatus::Infinite);
        assert_eq!(r.value, f64::INFINITY);
    }

    #[test]
    fn yule_zero_velocity_matches_grid_oracle() {
        let grid = (0..=450_000).map(|i| -40.0 + i as f64 * 1e-4).map(|p| -(p.exp() - 1.0)).fold(f64::NEG_INFINITY, f64::max);
        let h = GeneratingHamiltonians::build(&yule().unwrap()).unwrap();
        let r = legendre_piece(&h, &FaceIndex::empty(), &[1.0], &[0.0]).unwrap();
        assert!((r.value - grid).abs() < 1e-12);
    }

    #[test]
    fn two_sided_piece_matches_closed_form() {
        let h = two_sided(1.0, 1.0);
        let r = legendre_piece(&h, &FaceIndex::empty(), &[1.0], &[1.5]).unwrap();
        assert!((r.value - 0.539_720_770_839_918).abs() < 1e-10);
    }

    #[test]
    fn interior_full_equals_piece() {
        let h = GeneratingHamiltonians::build(&bundled("birth_death_harvesting").unwrap()).unwrap();
        for &v in &[-2.0, -0.3, 0.0, 0.8, 3.0] {
            let a = legendre_full(&h, &[1.2], &[v]).unwrap();
            let b = legendre_piece(&h, &FaceIndex::empty(), &[1.2], &[v]).unwrap();
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn harvesting_boundary_subdifferential() {
        // at x = 0, H_dagger(0, p) = (e^p - 1) + max(beta (e^{-p} - 1), 0) with beta = 0.5
        let h = GeneratingHamiltonians::build(&bundled("birth_death_harvesting").unwrap()).unwrap();
        // one-sided slopes at p = 0: left 1 - 0.5 = 0.5, right 1
        let zero_cost = [0.5, 0.75, 1.0];
        for v in zero_cost {
            let r = legendre_full(&h, &[0.0], &[v]).unwrap();
            assert!(r.value.abs() < 1e-10, "{v}: {}", r.value);
        }
        for v in [0.2, 1.3, 2.0] {
            let r = legendre_full(&h, &[0.0], &[v]).unwrap();
            assert!(r.value > 1e-4, "{v}");
        }
        // rho - beta lies on the boundary of the subdifferential
        let r = legendre_full(&h, &[0.0], &[1.0 - 0.5]).unwrap();
        assert!(r.value.abs() < 1e-10);
    }

    #[test]
    fn hull_brackets_full_lagrangian() {
        let h = GeneratingHamiltonians::build(&bundled("birth_death_harvesting").unwrap()).unwrap();
        for &v in &[-1.0, 0.0, 0.25, 0.5, 0.7, 1.0, 1.6] {
            let l = legendre_full(&h, &[0.0], &[v]).unwrap().value;
            let (lh, cert) = lagrangian_hull(&h, &[0.0], &[v]).unwrap();
            let l0 = legendre_piece(&h, &FaceIndex::empty(), &[0.0], &[v]).unwrap().value;
            let l1 = legendre_piece(&h, &FaceIndex::new(vec![0]), &[0.0], &[v]).unwrap().value;
            assert!(l <= lh + 1e-8, "{v}: {l} > {lh}");
            assert!(lh <= l0.min(l1) + 1e-10, "{v}");
            let s: f64 = cert.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            let mix: f64 = cert.weights.iter().zip(&cert.velocities).map(|(w, u)| w * u[0]).sum();
            assert!((mix - v).abs() < 1e-6 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn hull_between_zero_cost_velocities_against_brute_force() {
        // zero-cost velocities: H_boundary gives rho(0) = 1, H_empty gives rho - beta = 0.5
        let h = GeneratingHamiltonians::build(&bundled("birth_death_harvesting").unwrap()).unwrap();
        let local = h.at(&[0.0]).unwrap();
        let v = 0.8;
        let (lh, _) = hull_at(&local, &[v]).unwrap();
        let l0 = piece_at(&local, 0, &[v]).unwrap().value;
        let l1 = piece_at(&local, 1, &[v]).unwrap().value;
        assert!(lh <= l0.min(l1) + 1e-12);
        let mut brute = f64::INFINITY;
        for i in 0..=1000 {
            let lam = i as f64 / 1000.0;
            for j in 0..=60 {
                let v1 = 0.4 + j as f64 * 0.02;
                if lam == 0.0 && (v1 - v).abs() > 1e-12 {
                    continue;
                }
                if lam >= 1.0 {
                    continue;
                }
                let v0 = (v - lam * v1) / (1.0 - lam);
                let c = lam * piece_at(&local, 1, &[v1]).unwrap().value + (1.0 - lam) * piece_at(&local, 0, &[v0]).unwrap().value;
                brute = brute.min(c);
            }
        }
        assert!(lh <= brute + 1e-9, "{lh} vs {brute}");
    }

    #[test]
    fn multi_d_zero_cost_at_boundary_points() {
        for name in ["prey_predator", "sir_dynamics", "interacting_species"] {
            let m = bundled(name).unwrap();
            let h = GeneratingHamiltonians::build(&m).unwrap();
            let d = m.dim();
            for k in 0..d {
                let mut x = vec![0.7; d];
                x[k] = 0.0;
                assert!(zero_cost_residual(&h, &x).unwrap() <= 1e-10, "{name}");
                let origin = vec![0.0; d];
                assert!(zero_cost_residual(&h, &origin).unwrap() <= 1e-10, "{name}");
                let l = legendre_full(&h, &x, &vec![0.1; d]).unwrap();
                assert!(l.value.is_finite() && l.value >= 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn full_lagrangian_is_convex_in_velocity(v in -3.0f64..3.0, w in -3.0f64..3.0, x in 0.0f64..2.0) {
            let h = GeneratingHamiltonians::build(&bundled("birth_death_harvesting").unwrap()).unwrap();
            let x = if x < 0.3 { 0.0 } else { x };
            let a = legendre_full(&h, &[x], &[v]).unwrap().value;
            let b = legendre_full(&h, &[x], &[w]).unwrap().value;
            let m = legendre_full(&h, &[x], &[0.5 * (v + w)]).unwrap().value;
            prop_assert!(m <= 0.5 * (a + b) + 1e-9);
            prop_assert!(a >= -1e-12);
        }

        #[test]
        fn fenchel_inequality(p in -3.0f64..3.0, v in -4.0f64..4.0, x in 0.0f64..3.0) {
            let h = GeneratingHamiltonians::build(&bundled("birth_death_harvesting").unwrap()).unwrap();
            let x = if x < 0.5 { 0.0 } else { x };
            let l = legendre_full(&h, &[x], &[v]).unwrap().value;
            let hd = h.eval_h_dagger(&[x], &[p]).unwrap();
            prop_assert!(p * v <= l + hd + 1e-9);
        }
    }
}
