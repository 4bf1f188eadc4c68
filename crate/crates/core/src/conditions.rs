//! Numeric probes of the comparison-principle conditions.
//!
//! Every probe is a report over finite grids. Verdicts state what was observed on
//! the probed ranges; none of them certifies that a condition holds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse_rate_expr, CompiledExpr, ExprError};
use crate::geometry::dot;
use crate::models::{GeneratingHamiltonians, HamiltonianError, Kind, LocalHamiltonian, Model};
use crate::numerics::{halton_box, sat_exp, slope};

/// Classification thresholds for the limit `p -> d inf`.
pub const P_MAX: f64 = 40.0;
pub const DIVERGENCE_LEVEL: f64 = 1e3;
pub const CONVERGENCE_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ConditionError {
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error("candidate '{name}': {source}")]
    Expr { name: String, source: ExprError },
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Minus,
    Plus,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Minus => -1.0,
            Direction::Plus => 1.0,
        }
    }
}

/// Side of a one-dimensional state space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    /// `s` in `{-1, +1}`.
    pub fn sign(self) -> f64 {
        match self {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentCandidate {
    pub name: String,
    pub expr: String,
    /// Gradient expressions; the symbolic derivative of `expr` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient: Option<Vec<String>>,
    pub zero_point: Vec<f64>,
}

impl ContainmentCandidate {
    /// `log(log(x)) - 1` on `[e^e, inf)`, vanishing at `e^e`.
    pub fn loglog() -> Self {
        ContainmentCandidate {
            name: "loglog".into(),
            expr: "log(log(x1)) - 1".into(),
            gradient: None,
            zero_point: vec![std::f64::consts::E.powf(std::f64::consts::E)],
        }
    }

    /// `-log(x)` near 0, vanishing at 1.
    pub fn neg_log() -> Self {
        ContainmentCandidate { name: "neg_log".into(), expr: "-log(x1)".into(), gradient: None, zero_point: vec![1.0] }
    }

    /// `delta log(1 + x^2)`.
    pub fn log1p_square(delta: f64) -> Self {
        ContainmentCandidate {
            name: "log1p_square".into(),
            expr: format!("{delta} * log(1 + x1^2)"),
            gradient: None,
            zero_point: vec![0.0],
        }
    }

    pub fn linear() -> Self {
        ContainmentCandidate { name: "linear".into(), expr: "x1".into(), gradient: None, zero_point: vec![0.0] }
    }

    fn compile(&self, dim: usize) -> Result<(CompiledExpr, Vec<CompiledExpr>), ConditionError> {
        let err = |source| ConditionError::Expr { name: self.name.clone(), source };
        let params = Default::default();
        let f = parse_rate_expr(&self.expr).and_then(|e| e.bind(&params, dim)).map_err(err)?;
        let grad = match &self.gradient {
            Some(list) => list
                .iter()
                .map(|g| parse_rate_expr(g).and_then(|e| e.bind(&params, dim)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(err)?,
            None => (0..dim).map(|i| f.derivative(i)).collect(),
        };
        Ok((f, grad))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentProbe {
    pub bounds: Vec<(f64, f64)>,
    pub points_per_axis: usize,
    #[serde(default)]
    pub log_spacing: bool,
}

fn axis(lo: f64, hi: f64, n: usize, log: bool) -> Vec<f64> {
    let n = n.max(2);
    if log && hi > 0.0 {
        let start = if lo > 0.0 { lo } else { 1e-3 * hi.max(1.0) };
        let mut v: Vec<f64> = (0..n).map(|i| start * (hi / start).powf(i as f64 / (n - 1) as f64)).collect();
        if lo < start {
            v.insert(0, lo);
        }
        *v.last_mut().unwrap() = hi;
        v
    } else {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }
}

fn grid(probe: &ContainmentProbe) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> =
        probe.bounds.iter().map(|&(lo, hi)| axis(lo, hi, probe.points_per_axis, probe.log_spacing)).collect();
    let mut out = vec![Vec::new()];
    for a in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                a.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub candidate: ContainmentCandidate,
    pub probe: ContainmentProbe,
    pub min_value: f64,
    pub zero_value: f64,
    pub nonnegative: Verdict,
    pub zero_point: Verdict,
    pub compact_levels: Verdict,
    /// `max_J sup_z H_J(z, grad Upsilon(z))` over the probe grid.
    pub sup_h: f64,
    pub argmax: Vec<f64>,
    /// Ratio of the sup over the last decade of the probe to the sup over the decade before.
    pub decade_growth: f64,
    pub sup_verdict: Verdict,
}

fn norm_inf(x: &[f64]) -> f64 {
    x.iter().map(|c| c.abs()).fold(0.0, f64::max)
}

/// Items of the good-containment-function definition, probed on a grid.
pub fn check_containment(
    ham: &GeneratingHamiltonians,
    cand: &ContainmentCandidate,
    probe: &ContainmentProbe,
) -> Result<ContainmentReport, ConditionError> {
    let d = ham.dim();
    if probe.bounds.len() != d || cand.zero_point.len() != d {
        return Err(ConditionError::Unsupported(format!("probe and zero point must have dimension {d}")));
    }
    let (f, grad) = cand.compile(d)?;
    let points: Vec<Vec<f64>> = grid(probe).into_iter().filter(|x| ham.space().contains_unchecked(x)).collect();
    let mut min_value = f64::INFINITY;
    let mut sup = f64::NEG_INFINITY;
    let mut argmax = vec![];
    let mut evaluated = Vec::with_capacity(points.len());
    for x in &points {
        let v = f.value(x);
        if v.is_nan() {
            return Err(ConditionError::Expr {
                name: cand.name.clone(),
                source: ExprError::Domain(format!("candidate undefined at {x:?}")),
            });
        }
        min_value = min_value.min(v);
        let g: Vec<f64> = grad.iter().map(|e| e.value(x)).collect();
        let h = ham.at(x)?.dagger(&g);
        evaluated.push((norm_inf(x), h));
        if h > sup {
            sup = h;
            argmax = x.clone();
        }
    }
    let zero_value = f.value(&cand.zero_point);
    // along each coordinate ray from the zero point the candidate must keep growing
    let mut compact = true;
    for i in 0..d {
        for (lo_end, end) in [(true, probe.bounds[i].0), (false, probe.bounds[i].1)] {
            let z = cand.zero_point[i];
            if (lo_end && end >= z) || (!lo_end && end <= z) {
                continue;
            }
            let ray: Vec<f64> = (1..=20)
                .map(|k| {
                    let mut x = cand.zero_point.clone();
                    x[i] = z + (end - z) * k as f64 / 20.0;
                    f.value(&x)
                })
                .collect();
            compact &= ray.windows(2).skip(10).all(|w| w[1] > w[0]);
        }
    }
    let top = probe.bounds.iter().map(|b| b.0.abs().max(b.1.abs())).fold(0.0, f64::max);
    let band = |lo: f64, hi: f64| {
        evaluated.iter().filter(|(r, _)| *r >= lo && *r <= hi).map(|(_, h)| *h).fold(f64::NEG_INFINITY, f64::max)
    };
    let last = band(top / 10.0, top);
    let prev = band(top / 100.0, top / 10.0);
    let decade_growth = if prev > 0.0 && last.is_finite() { last / prev } else if last > 0.0 { f64::INFINITY } else { 1.0 };
    let in_last_decade = norm_inf(&argmax) >= top / 10.0;
    let diverging = !sup.is_finite() || (in_last_decade && decade_growth > 1.05);
    Ok(ContainmentReport {
        candidate: cand.clone(),
        probe: probe.clone(),
        min_value,
        zero_value,
        nonnegative: Verdict::from_bool(min_value >= -1e-12),
        zero_point: Verdict::from_bool(zero_value.abs() <= 1e-12),
        compact_levels: Verdict::from_bool(compact),
        sup_h: sup,
        argmax,
        decade_growth,
        sup_verdict: Verdict::from_bool(!diverging),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixBReport {
    pub alpha: f64,
    pub probe: (f64, f64),
    pub sup: f64,
    pub argmax: f64,
    /// Log-log slope of the sum over the upper half of the probe.
    pub trend: f64,
    /// Largest relative size of the last summed term; large values mean truncation dominates.
    pub truncation_ratio: f64,
    pub verdict: Verdict,
}

/// `sup_x sum_k (k / (1 + x))^2 e^{alpha k / (1 + x)} x v_k(x)` over a log grid of `[lo, hi]`.
pub fn check_appendix_b(model: &Model, alpha: f64, probe: (f64, f64), points: usize) -> Result<AppendixBReport, ConditionError> {
    let off = model
        .offspring()
        .ok_or_else(|| ConditionError::Unsupported(format!("model '{}' has no offspring distribution", model.name())))?;
    let xs = axis(probe.0, probe.1, points, true);
    let mut sup = f64::NEG_INFINITY;
    let mut argmax = xs[0];
    let mut trunc = 0.0f64;
    let mut curve = Vec::new();
    for &x in &xs {
        let terms = off.terms_with(&[x], crate::models::SERIES_MAX_TERMS, 0.0);
        let s = 1.0 + x.abs();
        let weighted: Vec<f64> = terms
            .weights
            .iter()
            .map(|&(k, v)| {
                let k = k as f64;
                if v == 0.0 {
                    0.0
                } else {
                    (k / s).powi(2) * sat_exp(alpha * k / s) * x * v
                }
            })
            .collect();
        let total: f64 = weighted.iter().sum();
        let truncated = matches!(off, crate::models::Offspring::Series(_)) && terms.weights.len() >= crate::models::SERIES_MAX_TERMS;
        if let (true, Some(last)) = (truncated, weighted.last()) {
            if total > 0.0 {
                trunc = trunc.max(last.abs() / total);
            } else if *last != 0.0 {
                trunc = f64::INFINITY;
            }
        }
        if total > sup {
            sup = total;
            argmax = x;
        }
        curve.push((x, total));
    }
    let upper: Vec<(f64, f64)> = curve.iter().skip(curve.len() / 2).filter(|(x, v)| *x > 0.0 && *v > 0.0).map(|(x, v)| (x.ln(), v.ln())).collect();
    let trend = if upper.len() >= 2 {
        let (a, b): (Vec<f64>, Vec<f64>) = upper.into_iter().unzip();
        slope(&a, &b)
    } else {
        0.0
    };
    let ok = sup.is_finite() && trunc <= 1e-8 && trend <= 0.05;
    Ok(AppendixBReport { alpha, probe, sup, argmax, trend, truncation_ratio: trunc, verdict: Verdict::from_bool(ok) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum LimitClass {
    /// `inf_K H -> inf`.
    Divergent { inf_at_pmax: f64 },
    /// `H(., p) -> h` uniformly on K; `h` sampled at the grid.
    Convergent { variation: f64, h: Vec<f64> },
    Inconclusive { inf_at_pmax: f64, variation: f64 },
}

fn k_grid(k: (f64, f64)) -> Vec<f64> {
    (0..=50).map(|i| k.0 + (k.1 - k.0) * i as f64 / 50.0).collect()
}

fn classify(locals: &[LocalHamiltonian], d: Direction, p_max: f64) -> LimitClass {
    let s = d.sign();
    let steps = p_max.round() as i64;
    let inf_at = |j: i64| locals.iter().map(|l| l.h(0, &[s * j as f64])).fold(f64::INFINITY, f64::min);
    let last: Vec<f64> = ((steps - 9)..=steps).map(inf_at).collect();
    let inf_at_pmax = *last.last().unwrap();
    if inf_at_pmax > DIVERGENCE_LEVEL && last.windows(2).all(|w| w[1] > w[0]) {
        return LimitClass::Divergent { inf_at_pmax };
    }
    let h: Vec<f64> = locals.iter().map(|l| l.h(0, &[s * steps as f64])).collect();
    let variation = locals
        .iter()
        .zip(&h)
        .map(|(l, hv)| ((steps - 9)..steps).map(|j| (l.h(0, &[s * j as f64]) - hv).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    if variation < CONVERGENCE_TOL && h.iter().all(|v| v.is_finite()) {
        LimitClass::Convergent { variation, h }
    } else {
        LimitClass::Inconclusive { inf_at_pmax, variation }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRelation {
    pub side: Side,
    pub point: f64,
    /// Largest violation of `-s p >= 0 => H_s >= H_empty` and `-s p <= 0 => H_s <= H_empty`.
    pub worst_violation: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicReport {
    pub k: (f64, f64),
    pub p_max: f64,
    pub minus: LimitClass,
    pub plus: LimitClass,
    pub boundary: Vec<BoundaryRelation>,
}

fn one_d(ham: &GeneratingHamiltonians) -> Result<(), ConditionError> {
    if ham.dim() != 1 {
        return Err(ConditionError::Unsupported("this probe is one-dimensional".into()));
    }
    Ok(())
}

/// Boundary points of a one-dimensional space that belong to E.
fn boundary_points(ham: &GeneratingHamiltonians) -> Vec<(Side, f64)> {
    ham.space()
        .closed_faces()
        .iter()
        .map(|f| {
            let side = if f.normal[0] > 0.0 { Side::Lower } else { Side::Upper };
            (side, f.base[0])
        })
        .collect()
}

/// Interior behaviour on `K` in both directions, and the sign relations between
/// boundary pieces and `H_empty` at each boundary point.
pub fn check_condition_basic(ham: &GeneratingHamiltonians, k: (f64, f64), p_max: f64) -> Result<BasicReport, ConditionError> {
    one_d(ham)?;
    let locals = k_grid(k).iter().map(|x| ham.at(&[*x])).collect::<Result<Vec<_>, _>>()?;
    let minus = classify(&locals, Direction::Minus, p_max);
    let plus = classify(&locals, Direction::Plus, p_max);
    let mut boundary = Vec::new();
    for (side, point) in boundary_points(ham) {
        let local = ham.at(&[point])?;
        let s = side.sign();
        let mut worst = 0.0f64;
        for i in -100..=100 {
            let p = [i as f64 * 0.1];
            let diff = local.h(local.full_mask(), &p) - local.h(0, &p);
            let tol = 1e-12 * (1.0 + diff.abs());
            // -s p >= 0 needs diff >= 0, -s p <= 0 needs diff <= 0
            if -s * p[0] > 0.0 {
                worst = worst.max(-diff - tol);
            } else if -s * p[0] < 0.0 {
                worst = worst.max(diff - tol);
            }
        }
        boundary.push(BoundaryRelation { side, point, worst_violation: worst, verdict: Verdict::from_bool(worst <= 0.0) });
    }
    Ok(BasicReport { k, p_max, minus, plus, boundary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryVerdict {
    Strong,
    Weak1,
    /// Sampled-sequence probe of weak condition (2); heuristic.
    Weak2Heuristic,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub side: Side,
    pub direction: Direction,
    pub k: (f64, f64),
    pub strong: LimitClass,
    /// Worst (largest) liminf estimate of `H(x_a, p_a) - H(y_a, p_a)` over the sequence family.
    pub weak2_probe: f64,
    pub weak2_label: String,
    pub verdict: BoundaryVerdict,
}

/// Rates grouped by jump direction.
fn direction_rates(local: &LocalHamiltonian) -> Vec<(Vec<f64>, f64)> {
    let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
    for t in local.terms() {
        match out.iter_mut().find(|(g, _)| *g == t.gamma) {
            Some(e) => e.1 += t.rate,
            None => out.push((t.gamma.clone(), t.rate)),
        }
    }
    out
}

/// `H_empty(x, p) - H_empty(y, p)` summed per jump direction to avoid cancellation.
fn termwise_difference(ham: &GeneratingHamiltonians, x: &[f64], y: &[f64], p: &[f64]) -> Result<f64, ConditionError> {
    let rx = direction_rates(&ham.at(x)?);
    let ry = direction_rates(&ham.at(y)?);
    let mut dirs: Vec<Vec<f64>> = rx.iter().map(|r| r.0.clone()).collect();
    for (g, _) in &ry {
        if !dirs.contains(g) {
            dirs.push(g.clone());
        }
    }
    let rate = |list: &[(Vec<f64>, f64)], g: &[f64]| list.iter().find(|(h, _)| h.as_slice() == g).map(|r| r.1).unwrap_or(0.0);
    let mut total = 0.0;
    for g in dirs {
        let dr = rate(&rx, &g) - rate(&ry, &g);
        if dr != 0.0 {
            total += dr * (sat_exp(dot(&g, p)) - 1.0);
        }
    }
    Ok(total)
}

/// Boundary condition at `side` in direction `d` on `K = [boundary, boundary + len]`
/// (reflected for the upper side).
pub fn check_condition_boundary(
    ham: &GeneratingHamiltonians,
    side: Side,
    direction: Direction,
    len: f64,
    p_max: f64,
) -> Result<BoundaryReport, ConditionError> {
    one_d(ham)?;
    let Some(&(_, point)) = boundary_points(ham).iter().find(|(s, _)| *s == side) else {
        return Err(ConditionError::Unsupported(format!("{side:?} boundary is not part of E")));
    };
    let inward = -side.sign();
    let k = if inward > 0.0 { (point, point + len) } else { (point - len, point) };
    let locals = k_grid(k).iter().map(|x| ham.at(&[*x])).collect::<Result<Vec<_>, _>>()?;
    let strong = classify(&locals, direction, p_max);
    // x_a = boundary + inward c / sqrt(a), y_a = x_a - d q / sqrt(a), so p_a = d q sqrt(a)
    let dsign = direction.sign();
    let mut worst = f64::NEG_INFINITY;
    for c in [0.5, 1.0, 2.0] {
        for q in [0.25, 0.5, 1.0] {
            let mut values = Vec::new();
            for e in 2..=8 {
                let a = 10f64.powi(e);
                let x = point + inward * c / a.sqrt();
                let y = x - dsign * q / a.sqrt();
                if !ham.space().contains_unchecked(&[x]) || !ham.space().contains_unchecked(&[y]) {
                    continue;
                }
                let p = a * (x - y);
                values.push(termwise_difference(ham, &[x], &[y], &[p])?);
            }
            if values.len() >= 3 {
                let liminf = values[values.len() - 3..].iter().copied().fold(f64::INFINITY, f64::min);
                worst = worst.max(liminf);
            }
        }
    }
    let verdict = match &strong {
        LimitClass::Divergent { .. } => BoundaryVerdict::Strong,
        LimitClass::Convergent { .. } => BoundaryVerdict::Weak1,
        LimitClass::Inconclusive { .. } if worst <= 1e-9 => BoundaryVerdict::Weak2Heuristic,
        LimitClass::Inconclusive { .. } => BoundaryVerdict::Fail,
    };
    Ok(BoundaryReport {
        side,
        direction,
        k,
        strong,
        weak2_probe: worst,
        weak2_label: "HEURISTIC: finite sequence family, the condition quantifies over all sequences".into(),
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultidCase {
    A,
    B,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultidReport {
    pub box_bounds: Vec<(f64, f64)>,
    /// `sup_K |grad_p H_0(x, 0)|`, the constant in the lower bound of (a)(i).
    pub m_k: f64,
    /// Worst `H_0(x, p) + |p| M_K` over sampled `(x, p)`; nonnegative when (a)(i) holds.
    pub lower_bound_slack: f64,
    /// Extrapolated `lim inf_K H_0(x, p) / |p|` over sampled directions (interior box).
    pub growth_rate: f64,
    pub min_a: Vec<f64>,
    pub min_b: Vec<f64>,
    pub min_a_near_boundary: Vec<f64>,
    pub min_b_near_boundary: Vec<f64>,
    pub case_a: Verdict,
    pub case_b: Verdict,
    pub verdict: MultidCase,
}

/// Orthant models: split into `H_0` (interaction terms), immigration `a_i` and harvesting `b_i`,
/// then probe conditions (a) and (b).
pub fn check_multid(model: &Model, box_bounds: &[(f64, f64)], samples: usize) -> Result<MultidReport, ConditionError> {
    let d = model.dim();
    let space = model.space();
    let orthant = space.open_faces().is_empty()
        && space.closed_faces().len() == d
        && space.closed_faces().iter().enumerate().all(|(i, f)| {
            f.normal.iter().enumerate().all(|(j, n)| if i == j { *n > 0.0 } else { *n == 0.0 }) && f.base.iter().all(|b| *b == 0.0)
        });
    if !orthant || box_bounds.len() != d {
        return Err(ConditionError::Unsupported("the multi-dimensional probe needs an orthant model and a matching box".into()));
    }
    let interactions: Vec<(Vec<f64>, &CompiledExpr)> =
        model.transitions().iter().filter(|t| t.kind == Kind::Interaction).map(|t| (t.gamma_f64(), &t.rate)).collect();
    let coordinate_rate = |kind: Kind, i: usize, x: &[f64]| -> f64 {
        model
            .transitions()
            .iter()
            .filter(|t| t.kind == kind && t.gamma.iter().enumerate().all(|(j, g)| if j == i { *g != 0 } else { *g == 0 }))
            .map(|t| t.rate.value(x))
            .sum()
    };
    let h0 = |x: &[f64], p: &[f64]| -> f64 { interactions.iter().map(|(g, r)| r.value(x) * (sat_exp(dot(g, p)) - 1.0)).sum() };
    let grad0 = |x: &[f64]| -> Vec<f64> {
        let mut v = vec![0.0; d];
        for (g, r) in &interactions {
            let rv = r.value(x);
            for i in 0..d {
                v[i] += rv * g[i];
            }
        }
        v
    };
    let norm = |u: &[f64]| u.iter().map(|c| c * c).sum::<f64>().sqrt();
    let xs = halton_box(box_bounds, samples);
    let m_k = xs.iter().map(|x| norm(&grad0(x))).fold(0.0, f64::max);
    let dirs: Vec<Vec<f64>> = halton_box(&vec![(-1.0, 1.0); d], 64)
        .into_iter()
        .filter(|u| norm(u) > 1e-3)
        .map(|u| {
            let n = norm(&u);
            u.iter().map(|c| c / n).collect()
        })
        .collect();
    let mut slack = f64::INFINITY;
    for x in &xs {
        for u in &dirs {
            for r in [0.1, 1.0, 10.0] {
                let p: Vec<f64> = u.iter().map(|c| c * r).collect();
                slack = slack.min(h0(x, &p) + r * m_k);
            }
        }
    }
    let interior: Vec<(f64, f64)> = box_bounds.iter().map(|&(lo, hi)| (lo + 0.1 * (hi - lo), hi)).collect();
    let xi = halton_box(&interior, samples.min(200));
    let rate_at = |r: f64| -> f64 {
        dirs.iter()
            .map(|u| {
                let p: Vec<f64> = u.iter().map(|c| c * r).collect();
                xi.iter().map(|x| h0(x, &p) / r).fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    };
    let growth_rate = 2.0 * rate_at(P_MAX) - rate_at(P_MAX / 2.0);
    let mut min_a = vec![f64::INFINITY; d];
    let mut min_b = vec![f64::INFINITY; d];
    let mut min_a_nb = vec![f64::INFINITY; d];
    let mut min_b_nb = vec![f64::INFINITY; d];
    let mut pts = xs.clone();
    for i in 0..d {
        for x in xs.iter().take(200) {
            let mut y = x.clone();
            y[i] = box_bounds[i].0;
            pts.push(y);
        }
    }
    for x in &pts {
        let near = x.iter().zip(box_bounds).any(|(c, (lo, hi))| *c <= lo + 0.1 * (hi - lo));
        for i in 0..d {
            let a = coordinate_rate(Kind::Immigration, i, x);
            let b = coordinate_rate(Kind::Harvesting, i, x);
            min_a[i] = min_a[i].min(a);
            min_b[i] = min_b[i].min(b);
            if near {
                min_a_nb[i] = min_a_nb[i].min(a);
                min_b_nb[i] = min_b_nb[i].min(b);
            }
        }
    }
    let positive = |v: &[f64]| v.iter().all(|c| *c > 0.0);
    let case_a = Verdict::from_bool(slack >= -1e-9 && positive(&min_a) && positive(&min_b));
    let case_b = Verdict::from_bool(growth_rate >= -1e-6 && positive(&min_a_nb) && positive(&min_b_nb));
    let verdict = if case_a == Verdict::Pass {
        MultidCase::A
    } else if case_b == Verdict::Pass {
        MultidCase::B
    } else {
        MultidCase::Fail
    };
    Ok(MultidReport {
        box_bounds: box_bounds.to_vec(),
        m_k,
        lower_bound_slack: slack,
        growth_rate,
        min_a,
        min_b,
        min_a_near_boundary: min_a_nb,
        min_b_near_boundary: min_b_nb,
        case_a,
        case_b,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confinement {
    pub sup_k_upsilon: f64,
    pub c: f64,
    /// Coordinate extent of `{Upsilon <= C}` along the axes through the zero point.
    pub box_bounds: Vec<(f64, f64)>,
}

/// `C = sup_K Upsilon + M + T max(sup H, 0)` and the axis extent of `{Upsilon <= C}`.
pub fn apriori_confinement(
    report: &ContainmentReport,
    k: &[(f64, f64)],
    horizon: f64,
    m: f64,
) -> Result<Confinement, ConditionError> {
    let cand = &report.candidate;
    let d = cand.zero_point.len();
    let (f, _) = cand.compile(d)?;
    let sup_k = grid(&ContainmentProbe { bounds: k.to_vec(), points_per_axis: 41, log_spacing: false })
        .iter()
        .map(|x| f.value(x))
        .fold(f64::NEG_INFINITY, f64::max);
    let c = sup_k + m + horizon * report.sup_h.max(0.0);
    let mut box_bounds = Vec::with_capacity(d);
    for i in 0..d {
        let at = |t: f64| {
            let mut x = cand.zero_point.clone();
            x[i] = t;
            f.value(&x)
        };
        let z = cand.zero_point[i];
        let edge = |dir: f64| -> f64 {
            // expand until the level is exceeded or the candidate leaves its domain
            let mut step = 1.0f64.max(z.abs());
            let mut good = z;
            for _ in 0..200 {
                let t = good + dir * step;
                let v = at(t);
                if v.is_nan() || v > c {
                    let mut bad = t;
                    for _ in 0..200 {
                        let mid = 0.5 * (good + bad);
                        let vm = at(mid);
                        if vm.is_nan() || vm > c {
                            bad = mid;
                        } else {
                            good = mid;
                        }
                    }
                    return good;
                }
                good = t;
                step *= 2.0;
                if !good.is_finite() || good.abs() > 1e300 {
                    return dir * f64::INFINITY;
                }
            }
            good
        };
        box_bounds.push((edge(-1.0), edge(1.0)));
    }
    Ok(Confinement { sup_k_upsilon: sup_k, c, box_bounds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{birth_death_immigration, bundled, growing_population, yule};

    fn ham(m: &Model) -> GeneratingHamiltonians {
        GeneratingHamiltonians::build(m).unwrap()
    }

    fn yule_probe() -> ContainmentProbe {
        ContainmentProbe { bounds: vec![(std::f64::consts::E.powf(std::f64::consts::E), 1e6)], points_per_axis: 400, log_spacing: true }
    }

    #[test]
    fn loglog_contains_yule() {
        let r = check_containment(&ham(&yule().unwrap()), &ContainmentCandidate::loglog(), &yule_probe()).unwrap();
        assert_eq!(r.zero_point, Verdict::Pass);
        assert_eq!(r.nonnegative, Verdict::Pass);
        assert_eq!(r.compact_levels, Verdict::Pass);
        assert_eq!(r.sup_verdict, Verdict::Pass);
        assert!(r.sup_h.is_finite());
    }

    #[test]
    fn linear_candidate_fails_on_yule() {
        let probe = ContainmentProbe { bounds: vec![(0.0, 1e6)], points_per_axis: 400, log_spacing: true };
        let r = check_containment(&ham(&yule().unwrap()), &ContainmentCandidate::linear(), &probe).unwrap();
        assert_eq!(r.sup_verdict, Verdict::Fail);
    }

    #[test]
    fn log1p_contains_poisson_offspring() {
        let m = bundled("poisson_offspring").unwrap();
        let probe = ContainmentProbe { bounds: vec![(0.0, 1e6)], points_per_axis: 400, log_spacing: true };
        let r = check_containment(&ham(&m), &ContainmentCandidate::log1p_square(0.25), &probe).unwrap();
        assert_eq!(r.sup_verdict, Verdict::Pass);
        assert!(r.sup_h.is_finite());
    }

    #[test]
    fn appendix_b_examples() {
        let y = check_appendix_b(&yule().unwrap(), 1.0, (0.0, 1e6), 200).unwrap();
        assert_eq!(y.verdict, Verdict::Pass);
        let p = check_appendix_b(&bundled("poisson_offspring").unwrap(), 0.75, (0.0, 1e6), 200).unwrap();
        assert_eq!(p.verdict, Verdict::Pass);
        let heavy = crate::models::Model::from_json(
            r#"{"name":"heavy","space":{"dim":1,"closed":[{"base":[0],"normal":[1]}]},"transitions":[],
                "offspring_series":"1/k^3"}"#,
        )
        .unwrap();
        let h = check_appendix_b(&heavy, 5.0, (0.0, 1e3), 100).unwrap();
        assert_eq!(h.verdict, Verdict::Fail);
    }

    #[test]
    fn basic_condition_examples() {
        let bdi = ham(&bundled("birth_death_immigration").unwrap());
        let r = check_condition_basic(&bdi, (0.5, 2.0), P_MAX).unwrap();
        assert!(matches!(r.minus, LimitClass::Divergent { .. }));
        assert!(matches!(r.plus, LimitClass::Divergent { .. }));
        let grow = ham(&growing_population(&[(1, "1"), (2, "0.5")]).unwrap());
        let r = check_condition_basic(&grow, (0.5, 2.0), P_MAX).unwrap();
        match r.minus {
            LimitClass::Convergent { h, .. } => {
                // h^-(x) = -sum_k x v_k(x) = -1.5 x
                assert!((h[0] + 0.75).abs() < 1e-9 && (h[50] + 3.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
        let harvest = ham(&bundled("birth_death_harvesting").unwrap());
        let r = check_condition_basic(&harvest, (0.5, 2.0), P_MAX).unwrap();
        assert_eq!(r.boundary.len(), 1);
        assert_eq!(r.boundary[0].verdict, Verdict::Pass);
    }

    #[test]
    fn boundary_condition_examples() {
        let bdi = ham(&bundled("birth_death_immigration").unwrap());
        let r = check_condition_boundary(&bdi, Side::Lower, Direction::Plus, 0.5, P_MAX).unwrap();
        assert_eq!(r.verdict, BoundaryVerdict::Strong);
        let y = ham(&yule().unwrap());
        let r = check_condition_boundary(&y, Side::Lower, Direction::Plus, 0.5, P_MAX).unwrap();
        assert_eq!(r.verdict, BoundaryVerdict::Fail);
        let death = ham(&birth_death_immigration("0", "x1", "0").unwrap());
        let r = check_condition_boundary(&death, Side::Lower, Direction::Minus, 0.5, P_MAX).unwrap();
        assert_eq!(r.verdict, BoundaryVerdict::Weak2Heuristic);
        assert!(r.weak2_probe <= 0.0);
    }

    #[test]
    fn multid_examples() {
        let m = bundled("interacting_species").unwrap();
        let r = check_multid(&m, &[(0.0, 3.0), (0.0, 3.0)], 200).unwrap();
        assert_eq!(r.verdict, MultidCase::A);
        let mut spec = m.spec().clone();
        for (_, v) in spec.params.iter_mut().filter(|(k, _)| k.starts_with('a')) {
            *v = 0.0;
        }
        let zero_a = Model::from_spec(spec).unwrap();
        let r = check_multid(&zero_a, &[(0.0, 3.0), (0.0, 3.0)], 200).unwrap();
        assert_eq!(r.verdict, MultidCase::Fail);
    }

    #[test]
    fn confinement_bounds() {
        let h = ham(&yule().unwrap());
        let rep = check_containment(&h, &ContainmentCandidate::loglog(), &yule_probe()).unwrap();
        let k = [(16.0, 20.0)];
        let c0 = apriori_confinement(&rep, &k, 0.0, 0.0).unwrap();
        assert!((c0.c - (20f64.ln().ln() - 1.0)).abs() < 1e-12);
        let c1 = apriori_confinement(&rep, &k, 1.0, 1.0).unwrap();
        assert!(c1.c > c0.c && c1.c.is_finite());
        assert!((c1.box_bounds[0].1 - (c1.c + 1.0).exp().exp()).abs() < 1e-6 * c1.box_bounds[0].1);
        let c2 = apriori_confinement(&rep, &k, 2.0, 1.0).unwrap();
        assert!(c2.c >= c1.c);
    }
}
