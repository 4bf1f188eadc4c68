//! Jump-process models: transitions with rate expressions, JSON loading,
//! validation on a probe grid, and compilation to Hamiltonian families.

mod builtins;
mod hamiltonian;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse_rate_expr, CompiledExpr, ExprError, RateExpr};
use crate::geometry::{GeometryError, Polyhedron, PolyhedronSpec};
use crate::numerics::halton_box;

pub use builtins::*;
pub use hamiltonian::{GeneratingHamiltonians, HamiltonianError, LocalHamiltonian, LocalTerm, PieceMask};

/// Hard cap on the number of offspring-series terms.
pub const SERIES_MAX_TERMS: usize = 200;
/// Relative size of the next term at which an offspring series is truncated.
pub const SERIES_REL_TOL: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("transition `{label}`: {source}")]
    Expr { label: String, source: ExprError },
    #[error("transition `{label}`: {msg}")]
    Kind { label: String, msg: String },
    #[error("transition `{label}` has negative rate {value} at {x:?}")]
    NegativeRate { label: String, x: Vec<f64>, value: f64 },
    #[error("transition `{label}` has non-finite rate at {x:?}")]
    NonFiniteRate { label: String, x: Vec<f64> },
    #[error("transition `{label}` points out of E through face {face} with rate {value} at {x:?}")]
    Inconsistent { label: String, face: usize, x: Vec<f64>, value: f64 },
    #[error("offspring terms require a one-dimensional state space")]
    OffspringDim,
    #[error("unknown built-in model `{0}`")]
    UnknownBuiltin(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Interaction,
    Immigration,
    Harvesting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSpec {
    #[serde(default)]
    pub label: Option<String>,
    pub gamma: Vec<i64>,
    pub rate: String,
    pub kind: Kind,
    /// Finite-n rate in counts `x1..xd` and parameter `n`; defaults to `n * rate(q / n)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_n: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    #[serde(default = "default_probe_points")]
    pub points: usize,
    /// Bounding box per coordinate; derived from the space when absent.
    #[serde(default)]
    pub bounds: Option<Vec<(f64, f64)>>,
}

fn default_probe_points() -> usize {
    10_000
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec { points: default_probe_points(), bounds: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub space: PolyhedronSpec,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub transitions: Vec<TransitionSpec>,
    /// Finite offspring list `[k, v_k]`; each entry jumps by `+k` at rate `x1 * v_k(x)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offspring: Option<Vec<(u32, String)>>,
    /// Infinite offspring series `v_k` in terms of the index `k`, truncated adaptively.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offspring_series: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSpec>,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub label: String,
    pub gamma: Vec<i64>,
    pub kind: Kind,
    pub rate: CompiledExpr,
    pub rate_n: Option<RateExpr>,
}

impl Transition {
    pub fn gamma_f64(&self) -> Vec<f64> {
        self.gamma.iter().map(|g| *g as f64).collect()
    }
}

#[derive(Debug, Clone)]
pub enum Offspring {
    Finite(Vec<(u32, CompiledExpr)>),
    Series(CompiledExpr),
}

/// Offspring weights `v_k(x)` after truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringTerms {
    pub weights: Vec<(u32, f64)>,
    /// Geometric bound on the dropped tail of `sum v_k` (0 for finite lists).
    pub tail_bound: f64,
}

impl Offspring {
    pub fn terms(&self, x: &[f64]) -> OffspringTerms {
        self.terms_with(x, SERIES_MAX_TERMS, SERIES_REL_TOL)
    }

    pub fn terms_with(&self, x: &[f64], max_terms: usize, rel_tol: f64) -> OffspringTerms {
        match self {
            Offspring::Finite(list) => {
                OffspringTerms { weights: list.iter().map(|(k, e)| (*k, e.value(x))).collect(), tail_bound: 0.0 }
            }
            Offspring::Series(e) => {
                let mut weights = Vec::new();
                let mut partial = 0.0;
                let mut k = 1u32;
                let mut next = e.value_at_index(x, 1.0);
                while (k as usize) <= max_terms {
                    weights.push((k, next));
                    partial += next;
                    let following = e.value_at_index(x, (k + 1) as f64);
                    if partial > 0.0 && following.abs() < rel_tol * partial.abs() {
                        next = following;
                        break;
                    }
                    next = following;
                    k += 1;
                }
                let last = weights.last().map(|w| w.1).unwrap_or(0.0);
                let ratio = if last > 0.0 { next / last } else { 0.0 };
                let tail_bound = if ratio < 1.0 && next >= 0.0 { next / (1.0 - ratio) } else { f64::INFINITY };
                OffspringTerms { weights, tail_bound }
            }
        }
    }

    pub fn depends_on_state(&self) -> bool {
        match self {
            Offspring::Finite(list) => list.iter().any(|(_, e)| e.depends_on_state()),
            Offspring::Series(e) => e.depends_on_state(),
        }
    }
}

/// A parsed and bound model.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    space: Polyhedron,
    transitions: Vec<Transition>,
    offspring: Option<Offspring>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub name: String,
    pub dim: usize,
    pub transitions: usize,
    pub probe_points: usize,
    pub probe_bounds: Vec<(f64, f64)>,
    /// Minimum observed rate per transition label.
    pub min_rates: BTreeMap<String, f64>,
    pub face_points: usize,
    pub caveats: Vec<String>,
}

impl Model {
    pub fn from_json(text: &str) -> Result<Model, ModelError> {
        let spec: ModelSpec = serde_json::from_str(text)?;
        Model::from_spec(spec)
    }

    pub fn from_spec(spec: ModelSpec) -> Result<Model, ModelError> {
        let space = Polyhedron::from_spec(&spec.space)?;
        let d = space.dim();
        let mut transitions = Vec::with_capacity(spec.transitions.len());
        for (i, t) in spec.transitions.iter().enumerate() {
            let label = t.label.clone().unwrap_or_else(|| format!("t{i}"));
            let wrap = |source| ModelError::Expr { label: label.clone(), source };
            if t.gamma.len() != d {
                return Err(ModelError::Kind { label, msg: format!("gamma has length {}, expected {d}", t.gamma.len()) });
            }
            if t.gamma.iter().all(|g| *g == 0) {
                return Err(ModelError::Kind { label, msg: "gamma must be nonzero".into() });
            }
            let unit = unit_index(&t.gamma);
            match t.kind {
                Kind::Immigration if !matches!(unit, Some((_, 1))) => {
                    return Err(ModelError::Kind { label, msg: "immigration requires gamma = +e_i".into() })
                }
                Kind::Harvesting if !matches!(unit, Some((_, -1))) => {
                    return Err(ModelError::Kind { label, msg: "harvesting requires gamma = -e_i".into() })
                }
                _ => {}
            }
            let rate = parse_rate_expr(&t.rate).and_then(|r| r.bind(&spec.params, d)).map_err(wrap)?;
            if rate.depends_on_index() {
                return Err(wrap(ExprError::UnknownIdentifier("k".into())));
            }
            let rate_n = match &t.rate_n {
                Some(text) => {
                    let parsed = parse_rate_expr(text).map_err(wrap)?;
                    let mut with_n = spec.params.clone();
                    with_n.insert("n".into(), 1.0);
                    parsed.bind(&with_n, d).map_err(wrap)?;
                    Some(parsed)
                }
                None => None,
            };
            transitions.push(Transition { label, gamma: t.gamma.clone(), kind: t.kind, rate, rate_n });
        }
        let offspring = match (&spec.offspring, &spec.offspring_series) {
            (None, None) => None,
            (Some(_), Some(_)) => {
                return Err(ModelError::Kind {
                    label: "offspring".into(),
                    msg: "give either `offspring` or `offspring_series`, not both".into(),
                })
            }
            (Some(list), None) => {
                let mut out = Vec::with_capacity(list.len());
                for (k, text) in list {
                    let label = format!("offspring{k}");
                    if *k == 0 {
                        return Err(ModelError::Kind { label, msg: "offspring size must be positive".into() });
                    }
                    let e = parse_rate_expr(text)
                        .and_then(|r| r.bind(&spec.params, d))
                        .map_err(|source| ModelError::Expr { label, source })?;
                    out.push((*k, e));
                }
                Some(Offspring::Finite(out))
            }
            (None, Some(text)) => {
                let e = parse_rate_expr(text)
                    .and_then(|r| r.bind(&spec.params, d))
                    .map_err(|source| ModelError::Expr { label: "offspring_series".into(), source })?;
                Some(Offspring::Series(e))
            }
        };
        if offspring.is_some() && d != 1 {
            return Err(ModelError::OffspringDim);
        }
        Ok(Model { spec, space, transitions, offspring })
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn space(&self) -> &Polyhedron {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.spec.params
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn offspring(&self) -> Option<&Offspring> {
        self.offspring.as_ref()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.spec).expect("model spec serializes")
    }

    /// Replace parameter values and rebind every expression.
    pub fn with_params(&self, overrides: &BTreeMap<String, f64>) -> Result<Model, ModelError> {
        let mut spec = self.spec.clone();
        for (k, v) in overrides {
            spec.params.insert(k.clone(), *v);
        }
        Model::from_spec(spec)
    }

    /// Bounding box of the probe grid and the caveats attached to it.
    pub fn probe_bounds(&self) -> (Vec<(f64, f64)>, Vec<String>) {
        let probe = self.spec.probe.clone().unwrap_or_default();
        if let Some(b) = probe.bounds {
            return (b, vec!["probe box supplied by the model file".into()]);
        }
        let d = self.dim();
        let mut lo = vec![f64::NEG_INFINITY; d];
        let mut hi = vec![f64::INFINITY; d];
        let mut open_lo = vec![false; d];
        let mut open_hi = vec![false; d];
        let faces = self.space.closed_faces().iter().map(|h| (h, false)).chain(self.space.open_faces().iter().map(|h| (h, true)));
        for (h, is_open) in faces {
            if let Some((i, s)) = axis_normal(&h.normal) {
                if s > 0.0 && h.base[i] > lo[i] {
                    lo[i] = h.base[i];
                    open_lo[i] = is_open;
                } else if s < 0.0 && h.base[i] < hi[i] {
                    hi[i] = h.base[i];
                    open_hi[i] = is_open;
                }
            }
        }
        let w = self.space.witness();
        let mut caveats = Vec::new();
        let mut bounds = Vec::with_capacity(d);
        for i in 0..d {
            let a = if lo[i].is_finite() { lo[i] } else { w[i] - 10.0 };
            let b = if hi[i].is_finite() { hi[i] } else { a.max(w[i]) + 10.0 };
            if !lo[i].is_finite() || !hi[i].is_finite() {
                caveats.push(format!("coordinate {} is unbounded; probing [{a}, {b}] only", i + 1));
            }
            let shrink = 1e-3 * (b - a);
            let a2 = if open_lo[i] { a + shrink } else { a };
            let b2 = if open_hi[i] { b - shrink } else { b };
            if open_lo[i] || open_hi[i] {
                caveats.push(format!(
                    "coordinate {} has an open boundary; rates may be unbounded there and only the compact sub-box [{a2}, {b2}] is inspected",
                    i + 1
                ));
            }
            bounds.push((a2, b2));
        }
        (bounds, caveats)
    }

    /// Nonnegativity and finiteness of every rate on the probe grid, and the
    /// face-consistency check for transitions that point out of E.
    pub fn validate(&self) -> Result<ValidationReport, ModelError> {
        let probe = self.spec.probe.clone().unwrap_or_default();
        let (bounds, caveats) = self.probe_bounds();
        let points: Vec<Vec<f64>> =
            halton_box(&bounds, probe.points).into_iter().filter(|x| self.space.contains_unchecked(x)).collect();
        let mut min_rates = BTreeMap::new();
        for x in &points {
            for t in &self.transitions {
                let v = t.rate.value(x);
                check_rate(&t.label, x, v)?;
                let e = min_rates.entry(t.label.clone()).or_insert(f64::INFINITY);
                *e = f64::min(*e, v);
            }
            if let Some(off) = &self.offspring {
                for (k, v) in off.terms(x).weights {
                    let label = format!("offspring{k}");
                    check_rate(&label, x, v)?;
                    let e = min_rates.entry(label).or_insert(f64::INFINITY);
                    *e = f64::min(*e, v);
                }
            }
        }
        let face_points = self.check_faces(&points)?;
        Ok(ValidationReport {
            name: self.spec.name.clone(),
            dim: self.dim(),
            transitions: self.transitions.len(),
            probe_points: points.len(),
            probe_bounds: bounds,
            min_rates,
            face_points,
            caveats,
        })
    }

    /// Points on each closed face, obtained by projecting probe points onto it.
    pub(crate) fn face_samples(&self, points: &[Vec<f64>], per_face: usize) -> Vec<(usize, Vec<Vec<f64>>)> {
        self.space
            .closed_faces()
            .iter()
            .enumerate()
            .map(|(j, h)| {
                let mut on_face = vec![];
                for x in points {
                    let off = h.offset(x);
                    let y: Vec<f64> = x.iter().zip(&h.normal).map(|(xi, ni)| xi - off * ni).collect();
                    if self.space.contains_unchecked(&y) {
                        on_face.push(y);
                        if on_face.len() >= per_face {
                            break;
                        }
                    }
                }
                (j, on_face)
            })
            .collect()
    }

    fn check_faces(&self, points: &[Vec<f64>]) -> Result<usize, ModelError> {
        let mut count = 0;
        for (j, samples) in self.face_samples(points, 200) {
            let n = &self.space.closed_faces()[j].normal;
            for y in &samples {
                count += 1;
                for t in &self.transitions {
                    let outward = t.gamma.iter().zip(n).map(|(g, ni)| *g as f64 * ni).sum::<f64>() < -1e-12;
                    if outward && t.kind != Kind::Harvesting {
                        let v = t.rate.value(y);
                        if v.abs() > 1e-12 {
                            return Err(ModelError::Inconsistent { label: t.label.clone(), face: j, x: y.clone(), value: v });
                        }
                    }
                }
                if let Some(off) = &self.offspring {
                    if n[0] < 0.0 {
                        let total: f64 = off.terms(y).weights.iter().map(|w| w.1).sum::<f64>() * y[0];
                        if total.abs() > 1e-12 {
                            return Err(ModelError::Inconsistent { label: "offspring".into(), face: j, x: y.clone(), value: total });
                        }
                    }
                }
            }
        }
        Ok(count)
    }
}

fn check_rate(label: &str, x: &[f64], v: f64) -> Result<(), ModelError> {
    if !v.is_finite() {
        return Err(ModelError::NonFiniteRate { label: label.to_string(), x: x.to_vec() });
    }
    if v < -1e-12 {
        return Err(ModelError::NegativeRate { label: label.to_string(), x: x.to_vec(), value: v });
    }
    Ok(())
}

fn unit_index(gamma: &[i64]) -> Option<(usize, i64)> {
    let nz: Vec<usize> = (0..gamma.len()).filter(|&i| gamma[i] != 0).collect();
    match nz.as_slice() {
        [i] if gamma[*i].abs() == 1 => Some((*i, gamma[*i])),
        _ => None,
    }
}

fn axis_normal(n: &[f64]) -> Option<(usize, f64)> {
    let nz: Vec<usize> = (0..n.len()).filter(|&i| n[i].abs() > 1e-12).collect();
    match nz.as_slice() {
        [i] => Some((*i, n[*i].signum())),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(transitions: &str, space: &str) -> String {
        format!(r#"{{"name":"t","space":{space},"params":{{"b":0.5}},"transitions":{transitions}}}"#)
    }

    const HALF_LINE: &str = r#"{"dim":1,"closed":[{"base":[0.0],"normal":[1.0]}]}"#;

    #[test]
    fn kind_rules_are_enforced() {
        let bad = one_d(r#"[{"gamma":[1],"rate":"1","kind":"harvesting"}]"#, HALF_LINE);
        assert!(matches!(Model::from_json(&bad), Err(ModelError::Kind { .. })));
        let bad = one_d(r#"[{"gamma":[2],"rate":"1","kind":"immigration"}]"#, HALF_LINE);
        assert!(matches!(Model::from_json(&bad), Err(ModelError::Kind { .. })));
        let ok = one_d(r#"[{"gamma":[-1],"rate":"b","kind":"harvesting"}]"#, HALF_LINE);
        assert!(Model::from_json(&ok).is_ok());
    }

    #[test]
    fn outward_interaction_must_vanish_on_face() {
        let bad = one_d(r#"[{"gamma":[-1],"rate":"1 + x1","kind":"interaction"}]"#, HALF_LINE);
        let m = Model::from_json(&bad).unwrap();
        assert!(matches!(m.validate(), Err(ModelError::Inconsistent { .. })));
    }

    #[test]
    fn negative_rate_is_rejected() {
        let bad = one_d(r#"[{"gamma":[1],"rate":"1 - x1","kind":"interaction"}]"#, HALF_LINE);
        let m = Model::from_json(&bad).unwrap();
        assert!(matches!(m.validate(), Err(ModelError::NegativeRate { .. })));
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = Model::from_json("{\"space\": ").unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn series_truncation_meets_tail_bound() {
        let e = parse_rate_expr("exp(k*log(2) - 2 - lfact(k))").unwrap().bind(&BTreeMap::new(), 1).unwrap();
        let off = Offspring::Series(e);
        let t = off.terms(&[1.0]);
        let full = off.terms_with(&[1.0], 200, 0.0);
        let s: f64 = t.weights.iter().map(|w| w.1).sum();
        let sf: f64 = full.weights.iter().map(|w| w.1).sum();
        assert!(t.weights.len() < 40);
        assert!((sf - s).abs() <= t.tail_bound + 1e-15);
        assert!((sf - (1.0 - (-2f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn open_boundary_adds_caveat() {
        let m = si_model("beta*x1*(1-x1)", 2.0).unwrap();
        let report = m.validate().unwrap();
        assert!(report.caveats.iter().any(|c| c.contains("compact sub-box")));
        assert!(report.probe_bounds[0].0 > 0.0);
    }
}
