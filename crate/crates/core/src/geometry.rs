//! Polyhedral state spaces.
//!
//! A state space is an intersection of closed and open half-spaces. Only the
//! closed ones carry boundary faces; open half-spaces restrict membership but
//! never appear in an active set. Face activity is decided with an absolute
//! tolerance (state units), and every downstream face selection inherits it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("half-space normal must be nonzero")]
    ZeroNormal,
    #[error("point {0:?} lies outside the state space")]
    Outside(Vec<f64>),
    #[error("witness point {0:?} is not strictly inside the state space")]
    BadWitness(Vec<f64>),
}

/// `{ y : <y - base, normal> >= 0 }` (closed) or `> 0` (open).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub base: Vec<f64>,
    pub normal: Vec<f64>,
}

impl HalfSpace {
    pub fn new(base: Vec<f64>, normal: Vec<f64>) -> Result<Self, GeometryError> {
        if base.len() != normal.len() {
            return Err(GeometryError::Dimension { expected: base.len(), got: normal.len() });
        }
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(GeometryError::ZeroNormal);
        }
        Ok(HalfSpace { base, normal: normal.iter().map(|v| v / norm).collect() })
    }

    /// Signed distance `<x - base, normal>`.
    #[inline]
    pub fn offset(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.base).zip(&self.normal).map(|((x, b), n)| (x - b) * n).sum()
    }
}

/// Sorted, deduplicated set of closed-face indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaceIndex(Vec<usize>);

impl FaceIndex {
    pub fn empty() -> Self {
        FaceIndex(Vec::new())
    }

    pub fn new(mut faces: Vec<usize>) -> Self {
        faces.sort_unstable();
        faces.dedup();
        FaceIndex(faces)
    }

    pub fn faces(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, face: usize) -> bool {
        self.0.binary_search(&face).is_ok()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_subset(&self, other: &FaceIndex) -> bool {
        self.0.iter().all(|f| other.contains(*f))
    }

    /// All subsets, smallest first.
    pub fn subsets(&self) -> Vec<FaceIndex> {
        let n = self.0.len();
        let mut out: Vec<FaceIndex> = (0..1u64 << n)
            .map(|mask| FaceIndex((0..n).filter(|i| mask >> i & 1 == 1).map(|i| self.0[i]).collect()))
            .collect();
        out.sort_by_key(|f| f.len());
        out
    }
}

impl std::fmt::Display for FaceIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (i, face) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{face}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    dim: usize,
    closed: Vec<HalfSpace>,
    open: Vec<HalfSpace>,
    tol: f64,
    witness: Vec<f64>,
}

/// JSON form: `{"dim":d, "closed":[{"base":..,"normal":..}], "open":[..], "tol":1e-9, "witness":[..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyhedronSpec {
    pub dim: usize,
    #[serde(default)]
    pub closed: Vec<HalfSpace>,
    #[serde(default)]
    pub open: Vec<HalfSpace>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Interior witness; defaults to a point found by pushing away from every face.
    #[serde(default)]
    pub witness: Option<Vec<f64>>,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

impl Polyhedron {
    pub fn new(
        dim: usize,
        closed: Vec<HalfSpace>,
        open: Vec<HalfSpace>,
        tol: f64,
        witness: Vec<f64>,
    ) -> Result<Self, GeometryError> {
        let mut faces = Vec::with_capacity(closed.len() + open.len());
        for h in closed.iter().chain(&open) {
            let h = HalfSpace::new(h.base.clone(), h.normal.clone())?;
            if h.base.len() != dim {
                return Err(GeometryError::Dimension { expected: dim, got: h.base.len() });
            }
            faces.push(h);
        }
        if witness.len() != dim {
            return Err(GeometryError::Dimension { expected: dim, got: witness.len() });
        }
        let open = faces.split_off(closed.len());
        let poly = Polyhedron { dim, closed: faces, open, tol, witness };
        // the witness certifies nonemptiness; it must be interior
        if !poly.contains_unchecked(&poly.witness) || !poly.active_unchecked(&poly.witness).is_empty() {
            return Err(GeometryError::BadWitness(poly.witness.clone()));
        }
        Ok(poly)
    }

    pub fn from_spec(spec: &PolyhedronSpec) -> Result<Self, GeometryError> {
        let witness = match &spec.witness {
            Some(w) => w.clone(),
            None => default_witness(spec),
        };
        Polyhedron::new(spec.dim, spec.closed.clone(), spec.open.clone(), spec.tol, witness)
    }

    pub fn to_spec(&self) -> PolyhedronSpec {
        PolyhedronSpec {
            dim: self.dim,
            closed: self.closed.clone(),
            open: self.open.clone(),
            tol: self.tol,
            witness: Some(self.witness.clone()),
        }
    }

    /// `[0, inf)^d`.
    pub fn orthant(dim: usize) -> Self {
        let closed = (0..dim).map(|i| HalfSpace::new(vec![0.0; dim], unit(dim, i, 1.0)).unwrap()).collect();
        Polyhedron::new(dim, closed, Vec::new(), DEFAULT_TOL, vec![1.0; dim]).unwrap()
    }

    /// One-dimensional interval; `None` endpoints are infinite.
    pub fn interval(lo: Option<(f64, bool)>, hi: Option<(f64, bool)>) -> Result<Self, GeometryError> {
        let mut closed = Vec::new();
        let mut open = Vec::new();
        if let Some((a, is_closed)) = lo {
            let h = HalfSpace::new(vec![a], vec![1.0])?;
            if is_closed { closed.push(h) } else { open.push(h) }
        }
        if let Some((b, is_closed)) = hi {
            let h = HalfSpace::new(vec![b], vec![-1.0])?;
            if is_closed { closed.push(h) } else { open.push(h) }
        }
        let witness = match (lo, hi) {
            (Some((a, _)), Some((b, _))) => 0.5 * (a + b),
            (Some((a, _)), None) => a + 1.0,
            (None, Some((b, _))) => b - 1.0,
            (None, None) => 0.0,
        };
        Polyhedron::new(1, closed, open, DEFAULT_TOL, vec![witness])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn witness(&self) -> &[f64] {
        &self.witness
    }

    pub fn closed_faces(&self) -> &[HalfSpace] {
        &self.closed
    }

    pub fn open_faces(&self) -> &[HalfSpace] {
        &self.open
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), GeometryError> {
        if x.len() != self.dim {
            Err(GeometryError::Dimension { expected: self.dim, got: x.len() })
        } else {
            Ok(())
        }
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool, GeometryError> {
        self.check_dim(x)?;
        Ok(self.contains_unchecked(x))
    }

    #[inline]
    pub fn contains_unchecked(&self, x: &[f64]) -> bool {
        self.closed.iter().all(|h| h.offset(x) >= -self.tol) && self.open.iter().all(|h| h.offset(x) > self.tol)
    }

    /// Indices of closed faces on which `x` lies (within tolerance).
    pub fn active_set(&self, x: &[f64]) -> Result<FaceIndex, GeometryError> {
        self.check_dim(x)?;
        if !self.contains_unchecked(x) {
            return Err(GeometryError::Outside(x.to_vec()));
        }
        Ok(self.active_unchecked(x))
    }

    #[inline]
    pub fn active_unchecked(&self, x: &[f64]) -> FaceIndex {
        FaceIndex(
            self.closed
                .iter()
                .enumerate()
                .filter(|(_, h)| h.offset(x).abs() <= self.tol)
                .map(|(i, _)| i)
                .collect(),
        )
    }

    /// Whether `v` lies in the tangent cone at `x`.
    pub fn tangent_cone_contains(&self, x: &[f64], v: &[f64]) -> Result<bool, GeometryError> {
        let active = self.active_set(x)?;
        self.check_dim(v)?;
        Ok(self.cone_contains(&active, v))
    }

    /// Membership of `v` in the cone `{ w : <w, n_i> >= 0, i in faces }`.
    pub fn cone_contains(&self, faces: &FaceIndex, v: &[f64]) -> bool {
        faces.faces().iter().all(|&i| dot(&self.closed[i].normal, v) >= -self.tol)
    }

    /// Euclidean projection of `v` onto the tangent cone at `x`.
    pub fn project_tangent(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>, GeometryError> {
        let active = self.active_set(x)?;
        self.check_dim(v)?;
        Ok(self.project_cone(&active, v))
    }

    pub fn project_cone(&self, faces: &FaceIndex, v: &[f64]) -> Vec<f64> {
        if self.cone_contains(faces, v) {
            return v.to_vec();
        }
        let normals: Vec<&[f64]> = faces.faces().iter().map(|&i| self.closed[i].normal.as_slice()).collect();
        project_onto_halfspace_cone(&normals, v)
    }

    /// Nearest point of the closure of `E` (Dykstra's alternating projections).
    pub fn project_point(&self, x: &[f64]) -> Vec<f64> {
        if self.contains_unchecked(x) {
            return x.to_vec();
        }
        let faces: Vec<&HalfSpace> = self.closed.iter().chain(&self.open).collect();
        let shift = |is_open: bool| if is_open { 2.0 * self.tol } else { 0.0 };
        let n_closed = self.closed.len();
        let mut y = x.to_vec();
        let mut corrections = vec![vec![0.0; self.dim]; faces.len()];
        for _ in 0..500 {
            let mut change = 0.0f64;
            for (k, h) in faces.iter().enumerate() {
                let z: Vec<f64> = y.iter().zip(&corrections[k]).map(|(a, b)| a + b).collect();
                let off = h.offset(&z) - shift(k >= n_closed);
                let proj: Vec<f64> = if off < 0.0 {
                    z.iter().zip(&h.normal).map(|(zi, ni)| zi - off * ni).collect()
                } else {
                    z.clone()
                };
                for i in 0..self.dim {
                    corrections[k][i] = z[i] - proj[i];
                    change = change.max((proj[i] - y[i]).abs());
                }
                y = proj;
            }
            if change < 1e-14 {
                break;
            }
        }
        y
    }
}

fn default_witness(spec: &PolyhedronSpec) -> Vec<f64> {
    let mut w = vec![0.0; spec.dim];
    for h in spec.closed.iter().chain(&spec.open) {
        for (wi, bi) in w.iter_mut().zip(&h.base) {
            *wi += bi;
        }
    }
    let count = (spec.closed.len() + spec.open.len()).max(1) as f64;
    w.iter_mut().for_each(|v| *v /= count);
    // step inward along the summed normals until every face is strictly satisfied
    for _ in 0..64 {
        let mut ok = true;
        for h in spec.closed.iter().chain(&spec.open) {
            let n = h.normal.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let off: f64 = w.iter().zip(&h.base).zip(&h.normal).map(|((x, b), v)| (x - b) * v / n).sum();
            if off < 0.5 {
                ok = false;
                for (wi, ni) in w.iter_mut().zip(&h.normal) {
                    *wi += (0.5 - off + 0.25) * ni / n;
                }
            }
        }
        if ok {
            break;
        }
    }
    w
}

fn unit(dim: usize, i: usize, s: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = s;
    v
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projection onto `{ w : <w, n_i> >= 0 }` by Dykstra iterations; exact after one
/// sweep when the normals are mutually orthogonal (orthant faces).
fn project_onto_halfspace_cone(normals: &[&[f64]], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    let mut y = v.to_vec();
    let mut corrections = vec![vec![0.0; d]; normals.len()];
    for _ in 0..1000 {
        let mut change = 0.0f64;
        for (k, n) in normals.iter().enumerate() {
            let z: Vec<f64> = y.iter().zip(&corrections[k]).map(|(a, b)| a + b).collect();
            let off = dot(&z, n);
            let proj: Vec<f64> =
                if off < 0.0 { z.iter().zip(n.iter()).map(|(zi, ni)| zi - off * ni).collect() } else { z.clone() };
            for i in 0..d {
                corrections[k][i] = z[i] - proj[i];
                change = change.max((proj[i] - y[i]).abs());
            }
            y = proj;
        }
        if change < 1e-15 {
            break;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn half_open_unit() -> Polyhedron {
        Polyhedron::interval(Some((0.0, true)), Some((1.0, false))).unwrap()
    }

    fn quarter_without_corner() -> Polyhedron {
        let closed = vec![
            HalfSpace::new(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap(),
            HalfSpace::new(vec![0.0, 0.0], vec![0.0, 1.0]).unwrap(),
        ];
        let open = vec![HalfSpace::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()];
        Polyhedron::new(2, closed, open, DEFAULT_TOL, vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn half_open_interval_table() {
        let e = half_open_unit();
        assert!(e.contains(&[0.0]).unwrap());
        assert!(!e.contains(&[1.0]).unwrap());
        assert_eq!(e.active_set(&[0.0]).unwrap(), FaceIndex::new(vec![0]));
        assert!(e.active_set(&[0.5]).unwrap().is_empty());
        // Gamma_{1} = [0, inf)
        assert!(e.tangent_cone_contains(&[0.0], &[3.0]).unwrap());
        assert!(!e.tangent_cone_contains(&[0.0], &[-3.0]).unwrap());
        // the open face at 1 never becomes active
        assert!(e.active_set(&[1.0 - 1e-12]).is_err() || e.active_set(&[1.0 - 1e-12]).unwrap().is_empty());
    }

    #[test]
    fn quarter_space_table() {
        let e = Polyhedron::orthant(2);
        assert_eq!(e.active_set(&[0.0, 0.0]).unwrap(), FaceIndex::new(vec![0, 1]));
        assert_eq!(e.active_set(&[0.0, 2.0]).unwrap(), FaceIndex::new(vec![0]));
        assert_eq!(e.active_set(&[2.0, 0.0]).unwrap(), FaceIndex::new(vec![1]));
        assert!(e.active_set(&[1.0, 1.0]).unwrap().is_empty());
        assert!(e.tangent_cone_contains(&[0.0, 0.0], &[1.0, 1.0]).unwrap());
        assert!(!e.tangent_cone_contains(&[0.0, 0.0], &[-1.0, 0.0]).unwrap());
        assert!(e.tangent_cone_contains(&[0.0, 2.0], &[0.0, -1.0]).unwrap());
        assert!(!e.tangent_cone_contains(&[0.0, 2.0], &[-0.1, 5.0]).unwrap());
        assert!(e.tangent_cone_contains(&[1.0, 1.0], &[-7.0, -3.0]).unwrap());
    }

    #[test]
    fn quarter_space_without_corner_table() {
        let e = quarter_without_corner();
        assert!(!e.contains(&[0.0, 0.0]).unwrap());
        assert!(e.contains(&[0.0, 0.5]).unwrap());
        assert_eq!(e.active_set(&[0.0, 0.5]).unwrap(), FaceIndex::new(vec![0]));
        assert_eq!(e.active_set(&[0.5, 0.0]).unwrap(), FaceIndex::new(vec![1]));
        assert!(e.active_set(&[0.0, 0.0]).is_err());
        assert!(e.contains(e.witness()).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let e = Polyhedron::orthant(2);
        assert_eq!(e.contains(&[1.0]), Err(GeometryError::Dimension { expected: 2, got: 1 }));
        assert!(HalfSpace::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn projections() {
        let e1 = Polyhedron::interval(Some((0.0, true)), None).unwrap();
        assert_eq!(e1.project_tangent(&[0.0], &[-2.0]).unwrap(), vec![0.0]);
        assert_eq!(e1.project_tangent(&[3.0], &[-2.0]).unwrap(), vec![-2.0]);
        let e2 = Polyhedron::orthant(2);
        let p = e2.project_tangent(&[0.0, 0.0], &[-1.0, 2.0]).unwrap();
        assert!((p[0] - 0.0).abs() < 1e-15 && (p[1] - 2.0).abs() < 1e-15);
        assert_eq!(e2.project_point(&[-1.0, 3.0]), vec![0.0, 3.0]);
    }

    #[test]
    fn cone_projection_matches_grid_search() {
        // brute-force QP over the quarter-plane cone on a fine grid
        let e = Polyhedron::orthant(2);
        let v = [-1.0, 2.0];
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for i in 0..=400 {
            for j in 0..=400 {
                let w = [i as f64 * 0.01, j as f64 * 0.01];
                let d = (w[0] - v[0]).powi(2) + (w[1] - v[1]).powi(2);
                if d < best.0 {
                    best = (d, w);
                }
            }
        }
        let p = e.project_tangent(&[0.0, 0.0], &v).unwrap();
        assert!((p[0] - best.1[0]).abs() < 1e-9 && (p[1] - best.1[1]).abs() < 1e-9);
    }

    #[test]
    fn spec_without_witness_gets_interior_point() {
        let spec: PolyhedronSpec = serde_json::from_str(
            r#"{"dim":1,"closed":[{"base":[1.0],"normal":[-1.0]}],"open":[{"base":[0.0],"normal":[1.0]}]}"#,
        )
        .unwrap();
        let e = Polyhedron::from_spec(&spec).unwrap();
        assert!(e.contains(&[1.0]).unwrap());
        assert!(!e.contains(&[0.0]).unwrap());
        assert_eq!(e.tol(), DEFAULT_TOL);
    }

    proptest! {
        #[test]
        fn interior_points_have_no_active_faces(x in 1e-6f64..10.0, y in 1e-6f64..10.0) {
            let e = Polyhedron::orthant(2);
            prop_assert!(e.active_set(&[x, y]).unwrap().is_empty());
        }

        #[test]
        fn tangent_cone_is_a_cone(
            corner in 0usize..3,
            v in prop::array::uniform2(-5.0f64..5.0),
            w in prop::array::uniform2(-5.0f64..5.0),
            a in 0.0f64..3.0,
            b in 0.0f64..3.0,
        ) {
            let e = Polyhedron::orthant(2);
            let x = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]][corner];
            if e.tangent_cone_contains(&x, &v).unwrap() && e.tangent_cone_contains(&x, &w).unwrap() {
                let c = [a * v[0] + b * w[0], a * v[1] + b * w[1]];
                prop_assert!(e.tangent_cone_contains(&x, &c).unwrap());
            }
        }

        #[test]
        fn projection_lands_in_cone_and_is_idempotent(
            corner in 0usize..3,
            v in prop::array::uniform2(-5.0f64..5.0),
        ) {
            let e = Polyhedron::orthant(2);
            let x = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]][corner];
            let p = e.project_tangent(&x, &v).unwrap();
            prop_assert!(e.tangent_cone_contains(&x, &p).unwrap());
            let pp = e.project_tangent(&x, &p).unwrap();
            prop_assert_eq!(&p, &pp);
            let moved = ((p[0] - v[0]).powi(2) + (p[1] - v[1]).powi(2)).sqrt();
            prop_assert!(moved <= (v[0] * v[0] + v[1] * v[1]).sqrt() + 1e-12);
        }
    }
}
