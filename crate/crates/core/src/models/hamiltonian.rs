//! Generating sets of Hamiltonians.
//!
//! Every piece is a sum `sum_t r_t(x) (exp(<gamma_t, p>) - 1)`. A harvesting term is
//! dropped from `H_J` when it points out of E through one of the faces in `J`.
//! Interaction and immigration terms that point outward through an active face
//! are discarded at that point; validation already checked that their rates vanish
//! on the face.

use nalgebra::DMatrix;
use thiserror::Error;

use super::{Kind, Model, ModelError, Offspring};
use crate::expr::CompiledExpr;
use crate::geometry::{dot, FaceIndex, GeometryError, Polyhedron};
use crate::numerics::sat_exp;

/// Piece selector relative to a point: bit `i` set means the `i`-th face of the
/// active set `J*(x)` belongs to `J`.
pub type PieceMask = u32;

#[derive(Debug, Error)]
pub enum HamiltonianError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("face set {faces} is not contained in the active set {active} at {x:?}")]
    NotOnFace { faces: FaceIndex, active: FaceIndex, x: Vec<f64> },
    #[error("rate `{label}` is undefined at {x:?}")]
    RateDomain { label: String, x: Vec<f64> },
    #[error("cannot add Hamiltonian families on different state spaces")]
    IncompatibleSpaces,
    #[error("momentum has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone)]
struct HamTerm {
    label: String,
    gamma: Vec<f64>,
    rate: CompiledExpr,
    harvest: bool,
}

#[derive(Debug, Clone)]
pub struct GeneratingHamiltonians {
    space: Polyhedron,
    terms: Vec<HamTerm>,
    offspring: Vec<Offspring>,
}

/// One exponential term evaluated at a fixed state.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTerm {
    pub gamma: Vec<f64>,
    pub rate: f64,
    /// Pieces whose mask intersects `drop` omit this term.
    pub drop: PieceMask,
}

/// All pieces of a family frozen at one state `x`.
#[derive(Debug, Clone)]
pub struct LocalHamiltonian {
    x: Vec<f64>,
    active: FaceIndex,
    terms: Vec<LocalTerm>,
}

impl GeneratingHamiltonians {
    /// Validate the model, then compile its family.
    pub fn build(model: &Model) -> Result<Self, HamiltonianError> {
        model.validate()?;
        Ok(Self::build_unchecked(model))
    }

    /// Compile without the probe-grid validation (used for constructed negative controls).
    pub fn build_unchecked(model: &Model) -> Self {
        let terms = model
            .transitions()
            .iter()
            .map(|t| HamTerm {
                label: t.label.clone(),
                gamma: t.gamma_f64(),
                rate: t.rate.clone(),
                harvest: t.kind == Kind::Harvesting,
            })
            .collect();
        GeneratingHamiltonians {
            space: model.space().clone(),
            terms,
            offspring: model.offspring().cloned().into_iter().collect(),
        }
    }

    /// The family with no terms, `H_J = 0` for every `J`.
    pub fn zero(space: Polyhedron) -> Self {
        GeneratingHamiltonians { space, terms: Vec::new(), offspring: Vec::new() }
    }

    /// Piecewise sum `H_J = H_J^1 + H_J^2`.
    pub fn sum(&self, other: &GeneratingHamiltonians) -> Result<Self, HamiltonianError> {
        let same = self.space.dim() == other.space.dim()
            && self.space.closed_faces() == other.space.closed_faces()
            && self.space.open_faces() == other.space.open_faces();
        if !same {
            return Err(HamiltonianError::IncompatibleSpaces);
        }
        let mut out = self.clone();
        out.terms.extend(other.terms.iter().cloned());
        out.offspring.extend(other.offspring.iter().cloned());
        Ok(out)
    }

    pub fn space(&self) -> &Polyhedron {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Freeze all pieces at `x`.
    pub fn at(&self, x: &[f64]) -> Result<LocalHamiltonian, HamiltonianError> {
        let active = self.space.active_set(x)?;
        let normals: Vec<&[f64]> =
            active.faces().iter().map(|&j| self.space.closed_faces()[j].normal.as_slice()).collect();
        let mut terms = Vec::with_capacity(self.terms.len() + 8);
        let mut push = |gamma: Vec<f64>, rate: f64, harvest: bool| {
            let mut drop = 0;
            let mut discard = false;
            for (b, n) in normals.iter().enumerate() {
                if dot(&gamma, n) < -1e-12 {
                    if harvest {
                        drop |= 1 << b;
                    } else {
                        discard = true;
                    }
                }
            }
            if !discard && rate != 0.0 {
                terms.push(LocalTerm { gamma, rate, drop });
            }
        };
        for t in &self.terms {
            let r = t.rate.value(x);
            if r.is_nan() {
                return Err(HamiltonianError::RateDomain { label: t.label.clone(), x: x.to_vec() });
            }
            push(t.gamma.clone(), r, t.harvest);
        }
        for off in &self.offspring {
            for (k, v) in off.terms(x).weights {
                let r = x[0] * v;
                if r.is_nan() {
                    return Err(HamiltonianError::RateDomain { label: format!("offspring{k}"), x: x.to_vec() });
                }
                push(vec![k as f64], r, false);
            }
        }
        Ok(LocalHamiltonian { x: x.to_vec(), active, terms })
    }

    fn check_p(&self, p: &[f64]) -> Result<(), HamiltonianError> {
        if p.len() != self.dim() {
            return Err(HamiltonianError::Dimension { expected: self.dim(), got: p.len() });
        }
        Ok(())
    }

    /// `H_J(x, p)`; requires `x` in `E_J`.
    pub fn eval_piece(&self, faces: &FaceIndex, x: &[f64], p: &[f64]) -> Result<f64, HamiltonianError> {
        self.check_p(p)?;
        let local = self.at(x)?;
        let mask = local.mask_of(faces)?;
        Ok(local.h(mask, p))
    }

    /// Analytic `grad_p H_J(x, p)`.
    pub fn grad_p_h(&self, faces: &FaceIndex, x: &[f64], p: &[f64]) -> Result<Vec<f64>, HamiltonianError> {
        self.check_p(p)?;
        let local = self.at(x)?;
        let mask = local.mask_of(faces)?;
        Ok(local.grad(mask, p))
    }

    pub fn eval_h_dagger(&self, x: &[f64], p: &[f64]) -> Result<f64, HamiltonianError> {
        self.check_p(p)?;
        Ok(self.at(x)?.dagger(p))
    }

    pub fn eval_h_ddagger(&self, x: &[f64], p: &[f64]) -> Result<f64, HamiltonianError> {
        self.check_p(p)?;
        Ok(self.at(x)?.ddagger(p))
    }
}

impl LocalHamiltonian {
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn active(&self) -> &FaceIndex {
        &self.active
    }

    pub fn terms(&self) -> &[LocalTerm] {
        &self.terms
    }

    /// Mask with every active face set (the maximal piece `H_{J*(x)}`).
    pub fn full_mask(&self) -> PieceMask {
        ((1u64 << self.active.len()) - 1) as PieceMask
    }

    pub fn masks(&self) -> impl Iterator<Item = PieceMask> {
        0..=self.full_mask()
    }

    pub fn face_set(&self, mask: PieceMask) -> FaceIndex {
        FaceIndex::new(
            self.active.faces().iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, f)| *f).collect(),
        )
    }

    pub fn mask_of(&self, faces: &FaceIndex) -> Result<PieceMask, HamiltonianError> {
        let mut mask = 0;
        for f in faces.faces() {
            match self.active.faces().iter().position(|a| a == f) {
                Some(b) => mask |= 1 << b,
                None => {
                    return Err(HamiltonianError::NotOnFace {
                        faces: faces.clone(),
                        active: self.active.clone(),
                        x: self.x.clone(),
                    })
                }
            }
        }
        Ok(mask)
    }

    /// Bits that actually switch a term off somewhere.
    pub fn switch_mask(&self) -> PieceMask {
        self.terms.iter().fold(0, |m, t| m | t.drop)
    }

    /// Each term is dropped by at most one face, so `H_dagger` splits per face.
    pub fn is_separable(&self) -> bool {
        self.terms.iter().all(|t| t.drop.count_ones() <= 1)
    }

    /// For a separable family: the coordinate `i` such that every term dropped by
    /// bit `b` is `-e_i`, per switching bit. `None` if any bit mixes coordinates.
    pub fn switch_coordinates(&self) -> Option<Vec<(u32, usize)>> {
        if !self.is_separable() {
            return None;
        }
        let mut out = Vec::new();
        let sw = self.switch_mask();
        for b in 0..self.active.len() as u32 {
            if sw >> b & 1 == 0 {
                continue;
            }
            let mut coord = None;
            for t in self.terms.iter().filter(|t| t.drop >> b & 1 == 1) {
                let nz: Vec<usize> = (0..t.gamma.len()).filter(|&i| t.gamma[i] != 0.0).collect();
                match (nz.as_slice(), coord) {
                    ([i], None) if t.gamma[*i] < 0.0 => coord = Some(*i),
                    ([i], Some(c)) if *i == c && t.gamma[*i] < 0.0 => {}
                    _ => return None,
                }
            }
            out.push((b, coord?));
        }
        Some(out)
    }

    #[inline]
    fn included(t: &LocalTerm, mask: PieceMask) -> bool {
        t.drop & mask == 0
    }

    pub fn h(&self, mask: PieceMask, p: &[f64]) -> f64 {
        self.terms
            .iter()
            .filter(|t| Self::included(t, mask))
            .map(|t| t.rate * (sat_exp(dot(&t.gamma, p)) - 1.0))
            .sum()
    }

    pub fn grad(&self, mask: PieceMask, p: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for t in self.terms.iter().filter(|t| Self::included(t, mask)) {
            let w = t.rate * sat_exp(dot(&t.gamma, p));
            for (gi, ti) in g.iter_mut().zip(&t.gamma) {
                if *ti != 0.0 {
                    *gi += w * ti;
                }
            }
        }
        g
    }

    /// Value, gradient and Hessian in one pass.
    pub fn eval_all(&self, mask: PieceMask, p: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
        let d = self.dim();
        let mut v = 0.0;
        let mut g = vec![0.0; d];
        let mut hs = DMatrix::zeros(d, d);
        for t in self.terms.iter().filter(|t| Self::included(t, mask)) {
            let e = sat_exp(dot(&t.gamma, p));
            v += t.rate * (e - 1.0);
            let w = t.rate * e;
            for i in 0..d {
                if t.gamma[i] == 0.0 {
                    continue;
                }
                g[i] += w * t.gamma[i];
                for j in 0..d {
                    if t.gamma[j] != 0.0 {
                        hs[(i, j)] += w * t.gamma[i] * t.gamma[j];
                    }
                }
            }
        }
        (v, g, hs)
    }

    /// Sum of the terms switched off by bit `b` alone.
    fn switched(&self, b: u32, p: &[f64]) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.drop == 1 << b)
            .map(|t| t.rate * (sat_exp(dot(&t.gamma, p)) - 1.0))
            .sum()
    }

    fn extreme(&self, p: &[f64], upper: bool) -> f64 {
        if self.active.is_empty() {
            return self.h(0, p);
        }
        if self.is_separable() {
            // H_J = H_full + sum over faces outside J of the switched terms
            let base = self.h(self.full_mask(), p);
            let adj: f64 = (0..self.active.len() as u32)
                .map(|b| {
                    let g = self.switched(b, p);
                    if upper {
                        g.max(0.0)
                    } else {
                        g.min(0.0)
                    }
                })
                .sum();
            return base + adj;
        }
        let values = self.masks().map(|m| self.h(m, p));
        if upper {
            values.fold(f64::NEG_INFINITY, f64::max)
        } else {
            values.fold(f64::INFINITY, f64::min)
        }
    }

    /// `H_dagger(x, p)`: maximum over the pieces active at `x`.
    pub fn dagger(&self, p: &[f64]) -> f64 {
        self.extreme(p, true)
    }

    /// `H_ddagger(x, p)`: minimum over the pieces active at `x`.
    pub fn ddagger(&self, p: &[f64]) -> f64 {
        self.extreme(p, false)
    }

    /// Piece attaining `H_dagger` (ties resolved toward the larger face set).
    pub fn dagger_mask(&self, p: &[f64]) -> PieceMask {
        let mut best = (f64::NEG_INFINITY, 0);
        for m in self.masks() {
            let v = self.h(m, p);
            if v >= best.0 {
                best = (v, m);
            }
        }
        best.1
    }

    /// Velocities reachable by some piece: the generators of the cone of jumps.
    pub fn jump_directions(&self) -> Vec<Vec<f64>> {
        self.terms.iter().filter(|t| t.rate > 0.0).map(|t| t.gamma.clone()).collect()
    }

    pub fn piece_directions(&self, mask: PieceMask) -> Vec<Vec<f64>> {
        self.terms.iter().filter(|t| t.rate > 0.0 && Self::included(t, mask)).map(|t| t.gamma.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{bundled, yule};
    use proptest::prelude::*;

    fn harvest() -> GeneratingHamiltonians {
        GeneratingHamiltonians::build(&bundled("birth_death_harvesting").unwrap()).unwrap()
    }

    #[test]
    fn birth_death_single_piece_formula() {
        let h = GeneratingHamiltonians::build(&bundled("birth_death_immigration").unwrap()).unwrap();
        for &(x, p) in &[(0.7, 0.3), (2.0, -1.1), (0.0, 0.5)] {
            let expected = (x + 1.0) * (f64::exp(p) - 1.0) + 2.0 * x * (f64::exp(-p) - 1.0);
            let got = h.eval_h_dagger(&[x], &[p]).unwrap();
            assert!((got - expected).abs() < 1e-12, "{x} {p}");
            assert_eq!(h.eval_h_dagger(&[x], &[p]).unwrap(), h.eval_h_ddagger(&[x], &[p]).unwrap());
        }
    }

    #[test]
    fn harvesting_boundary_pieces() {
        let h = harvest();
        let z = FaceIndex::new(vec![0]);
        for &p in &[-2.0, -0.3, 0.0, 0.4, 1.5] {
            let boundary = h.eval_piece(&z, &[0.0], &[p]).unwrap();
            assert!((boundary - (f64::exp(p) - 1.0)).abs() < 1e-12);
            let g = 0.5 * (f64::exp(-p) - 1.0);
            let dag = h.eval_h_dagger(&[0.0], &[p]).unwrap();
            let ddag = h.eval_h_ddagger(&[0.0], &[p]).unwrap();
            assert!((dag - (f64::exp(p) - 1.0 + g.max(0.0))).abs() < 1e-12);
            assert!((ddag - (f64::exp(p) - 1.0 + g.min(0.0))).abs() < 1e-12);
        }
        let grad = h.grad_p_h(&z, &[0.0], &[0.3]).unwrap();
        assert!((grad[0] - f64::exp(0.3)).abs() < 1e-12 && grad[0] >= 0.0);
        assert!(h.eval_piece(&z, &[1.0], &[0.3]).is_err());
    }

    #[test]
    fn yule_gradient_at_origin_momentum() {
        let h = GeneratingHamiltonians::build(&yule().unwrap()).unwrap();
        let g = h.grad_p_h(&FaceIndex::empty(), &[1.0], &[0.0]).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sum_with_zero_and_split_family() {
        let full = GeneratingHamiltonians::build(&bundled("birth_death_immigration").unwrap()).unwrap();
        let zero = GeneratingHamiltonians::zero(full.space().clone());
        let summed = full.sum(&zero).unwrap();
        let imm = crate::models::birth_death_immigration("lam*x1", "0", "rho").unwrap();
        let death = crate::models::birth_death_immigration("0", "mu*x1", "0").unwrap();
        let parts = GeneratingHamiltonians::build(&imm).unwrap().sum(&GeneratingHamiltonians::build(&death).unwrap()).unwrap();
        for i in 0..20 {
            let x = i as f64 * 0.25;
            for j in -6..=6 {
                let p = j as f64 * 0.5;
                let a = full.eval_h_dagger(&[x], &[p]).unwrap();
                assert_eq!(a, summed.eval_h_dagger(&[x], &[p]).unwrap());
                assert!((a - parts.eval_h_dagger(&[x], &[p]).unwrap()).abs() < 1e-12);
            }
        }
        let other = GeneratingHamiltonians::zero(Polyhedron::orthant(2));
        assert!(full.sum(&other).is_err());
    }

    #[test]
    fn interior_dagger_equals_empty_piece() {
        let h = harvest();
        let local = h.at(&[1.3]).unwrap();
        assert!(local.active().is_empty());
        assert_eq!(local.dagger(&[0.7]), local.h(0, &[0.7]));
        assert_eq!(local.ddagger(&[0.7]), local.h(0, &[0.7]));
    }

    #[test]
    fn overflow_saturates_to_infinity() {
        let h = harvest();
        assert_eq!(h.eval_h_dagger(&[1.0], &[800.0]).unwrap(), f64::INFINITY);
        // the overflowing harvesting term is switched off in the lower envelope
        assert_eq!(h.eval_h_dagger(&[0.0], &[-800.0]).unwrap(), f64::INFINITY);
        assert!((h.eval_h_ddagger(&[0.0], &[-800.0]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn multi_d_pieces_keep_immigration() {
        let m = bundled("prey_predator").unwrap();
        let h = GeneratingHamiltonians::build(&m).unwrap();
        let local = h.at(&[0.0, 1.0]).unwrap();
        assert_eq!(local.active(), &FaceIndex::new(vec![0]));
        assert!(local.is_separable());
        assert_eq!(local.switch_coordinates(), Some(vec![(0, 0)]));
        // dropping face 0 removes only the harvesting term b_1 (e^{-p_1} - 1)
        let p = [0.4, -0.2];
        let diff = local.h(0, &p) - local.h(1, &p);
        let b1 = m.params()["b1"];
        assert!((diff - b1 * (f64::exp(-0.4) - 1.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pieces_vanish_at_zero_momentum(name in 0usize..9, u in 0.0f64..1.0, w in 0.0f64..1.0, z in 0.0f64..1.0) {
            let model = bundled(crate::models::BUNDLED[name]).unwrap();
            let h = GeneratingHamiltonians::build_unchecked(&model);
            let x = crate::models::sample_state(&model, &[u, w, z]);
            let local = h.at(&x).unwrap();
            let zero = vec![0.0; model.dim()];
            for m in local.masks() {
                prop_assert_eq!(local.h(m, &zero), 0.0);
            }
        }

        #[test]
        fn ddagger_below_dagger_and_midpoint_convex(
            name in 0usize..9,
            s in prop::array::uniform3(0.0f64..1.0),
            p in prop::array::uniform3(-3.0f64..3.0),
            q in prop::array::uniform3(-3.0f64..3.0),
            on_face in any::<bool>(),
        ) {
            let model = bundled(crate::models::BUNDLED[name]).unwrap();
            let h = GeneratingHamiltonians::build_unchecked(&model);
            let d = model.dim();
            let mut x = crate::models::sample_state(&model, &s);
            if on_face && h.space().contains_unchecked(&{ let mut y = x.clone(); y[0] = 0.0; y }) {
                x[0] = 0.0;
            }
            let local = h.at(&x).unwrap();
            let (p, q) = (&p[..d], &q[..d]);
            prop_assert!(local.ddagger(p) <= local.dagger(p) + 1e-12);
            let mid: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
            for m in local.masks() {
                let lhs = local.h(m, &mid);
                let rhs = 0.5 * (local.h(m, p) + local.h(m, q));
                prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()));
            }
        }

        #[test]
        fn gradient_matches_central_differences(
            name in 0usize..9,
            s in prop::array::uniform3(0.05f64..1.0),
            p in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let model = bundled(crate::models::BUNDLED[name]).unwrap();
            let h = GeneratingHamiltonians::build_unchecked(&model);
            let d = model.dim();
            let x = crate::models::sample_state(&model, &s);
            let local = h.at(&x).unwrap();
            let p = &p[..d];
            let g = local.grad(0, p);
            for i in 0..d {
                let eps = 1e-5;
                let mut a = p.to_vec();
                let mut b = p.to_vec();
                a[i] += eps;
                b[i] -= eps;
                let fd = (local.h(0, &a) - local.h(0, &b)) / (2.0 * eps);
                prop_assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()), "{} vs {}", fd, g[i]);
            }
        }

        #[test]
        fn boundary_piece_gradient_lies_in_cone(p in -3.0f64..3.0, y in 0.0f64..4.0, which in 0usize..2) {
            let model = bundled(["birth_death_harvesting", "prey_predator"][which]).unwrap();
            let h = GeneratingHamiltonians::build_unchecked(&model);
            let x = if which == 0 { vec![0.0] } else { vec![0.0, y] };
            let local = h.at(&x).unwrap();
            let pv = vec![p; x.len()];
            let g = local.grad(local.full_mask(), &pv);
            prop_assert!(h.space().tangent_cone_contains(&x, &g).unwrap());
        }
    }
}
