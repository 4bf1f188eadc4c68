//! Zero-cost and controlled flows, integrated as selections of the differential
//! inclusion built from the pieces active at the current state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Path;
use crate::geometry::{dot, GeometryError};
use crate::legendre::{full_at, LegendreError};
use crate::models::{GeneratingHamiltonians, HamiltonianError};
use crate::numerics::tensor_grid;

/// Certificate slack for the controlled-flow inequality.
pub const CERT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Legendre(#[from] LegendreError),
    #[error("time step and horizon must be positive (dt = {dt}, T = {horizon})")]
    BadStep { dt: f64, horizon: f64 },
    #[error("no feasible velocity at {x:?} (selection {v:?} leaves the tangent cone); the model is inconsistent")]
    EmptySelection { x: Vec<f64>, v: Vec<f64> },
    #[error("gradient field returned dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCertificate {
    pub t: f64,
    /// `<grad f, v> - L(x, v)`
    pub lhs: f64,
    /// `H_ddagger(x, grad f)`
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub path: Path,
    /// Velocity used on each step (one per segment).
    pub velocities: Vec<Vec<f64>>,
    /// Steps whose Euler update left E and was projected back.
    pub projected_steps: Vec<usize>,
    pub certificates: Vec<StepCertificate>,
}

fn step_count(horizon: f64, dt: f64) -> Result<usize, FlowError> {
    if !(dt > 0.0 && horizon > 0.0) || !dt.is_finite() || !horizon.is_finite() {
        return Err(FlowError::BadStep { dt, horizon });
    }
    Ok(((horizon / dt).round() as usize).max(1))
}

fn integrate(
    ham: &GeneratingHamiltonians,
    grad_field: Option<&dyn Fn(&[f64]) -> Vec<f64>>,
    x0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<FlowResult, FlowError> {
    let space = ham.space();
    if !space.contains(x0)? {
        return Err(GeometryError::Outside(x0.to_vec()).into());
    }
    let steps = step_count(horizon, dt)?;
    let h = horizon / steps as f64;
    let d = ham.dim();
    let mut x = x0.to_vec();
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let mut velocities = Vec::with_capacity(steps);
    let mut projected_steps = Vec::new();
    let mut certificates = Vec::new();
    for k in 0..steps {
        let local = ham.at(&x)?;
        let p = match grad_field {
            Some(f) => {
                let g = f(&x);
                if g.len() != d {
                    return Err(FlowError::Dimension { expected: d, got: g.len() });
                }
                g
            }
            None => vec![0.0; d],
        };
        let raw = local.grad(local.full_mask(), &p);
        let v = space.project_tangent(&x, &raw)?;
        if !space.tangent_cone_contains(&x, &v)? || v.iter().any(|c| !c.is_finite()) {
            return Err(FlowError::EmptySelection { x, v });
        }
        if grad_field.is_some() {
            let l = full_at(&local, &v)?.value;
            let lhs = dot(&p, &v) - l;
            let rhs = local.ddagger(&p);
            certificates.push(StepCertificate { t: k as f64 * h, lhs, rhs, holds: lhs >= rhs - CERT_TOL });
        }
        let mut next: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        if !space.contains_unchecked(&next) {
            next = space.project_point(&next);
            projected_steps.push(k);
        }
        x = next;
        times.push((k + 1) as f64 * h);
        states.push(x.clone());
        velocities.push(v);
    }
    Ok(FlowResult { path: Path { times, states }, velocities, projected_steps, certificates })
}

/// Euler integration of `x' = grad_p H_{J*(x)}(x, 0)`, kept inside E.
pub fn zero_cost_flow(ham: &GeneratingHamiltonians, x0: &[f64], horizon: f64, dt: f64) -> Result<FlowResult, FlowError> {
    integrate(ham, None, x0, horizon, dt)
}

/// Euler integration of `x' = grad_p H_{J*(x)}(x, grad f(x))` with per-step certificates
/// `<grad f, v> - L(x, v) >= H_ddagger(x, grad f) - CERT_TOL`.
pub fn controlled_flow(
    ham: &GeneratingHamiltonians,
    grad_field: &dyn Fn(&[f64]) -> Vec<f64>,
    x0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<FlowResult, FlowError> {
    integrate(ham, Some(grad_field), x0, horizon, dt)
}

/// Empirical `sup |grad_p H_{J*(x)}(x, 0)| / (1 + |x|)` over a tensor grid of the box.
pub fn growth_bound_probe(ham: &GeneratingHamiltonians, bounds: &[(f64, f64)], per_axis: usize) -> Result<f64, FlowError> {
    let space = ham.space();
    let d = ham.dim();
    let mut sup = 0.0f64;
    for x in tensor_grid(bounds, per_axis) {
        if !space.contains_unchecked(&x) {
            continue;
        }
        let local = ham.at(&x)?;
        let v = local.grad(local.full_mask(), &vec![0.0; d]);
        let norm = |u: &[f64]| u.iter().map(|c| c * c).sum::<f64>().sqrt();
        sup = sup.max(norm(&v) / (1.0 + norm(&x)));
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::action;
    use crate::models::{bundled, yule};

    fn ham(name: &str) -> GeneratingHamiltonians {
        GeneratingHamiltonians::build(&bundled(name).unwrap()).unwrap()
    }

    #[test]
    fn bdi_follows_linear_ode() {
        // x' = lam x + rho - mu x = 1 - x
        let h = ham("birth_death_immigration");
        let r = zero_cost_flow(&h, &[3.0], 2.0, 1e-4).unwrap();
        let end = r.path.states.last().unwrap()[0];
        let exact = 1.0 + 2.0 * (-2.0f64).exp();
        assert!((end - exact).abs() < 1e-4);
        assert!(r.projected_steps.is_empty());
    }

    #[test]
    fn euler_first_order() {
        let h = ham("birth_death_immigration");
        let exact = 1.0 + 2.0 * (-1.0f64).exp();
        let e1 = (zero_cost_flow(&h, &[3.0], 1.0, 1e-2).unwrap().path.states.last().unwrap()[0] - exact).abs();
        let e2 = (zero_cost_flow(&h, &[3.0], 1.0, 5e-3).unwrap().path.states.last().unwrap()[0] - exact).abs();
        assert!((e1 / e2 - 2.0).abs() < 0.1, "{e1} {e2}");
    }

    #[test]
    fn rest_point_is_constant() {
        let h = ham("birth_death_immigration");
        let r = zero_cost_flow(&h, &[1.0], 1.0, 0.01).unwrap();
        assert!(r.path.states.iter().all(|s| (s[0] - 1.0).abs() < 1e-14));
    }

    #[test]
    fn harvesting_from_boundary_moves_inward() {
        let h = ham("birth_death_harvesting");
        let r = zero_cost_flow(&h, &[0.0], 1.0, 0.01).unwrap();
        assert!(r.velocities[0][0] >= 0.0);
        assert!(r.path.states.iter().all(|s| s[0] >= 0.0));
    }

    #[test]
    fn controlled_with_zero_gradient_equals_zero_cost() {
        let h = ham("sir_dynamics");
        let a = zero_cost_flow(&h, &[0.5, 0.2, 0.0], 1.0, 0.01).unwrap();
        let b = controlled_flow(&h, &|_x| vec![0.0; 3], &[0.5, 0.2, 0.0], 1.0, 0.01).unwrap();
        assert_eq!(a.path, b.path);
        assert!(b.certificates.iter().all(|c| c.holds));
    }

    #[test]
    fn certificates_hold_on_harvesting() {
        let h = ham("birth_death_harvesting");
        // f(x) = e^{-x} cut off smoothly beyond x = 4
        let grad = |x: &[f64]| {
            let cut = if x[0] < 4.0 { 1.0 } else { (-(x[0] - 4.0).powi(2)).exp() };
            vec![-(-x[0]).exp() * cut]
        };
        let r = controlled_flow(&h, &grad, &[0.0], 5.0, 1e-3).unwrap();
        assert!(r.certificates.iter().all(|c| c.holds));
        assert!(r.path.states.iter().all(|s| s[0] >= 0.0));
    }

    #[test]
    fn never_exits_e_over_many_steps() {
        let h = ham("si_model");
        let r = zero_cost_flow(&h, &[0.99], 100.0, 1e-3).unwrap();
        assert_eq!(r.path.states.len(), 100_001);
        assert!(r.path.states.iter().all(|s| h.space().contains_unchecked(s)));
    }

    #[test]
    fn zero_cost_flow_has_small_action() {
        let h = ham("birth_death_immigration");
        let r = zero_cost_flow(&h, &[3.0], 1.0, 1e-3).unwrap();
        let a = action(&h, &r.path).unwrap();
        assert!(a.total < 1e-5, "{}", a.total);
    }

    #[test]
    fn growth_bounds() {
        let y = GeneratingHamiltonians::build(&yule().unwrap()).unwrap();
        let s = growth_bound_probe(&y, &[(0.0, 10.0)], 101).unwrap();
        assert!((s - 10.0 / 11.0).abs() < 1e-12);
        let pp = growth_bound_probe(&ham("prey_predator"), &[(0.0, 5.0), (0.0, 5.0)], 21).unwrap();
        assert!(pp.is_finite() && pp > 0.0);
    }
}
