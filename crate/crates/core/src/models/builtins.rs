//! Built-in models. The canonical parameterizations ship as JSON under
//! `models/`; the constructors below build the same specs with custom rates.

use std::collections::BTreeMap;

use super::{Kind, Model, ModelError, ModelSpec, TransitionSpec};
use crate::geometry::{HalfSpace, PolyhedronSpec};

/// Names of the bundled model files, in a fixed order.
pub const BUNDLED: [&str; 9] = [
    "birth_death_immigration",
    "birth_death_harvesting",
    "yule",
    "growing_population",
    "poisson_offspring",
    "si_model",
    "interacting_species",
    "prey_predator",
    "sir_dynamics",
];

pub fn bundled_json(name: &str) -> Option<&'static str> {
    Some(match name {
        "birth_death_immigration" => include_str!("../../models/birth_death_immigration.json"),
        "birth_death_harvesting" => include_str!("../../models/birth_death_harvesting.json"),
        "yule" => include_str!("../../models/yule.json"),
        "growing_population" => include_str!("../../models/growing_population.json"),
        "poisson_offspring" => include_str!("../../models/poisson_offspring.json"),
        "si_model" => include_str!("../../models/si_model.json"),
        "interacting_species" => include_str!("../../models/interacting_species.json"),
        "prey_predator" => include_str!("../../models/prey_predator.json"),
        "sir_dynamics" => include_str!("../../models/sir_dynamics.json"),
        _ => return None,
    })
}

pub fn bundled(name: &str) -> Result<Model, ModelError> {
    let text = bundled_json(name).ok_or_else(|| ModelError::UnknownBuiltin(name.to_string()))?;
    Model::from_json(text)
}

/// Map `u` in the unit cube to a state inside the model's probe box.
pub fn sample_state(model: &Model, u: &[f64]) -> Vec<f64> {
    let (bounds, _) = model.probe_bounds();
    let x: Vec<f64> = bounds.iter().zip(u).map(|((lo, hi), t)| lo + (hi - lo) * t.clamp(0.0, 1.0)).collect();
    if model.space().contains_unchecked(&x) {
        x
    } else {
        model.space().project_point(&x)
    }
}

fn half_line() -> PolyhedronSpec {
    PolyhedronSpec {
        dim: 1,
        closed: vec![HalfSpace { base: vec![0.0], normal: vec![1.0] }],
        open: vec![],
        tol: crate::geometry::DEFAULT_TOL,
        witness: Some(vec![1.0]),
    }
}

fn open_half_line() -> PolyhedronSpec {
    PolyhedronSpec {
        dim: 1,
        closed: vec![],
        open: vec![HalfSpace { base: vec![0.0], normal: vec![1.0] }],
        tol: crate::geometry::DEFAULT_TOL,
        witness: Some(vec![1.0]),
    }
}

fn orthant(d: usize) -> PolyhedronSpec {
    PolyhedronSpec {
        dim: d,
        closed: (0..d)
            .map(|i| {
                let mut n = vec![0.0; d];
                n[i] = 1.0;
                HalfSpace { base: vec![0.0; d], normal: n }
            })
            .collect(),
        open: vec![],
        tol: crate::geometry::DEFAULT_TOL,
        witness: Some(vec![1.0; d]),
    }
}

fn tr(label: &str, gamma: Vec<i64>, rate: &str, kind: Kind) -> TransitionSpec {
    TransitionSpec { label: Some(label.to_string()), gamma, rate: rate.to_string(), kind, rate_n: None }
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn spec(name: &str, space: PolyhedronSpec, params: BTreeMap<String, f64>, transitions: Vec<TransitionSpec>) -> ModelSpec {
    ModelSpec {
        name: name.to_string(),
        description: String::new(),
        space,
        params,
        transitions,
        offspring: None,
        offspring_series: None,
        probe: None,
    }
}

/// Birth, death and immigration rates as expressions in `x1`; parameters
/// `lam = 1`, `mu = 2`, `rho = 1` are available.
pub fn birth_death_immigration(lambda: &str, mu: &str, rho: &str) -> Result<Model, ModelError> {
    Model::from_spec(spec(
        "birth_death_immigration",
        half_line(),
        params(&[("lam", 1.0), ("mu", 2.0), ("rho", 1.0)]),
        vec![
            tr("birth", vec![1], lambda, Kind::Interaction),
            tr("death", vec![-1], mu, Kind::Interaction),
            tr("immigration", vec![1], rho, Kind::Immigration),
        ],
    ))
}

/// As [`birth_death_immigration`] plus a harvesting rate `beta` switched off at 0;
/// parameters `lam = mu = rho = 1`, `beta = 0.5`.
pub fn birth_death_harvesting(lambda: &str, mu: &str, rho: &str, beta: &str) -> Result<Model, ModelError> {
    Model::from_spec(spec(
        "birth_death_harvesting",
        half_line(),
        params(&[("lam", 1.0), ("mu", 1.0), ("rho", 1.0), ("beta", 0.5)]),
        vec![
            tr("birth", vec![1], lambda, Kind::Interaction),
            tr("death", vec![-1], mu, Kind::Interaction),
            tr("immigration", vec![1], rho, Kind::Immigration),
            tr("harvest", vec![-1], beta, Kind::Harvesting),
        ],
    ))
}

/// Growing population on `(0, inf)` with offspring list `(k, v_k(x))`.
pub fn growing_population(offspring: &[(u32, &str)]) -> Result<Model, ModelError> {
    let mut s = spec("growing_population", open_half_line(), BTreeMap::new(), vec![]);
    s.offspring = Some(offspring.iter().map(|(k, e)| (*k, e.to_string())).collect());
    Model::from_spec(s)
}

/// Yule process on `[0, inf)`.
pub fn yule() -> Result<Model, ModelError> {
    let mut s = spec("yule", half_line(), BTreeMap::new(), vec![]);
    s.offspring = Some(vec![(1, "1".into())]);
    Model::from_spec(s)
}

/// Poisson(`beta`) offspring per reproduction event, on `(0, inf)`.
pub fn poisson_offspring(beta: f64) -> Result<Model, ModelError> {
    let mut s = spec("poisson_offspring", open_half_line(), params(&[("beta", beta)]), vec![]);
    s.offspring_series = Some("exp(k*log(beta) - beta - lfact(k))".into());
    Model::from_spec(s)
}

/// SI model on `(0, 1]` with infection rate `c` (parameter `beta` bound to the argument).
pub fn si_model(c: &str, beta: f64) -> Result<Model, ModelError> {
    let space = PolyhedronSpec {
        dim: 1,
        closed: vec![HalfSpace { base: vec![1.0], normal: vec![-1.0] }],
        open: vec![HalfSpace { base: vec![0.0], normal: vec![1.0] }],
        tol: crate::geometry::DEFAULT_TOL,
        witness: Some(vec![0.5]),
    };
    Model::from_spec(spec("si_model", space, params(&[("beta", beta)]), vec![tr("infection", vec![1], c, Kind::Interaction)]))
}

/// Interacting species on `[0, inf)^d`: interaction transitions plus immigration
/// `a_i` and harvesting `b_i` per coordinate.
pub fn interacting_species(
    interactions: &[(Vec<i64>, &str)],
    a: &[&str],
    b: &[&str],
    parameters: BTreeMap<String, f64>,
) -> Result<Model, ModelError> {
    let d = a.len();
    let mut ts: Vec<TransitionSpec> = interactions
        .iter()
        .enumerate()
        .map(|(i, (g, r))| tr(&format!("interaction{}", i + 1), g.clone(), r, Kind::Interaction))
        .collect();
    for i in 0..d {
        let mut e = vec![0; d];
        e[i] = 1;
        ts.push(tr(&format!("immigration{}", i + 1), e.clone(), a[i], Kind::Immigration));
        e[i] = -1;
        ts.push(tr(&format!("harvest{}", i + 1), e, b.get(i).copied().unwrap_or("0"), Kind::Harvesting));
    }
    Model::from_spec(spec("interacting_species", orthant(d), parameters, ts))
}

/// Prey-predator system with prey carrying capacity `kappa`.
pub fn prey_predator(kappa: f64, alpha: f64, beta: f64, mu: f64, a: [f64; 2], b: [f64; 2]) -> Result<Model, ModelError> {
    let p = params(&[
        ("kappa", kappa),
        ("alpha", alpha),
        ("beta", beta),
        ("mu", mu),
        ("a1", a[0]),
        ("a2", a[1]),
        ("b1", b[0]),
        ("b2", b[1]),
    ]);
    let mut m = interacting_species(
        &[
            (vec![1, 0], "x1*(kappa - min(x1, kappa))"),
            (vec![-1, 0], "alpha*min(x1, kappa)*x2"),
            (vec![0, 1], "beta*min(x1, kappa)*x2"),
            (vec![0, -1], "mu*x2"),
        ],
        &["a1", "a2"],
        &["b1", "b2"],
        p,
    )?;
    m.spec.name = "prey_predator".into();
    Ok(m)
}

/// SI model with recovery and population dynamics in three compartments.
pub fn sir_dynamics(beta: f64, alpha: f64, kappa: f64, mu: [f64; 3], a: [f64; 3], b: [f64; 3]) -> Result<Model, ModelError> {
    let mut pairs = vec![("beta", beta), ("alpha", alpha), ("kappa", kappa)];
    let names = [["mu1", "mu2", "mu3"], ["a1", "a2", "a3"], ["b1", "b2", "b3"]];
    for (vals, ns) in [mu, a, b].iter().zip(names.iter()) {
        for i in 0..3 {
            pairs.push((ns[i], vals[i]));
        }
    }
    let mut m = interacting_species(
        &[
            (vec![-1, 1, 0], "beta*min(x1, kappa)*x2"),
            (vec![0, -1, 1], "alpha*x2"),
            (vec![1, 0, 0], "(x1 + x2 + x3)*(kappa - min(x1 + x2 + x3, kappa))"),
            (vec![-1, 0, 0], "mu1*x1"),
            (vec![0, -1, 0], "mu2*x2"),
            (vec![0, 0, -1], "mu3*x3"),
        ],
        &["a1", "a2", "a3"],
        &["b1", "b2", "b3"],
        params(&pairs),
    )?;
    m.spec.name = "sir_dynamics".into();
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GeneratingHamiltonians;

    #[test]
    fn every_bundled_model_validates() {
        for name in BUNDLED {
            let m = bundled(name).unwrap();
            assert_eq!(m.name(), name);
            let report = m.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(report.probe_points > 1000, "{name}");
        }
    }

    /// Bundled files and constructors must describe the same Hamiltonians.
    #[test]
    fn constructors_match_bundled_files() {
        let pairs: Vec<(&str, Model)> = vec![
            ("birth_death_immigration", birth_death_immigration("lam*x1", "mu*x1", "rho").unwrap()),
            ("birth_death_harvesting", birth_death_harvesting("lam*x1", "mu*x1", "rho", "beta").unwrap()),
            ("yule", yule().unwrap()),
            ("growing_population", growing_population(&[(1, "1"), (2, "0.5/(1+x1)")]).unwrap()),
            ("poisson_offspring", poisson_offspring(1.5).unwrap()),
            ("si_model", si_model("beta*x1*(1-x1)", 2.0).unwrap()),
            ("prey_predator", prey_predator(2.0, 1.0, 1.0, 1.0, [0.5, 0.5], [0.2, 0.2]).unwrap()),
            ("sir_dynamics", sir_dynamics(2.0, 1.0, 3.0, [0.5; 3], [0.3; 3], [0.1; 3]).unwrap()),
        ];
        for (name, built) in pairs {
            let file = bundled(name).unwrap();
            let h1 = GeneratingHamiltonians::build(&file).unwrap();
            let h2 = GeneratingHamiltonians::build(&built).unwrap();
            for i in 0..30 {
                let u = [(i as f64 * 0.37) % 1.0, (i as f64 * 0.61) % 1.0, (i as f64 * 0.23) % 1.0];
                let x = sample_state(&file, &u);
                let p: Vec<f64> = (0..file.dim()).map(|k| ((i + k) as f64 * 0.7).sin()).collect();
                let a = h1.eval_h_dagger(&x, &p).unwrap();
                let b = h2.eval_h_dagger(&x, &p).unwrap();
                assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()), "{name} at {x:?}");
            }
        }
    }

    #[test]
    fn unknown_builtin_is_an_error() {
        assert!(matches!(bundled("nope"), Err(ModelError::UnknownBuiltin(_))));
    }
}
