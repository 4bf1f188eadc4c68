//! Finite-n checks of the rate function: exact Poisson tails, Monte Carlo
//! estimates with Wilson intervals, and the pure-birth boundary failure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{action, ActionError, Path};
use crate::models::{yule, GeneratingHamiltonians, HamiltonianError, Model, ModelError};
use crate::numerics::ln_factorial;
use crate::simulator::{ensemble_map, SimConfig, SimError, Trajectory};

/// Fewest hits accepted by [`mc_rate`].
pub const MIN_HITS: u64 = 5;
const WILSON_Z: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error)]
pub enum LdpError {
    #[error("invalid input: {0}")]
    Domain(String),
    #[error("only {hits} hits in {reps} replicas (need at least {MIN_HITS}); use more replicas or an exact method for deep tails")]
    TooFewHits { hits: u64, reps: u64 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
}

/// `-(1/n) log P[Poisson(n rho t) >= ceil(n a)]`, summed in log space.
pub fn exact_poisson_rate(rho: f64, t: f64, a: f64, n: u64) -> Result<f64, LdpError> {
    if !(rho > 0.0 && t > 0.0 && a.is_finite() && n >= 1) {
        return Err(LdpError::Domain(format!("need rho > 0, t > 0, finite a, n >= 1 (rho = {rho}, t = {t}, a = {a}, n = {n})")));
    }
    let nf = n as f64;
    let mean = nf * rho * t;
    let k0 = (nf * a).ceil().max(0.0) as u64;
    let ln_mean = mean.ln();
    let mut term = k0 as f64 * ln_mean - mean - ln_factorial(k0);
    let mut acc = term;
    let mut k = k0;
    loop {
        k += 1;
        term += ln_mean - (k as f64).ln();
        // log(e^acc + e^term)
        acc = if term > acc { term + (acc - term).exp().ln_1p() } else { acc + (term - acc).exp().ln_1p() };
        if (k as f64) > mean && term < acc - 40.0 {
            break;
        }
    }
    Ok(-acc.min(0.0) / nf)
}

/// Rate-function value `a log(a / (rho t)) - a + rho t` of the Poisson endpoint.
pub fn poisson_action(rho: f64, t: f64, a: f64) -> f64 {
    let m = rho * t;
    if a == 0.0 {
        m
    } else {
        a * (a / m).ln() - a + m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Ge,
    Le,
}

/// Events on rescaled paths `X_n(t) / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPredicate {
    /// `X_n(T)_coord / n` compared with `threshold`.
    Terminal { coord: usize, cmp: Comparison, threshold: f64 },
    /// `sup_t |X_n(t)/n - reference(t)| <= eps` in the max norm.
    Tube { reference: Path, eps: f64 },
}

fn interpolate(path: &Path, t: f64) -> Vec<f64> {
    let k = path.times.partition_point(|&s| s <= t);
    if k == 0 {
        return path.states[0].clone();
    }
    if k >= path.times.len() {
        return path.states[path.times.len() - 1].clone();
    }
    let (t0, t1) = (path.times[k - 1], path.times[k]);
    let w = (t - t0) / (t1 - t0);
    path.states[k - 1].iter().zip(&path.states[k]).map(|(a, b)| a + w * (b - a)).collect()
}

impl EventPredicate {
    pub fn holds(&self, traj: &Trajectory) -> bool {
        let nf = traj.n as f64;
        match self {
            EventPredicate::Terminal { coord, cmp, threshold } => {
                let x = traj.final_state()[*coord] as f64 / nf;
                match cmp {
                    Comparison::Ge => x >= *threshold,
                    Comparison::Le => x <= *threshold,
                }
            }
            EventPredicate::Tube { reference, eps } => {
                let far = |q: &[i64], t: f64| {
                    let r = interpolate(reference, t);
                    q.iter().zip(&r).map(|(c, y)| (*c as f64 / nf - y).abs()).fold(0.0, f64::max) > *eps
                };
                let mut prev: &[i64] = &traj.q0;
                for k in 0..traj.len() {
                    let t = traj.event_times[k];
                    if far(prev, t) || far(traj.state(k), t) {
                        return false;
                    }
                    prev = traj.state(k);
                }
                reference.times.iter().filter(|&&t| t <= traj.horizon).all(|&t| !far(traj.state_at(t), t))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRate {
    pub n: u64,
    pub reps: u64,
    pub seed: u64,
    pub hits: u64,
    pub p_hat: f64,
    pub estimate: f64,
    /// Rate interval from the Wilson 95% interval of the hit probability.
    pub interval: (f64, f64),
}

/// Wilson score interval for `hits / reps`.
pub fn wilson(hits: u64, reps: u64) -> (f64, f64) {
    let nr = reps as f64;
    let p = hits as f64 / nr;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / nr;
    let centre = (p + z2 / (2.0 * nr)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / nr + z2 / (4.0 * nr * nr)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// `-(1/n) log p_hat` for the event over `reps` simulated replicas from `x0`.
pub fn mc_rate(
    model: &Model,
    event: &EventPredicate,
    x0: &[f64],
    n: u64,
    horizon: f64,
    reps: u64,
    seed: u64,
) -> Result<McRate, LdpError> {
    if reps == 0 {
        return Err(LdpError::Domain("reps must be positive".into()));
    }
    let q0: Vec<i64> = x0.iter().map(|x| (x * n as f64).round() as i64).collect();
    let cfg = SimConfig::new(n, horizon, seed);
    let hits = ensemble_map(model, &cfg, &q0, reps, |t| event.holds(t))?.into_iter().filter(|h| *h).count() as u64;
    if hits < MIN_HITS {
        return Err(LdpError::TooFewHits { hits, reps });
    }
    let nf = n as f64;
    let p_hat = hits as f64 / reps as f64;
    let (lo, hi) = wilson(hits, reps);
    Ok(McRate { n, reps, seed, hits, p_hat, estimate: -p_hat.ln() / nf, interval: (-hi.ln() / nf, -lo.ln() / nf) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureDemo {
    /// Midpoint-rule action of `t -> t^2` on `[0, 1]` under the pure-birth model.
    pub action: f64,
    /// Same with twice the segments; the difference bounds the quadrature error.
    pub action_refined: f64,
    pub action_reference: f64,
    pub finite: bool,
    pub segments: usize,
    pub n: u64,
    pub replicas: u64,
    pub seed: u64,
    /// Replicas started at 0 reaching level 1 by time 1.
    pub hits: u64,
    pub conclusion: String,
}

/// The pure-birth process started at 0: the naive Lagrangian assigns finite cost to
/// leaving 0, while the process never leaves.
pub fn failure_demo(replicas: u64, n: u64, segments: usize, seed: u64) -> Result<FailureDemo, LdpError> {
    let model = yule()?;
    let ham = GeneratingHamiltonians::build(&model)?;
    let quad = |m: usize| action(&ham, &Path::from_fn(1.0, m, |t| vec![t * t])).map(|r| r.total);
    let a = quad(segments)?;
    let a2 = quad(2 * segments)?;
    let cfg = SimConfig::new(n, 1.0, seed);
    let event = EventPredicate::Terminal { coord: 0, cmp: Comparison::Ge, threshold: 1.0 };
    let hits = ensemble_map(&model, &cfg, &[0], replicas, |t| event.holds(t))?.into_iter().filter(|h| *h).count() as u64;
    Ok(FailureDemo {
        action: a,
        action_refined: a2,
        action_reference: 2f64.ln() - 1.0 / 6.0,
        finite: a.is_finite() && (a - a2).abs() <= 1e-3,
        segments,
        n,
        replicas,
        seed,
        hits,
        conclusion: "The path t^2 has finite naive action, yet a pure-birth process started at 0 never moves, \
                     so its true cost is infinite: at the boundary the Lagrangian has to come from the \
                     boundary-aware Hamiltonian rather than the interior formula."
            .into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::birth_death_immigration;

    #[test]
    fn poisson_rates_approach_action() {
        let limit = poisson_action(1.0, 1.0, 2.0);
        assert!((limit - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-15);
        let r: Vec<f64> = [100, 1000, 10_000].iter().map(|&n| exact_poisson_rate(1.0, 1.0, 2.0, n).unwrap()).collect();
        assert!(r[0] > r[1] && r[1] > r[2] && r[2] > limit);
        assert!((r[2] - limit).abs() <= 0.01);
    }

    #[test]
    fn typical_event_rate_vanishes() {
        let a = exact_poisson_rate(1.0, 1.0, 1.0, 100).unwrap();
        let b = exact_poisson_rate(1.0, 1.0, 1.0, 10_000).unwrap();
        assert!(b < a && b < 1e-3);
    }

    #[test]
    fn n_one_matches_naive_sum() {
        for a in [0.0f64, 1.0, 3.0, 7.5] {
            let k0 = a.ceil() as u64;
            let below: f64 = (0..k0).map(|k| (-1.0f64).exp() / (1..=k).map(|i| i as f64).product::<f64>()).sum();
            let naive = -(1.0 - below).ln();
            let tail: f64 = (k0..1000).map(|k| (k as f64 * 1f64.ln() - 1.0 - ln_factorial(k)).exp()).sum();
            let exact = exact_poisson_rate(1.0, 1.0, a, 1).unwrap();
            assert!((exact + tail.ln()).abs() < 1e-12);
            if a < 5.0 {
                assert!((exact - naive).abs() < 1e-10, "{a}");
            }
        }
    }

    #[test]
    fn monotone_in_a() {
        let mut prev = 0.0;
        for i in 1..20 {
            let r = exact_poisson_rate(1.0, 1.0, 1.0 + 0.1 * i as f64, 500).unwrap();
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn wilson_contains_estimate_and_shrinks() {
        let (lo, hi) = wilson(30, 1000);
        assert!(lo < 0.03 && 0.03 < hi);
        let (lo2, hi2) = wilson(120, 4000);
        assert!(((hi - lo) / (hi2 - lo2) - 2.0).abs() < 0.15);
    }

    #[test]
    fn certain_event_has_zero_rate() {
        let m = birth_death_immigration("0", "0", "1").unwrap();
        let e = EventPredicate::Terminal { coord: 0, cmp: Comparison::Ge, threshold: 0.0 };
        let r = mc_rate(&m, &e, &[0.0], 20, 1.0, 100, 1).unwrap();
        assert_eq!(r.estimate, 0.0);
    }

    #[test]
    fn yule_from_zero_refuses() {
        let e = EventPredicate::Terminal { coord: 0, cmp: Comparison::Ge, threshold: 0.5 };
        let err = mc_rate(&yule().unwrap(), &e, &[0.0], 100, 1.0, 1000, 1).unwrap_err();
        assert!(matches!(err, LdpError::TooFewHits { hits: 0, .. }));
    }

    #[test]
    fn tube_event() {
        let m = birth_death_immigration("0", "0", "0").unwrap();
        let reference = Path::straight(&[0.5], &[0.5], 1.0, 4);
        let inside = EventPredicate::Tube { reference: reference.clone(), eps: 0.01 };
        assert_eq!(mc_rate(&m, &inside, &[0.5], 10, 1.0, 10, 1).unwrap().hits, 10);
        let shifted = EventPredicate::Tube { reference: Path::straight(&[0.7], &[0.7], 1.0, 4), eps: 0.1 };
        assert!(matches!(mc_rate(&m, &shifted, &[0.5], 10, 1.0, 10, 1), Err(LdpError::TooFewHits { .. })));
    }

    #[test]
    fn small_failure_demo() {
        let d = failure_demo(1000, 100, 2000, 7).unwrap();
        assert_eq!(d.hits, 0);
        assert!(d.finite && (d.action - d.action_reference).abs() < 1e-3);
    }
}
