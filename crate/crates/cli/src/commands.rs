//! Subcommand implementations: config in, artifacts out.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use ldplab::action::{action, minimize_action, velocity_variation, Path as StatePath};
use ldplab::conditions::{
    apriori_confinement, check_appendix_b, check_condition_basic, check_condition_boundary, check_containment,
    check_multid, AppendixBReport, BasicReport, BoundaryReport, Confinement, ContainmentReport, MultidReport,
};
use ldplab::flows::{controlled_flow, zero_cost_flow};
use ldplab::hj1d::{comparison_probe, solve_resolvent, ComparisonReport, Grid1D, SolveOptions, Solver, Variant};
use ldplab::ldp_verify::{exact_poisson_rate, failure_demo, mc_rate, poisson_action};
use ldplab::legendre::{lagrangian_hull, legendre_full};
use ldplab::models::{bundled, Model};
use ldplab::simulator::{ensemble_map, lln_report, SimConfig, Simulator};
use ldplab::{parse_rate_expr, CompiledExpr, GeneratingHamiltonians};

use crate::config::*;
use crate::output::{names, num, parse_error, CliError, Output, Provenance};

pub struct Loaded<T> {
    pub config: T,
    pub value: serde_json::Value,
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
    let config: T = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
    Ok(Loaded { config, value })
}

fn ham_of(model: &Model) -> Result<GeneratingHamiltonians, CliError> {
    Ok(GeneratingHamiltonians::build(model)?)
}

fn compile(model: &Model, text: &str) -> Result<CompiledExpr, CliError> {
    Ok(parse_rate_expr(text)?.bind(model.params(), model.dim())?)
}

fn open(out: &Path, command: &str, value: &serde_json::Value, seed: Option<u64>) -> Result<Output, CliError> {
    Output::new(out, Provenance::new(command, value, seed))
}

pub fn model_validate(config: Option<&Path>, builtin: Option<&str>, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (model, value) = match (config, builtin) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
            let spec = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
            (Model::from_spec(spec)?, value)
        }
        (None, Some(name)) => (bundled(name)?, serde_json::json!({ "builtin": name })),
        _ => return Err(CliError::Validation("give exactly one of --config or --builtin".into())),
    };
    let report = model.validate()?;
    ham_of(&model)?;
    let mut o = open(out, "model validate", &value, None)?;
    o.json("model_validate.json", &report)?;
    o.finish()
}

#[derive(Serialize)]
struct ReplicaSummary {
    replica: u64,
    events: usize,
    final_state: Vec<i64>,
    truncated: bool,
}

pub fn simulate(path: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let Loaded { config: c, value } = load::<SimulateConfig>(path)?;
    let model = c.model.load()?;
    let q0 = match (&c.q0, &c.x0) {
        (Some(q), None) => q.clone(),
        (None, Some(x)) => x.iter().map(|v| (v * c.n as f64).round() as i64).collect(),
        _ => return Err(CliError::Validation("give exactly one of q0 or x0".into())),
    };
    let mut cfg = SimConfig::new(c.n, c.horizon, c.seed);
    if let Some(m) = c.max_events {
        cfg.max_events = m;
    }
    let labels = Simulator::new(&model, c.n)?.labels();
    let trajs = ensemble_map(&model, &cfg, &q0, c.replicas, |t| t.clone())?;
    let d = model.dim();
    let mut header = vec!["replica".to_string(), "t".into()];
    header.extend(names("q", d));
    header.push("transition".into());
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (r, t) in trajs.iter().enumerate() {
        let mut row = vec![r.to_string(), num(0.0)];
        row.extend(t.q0.iter().map(|q| q.to_string()));
        row.push(String::new());
        rows.push(row);
        for k in 0..t.len() {
            let mut row = vec![r.to_string(), num(t.event_times[k])];
            row.extend(t.state(k).iter().map(|q| q.to_string()));
            row.push(labels[t.transition_ids[k] as usize].clone());
            rows.push(row);
        }
        summary.push(ReplicaSummary { replica: r as u64, events: t.len(), final_state: t.final_state().to_vec(), truncated: t.truncated });
    }
    let mut o = open(out, "simulate", &value, Some(c.seed))?;
    o.csv("simulate.csv", &header, &rows)?;
    o.json("simulate.json", &summary)?;
    o.finish()
}

pub fn lln(path: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let Loaded { config: c, value } = load::<LlnConfig>(path)?;
    let model = c.model.load()?;
    let report = lln_report(&model, &c.x0, &c.n_list, c.horizon, c.reps, c.seed)?;
    let header: Vec<String> = ["n", "median", "p90", "max", "truncated_runs"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = report
        .entries
        .iter()
        .map(|e| vec![e.n.to_string(), num(e.median), num(e.p90), num(e.max), e.truncated_runs.to_string()])
        .collect();
    let mut o = open(out, "lln", &value, Some(c.seed))?;
    o.csv("lln.csv", &header, &rows)?;
    o.json("lln.json", &report)?;
    o.finish()
}

pub fn action_cmd(path: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let Loaded { config: c, value } = load::<ActionConfig>(path)?;
    let model = c.model.load()?;
    let ham = ham_of(&model)?;
    let p = StatePath::new(c.path.times, c.path.states)?;
    let report = action(&ham, &p)?;
    let d = model.dim();
    let mut header = vec!["segment".to_string(), "t0".into(), "t1".into()];
    header.extend(names("v", d));
    header.extend(["density".to_string(), "weight".into()]);
    let rows: Vec<Vec<String>> = report
        .per_segment
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut row = vec![k.to_string(), num(p.times[k]), num(p.times[k + 1])];
            row.extend(s.velocity.iter().map(|v| num(*v)));
            row.extend([num(s.density), num(s.weight)]);
            row
        })
        .collect();
    let mut o = open(out, "action", &value, None)?;
    o.csv("action.csv", &header, &rows)?;
    o.json("action.json", &report)?;
    o.finish()
}

fn path_rows(p: &StatePath) -> (Vec<String>, Vec<Vec<String>>) {
    let d = p.dim();
    let mut header = vec!["t".to_string()];
    header.extend(names("x", d));
    let rows = p
        .times
        .iter()
        .zip(&p.states)
        .map(|(t, s)| {
            let mut row = vec![num(*t)];
            row.extend(s.iter().map(|v| num(*v)));
            row
        })
        .collect();
    (header, rows)
}

#[derive(Serialize)]
struct MinpathReport<'a> {
    action: f64,
    velocity_variation: f64,
    report: &'a ldplab::action::ActionReport,
    diagnostics: &'a ldplab::action::MinimizeDiagnostics,
}

pub fn minpath(path: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let Loaded { config: c, value } = load::<MinpathConfig>(path)?;
    let model = c.model.load()?;
    let ham = ham_of(&model)?;
    let r = minimize_action(&ham, &c.x0, &c.x1, c.horizon, c.segments, c.options.unwrap_or_default())?;
    let (header, rows) = path_rows(&r.path);
    let summary = MinpathReport {
        action: r.report.total,
        velocity_variation: velocity_variation(&r.path),
        report: &r.report,
        diagnostics: &r.diagnostics,
    };
    let mut o = open(out, "minpath", &value, None)?;
    o.csv("minpath.csv", &header, &rows)?;
    o.json("minpath.json", &summary)?;
    o.finish()
}

#[derive(Serialize)]
struct FlowSummary {
    steps: usize,
    final_state: Vec<f64>,
    projected_steps: Vec<usize>,
    certificates_checked: usize,
    certificates_failed: usize,
}

pub fn flow(path: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let Loaded { config: c, value } = load::<FlowConfig>(path)?;
    let model = c.model.load()?;
    let ham = ham_of(&model)?;
    let r = match &c.gradient {
        None => zero_cost_flow(&ham, &c.x0, c.horizon, c.dt)?,
        Some(g) => {
            if g.len() != model.dim() {
                return Err(CliError::Validation(format!("gradient needs {} expressions", model.dim())));
            }
            let exprs = g.iter().map(|e| compile(&model, e)).collect::<Result<Vec<_>, _>>()?;
            let field = |x: &[f64]| exprs.iter().map(|e| e.value(x)).collect::<Vec<f64>>();
            controlled_flow(&ham, &field, &c.x0, c.horizon, c.dt)?
        }
    };
    let (mut header, mut rows) = path_rows(&r.path);
    header.extend(names("v", model.dim()));
    for (k, row) in rows.iter_mut().enumerate() {
        let v = r.velocities.get(k).or(r.velocities.last());
        row.extend(v.into_iter().flatten().map(|c| num(*c)));
    }
    let summary = FlowSummary {
        steps: r.velocities.len(),
        final_state: r.path.states.last().cloned().unwrap_or_default(),
        projected_steps: r.projected_steps.clone(),
        certificates_checked: r.certificates.len(),
        certificates_failed: r.certificates.iter().filter(|c| !c.holds).count(),
    };
    let mut o = open(out, "flow", &value, None)?;
    o.csv("flow.csv", &header, &rows)?;
    o.json("flow.json", &summary)?;
    o.finish()
}

#[derive(Serialize)]
struct LegendreRow {
    v: Vec<f64>,
    value: f64,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    argmax_p: Option<Vec<f64>>,
}

pub fn legendre(path: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let Loaded { config: c, value } = load::<LegendreConfig>(path)?;
    let model = c.model.load()?;
    let ham = ham_of(&model)?;
    let mut vs = c.v.clone();
    if let Some(r) = &c.v_range {
        if !(r.step > 0.0) || r.hi < r.lo {
            return Err(CliError::Validation("v_range needs lo <= hi and step > 0".into()));
        }
        let count = ((r.hi - r.lo) / r.step + 1e-9).floor() as usize;
        vs.extend((0..=count).map(|k| vec![r.lo + k as f64 * r.step]));
    }
    let mut results = Vec::with_capacity(vs.len());
    for v in &vs {
        results.push(match c.kind {
            LagrangianKind::Full => {
                let e = legendre_full(&ham, &c.x, v)?;
                LegendreRow { v: v.clone(), value: e.value, status: e.status.to_string(), argmax_p: e.argmax_p }
            }
            LagrangianKind::Hull => {
                let (val, _) = lagrangian_hull(&ham, &c.x, v)?;
                LegendreRow { v: v.clone(), value: val, status: "hull".into(), argmax_p: None }
            }
        });
    }
    let d = model.dim();
    let mut header = names("v", d);
    header.extend(["lagrangian".to_string(), "status".into()]);
    if c.kind == LagrangianKind::Full {
        header.extend(names("p", d));
    }
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            let mut row: Vec<String> = r.v.iter().map(|c| num(*c)).collect();
            row.extend([num(r.value), r.status.clone()]);
            row.extend(r.argmax_p.iter().flatten().map(|c| num(*c)));
            row
        })
        .collect();
    let mut o = open(out, "legendre", &value, None)?;
    o.csv("legendre.csv", &header, &rows)?;
    o.json("legendre.json", &results)?;
    o.finish()
}

#[derive(Serialize)]
struct PoissonRow {
    n: u64,
    rate: f64,
}

#[derive(Serialize)]
struct PoissonReport {
    limit: f64,
    rates: Vec<PoissonRow>,
}

pub fn ldp_rate(path: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let Loaded { config: c, value } = load::<LdpRateConfig>(path)?;
    match c {
        LdpRateConfig::PoissonExact { rho, t, a, n_list } => {
            let rates = n_list
                .iter()
                .map(|&n| Ok(PoissonRow { n, rate: exact_poisson_rate(rho, t, a, n)? }))
                .collect::<Result<Vec<_>, CliError>>()?;
            let report = PoissonReport { limit: poisson_action(rho, t, a), rates };
            let header = vec!["n".to_string(), "rate".into()];
            let rows: Vec<Vec<String>> = report.rates.iter().map(|r| vec![r.n.to_string(), num(r.rate)]).collect();
            let mut o = open(out, "ldp-rate", &value, None)?;
            o.csv("ldp_rate.csv", &header, &rows)?;
            o.json("ldp_rate.json", &report)?;
            o.finish()
        }
        LdpRateConfig::MonteCarlo { model, event, x0, n, horizon, reps, seed } => {
            let m = model.load()?;
            let r = mc_rate(&m, &event, &x0, n, horizon, reps, seed)?;
            let mut o = open(out, "ldp-rate", &value, Some(seed))?;
            o.json("ldp_rate.json", &r)?;
            o.finish()
        }
    }
}

#[derive(Serialize, Default)]
struct ConditionsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    basic: Option<BasicReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    boundary: Vec<BoundaryReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    containment: Vec<ContainmentEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    appendix_b: Option<AppendixBReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    multid: Option<MultidReport>,
    note: &'static str,
}

#[derive(Serialize)]
struct ContainmentEntry {
    report: ContainmentReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    confinement: Option<Confinement>,
}

pub fn check_conditions(path: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let Loaded { config: c, value } = load::<ConditionsConfig>(path)?;
    let model = c.model.load()?;
    let ham = ham_of(&model)?;
    let mut report = ConditionsReport {
        note: "verdicts describe the probed ranges only; they are numerical evidence, not proofs",
        ..Default::default()
    };
    if let Some(b) = &c.basic {
        report.basic = Some(check_condition_basic(&ham, b.k, b.p_max)?);
    }
    for b in &c.boundary {
        report.boundary.push(check_condition_boundary(&ham, b.side, b.direction, b.len, b.p_max)?);
    }
    for s in &c.containment {
        let r = check_containment(&ham, &s.candidate, &s.probe)?;
        let confinement = match &s.confinement {
            Some(cf) => Some(apriori_confinement(&r, &cf.k, cf.horizon, cf.m)?),
            None => None,
        };
        report.containment.push(ContainmentEntry { report: r, confinement });
    }
    if let Some(a) = &c.appendix_b {
        report.appendix_b = Some(check_appendix_b(&model, a.alpha, a.probe, a.points)?);
    }
    if let Some(m) = &c.multid {
        report.multid = Some(check_multid(&model, &m.box_bounds, m.samples)?);
    }
    let mut o = open(out, "check conditions", &value, None)?;
    o.json("conditions.json", &report)?;
    o.finish()
}

#[derive(Serialize)]
struct HjReport<'a> {
    comparison: &'a ComparisonReport,
    iterations: (usize, usize),
    final_residuals: (f64, f64),
    #[serde(skip_serializing_if = "Option::is_none")]
    sponge_effect: Option<f64>,
}

pub fn hj_solve(path: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let Loaded { config: c, value } = load::<HjConfig>(path)?;
    let model = c.model.load()?;
    let ham = if c.unchecked { GeneratingHamiltonians::build_unchecked(&model) } else { ham_of(&model)? };
    let expr = compile(&model, &c.h)?;
    let h = |x: f64| expr.value(&[x]);
    let opts = match c.damping {
        Some(w) => SolveOptions { solver: Solver::DampedJacobi { damping: w }, max_iter: 100_000, sponge_check: c.sponge_check, ..Default::default() },
        None => SolveOptions { sponge_check: c.sponge_check, ..Default::default() },
    };
    let cmp = comparison_probe(&ham, c.lambda, &h, c.lo, c.hi, c.intervals, c.refinements, &SolveOptions { sponge_check: false, ..opts })?;
    let grid = Grid1D::new(ham.space(), c.lo, c.hi, c.intervals << c.refinements)?;
    let up = solve_resolvent(&ham, c.lambda, &h, &grid, Variant::Dagger, &opts)?;
    let down = solve_resolvent(&ham, c.lambda, &h, &grid, Variant::Ddagger, &opts)?;
    let kept = grid.kept();
    let header: Vec<String> = ["x", "f_dagger", "f_ddagger", "gap", "sponge"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|i| {
            vec![num(grid.nodes[i]), num(up.f[i]), num(down.f[i]), num(up.f[i] - down.f[i]), (!kept[i] as u8).to_string()]
        })
        .collect();
    let last = |s: &[f64]| s.last().copied().unwrap_or(0.0);
    let report = HjReport {
        comparison: &cmp,
        iterations: (up.iterations, down.iterations),
        final_residuals: (last(&up.residual_history), last(&down.residual_history)),
        sponge_effect: match (up.sponge_effect, down.sponge_effect) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        },
    };
    let mut o = open(out, "hj solve", &value, None)?;
    o.csv("hj.csv", &header, &rows)?;
    o.json("hj.json", &report)?;
    o.finish()
}

pub fn demo_yule_failure(path: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (c, value) = match path {
        Some(p) => {
            let l = load::<DemoConfig>(p)?;
            (l.config, l.value)
        }
        None => {
            let c = DemoConfig::default();
            let v = serde_json::to_value(&c).map_err(|e| CliError::Validation(e.to_string()))?;
            (c, v)
        }
    };
    let r = failure_demo(c.replicas, c.n, c.segments, c.seed)?;
    let mut o = open(out, "demo yule-failure", &value, Some(c.seed))?;
    o.json("yule_failure.json", &r)?;
    o.finish()
}
