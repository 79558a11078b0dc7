//! One function per subcommand. Each returns a JSON payload, CSV tables and
//! diagnostics; nothing here depends on timing or thread scheduling.

use dirac_core::asymptotics::{
    convergence_study, first_node_radius, integrate_first_order, integrate_remainder, log_law_fit, remainder_bounds,
    EpsilonStudy, LogLawFit, RemainderBound, SourceTerms,
};
use dirac_core::phaseflow::{attraction_report, level_set, AttractionReport, LevelSet};
use dirac_core::radial::integrate_from_origin;
use dirac_core::shooting::{bisect, bracket_search, classify, Classification, GroundState, Verdict};
use dirac_core::{Detector, Trajectory};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::Table;

pub struct CommandOutput {
    pub payload: serde_json::Value,
    /// first table is the primary output
    pub tables: Vec<Table>,
    pub diagnostics: Vec<String>,
    /// process exit code on success (0, or 3 for failed verification)
    pub exit_code: i32,
}

fn to_value<T: Serialize>(x: &T) -> serde_json::Value {
    serde_json::to_value(x).expect("payload serializes")
}

#[derive(Serialize)]
struct Columns {
    r: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    energy: Vec<f64>,
}

impl Columns {
    fn of(t: &Trajectory) -> Self {
        Columns {
            r: t.samples.iter().map(|s| s.r).collect(),
            u: t.samples.iter().map(|s| s.state.u).collect(),
            v: t.samples.iter().map(|s| s.state.v).collect(),
            energy: t.samples.iter().map(|s| s.energy).collect(),
        }
    }
}

fn verdict_label(v: &Verdict) -> String {
    match v {
        Verdict::A(k) => format!("A({k})"),
        Verdict::ICandidate(k) => format!("ICandidate({k})"),
        Verdict::Undecided => "Undecided".into(),
    }
}

#[derive(Serialize)]
struct GroundStatePayload<'a> {
    lambda_star: f64,
    lo: f64,
    hi: f64,
    bracket_width: f64,
    iterations: usize,
    converged: bool,
    node_count: usize,
    decay_slope: f64,
    decay_window: (f64, f64),
    match_radius: f64,
    match_residual: f64,
    bracket_history: Vec<(f64, String)>,
    classification: &'a Classification,
    profile: Columns,
}

pub fn ground_state(cfg: &RunConfig) -> Result<(GroundState, CommandOutput), CliError> {
    let p = cfg.params();
    let tol = cfg.tolerances;
    let bracket = bracket_search(&p, &tol)?;
    let gs = bisect(&bracket, &p, &tol, cfg.lambda_tol)?;

    let mut diagnostics = Vec::new();
    if !gs.converged {
        diagnostics.push("some bisection runs stayed undecided; the result is flagged unconverged".to_string());
    }
    let payload = GroundStatePayload {
        lambda_star: gs.lambda_star,
        lo: gs.lo,
        hi: gs.hi,
        bracket_width: gs.bracket_width,
        iterations: gs.iterations,
        converged: gs.converged,
        node_count: gs.node_count,
        decay_slope: gs.decay_slope,
        decay_window: gs.decay_window,
        match_radius: gs.match_radius,
        match_residual: gs.match_residual,
        bracket_history: bracket.history.iter().map(|c| (c.lambda, verdict_label(&c.verdict))).collect(),
        classification: &gs.classification,
        profile: Columns::of(&gs.profile),
    };

    let mut profile = Table::new("profile", &["r", "u", "v", "H"]);
    for s in &gs.profile.samples {
        profile.push(vec![s.r.into(), s.state.u.into(), s.state.v.into(), s.energy.into()]);
    }
    let mut summary = Table::new("summary", &["key", "value"]);
    for (k, v) in [
        ("lambda_star", gs.lambda_star),
        ("lo", gs.lo),
        ("hi", gs.hi),
        ("bracket_width", gs.bracket_width),
        ("decay_slope", gs.decay_slope),
        ("match_radius", gs.match_radius),
        ("match_residual", gs.match_residual),
    ] {
        summary.push(vec![k.into(), v.into()]);
    }
    summary.push(vec!["node_count".into(), gs.node_count.into()]);
    summary.push(vec!["converged".into(), gs.converged.into()]);

    let out = CommandOutput { payload: to_value(&payload), tables: vec![profile, summary], diagnostics, exit_code: 0 };
    Ok((gs, out))
}

pub fn classify_all(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    if cfg.lambdas.is_empty() {
        return Err(CliError::Usage("classify needs at least one --lambda".into()));
    }
    let p = cfg.params();
    let tol = cfg.tolerances;
    // collect keeps input order
    let results: Vec<Classification> =
        cfg.lambdas.par_iter().map(|&l| classify(l, &p, &tol)).collect::<Result<_, _>>()?;

    let mut table = Table::new("classification", &["lambda", "verdict", "node_count", "r", "H", "certificate_r", "note"]);
    let mut events = Table::new("events", &["lambda", "kind", "r", "u", "v"]);
    for c in &results {
        table.push(vec![
            c.lambda.into(),
            verdict_label(&c.verdict).into(),
            c.node_count.into(),
            c.evidence.r.into(),
            c.evidence.energy.into(),
            c.evidence.certificate.map(|x| x.r).into(),
            c.note.clone().into(),
        ]);
        for e in &c.events {
            events.push(vec![c.lambda.into(), format!("{:?}", e.kind).into(), e.r.into(), e.state.u.into(), e.state.v.into()]);
        }
    }
    Ok(CommandOutput { payload: to_value(&results), tables: vec![table, events], diagnostics: Vec::new(), exit_code: 0 })
}

#[derive(Serialize)]
struct RemainderSummary {
    epsilon: f64,
    relative_discrepancy: f64,
    discrepancy: f64,
    printed_terms_relative_discrepancy: f64,
    sup_remainder: f64,
    threshold: f64,
    threshold_breach: Option<f64>,
}

#[derive(Serialize)]
struct AsymptoticsPayload {
    study: EpsilonStudy,
    first_node_radii: Vec<Option<f64>>,
    log_law: LogLawFit,
    remainder: Vec<RemainderSummary>,
    bounds: Vec<RemainderBound>,
}

/// Window of the subtraction/ODE comparison.
const CROSS_CHECK_RADIUS: f64 = 5.0;

pub fn asymptotics(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let p = cfg.params();
    let tol = cfg.tolerances;
    let mut diagnostics = Vec::new();
    let mut eps = cfg.epsilons.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    if eps != cfg.epsilons {
        diagnostics.push("epsilons sorted into decreasing order".to_string());
    }

    let study = convergence_study(&eps, cfg.horizon, &p, &tol)?;
    let first_node_radii =
        eps.par_iter().map(|&e| first_node_radius(e, &p, &tol, 10.0 / e)).collect::<Result<Vec<_>, _>>()?;
    let first = integrate_first_order(&p, &tol, 1e6)?;
    let log_law = log_law_fit(&first, (1e3, 1e6), 400)?;

    let records = eps
        .par_iter()
        .map(|&e| {
            let derived = integrate_remainder(e, &p, &tol, SourceTerms::Derived)?;
            let printed = integrate_remainder(e, &p, &tol, SourceTerms::AsPrinted)?;
            Ok((derived, printed))
        })
        .collect::<Result<Vec<_>, dirac_core::DiracError>>()?;
    let derived: Vec<_> = records.iter().map(|(d, _)| d.clone()).collect();
    let bounds = remainder_bounds(&derived);
    let remainder: Vec<RemainderSummary> = records
        .iter()
        .map(|(d, pr)| {
            let window = CROSS_CHECK_RADIUS.min(1.0 / d.epsilon);
            RemainderSummary {
                epsilon: d.epsilon,
                relative_discrepancy: d.relative_discrepancy(window),
                discrepancy: d.discrepancy,
                printed_terms_relative_discrepancy: pr.relative_discrepancy(window),
                sup_remainder: d.sup_remainder,
                threshold: d.threshold,
                threshold_breach: d.threshold_breach,
            }
        })
        .collect();
    for b in bounds.iter().filter(|b| !b.holds) {
        diagnostics.push(format!(
            "remainder bound with C calibrated at epsilon = {} fails at epsilon = {}: ratio {:.4} > {:.4}",
            eps[0], b.epsilon, b.ratio, b.calibrated_c
        ));
    }

    let mut table = Table::new(
        "asymptotics",
        &[
            "epsilon",
            "sup_error",
            "ratio",
            "node_radius",
            "first_node_radius",
            "relative_discrepancy",
            "sup_remainder",
            "threshold",
            "bound_ratio",
            "bound_holds",
        ],
    );
    for (i, &e) in eps.iter().enumerate() {
        table.push(vec![
            e.into(),
            study.sup_errors[i].into(),
            (if i == 0 { None } else { Some(study.ratios[i - 1]) }).into(),
            study.node_radii[i].into(),
            first_node_radii[i].into(),
            remainder[i].relative_discrepancy.into(),
            remainder[i].sup_remainder.into(),
            remainder[i].threshold.into(),
            bounds[i].ratio.into(),
            bounds[i].holds.into(),
        ]);
    }
    let mut fit = Table::new("log_law", &["key", "value"]);
    for (k, v) in [
        ("c", log_law.c),
        ("relative_residual", log_law.relative_residual),
        ("affine_c", log_law.affine_c),
        ("affine_offset", log_law.affine_offset),
        ("affine_sup", log_law.affine_sup),
        ("h1_sup_abs", log_law.h1_sup_abs),
    ] {
        fit.push(vec![k.into(), v.into()]);
    }
    let payload = AsymptoticsPayload { study, first_node_radii, log_law, remainder, bounds };
    Ok(CommandOutput { payload: to_value(&payload), tables: vec![table, fit], diagnostics, exit_code: 0 })
}

#[derive(Serialize)]
struct PortraitTrajectory {
    lambda: f64,
    verdict: String,
    attraction: Option<AttractionReport>,
    samples: Columns,
}

#[derive(Serialize)]
struct PortraitPayload {
    level_set: LevelSet,
    trajectories: Vec<PortraitTrajectory>,
}

pub fn portrait(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let p = cfg.params();
    let tol = cfg.tolerances;
    let set = level_set(0.0, &p, cfg.resolution)?;
    let trajectories = cfg
        .lambdas
        .par_iter()
        .map(|&l| {
            let c = classify(l, &p, &tol)?;
            let attraction = match c.verdict {
                Verdict::A(_) => Some(attraction_report(l, &p, &tol)?),
                _ => None,
            };
            let t = integrate_from_origin(l, &p, &tol, &[Detector::VSignChange])?;
            Ok(PortraitTrajectory { lambda: l, verdict: verdict_label(&c.verdict), attraction, samples: Columns::of(&t) })
        })
        .collect::<Result<Vec<_>, dirac_core::DiracError>>()?;

    let mut level = Table::new("level_set", &["polyline", "u", "v"]);
    for (i, line) in set.polylines.iter().enumerate() {
        for s in line {
            level.push(vec![i.into(), s.u.into(), s.v.into()]);
        }
    }
    let mut traj = Table::new("trajectories", &["lambda", "r", "u", "v", "H"]);
    for t in &trajectories {
        for i in 0..t.samples.r.len() {
            traj.push(vec![
                t.lambda.into(),
                t.samples.r[i].into(),
                t.samples.u[i].into(),
                t.samples.v[i].into(),
                t.samples.energy[i].into(),
            ]);
        }
    }
    let payload = PortraitPayload { level_set: set, trajectories };
    Ok(CommandOutput { payload: to_value(&payload), tables: vec![level, traj], diagnostics: Vec::new(), exit_code: 0 })
}
