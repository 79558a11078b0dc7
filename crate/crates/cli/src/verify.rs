//! The invariant suite behind `verify`. Every check reports a measured value
//! against its bound; an error raised while computing a check fails it.

use dirac_core::asymptotics::{
    bubble, bubble_derivative, bubble_residual_of, convergence_study, integrate_first_order, integrate_remainder,
    integrate_rescaled, log_grid, log_law_fit, SourceTerms,
};
use dirac_core::phaseflow::{attraction_report, level_set, stability_ladder};
use dirac_core::radial::{
    hamiltonian, hamiltonian_rate, integrate, integrate_from_origin, origin_start_radius, r2h_rate, taylor_start,
};
use dirac_core::shooting::{bisect, bracket_search, classify, GroundState, Side, Verdict};
use dirac_core::{EventKind, Params, Result, State, System, Tolerances};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Fault, RunConfig};
use crate::output::Table;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub bound: f64,
    pub note: String,
}

/// Measured value, bound, and whether it holds.
struct Outcome {
    value: f64,
    bound: f64,
    passed: bool,
    note: String,
}

fn below(value: f64, bound: f64) -> Outcome {
    Outcome { value, bound, passed: value < bound, note: String::new() }
}

fn at_most(value: f64, bound: f64) -> Outcome {
    Outcome { value, bound, passed: value <= bound, note: String::new() }
}

impl Outcome {
    fn note(mut self, n: impl Into<String>) -> Self {
        self.note = n.into();
        self
    }
}

struct Ctx {
    p: Params,
    tol: Tolerances,
    cfg: RunConfig,
}

type CheckFn = fn(&Ctx) -> Result<Outcome>;

const LAMBDAS: [f64; 6] = [0.25, 0.5, 1.0, 1.8, 3.0, 5.0];

fn capped(tol: &Tolerances, rmax: f64) -> Tolerances {
    tol.with_rmax(tol.rmax.min(rmax))
}

fn energy_monotone(c: &Ctx) -> Result<Outcome> {
    let tol = capped(&c.tol, 60.0);
    let mut worst: f64 = f64::NEG_INFINITY;
    for l in LAMBDAS {
        let t = integrate_from_origin(l, &c.p, &tol, &[])?;
        for w in t.samples.windows(2) {
            worst = worst.max((w[1].energy - w[0].energy) / (1.0 + w[0].energy.abs()));
        }
    }
    Ok(at_most(worst, 10.0 * c.tol.rel).note("max relative step increase of H"))
}

fn confinement(c: &Ctx) -> Result<Outcome> {
    let tol = capped(&c.tol, 60.0);
    let mut worst: f64 = f64::NEG_INFINITY;
    for l in LAMBDAS {
        let t = integrate_from_origin(l, &c.p, &tol, &[])?;
        let h0 = hamiltonian(&State::new(0.0, l), &c.p);
        worst = worst.max(t.samples.iter().map(|s| s.energy - h0).fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(at_most(worst, c.tol.abs).note("max H(r) - H(0, lambda)"))
}

fn symmetry(c: &Ctx) -> Result<Outcome> {
    let tol = capped(&c.tol, 30.0);
    let mut worst: f64 = 0.0;
    for l in [0.5, 1.8, 3.0] {
        let r0 = origin_start_radius(l, &tol);
        let s0 = taylor_start(l, &c.p, r0)?;
        let a = integrate(System::Radial, (r0, s0), &c.p, &tol, &[])?;
        let b = integrate(System::Radial, (r0, -s0), &c.p, &tol, &[])?;
        for (x, y) in a.samples.iter().zip(&b.samples) {
            let d = (x.state.u + y.state.u).abs() + (x.state.v + y.state.v).abs();
            worst = worst.max(d / (1.0 + x.state.l1()));
        }
        if a.samples.len() != b.samples.len() {
            return Ok(Outcome { value: f64::NAN, bound: 0.0, passed: false, note: "step sequences differ".into() });
        }
    }
    Ok(at_most(worst, 1e-12))
}

fn energy_rates(c: &Ctx) -> Result<Outcome> {
    let tol = capped(&c.tol, 20.0);
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for l in [0.5, 1.8, 3.0] {
        let t = integrate_from_origin(l, &c.p, &tol, &[])?;
        let at = |x: f64| t.state_at(x).expect("inside the run");
        for i in 1..20 {
            let r = 0.5 + (t.r_end() - 1.0) * i as f64 / 20.0;
            let fd = (hamiltonian(&at(r + h), &c.p) - hamiltonian(&at(r - h), &c.p)) / (2.0 * h);
            let rate = hamiltonian_rate(r, &at(r), &c.p)?;
            worst = worst.max((fd - rate).abs() / (1.0 + rate.abs()));
            let r2h = |x: f64| x * x * hamiltonian(&at(x), &c.p);
            let fd2 = (r2h(r + h) - r2h(r - h)) / (2.0 * h) / r;
            let rate2 = r2h_rate(r, &at(r), &c.p)?;
            worst = worst.max((fd2 - rate2).abs() / (1.0 + rate2.abs()));
        }
    }
    Ok(below(worst, 1e-4).note("central differences with step 1e-3"))
}

fn autonomous_conservation(c: &Ctx) -> Result<Outcome> {
    let tol = c.tol.with_rmax(50.0);
    let mut worst: f64 = 0.0;
    for (u, v) in [(0.0, 1.0), (0.3, -0.8), (-1.2, 0.4), (0.9, 0.9)] {
        let s = State::new(u, v);
        let t = integrate(System::Autonomous, (0.0, s), &c.p, &tol, &[])?;
        let h0 = hamiltonian(&s, &c.p);
        worst = worst.max(t.samples.iter().map(|x| (x.energy - h0).abs()).fold(0.0, f64::max));
    }
    Ok(below(worst, 1e3 * c.tol.abs).note("max |H - H(start)| on [0, 50]"))
}

fn taylor_consistency(c: &Ctx) -> Result<Outcome> {
    let r0 = 1e-3;
    let tol = c.tol.with_rel_abs(1e-13, 1e-16).with_rmax(r0);
    let bound = r0.powi(3);
    let mut worst: f64 = 0.0;
    for l in [0.5, 1.8, 3.0] {
        let half = taylor_start(l, &c.p, r0 / 2.0)?;
        let t = integrate(System::Radial, (r0 / 2.0, half), &c.p, &tol, &[])?;
        let full = taylor_start(l, &c.p, r0)?;
        let scale = 10.0 * f64::max(l.powi(7), 1.0) * (1.0 + c.p.m()).powi(2);
        let d = t.last().state.dist(&full) / scale;
        worst = worst.max(d);
    }
    Ok(below(worst, bound).note("distance / (10 max(1, lambda^7) (1 + m)^2) against r0^3"))
}

fn a0_interval(c: &Ctx) -> Result<Outcome> {
    let edge = (2.0 * c.p.gap()).sqrt();
    let mut misses = 0;
    for k in 1..=4 {
        if classify(edge * k as f64 / 4.0, &c.p, &c.tol)?.verdict != Verdict::A(0) {
            misses += 1;
        }
    }
    Ok(at_most(misses as f64, 0.0).note("points of (0, sqrt(2(m - omega))] not classified A(0)"))
}

fn a0_bounded(c: &Ctx) -> Result<Outcome> {
    let mut fewest = usize::MAX;
    for l in [10.0, 100.0] {
        fewest = fewest.min(classify(l, &c.p, &c.tol)?.node_count);
    }
    Ok(Outcome { value: fewest as f64, bound: 1.0, passed: fewest >= 1, note: "fewest nodes at lambda = 10, 100".into() })
}

fn verdict_evidence(c: &Ctx) -> Result<Outcome> {
    let mut bad = 0;
    for l in [0.5, 1.0, 2.0, 2.5, 3.0, 5.0, 10.0] {
        let cl = classify(l, &c.p, &c.tol)?;
        if let Verdict::A(k) = cl.verdict {
            let before = cl.events.iter().filter(|e| e.kind == EventKind::VSignChange && e.r < cl.evidence.r).count();
            if !(cl.evidence.energy < -c.tol.delta) || before != k {
                bad += 1;
            }
        }
    }
    Ok(at_most(bad as f64, 0.0).note("A(k) verdicts without H < -delta or with a node count other than k"))
}

fn certificate_soundness(c: &Ctx) -> Result<Outcome> {
    let mut bad = 0;
    for l in [1.5, 1.8, 1.9, 2.0, 2.5, 3.0, 5.0, 10.0] {
        let cl = classify(l, &c.p, &c.tol)?;
        if let Some(cert) = cl.evidence.certificate {
            let total = cl.events.iter().filter(|e| e.kind == EventKind::VSignChange).count();
            let entered = matches!(cl.verdict, Verdict::A(_));
            if !(entered || total <= cert.prior_nodes + 1) {
                bad += 1;
            }
        }
    }
    Ok(at_most(bad as f64, 0.0).note("certificates followed by more than one further node without entering H < -delta"))
}

fn ground_state(c: &Ctx) -> Result<GroundState> {
    let b = bracket_search(&c.p, &c.tol)?;
    bisect(&b, &c.p, &c.tol, c.cfg.lambda_tol)
}

fn gs_found(gs: &GroundState) -> Outcome {
    let ok = gs.converged && gs.node_count == 0;
    Outcome {
        value: gs.bracket_width,
        bound: 1e-10,
        passed: ok && gs.bracket_width < 1e-10,
        note: format!("lambda* = {}, nodes = {}, converged = {}", gs.lambda_star, gs.node_count, gs.converged),
    }
}

fn gs_sides(gs: &GroundState) -> Outcome {
    let bad = gs
        .history
        .iter()
        .filter(|s| match s.side {
            Side::Hi => s.classification.node_count == 0,
            Side::Lo => s.classification.node_count != 0,
        })
        .count();
    at_most(bad as f64, 0.0).note("bisection steps on the wrong side")
}

fn gs_residual(gs: &GroundState, c: &Ctx) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for s in &gs.profile.samples {
        let f = dirac_core::radial::rhs_radial(s.r, &s.state, &c.p)?;
        let res = (f.u - s.derivative.u).abs() + (f.v - s.derivative.v).abs();
        worst = worst.max(res / (1.0 + s.state.l1()));
    }
    Ok(at_most(worst, 1e3 * c.tol.rel))
}

fn gs_decay(gs: &GroundState, c: &Ctx) -> Result<Outcome> {
    let (ra, rb) = gs.decay_window;
    let rate = 0.5 * c.p.gap();
    let mut worst: f64 = 0.0;
    for s in gs.profile.samples.iter().filter(|s| s.r >= ra && s.r <= rb) {
        let half = gs.profile.state_at(0.5 * s.r).map_or(f64::NAN, |x| x.l1());
        worst = worst.max(s.state.l1() / (half * (-rate * 0.5 * s.r).exp()));
    }
    Ok(at_most(worst, 1.1).note(format!("ratio over [{ra:.3}, {rb:.3}]")))
}

fn bubble_check(c: &Ctx) -> Result<Outcome> {
    let grid = log_grid(1e-3, 1e6, 500);
    let corrupt = c.cfg.fault == Some(Fault::CorruptBubble);
    let value = bubble_residual_of(&grid, |r| {
        let (u, v) = bubble(r);
        let v = if corrupt { v * 1.125 } else { v };
        ((u, v), bubble_derivative(r))
    });
    let out = below(value, 1e-12);
    Ok(if corrupt { out.note("corrupted bubble injected") } else { out })
}

fn rescaling_commutation(c: &Ctx) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for eps in [0.5, 0.1] {
        let (orig, resc) = commutation_runs(eps, &c.p, &c.tol)?;
        worst = worst.max(commutation_error(eps, &orig, &resc));
    }
    Ok(below(worst, 1e3 * c.tol.rel).note("max |eps u(eps^2 r) - U(r)| over r in [0, 5]"))
}

/// Original run from `1/eps` and rescaled run from `1`, both covering `r ≤ 5` after rescaling.
pub fn commutation_runs(
    eps: f64,
    p: &Params,
    tol: &Tolerances,
) -> Result<(dirac_core::Trajectory, dirac_core::Trajectory)> {
    let orig = integrate_from_origin(1.0 / eps, p, &tol.with_rmax(5.0 * eps * eps * 1.01), &[])?;
    let resc = integrate_rescaled(eps, p, tol, 5.0, &[])?;
    Ok((orig, resc))
}

pub fn commutation_error(eps: f64, orig: &dirac_core::Trajectory, resc: &dirac_core::Trajectory) -> f64 {
    let start = orig.first().r / (eps * eps);
    let mut worst: f64 = 0.0;
    for i in 0..=1000 {
        let r = start.max(resc.first().r).max(5.0 * i as f64 / 1000.0);
        if let (Some(a), Some(b)) = (orig.state_at(eps * eps * r), resc.state_at(r)) {
            worst = worst.max((eps * a.u - b.u).abs().max((eps * a.v - b.v).abs()));
        } else {
            return f64::NAN;
        }
    }
    worst
}

fn rescaled_energy(c: &Ctx) -> Result<Outcome> {
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut start: f64 = f64::NEG_INFINITY;
    for eps in [0.5, 0.2, 0.1] {
        let t = integrate_rescaled(eps, &c.p, &c.tol, 20.0, &[])?;
        start = start.max(t.first().energy);
        for w in t.samples.windows(2) {
            worst = worst.max((w[1].energy - w[0].energy) / (1.0 + w[0].energy.abs()));
        }
    }
    let mut out = at_most(worst, 10.0 * c.tol.rel).note(format!("largest starting energy {start}"));
    out.passed &= start <= 1.0;
    Ok(out)
}

fn log_law(c: &Ctx) -> Result<Outcome> {
    let fo = integrate_first_order(&c.p, &c.tol, 1e6)?;
    let fit = log_law_fit(&fo, (1e3, 1e6), 400)?;
    let mut out = below(fit.affine_sup, 0.1).note(format!(
        "k1 ~ -{:.4} ln r + {:.4}; through-origin c = {:.4}",
        fit.affine_c, fit.affine_offset, fit.c
    ));
    out.passed &= fit.c > 0.0 && fit.affine_c > 0.0;
    Ok(out)
}

fn remainder_cross_check(c: &Ctx) -> Result<Outcome> {
    let rec = integrate_remainder(0.2, &c.p, &c.tol, SourceTerms::Derived)?;
    Ok(below(rec.relative_discrepancy(5.0), 1e-4).note("subtraction against the remainder system at eps = 0.2"))
}

fn threshold_respect(c: &Ctx) -> Result<Outcome> {
    let eps: Vec<f64> = c.cfg.epsilons.iter().copied().filter(|&e| e <= 0.2).collect();
    let recs = eps
        .par_iter()
        .map(|&e| integrate_remainder(e, &c.p, &c.tol, SourceTerms::Derived))
        .collect::<Result<Vec<_>>>()?;
    let worst = recs.iter().map(|r| r.sup_remainder / r.threshold).fold(0.0, f64::max);
    let breaches = recs.iter().filter(|r| r.threshold_breach.is_some()).count();
    let mut out = below(worst, 1.0).note("max sup(|h2| + |k2|) / eps^-1.5");
    out.passed &= breaches == 0;
    Ok(out)
}

fn convergence(c: &Ctx) -> Result<Outcome> {
    let mut eps = c.cfg.epsilons.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    let study = convergence_study(&eps, c.cfg.horizon, &c.p, &c.tol)?;
    let worst = study.ratios.iter().map(|r| (r - 4.0).abs()).fold(0.0, f64::max);
    Ok(at_most(worst, 1.0).note(format!("ratios {:?}", study.ratios)))
}

fn level_set_residual(c: &Ctx) -> Result<Outcome> {
    let min = -0.25 * c.p.gap() * c.p.gap();
    let mut worst: f64 = 0.0;
    for level in [0.5 * min, 0.0, 0.5] {
        let set = level_set(level, &c.p, c.cfg.resolution)?;
        worst = worst.max(set.max_residual(&c.p));
    }
    Ok(below(worst, 1e-9))
}

fn attraction(c: &Ctx) -> Result<Outcome> {
    let min = -0.25 * c.p.gap() * c.p.gap();
    let mut worst_increase: f64 = f64::NEG_INFINITY;
    let mut inside = true;
    let mut count = 0;
    for l in [0.5, 1.0, 2.5, 3.0] {
        if !matches!(classify(l, &c.p, &c.tol)?.verdict, Verdict::A(_)) {
            continue;
        }
        let rep = attraction_report(l, &c.p, &c.tol)?;
        count += 1;
        worst_increase = worst_increase.max(rep.max_energy_increase / (1.0 + rep.terminal_energy.abs()));
        inside &= rep.terminal_energy >= min - c.tol.abs && rep.terminal_energy <= -c.tol.delta;
    }
    let mut out = at_most(worst_increase, 10.0 * c.tol.rel).note(format!("{count} attracted runs"));
    out.passed &= inside && count > 0;
    Ok(out)
}

fn stability(c: &Ctx) -> Result<Outcome> {
    let ladder = stability_ladder(&[1e3, 2e3, 4e3, 8e3], State::new(0.0, 1.0), 10.0, &c.p, &c.tol)?;
    let worst = ladder.windows(2).map(|w| w[1].1 / w[0].1).fold(0.0, f64::max);
    Ok(at_most(worst, 1.1).note("largest dev(2 rho) / dev(rho)"))
}

const SUITE: [(&str, &str, CheckFn); 18] = [
    ("radial-core", "energy_monotone", energy_monotone),
    ("radial-core", "confinement", confinement),
    ("radial-core", "sign_symmetry", symmetry),
    ("radial-core", "energy_rates", energy_rates),
    ("radial-core", "autonomous_conservation", autonomous_conservation),
    ("radial-core", "taylor_consistency", taylor_consistency),
    ("shooting", "a0_interval", a0_interval),
    ("shooting", "a0_bounded", a0_bounded),
    ("shooting", "verdict_evidence", verdict_evidence),
    ("shooting", "certificate_soundness", certificate_soundness),
    ("asymptotics", "bubble_residual", bubble_check),
    ("asymptotics", "rescaling_commutation", rescaling_commutation),
    ("asymptotics", "rescaled_energy", rescaled_energy),
    ("asymptotics", "log_law", log_law),
    ("asymptotics", "remainder_cross_check", remainder_cross_check),
    ("asymptotics", "threshold_respect", threshold_respect),
    ("asymptotics", "convergence_ratios", convergence),
    ("phaseflow", "level_set_residual", level_set_residual),
];

const PHASEFLOW_TAIL: [(&str, &str, CheckFn); 2] =
    [("phaseflow", "attraction_invariant", attraction), ("phaseflow", "stability_monotone", stability)];

fn finish(module: &'static str, name: &'static str, r: Result<Outcome>) -> Check {
    match r {
        Ok(o) => Check { module, name, passed: o.passed && !o.value.is_nan(), value: o.value, bound: o.bound, note: o.note },
        Err(e) => Check { module, name, passed: false, value: f64::NAN, bound: f64::NAN, note: format!("error: {e}") },
    }
}

/// Runs the whole suite; the order of the result is fixed.
pub fn run_suite(cfg: &RunConfig) -> Vec<Check> {
    let ctx = Ctx { p: cfg.params(), tol: cfg.tolerances, cfg: cfg.clone() };
    let table: Vec<(&str, &str, CheckFn)> = SUITE.iter().chain(PHASEFLOW_TAIL.iter()).copied().collect();
    let mut checks: Vec<Check> = table.par_iter().map(|&(m, n, f)| finish(m, n, f(&ctx))).collect();

    let gs_checks: [(&str, fn(&GroundState, &Ctx) -> Result<Outcome>); 4] = [
        ("ground_state", |gs, _| Ok(gs_found(gs))),
        ("bisection_sides", |gs, _| Ok(gs_sides(gs))),
        ("profile_residual", gs_residual),
        ("decay_bound", gs_decay),
    ];
    let gs = ground_state(&ctx);
    let at = checks.iter().position(|c| c.module == "asymptotics").unwrap_or(checks.len());
    let shooting: Vec<Check> = gs_checks
        .iter()
        .map(|&(name, f)| match &gs {
            Ok(g) => finish("shooting", name, f(g, &ctx)),
            Err(e) => finish("shooting", name, Err(e.clone())),
        })
        .collect();
    checks.splice(at..at, shooting);
    checks
}

pub fn table(checks: &[Check]) -> Table {
    let mut t = Table::new("verify", &["module", "check", "passed", "value", "bound", "note"]);
    for c in checks {
        t.push(vec![c.module.into(), c.name.into(), c.passed.into(), c.value.into(), c.bound.into(), c.note.clone().into()]);
    }
    t
}
