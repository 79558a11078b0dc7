//! Classification of initial data `v(0) = λ` and the bisection for the
//! node-free ground state.
//!
//! `A(k)`: the trajectory enters `{H < −δ}` after exactly `k` sign changes of
//! `v`. `I(k)`: it reaches the origin after `k` sign changes. Every `A(k)` is
//! open, and the supremum of `A(0)` lies in `I(0)`, which is what the bisection
//! exploits.

use serde::Serialize;

use crate::error::{DiracError, Result};
use crate::ode::StepControl;
use crate::params::{Params, State, Tolerances};
use crate::radial::{
    hamiltonian, integrate_backward, integrate_from_origin, origin_start_radius, taylor_start, Detector, Event,
    EventKind, Trajectory,
};

/// `(m − ω)² / (4 (3m − ω))`
pub fn certificate_constant(p: &Params) -> f64 {
    p.gap() * p.gap() / (4.0 * (3.0 * p.m() - p.omega()))
}

/// Evidence that a trajectory can change sign at most once more before it
/// either reaches the origin or enters the negative-energy region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certificate {
    pub r: f64,
    pub energy: f64,
    pub uv_product: f64,
    pub v_squared: f64,
    pub c0: f64,
    /// sign changes of `v` recorded up to `r`
    pub prior_nodes: usize,
}

/// Fires iff `r > 1`, `H < C0/r`, `uv > 0` and `v² < 2(m − ω)`.
pub fn certificate_check(r: f64, s: &State, p: &Params) -> Option<Certificate> {
    if !(r > 1.0) {
        return None;
    }
    let c0 = certificate_constant(p);
    let energy = hamiltonian(s, p);
    let uv_product = s.u * s.v;
    let v_squared = s.v * s.v;
    (energy < c0 / r && uv_product > 0.0 && v_squared < 2.0 * p.gap()).then_some(Certificate {
        r,
        energy,
        uv_product,
        v_squared,
        c0,
        prior_nodes: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    /// entered `{H < −δ}` after `k` nodes
    A(usize),
    /// reached `|u| + |v| < η` with `H ≥ −δ` at the horizon after `k` nodes
    ICandidate(usize),
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evidence {
    /// radius of the deciding event (end of integration otherwise)
    pub r: f64,
    pub energy: f64,
    pub certificate: Option<Certificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySummary {
    pub r_start: f64,
    pub r_end: f64,
    pub steps: usize,
    pub final_state: State,
    pub energy_start: f64,
    pub energy_end: f64,
    pub min_energy: f64,
    pub max_energy_increase: f64,
    pub min_norm: f64,
    pub r_min_norm: f64,
}

impl TrajectorySummary {
    fn of(t: &Trajectory) -> Self {
        let min = t.min_norm_sample();
        TrajectorySummary {
            r_start: t.first().r,
            r_end: t.r_end(),
            steps: t.samples.len() - 1,
            final_state: t.last().state,
            energy_start: t.first().energy,
            energy_end: t.last().energy,
            min_energy: t.energy_range().0,
            max_energy_increase: if t.samples.len() > 1 { t.max_energy_increase() } else { 0.0 },
            min_norm: min.state.l1(),
            r_min_norm: min.r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub lambda: f64,
    pub verdict: Verdict,
    pub node_count: usize,
    pub evidence: Evidence,
    pub summary: Option<TrajectorySummary>,
    pub events: Vec<Event>,
    pub note: Option<String>,
}

impl Classification {
    /// Node seen before the verdict: the datum lies above `sup A(0)`.
    pub fn has_node(&self) -> bool {
        self.node_count >= 1
    }
}

const CLASSIFY_DETECTORS: [Detector; 4] = [
    Detector::VSignChange,
    Detector::NegativeEnergy { terminal: true },
    Detector::NormBelowEta { terminal: false },
    Detector::Certificate,
];

fn classify_run(lambda: f64, p: &Params, tol: &Tolerances) -> Result<(Classification, Option<Trajectory>)> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(DiracError::domain(format!("initial datum must be positive, got {lambda}")));
    }
    tol.validate()?;
    let r0 = origin_start_radius(lambda, tol);
    let s0 = taylor_start(lambda, p, r0)?;
    let h0 = hamiltonian(&s0, p);
    if h0 < -tol.delta {
        // below the separatrix from the start
        let c = Classification {
            lambda,
            verdict: Verdict::A(0),
            node_count: 0,
            evidence: Evidence { r: r0, energy: h0, certificate: None },
            summary: None,
            events: Vec::new(),
            note: Some("negative energy at the start radius".into()),
        };
        return Ok((c, None));
    }

    let traj = match integrate_from_origin(lambda, p, tol, &CLASSIFY_DETECTORS) {
        Ok(t) => t,
        Err(e) => {
            let (r, energy) = match (&e, e.last_state()) {
                (DiracError::Integration { r, .. }, Some(s)) => (*r, hamiltonian(&s, p)),
                _ => (r0, h0),
            };
            let c = Classification {
                lambda,
                verdict: Verdict::Undecided,
                node_count: 0,
                evidence: Evidence { r, energy, certificate: None },
                summary: None,
                events: Vec::new(),
                note: Some(format!("integration failed: {e}")),
            };
            return Ok((c, None));
        }
    };

    let certificate = traj.events.iter().find_map(|e| match &e.payload {
        crate::radial::EventPayload::Certificate(c) => Some(*c),
        _ => None,
    });
    let last = *traj.last();
    let (verdict, node_count, r, energy) = match traj.first_event(EventKind::EnteredNegativeEnergy) {
        Some(ev) => {
            let k = traj.count_before(EventKind::VSignChange, ev.r);
            (Verdict::A(k), k, ev.r, hamiltonian(&ev.state, p))
        }
        None => {
            let k = traj.count(EventKind::VSignChange);
            let verdict = if last.state.l1() < tol.eta && last.energy >= -tol.delta {
                Verdict::ICandidate(k)
            } else {
                Verdict::Undecided
            };
            (verdict, k, last.r, last.energy)
        }
    };
    let c = Classification {
        lambda,
        verdict,
        node_count,
        evidence: Evidence { r, energy, certificate },
        summary: Some(TrajectorySummary::of(&traj)),
        events: traj.events.clone(),
        note: None,
    };
    Ok((c, Some(traj)))
}

/// Integrates the radial system from `v(0) = λ` and classifies the outcome.
pub fn classify(lambda: f64, p: &Params, tol: &Tolerances) -> Result<Classification> {
    classify_run(lambda, p, tol).map(|(c, _)| c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bracket {
    /// largest datum seen with verdict `A(0)`
    pub lo: f64,
    /// first datum seen with a node
    pub hi: f64,
    pub history: Vec<Classification>,
}

/// Doubles `λ` from `sqrt(2(m − ω))` until a node appears.
pub fn bracket_search(p: &Params, tol: &Tolerances) -> Result<Bracket> {
    let start = (2.0 * p.gap()).sqrt();
    let limit = 1e6 * start;
    let mut lambda = start;
    let mut lo = None;
    let mut history = Vec::new();
    while lambda <= limit {
        let c = classify(lambda, p, tol)?;
        let verdict = c.verdict;
        let node = c.has_node();
        history.push(c);
        if node {
            let lo = lo.ok_or(DiracError::BracketFailure { max_lambda: lambda })?;
            return Ok(Bracket { lo, hi: lambda, history });
        }
        if verdict == Verdict::A(0) {
            lo = Some(lambda);
        }
        lambda *= 2.0;
    }
    Err(DiracError::BracketFailure { max_lambda: limit })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Lo,
    Hi,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BisectionStep {
    pub classification: Classification,
    pub side: Side,
    /// horizon used for the deciding run
    pub rmax: f64,
}

/// Decides the bisection side for one datum. Undecided runs without a node
/// are retried once with twice the horizon; if still undecided they count as
/// below the threshold when `H` stayed positive, and mark the run unconverged
/// otherwise.
fn decide(lambda: f64, p: &Params, tol: &Tolerances) -> Result<(BisectionStep, bool)> {
    let c = classify(lambda, p, tol)?;
    if c.has_node() {
        return Ok((BisectionStep { classification: c, side: Side::Hi, rmax: tol.rmax }, true));
    }
    if c.verdict != Verdict::Undecided {
        return Ok((BisectionStep { classification: c, side: Side::Lo, rmax: tol.rmax }, true));
    }
    let wide = tol.with_rmax(2.0 * tol.rmax);
    let c = classify(lambda, p, &wide)?;
    if c.has_node() {
        return Ok((BisectionStep { classification: c, side: Side::Hi, rmax: wide.rmax }, true));
    }
    let positive = c.summary.as_ref().map_or(false, |s| s.min_energy > 0.0);
    let decided = c.verdict != Verdict::Undecided || positive;
    Ok((BisectionStep { classification: c, side: Side::Lo, rmax: wide.rmax }, decided))
}

#[derive(Debug, Clone, Serialize)]
pub struct GroundState {
    pub lambda_star: f64,
    pub lo: f64,
    pub hi: f64,
    pub bracket_width: f64,
    pub iterations: usize,
    /// false if some bisection run could not be decided
    pub converged: bool,
    pub node_count: usize,
    pub decay_slope: f64,
    pub decay_window: (f64, f64),
    /// radius where the forward run is joined to the decaying tail
    pub match_radius: f64,
    /// `|u|` mismatch of the two pieces at the match radius
    pub match_residual: f64,
    pub classification: Classification,
    pub history: Vec<BisectionStep>,
    #[serde(skip)]
    pub profile: Trajectory,
}

/// Bisection on `[lo, hi]` until the width drops below `lambda_tol`, then
/// builds the profile at the best datum and fits its decay rate.
pub fn bisect(b: &Bracket, p: &Params, tol: &Tolerances, lambda_tol: f64) -> Result<GroundState> {
    if !(b.lo <= b.hi) || !(lambda_tol > 0.0) {
        return Err(DiracError::domain(format!("invalid bracket [{}, {}] or width {lambda_tol}", b.lo, b.hi)));
    }
    let (mut lo, mut hi) = (b.lo, b.hi);
    let mut history = Vec::new();
    let mut converged = true;
    while hi - lo >= lambda_tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (step, decided) = decide(mid, p, tol)?;
        converged &= decided;
        match step.side {
            Side::Lo => lo = mid,
            Side::Hi => hi = mid,
        }
        history.push(step);
    }

    // among the endpoints and the midpoint keep the run reaching closest to the origin
    let mut best: Option<(Classification, Trajectory)> = None;
    let mid = 0.5 * (lo + hi);
    for lambda in [mid, lo, hi] {
        if let (c, Some(t)) = classify_run(lambda, p, tol)? {
            let n = t.min_norm_sample().state.l1();
            if best.as_ref().map_or(true, |(_, bt)| n < bt.min_norm_sample().state.l1()) {
                best = Some((c, t));
            }
        }
    }
    let (classification, forward) =
        best.ok_or_else(|| DiracError::domain("no usable profile run near the bisection limit"))?;
    let (profile, match_radius, match_residual) = match_tail(&forward, p, tol)?;
    let node_count = profile.count(EventKind::VSignChange);
    let decay_window = tail_window(&profile, tol.eta, 1e-2)?;
    let decay_slope = decay_fit(&profile, decay_window)?;
    Ok(GroundState {
        lambda_star: classification.lambda,
        lo,
        hi,
        bracket_width: hi - lo,
        iterations: history.len(),
        converged,
        node_count,
        decay_slope,
        decay_window,
        match_radius,
        match_residual,
        classification,
        history,
        profile,
    })
}

/// Replaces the part of the forward run beyond its closest approach to the
/// origin by the decaying solution, integrated backward from the horizon.
///
/// The linearization at the origin has rates `±κ`, `κ = sqrt(m² − ω²)`, so
/// rounding errors of the forward run grow like `e^{κ r}` and eventually
/// dominate. The tail starts along the decaying direction
/// `v ∝ K0(κ r)`, `u ∝ κ K1(κ r)/(m + ω)`, is integrated back to the match
/// radius and scaled so that `v` agrees there.
fn match_tail(forward: &Trajectory, p: &Params, tol: &Tolerances) -> Result<(Trajectory, f64, f64)> {
    let min = *forward.min_norm_sample();
    let n_min = min.state.l1();
    let cut_index = forward
        .samples
        .iter()
        .rposition(|s| s.r < min.r && s.state.l1() >= 1e3 * n_min)
        .unwrap_or(0);
    let matched = forward.samples[cut_index];
    let r_match = matched.r;
    let kappa = p.linear_decay_rate();
    let r_far = tol.rmax.min(r_match + 600.0 / kappa);
    if r_far <= r_match || matched.state.v == 0.0 {
        let mut t = forward.clone();
        t.truncate(r_match.max(forward.first().r));
        return Ok((t, r_match, 0.0));
    }

    let x = kappa * r_far;
    let ratio = kappa / p.sum() * (1.0 + 3.0 / (8.0 * x)) / (1.0 - 1.0 / (8.0 * x));
    let amplitude = matched.state.l1() * (-kappa * (r_far - r_match)).exp() * (r_match / r_far).sqrt();
    let sign = matched.state.v.signum();
    let mut scale = amplitude / (1.0 + ratio);
    let mut tail = None;
    for _ in 0..8 {
        let far = State::new(sign * scale * ratio, sign * scale);
        let ctl = StepControl::new(tol.rel, tol.rel * far.l1().max(f64::MIN_POSITIVE)).with_h_max(crate::radial::RADIAL_H_MAX);
        let t = integrate_backward(p, r_far, far, r_match, &ctl)?;
        let v_here = t.first().state.v;
        let factor = matched.state.v / v_here;
        let done = (factor - 1.0).abs() < 1e-12;
        tail = Some(t);
        if done {
            break;
        }
        scale *= factor;
    }
    let tail = tail.expect("at least one backward run");
    let residual = (tail.first().state.u - matched.state.u).abs();
    let mut profile = forward.clone();
    profile.truncate(r_match);
    profile.append(tail);
    Ok((profile, r_match, residual))
}

/// Last contiguous stretch where `lo < |u| + |v| < hi`, cut to its final
/// decade in `r`.
pub fn tail_window(t: &Trajectory, lo: f64, hi: f64) -> Result<(f64, f64)> {
    let inside = |n: f64| n > lo && n < hi;
    let end = t
        .samples
        .iter()
        .rposition(|s| inside(s.state.l1()))
        .ok_or_else(|| DiracError::domain("trajectory never enters the decay band"))?;
    let mut start = end;
    while start > 0 && inside(t.samples[start - 1].state.l1()) {
        start -= 1;
    }
    let rb = t.samples[end].r;
    let ra = t.samples[start].r.max(rb / 10.0);
    if !(ra < rb) {
        return Err(DiracError::domain("decay band is a single point"));
    }
    Ok((ra, rb))
}

/// Least-squares slope of `ln(|u| + |v|)` against `r` over the samples in `window`.
pub fn decay_fit(t: &Trajectory, window: (f64, f64)) -> Result<f64> {
    let (ra, rb) = window;
    if !(ra < rb) {
        return Err(DiracError::domain(format!("empty window ({ra}, {rb})")));
    }
    let pts: Vec<(f64, f64)> = t
        .samples
        .iter()
        .filter(|s| s.r >= ra && s.r <= rb)
        .map(|s| (s.r, s.state.l1()))
        .collect();
    if pts.len() < 2 {
        return Err(DiracError::domain("fewer than two samples in the window"));
    }
    if let Some(&(r, _)) = pts.iter().find(|(_, n)| !(*n > 0.0)) {
        return Err(DiracError::domain(format!("non-positive |u| + |v| at r = {r}")));
    }
    let len = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / len;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / len;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, n) in &pts {
        sxy += (x - mx) * (n.ln() - my);
        sxx += (x - mx) * (x - mx);
    }
    Ok(sxy / sxx)
}

/// Convenience: bracket, bisect with `lambda_tol`.
pub fn ground_state(p: &Params, tol: &Tolerances, lambda_tol: f64) -> Result<GroundState> {
    let b = bracket_search(p, tol)?;
    bisect(&b, p, tol, lambda_tol)
}
