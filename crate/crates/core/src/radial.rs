//! Radial system, its autonomous companion, the energy `H`, and trajectories
//! with event logs.
//!
//! With `n = u² + v²` the radial system reads
//!
//! ```text
//! u' + u/r = n v − (m − ω) v
//! v'       = −n u − (m + ω) u
//! ```
//!
//! and dropping `u/r` gives a Hamiltonian flow for
//! `H = n²/4 + (m/2)(u² − v²) + (ω/2) n`.

use serde::Serialize;

use crate::error::{DiracError, Result};
use crate::ode::{self, EventSpec, OdeSystem, Outcome, Reversed, Segment, StepControl};
use crate::params::{Params, State, Tolerances};
use crate::shooting::{certificate_check, Certificate};

/// Largest step used for radial flows. Keeps node counting unambiguous.
pub const RADIAL_H_MAX: f64 = 0.5;

fn check_radius(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(DiracError::domain(format!("radius must be positive, got {r}")))
    }
}

fn require_s0(p: &Params, what: &str) -> Result<()> {
    if p.angular_index() == 0 {
        Ok(())
    } else {
        Err(DiracError::domain(format!("{what} is only defined for angular index 0")))
    }
}

fn field(r_term: Option<f64>, s: &State, p: &Params) -> State {
    let n = s.norm_sq();
    let mut du = n * s.v - p.gap() * s.v;
    let mut dv = -n * s.u - p.sum() * s.u;
    if let Some(inv_r) = r_term {
        let k = p.angular_index() as f64;
        du -= (1.0 + k) * s.u * inv_r;
        dv += k * s.v * inv_r;
    }
    State::new(du, dv)
}

/// `(u', v')` of the radial system at `r > 0`.
pub fn rhs_radial(r: f64, s: &State, p: &Params) -> Result<State> {
    check_radius(r)?;
    Ok(field(Some(1.0 / r), s, p))
}

/// `(u', v')` of the autonomous (Hamiltonian) system.
pub fn rhs_autonomous(s: &State, p: &Params) -> State {
    field(None, s, p)
}

pub fn hamiltonian(s: &State, p: &Params) -> f64 {
    let n = s.norm_sq();
    0.25 * n * n + 0.5 * p.m() * (s.u * s.u - s.v * s.v) + 0.5 * p.omega() * n
}

/// `dH/dr` along the radial flow: `−(u²/r)(m + ω + u² + v²) ≤ 0`.
pub fn hamiltonian_rate(r: f64, s: &State, p: &Params) -> Result<f64> {
    check_radius(r)?;
    require_s0(p, "hamiltonian_rate")?;
    Ok(-(s.u * s.u / r) * (p.sum() + s.norm_sq()))
}

/// `(1/r) d(r² H)/dr = −u⁴/2 + (v²/2)(v² − 2(m − ω))` along the radial flow.
pub fn r2h_rate(r: f64, s: &State, p: &Params) -> Result<f64> {
    check_radius(r)?;
    require_s0(p, "r2h_rate")?;
    let u2 = s.u * s.u;
    let v2 = s.v * s.v;
    Ok(-0.5 * u2 * u2 + 0.5 * v2 * (v2 - 2.0 * p.gap()))
}

/// Equilibria of the autonomous flow with their energies:
/// `(0, 0)` and `(0, ±sqrt(m − ω))`.
pub fn equilibria(p: &Params) -> Vec<(State, f64)> {
    let vs = p.gap().sqrt();
    [State::new(0.0, 0.0), State::new(0.0, vs), State::new(0.0, -vs)]
        .into_iter()
        .map(|s| (s, hamiltonian(&s, p)))
        .collect()
}

/// Second-order series of the solution with `u(0) = 0, v(0) = λ`, matched
/// term by term in the integral form of the radial system.
pub fn taylor_start(lambda: f64, p: &Params, r0: f64) -> Result<State> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(DiracError::domain(format!("initial datum must be positive, got {lambda}")));
    }
    check_radius(r0)?;
    require_s0(p, "taylor_start")?;
    Ok(series_start(lambda, p, r0))
}

pub(crate) fn series_start(lambda: f64, p: &Params, r0: f64) -> State {
    let c = lambda * (lambda * lambda - p.gap());
    State::new(0.5 * r0 * c, lambda - 0.25 * r0 * r0 * c * (lambda * lambda + p.sum()))
}

/// Start radius for shooting from `v(0) = λ`. The solution varies on the scale
/// `1/λ²`, so the base radius shrinks for large data.
pub fn origin_start_radius(lambda: f64, tol: &Tolerances) -> f64 {
    tol.r0 / (lambda * lambda).max(1.0)
}

/// Which right-hand side to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum System {
    Radial,
    Autonomous,
    /// `u' + u/(r + rho) = …`, the radial system seen from radius `rho`.
    Shifted { rho: f64 },
}

pub(crate) struct Flow {
    pub system: System,
    pub params: Params,
}

impl OdeSystem<2> for Flow {
    fn rhs(&self, r: f64, y: &[f64; 2]) -> [f64; 2] {
        let s = State::from_array(*y);
        let inv = match self.system {
            System::Radial => Some(1.0 / r),
            System::Autonomous => None,
            System::Shifted { rho } => Some(1.0 / (r + rho)),
        };
        field(inv, &s, &self.params).to_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Detector {
    VSignChange,
    USignChange,
    NegativeEnergy { terminal: bool },
    NormBelowEta { terminal: bool },
    /// Evaluates the node-control certificate at every accepted step with `r > 1`.
    Certificate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    VSignChange,
    USignChange,
    EnteredNegativeEnergy,
    NormBelowEta,
    CertificateFired,
    RMaxReached,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EventPayload {
    /// accepted step that bracketed the root
    Bracket { step_start: f64, step_end: f64 },
    Energy { energy: f64 },
    Norm { norm: f64 },
    Certificate(Certificate),
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub kind: EventKind,
    pub r: f64,
    pub state: State,
    pub payload: EventPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub r: f64,
    pub state: State,
    pub energy: f64,
    pub derivative: State,
}

#[derive(Debug, Clone)]
struct Piece {
    r_lo: f64,
    r_hi: f64,
    seg: Segment<2>,
    /// set for pieces integrated backward: the piece variable is `mirror − r`
    mirror: Option<f64>,
}

impl Piece {
    fn eval(&self, r: f64) -> State {
        let x = self.mirror.map_or(r, |e| e - r);
        State::from_array(self.seg.eval(x))
    }
}

/// Recorded integration path: accepted steps, continuous extension and events.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    #[serde(skip)]
    pieces: Vec<Piece>,
}

impl Trajectory {
    /// Trajectory without continuous extension, e.g. synthetic data for fits.
    pub fn from_samples(samples: Vec<Sample>) -> Self {
        Trajectory { samples, events: Vec::new(), pieces: Vec::new() }
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory is never empty")
    }

    pub fn r_end(&self) -> f64 {
        self.last().r
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn first_event(&self, kind: EventKind) -> Option<&Event> {
        self.events.iter().find(|e| e.kind == kind)
    }

    pub fn count_before(&self, kind: EventKind, r: f64) -> usize {
        self.events.iter().filter(|e| e.kind == kind && e.r < r).count()
    }

    /// State at any radius covered by the trajectory.
    pub fn state_at(&self, r: f64) -> Option<State> {
        if self.pieces.is_empty() {
            return self.samples.iter().find(|s| s.r == r).map(|s| s.state);
        }
        if r == self.samples[0].r {
            return Some(self.samples[0].state);
        }
        let idx = self.pieces.partition_point(|p| p.r_hi < r);
        let piece = self.pieces.get(idx)?;
        (r >= piece.r_lo).then(|| piece.eval(r))
    }

    /// Sample with the smallest `|u| + |v|`.
    pub fn min_norm_sample(&self) -> &Sample {
        self.samples
            .iter()
            .min_by(|a, b| a.state.l1().total_cmp(&b.state.l1()))
            .expect("trajectory is never empty")
    }

    pub fn energy_range(&self) -> (f64, f64) {
        self.samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.energy), hi.max(s.energy)))
    }

    /// Largest increase of `H` between consecutive samples.
    pub fn max_energy_increase(&self) -> f64 {
        self.samples.windows(2).map(|w| w[1].energy - w[0].energy).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Keeps samples, pieces and events with `r ≤ r_cut`.
    pub(crate) fn truncate(&mut self, r_cut: f64) {
        self.samples.retain(|s| s.r <= r_cut);
        self.pieces.retain(|p| p.r_lo < r_cut);
        if let Some(last) = self.pieces.last_mut() {
            last.r_hi = last.r_hi.min(r_cut);
        }
        self.events.retain(|e| e.r <= r_cut);
    }

    /// Appends a trajectory that starts where this one ends.
    pub(crate) fn append(&mut self, mut other: Trajectory) {
        let end = self.r_end();
        other.samples.retain(|s| s.r > end);
        self.samples.extend(other.samples);
        self.pieces.extend(other.pieces);
        self.events.extend(other.events.into_iter().filter(|e| e.r > end));
    }
}

fn build_events<'a>(detectors: &[Detector], p: &'a Params, tol: &'a Tolerances) -> (Vec<EventSpec<'a, 2>>, Vec<EventKind>) {
    let mut specs = Vec::new();
    let mut kinds = Vec::new();
    for d in detectors {
        match *d {
            Detector::VSignChange => {
                specs.push(EventSpec::new(false, |_r, y: &[f64; 2]| y[1]));
                kinds.push(EventKind::VSignChange);
            }
            Detector::USignChange => {
                specs.push(EventSpec::new(false, |_r, y: &[f64; 2]| y[0]));
                kinds.push(EventKind::USignChange);
            }
            Detector::NegativeEnergy { terminal } => {
                let delta = tol.delta;
                specs.push(EventSpec::new(terminal, move |_r, y: &[f64; 2]| {
                    hamiltonian(&State::from_array(*y), p) + delta
                }));
                kinds.push(EventKind::EnteredNegativeEnergy);
            }
            Detector::NormBelowEta { terminal } => {
                let eta = tol.eta;
                specs.push(EventSpec::new(terminal, move |_r, y: &[f64; 2]| y[0].abs() + y[1].abs() - eta));
                kinds.push(EventKind::NormBelowEta);
            }
            Detector::Certificate => {}
        }
    }
    (specs, kinds)
}

/// Integrates `system` from `start` to `r_end` with the given step control.
pub(crate) fn integrate_span(
    system: System,
    p: &Params,
    tol: &Tolerances,
    start: (f64, State),
    r_end: f64,
    ctl: &StepControl,
    detectors: &[Detector],
) -> Result<Trajectory> {
    let (r_start, s0) = start;
    if system == System::Radial {
        check_radius(r_start)?;
    }
    if let System::Shifted { rho } = system {
        if !(rho > 0.0) || r_start + rho <= 0.0 {
            return Err(DiracError::domain(format!("shift must be positive, got {rho}")));
        }
    }
    let flow = Flow { system, params: *p };
    let (specs, kinds) = build_events(detectors, p, tol);
    let sol = ode::integrate(&flow, r_start, s0.to_array(), r_end, ctl, &specs)?;

    let samples = sol
        .nodes
        .iter()
        .map(|n| {
            let state = State::from_array(n.y);
            Sample { r: n.r, state, energy: hamiltonian(&state, p), derivative: State::from_array(n.dy) }
        })
        .collect::<Vec<_>>();

    let mut events: Vec<Event> = sol
        .roots
        .iter()
        .map(|root| {
            let state = State::from_array(root.y);
            let seg = &sol.segments[root.segment];
            let kind = kinds[root.event];
            let payload = match kind {
                EventKind::EnteredNegativeEnergy => EventPayload::Energy { energy: hamiltonian(&state, p) },
                EventKind::NormBelowEta => EventPayload::Norm { norm: state.l1() },
                _ => EventPayload::Bracket { step_start: seg.start, step_end: seg.end },
            };
            Event { kind, r: root.r, state, payload }
        })
        .collect();

    if detectors.contains(&Detector::Certificate) {
        let fired = samples.iter().find_map(|s| {
            let prior = events.iter().filter(|e| e.kind == EventKind::VSignChange && e.r <= s.r).count();
            certificate_check(s.r, &s.state, p).map(|mut c| {
                c.prior_nodes = prior;
                (s.r, s.state, c)
            })
        });
        if let Some((r, state, cert)) = fired {
            events.push(Event { kind: EventKind::CertificateFired, r, state, payload: EventPayload::Certificate(cert) });
        }
    }
    if sol.outcome == Outcome::Completed {
        let last = samples.last().expect("non-empty");
        events.push(Event { kind: EventKind::RMaxReached, r: last.r, state: last.state, payload: EventPayload::None });
    }
    events.sort_by(|a, b| a.r.total_cmp(&b.r));

    let pieces = sol
        .segments
        .into_iter()
        .map(|seg| Piece { r_lo: seg.start, r_hi: seg.end, seg, mirror: None })
        .collect();
    Ok(Trajectory { samples, events, pieces })
}

/// Radial trajectory integrated backward from `r_far` down to `r_near`,
/// returned in increasing `r`. Event detection is not available here.
pub(crate) fn integrate_backward(
    p: &Params,
    r_far: f64,
    s_far: State,
    r_near: f64,
    ctl: &StepControl,
) -> Result<Trajectory> {
    check_radius(r_near)?;
    let flow = Flow { system: System::Radial, params: *p };
    let rev = Reversed { inner: &flow, r_end: r_far };
    let sol = ode::integrate(&rev, 0.0, s_far.to_array(), r_far - r_near, ctl, &[])?;
    let mut samples: Vec<Sample> = sol
        .nodes
        .iter()
        .map(|n| {
            let state = State::from_array(n.y);
            let r = r_far - n.r;
            Sample {
                r,
                state,
                energy: hamiltonian(&state, p),
                derivative: State::new(-n.dy[0], -n.dy[1]),
            }
        })
        .collect();
    samples.reverse();
    // the final backward node lands on r_near up to rounding
    samples[0].r = r_near;
    let mut pieces: Vec<Piece> = sol
        .segments
        .into_iter()
        .map(|seg| Piece { r_lo: r_far - seg.end, r_hi: r_far - seg.start, seg, mirror: Some(r_far) })
        .collect();
    pieces.reverse();
    if let Some(first) = pieces.first_mut() {
        first.r_lo = r_near;
    }
    Ok(Trajectory { samples, events: Vec::new(), pieces })
}

/// Integrates `system` from `start` up to `tol.rmax`, recording the requested events.
pub fn integrate(
    system: System,
    start: (f64, State),
    p: &Params,
    tol: &Tolerances,
    detectors: &[Detector],
) -> Result<Trajectory> {
    tol.validate()?;
    let ctl = StepControl::new(tol.rel, tol.abs).with_h_max(RADIAL_H_MAX);
    let r_end = tol.rmax.max(start.0);
    integrate_span(system, p, tol, start, r_end, &ctl, detectors)
}

/// Radial trajectory with `u(0) = 0, v(0) = λ`, started from the series at
/// [`origin_start_radius`].
pub fn integrate_from_origin(lambda: f64, p: &Params, tol: &Tolerances, detectors: &[Detector]) -> Result<Trajectory> {
    let r0 = origin_start_radius(lambda, tol);
    let s0 = taylor_start(lambda, p, r0)?;
    integrate(System::Radial, (r0, s0), p, tol, detectors)
}
