//! Dormand–Prince 5(4) integrator with continuous (dense) output and
//! sign-change event location.
//!
//! Integration runs forward in the independent variable only. Backward
//! integration is done by wrapping a system in [`Reversed`].

use crate::error::DiracError;

/// `dy/dr = f(r, y)`
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, r: f64, y: &[f64; N]) -> [f64; N];
}

impl<const N: usize, F> OdeSystem<N> for F
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    fn rhs(&self, r: f64, y: &[f64; N]) -> [f64; N] {
        self(r, y)
    }
}

/// `s ↦ y(r_end − s)` for an inner system in `r`.
pub struct Reversed<'a, S> {
    pub inner: &'a S,
    pub r_end: f64,
}

impl<const N: usize, S: OdeSystem<N>> OdeSystem<N> for Reversed<'_, S> {
    fn rhs(&self, s: f64, y: &[f64; N]) -> [f64; N] {
        let mut d = self.inner.rhs(self.r_end - s, y);
        for x in d.iter_mut() {
            *x = -*x;
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rel: f64,
    pub abs: f64,
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl StepControl {
    pub fn new(rel: f64, abs: f64) -> Self {
        StepControl { rel, abs, h_init: None, h_max: f64::INFINITY, max_steps: 2_000_000 }
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }
}

// Butcher tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Fifth minus fourth order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Dense output (Shampine).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with its continuous extension.
#[derive(Debug, Clone)]
pub struct Segment<const N: usize> {
    pub start: f64,
    pub end: f64,
    h: f64,
    coeffs: [[f64; N]; 5],
}

impl<const N: usize> Segment<N> {
    pub fn eval(&self, r: f64) -> [f64; N] {
        let theta = (r - self.start) / self.h;
        let theta1 = 1.0 - theta;
        let c = &self.coeffs;
        let mut y = [0.0; N];
        for i in 0..N {
            y[i] = c[0][i] + theta * (c[1][i] + theta1 * (c[2][i] + theta * (c[3][i] + theta1 * c[4][i])));
        }
        y
    }
}

/// Accepted grid point.
#[derive(Debug, Clone, Copy)]
pub struct Node<const N: usize> {
    pub r: f64,
    pub y: [f64; N],
    pub dy: [f64; N],
}

/// Scalar event function; roots are located where it changes sign.
pub struct EventSpec<'a, const N: usize> {
    pub func: Box<dyn Fn(f64, &[f64; N]) -> f64 + 'a>,
    pub terminal: bool,
}

impl<'a, const N: usize> EventSpec<'a, N> {
    pub fn new(terminal: bool, func: impl Fn(f64, &[f64; N]) -> f64 + 'a) -> Self {
        EventSpec { func: Box::new(func), terminal }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Root<const N: usize> {
    pub event: usize,
    pub r: f64,
    pub y: [f64; N],
    /// index of the segment containing the root
    pub segment: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    Terminated { event: usize },
}

#[derive(Debug, Clone)]
pub struct Solution<const N: usize> {
    pub nodes: Vec<Node<N>>,
    pub segments: Vec<Segment<N>>,
    pub roots: Vec<Root<N>>,
    pub outcome: Outcome,
    pub rejected: usize,
}

impl<const N: usize> Solution<N> {
    pub fn r_end(&self) -> f64 {
        self.nodes.last().map(|n| n.r).unwrap_or(f64::NAN)
    }

    pub fn last(&self) -> &Node<N> {
        self.nodes.last().expect("solution has at least the initial node")
    }

    /// Dense-output value at `r`, or `None` outside the integrated range.
    pub fn eval(&self, r: f64) -> Option<[f64; N]> {
        let first = self.nodes.first()?;
        if r == first.r {
            return Some(first.y);
        }
        let idx = self.segments.partition_point(|s| s.end < r);
        let seg = self.segments.get(idx)?;
        if r < seg.start {
            return None;
        }
        Some(seg.eval(r))
    }
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] += h * acc;
    }
    out
}

fn scaled_norm<const N: usize>(v: &[f64; N], y: &[f64; N], ctl: &StepControl) -> f64 {
    let mut s = 0.0;
    for i in 0..N {
        let sc = ctl.abs + ctl.rel * y[i].abs();
        s += (v[i] / sc).powi(2);
    }
    (s / N as f64).sqrt()
}

fn initial_step<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    r: f64,
    y: &[f64; N],
    f0: &[f64; N],
    ctl: &StepControl,
    span: f64,
) -> f64 {
    let d0 = scaled_norm(y, y, ctl);
    let d1 = scaled_norm(f0, y, ctl);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1 = axpy(y, h0, &[(1.0, f0)]);
    let f1 = sys.rhs(r + h0, &y1);
    let mut df = [0.0; N];
    for i in 0..N {
        df[i] = f1[i] - f0[i];
    }
    let d2 = scaled_norm(&df, y, ctl) / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    (100.0 * h0).min(h1).min(span).min(ctl.h_max)
}

fn sign_change(ga: f64, gb: f64) -> bool {
    (ga < 0.0 && gb >= 0.0) || (ga > 0.0 && gb <= 0.0)
}

/// Bisection on the dense output; `g(a)` and `g(b)` have different signs or `g(b) = 0`.
fn refine_root<const N: usize>(seg: &Segment<N>, g: &dyn Fn(f64, &[f64; N]) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut ga = g(a, &seg.eval(a));
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let gm = g(mid, &seg.eval(mid));
        if gm == 0.0 {
            return mid;
        }
        if sign_change(ga, gm) {
            b = mid;
        } else {
            a = mid;
            ga = gm;
        }
    }
    b
}

/// Roots of all events inside one accepted segment, ordered by radius.
fn locate_roots<const N: usize>(seg: &Segment<N>, events: &[EventSpec<'_, N>], seg_index: usize) -> Vec<Root<N>> {
    const PROBES: usize = 4;
    let mut found = Vec::new();
    for (ei, ev) in events.iter().enumerate() {
        let g = ev.func.as_ref();
        let mut ra = seg.start;
        let mut ga = g(ra, &seg.eval(ra));
        for p in 1..=PROBES {
            let rb = if p == PROBES { seg.end } else { seg.start + (seg.end - seg.start) * p as f64 / PROBES as f64 };
            let gb = g(rb, &seg.eval(rb));
            if ga != 0.0 && sign_change(ga, gb) {
                let r = refine_root(seg, g, ra, rb);
                found.push(Root { event: ei, r, y: seg.eval(r), segment: seg_index });
            }
            ra = rb;
            ga = gb;
        }
    }
    found.sort_by(|a, b| a.r.total_cmp(&b.r));
    found
}

/// Integrates `sys` from `(r_start, y0)` to `r_end ≥ r_start`.
///
/// Every accepted step is kept together with its dense-output polynomial.
/// Event roots are bracketed by sign changes of the event function at the
/// step ends and three interior probes, then bisected on the dense output.
/// The first terminal root ends the integration at that radius.
pub fn integrate<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    r_start: f64,
    y0: [f64; N],
    r_end: f64,
    ctl: &StepControl,
    events: &[EventSpec<'_, N>],
) -> Result<Solution<N>, DiracError> {
    let fail = |r: f64, y: &[f64; N], reason: &str| DiracError::Integration {
        r,
        state: y.to_vec(),
        reason: reason.to_string(),
    };
    if !(r_end >= r_start) {
        return Err(DiracError::domain(format!("r_end = {r_end} precedes r_start = {r_start}")));
    }
    if y0.iter().any(|x| !x.is_finite()) {
        return Err(fail(r_start, &y0, "non-finite initial state"));
    }

    let mut r = r_start;
    let mut y = y0;
    let mut k1 = sys.rhs(r, &y);
    let mut sol = Solution {
        nodes: vec![Node { r, y, dy: k1 }],
        segments: Vec::new(),
        roots: Vec::new(),
        outcome: Outcome::Completed,
        rejected: 0,
    };
    if r_end == r_start {
        return Ok(sol);
    }

    let mut h = ctl.h_init.unwrap_or_else(|| initial_step(sys, r, &y, &k1, ctl, r_end - r_start));
    let mut last_rejected = false;
    let mut steps = 0usize;

    while r < r_end {
        steps += 1;
        if steps > ctl.max_steps {
            return Err(fail(r, &y, "step budget exhausted"));
        }
        h = h.min(ctl.h_max);
        let remaining = r_end - r;
        let last_step = h >= remaining * (1.0 - 1e-12);
        if last_step {
            h = remaining;
        }
        if h <= 8.0 * f64::EPSILON * r.abs().max(f64::MIN_POSITIVE) || h < 1e-300 {
            return Err(fail(r, &y, "step size underflow"));
        }

        let k2 = sys.rhs(r + C2 * h, &axpy(&y, h, &[(A21, &k1)]));
        let k3 = sys.rhs(r + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = sys.rhs(r + C4 * h, &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = sys.rhs(r + C5 * h, &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
        let k6 = sys.rhs(r + h, &axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
        let y5 = axpy(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let r_new = if last_step { r_end } else { r + h };
        let k7 = sys.rhs(r_new, &y5);

        let mut err_sq = 0.0;
        let mut finite = true;
        for i in 0..N {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = ctl.abs + ctl.rel * y[i].abs().max(y5[i].abs());
            err_sq += (e / sc).powi(2);
            finite &= y5[i].is_finite() && k7[i].is_finite();
        }
        let err = (err_sq / N as f64).sqrt();

        if !finite || !err.is_finite() {
            h *= 0.2;
            last_rejected = true;
            sol.rejected += 1;
            continue;
        }

        if err > 1.0 {
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            last_rejected = true;
            sol.rejected += 1;
            continue;
        }

        let mut coeffs = [[0.0; N]; 5];
        for i in 0..N {
            let ydiff = y5[i] - y[i];
            let bspl = h * k1[i] - ydiff;
            coeffs[0][i] = y[i];
            coeffs[1][i] = ydiff;
            coeffs[2][i] = bspl;
            coeffs[3][i] = ydiff - h * k7[i] - bspl;
            coeffs[4][i] =
                h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        let mut seg = Segment { start: r, end: r_new, h, coeffs };
        let seg_index = sol.segments.len();

        if !events.is_empty() {
            let roots = locate_roots(&seg, events, seg_index);
            if let Some(pos) = roots.iter().position(|root| events[root.event].terminal) {
                let stop = roots[pos];
                sol.roots.extend_from_slice(&roots[..=pos]);
                seg.end = stop.r;
                let dy = sys.rhs(stop.r, &stop.y);
                sol.segments.push(seg);
                sol.nodes.push(Node { r: stop.r, y: stop.y, dy });
                sol.outcome = Outcome::Terminated { event: stop.event };
                return Ok(sol);
            }
            sol.roots.extend(roots);
        }

        sol.segments.push(seg);
        sol.nodes.push(Node { r: r_new, y: y5, dy: k7 });
        r = r_new;
        y = y5;
        k1 = k7;

        let mut fac = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };
        if last_rejected {
            fac = fac.min(1.0);
        }
        last_rejected = false;
        h *= fac;
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth_matches_closed_form() {
        let sys = |_r: f64, y: &[f64; 1]| [y[0]];
        let ctl = StepControl::new(1e-10, 1e-12);
        let sol = integrate(&sys, 0.0, [1.0], 5.0, &ctl, &[]).unwrap();
        let end = sol.last();
        assert_eq!(end.r, 5.0);
        assert!((end.y[0] - 5f64.exp()).abs() < 1e-7 * 5f64.exp());
        // dense output between nodes
        for &r in &[0.3, 1.7, 2.2, 4.9] {
            let y = sol.eval(r).unwrap()[0];
            assert!((y - f64::exp(r)).abs() < 1e-8 * f64::exp(r), "r={r} y={y}");
        }
        assert!(sol.eval(5.5).is_none());
    }

    #[test]
    fn harmonic_oscillator_event_roots() {
        // y = (cos r, -sin r); first component vanishes at pi/2 + k pi
        let sys = |_r: f64, y: &[f64; 2]| [y[1], -y[0]];
        let ctl = StepControl::new(1e-11, 1e-12).with_h_max(0.5);
        let ev = [EventSpec::new(false, |_r, y: &[f64; 2]| y[0])];
        let sol = integrate(&sys, 0.0, [1.0, 0.0], 10.0, &ctl, &ev).unwrap();
        let expected: Vec<f64> = (0..3).map(|k| std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::PI).collect();
        assert_eq!(sol.roots.len(), 3);
        for (root, want) in sol.roots.iter().zip(expected) {
            assert!((root.r - want).abs() < 1e-9, "{} vs {}", root.r, want);
        }
    }

    #[test]
    fn terminal_event_truncates() {
        let sys = |_r: f64, y: &[f64; 2]| [y[1], -y[0]];
        let ctl = StepControl::new(1e-11, 1e-12);
        let ev = [EventSpec::new(true, |_r, y: &[f64; 2]| y[0] - 0.5)];
        let sol = integrate(&sys, 0.0, [1.0, 0.0], 10.0, &ctl, &ev).unwrap();
        assert_eq!(sol.outcome, Outcome::Terminated { event: 0 });
        assert!((sol.r_end() - std::f64::consts::FRAC_PI_3).abs() < 1e-9);
        assert!((sol.last().y[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn reversed_system_runs_backward() {
        // dy/dr = -y from r = 2 back to r = 0 starting at e^{-2}
        let sys = |_r: f64, y: &[f64; 1]| [-y[0]];
        let rev = Reversed { inner: &sys, r_end: 2.0 };
        let ctl = StepControl::new(1e-11, 1e-14);
        let sol = integrate(&rev, 0.0, [(-2f64).exp()], 2.0, &ctl, &[]).unwrap();
        assert!((sol.last().y[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_backward_span() {
        let sys = |_r: f64, y: &[f64; 1]| [y[0]];
        assert!(integrate(&sys, 1.0, [1.0], 0.0, &StepControl::new(1e-8, 1e-8), &[]).is_err());
    }

    #[test]
    fn blow_up_reports_failure_with_last_state() {
        // y' = y^2 blows up at r = 1
        let sys = |_r: f64, y: &[f64; 1]| [y[0] * y[0]];
        let err = integrate(&sys, 0.0, [1.0], 2.0, &StepControl::new(1e-10, 1e-10), &[]).unwrap_err();
        match err {
            DiracError::Integration { r, state, .. } => {
                assert!(r < 1.0 && r > 0.9);
                assert!(state[0] > 10.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
