//! Large-datum asymptotics.
//!
//! For `λ = 1/ε` the rescaling `U(r) = ε u(ε² r)`, `V(r) = ε v(ε² r)` turns the
//! radial system into the same system with coefficients `(ε² m, ε² ω)` and
//! `V(0) = 1`. As `ε → 0` the solution tends to the bubble
//! `(U0, V0) = (2r/(4 + r²), 4/(4 + r²))` of the massless system. Writing
//! `U = U0 + ε² h1 + ε⁴ h2` and `V = V0 + ε² k1 + ε⁴ k2` gives a linear system
//! for `(h1, k1)` and a cubic remainder system for `(h2, k2)`.

use serde::Serialize;

use crate::error::{DiracError, Result};
use crate::ode::{self, Solution, StepControl};
use crate::params::{Params, State, Tolerances};
use crate::radial::{integrate_span, series_start, Detector, EventKind, System, Trajectory, RADIAL_H_MAX};

/// `(U0, V0)` of the massless bubble.
pub fn bubble(r: f64) -> (f64, f64) {
    let d = 4.0 + r * r;
    (2.0 * r / d, 4.0 / d)
}

/// `(U0', V0')`.
pub fn bubble_derivative(r: f64) -> (f64, f64) {
    let d = 4.0 + r * r;
    ((8.0 - 2.0 * r * r) / (d * d), -8.0 * r / (d * d))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BubbleProfile {
    pub grid: Vec<f64>,
    pub values: Vec<(f64, f64)>,
}

pub fn bubble_profile(grid: &[f64]) -> BubbleProfile {
    BubbleProfile { grid: grid.to_vec(), values: grid.iter().map(|&r| bubble(r)).collect() }
}

/// Residual of the massless system for a profile given as
/// `r ↦ ((U, V), (U', V'))`.
pub fn bubble_residual_of(grid: &[f64], profile: impl Fn(f64) -> ((f64, f64), (f64, f64))) -> f64 {
    grid.iter()
        .map(|&r| {
            let ((u, v), (du, dv)) = profile(r);
            let n = u * u + v * v;
            (du + u / r - n * v).abs() + (dv + n * u).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest residual of the closed-form bubble over `grid`.
pub fn bubble_residual(grid: &[f64]) -> Result<f64> {
    if let Some(&r) = grid.iter().find(|&&r| !(r > 0.0)) {
        return Err(DiracError::domain(format!("grid point {r} is not positive")));
    }
    Ok(bubble_residual_of(grid, |r| (bubble(r), bubble_derivative(r))))
}

/// `n` logarithmically spaced points in `[a, b]`.
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1).max(1) as f64).exp()).collect()
}

fn check_epsilon(epsilon: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero { (0.0..1.0).contains(&epsilon) } else { epsilon > 0.0 && epsilon < 1.0 };
    if ok {
        Ok(())
    } else {
        Err(DiracError::domain(format!("epsilon must lie in (0, 1), got {epsilon}")))
    }
}

/// The rescaled solution `(U_ε, V_ε)` on `[r0, r_end]`, started from the series
/// with `V(0) = 1`. Sample energies are the rescaled energy `H̃_ε`.
/// `epsilon = 0` gives the massless system.
pub fn integrate_rescaled(
    epsilon: f64,
    p: &Params,
    tol: &Tolerances,
    r_end: f64,
    detectors: &[Detector],
) -> Result<Trajectory> {
    check_epsilon(epsilon, true)?;
    tol.validate()?;
    let q = p.scaled(epsilon * epsilon);
    let start = series_start(1.0, &q, tol.r0);
    let ctl = StepControl::new(tol.rel, tol.abs).with_h_max(RADIAL_H_MAX);
    integrate_span(System::Radial, &q, tol, (tol.r0, start), r_end.max(tol.r0), &ctl, detectors)
}

/// First-order correction `(h1, k1)` with dense output.
#[derive(Debug, Clone)]
pub struct FirstOrder {
    params: Params,
    sol: Solution<2>,
}

impl FirstOrder {
    /// `(h1, k1)` at `r`; below the start radius the leading series is used.
    pub fn at(&self, r: f64) -> Option<(f64, f64)> {
        if r >= 0.0 && r < self.r_start() {
            let [h, k] = first_order_series(&self.params, r);
            return Some((h, k));
        }
        self.sol.eval(r).map(|y| (y[0], y[1]))
    }

    pub fn r_start(&self) -> f64 {
        self.sol.nodes[0].r
    }

    pub fn r_end(&self) -> f64 {
        self.sol.r_end()
    }

    /// Accepted steps as `(r, h1, k1)`.
    pub fn samples(&self) -> Vec<(f64, f64, f64)> {
        self.sol.nodes.iter().map(|n| (n.r, n.y[0], n.y[1])).collect()
    }
}

fn first_order_series(p: &Params, r: f64) -> [f64; 2] {
    [-0.5 * p.gap() * r, -0.5 * p.omega() * r * r]
}

fn first_order_rhs(p: &Params, r: f64, h: f64, k: f64) -> (f64, f64) {
    let (u0, v0) = bubble(r);
    let dh = -p.gap() * v0 + 2.0 * u0 * v0 * h + (u0 * u0 + 3.0 * v0 * v0) * k - h / r;
    let dk = -p.sum() * u0 - 2.0 * u0 * v0 * k - (3.0 * u0 * u0 + v0 * v0) * h;
    (dh, dk)
}

/// Integrates the linearization around the bubble,
///
/// ```text
/// h1' + h1/r = −(m − ω) V0 + 2 U0 V0 h1 + (U0² + 3 V0²) k1
/// k1'        = −(m + ω) U0 − 2 U0 V0 k1 − (3 U0² + V0²) h1
/// ```
///
/// with `h1(0) = k1(0) = 0`.
pub fn integrate_first_order(p: &Params, tol: &Tolerances, r_end: f64) -> Result<FirstOrder> {
    if !(r_end > 0.0) {
        return Err(DiracError::domain(format!("r_end must be positive, got {r_end}")));
    }
    tol.validate()?;
    let params = *p;
    let sys = move |r: f64, y: &[f64; 2]| {
        let (dh, dk) = first_order_rhs(&params, r, y[0], y[1]);
        [dh, dk]
    };
    let r0 = tol.r0.min(r_end);
    let sol = ode::integrate(&sys, r0, first_order_series(p, r0), r_end, &StepControl::new(tol.rel, tol.abs), &[])?;
    Ok(FirstOrder { params, sol })
}

/// Growth of the first-order correction on a window of large radii.
///
/// `k1` grows like `−c ln r`, while `h1` decays. `c` is the through-origin
/// least-squares coefficient with its relative `L²` residual; the affine model
/// `k1 ≈ −c ln r + d` is reported with its worst relative deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogLawFit {
    pub window: (f64, f64),
    pub points: usize,
    pub c: f64,
    pub relative_residual: f64,
    pub origin_sup: f64,
    pub affine_c: f64,
    pub affine_offset: f64,
    pub affine_sup: f64,
    /// through-origin coefficient of `h1` against `−ln r`
    pub h1_c: f64,
    pub h1_sup_abs: f64,
    /// `max (|h1| + |k1|) / ln r` over the window
    pub growth_ratio: f64,
}

pub fn log_law_fit(fo: &FirstOrder, window: (f64, f64), points: usize) -> Result<LogLawFit> {
    let (a, b) = window;
    if !(1.0 < a && a < b && b <= fo.r_end()) || points < 3 {
        return Err(DiracError::domain(format!("bad fit window ({a}, {b}) with {points} points")));
    }
    let grid = log_grid(a, b, points);
    let vals: Vec<(f64, f64, f64)> = grid
        .iter()
        .map(|&r| {
            let (h, k) = fo.at(r).expect("window inside the integrated range");
            (r.ln(), h, k)
        })
        .collect();
    let sll: f64 = vals.iter().map(|v| v.0 * v.0).sum();
    let c = -vals.iter().map(|v| v.2 * v.0).sum::<f64>() / sll;
    let h1_c = -vals.iter().map(|v| v.1 * v.0).sum::<f64>() / sll;
    let res: f64 = vals.iter().map(|v| (v.2 + c * v.0).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = vals.iter().map(|v| v.2 * v.2).sum::<f64>().sqrt();
    let origin_sup = vals.iter().map(|v| (v.2 + c * v.0).abs() / v.0).fold(0.0, f64::max);

    let len = vals.len() as f64;
    let ml = vals.iter().map(|v| v.0).sum::<f64>() / len;
    let mk = vals.iter().map(|v| v.2).sum::<f64>() / len;
    let slope = vals.iter().map(|v| (v.0 - ml) * (v.2 - mk)).sum::<f64>() / vals.iter().map(|v| (v.0 - ml).powi(2)).sum::<f64>();
    let affine_c = -slope;
    let affine_offset = mk - slope * ml;
    let affine_sup = vals.iter().map(|v| (v.2 - slope * v.0 - affine_offset).abs() / v.0).fold(0.0, f64::max);

    Ok(LogLawFit {
        window,
        points,
        c,
        relative_residual: res / norm,
        origin_sup,
        affine_c,
        affine_offset,
        affine_sup,
        h1_c,
        h1_sup_abs: vals.iter().map(|v| v.1.abs()).fold(0.0, f64::max),
        growth_ratio: vals.iter().map(|v| (v.1.abs() + v.2.abs()) / v.0).fold(0.0, f64::max),
    })
}

/// Source terms of the remainder equation for `k2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SourceTerms {
    /// full expansion of the cubic nonlinearity
    Derived,
    /// the historical transcription, kept for comparison
    AsPrinted,
}

#[allow(clippy::too_many_arguments)]
fn remainder_rhs(p: &Params, e: f64, terms: SourceTerms, r: f64, y: &[f64; 4]) -> [f64; 4] {
    let [h1, k1, h2, k2] = *y;
    let (u, v) = bubble(r);
    let (dh1, dk1) = first_order_rhs(p, r, h1, k1);
    let (mm, mp) = (p.gap(), p.sum());

    let h0 = (u * u + 3.0 * v * v) * k2 + 2.0 * u * v * h2 + v * (3.0 * k1 * k1 + h1 * h1) + 2.0 * u * h1 * k1 - mm * k1;
    let h2s = v * (6.0 * k1 * k2 + 2.0 * h1 * h2) + (k1.powi(3) + k1 * h1 * h1) + 2.0 * u * (h1 * k2 + h2 * k1) - mm * k2;
    let h4 = 3.0 * v * k2 * k2 + v * h2 * h2 + 2.0 * u * h2 * k2 + 3.0 * k1 * k1 * k2 + 2.0 * h1 * h2 * k1 + h1 * h1 * k2;
    let h6 = 3.0 * k1 * k2 * k2 + 2.0 * h1 * h2 * k2 + h2 * h2 * k1;
    let h8 = k2.powi(3) + h2 * h2 * k2;

    let (k0, k2s, k4, k6) = match terms {
        SourceTerms::Derived => (
            -(3.0 * u * u + v * v) * h2 - 2.0 * u * v * k2 - u * (3.0 * h1 * h1 + k1 * k1) - 2.0 * v * h1 * k1 - mp * h1,
            -u * (6.0 * h1 * h2 + 2.0 * k1 * k2) - (h1.powi(3) + h1 * k1 * k1) - 2.0 * v * (h1 * k2 + h2 * k1) - mp * h2,
            -(3.0 * u * h2 * h2 + u * k2 * k2 + 2.0 * v * h2 * k2) - (3.0 * h1 * h1 * h2 + 2.0 * h1 * k1 * k2 + h2 * k1 * k1),
            -(3.0 * h1 * h2 * h2 + h1 * k2 * k2 + 2.0 * h2 * k1 * k2),
        ),
        SourceTerms::AsPrinted => (
            -(2.0 * u * u + v * v + 2.0 * u * v) * h2 - u * (3.0 * h1 * h1 + k1 * k1) - 2.0 * v * h1 * k1 - mp * h1,
            -u * (4.0 * h1 * h2 + 2.0 * k1 * k2) - (h1.powi(3) + h1 * k1 * k1) - 2.0 * v * (h1 * k2 + k1 * h2) - mp * h2,
            -(u * (2.0 * h2 * h2 + k2 * k2) + 2.0 * v * h2 * k2) - (2.0 * h1 * k1 * k2 + 2.0 * h1 * h1 * h2 + k1 * k1 * h2),
            -h1 * h2 * h2 - k1 * k2 * k2 - h1 * h2 * h2 - k1 * k2 * h2,
        ),
    };
    let k8 = -(h2.powi(3) + h2 * k2 * k2);

    let dh2 = h0 + e * (h2s + e * (h4 + e * (h6 + e * h8))) - h2 / r;
    let dk2 = k0 + e * (k2s + e * (k4 + e * (k6 + e * k8)));
    [dh1, dk1, dh2, dk2]
}

/// `(h2, k2)` on `(0, 1/ε]` computed twice: by subtracting the expansion from
/// the rescaled solution, and by integrating the remainder system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationRecord {
    pub epsilon: f64,
    pub source_terms: SourceTerms,
    pub grid: Vec<f64>,
    pub h1: Vec<f64>,
    pub k1: Vec<f64>,
    /// `(U_ε − U0 − ε² h1)/ε⁴`
    pub h2_subtraction: Vec<f64>,
    pub k2_subtraction: Vec<f64>,
    pub h2_ode: Vec<f64>,
    pub k2_ode: Vec<f64>,
    /// `max |·_subtraction − ·_ode|` over the grid, both components
    pub discrepancy: f64,
    /// `sup (|h2| + |k2|)` of the ODE solution over the grid
    pub sup_remainder: f64,
    /// `ε^{−3/2}`
    pub threshold: f64,
    /// first grid radius with `|h2| + |k2| ≥ ε^{−3/2}`
    pub threshold_breach: Option<f64>,
}

impl PerturbationRecord {
    /// Worst component-wise relative disagreement of the two computations on `(0, r_max]`.
    pub fn relative_discrepancy(&self, r_max: f64) -> f64 {
        let rel = |a: &[f64], b: &[f64]| {
            let mut diff: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for ((&r, &x), &y) in self.grid.iter().zip(a).zip(b) {
                if r <= r_max {
                    diff = diff.max((x - y).abs());
                    scale = scale.max(x.abs());
                }
            }
            diff / scale
        };
        rel(&self.h2_subtraction, &self.h2_ode).max(rel(&self.k2_subtraction, &self.k2_ode))
    }

    pub fn flagged(&self) -> bool {
        self.threshold_breach.is_some()
    }
}

/// Number of grid points used by [`integrate_remainder`].
pub const REMAINDER_GRID: usize = 2000;

pub fn integrate_remainder(epsilon: f64, p: &Params, tol: &Tolerances, terms: SourceTerms) -> Result<PerturbationRecord> {
    check_epsilon(epsilon, false)?;
    tol.validate()?;
    let r_end = 1.0 / epsilon;
    let e = epsilon * epsilon;
    let grid: Vec<f64> = (1..=REMAINDER_GRID).map(|i| r_end * i as f64 / REMAINDER_GRID as f64).collect();

    let rescaled = integrate_rescaled(epsilon, p, tol, r_end, &[])?;
    let first = integrate_first_order(p, tol, r_end)?;

    let params = *p;
    let sys = move |r: f64, y: &[f64; 4]| remainder_rhs(&params, e, terms, r, y);
    let r0 = tol.r0;
    let [h10, k10] = first_order_series(p, r0);
    let y0 = [h10, k10, 0.0, 0.25 * (p.m() * p.m() - p.omega() * p.omega()) * r0 * r0];
    let sol = ode::integrate(&sys, r0, y0, r_end, &StepControl::new(tol.rel, tol.abs), &[])?;

    let mut rec = PerturbationRecord {
        epsilon,
        source_terms: terms,
        grid: grid.clone(),
        h1: Vec::with_capacity(grid.len()),
        k1: Vec::with_capacity(grid.len()),
        h2_subtraction: Vec::with_capacity(grid.len()),
        k2_subtraction: Vec::with_capacity(grid.len()),
        h2_ode: Vec::with_capacity(grid.len()),
        k2_ode: Vec::with_capacity(grid.len()),
        discrepancy: 0.0,
        sup_remainder: 0.0,
        threshold: epsilon.powf(-1.5),
        threshold_breach: None,
    };
    let e2 = e * e;
    for &r in &grid {
        let s = rescaled.state_at(r).expect("grid inside the rescaled run");
        let (h1, k1) = first.at(r).expect("grid inside the first-order run");
        let (u0, v0) = bubble(r);
        let y = sol.eval(r).expect("grid inside the remainder run");
        let hs = (s.u - u0 - e * h1) / e2;
        let ks = (s.v - v0 - e * k1) / e2;
        rec.h1.push(h1);
        rec.k1.push(k1);
        rec.h2_subtraction.push(hs);
        rec.k2_subtraction.push(ks);
        rec.h2_ode.push(y[2]);
        rec.k2_ode.push(y[3]);
        rec.discrepancy = rec.discrepancy.max((hs - y[2]).abs()).max((ks - y[3]).abs());
        let size = y[2].abs() + y[3].abs();
        rec.sup_remainder = rec.sup_remainder.max(size);
        if rec.threshold_breach.is_none() && size >= rec.threshold {
            rec.threshold_breach = Some(r);
        }
    }
    Ok(rec)
}

/// `sup (|h2| + |k2|) ≤ C ε⁻¹ ln(1/ε)` with `C` measured at the first record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemainderBound {
    pub epsilon: f64,
    pub sup_remainder: f64,
    /// `ε⁻¹ ln(1/ε)`
    pub scale: f64,
    pub ratio: f64,
    pub calibrated_c: f64,
    pub holds: bool,
}

pub fn remainder_bounds(records: &[PerturbationRecord]) -> Vec<RemainderBound> {
    let scale = |eps: f64| (1.0 / eps) * (1.0 / eps).ln();
    let Some(first) = records.first() else { return Vec::new() };
    let c = first.sup_remainder / scale(first.epsilon);
    records
        .iter()
        .map(|rec| {
            let s = scale(rec.epsilon);
            RemainderBound {
                epsilon: rec.epsilon,
                sup_remainder: rec.sup_remainder,
                scale: s,
                ratio: rec.sup_remainder / s,
                calibrated_c: c,
                holds: rec.sup_remainder <= c * s,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonStudy {
    pub epsilons: Vec<f64>,
    pub horizon: f64,
    /// `sup (|U_ε − U0| + |V_ε − V0|)` over `[0, T]`
    pub sup_errors: Vec<f64>,
    /// `err(ε_i) / err(ε_{i+1})`
    pub ratios: Vec<f64>,
    /// first zero of `V_ε` before `1/ε`
    pub node_radii: Vec<Option<f64>>,
}

/// Points used to sample the deviation from the bubble, in addition to the
/// accepted steps.
const STUDY_GRID: usize = 2001;

/// Sup-distance of the rescaled solution to the bubble on `[0, horizon]`.
pub fn bubble_deviation(epsilon: f64, p: &Params, tol: &Tolerances, horizon: f64) -> Result<f64> {
    let t = integrate_rescaled(epsilon, p, tol, horizon, &[])?;
    let dev = |r: f64, s: State| {
        let (u0, v0) = bubble(r);
        (s.u - u0).abs() + (s.v - v0).abs()
    };
    let mut sup = t.samples.iter().map(|s| dev(s.r, s.state)).fold(0.0, f64::max);
    let r0 = t.first().r;
    for i in 0..STUDY_GRID {
        let r = r0 + (horizon - r0) * i as f64 / (STUDY_GRID - 1) as f64;
        if let Some(s) = t.state_at(r) {
            sup = sup.max(dev(r, s));
        }
    }
    Ok(sup)
}

pub fn convergence_study(epsilons: &[f64], horizon: f64, p: &Params, tol: &Tolerances) -> Result<EpsilonStudy> {
    for w in epsilons.windows(2) {
        if !(w[1] < w[0]) {
            return Err(DiracError::domain("epsilons must be strictly decreasing"));
        }
    }
    let mut sup_errors = Vec::with_capacity(epsilons.len());
    let mut node_radii = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        check_epsilon(eps, false)?;
        sup_errors.push(bubble_deviation(eps, p, tol, horizon)?);
        node_radii.push(node_radius(eps, p, tol)?);
    }
    let ratios = sup_errors.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(EpsilonStudy { epsilons: epsilons.to_vec(), horizon, sup_errors, ratios, node_radii })
}

/// First zero of `V_ε` on `(0, horizon]`.
pub fn first_node_radius(epsilon: f64, p: &Params, tol: &Tolerances, horizon: f64) -> Result<Option<f64>> {
    check_epsilon(epsilon, false)?;
    let t = integrate_rescaled(epsilon, p, tol, horizon, &[Detector::VSignChange])?;
    Ok(t.first_event(EventKind::VSignChange).map(|e| e.r))
}

/// First zero of `V_ε` before `1/ε`, if any.
pub fn node_radius(epsilon: f64, p: &Params, tol: &Tolerances) -> Result<Option<f64>> {
    first_node_radius(epsilon, p, tol, 1.0 / epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial::integrate_from_origin;
    use approx::assert_abs_diff_eq;

    fn p1() -> Params {
        Params::new(1.0, 0.5).unwrap()
    }

    fn tight(p: &Params) -> Tolerances {
        Tolerances::for_params(p).with_rel_abs(1e-12, 1e-14)
    }

    #[test]
    fn bubble_values() {
        assert_eq!(bubble(0.0), (0.0, 1.0));
        assert_eq!(bubble(2.0), (0.5, 0.5));
        let (u, v) = bubble(1e8);
        assert!(u < 1e-7 && v < 1e-15);
        assert_abs_diff_eq!(bubble(1e6).0 * 1e6, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn bubble_solves_massless_system() {
        assert!(bubble_residual(&[2.0]).unwrap() < 1e-15);
        assert!(bubble_residual(&log_grid(1e-3, 1e6, 500)).unwrap() < 1e-12);
        assert!(bubble_residual(&[1e6]).unwrap() < 1e-12);
        assert!(bubble_residual(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn corrupted_bubble_is_detected() {
        let bad = bubble_residual_of(&[0.5, 1.0, 2.0], |r| {
            let d = 4.0 + r * r;
            ((2.0 * r / d, 4.5 / d), bubble_derivative(r))
        });
        assert!(bad > 1e-3);
    }

    #[test]
    fn bubble_derivative_matches_difference_quotient() {
        for &r in &[0.1, 1.0, 3.0, 10.0] {
            let h = 1e-6;
            let (a, b) = (bubble(r + h), bubble(r - h));
            let (du, dv) = bubble_derivative(r);
            assert_abs_diff_eq!(du, (a.0 - b.0) / (2.0 * h), epsilon = 1e-8);
            assert_abs_diff_eq!(dv, (a.1 - b.1) / (2.0 * h), epsilon = 1e-8);
        }
    }

    #[test]
    fn massless_rescaled_run_is_the_bubble() {
        let p = p1();
        let tol = tight(&p);
        assert!(bubble_deviation(0.0, &p, &tol, 20.0).unwrap() < 1e-9);
    }

    #[test]
    fn rescaled_energy_is_non_increasing_and_bounded() {
        let p = p1();
        let tol = tight(&p);
        for eps in [0.5, 0.2] {
            let t = integrate_rescaled(eps, &p, &tol, 20.0, &[]).unwrap();
            assert!(t.first().energy <= 1.0);
            for w in t.samples.windows(2) {
                assert!(w[1].energy <= w[0].energy + 1e-12);
            }
        }
    }

    #[test]
    fn rescaling_commutes_with_radial_flow() {
        let p = p1();
        let tol = tight(&p);
        for eps in [0.5, 0.1] {
            let lambda: f64 = 1.0 / eps;
            let orig = integrate_from_origin(lambda, &p, &tol.with_rmax(5.0 * eps * eps + 1e-3), &[]).unwrap();
            let resc = integrate_rescaled(eps, &p, &tol, 5.0, &[]).unwrap();
            for i in 0..=500 {
                let r = resc.first().r.max(5.0 * i as f64 / 500.0);
                let a = orig.state_at(eps * eps * r).unwrap();
                let b = resc.state_at(r).unwrap();
                assert!((eps * a.u - b.u).abs() < 1e-9 && (eps * a.v - b.v).abs() < 1e-9, "eps={eps} r={r}");
            }
        }
    }

    #[test]
    fn first_order_starts_at_zero_and_grows_logarithmically() {
        let p = p1();
        let fo = integrate_first_order(&p, &tight(&p), 1e6).unwrap();
        assert_eq!(fo.at(0.0), Some((0.0, 0.0)));
        let fit = log_law_fit(&fo, (1e2, 1e6), 200).unwrap();
        assert!(fit.growth_ratio < 5.0);
        let fit = log_law_fit(&fo, (1e3, 1e6), 200).unwrap();
        assert!(fit.c > 0.0);
        assert!(fit.relative_residual < 0.1, "{fit:?}");
        assert!(fit.affine_sup < 0.1, "{fit:?}");
        assert_abs_diff_eq!(fit.affine_c, 3.0, epsilon = 1e-2);
        // h1 decays like (ln r)²/r
        assert!(fit.h1_sup_abs < 0.2, "{fit:?}");
        assert!(fo.at(1e6).unwrap().0.abs() < 1e-3);
    }

    #[test]
    fn derived_remainder_matches_subtraction() {
        let p = p1();
        let rec = integrate_remainder(0.2, &p, &tight(&p), SourceTerms::Derived).unwrap();
        assert!(rec.relative_discrepancy(5.0) < 1e-4, "{}", rec.relative_discrepancy(5.0));
        assert!(!rec.flagged());
        let printed = integrate_remainder(0.2, &p, &tight(&p), SourceTerms::AsPrinted).unwrap();
        assert!(printed.relative_discrepancy(5.0) > 1e-2);
    }

    #[test]
    fn remainder_discrepancy_shrinks_with_tolerance() {
        let p = p1();
        let base = Tolerances::for_params(&p);
        let coarse = integrate_remainder(0.2, &p, &base.with_rel_abs(1e-8, 1e-10), SourceTerms::Derived).unwrap();
        let fine = integrate_remainder(0.2, &p, &base.with_rel_abs(1e-12, 1e-14), SourceTerms::Derived).unwrap();
        assert!(fine.discrepancy < coarse.discrepancy);
    }

    #[test]
    fn convergence_is_second_order() {
        let p = p1();
        let study = convergence_study(&[0.2, 0.1, 0.05], 10.0, &p, &tight(&p)).unwrap();
        assert_eq!(study.ratios.len(), 2);
        for w in study.sup_errors.windows(2) {
            assert!(w[1] < w[0]);
        }
        for r in &study.ratios {
            assert!((3.0..=5.0).contains(r), "{r}");
        }
        assert!(convergence_study(&[0.1, 0.2], 10.0, &p, &tight(&p)).is_err());
    }

    #[test]
    fn node_radius_and_rescaling() {
        let p = p1();
        let tol = tight(&p);
        // the first zero of V_ε comes after 1/ε unless ε is small
        assert_eq!(node_radius(0.1, &p, &tol).unwrap(), None);
        let r10 = first_node_radius(0.1, &p, &tol, 100.0).unwrap().unwrap();
        assert_abs_diff_eq!(r10, 15.23, epsilon = 0.01);
        let eps = 0.025;
        let r = node_radius(eps, &p, &tol).unwrap().expect("node before 1/eps");
        assert!(r < 1.0 / eps);
        let t = integrate_from_origin(1.0 / eps, &p, &tol.with_rmax(1.0), &[Detector::VSignChange]).unwrap();
        let orig = t.first_event(EventKind::VSignChange).unwrap().r;
        assert_abs_diff_eq!(r * eps * eps, orig, epsilon = 1e-8);
    }

    #[test]
    fn epsilon_domain() {
        let p = p1();
        let tol = tight(&p);
        assert!(integrate_remainder(0.0, &p, &tol, SourceTerms::Derived).is_err());
        assert!(integrate_remainder(1.0, &p, &tol, SourceTerms::Derived).is_err());
        assert!(integrate_rescaled(1.2, &p, &tol, 1.0, &[]).is_err());
    }
}
