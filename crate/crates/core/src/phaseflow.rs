//! Phase-plane diagnostics: level sets of `H`, capture by the negative-energy
//! equilibria and the shifted-system comparison.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{DiracError, Result};
use crate::ode::StepControl;
use crate::params::{Params, State, Tolerances};
use crate::radial::{hamiltonian, integrate_from_origin, integrate_span, Detector, EventKind, System, RADIAL_H_MAX};
use crate::shooting::{classify, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSet {
    pub level: f64,
    pub half_width: f64,
    pub polylines: Vec<Vec<State>>,
}

impl LevelSet {
    pub fn is_empty(&self) -> bool {
        self.polylines.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = &State> {
        self.polylines.iter().flatten()
    }

    pub fn max_residual(&self, p: &Params) -> f64 {
        self.points().map(|s| (hamiltonian(s, p) - self.level).abs()).fold(0.0, f64::max)
    }

    /// Distance from `q` to the nearest emitted segment or isolated point.
    pub fn distance_to(&self, q: &State) -> f64 {
        let mut best = f64::INFINITY;
        for line in &self.polylines {
            if line.len() == 1 {
                best = best.min(line[0].dist(q));
            }
            for w in line.windows(2) {
                best = best.min(segment_distance(&w[0], &w[1], q));
            }
        }
        best
    }
}

fn segment_distance(a: &State, b: &State, q: &State) -> f64 {
    let (dx, dy) = (b.u - a.u, b.v - a.v);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((q.u - a.u) * dx + (q.v - a.v) * dy) / len2).clamp(0.0, 1.0) };
    State::new(a.u + t * dx, a.v + t * dy).dist(q)
}

/// Horizontal edge `(i, j) → (i + 1, j)` or vertical edge `(i, j) → (i, j + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct EdgeKey {
    i: usize,
    j: usize,
    vertical: bool,
}

/// Contour `{H = level}` by marching squares on a `resolution²` cell grid.
/// Crossing points are refined by bisection along the grid edges, ambiguous
/// cells are resolved by the value at the cell centre.
pub fn level_set(level: f64, p: &Params, resolution: usize) -> Result<LevelSet> {
    if resolution < 2 {
        return Err(DiracError::domain("resolution must be at least 2"));
    }
    let min = -0.25 * p.gap() * p.gap();
    let half_width = 2.0 * (1.0 + level.max(min) + p.m() + p.omega()).sqrt();
    let mut set = LevelSet { level, half_width, polylines: Vec::new() };
    let slack = 1e-12 * (1.0 + min.abs());
    if level < min - slack {
        return Ok(set);
    }
    if level <= min + slack {
        let v = p.gap().sqrt();
        set.polylines = vec![vec![State::new(0.0, -v)], vec![State::new(0.0, v)]];
        return Ok(set);
    }

    let n = resolution;
    let coord = |i: usize| -half_width + 2.0 * half_width * i as f64 / n as f64;
    let g = |u: f64, v: f64| hamiltonian(&State::new(u, v), p) - level;
    let values: Vec<f64> = (0..=n).flat_map(|j| (0..=n).map(move |i| (i, j))).map(|(i, j)| g(coord(i), coord(j))).collect();
    let at = |i: usize, j: usize| values[j * (n + 1) + i];
    let inside = |x: f64| x > 0.0;

    let mut crossings: BTreeMap<EdgeKey, State> = BTreeMap::new();
    let mut crossing = |key: EdgeKey| -> EdgeKey {
        crossings.entry(key).or_insert_with(|| {
            let a = State::new(coord(key.i), coord(key.j));
            let b = if key.vertical { State::new(a.u, coord(key.j + 1)) } else { State::new(coord(key.i + 1), a.v) };
            refine_crossing(&g, a, b)
        });
        key
    };
    let mut adjacency: BTreeMap<EdgeKey, Vec<EdgeKey>> = BTreeMap::new();
    let mut link = |a: EdgeKey, b: EdgeKey| {
        adjacency.entry(a).or_default().push(b);
        adjacency.entry(b).or_default().push(a);
    };

    for j in 0..n {
        for i in 0..n {
            let corners = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
            let ins = corners.map(inside);
            let bottom = EdgeKey { i, j, vertical: false };
            let right = EdgeKey { i: i + 1, j, vertical: true };
            let top = EdgeKey { i, j: j + 1, vertical: false };
            let left = EdgeKey { i, j, vertical: true };
            let edges = [(bottom, 0, 1), (right, 1, 2), (top, 3, 2), (left, 0, 3)];
            let crossed: Vec<EdgeKey> = edges.iter().filter(|(_, a, b)| ins[*a] != ins[*b]).map(|e| e.0).collect();
            match crossed.len() {
                2 => {
                    let (a, b) = (crossing(crossed[0]), crossing(crossed[1]));
                    link(a, b);
                }
                4 => {
                    let centre = inside(g(0.5 * (coord(i) + coord(i + 1)), 0.5 * (coord(j) + coord(j + 1))));
                    let (b, r, t, l) = (crossing(bottom), crossing(right), crossing(top), crossing(left));
                    if ins[0] != centre {
                        link(l, b);
                        link(r, t);
                    } else {
                        link(b, r);
                        link(t, l);
                    }
                }
                _ => {}
            }
        }
    }

    // walk open chains first, then closed loops
    let mut visited: BTreeMap<EdgeKey, bool> = adjacency.keys().map(|k| (*k, false)).collect();
    let starts: Vec<EdgeKey> = adjacency
        .iter()
        .filter(|(_, nb)| nb.len() == 1)
        .map(|(k, _)| *k)
        .chain(adjacency.keys().copied())
        .collect();
    for start in starts {
        if visited[&start] {
            continue;
        }
        let mut line = Vec::new();
        let mut prev: Option<EdgeKey> = None;
        let mut cur = start;
        loop {
            visited.insert(cur, true);
            line.push(crossings[&cur]);
            let next = adjacency[&cur].iter().copied().find(|k| Some(*k) != prev && !visited[k]);
            match next {
                Some(k) => {
                    prev = Some(cur);
                    cur = k;
                }
                None => {
                    // close loops
                    if line.len() > 2 && adjacency[&cur].contains(&start) {
                        line.push(crossings[&start]);
                    }
                    break;
                }
            }
        }
        set.polylines.push(line);
    }
    Ok(set)
}

/// Point on the segment `[a, b]` where `g` changes sign, to the last bit.
fn refine_crossing(g: &impl Fn(f64, f64) -> f64, a: State, b: State) -> State {
    let point = |t: f64| State::new(a.u + t * (b.u - a.u), a.v + t * (b.v - a.v));
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let lo_inside = g(a.u, a.v) > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let pm = point(mid);
        if (g(pm.u, pm.v) > 0.0) == lo_inside {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (pl, ph) = (point(lo), point(hi));
    if g(pl.u, pl.v).abs() <= g(ph.u, ph.v).abs() {
        pl
    } else {
        ph
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttractionReport {
    pub lambda: f64,
    pub verdict: Verdict,
    /// radius of the first state with `H < −δ`
    pub entered_at: f64,
    pub rmax: f64,
    pub terminal_state: State,
    pub terminal_energy: f64,
    pub nearest_equilibrium: State,
    pub terminal_distance: f64,
    /// sign changes of `u` after entering `{H < −δ}`
    pub u_sign_alternations: usize,
    /// largest increase of `H` between consecutive steps after entry
    pub max_energy_increase: f64,
}

/// Follows a datum in `A(k)` to the horizon and measures how close it ends to
/// the equilibria `(0, ±sqrt(m − ω))`.
pub fn attraction_report(lambda: f64, p: &Params, tol: &Tolerances) -> Result<AttractionReport> {
    let c = classify(lambda, p, tol)?;
    let Verdict::A(_) = c.verdict else {
        return Err(DiracError::domain(format!("lambda = {lambda} is not in any A(k): {:?}", c.verdict)));
    };
    let entered_at = c.evidence.r;
    let t = integrate_from_origin(
        lambda,
        p,
        tol,
        &[Detector::VSignChange, Detector::USignChange, Detector::NegativeEnergy { terminal: false }],
    )?;
    let last = *t.last();
    let v_eq = p.gap().sqrt();
    let nearest = if last.state.v >= 0.0 { State::new(0.0, v_eq) } else { State::new(0.0, -v_eq) };
    let u_sign_alternations = t.events.iter().filter(|e| e.kind == EventKind::USignChange && e.r > entered_at).count();
    let max_energy_increase = t
        .samples
        .windows(2)
        .filter(|w| w[0].r >= entered_at)
        .map(|w| w[1].energy - w[0].energy)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(AttractionReport {
        lambda,
        verdict: c.verdict,
        entered_at,
        rmax: last.r,
        terminal_state: last.state,
        terminal_energy: last.energy,
        nearest_equilibrium: nearest,
        terminal_distance: last.state.dist(&nearest),
        u_sign_alternations,
        max_energy_increase,
    })
}

const COMPARE_GRID: usize = 1001;

/// Sup over `[0, T]` of `|Δu| + |Δv|` between the shifted system
/// `u' + u/(r + ρ) = …` and the autonomous system from the same start.
pub fn stability_compare(rho: f64, start: State, horizon: f64, p: &Params, tol: &Tolerances) -> Result<f64> {
    if !(rho > 0.0) || !(horizon >= 0.0) {
        return Err(DiracError::domain(format!("need rho > 0 and T >= 0, got rho = {rho}, T = {horizon}")));
    }
    if horizon == 0.0 {
        return Ok(0.0);
    }
    let ctl = StepControl::new(tol.rel, tol.abs).with_h_max(RADIAL_H_MAX);
    let a = integrate_span(System::Autonomous, p, tol, (0.0, start), horizon, &ctl, &[])?;
    let s = integrate_span(System::Shifted { rho }, p, tol, (0.0, start), horizon, &ctl, &[])?;
    let grid = (0..COMPARE_GRID)
        .map(|i| horizon * i as f64 / (COMPARE_GRID - 1) as f64)
        .chain(a.samples.iter().map(|x| x.r))
        .chain(s.samples.iter().map(|x| x.r));
    let mut sup: f64 = 0.0;
    for r in grid {
        if let (Some(x), Some(y)) = (a.state_at(r), s.state_at(r)) {
            sup = sup.max((x.u - y.u).abs() + (x.v - y.v).abs());
        }
    }
    Ok(sup)
}

/// `(ρ, deviation)` for each shift.
pub fn stability_ladder(rhos: &[f64], start: State, horizon: f64, p: &Params, tol: &Tolerances) -> Result<Vec<(f64, f64)>> {
    rhos.iter().map(|&rho| stability_compare(rho, start, horizon, p, tol).map(|d| (rho, d))).collect()
}
