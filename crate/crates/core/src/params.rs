use serde::{Deserialize, Serialize};

use crate::error::{DiracError, Result};

/// Physical parameters: mass `m`, frequency `omega` and angular index `s` of the ansatz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    m: f64,
    omega: f64,
    #[serde(default)]
    s: i32,
}

impl Params {
    /// Validated constructor; requires `0 < omega < m`.
    pub fn new(m: f64, omega: f64) -> Result<Self> {
        if !(m.is_finite() && omega.is_finite()) {
            return Err(DiracError::InvalidParams(format!("non-finite m = {m}, omega = {omega}")));
        }
        if !(0.0 < omega && omega < m) {
            return Err(DiracError::InvalidParams(format!(
                "need 0 < omega < m, got m = {m}, omega = {omega}"
            )));
        }
        Ok(Params { m, omega, s: 0 })
    }

    /// Selects a non-zero angular index. Only the `s = 0` path is exercised by
    /// the shooting code; other values change the `1/r` coefficients of the
    /// right-hand side.
    pub fn with_angular_index(mut self, s: i32) -> Self {
        self.s = s;
        self
    }

    /// Coefficients `(m ε², ω ε²)` of the rescaled system. `scale = 0` gives the
    /// massless limiting system, which does not satisfy the `0 < ω < m` invariant.
    pub(crate) fn scaled(&self, scale: f64) -> Self {
        Params { m: self.m * scale, omega: self.omega * scale, s: self.s }
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn angular_index(&self) -> i32 {
        self.s
    }

    /// `m − ω`
    pub fn gap(&self) -> f64 {
        self.m - self.omega
    }

    /// `m + ω`
    pub fn sum(&self) -> f64 {
        self.m + self.omega
    }

    /// Spatial decay rate `sqrt(m² − ω²)` of the linearization at the origin.
    pub fn linear_decay_rate(&self) -> f64 {
        (self.gap() * self.sum()).sqrt()
    }
}

/// A point `(u, v)` of the radial flow.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub u: f64,
    pub v: f64,
}

impl State {
    pub const fn new(u: f64, v: f64) -> Self {
        State { u, v }
    }

    pub fn norm_sq(&self) -> f64 {
        self.u * self.u + self.v * self.v
    }

    /// `|u| + |v|`, the norm used by all decay checks.
    pub fn l1(&self) -> f64 {
        self.u.abs() + self.v.abs()
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.u, self.v]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        State { u: a[0], v: a[1] }
    }

    pub fn dist(&self, other: &State) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

impl std::ops::Neg for State {
    type Output = State;
    fn neg(self) -> State {
        State::new(-self.u, -self.v)
    }
}

/// Numerical policy shared by every integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// relative local error per step
    pub rel: f64,
    /// absolute local error per step
    pub abs: f64,
    /// radius of the series start at the singular origin
    pub r0: f64,
    /// `|u| + |v|` below this counts as having reached the origin
    pub eta: f64,
    /// `H < -delta` counts as having entered the negative-energy region
    pub delta: f64,
    /// integration horizon
    pub rmax: f64,
}

impl Tolerances {
    /// Defaults: `rel = abs = 1e-10`, `r0 = 1e-6`, `eta = 1e-8`,
    /// `delta = 1e-8 (m − ω)²`, `rmax = 40 / (m − ω)`.
    pub fn for_params(p: &Params) -> Self {
        let gap = p.gap();
        Tolerances {
            rel: 1e-10,
            abs: 1e-10,
            r0: 1e-6,
            eta: 1e-8,
            delta: 1e-8 * gap * gap,
            rmax: 40.0 / gap,
        }
    }

    pub fn with_rel_abs(mut self, rel: f64, abs: f64) -> Self {
        self.rel = rel;
        self.abs = abs;
        self
    }

    pub fn with_rmax(mut self, rmax: f64) -> Self {
        self.rmax = rmax;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rel", self.rel),
            ("abs", self.abs),
            ("r0", self.r0),
            ("eta", self.eta),
            ("delta", self.delta),
            ("rmax", self.rmax),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(DiracError::InvalidParams(format!("tolerance {name} must be positive, got {value}")));
            }
        }
        if self.r0 >= 1e-2 {
            return Err(DiracError::InvalidParams(format!("r0 = {} is not small", self.r0)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_omega_outside_gap() {
        assert!(Params::new(1.0, 0.5).is_ok());
        assert!(Params::new(1.0, 1.0).is_err());
        assert!(Params::new(1.0, 1.5).is_err());
        assert!(Params::new(1.0, 0.0).is_err());
        assert!(Params::new(1.0, -0.2).is_err());
        assert!(Params::new(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn default_tolerances() {
        let p = Params::new(1.0, 0.5).unwrap();
        let tol = Tolerances::for_params(&p);
        assert_eq!(tol.rmax, 80.0);
        assert_eq!(tol.delta, 1e-8 * 0.25);
        assert!(tol.validate().is_ok());
        assert!(tol.with_rel_abs(0.0, 1e-10).validate().is_err());
    }
}
