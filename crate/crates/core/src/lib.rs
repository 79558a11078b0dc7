//! Radial shooting for localized solutions of the two-dimensional cubic Dirac
//! equation `(D + m σ3 − ω) ψ − |ψ|² ψ = 0` with `0 < ω < m`.
//!
//! With the ansatz `ψ = (v(r), i u(r) e^{iθ})` the equation reduces to a planar
//! non-autonomous system in `(u, v)` with a `1/r` singularity at the origin.
//! The crate provides
//!
//! * [`radial`]: right-hand sides, the energy `H`, a series start at the
//!   singular origin and an event-aware integrator,
//! * [`shooting`]: classification of initial data `v(0) = λ` by node count and
//!   energy sign, bracketing and bisection for the node-free ground state,
//! * [`asymptotics`]: the large-`λ` rescaling, the explicit massless bubble and
//!   the first/second order perturbation terms around it,
//! * [`phaseflow`]: phase-plane diagnostics (level sets of `H`, attraction
//!   to the negative-energy equilibria, shifted-system stability).

pub mod asymptotics;
pub mod error;
pub mod ode;
pub mod params;
pub mod phaseflow;
pub mod radial;
pub mod shooting;

pub use error::{DiracError, Result};
pub use params::{Params, State, Tolerances};
pub use radial::{Detector, Event, EventKind, EventPayload, Sample, System, Trajectory};
