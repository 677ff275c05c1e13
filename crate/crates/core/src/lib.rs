//! Entanglement dynamics of two two-level atoms inside a dielectric
//! microsphere coated with alternating quarter-wave layers.
//!
//! The crate is organised as a pipeline:
//!
//! * [`wave_basis`] – spherical Bessel/Hankel functions of complex argument
//!   and associated Legendre functions.
//! * [`layered_green`] – the layered sphere, the tangential Green function
//!   `G_φφ(r, r′, ω)`, spectrum scans, resonance extraction and the atom–field
//!   coupling matrix.
//! * [`lossless_dynamics`] – single-excitation amplitude dynamics (closed form,
//!   normal-mode solution and an RK4 reference) and concurrence quantities.
//! * [`lindblad_dynamics`] – zero-temperature master equation for the joint
//!   atom–field density matrix, partial trace and Wootters concurrence.
//!
//! Lengths are in micrometres, frequencies in hertz for the electromagnetic
//! part, and times are dimensionless `τ = ω_at·t` for the dynamics.

pub mod error;
pub mod layered_green;
pub mod lindblad_dynamics;
pub mod lossless_dynamics;
pub mod rk4;
pub mod wave_basis;

pub use error::{Error, Result};
