//! Pseudo-spectral simulator for a single-density chemotaxis–reaction–advection
//! model on the periodic 2D box, plus the analysis tools used to measure how
//! fast the total mass decays with and without chemotactic attraction.
//!
//! The model advances
//!
//! ```text
//! d rho/dt + u . grad rho = Lap rho + chi div(rho grad psi) - eps rho^q
//! ```
//!
//! where `u = perp-grad H` is a prescribed divergence-free flow and `psi` is
//! the attractive potential generated by the density itself (see
//! [`model::chemo_potential`] for the normalization). Mass `m0 = int rho` is
//! the observable of interest: the reaction removes it, advection and
//! chemotaxis only rearrange it.
//!
//! Crate layout follows the pipeline: [`spectral`] (grids, transforms,
//! operators) -> [`model`] (right-hand side assembly) -> [`integrator`]
//! (integrating-factor time stepping) -> [`diagnostics`] (observables and
//! series) -> [`theory`] (decay envelopes and fits) -> [`harness`]
//! (configuration, experiment orchestration, file formats).

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod integrator;
pub mod model;
pub mod spectral;
pub mod theory;

pub use error::{Result, SimError};
pub use spectral::{GridSpec, ScalarField, VectorField};
