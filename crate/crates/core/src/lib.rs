//! Bi-monomeric Becker-Döring dynamics.
//!
//! The crate integrates the full discrete system, its Lotka-Volterra core,
//! the continuum advection-diffusion limit and the reduced cycle-to-cycle
//! models, and exposes the observables used to check their asymptotics.

pub mod bdsim;
pub mod blayer;
pub mod error;
pub mod integrate;
pub mod lv;
pub mod model;
pub mod numeric;
pub mod pde;
pub mod phase34;
pub mod semigroup;
pub mod stability;

pub use error::{Error, Result};
pub use model::{
    cluster_number, lv_energy, steady_state, total_mass, SimState, SteadyState, SystemParams,
};
