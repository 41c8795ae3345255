//! Shared fixtures for the benchmarks.

use bimono::model::{SimState, SystemParams};
use bimono::pde::{Grid1D, PdeState};

/// The ε = 0.02 profile used in the long runs.
pub fn self_similar_state() -> (SystemParams, SimState) {
    bimono::bdsim::presets::self_similar(0.02, 1000).expect("valid preset")
}

pub fn reference_pde() -> (Grid1D, PdeState) {
    let grid = Grid1D::reference();
    let state = PdeState::half_gaussian(&grid, 10.0, 0.02);
    (grid, state)
}
