//! Dephasing-assisted exciton transport on disordered site networks.
//!
//! The crate is split along the physics:
//!
//! * [`network`] builds tight-binding site networks (presets or files) with
//!   seeded static disorder.
//! * [`dynamics`] evolves the density matrix under coherent hopping, pure
//!   dephasing with neighbour noise correlation, trapping and recombination.
//! * [`observables`] extracts spreading, diffusion fits and localization
//!   lengths from trajectories and Hamiltonians.
//! * [`theory`] holds the closed-form estimators (Λ, optimal dephasing,
//!   transient localization, two-state transfer, microscopic rates).
//! * [`sweep`] runs seeded, disorder-averaged parameter grids and checks
//!   whether efficiency collapses onto Λ.
//!
//! Units: ħ = 1, energies and rates in rad/ps, times in ps, distances in
//! lattice spacings.

pub mod dynamics;
pub mod error;
pub mod network;
pub mod observables;
pub mod sweep;
pub mod theory;
pub mod units;

pub use dynamics::{
    propagate, run_to_completion, DensityMatrix, Method, OpenSystemSpec, PropagateOptions,
    RunOptions, Trajectory, TransportOutcome,
};
pub use error::{Error, Result};
pub use network::{
    build_preset, hamiltonian, load_network, DisorderDistribution, DisorderSpec, PresetKind,
    SiteNetwork, Topology,
};
pub use observables::{
    dynamic_localization, fit_diffusion, ipr_localization, msd_curve, DiffusionFit,
    LocalizationEstimate,
};
pub use sweep::{collapse_check, run_sweep, FamilyReport, SweepConfig, SweepResult};

/// Version string embedded in run metadata.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
