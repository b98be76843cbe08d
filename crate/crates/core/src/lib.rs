//! Exact-diagonalization toolkit for a spin-1 condensate in the single-mode
//! approximation: Fock bases, Hamiltonians, spectra, propagation under
//! piecewise q(t) schedules, the multilevel-oscillation optimizer, and
//! noise and atom-loss ensembles.

pub mod basis;
pub mod error;
pub mod noise;
pub mod observables;
pub mod opensystem;
pub mod operators;
pub mod optimizer;
pub mod propagate;
pub mod schedule;
pub mod spectra;

pub use basis::{polar_state, twin_fock_state, FullBasis, PairBasis, Space, StateVector, C64};
pub use error::{Error, Result};
pub use observables::{ChainObserver, ObservableRecord};
pub use operators::{PhysicsParams, UnitConvention};
pub use propagate::{ChainModel, DriveOptions, Integrator, RotatingMode};
pub use schedule::{RunOptions, Schedule, Segment};
