//! Simulation and analysis toolkit for time-bin spin-photon entanglement with
//! V1/V2 silicon vacancy centres in 4H-SiC.
//!
//! The crate is organised bottom-up:
//!
//! * [`defect`] holds the level structure and physical constants.
//! * [`linalg`] and [`state`] provide the small dense linear algebra and the
//!   36-dimensional composite state (9 defect levels, early and late photon
//!   modes).
//! * [`sequence`] describes pulse sequences and compiles them.
//! * [`dynamics`] evolves states exactly (master equation) or by quantum
//!   jump trajectories.
//! * [`detection`] turns states into detector clicks.
//! * [`analysis`] turns clicks into coincidence tables, visibilities,
//!   fidelities, cross-correlations and fits.
//! * [`budget`] holds the closed-form efficiency and infidelity calculators.
//! * [`experiment`] wires everything into runnable virtual experiments.

pub mod analysis;
pub mod budget;
pub mod defect;
pub mod detection;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod rng;
pub mod sequence;
pub mod state;
pub mod tolerance;

pub use analysis::{CoincidenceTable, FitModel, FitResult};
pub use defect::{DefectParams, Manifold, SpinLevel, TransitionTable};
pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, C64};
pub use sequence::{CompiledSequence, PulseElement, PulseSequence};
pub use state::{BellTarget, CompositeState, Factor};
