//! Open-system dynamics: master equation and quantum-jump trajectories.

pub mod exact;
pub mod jumps;
pub mod lindblad;
pub mod trajectory;

pub use exact::{run_sequence_exact, run_sequence_exact_detailed, ExactOptions, ExactRun, SegmentFlux};
pub use jumps::{build_jump_operators, BinPhase, JumpOperator, JumpTag};
pub use lindblad::lindblad_evolve;
pub use trajectory::{run_trajectory, run_trajectories, EmissionRecord, TrajectoryPlan, TrajectoryResult};
