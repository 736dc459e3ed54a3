//! Numerical tolerances shared by the state containers and the engine.

/// Norm deviation allowed for a pure state flagged as normalized.
pub const PURE_NORM: f64 = 1e-9;
/// Trace deviation allowed for a normalized density matrix.
pub const TRACE: f64 = 1e-9;
/// Hermiticity deviation allowed for a density matrix.
pub const HERMITIAN: f64 = 1e-10;
/// Most negative eigenvalue tolerated in a density matrix.
pub const POSITIVITY: f64 = -1e-9;
/// Trace and positivity drift tolerated per `lindblad_evolve` call.
pub const EVOLVE_DRIFT: f64 = 1e-8;
/// Weight of the doubly-excited photon sector above which measurement refuses.
pub const DOUBLE_EXCITATION: f64 = 1e-9;
/// Bound on `dt * max_rate` for the fixed-step integrator.
pub const MAX_STEP_PRODUCT: f64 = 0.1;
/// POVM completeness tolerance.
pub const POVM: f64 = 1e-12;
