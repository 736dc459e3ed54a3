//! Coincidence tables, visibilities, fidelity, cross-correlations and fits.

mod fit;
mod table;

pub use fit::{fit, FitModel, FitResult};
pub use table::{
    build_table, fidelity_estimate, g2_cross, infer_run_counts, shuffle_spin_records, visibility,
    wilson_sigma, CoincidenceTable, Estimate, FidelityEstimate, RunCounts,
};
