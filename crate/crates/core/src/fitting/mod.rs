//! Histogram normalization and joint reduced-χ² fitting of the analytic
//! model across datasets that share the dephasing rate.

mod beat;
mod histogram;
mod joint;
pub mod model;
pub mod optimize;
pub mod sobol;
pub mod uncertainty;

pub use beat::beat_frequency_estimate;
pub use histogram::{normalize_histogram, CoincidenceHistogram, MIN_WINDOW_BINS};
pub use joint::{
    fitted_curves, joint_fit, single_dot_fit, DatasetResult, DatasetSpec, ErrorMethod, Estimate,
    FitResult, FitSpec, Param, StartReport,
};
pub use uncertainty::{bootstrap_errors, curvature_errors};
