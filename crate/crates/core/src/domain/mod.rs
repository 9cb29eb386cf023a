//! Core data types shared by every other module.

mod draws;
pub mod io;
mod matrix;
mod observations;
mod od_matrix;

pub use draws::{default_thin_stride, AdaptationSummary, ChainTrace, ParamLayout, PosteriorDraws};
pub use matrix::Matrix;
pub use observations::{
    aggregate_bins, aggregate_observation_window, BinnedObservationSet, ObservationSet,
    TravelTimeTable,
};
pub use od_matrix::{
    validate_od_matrix, validate_with_tol, Constraint, OdMatrix, StructuralZeros, Violation,
    DRAW_SIMPLEX_TOL, SIMPLEX_TOL,
};
