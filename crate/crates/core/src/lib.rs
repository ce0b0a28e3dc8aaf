//! Income-distribution keyframes for the state-by-year explorer.
//!
//! The pipeline runs ingest, deflate, age standardization, segmentation and
//! layout export in that order; each stage lives in its own module and can be
//! used on its own.

pub mod agestd;
pub mod deflate;
pub mod error;
pub mod ingest;
pub mod layout;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod segment;

pub use error::{Error, Result};
pub use model::{HouseholdRecord, StateId, SubpopulationFilter, Variant, YearRange};
