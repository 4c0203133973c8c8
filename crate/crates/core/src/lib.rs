//! Simulation and inference for parametric preferential-attachment trees.

pub mod cli;
pub mod error;
pub mod estimate;
pub mod experiment;
pub mod fenwick;
pub mod inference;
pub mod limits;
pub mod model;
pub mod quad;
pub mod rng;
pub mod stats;
pub mod tree;
pub mod urn;

pub use error::{PaError, Result};
pub use model::{FamilyKind, PaFamily, ParamBox};
pub use tree::{grow, snapshot_of, total_preference_trace, DegreeSnapshot, GrowthHistory};
