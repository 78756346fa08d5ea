//! Newton-type extraction of one source per dataset under constant
//! separating vector mixing.

pub mod contrast;
pub mod data;
pub mod error;
pub mod linalg;
pub mod mixing;
pub mod score;
pub mod simgen;
pub mod solver;
pub mod tridiag;

pub use data::{BlockStats, Dims, SegmentedDataset};
pub use error::{Error, Result};
pub use mixing::CsvParams;
pub use score::{CellDensity, CellScores, SourceModel};
pub use tridiag::{TriProduct, TridiagCov, TridiagModel};
pub use solver::{Algorithm, ExtractionState, SolverConfig};
pub use simgen::{Coupling, GroundTruth, TrialConfig};
