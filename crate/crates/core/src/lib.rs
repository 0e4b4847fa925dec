//! Block-circulant LSTM compression and accelerator planning.
//!
//! The crate covers the numeric kernels (FFT circulant mat-vec in float and
//! 16-bit fixed point), LSTM execution on compressed weights, and the
//! planning side: operator graphs, stage scheduling and analytic
//! throughput/resource estimates.

pub mod circulant;
pub mod error;
pub mod estimate;
pub mod fxp;
pub mod graph;
pub mod lstm;
pub mod spectral;

pub use circulant::{BlockCirculantMatrix, CallCounters, CallCounts, DenseMatrix, SpectralWeights};
pub use error::{Error, Result};
pub use fxp::{FxpFormat, FxpScalar, FxpVector, ShiftPolicy};
pub use spectral::{Complex, PackedSpectrum};
pub use estimate::{OpCostProfile, PipelineEstimate, PlatformProfile, Resources};
pub use graph::{OpGraph, OpKind, OpNode, StageAssignment};
pub use lstm::{LstmArchSpec, LstmModel, LstmWeights, Mode};
