//! Consistency, availability and latency analysis for distributed real-time
//! programs.
//!
//! The crate quantifies how much a federated program must wait before it can
//! handle inputs, given worst-case execution, network and clock-error bounds
//! and the logical delays (tolerated inconsistency) on its channels. The
//! analysis is linear in the max-plus semiring:
//!
//! * [`time`]: nanosecond time values with `±inf` and superdense tags.
//! * [`maxplus`]: max-plus matrices, generic over the scalar type.
//! * [`model`]: program topology with latency assumptions.
//! * [`cal`]: offsets, unavailability, deadline checks and latency budgets.
//! * [`trace`]: trace format and empirical measurement of the same
//!   quantities.
//! * [`sim`]: deterministic simulator of centralized and decentralized
//!   coordination with fault injection.

pub mod cal;
pub mod maxplus;
pub mod model;
pub mod sim;
pub mod time;
pub mod trace;

pub use crate::cal::{analyze, AnalysisReport, CalError};
pub use crate::maxplus::{CycleClass, Matrix, MaxPlusError, MaxPlusScalar};
pub use crate::model::{
    load_model, validate_model, ChannelKind, ChannelSpec, ModelError, NodeSpec, ProgramModel,
};
pub use crate::sim::{simulate, CoordinatorKind, Scenario, SimError, SimOutcome};
pub use crate::time::{Tag, TimeError, TimeValue};
pub use crate::trace::{Trace, TraceError, TraceEvent};

/// Max-plus matrix over time values, the matrix type of the analysis.
pub type MaxPlusMatrix = Matrix<TimeValue>;
/// Max-plus matrix over `f64`.
pub type MaxPlusMatrixF64 = Matrix<f64>;
/// Max-plus matrix over `f32`.
pub type MaxPlusMatrixF32 = Matrix<f32>;
