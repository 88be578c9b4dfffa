//! Construction of equilateral point sets in smooth normed spaces.
//!
//! The pipeline: a deterministic vector generator is stabilized (tail-limit
//! rescaling plus functional-limit elimination), then points are added one at
//! a time by solving a small nonlinear system whose Jacobian is certified by
//! a triangular-dominance matrix gate before each guarded Newton solve.

// Negated comparisons (`!(x <= y)`) reject NaN where the positive form would
// accept it; index loops mirror the (row, column) notation of the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod builder;
pub mod config;
pub mod error;
pub mod matrix;
pub mod newton;
pub mod norm;
pub mod point;
pub mod report;
pub mod sequence;

pub use builder::{BuildParams, ConstructionState, EquilateralSet, PropertyReport, StepLog};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use matrix::{EpsSchedule, GateMatrix};
pub use newton::{DifferentiableMap, GuardCertificate, NewtonOptions, SolveTrace};
pub use norm::{NormOracle, SupportFunctional};
pub use point::Point;
pub use sequence::{SequenceSource, StabilizedSequence, TailPolicy};
