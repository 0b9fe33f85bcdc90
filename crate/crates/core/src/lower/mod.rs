//! The two conversions: graph → loop level and loop level → affine level.

mod to_affine;
mod to_loops;

use thiserror::Error;

use crate::loops::{LoopError, ScheduleError};

pub use to_affine::{lower_loops_to_affine, print_affine, AffIv, AffineProgram, AffineStmt};
pub use to_loops::lower_graph_to_loops;

#[derive(Debug, Error)]
pub enum LowerError {
    #[error("value {value} has non-static type {ty}; only static shapes can be lowered")]
    DynamicShapeUnsupported { value: String, ty: String },
    #[error("value {value} has no elements")]
    EmptyTensor { value: String },
    #[error("cannot lower {op}: {message}")]
    Unsupported { op: String, message: String },
    #[error("schedule of iterate #{iterate} does not expand: {source}")]
    ScheduleExpansion { iterate: usize, source: ScheduleError },
    #[error(transparent)]
    Loop(#[from] LoopError),
}
