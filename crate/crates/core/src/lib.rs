//! A small ONNX-style model compiler in three levels.
//!
//! Models are imported into a dataflow graph ([`graph`]), optimized by graph
//! passes ([`passes`]), lowered to loop nests whose schedules are separate
//! objects ([`loops`]), expanded to affine loops ([`lower`]) and finally run by
//! an interpreter ([`exec`]). [`pipeline`] strings the stages together.

pub mod cli;
pub mod exec;
pub mod graph;
pub mod import;
pub mod loops;
pub mod lower;
pub mod models;
pub mod passes;
pub mod pipeline;
pub mod tensor;

use std::path::PathBuf;

use thiserror::Error;

/// Any failure along the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Import(#[from] import::ImportError),
    #[error(transparent)]
    Pass(#[from] passes::PassError),
    #[error(transparent)]
    Lower(#[from] lower::LowerError),
    #[error(transparent)]
    Loop(#[from] loops::LoopError),
    #[error("loop module failed verification:\n{}", render_loop_diagnostics(.0))]
    InvalidLoopModule(Vec<loops::LoopDiagnostic>),
    #[error(transparent)]
    Exec(#[from] exec::ExecError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn render_loop_diagnostics(d: &[loops::LoopDiagnostic]) -> String {
    d.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}
