//! Graph-level optimization passes and the pipeline that sequences them.

mod constprop;
mod decompose;
pub mod pattern;
mod rewrite;
mod shape_infer;

use thiserror::Error;

use crate::graph::{render_diagnostics, verify, Diagnostic, GraphModule, OpKind};

pub use constprop::{normalization_patterns, pass_constprop, ConstPropStats};
pub use decompose::{decompose_patterns, pass_decompose};
pub use pattern::{RewritePattern, RewriteStats, MAX_SWEEPS};
pub use rewrite::{pass_graph_rewrite, rewrite_patterns};
pub use shape_infer::{pass_shape_inference, ShapeInferenceStats};

#[derive(Debug, Error)]
pub enum PassError {
    #[error("shape mismatch at op #{op} ({kind}): {message}")]
    ShapeMismatch { op: usize, kind: OpKind, message: String },
    #[error("{pass}: no fixpoint after {sweeps} sweeps")]
    FixpointOverflow { pass: &'static str, sweeps: usize },
    #[error("cannot fold {op}: {message}")]
    Fold { op: OpKind, message: String },
    #[error("module invalid after {pass}:\n{}", render_diagnostics(.diagnostics))]
    Invalid {
        pass: &'static str,
        diagnostics: Vec<Diagnostic>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassId {
    Decompose,
    ShapeInference,
    Rewrite,
    ConstProp,
}

impl PassId {
    pub fn name(self) -> &'static str {
        match self {
            PassId::Decompose => "decompose",
            PassId::ShapeInference => "shape-inference",
            PassId::Rewrite => "rewrite",
            PassId::ConstProp => "constprop",
        }
    }
}

/// What each pass did, in run order.
#[derive(Debug, Clone, Default)]
pub struct PipelineReport {
    pub decompose: Option<RewriteStats>,
    pub shape_inference: Option<ShapeInferenceStats>,
    pub rewrite: Option<RewriteStats>,
    pub constprop: Option<ConstPropStats>,
}

/// Ordered passes with enable flags. Shape inference always runs.
#[derive(Debug, Clone)]
pub struct PassPipeline {
    passes: Vec<(PassId, bool)>,
}

impl Default for PassPipeline {
    fn default() -> Self {
        PassPipeline {
            passes: vec![
                (PassId::Decompose, true),
                (PassId::ShapeInference, true),
                (PassId::Rewrite, true),
                (PassId::ConstProp, true),
            ],
        }
    }
}

impl PassPipeline {
    /// Disables a pass. Shape inference cannot be turned off; asking to is ignored.
    pub fn disable(mut self, id: PassId) -> Self {
        if id != PassId::ShapeInference {
            for (p, on) in &mut self.passes {
                if *p == id {
                    *on = false;
                }
            }
        }
        self
    }

    pub fn enabled(&self) -> impl Iterator<Item = PassId> + '_ {
        self.passes.iter().filter(|(_, on)| *on).map(|(p, _)| *p)
    }

    /// Runs the enabled passes in order, re-verifying after each one.
    pub fn run(&self, module: &mut GraphModule) -> Result<PipelineReport, PassError> {
        let mut report = PipelineReport::default();
        for id in self.enabled() {
            match id {
                PassId::Decompose => report.decompose = Some(pass_decompose(module)?),
                PassId::ShapeInference => report.shape_inference = Some(pass_shape_inference(module)?),
                PassId::Rewrite => report.rewrite = Some(pass_graph_rewrite(module)?),
                PassId::ConstProp => report.constprop = Some(pass_constprop(module)?),
            }
            check(module, id.name())?;
        }
        Ok(report)
    }
}

fn check(module: &GraphModule, pass: &'static str) -> Result<(), PassError> {
    let diagnostics = verify(module);
    if diagnostics.is_empty() {
        Ok(())
    } else {
        Err(PassError::Invalid { pass, diagnostics })
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use crate::graph::{reference_eval, GraphModule};
    use crate::tensor::TensorValue;

    /// Deterministic small-integer inputs for a module (keeps f32 sums exact).
    pub fn small_int_inputs(m: &GraphModule, seed: u32) -> Vec<TensorValue> {
        let f = m.main();
        f.inputs
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let dims = f.value_type(*v).shape.static_dims().expect("static input");
                let n: usize = dims.iter().product();
                let data = (0..n)
                    .map(|i| (((i as u32 * 7 + k as u32 * 13 + seed * 31) % 11) as f32) - 5.0)
                    .collect();
                TensorValue::from_f32(&dims, data).unwrap()
            })
            .collect()
    }

    pub fn assert_same_outputs(a: &GraphModule, b: &GraphModule) {
        for seed in 0..3 {
            let inputs = small_int_inputs(a, seed);
            let x = reference_eval(a, &inputs).unwrap();
            let y = reference_eval(b, &inputs).unwrap();
            assert_eq!(x.len(), y.len());
            for (p, q) in x.iter().zip(&y) {
                assert!(p.bit_eq(q), "{p:?} vs {q:?}");
            }
        }
    }
}
