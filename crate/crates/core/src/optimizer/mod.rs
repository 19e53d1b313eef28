//! Preconditioned L-BFGS and the staged deformation pipeline.

pub mod lbfgs;
pub mod pipeline;
pub mod precond;

pub use lbfgs::{plbfgs_minimize, IterationRecord, LbfgsOptions, MinimizeOutcome, StopReason};
pub use pipeline::{
    morph, run_pipeline, Checkpoint, DataKind, DeformationResult, NnReference, PipelineOptions, Regularizers, Stage,
    StagePlan, StageReport, TraceEntry,
};
pub use precond::{factor_preconditioner, Preconditioner};
