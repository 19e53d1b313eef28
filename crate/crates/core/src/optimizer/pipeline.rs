//! Staged deformation: each stage reweights the quadratic regularizers,
//! refactors the preconditioner and minimizes against one data term.

use std::time::Instant;

use nalgebra::{Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use super::lbfgs::{plbfgs_minimize, LbfgsOptions, StopReason};
use super::precond::factor_preconditioner;
use crate::data_terms::{DataTerm, NearestNeighbor, PartToPart, SmoothingParams};
use crate::energy::{assemble_shape, assemble_sharp, assemble_smooth, combine, QuadraticEnergy, TargetTransform};
use crate::error::{Error, Result};
use crate::mesh::{flatten, unflatten, LabeledPointCloud, Mesh};
use crate::sharp::{build_chains, detect_sharp_edges, SharpChain, DEFAULT_SHARP_THRESHOLD_DEG};
use crate::transforms::OperatorSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    P2p,
    Nn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub data: DataKind,
    pub alpha_shape: f64,
    pub alpha_smooth: f64,
    pub alpha_sharp: f64,
    pub alpha_data: f64,
    pub iterations: usize,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
}

impl Default for StagePlan {
    /// One part-to-part stage, then five nearest-neighbor runs.
    fn default() -> Self {
        Self {
            stages: vec![
                Stage {
                    data: DataKind::P2p,
                    alpha_shape: 1.0,
                    alpha_smooth: 0.0,
                    alpha_sharp: 0.0,
                    alpha_data: 5e4,
                    iterations: 100,
                    runs: 1,
                },
                Stage {
                    data: DataKind::Nn,
                    alpha_shape: 1.0,
                    alpha_smooth: 10.0,
                    alpha_sharp: 10.0,
                    alpha_data: 1e3,
                    iterations: 50,
                    runs: 5,
                },
            ],
        }
    }
}

impl StagePlan {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::EmptyPlan);
        }
        for (i, s) in self.stages.iter().enumerate() {
            let weights = [s.alpha_shape, s.alpha_smooth, s.alpha_sharp, s.alpha_data];
            if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::InvalidParameter(format!("stage {i}: weights must be finite and non-negative")));
            }
            if s.iterations == 0 || s.runs == 0 {
                return Err(Error::InvalidParameter(format!("stage {i}: iterations and runs must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Positions the nearest-neighbor box transforms and assignment are built from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NnReference {
    /// The aligned undeformed vertices, so every run reuses one assignment.
    Initial,
    /// The vertices at the start of each run.
    #[default]
    Current,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOptions {
    pub plan: StagePlan,
    /// Derived from the aligned mesh when absent.
    pub smoothing: Option<SmoothingParams>,
    pub sharp_threshold_deg: f64,
    /// Save vertices every `k` accepted iterations, counted across stages.
    pub checkpoint_stride: Option<usize>,
    pub energy_change: Option<f64>,
    pub freeze_screening: bool,
    pub nn_reference: NnReference,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            plan: StagePlan::default(),
            smoothing: None,
            sharp_threshold_deg: DEFAULT_SHARP_THRESHOLD_DEG,
            checkpoint_stride: None,
            energy_change: None,
            freeze_screening: false,
            nn_reference: NnReference::default(),
        }
    }
}

/// Unweighted term values at one iteration, plus the weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: usize,
    pub run: usize,
    pub iteration: usize,
    pub shape: f64,
    pub smooth: f64,
    pub sharp: f64,
    pub data: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub run: usize,
    pub iterations: usize,
    pub stop: StopReason,
    pub regularization: f64,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Accepted iterations since the start of the pipeline.
    pub iteration: usize,
    pub vertices: Vec<Vector3<f64>>,
}

#[derive(Clone, Debug)]
pub struct DeformationResult {
    pub vertices: Vec<Vector3<f64>>,
    pub trace: Vec<TraceEntry>,
    pub stages: Vec<StageReport>,
    /// Start, every stride, and the final state when a stride is set.
    pub checkpoints: Vec<Checkpoint>,
    pub smoothing: SmoothingParams,
    pub chains: Vec<SharpChain>,
}

/// The regularizers of one mesh, assembled once on the undeformed geometry.
pub struct Regularizers {
    pub shape: QuadraticEnergy,
    pub smooth: QuadraticEnergy,
    pub sharp: QuadraticEnergy,
    pub chains: Vec<SharpChain>,
}

impl Regularizers {
    pub fn new(mesh: &Mesh, target: &TargetTransform, sharp_threshold_deg: f64) -> Result<Self> {
        let ops = OperatorSet::build(mesh)?;
        let sharp_edges = detect_sharp_edges(mesh, sharp_threshold_deg)?;
        let chains = build_chains(mesh, &sharp_edges);
        Ok(Self {
            shape: assemble_shape(&ops, target),
            smooth: assemble_smooth(mesh, &ops),
            sharp: assemble_sharp(&chains, &ops),
            chains,
        })
    }

    pub fn weighted(&self, stage: &Stage) -> Result<QuadraticEnergy> {
        combine(&[
            (&self.shape, stage.alpha_shape),
            (&self.smooth, stage.alpha_smooth),
            (&self.sharp, stage.alpha_sharp),
        ])
    }
}

/// Fits `mesh` to `cloud`, starting from the mesh mapped by `alignment`.
pub fn run_pipeline(
    mesh: &Mesh,
    cloud: &LabeledPointCloud,
    alignment: &Matrix4<f64>,
    options: &PipelineOptions,
) -> Result<DeformationResult> {
    options.plan.validate()?;
    cloud.check_labels_against(mesh)?;
    if options.checkpoint_stride == Some(0) {
        return Err(Error::InvalidParameter("checkpoint stride must be positive".into()));
    }
    let target = TargetTransform::new(*alignment)?;
    let regularizers = Regularizers::new(mesh, &target, options.sharp_threshold_deg)?;
    let initial: Vec<Vector3<f64>> = mesh.vertices().iter().map(|v| target.apply(v)).collect();
    let smoothing = match options.smoothing {
        Some(s) => s,
        None => SmoothingParams::for_mesh(mesh, &initial)?,
    };

    let mut x = flatten(&initial);
    let mut trace = Vec::new();
    let mut stages = Vec::new();
    let mut checkpoints = Vec::new();
    let mut global = 0usize;
    if options.checkpoint_stride.is_some() {
        checkpoints.push(Checkpoint {
            iteration: 0,
            vertices: initial.clone(),
        });
    }

    for (stage_id, stage) in options.plan.stages.iter().enumerate() {
        for run in 0..stage.runs {
            let started = Instant::now();
            let quad = regularizers.weighted(stage)?;
            let precond = factor_preconditioner(&quad)?;
            let data: Box<dyn DataTerm> = match stage.data {
                DataKind::P2p => {
                    let mut term = PartToPart::new(mesh.labels(), cloud.clone(), smoothing)?;
                    term.freeze_screening = options.freeze_screening;
                    Box::new(term)
                }
                DataKind::Nn => {
                    let reference = match options.nn_reference {
                        NnReference::Initial => initial.clone(),
                        NnReference::Current => unflatten(&x),
                    };
                    Box::new(NearestNeighbor::build(&reference, mesh.labels(), cloud.clone())?)
                }
            };
            let lbfgs = LbfgsOptions {
                iterations: stage.iterations,
                energy_change: options.energy_change,
                max_step: match stage.data {
                    DataKind::P2p => Some(smoothing.sigma),
                    DataKind::Nn => None,
                },
                ..Default::default()
            };
            let outcome = plbfgs_minimize(
                &x,
                &quad,
                Some(data.as_ref()),
                stage.alpha_data,
                &precond,
                &lbfgs,
                |record, point| {
                    trace.push(TraceEntry {
                        stage: stage_id,
                        run,
                        iteration: record.iteration,
                        shape: regularizers.shape.value(point)?,
                        smooth: regularizers.smooth.value(point)?,
                        sharp: regularizers.sharp.value(point)?,
                        data: record.data,
                        total: record.total,
                    });
                    if record.iteration > 0 {
                        global += 1;
                        if options.checkpoint_stride.is_some_and(|k| global.is_multiple_of(k)) {
                            checkpoints.push(Checkpoint {
                                iteration: global,
                                vertices: unflatten(point),
                            });
                        }
                    }
                    Ok(())
                },
            )?;
            x = outcome.x;
            stages.push(StageReport {
                stage: stage_id,
                run,
                iterations: outcome.iterations,
                stop: outcome.stop,
                regularization: precond.regularization_used(),
                wall_seconds: started.elapsed().as_secs_f64(),
            });
            if outcome.stop == StopReason::LineSearchFailed {
                break;
            }
        }
    }
    let vertices = unflatten(&x);
    if options.checkpoint_stride.is_some() && checkpoints.last().is_none_or(|c| c.iteration != global) {
        checkpoints.push(Checkpoint {
            iteration: global,
            vertices: vertices.clone(),
        });
    }
    Ok(DeformationResult {
        vertices,
        trace,
        stages,
        checkpoints,
        smoothing,
        chains: regularizers.chains,
    })
}

/// Deforms `source` toward the labeled vertices of `target`.
pub fn morph(source: &Mesh, target: &Mesh, alignment: &Matrix4<f64>, options: &PipelineOptions) -> Result<DeformationResult> {
    run_pipeline(source, &LabeledPointCloud::from_mesh(target), alignment, options)
}
