//! `caddeform`: fit part-labeled CAD meshes to labeled scans, morph meshes
//! into each other, evaluate fits and export sharp feature chains.
//!
//! Exit codes: 0 success, 1 usage error, 2 input or format error,
//! 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use caddeform::data_terms::SmoothingParams;
use caddeform::io::{self, Alignment9DoF, JobConfig};
use caddeform::metrics::{self, FitReport, DEFAULT_TAU};
use caddeform::optimizer::{morph, run_pipeline, DeformationResult, PipelineOptions};
use caddeform::sharp::{build_chains, chains_to_text, detect_sharp_edges, DEFAULT_SHARP_THRESHOLD_DEG};
use caddeform::{Error, LabeledPointCloud, Mesh};
use clap::{Args, Parser, Subcommand};
use nalgebra::{Matrix4, Vector3};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "caddeform", version, about = "Part-aware CAD mesh deformation to labeled scans")]
struct Cli {
    /// Worker threads for the data-parallel reductions. Reductions run in a
    /// fixed order, so the thread count does not change the results.
    #[arg(long, global = true, env = "CADDEFORM_THREADS", default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deform a labeled mesh onto a labeled point cloud.
    Deform(DeformArgs),
    /// Deform a source mesh onto the vertices of a target mesh.
    Morph(MorphArgs),
    /// Print accuracy, tMMD, DAME and Laplacian error of a deformed mesh.
    Eval(EvalArgs),
    /// Detect sharp edges and write their chains, one per line.
    Sharp(SharpArgs),
}

/// Parameter overrides shared by the deforming commands. Flags win over the
/// config file.
#[derive(Args)]
struct Overrides {
    /// JSON job configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Accuracy threshold for the fit reports.
    #[arg(long)]
    tau: Option<f64>,
    /// Screening radius of the part-to-part term.
    #[arg(long)]
    sigma: Option<f64>,
    /// Attraction radius of the part-to-part term.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Smoothing width of the part-to-part term.
    #[arg(long)]
    beta: Option<f64>,
    /// Dihedral angle in degrees below which an edge is sharp.
    #[arg(long)]
    threshold_deg: Option<f64>,
    /// Save a checkpoint mesh every this many accepted iterations.
    #[arg(long)]
    checkpoint_stride: Option<usize>,
}

#[derive(Args)]
struct DeformArgs {
    /// Mesh in OBJ format.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Per-vertex part labels, one per line.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Labeled scan points, `x y z label` per line.
    #[arg(long)]
    cloud: Option<PathBuf>,
    /// 9-DoF alignment JSON placing the mesh in the scan.
    #[arg(long)]
    alignment: Option<PathBuf>,
    /// Deformed OBJ; the trace and fit report are written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-vertex scan distances after deformation.
    #[arg(long)]
    distances: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct MorphArgs {
    /// Mesh to deform, in OBJ format.
    #[arg(long)]
    source: PathBuf,
    /// Per-vertex part labels of the source.
    #[arg(long)]
    source_labels: PathBuf,
    /// Mesh whose labeled vertices serve as the scan.
    #[arg(long)]
    target: PathBuf,
    /// Per-vertex part labels of the target.
    #[arg(long)]
    target_labels: PathBuf,
    /// Alignment of the source; identity when omitted.
    #[arg(long)]
    alignment: Option<PathBuf>,
    /// Writes `PREFIX.obj`, `PREFIX_iter{k}.obj` checkpoints and reports.
    #[arg(long)]
    out_prefix: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    /// Original mesh in OBJ format.
    #[arg(long)]
    mesh: PathBuf,
    /// Deformed mesh with the same connectivity.
    #[arg(long)]
    deformed: PathBuf,
    /// Scan: an OBJ (vertices are used) or an `x y z label` point file.
    #[arg(long)]
    scan: PathBuf,
    /// Accuracy threshold and tMMD clamp.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
}

#[derive(Args)]
struct SharpArgs {
    /// Mesh in OBJ format.
    #[arg(long)]
    mesh: PathBuf,
    /// Per-vertex part labels; chains never cross a label boundary.
    #[arg(long)]
    labels: PathBuf,
    /// Dihedral angle in degrees below which an edge is sharp.
    #[arg(long, default_value_t = DEFAULT_SHARP_THRESHOLD_DEG)]
    threshold_deg: f64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Core(Error::InvalidParameter(_) | Error::EmptyPlan) => 1,
            Failure::Core(e) if e.is_numerical() => 3,
            Failure::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Core(e) => e.fmt(f),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

#[derive(Serialize)]
struct FitSummary {
    pre: FitReport,
    post: FitReport,
}

#[derive(Serialize)]
struct TraceFile<'a> {
    smoothing: SmoothingParams,
    stages: &'a [caddeform::optimizer::StageReport],
    trace: &'a [caddeform::optimizer::TraceEntry],
}

#[derive(Serialize)]
struct EvalReport {
    accuracy: f64,
    tmmd: f64,
    dame: f64,
    e_lap: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: cannot start thread pool: {e}");
        return ExitCode::from(3);
    }
    let result = match cli.command {
        Command::Deform(a) => deform(a),
        Command::Morph(a) => run_morph(a),
        Command::Eval(a) => eval(a),
        Command::Sharp(a) => sharp(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

/// The config file, if any, with the flag overrides applied on top.
fn job_config(o: &Overrides) -> Result<JobConfig, Failure> {
    let mut c = match &o.config {
        Some(path) => JobConfig::load(path)?,
        None => JobConfig::default(),
    };
    c.tau = o.tau.or(c.tau);
    c.sigma = o.sigma.or(c.sigma);
    c.epsilon = o.epsilon.or(c.epsilon);
    c.beta = o.beta.or(c.beta);
    c.sharp_threshold_deg = o.threshold_deg.or(c.sharp_threshold_deg);
    c.checkpoint_stride = o.checkpoint_stride.or(c.checkpoint_stride);
    c.validate()?;
    Ok(c)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf, Failure> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Failure::Usage(format!("--{name} is required (as a flag or in the config file)")))
}

/// `dir/name.obj` becomes `dir/name`.
fn stem_prefix(path: &Path) -> PathBuf {
    path.with_extension("")
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn aligned(mesh: &Mesh, alignment: &Matrix4<f64>) -> Vec<Vector3<f64>> {
    mesh.vertices()
        .iter()
        .map(|v| alignment.transform_point(&(*v).into()).coords)
        .collect()
}

/// Writes the deformed mesh, checkpoints, trace and pre/post fit report.
fn write_outputs(
    mesh: &Mesh,
    cloud: &LabeledPointCloud,
    alignment: &Matrix4<f64>,
    result: &DeformationResult,
    prefix: &Path,
    tau: f64,
    distances: bool,
) -> Outcome {
    io::save_mesh(&with_suffix(prefix, ".obj"), &result.vertices, mesh.faces())?;
    for c in &result.checkpoints {
        io::save_mesh(&io::checkpoint_path(prefix, c.iteration), &c.vertices, mesh.faces())?;
    }
    io::save_json(
        &with_suffix(prefix, ".trace.json"),
        &TraceFile {
            smoothing: result.smoothing,
            stages: &result.stages,
            trace: &result.trace,
        },
    )?;
    let summary = FitSummary {
        pre: metrics::fit_report(&aligned(mesh, alignment), &cloud.points, tau, false)?,
        post: metrics::fit_report(&result.vertices, &cloud.points, tau, distances)?,
    };
    if let Some(d) = &summary.post.distances {
        io::save_distances(&with_suffix(prefix, ".distances.txt"), d)?;
    }
    let FitSummary { pre, mut post } = summary;
    post.distances = None;
    io::save_json(&with_suffix(prefix, ".fit.json"), &FitSummary { pre, post })?;
    Ok(())
}

fn deform(a: DeformArgs) -> Outcome {
    let config = job_config(&a.overrides)?;
    let mesh_path = required(a.mesh, &config.mesh, "mesh")?;
    let labels_path = required(a.labels, &config.labels, "labels")?;
    let cloud_path = required(a.cloud, &config.cloud, "cloud")?;
    let alignment_path = required(a.alignment, &config.alignment, "alignment")?;
    let out = required(a.out, &config.output, "out")?;
    let mesh = io::load_labeled_mesh(&mesh_path, &labels_path)?;
    let cloud = io::load_cloud(&cloud_path)?;
    let alignment = io::load_alignment(&alignment_path)?.to_matrix()?;
    let options: PipelineOptions = config.pipeline_options(&mesh, &alignment)?;
    let result = run_pipeline(&mesh, &cloud, &alignment, &options)?;
    let tau = config.tau.unwrap_or(DEFAULT_TAU);
    write_outputs(&mesh, &cloud, &alignment, &result, &stem_prefix(&out), tau, a.distances)
}

/// Checkpoint stride used by `morph` when none is configured.
const MORPH_STRIDE: usize = 10;

fn run_morph(a: MorphArgs) -> Outcome {
    let mut config = job_config(&a.overrides)?;
    config.checkpoint_stride = config.checkpoint_stride.or(Some(MORPH_STRIDE));
    let source = io::load_labeled_mesh(&a.source, &a.source_labels)?;
    let target = io::load_labeled_mesh(&a.target, &a.target_labels)?;
    let alignment = match &a.alignment {
        Some(p) => io::load_alignment(p)?,
        None => Alignment9DoF::identity(),
    }
    .to_matrix()?;
    let options = config.pipeline_options(&source, &alignment)?;
    let result = morph(&source, &target, &alignment, &options)?;
    let tau = config.tau.unwrap_or(DEFAULT_TAU);
    let cloud = LabeledPointCloud::from_mesh(&target);
    write_outputs(&source, &cloud, &alignment, &result, &a.out_prefix, tau, false)
}

fn load_scan(path: &Path) -> Result<Vec<Vector3<f64>>, Failure> {
    let is_obj = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj"));
    Ok(if is_obj {
        io::load_mesh(path)?.0
    } else {
        io::load_cloud(path)?.points
    })
}

fn eval(a: EvalArgs) -> Outcome {
    let (vertices, faces) = io::load_mesh(&a.mesh)?;
    let mesh = Mesh::unlabeled(vertices, faces)?;
    let (deformed, deformed_faces) = io::load_mesh(&a.deformed)?;
    if deformed_faces != mesh.faces() {
        return Err(Error::TopologyMismatch(format!(
            "{} does not share the connectivity of {}",
            a.deformed.display(),
            a.mesh.display()
        ))
        .into());
    }
    let scan = load_scan(&a.scan)?;
    let fit = metrics::fit_report(&deformed, &scan, a.tau, false)?;
    let report = EvalReport {
        accuracy: fit.accuracy,
        tmmd: fit.tmmd,
        dame: metrics::dame(&mesh, &deformed)?,
        e_lap: metrics::laplacian_report(&mesh, &deformed)?,
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("plain numbers serialize"));
    Ok(())
}

fn sharp(a: SharpArgs) -> Outcome {
    let mesh = io::load_labeled_mesh(&a.mesh, &a.labels)?;
    let edges = detect_sharp_edges(&mesh, a.threshold_deg)?;
    let text = chains_to_text(&build_chains(&mesh, &edges));
    match &a.out {
        Some(path) => std::fs::write(path, &text).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?,
        None => print!("{text}"),
    }
    Ok(())
}
