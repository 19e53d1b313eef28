use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by mesh construction, energy assembly, optimization and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("face {face} references vertex {index}, but the mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("face {face} repeats a vertex: {vertices:?}")]
    DegenerateFace { face: usize, vertices: [usize; 3] },
    #[error("edge ({a}, {b}) has {count} incident faces; at most 2 are allowed")]
    NonManifoldEdge { a: usize, b: usize, count: usize },
    #[error("expected {expected} labels (one per vertex), found {found}")]
    LabelCount { expected: usize, found: usize },
    #[error("mesh has no edges")]
    EmptyEdges,
    #[error("vertex {vertex} has no neighbors")]
    IsolatedVertex { vertex: usize },
    #[error("tetrahedron of edge {edge} is degenerate")]
    DegenerateTetra { edge: usize },
    #[error("face {face} has (near) zero area")]
    ZeroAreaFace { face: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("label {0} appears in the point cloud but not on the mesh")]
    UnknownLabel(u32),
    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),
    #[error("point set of size {size} exceeds the exact assignment limit of {limit}")]
    TooLarge { size: usize, limit: usize },
    #[error("matrix factorization failed: {0}")]
    Factorization(String),
    #[error("non-finite energy or gradient at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("empty stage plan")]
    EmptyPlan,
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Factorization(_) | Error::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
