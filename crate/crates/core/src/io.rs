//! Text and JSON formats for meshes, labels, clouds, alignments and job
//! configuration. Every loader is strict: a malformed line is an error that
//! names the file and the 1-based line number.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data_terms::SmoothingParams;
use crate::error::{Error, Result};
use crate::mesh::{mean_edge_length_at, LabeledPointCloud, Mesh, PartLabel};
use crate::optimizer::{PipelineOptions, StagePlan};

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_coordinate(token: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| parse_error(path, line, format!("invalid number {token:?}")))?;
    if !v.is_finite() {
        return Err(parse_error(path, line, format!("non-finite coordinate {token:?}")));
    }
    Ok(v)
}

fn parse_label(token: &str, path: &Path, line: usize) -> Result<PartLabel> {
    token
        .parse::<u32>()
        .map(PartLabel)
        .map_err(|_| parse_error(path, line, format!("invalid label {token:?}")))
}

/// 17 significant digits, enough to round-trip any `f64`.
fn push_real(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

fn push_point(out: &mut String, p: &Vector3<f64>) {
    for (k, c) in p.iter().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        push_real(out, *c);
    }
}

/// Vertex positions and triangles read from an OBJ file.
pub type ObjGeometry = (Vec<Vector3<f64>>, Vec<[usize; 3]>);

/// OBJ directives that carry no geometry and are skipped.
const IGNORED_OBJ: [&str; 7] = ["vn", "vt", "o", "g", "s", "usemtl", "mtllib"];

/// Parses the `v x y z` / `f i j k` subset of OBJ. Face entries may carry
/// `/vt/vn` suffixes, which are dropped.
pub fn parse_obj(text: &str, path: &Path) -> Result<ObjGeometry> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut face_lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        let Some(keyword) = tokens.next() else { continue };
        let rest: Vec<&str> = tokens.collect();
        match keyword {
            "v" => {
                if rest.len() != 3 {
                    return Err(parse_error(path, line, format!("vertex needs 3 coordinates, found {}", rest.len())));
                }
                let mut p = Vector3::zeros();
                for k in 0..3 {
                    p[k] = parse_coordinate(rest[k], path, line)?;
                }
                vertices.push(p);
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(parse_error(path, line, format!("only triangles are supported, face has {} corners", rest.len())));
                }
                let mut face = [0; 3];
                for k in 0..3 {
                    let index = rest[k].split('/').next().unwrap_or("");
                    let one_based: usize = index
                        .parse()
                        .ok()
                        .filter(|&v| v >= 1)
                        .ok_or_else(|| parse_error(path, line, format!("invalid vertex index {:?}", rest[k])))?;
                    face[k] = one_based - 1;
                }
                faces.push(face);
                face_lines.push(line);
            }
            k if IGNORED_OBJ.contains(&k) => {}
            other => return Err(parse_error(path, line, format!("unsupported directive {other:?}"))),
        }
    }
    for (face, line) in faces.iter().zip(face_lines) {
        if let Some(&v) = face.iter().find(|&&v| v >= vertices.len()) {
            return Err(parse_error(
                path,
                line,
                format!("vertex index {} exceeds vertex count {}", v + 1, vertices.len()),
            ));
        }
    }
    Ok((vertices, faces))
}

pub fn load_mesh(path: &Path) -> Result<ObjGeometry> {
    parse_obj(&read(path)?, path)
}

pub fn format_obj(vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> String {
    let mut out = String::with_capacity(64 * vertices.len() + 24 * faces.len());
    for p in vertices {
        out.push_str("v ");
        push_point(&mut out, p);
        out.push('\n');
    }
    for f in faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn save_mesh(path: &Path, vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> Result<()> {
    write(path, &format_obj(vertices, faces))
}

/// One non-negative integer per line; blank lines are errors.
pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<PartLabel>> {
    text.lines()
        .enumerate()
        .map(|(i, raw)| parse_label(raw.trim(), path, i + 1))
        .collect()
}

pub fn load_labels(path: &Path) -> Result<Vec<PartLabel>> {
    parse_labels(&read(path)?, path)
}

pub fn save_labels(path: &Path, labels: &[PartLabel]) -> Result<()> {
    let mut out = String::with_capacity(4 * labels.len());
    for l in labels {
        let _ = writeln!(out, "{}", l.0);
    }
    write(path, &out)
}

/// Reads an OBJ and its label file and builds the mesh.
pub fn load_labeled_mesh(mesh_path: &Path, labels_path: &Path) -> Result<Mesh> {
    let (vertices, faces) = load_mesh(mesh_path)?;
    let labels = load_labels(labels_path)?;
    if labels.len() != vertices.len() {
        return Err(parse_error(
            labels_path,
            labels.len(),
            format!("expected {} labels (one per vertex), found {}", vertices.len(), labels.len()),
        ));
    }
    Mesh::new(vertices, faces, labels)
}

/// `x y z label` per line.
pub fn parse_cloud(text: &str, path: &Path) -> Result<LabeledPointCloud> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.len() != 4 {
            return Err(parse_error(path, line, format!("expected `x y z label`, found {} fields", tokens.len())));
        }
        points.push(Vector3::new(
            parse_coordinate(tokens[0], path, line)?,
            parse_coordinate(tokens[1], path, line)?,
            parse_coordinate(tokens[2], path, line)?,
        ));
        labels.push(parse_label(tokens[3], path, line)?);
    }
    LabeledPointCloud::new(points, labels)
}

pub fn load_cloud(path: &Path) -> Result<LabeledPointCloud> {
    parse_cloud(&read(path)?, path)
}

pub fn save_cloud(path: &Path, cloud: &LabeledPointCloud) -> Result<()> {
    let mut out = String::with_capacity(72 * cloud.len());
    for (p, l) in cloud.points.iter().zip(&cloud.labels) {
        push_point(&mut out, p);
        let _ = writeln!(out, " {}", l.0);
    }
    write(path, &out)
}

/// One value per line, in vertex order.
pub fn save_distances(path: &Path, distances: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(24 * distances.len());
    for d in distances {
        push_real(&mut out, *d);
        out.push('\n');
    }
    write(path, &out)
}

/// `prefix_iter{k}.obj`.
pub fn checkpoint_path(prefix: &Path, iteration: usize) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(format!("_iter{iteration}.obj"));
    PathBuf::from(name)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write(path, &text)
}

/// Placement of a model in the scan: translation, rotation and per-axis scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alignment9DoF {
    pub translation: [f64; 3],
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub scale: [f64; 3],
}

impl Alignment9DoF {
    pub fn identity() -> Self {
        Self {
            translation: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let values = self.translation.iter().chain(&self.rotation).chain(&self.scale);
        if values.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("alignment has non-finite entries".into()));
        }
        let norm = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("rotation quaternion has norm {norm}, expected 1")));
        }
        if self.scale.contains(&0.0) {
            return Err(Error::InvalidParameter("scale components must be nonzero".into()));
        }
        Ok(())
    }

    /// `Translate(t) Rotate(q) Scale(s)`.
    pub fn to_matrix(&self) -> Result<Matrix4<f64>> {
        self.validate()?;
        let [w, x, y, z] = self.rotation;
        let rotation = UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z));
        let translation = Translation3::new(self.translation[0], self.translation[1], self.translation[2]);
        let scale = Matrix4::new_nonuniform_scaling(&Vector3::from(self.scale));
        Ok(translation.to_homogeneous() * rotation.to_homogeneous() * scale)
    }
}

pub fn load_alignment(path: &Path) -> Result<Alignment9DoF> {
    let a: Alignment9DoF = load_json(path)?;
    a.validate().map_err(|e| parse_error(path, 1, e.to_string()))?;
    Ok(a)
}

/// Paths and parameter overrides for one job. Every field is optional;
/// command-line flags take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub mesh: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub cloud: Option<PathBuf>,
    pub alignment: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// The default plan when absent.
    pub plan: Option<StagePlan>,
    pub tau: Option<f64>,
    pub sigma: Option<f64>,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub sharp_threshold_deg: Option<f64>,
    pub checkpoint_stride: Option<usize>,
}

impl JobConfig {
    /// Loads the file, resolves relative input paths against its directory
    /// and checks that the inputs exist and the overrides are in range.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: JobConfig = load_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.mesh, &mut config.labels, &mut config.cloud, &mut config.alignment, &mut config.output]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for p in [&config.mesh, &config.labels, &config.cloud, &config.alignment].into_iter().flatten() {
            if !p.exists() {
                return Err(parse_error(path, 1, format!("referenced file {} does not exist", p.display())));
            }
        }
        config.validate().map_err(|e| parse_error(path, 1, e.to_string()))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(plan) = &self.plan {
            plan.validate()?;
        }
        for (name, v) in [("tau", self.tau), ("sigma", self.sigma), ("epsilon", self.epsilon), ("beta", self.beta)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if let Some(t) = self.sharp_threshold_deg {
            if !(t > 0.0 && t < 180.0) {
                return Err(Error::InvalidParameter(format!("sharp threshold must lie in (0, 180), got {t}")));
            }
        }
        if self.checkpoint_stride == Some(0) {
            return Err(Error::InvalidParameter("checkpoint stride must be positive".into()));
        }
        Ok(())
    }

    /// Smoothing parameters: the mesh defaults at the aligned positions, with
    /// any of sigma, epsilon, beta replaced by the overrides.
    pub fn smoothing(&self, mesh: &Mesh, alignment: &Matrix4<f64>) -> Result<Option<SmoothingParams>> {
        if self.sigma.is_none() && self.epsilon.is_none() && self.beta.is_none() {
            return Ok(None);
        }
        let aligned: Vec<Vector3<f64>> = mesh
            .vertices()
            .iter()
            .map(|v| alignment.transform_point(&(*v).into()).coords)
            .collect();
        let base = SmoothingParams::from_edge_length(mean_edge_length_at(mesh, &aligned)?)?;
        SmoothingParams::new(
            self.sigma.unwrap_or(base.sigma),
            self.epsilon.unwrap_or(base.epsilon),
            self.beta.unwrap_or(base.beta),
        )
        .map(Some)
    }

    pub fn pipeline_options(&self, mesh: &Mesh, alignment: &Matrix4<f64>) -> Result<PipelineOptions> {
        self.validate()?;
        let mut options = PipelineOptions {
            smoothing: self.smoothing(mesh, alignment)?,
            checkpoint_stride: self.checkpoint_stride,
            ..Default::default()
        };
        if let Some(plan) = &self.plan {
            options.plan = plan.clone();
        }
        if let Some(t) = self.sharp_threshold_deg {
            options.sharp_threshold_deg = t;
        }
        Ok(options)
    }
}
