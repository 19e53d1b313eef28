//! Fits a subdivided cube to samples of the same cube stretched 1.5x along x
//! and prints the fit before and after, the surface distortion and the
//! per-run stop reasons.

use std::time::Instant;

use caddeform::metrics::{dame, fit_report, DEFAULT_TAU};
use caddeform::optimizer::{run_pipeline, PipelineOptions};
use caddeform::shapes;
use caddeform::LabeledPointCloud;
use nalgebra::{Matrix4, Vector3};

fn main() -> caddeform::Result<()> {
    let mesh = shapes::subdivide(&shapes::grid_cube(2), 2);
    let stretched: Vec<_> = mesh.vertices().iter().map(|v| Vector3::new(1.5 * v.x, v.y, v.z)).collect();
    let (points, labels) = shapes::sample_surface(&mesh, &stretched, 5000, 7);
    let cloud = LabeledPointCloud::new(points, labels)?;

    let start = Instant::now();
    let result = run_pipeline(&mesh, &cloud, &Matrix4::identity(), &PipelineOptions::default())?;
    let elapsed = start.elapsed().as_secs_f64();

    let ideal = fit_report(&stretched, &cloud.points, DEFAULT_TAU, false)?;
    let pre = fit_report(mesh.vertices(), &cloud.points, DEFAULT_TAU, false)?;
    let post = fit_report(&result.vertices, &cloud.points, DEFAULT_TAU, false)?;
    println!("{} vertices, {} points, {elapsed:.2} s", mesh.vertex_count(), cloud.len());
    println!("exact stretch  accuracy {:6.2}  tmmd {:.5}", ideal.accuracy, ideal.tmmd);
    println!("before         accuracy {:6.2}  tmmd {:.5}", pre.accuracy, pre.tmmd);
    println!("after          accuracy {:6.2}  tmmd {:.5}", post.accuracy, post.tmmd);
    println!("dame {:.4}", dame(&mesh, &result.vertices)?);
    for s in &result.stages {
        println!("stage {} run {}: {} iterations, {:?}, {:.2} s", s.stage, s.run, s.iterations, s.stop, s.wall_seconds);
    }
    Ok(())
}
