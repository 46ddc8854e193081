//! Farthest point sampling and the resample-then-normalize preparation.
//!
//! Samples a synthetic hammer with 4096 surface points, downsamples it with
//! farthest point sampling, and compares how evenly the sample covers the
//! surface against taking the first points.

use openaff::data::{build_synthetic, SplitSizes, SyntheticSpec};
use openaff::geometry::{farthest_point_sample, prepare_cloud, Point3, PointCloud};

/// Largest distance from any input point to its nearest sample.
fn coverage_radius(cloud: &PointCloud, sample: &[usize]) -> f64 {
    let dist = |a: &Point3, b: &Point3| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    let pts = cloud.points();
    pts.iter()
        .map(|p| sample.iter().map(|&s| dist(p, &pts[s])).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

fn main() -> openaff::Result<()> {
    let spec = SyntheticSpec {
        shapes: SplitSizes {
            train: 2,
            val: 0,
            test: 0,
        },
        points_per_shape: 4096,
        ..SyntheticSpec::desk(0)
    };
    let data = build_synthetic(&spec)?;
    let hammer = &data.shapes["train"][1];
    println!("{}: {} points", hammer.id.as_deref().unwrap_or("shape"), hammer.len());

    for k in [64, 256, 1024] {
        let fps = farthest_point_sample(hammer, k, 0)?;
        let first: Vec<usize> = (0..k).collect();
        println!(
            "k = {k:4}: coverage radius fps {:.4}, first-k {:.4}",
            coverage_radius(hammer, &fps),
            coverage_radius(hammer, &first)
        );
    }

    let (prepared, source) = prepare_cloud(hammer, 512, 0)?;
    println!(
        "prepared: {} points, centroid {:?}, max norm {:.6}, first source rows {:?}",
        prepared.len(),
        prepared.centroid().map(|c| (c * 1e12).round() / 1e12),
        prepared.max_norm(),
        &source[..5]
    );
    Ok(())
}
