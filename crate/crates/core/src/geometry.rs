//! Point clouds and the preprocessing applied before encoding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub type Point3 = [f64; 3];

/// Clouds whose centered points all lie within this radius are left unscaled.
pub const DEGENERATE_RADIUS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    labels: Option<Vec<usize>>,
    pub id: Option<String>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, labels: Option<Vec<usize>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidCloud("cloud has no points".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidCloud(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(labels) = &labels {
            if labels.len() != points.len() {
                return Err(Error::InvalidCloud(format!(
                    "{} labels for {} points",
                    labels.len(),
                    points.len()
                )));
            }
        }
        Ok(Self {
            points,
            labels,
            id: None,
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Checks that every label lies in `[0, m)`.
    pub fn validate_labels(&self, m: usize) -> Result<()> {
        if let Some(labels) = &self.labels {
            if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= m) {
                return Err(Error::InvalidCloud(format!(
                    "label {l} at point {i} is outside [0, {m})"
                )));
            }
        }
        Ok(())
    }

    /// Replaces every label through `map`.
    pub fn relabel(&self, map: impl Fn(usize) -> Option<usize>) -> Result<PointCloud> {
        let labels = match &self.labels {
            None => None,
            Some(ls) => Some(
                ls.iter()
                    .enumerate()
                    .map(|(i, &l)| {
                        map(l).ok_or_else(|| Error::LabelMismatch(format!("label {l} at point {i} has no mapping")))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Ok(PointCloud {
            points: self.points.clone(),
            labels,
            id: self.id.clone(),
        })
    }

    /// Sub-cloud made of the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            labels: self.labels.as_ref().map(|ls| indices.iter().map(|&i| ls[i]).collect()),
            id: self.id.clone(),
        }
    }

    pub fn centroid(&self) -> Point3 {
        let mut c = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        let n = self.points.len() as f64;
        c.map(|v| v / n)
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(norm_sq).fold(0.0, f64::max).sqrt()
    }

    pub fn translated(&self, t: Point3) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect(),
            labels: self.labels.clone(),
            id: self.id.clone(),
        }
    }
}

fn norm_sq(p: &Point3) -> f64 {
    p[0] * p[0] + p[1] * p[1] + p[2] * p[2]
}

fn dist_sq(a: &Point3, b: &Point3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    norm_sq(&d)
}

/// Result of [`center_and_scale`].
#[derive(Debug, Clone)]
pub struct Normalized {
    pub cloud: PointCloud,
    pub centroid: Point3,
    /// Factor the centered points were divided by (1 when degenerate).
    pub scale: f64,
    /// All points coincide; the cloud was centered but not scaled.
    pub degenerate: bool,
}

/// Moves the centroid to the origin and scales the farthest point to unit norm.
pub fn center_and_scale(cloud: &PointCloud) -> Normalized {
    let centroid = cloud.centroid();
    let centered: Vec<Point3> = cloud
        .points
        .iter()
        .map(|p| [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]])
        .collect();
    let radius = centered.iter().map(norm_sq).fold(0.0, f64::max).sqrt();
    let degenerate = radius < DEGENERATE_RADIUS;
    let scale = if degenerate { 1.0 } else { radius };
    let points = if degenerate {
        centered
    } else {
        centered.iter().map(|p| p.map(|c| c / scale)).collect()
    };
    Normalized {
        cloud: PointCloud {
            points,
            labels: cloud.labels.clone(),
            id: cloud.id.clone(),
        },
        centroid,
        scale,
        degenerate,
    }
}

/// Greedy farthest point sampling starting at `start`.
///
/// Ties in the running minimum distance go to the lowest index.
pub fn farthest_point_sample(cloud: &PointCloud, k: usize, start: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if k > n {
        return Err(Error::SampleTooLarge { k, n });
    }
    if k == 0 {
        return Err(Error::InvalidCloud("sample size must be at least 1".into()));
    }
    if start >= n {
        return Err(Error::InvalidCloud(format!("start index {start} outside [0, {n})")));
    }
    let pts = &cloud.points;
    let mut min_dist = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(k);
    let mut current = start;
    loop {
        out.push(current);
        taken[current] = true;
        if out.len() == k {
            break;
        }
        let anchor = pts[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = dist_sq(&pts[i], &anchor);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if min_dist[i] > best_d {
                best_d = min_dist[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(out)
}

/// Indices that bring a cloud of `n` points to exactly `n_target` points.
///
/// Downsampling uses farthest point sampling from index 0. Upsampling keeps
/// every point and fills the deficit with indices drawn uniformly with
/// replacement from the `seed` stream.
pub fn resample_indices(cloud: &PointCloud, n_target: usize, seed: u64) -> Result<Vec<usize>> {
    let n = cloud.len();
    if n_target == 0 {
        return Err(Error::InvalidCloud("target size must be at least 1".into()));
    }
    if n >= n_target {
        return farthest_point_sample(cloud, n_target, 0);
    }
    let mut rng = rng::stream(seed, Stream::Resample, 0);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.extend((n..n_target).map(|_| rng.random_range(0..n)));
    Ok(idx)
}

pub fn resample_to_n(cloud: &PointCloud, n_target: usize, seed: u64) -> Result<PointCloud> {
    Ok(cloud.select(&resample_indices(cloud, n_target, seed)?))
}

/// Resamples to `n_target` points, then centers and scales. Returns the
/// prepared cloud and the source index of each of its points.
pub fn prepare_cloud(cloud: &PointCloud, n_target: usize, seed: u64) -> Result<(PointCloud, Vec<usize>)> {
    let idx = resample_indices(cloud, n_target, seed)?;
    let normalized = center_and_scale(&cloud.select(&idx));
    if normalized.degenerate {
        log::warn!(
            "cloud {} is degenerate (all points coincide); left unscaled",
            cloud.id.as_deref().unwrap_or("<unnamed>")
        );
    }
    Ok((normalized.cloud, idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64, extent: f64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n).map(|_| [0; 3].map(|_| rng.random_range(0.0..extent))).collect();
        PointCloud::new(pts, None).unwrap()
    }

    /// Rescans every candidate at every step.
    fn fps_oracle(pts: &[Point3], k: usize, start: usize) -> Vec<usize> {
        let mut sel = vec![start];
        while sel.len() < k {
            let mut best = None;
            let mut best_d = -1.0;
            for i in 0..pts.len() {
                if sel.contains(&i) {
                    continue;
                }
                let d = sel
                    .iter()
                    .map(|&s| dist_sq(&pts[i], &pts[s]))
                    .fold(f64::INFINITY, f64::min);
                if d > best_d {
                    best_d = d;
                    best = Some(i);
                }
            }
            sel.push(best.unwrap());
        }
        sel
    }

    /// Straight-line greedy FPS on true Euclidean distances, O(k·n).
    fn fps_linear_oracle(pts: &[Point3], k: usize) -> Vec<usize> {
        let d = |a: &Point3, b: &Point3| dist_sq(a, b).sqrt();
        let mut nearest: Vec<f64> = pts.iter().map(|p| d(p, &pts[0])).collect();
        let mut sel = vec![0];
        while sel.len() < k {
            let mut best = 0;
            for i in 1..pts.len() {
                if nearest[i] > nearest[best] {
                    best = i;
                }
            }
            sel.push(best);
            for i in 0..pts.len() {
                nearest[i] = nearest[i].min(d(&pts[i], &pts[best]));
            }
        }
        sel
    }

    #[test]
    fn center_and_scale_two_points() {
        let c = PointCloud::new(vec![[1.0, 1.0, 1.0], [3.0, 1.0, 1.0]], Some(vec![0, 1])).unwrap();
        let out = center_and_scale(&c);
        assert_eq!(out.cloud.points(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(out.cloud.labels(), Some(&[0, 1][..]));
        assert!(!out.degenerate);
    }

    #[test]
    fn center_and_scale_identity_on_normalized_input() {
        let c = PointCloud::new(
            vec![[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]],
            None,
        )
        .unwrap();
        let out = center_and_scale(&c);
        assert_eq!(out.cloud.points(), c.points());
    }

    #[test]
    fn center_and_scale_random_cloud() {
        let c = random_cloud(64, 3, 10.0);
        let out = center_and_scale(&c).cloud;
        let centroid = out.centroid();
        assert!(centroid.iter().all(|v| v.abs() < 1e-6));
        assert!((out.max_norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn center_and_scale_degenerate() {
        let c = PointCloud::new(vec![[2.0, 2.0, 2.0]; 5], None).unwrap();
        let out = center_and_scale(&c);
        assert!(out.degenerate);
        assert!(out.cloud.points().iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn fps_colinear() {
        let c = PointCloud::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [10.0, 0.0, 0.0]],
            None,
        )
        .unwrap();
        assert_eq!(farthest_point_sample(&c, 2, 0).unwrap(), vec![0, 3]);
    }

    #[test]
    fn fps_exhaustion_is_permutation() {
        let c = random_cloud(20, 1, 1.0);
        let mut idx = farthest_point_sample(&c, 20, 5).unwrap();
        assert_eq!(idx[0], 5);
        idx.sort();
        assert_eq!(idx, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn fps_matches_oracle() {
        let c = random_cloud(32, 11, 1.0);
        assert_eq!(farthest_point_sample(&c, 4, 0).unwrap(), fps_oracle(c.points(), 4, 0));
    }

    #[test]
    fn fps_ties_pick_lowest_index() {
        let c = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], None).unwrap();
        assert_eq!(farthest_point_sample(&c, 2, 0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn fps_rejects_oversized_request() {
        let c = random_cloud(3, 1, 1.0);
        let err = farthest_point_sample(&c, 4, 0).unwrap_err();
        assert!(err.to_string().contains("sample size exceeds cloud size"));
    }

    #[test]
    fn fps_ignores_appended_duplicates_of_selected_points() {
        let c = random_cloud(30, 4, 1.0);
        let sel = farthest_point_sample(&c, 6, 0).unwrap();
        let mut pts = c.points().to_vec();
        pts.extend(sel.iter().map(|&i| c.points()[i]));
        let dup = PointCloud::new(pts, None).unwrap();
        assert_eq!(farthest_point_sample(&dup, 6, 0).unwrap(), sel);
    }

    #[test]
    fn resample_equal_size_is_reordering() {
        let c = random_cloud(16, 2, 1.0);
        let out = resample_to_n(&c, 16, 0).unwrap();
        let mut a = out.points().to_vec();
        let mut b = c.points().to_vec();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn resample_upsamples_keep_then_fill() {
        let c = PointCloud::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            Some(vec![0, 1, 2]),
        )
        .unwrap();
        for seed in 0..10 {
            let out = resample_to_n(&c, 5, seed).unwrap();
            assert_eq!(out.len(), 5);
            for p in c.points() {
                assert!(out.points().contains(p));
            }
            let labels = out.labels().unwrap();
            for (p, l) in out.points().iter().zip(labels) {
                let src = c.points().iter().position(|q| q == p).unwrap();
                assert_eq!(src, *l);
            }
        }
    }

    #[test]
    fn resample_downsample_matches_oracle() {
        let c = random_cloud(4096, 8, 1.0);
        let idx = resample_indices(&c, 2048, 0).unwrap();
        assert_eq!(idx.len(), 2048);
        assert_eq!(&idx[..24], &fps_oracle(c.points(), 24, 0)[..]);
        assert_eq!(idx, fps_linear_oracle(c.points(), 2048));
        let mut sorted = idx.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 2048);
    }

    #[test]
    fn cloud_rejects_non_finite() {
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]], None).is_err());
        assert!(PointCloud::new(vec![], None).is_err());
        assert!(PointCloud::new(vec![[0.0; 3]], Some(vec![0, 1])).is_err());
    }
}
