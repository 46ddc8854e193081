//! Datasets on disk and synthetic stand-ins.
//!
//! A dataset is a JSON manifest next to a directory of ASCII shape files:
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "labels": ["grasp", "contain", "grab"],
//!   "seen_labels": ["grasp", "contain"],
//!   "splits": { "train": ["shapes/train_0000.xyz"], "test": ["shapes/test_0000.xyz"] }
//! }
//! ```
//!
//! Shape files hold one point per line, `x y z label_id`, with `#` starting a
//! comment. Label ids index `labels`. Paths are relative to the manifest.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::head::EmbeddingTable;
use crate::rng::{self, Stream};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Index in this list is the ground-truth id used in shape files.
    pub labels: Vec<String>,
    /// Labels allowed in the training split.
    pub seen_labels: Vec<String>,
    pub splits: BTreeMap<String, Vec<PathBuf>>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest version {}",
                self.format_version
            )));
        }
        if self.labels.is_empty() {
            return Err(Error::Format("manifest has no labels".into()));
        }
        for (i, l) in self.labels.iter().enumerate() {
            if self.labels[..i].contains(l) {
                return Err(Error::Format(format!("duplicate label `{l}` in manifest")));
            }
        }
        if let Some(l) = self.seen_labels.iter().find(|l| !self.labels.contains(l)) {
            return Err(Error::Format(format!("seen label `{l}` is not in the label list")));
        }
        Ok(())
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn seen_ids(&self) -> Vec<usize> {
        self.seen_labels.iter().filter_map(|l| self.label_id(l)).collect()
    }

    pub fn unseen_labels(&self) -> Vec<String> {
        self.labels
            .iter()
            .filter(|l| !self.seen_labels.contains(l))
            .cloned()
            .collect()
    }

    pub fn split(&self, name: &str) -> &[PathBuf] {
        self.splits.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.validate()?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeRecord {
    pub cloud: PointCloud,
    pub path: PathBuf,
}

/// Parses `x y z [label_id]` lines. A label column is required when
/// `num_labels` is given and must then be below it.
fn parse_points(text: &str, path: &Path, num_labels: Option<usize>) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let want = if num_labels.is_some() { 4 } else { 3 };
        if fields.len() != want && !(num_labels.is_none() && fields.len() == 4) {
            return Err(err(format!("expected {want} fields, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = fields[a]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("bad coordinate `{}`", fields[a])))?;
        }
        points.push(p);
        if let Some(m) = num_labels {
            let id: usize = fields[3]
                .parse()
                .map_err(|_| err(format!("bad label id `{}`", fields[3])))?;
            if id >= m {
                return Err(err(format!("label id {id} out of range [0, {m})")));
            }
            labels.push(id);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyShape(path.to_path_buf()));
    }
    PointCloud::new(points, num_labels.map(|_| labels))
}

/// Loads a labeled shape file.
pub fn load_shape(path: impl AsRef<Path>, num_labels: usize) -> Result<ShapeRecord> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cloud = parse_points(&text, path, Some(num_labels))?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    Ok(ShapeRecord {
        cloud: match id {
            Some(id) => cloud.with_id(id),
            None => cloud,
        },
        path: path.to_path_buf(),
    })
}

/// Loads an unlabeled (or labeled, labels ignored) point file.
pub fn load_points(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_points(&text, path, None)
}

/// Shape-file text, 9 significant digits per coordinate.
pub fn format_shape(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 56);
    if let Some(id) = &cloud.id {
        let _ = writeln!(out, "# {id}");
    }
    let labels = cloud.labels();
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(out, "{:.8e} {:.8e} {:.8e}", p[0], p[1], p[2]);
        if let Some(ls) = labels {
            let _ = write!(out, " {}", ls[i]);
        }
        out.push('\n');
    }
    out
}

pub fn write_shape(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_shape(cloud)).map_err(|e| Error::io(path, e))
}

/// A manifest with every split loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub splits: BTreeMap<String, Vec<ShapeRecord>>,
}

impl Dataset {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest = load_manifest(manifest_path)?;
        let m = manifest.labels.len();
        let mut splits = BTreeMap::new();
        for (name, paths) in &manifest.splits {
            let shapes = paths
                .iter()
                .map(|p| load_shape(manifest.resolve(p), m))
                .collect::<Result<Vec<_>>>()?;
            splits.insert(name.clone(), shapes);
        }
        let ds = Self { manifest, splits };
        ds.check_zero_shot()?;
        Ok(ds)
    }

    pub fn split(&self, name: &str) -> &[ShapeRecord] {
        self.splits.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Training shapes may only use seen labels.
    pub fn check_zero_shot(&self) -> Result<()> {
        let seen = self.manifest.seen_ids();
        for shape in self.split("train") {
            if let Some(&l) = shape.cloud.labels().unwrap_or(&[]).iter().find(|l| !seen.contains(l)) {
                return Err(Error::LabelMismatch(format!(
                    "training shape {} uses unseen label `{}`",
                    shape.path.display(),
                    self.manifest.labels[l]
                )));
            }
        }
        Ok(())
    }
}

/// Points per manifest label over a list of shapes.
pub fn label_counts(shapes: &[ShapeRecord], num_labels: usize) -> Vec<usize> {
    let mut counts = vec![0; num_labels];
    for s in shapes {
        for &l in s.cloud.labels().unwrap_or(&[]) {
            counts[l] += 1;
        }
    }
    counts
}

// ---------------------------------------------------------------------------
// Synthetic shapes

/// Parametric surfaces shapes are assembled from. `axis` need not be unit
/// length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    /// Lateral surface of a cylinder (no caps).
    Cylinder {
        center: Point3,
        axis: Point3,
        radius: f64,
        height: f64,
    },
    Disk {
        center: Point3,
        axis: Point3,
        radius: f64,
    },
    /// Torus around `axis`; `arc` is the covered fraction of the ring,
    /// centered on the frame's first perpendicular direction.
    Torus {
        center: Point3,
        axis: Point3,
        major: f64,
        minor: f64,
        #[serde(default = "one")]
        arc: f64,
    },
    /// Surface of an axis-aligned box.
    Cuboid {
        center: Point3,
        half_extents: Point3,
    },
    Sphere {
        center: Point3,
        radius: f64,
    },
    /// Half sphere on the `-axis` side of `center`.
    Hemisphere {
        center: Point3,
        axis: Point3,
        radius: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn normalize(v: Point3) -> Point3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|c| c / n)
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Orthonormal `(e1, e2, axis)` with `e1` chosen deterministically.
pub fn frame(axis: Point3) -> (Point3, Point3, Point3) {
    let a = normalize(axis);
    let helper = if a[2].abs() < 0.9 {
        [0.0, 0.0, 1.0]
    } else {
        [1.0, 0.0, 0.0]
    };
    let e1 = normalize(cross(a, helper));
    let e2 = cross(a, e1);
    (e1, e2, a)
}

fn combine(center: Point3, terms: &[(f64, Point3)]) -> Point3 {
    let mut p = center;
    for (s, v) in terms {
        for a in 0..3 {
            p[a] += s * v[a];
        }
    }
    p
}

impl Primitive {
    pub fn area(&self) -> f64 {
        match *self {
            Primitive::Cylinder { radius, height, .. } => 2.0 * PI * radius * height,
            Primitive::Disk { radius, .. } => PI * radius * radius,
            Primitive::Torus { major, minor, arc, .. } => 4.0 * PI * PI * major * minor * arc,
            Primitive::Cuboid { half_extents: h, .. } => 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]),
            Primitive::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Primitive::Hemisphere { radius, .. } => 2.0 * PI * radius * radius,
        }
    }

    /// Copy with every length multiplied by `factor` (centers unchanged).
    pub fn resized(&self, factor: f64) -> Primitive {
        let mut p = self.clone();
        match &mut p {
            Primitive::Cylinder { radius, height, .. } => {
                *radius *= factor;
                *height *= factor;
            }
            Primitive::Disk { radius, .. }
            | Primitive::Sphere { radius, .. }
            | Primitive::Hemisphere { radius, .. } => *radius *= factor,
            Primitive::Torus { major, minor, .. } => {
                *major *= factor;
                *minor *= factor;
            }
            Primitive::Cuboid { half_extents, .. } => *half_extents = half_extents.map(|v| v * factor),
        }
        p
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Primitive::Cylinder {
                radius, height, axis, ..
            } => radius > 0.0 && height > 0.0 && axis != [0.0; 3],
            Primitive::Disk { radius, axis, .. } | Primitive::Hemisphere { radius, axis, .. } => {
                radius > 0.0 && axis != [0.0; 3]
            }
            Primitive::Torus {
                major,
                minor,
                arc,
                axis,
                ..
            } => major > 0.0 && minor > 0.0 && arc > 0.0 && arc <= 1.0 && axis != [0.0; 3],
            Primitive::Cuboid { half_extents, .. } => half_extents.iter().all(|&h| h > 0.0),
            Primitive::Sphere { radius, .. } => radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid primitive {self:?}")))
        }
    }

    /// A point drawn uniformly (by area) from the surface.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Point3 {
        match *self {
            Primitive::Cylinder {
                center,
                axis,
                radius,
                height,
            } => {
                let (e1, e2, a) = frame(axis);
                let t = rng.random_range(0.0..2.0 * PI);
                let h = rng.random_range(-0.5..0.5) * height;
                combine(center, &[(radius * t.cos(), e1), (radius * t.sin(), e2), (h, a)])
            }
            Primitive::Disk { center, axis, radius } => {
                let (e1, e2, _) = frame(axis);
                let r = radius * rng.random::<f64>().sqrt();
                let t = rng.random_range(0.0..2.0 * PI);
                combine(center, &[(r * t.cos(), e1), (r * t.sin(), e2)])
            }
            Primitive::Torus {
                center,
                axis,
                major,
                minor,
                arc,
            } => {
                let (e1, e2, a) = frame(axis);
                // area density ∝ (R + r cos v); rejection on v
                let v = loop {
                    let v = rng.random_range(0.0..2.0 * PI);
                    if rng.random::<f64>() * (major + minor) <= major + minor * v.cos() {
                        break v;
                    }
                };
                let u = rng.random_range(-0.5..0.5) * arc * 2.0 * PI;
                let ring = major + minor * v.cos();
                combine(
                    center,
                    &[(ring * u.cos(), e1), (ring * u.sin(), e2), (minor * v.sin(), a)],
                )
            }
            Primitive::Cuboid {
                center,
                half_extents: h,
            } => {
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random::<f64>() * total;
                let mut axis = 2;
                for (k, &a) in areas.iter().enumerate() {
                    if pick < a {
                        axis = k;
                        break;
                    }
                    pick -= a;
                }
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = center[k]
                        + if k == axis {
                            sign * h[k]
                        } else {
                            rng.random_range(-1.0..1.0) * h[k]
                        };
                }
                p
            }
            Primitive::Sphere { center, radius } => {
                let d = unit_gaussian(rng);
                combine(center, &[(radius, d)])
            }
            Primitive::Hemisphere { center, axis, radius } => {
                let a = normalize(axis);
                let mut d = unit_gaussian(rng);
                let along = d[0] * a[0] + d[1] * a[1] + d[2] * a[2];
                if along > 0.0 {
                    d = combine(d, &[(-2.0 * along, a)]);
                }
                combine(center, &[(radius, d)])
            }
        }
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v: Point3 = [0; 3].map(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return v.map(|c| c / n);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Part {
    pub label: String,
    pub primitive: Primitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub name: String,
    pub parts: Vec<Part>,
}

impl Template {
    fn labels(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().map(|p| p.label.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub shapes: SplitSizes,
    pub points_per_shape: usize,
    /// Ground-truth label order.
    pub labels: Vec<String>,
    /// Labels kept out of the training split.
    #[serde(default)]
    pub unseen_labels: Vec<String>,
    pub templates: Vec<Template>,
    /// Standard deviation of the Gaussian noise added to every point.
    pub jitter: f64,
    /// Each part is resized by a factor drawn from `[1 − v, 1 + v]`.
    #[serde(default)]
    pub size_variation: f64,
    pub seed: u64,
}

fn part(label: &str, primitive: Primitive) -> Part {
    Part {
        label: label.into(),
        primitive,
    }
}

fn builtin_templates() -> Vec<Template> {
    use Primitive::*;
    let z = [0.0, 0.0, 1.0];
    let x = [1.0, 0.0, 0.0];
    let y = [0.0, 1.0, 0.0];
    let t = |name: &str, parts: Vec<Part>| Template {
        name: name.into(),
        parts,
    };
    vec![
        t(
            "mug",
            vec![
                part(
                    "wrap-grasp",
                    Cylinder {
                        center: [0.0, 0.0, 0.0],
                        axis: z,
                        radius: 0.35,
                        height: 0.8,
                    },
                ),
                part(
                    "contain",
                    Disk {
                        center: [0.0, 0.0, -0.32],
                        axis: z,
                        radius: 0.33,
                    },
                ),
                part(
                    "grasp",
                    Torus {
                        center: [0.38, 0.0, 0.0],
                        axis: y,
                        major: 0.22,
                        minor: 0.05,
                        arc: 0.55,
                    },
                ),
            ],
        ),
        t(
            "hammer",
            vec![
                part(
                    "grasp",
                    Cylinder {
                        center: [0.0, 0.0, -0.1],
                        axis: z,
                        radius: 0.06,
                        height: 1.2,
                    },
                ),
                part(
                    "pound",
                    Cuboid {
                        center: [0.0, 0.0, 0.6],
                        half_extents: [0.32, 0.09, 0.09],
                    },
                ),
            ],
        ),
        t(
            "knife",
            vec![
                part(
                    "grasp",
                    Cylinder {
                        center: [-0.5, 0.0, 0.0],
                        axis: x,
                        radius: 0.07,
                        height: 0.5,
                    },
                ),
                part(
                    "cut",
                    Cuboid {
                        center: [0.32, 0.0, 0.0],
                        half_extents: [0.45, 0.012, 0.1],
                    },
                ),
            ],
        ),
        t(
            "bottle",
            vec![
                part(
                    "wrap-grasp",
                    Cylinder {
                        center: [0.0, 0.0, -0.2],
                        axis: z,
                        radius: 0.3,
                        height: 0.9,
                    },
                ),
                part(
                    "grasp",
                    Cylinder {
                        center: [0.0, 0.0, 0.42],
                        axis: z,
                        radius: 0.1,
                        height: 0.34,
                    },
                ),
                part(
                    "openable",
                    Cylinder {
                        center: [0.0, 0.0, 0.64],
                        axis: z,
                        radius: 0.12,
                        height: 0.1,
                    },
                ),
            ],
        ),
        t(
            "table",
            vec![
                part(
                    "support",
                    Cuboid {
                        center: [0.0, 0.0, 0.35],
                        half_extents: [0.6, 0.4, 0.04],
                    },
                ),
                part(
                    "support",
                    Cylinder {
                        center: [0.5, 0.3, 0.0],
                        axis: z,
                        radius: 0.04,
                        height: 0.66,
                    },
                ),
                part(
                    "support",
                    Cylinder {
                        center: [-0.5, 0.3, 0.0],
                        axis: z,
                        radius: 0.04,
                        height: 0.66,
                    },
                ),
                part(
                    "support",
                    Cylinder {
                        center: [0.5, -0.3, 0.0],
                        axis: z,
                        radius: 0.04,
                        height: 0.66,
                    },
                ),
                part(
                    "support",
                    Cylinder {
                        center: [-0.5, -0.3, 0.0],
                        axis: z,
                        radius: 0.04,
                        height: 0.66,
                    },
                ),
            ],
        ),
    ]
}

impl SyntheticSpec {
    /// Closed-set desk-scale dataset: 7 labels, 220 shapes of 512 points.
    pub fn desk(seed: u64) -> Self {
        Self {
            shapes: SplitSizes {
                train: 160,
                val: 20,
                test: 40,
            },
            points_per_shape: 512,
            labels: ["grasp", "contain", "wrap-grasp", "pound", "cut", "openable", "support"]
                .map(String::from)
                .to_vec(),
            unseen_labels: vec![],
            templates: builtin_templates(),
            jitter: 0.005,
            size_variation: 0.15,
            seed,
        }
    }

    /// As [`SyntheticSpec::desk`] plus a cup template whose handle carries
    /// the unseen label `grab`. The cup is mug-like, so its handle sits where
    /// the network has learned `grasp`.
    pub fn zero_shot(seed: u64) -> Self {
        use Primitive::*;
        let mut spec = Self::desk(seed);
        spec.labels.push("grab".into());
        spec.unseen_labels = vec!["grab".into()];
        spec.templates.push(Template {
            name: "cup".into(),
            parts: vec![
                part(
                    "wrap-grasp",
                    Cylinder {
                        center: [0.0, 0.0, 0.0],
                        axis: [0.0, 0.0, 1.0],
                        radius: 0.4,
                        height: 0.65,
                    },
                ),
                part(
                    "contain",
                    Disk {
                        center: [0.0, 0.0, -0.25],
                        axis: [0.0, 0.0, 1.0],
                        radius: 0.38,
                    },
                ),
                part(
                    "grab",
                    Torus {
                        center: [0.43, 0.0, 0.0],
                        axis: [0.0, 1.0, 0.0],
                        major: 0.2,
                        minor: 0.05,
                        arc: 0.55,
                    },
                ),
            ],
        });
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.labels.len() < 2 {
            return bad("synthetic spec needs at least 2 labels".into());
        }
        if self.jitter.is_nan() || self.jitter < 0.0 || !(0.0..1.0).contains(&self.size_variation) {
            return bad("jitter must be ≥ 0 and size variation in [0, 1)".into());
        }
        if self.points_per_shape == 0 || self.templates.is_empty() {
            return bad("need at least one template and one point per shape".into());
        }
        for (i, l) in self.labels.iter().enumerate() {
            if self.labels[..i].contains(l) {
                return bad(format!("duplicate label `{l}`"));
            }
        }
        if let Some(l) = self.unseen_labels.iter().find(|l| !self.labels.contains(l)) {
            return bad(format!("unseen label `{l}` is not in the label list"));
        }
        for t in &self.templates {
            if t.parts.is_empty() {
                return bad(format!("template `{}` has no parts", t.name));
            }
            for p in &t.parts {
                if !self.labels.contains(&p.label) {
                    return bad(format!("template `{}` uses unknown label `{}`", t.name, p.label));
                }
                p.primitive.validate()?;
            }
        }
        Ok(())
    }

    fn is_seen_only(&self, t: &Template) -> bool {
        t.labels().all(|l| !self.unseen_labels.iter().any(|u| u == l))
    }

    pub fn seen_labels(&self) -> Vec<String> {
        self.labels
            .iter()
            .filter(|l| !self.unseen_labels.contains(l))
            .cloned()
            .collect()
    }
}

/// Samples one shape from `template`; returned labels index `labels`.
pub fn sample_shape(
    template: &Template,
    labels: &[String],
    points: usize,
    jitter: f64,
    size_variation: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PointCloud> {
    let parts: Vec<(usize, Primitive)> = template
        .parts
        .iter()
        .map(|p| {
            let factor = if size_variation > 0.0 {
                rng.random_range(1.0 - size_variation..=1.0 + size_variation)
            } else {
                1.0
            };
            let id = labels.iter().position(|l| *l == p.label).expect("validated label");
            (id, p.primitive.resized(factor))
        })
        .collect();
    // largest-remainder allocation of points by area
    let areas: Vec<f64> = parts.iter().map(|(_, p)| p.area()).collect();
    let total: f64 = areas.iter().sum();
    let exact: Vec<f64> = areas.iter().map(|a| a / total * points as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..parts.len()).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .partial_cmp(&(exact[a] - exact[a].floor()))
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut missing = points - counts.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        counts[k] += 1;
        missing -= 1;
    }
    let noise = Normal::new(0.0, jitter.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut pts = Vec::with_capacity(points);
    let mut ids = Vec::with_capacity(points);
    for ((id, prim), &count) in parts.iter().zip(&counts) {
        for _ in 0..count {
            let mut p = prim.sample(rng);
            if jitter > 0.0 {
                for c in p.iter_mut() {
                    *c += noise.sample(rng);
                }
            }
            pts.push(p);
            ids.push(*id);
        }
    }
    Ok(PointCloud::new(pts, Some(ids))?.with_id(template.name.clone()))
}

/// Generated shapes by split, plus the manifest describing them.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub shapes: BTreeMap<String, Vec<PointCloud>>,
}

impl SyntheticDataset {
    /// In-memory [`Dataset`] with the paths the files would be written to.
    pub fn into_dataset(self) -> Dataset {
        let mut splits = BTreeMap::new();
        for (name, clouds) in self.shapes {
            let records = clouds
                .into_iter()
                .zip(self.manifest.split(&name))
                .map(|(cloud, path)| ShapeRecord {
                    cloud,
                    path: path.clone(),
                })
                .collect();
            splits.insert(name, records);
        }
        Dataset {
            manifest: self.manifest,
            splits,
        }
    }
}

/// Builds the dataset in memory. Training shapes cycle through templates
/// that only use seen labels; validation and test shapes cycle through all.
pub fn build_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let seen_templates: Vec<&Template> = spec.templates.iter().filter(|t| spec.is_seen_only(t)).collect();
    if seen_templates.is_empty() {
        return Err(Error::TrainingSplit("every template contains an unseen label".into()));
    }
    for l in spec.seen_labels() {
        if !seen_templates.iter().any(|t| t.labels().any(|x| x == l)) {
            return Err(Error::TrainingSplit(format!(
                "seen label `{l}` occurs only in templates with unseen labels"
            )));
        }
    }
    let all_templates: Vec<&Template> = spec.templates.iter().collect();
    let mut shapes = BTreeMap::new();
    let mut splits = BTreeMap::new();
    for (split_idx, (name, count, pool)) in [
        ("train", spec.shapes.train, &seen_templates),
        ("val", spec.shapes.val, &all_templates),
        ("test", spec.shapes.test, &all_templates),
    ]
    .into_iter()
    .enumerate()
    {
        let mut clouds = Vec::with_capacity(count);
        let mut paths = Vec::with_capacity(count);
        for i in 0..count {
            let template = pool[i % pool.len()];
            let mut rng = rng::stream(spec.seed, Stream::Synthetic, ((split_idx as u64) << 32) | i as u64);
            let cloud = sample_shape(
                template,
                &spec.labels,
                spec.points_per_shape,
                spec.jitter,
                spec.size_variation,
                &mut rng,
            )?;
            let file = format!("{name}_{i:04}_{}.xyz", template.name);
            clouds.push(cloud.with_id(file.trim_end_matches(".xyz").to_string()));
            paths.push(PathBuf::from("shapes").join(file));
        }
        shapes.insert(name.to_string(), clouds);
        splits.insert(name.to_string(), paths);
    }
    Ok(SyntheticDataset {
        manifest: DatasetManifest {
            format_version: MANIFEST_VERSION,
            labels: spec.labels.clone(),
            seen_labels: spec.seen_labels(),
            splits,
            base_dir: PathBuf::new(),
        },
        shapes,
    })
}

/// Writes `manifest.json` and `shapes/*.xyz` under `out_dir`; returns the
/// manifest path.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    let ds = build_synthetic(spec)?;
    let shapes_dir = out_dir.join("shapes");
    std::fs::create_dir_all(&shapes_dir).map_err(|e| Error::io(&shapes_dir, e))?;
    for (split, clouds) in &ds.shapes {
        for (cloud, path) in clouds.iter().zip(ds.manifest.split(split)) {
            write_shape(out_dir.join(path), cloud)?;
        }
    }
    let manifest_path = out_dir.join("manifest.json");
    ds.manifest.save(&manifest_path)?;
    Ok(manifest_path)
}

// ---------------------------------------------------------------------------
// Synthetic label embeddings

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "plan", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingPlan {
    /// Distinct orthonormal rows.
    Orthonormal,
    /// Each `(anchor, partner)` pair gets cosine `cosine`; every other pair
    /// is orthogonal. Anchor rows equal the orthonormal plan's rows for the
    /// same seed.
    Paired { pairs: Vec<(String, String)>, cosine: f64 },
}

pub const DEFAULT_PAIR_COSINE: f64 = 0.9;

/// Orthonormal rows via two passes of modified Gram–Schmidt.
fn orthonormal_rows(m: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((m, dim));
    for i in 0..m {
        loop {
            let mut v: ndarray::Array1<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            for _ in 0..2 {
                for k in 0..i {
                    let proj = v.dot(&q.row(k));
                    v.scaled_add(-proj, &q.row(k));
                }
            }
            let n = v.dot(&v).sqrt();
            if n > 1e-6 {
                q.row_mut(i).assign(&(v / n));
                break;
            }
        }
    }
    q
}

pub fn synthetic_embeddings(labels: &[String], dim: usize, seed: u64, plan: &EmbeddingPlan) -> Result<EmbeddingTable> {
    let m = labels.len();
    if dim < m {
        return Err(Error::Plan(format!(
            "{m} labels need dimension ≥ {m} for distinct orthonormal rows, got {dim}"
        )));
    }
    let mut rng = rng::stream(seed, Stream::Embeddings, 0);
    let mut vectors = orthonormal_rows(m, dim, &mut rng);
    let source = match plan {
        EmbeddingPlan::Orthonormal => format!("synthetic:orthonormal:seed={seed}"),
        EmbeddingPlan::Paired { pairs, cosine } => {
            if !(-1.0 < *cosine && *cosine < 1.0) {
                return Err(Error::Plan(format!("target cosine {cosine} must lie in (-1, 1)")));
            }
            let mut used: Vec<&str> = Vec::new();
            let base = vectors.clone();
            for (a, b) in pairs {
                if a == b {
                    return Err(Error::Plan(format!("label `{a}` paired with itself")));
                }
                for l in [a, b] {
                    if used.contains(&l.as_str()) {
                        return Err(Error::Plan(format!(
                            "label `{l}` appears in two pairs; their cosines would conflict"
                        )));
                    }
                    used.push(l);
                }
                let ia = labels
                    .iter()
                    .position(|l| l == a)
                    .ok_or_else(|| Error::Plan(format!("unknown label `{a}`")))?;
                let ib = labels
                    .iter()
                    .position(|l| l == b)
                    .ok_or_else(|| Error::Plan(format!("unknown label `{b}`")))?;
                let row = &base.row(ia) * *cosine + &base.row(ib) * (1.0 - cosine * cosine).sqrt();
                vectors.row_mut(ib).assign(&row);
            }
            format!("synthetic:paired:cos={cosine}:seed={seed}")
        }
    };
    EmbeddingTable::new(labels.to_vec(), vectors, source)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parse_two_line_file() {
        let c = parse_points("0 0 0 0\n1 0 0 1\n", Path::new("t.xyz"), Some(2)).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.labels(), Some(&[0, 1][..]));
    }

    #[test]
    fn comments_only_is_empty_shape() {
        let err = parse_points("# a\n  # b\n\n", Path::new("t.xyz"), Some(2)).unwrap_err();
        assert!(err.to_string().contains("empty shape"));
    }

    #[test]
    fn parse_errors_report_line_numbers() {
        let err = parse_points("0 0 0 0\n# c\n1 0 0 5\n", Path::new("t.xyz"), Some(2)).unwrap_err();
        assert!(err.to_string().contains("t.xyz:3"), "{err}");
        let err = parse_points("0 0 zero 0\n", Path::new("t.xyz"), Some(2)).unwrap_err();
        assert!(err.to_string().contains(":1"), "{err}");
        let err = parse_points("0 0 0\n", Path::new("t.xyz"), Some(2)).unwrap_err();
        assert!(err.to_string().contains("expected 4 fields"), "{err}");
    }

    #[test]
    fn jitter_free_cylinder_lies_on_surface() {
        let cyl = Primitive::Cylinder {
            center: [0.1, -0.2, 0.3],
            axis: [1.0, 1.0, 0.0],
            radius: 0.25,
            height: 0.7,
        };
        let t = Template {
            name: "c".into(),
            parts: vec![part("a", cyl.clone())],
        };
        let mut rng = rng::stream(1, Stream::Synthetic, 0);
        let c = sample_shape(&t, &labels(&["a", "b"]), 300, 0.0, 0.0, &mut rng).unwrap();
        let a = normalize([1.0, 1.0, 0.0]);
        for p in c.points() {
            let d = [p[0] - 0.1, p[1] + 0.2, p[2] - 0.3];
            let along = d[0] * a[0] + d[1] * a[1] + d[2] * a[2];
            let radial_sq = d.iter().map(|v| v * v).sum::<f64>() - along * along;
            assert!((radial_sq - 0.0625).abs() < 1e-9);
            assert!(along.abs() <= 0.35 + 1e-12);
        }
    }

    #[test]
    fn synthetic_build_is_deterministic_and_zero_shot_safe() {
        let spec = SyntheticSpec {
            shapes: SplitSizes {
                train: 6,
                val: 3,
                test: 6,
            },
            points_per_shape: 64,
            ..SyntheticSpec::zero_shot(3)
        };
        let a = build_synthetic(&spec).unwrap();
        let b = build_synthetic(&spec).unwrap();
        assert_eq!(a.shapes, b.shapes);
        let grab = spec.labels.iter().position(|l| l == "grab").unwrap();
        for c in &a.shapes["train"] {
            assert!(!c.labels().unwrap().contains(&grab));
            assert_eq!(c.len(), 64);
        }
        assert!(a.shapes["test"].iter().any(|c| c.labels().unwrap().contains(&grab)));
        assert_eq!(a.manifest.seen_labels.len(), spec.labels.len() - 1);
    }

    #[test]
    fn unbuildable_training_split_errors() {
        let mut spec = SyntheticSpec::desk(0);
        spec.unseen_labels = vec!["grasp".into()];
        let err = build_synthetic(&spec).unwrap_err();
        assert!(err.to_string().contains("cannot build training split"), "{err}");
    }

    #[test]
    fn orthonormal_plan_gram_is_identity() {
        let ls = labels(&["a", "b", "c", "d", "e"]);
        let t = synthetic_embeddings(&ls, 16, 4, &EmbeddingPlan::Orthonormal).unwrap();
        let g = t.vectors().dot(&t.vectors().t());
        for ((i, j), v) in g.indexed_iter() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-9);
        }
    }

    #[test]
    fn paired_plan_hits_target_cosines() {
        let ls = labels(&["grasp", "contain", "grab", "hold"]);
        let plan = EmbeddingPlan::Paired {
            pairs: vec![("grasp".into(), "grab".into()), ("contain".into(), "hold".into())],
            cosine: 0.9,
        };
        let t = synthetic_embeddings(&ls, 8, 4, &plan).unwrap();
        let v = t.vectors();
        let cos =
            |i: usize, j: usize| v.row(i).dot(&v.row(j)) / (v.row(i).dot(&v.row(i)) * v.row(j).dot(&v.row(j))).sqrt();
        assert!((cos(0, 2) - 0.9).abs() < 1e-6);
        assert!((cos(1, 3) - 0.9).abs() < 1e-6);
        for (i, j) in [(0, 1), (0, 3), (1, 2), (2, 3)] {
            assert!(cos(i, j).abs() <= 0.1);
        }
        let ortho = synthetic_embeddings(&ls, 8, 4, &EmbeddingPlan::Orthonormal).unwrap();
        assert_eq!(ortho.vectors().row(0), v.row(0));
    }

    #[test]
    fn infeasible_plans_error() {
        let ls = labels(&["a", "b", "c"]);
        assert!(synthetic_embeddings(&ls, 2, 0, &EmbeddingPlan::Orthonormal).is_err());
        let chained = EmbeddingPlan::Paired {
            pairs: vec![("a".into(), "b".into()), ("a".into(), "c".into())],
            cosine: 0.9,
        };
        assert!(synthetic_embeddings(&ls, 4, 0, &chained).is_err());
        let bad_cos = EmbeddingPlan::Paired {
            pairs: vec![("a".into(), "b".into())],
            cosine: 1.5,
        };
        assert!(synthetic_embeddings(&ls, 4, 0, &bad_cos).is_err());
    }
}
