//! Segmentation metrics and the closed-set / open-vocabulary protocols.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ShapeRecord};
use crate::error::{Error, Result};
use crate::geometry::prepare_cloud;
use crate::head::{detect, AffordanceModel, EmbeddingTable};
use crate::rng;

/// `counts[g * m + p]` points with ground truth `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    m: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            counts: vec![0; m * m],
        }
    }

    pub fn classes(&self) -> usize {
        self.m
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.m + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, pred: &[usize], gt: &[usize]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} ground-truth labels",
                pred.len(),
                gt.len()
            )));
        }
        if let Some(&bad) = pred.iter().chain(gt).find(|&&l| l >= self.m) {
            return Err(Error::LabelMismatch(format!("label {bad} outside [0, {})", self.m)));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            self.counts[g * self.m + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.m != self.m {
            return Err(Error::Shape(format!(
                "merging {}-class and {}-class matrices",
                self.m, other.m
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn true_positives(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    fn gt_total(&self, c: usize) -> u64 {
        (0..self.m).map(|p| self.get(c, p)).sum()
    }

    fn pred_total(&self, c: usize) -> u64 {
        (0..self.m).map(|g| self.get(g, c)).sum()
    }
}

pub fn accumulate_confusion(pred: &[usize], gt: &[usize], m: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(m);
    cm.add(pred, gt)?;
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    /// `None` when the class never occurs in ground truth or predictions.
    pub iou: Option<f64>,
    /// Recall; `None` without ground-truth points.
    pub acc: Option<f64>,
    pub precision: Option<f64>,
    pub gt_points: u64,
    pub predicted_points: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsReport {
    #[serde(rename = "mIoU")]
    pub miou: f64,
    #[serde(rename = "Acc")]
    pub acc: f64,
    #[serde(rename = "mAcc")]
    pub macc: f64,
    pub total_points: u64,
    pub per_class: Vec<ClassMetrics>,
    /// Classes absent from both ground truth and predictions.
    pub excluded: Vec<String>,
}

impl MetricsReport {
    pub fn class(&self, label: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.label == label)
    }
}

/// IoU, overall accuracy and mean class recall. Classes with
/// `TP + FP + FN = 0` are left out of the means and listed in `excluded`;
/// classes without ground-truth points have no recall and are left out of
/// `mAcc`.
pub fn compute_metrics(cm: &ConfusionMatrix, labels: &[String]) -> Result<MetricsReport> {
    if labels.len() != cm.m {
        return Err(Error::Shape(format!(
            "{} labels for a {}-class matrix",
            labels.len(),
            cm.m
        )));
    }
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyEvaluation("confusion matrix is empty".into()));
    }
    let mut per_class = Vec::with_capacity(cm.m);
    let mut excluded = Vec::new();
    let (mut iou_sum, mut iou_n, mut acc_sum, mut acc_n, mut trace) = (0.0, 0usize, 0.0, 0usize, 0u64);
    for (c, label) in labels.iter().enumerate() {
        let tp = cm.true_positives(c);
        let gt = cm.gt_total(c);
        let pred = cm.pred_total(c);
        trace += tp;
        let union = gt + pred - tp;
        let iou = (union > 0).then(|| tp as f64 / union as f64);
        let acc = (gt > 0).then(|| tp as f64 / gt as f64);
        let precision = (pred > 0).then(|| tp as f64 / pred as f64);
        match iou {
            Some(v) => {
                iou_sum += v;
                iou_n += 1;
            }
            None => excluded.push(label.clone()),
        }
        if let Some(v) = acc {
            acc_sum += v;
            acc_n += 1;
        }
        per_class.push(ClassMetrics {
            label: label.clone(),
            iou,
            acc,
            precision,
            gt_points: gt,
            predicted_points: pred,
        });
    }
    Ok(MetricsReport {
        miou: iou_sum / iou_n as f64,
        acc: trace as f64 / total as f64,
        macc: if acc_n > 0 { acc_sum / acc_n as f64 } else { 0.0 },
        total_points: total,
        per_class,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolMode {
    /// Test labels equal the training labels.
    ClosedSet,
    /// Full label set, including labels never seen in training.
    OpenVocabulary,
}

impl std::str::FromStr for ProtocolMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "closed" | "closed-set" => Ok(Self::ClosedSet),
            "open" | "open-vocabulary" => Ok(Self::OpenVocabulary),
            _ => Err(format!("unknown mode `{s}` (expected closed or open)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolOptions {
    pub mode: ProtocolMode,
    pub split: String,
    pub points: usize,
    pub seed: u64,
}

/// Evaluation labels for `mode`: the manifest labels followed by any extra
/// vocabulary in `table`. Returns the labels and, per table column, its
/// index in that list.
fn evaluation_labels(
    dataset: &Dataset,
    table: &EmbeddingTable,
    mode: ProtocolMode,
) -> Result<(Vec<String>, Vec<usize>)> {
    let manifest = &dataset.manifest;
    let mut labels = manifest.labels.clone();
    match mode {
        ProtocolMode::ClosedSet => {
            let mut seen = manifest.seen_labels.clone();
            let mut have = table.labels().to_vec();
            seen.sort();
            have.sort();
            if seen != have {
                return Err(Error::LabelMismatch(format!(
                    "closed-set mode needs embeddings for exactly the training labels {:?}, got {:?}",
                    manifest.seen_labels,
                    table.labels()
                )));
            }
        }
        ProtocolMode::OpenVocabulary => {
            if let Some(l) = manifest.labels.iter().find(|l| table.index_of(l).is_none()) {
                return Err(Error::LabelMismatch(format!("no embedding for manifest label `{l}`")));
            }
            labels.extend(
                table
                    .labels()
                    .iter()
                    .filter(|l| manifest.label_id(l).is_none())
                    .cloned(),
            );
        }
    }
    let columns = table
        .labels()
        .iter()
        .map(|l| labels.iter().position(|x| x == l).expect("every table label is listed"))
        .collect();
    Ok((labels, columns))
}

/// Runs detection over a split and scores it against ground truth.
pub fn run_protocol(
    model: &AffordanceModel,
    dataset: &Dataset,
    table: &EmbeddingTable,
    options: &ProtocolOptions,
) -> Result<MetricsReport> {
    if table.dim() != model.output_dim() {
        return Err(Error::Shape(format!(
            "checkpoint produces D = {}, embeddings have D = {}",
            model.output_dim(),
            table.dim()
        )));
    }
    let shapes = dataset.split(&options.split);
    if shapes.is_empty() {
        return Err(Error::EmptyEvaluation(format!(
            "split `{}` has no shapes",
            options.split
        )));
    }
    let (labels, columns) = evaluation_labels(dataset, table, options.mode)?;
    if options.mode == ProtocolMode::ClosedSet {
        let seen = dataset.manifest.seen_ids();
        for s in shapes {
            if s.cloud.labels().unwrap_or(&[]).iter().any(|l| !seen.contains(l)) {
                return Err(Error::LabelMismatch(format!(
                    "closed-set mode: test shape {} has labels outside the training set",
                    s.path.display()
                )));
            }
        }
    }
    let total = score_shapes(
        model,
        shapes,
        table,
        &columns,
        labels.len(),
        options.points,
        options.seed,
    )?;
    compute_metrics(&total, &labels)
}

/// Confusion over `m` evaluation labels; `columns[j]` is the evaluation
/// index of table label `j`.
pub(crate) fn score_shapes(
    model: &AffordanceModel,
    shapes: &[ShapeRecord],
    table: &EmbeddingTable,
    columns: &[usize],
    m: usize,
    points: usize,
    seed: u64,
) -> Result<ConfusionMatrix> {
    let per_shape: Vec<Result<ConfusionMatrix>> = shapes
        .par_iter()
        .enumerate()
        .map(|(i, shape)| {
            let (cloud, _) = prepare_cloud(&shape.cloud, points, rng::resample_seed(seed, i as u64))?;
            let map = detect(model, &cloud, table)?;
            let pred: Vec<usize> = map.assignment.iter().map(|&j| columns[j]).collect();
            let gt = cloud
                .labels()
                .ok_or_else(|| Error::InvalidCloud("evaluation shape has no labels".into()))?;
            accumulate_confusion(&pred, gt, m)
        })
        .collect();
    let mut total = ConfusionMatrix::new(m);
    for cm in per_shape {
        total.merge(&cm?)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(m: usize) -> Vec<String> {
        (0..m).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn identical_predictions_are_diagonal() {
        let gt = [0, 2, 1, 1, 0];
        let cm = accumulate_confusion(&gt, &gt, 3).unwrap();
        for g in 0..3 {
            for p in 0..3 {
                if g != p {
                    assert_eq!(cm.get(g, p), 0);
                }
            }
        }
        let r = compute_metrics(&cm, &names(3)).unwrap();
        assert_eq!((r.miou, r.acc, r.macc), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_enumerated_case() {
        let cm = accumulate_confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        let r = compute_metrics(&cm, &names(2)).unwrap();
        assert_eq!(r.per_class[0].iou, Some(0.5));
        assert!((r.per_class[1].iou.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.miou - 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(r.acc, 0.75);
        assert!((r.macc - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_excluded_and_reported() {
        let cm = accumulate_confusion(&[0, 1, 1], &[0, 1, 0], 3).unwrap();
        let r = compute_metrics(&cm, &names(3)).unwrap();
        assert_eq!(r.excluded, vec!["c2".to_string()]);
        assert!((r.miou - (0.5 + 0.5) / 2.0).abs() < 1e-15);
        assert!(r.per_class[2].iou.is_none());
    }

    #[test]
    fn merge_equals_concatenation() {
        let (p1, g1) = ([0, 1, 2, 2], [0, 0, 2, 1]);
        let (p2, g2) = ([1, 1, 0], [1, 2, 0]);
        let mut a = accumulate_confusion(&p1, &g1, 3).unwrap();
        a.merge(&accumulate_confusion(&p2, &g2, 3).unwrap()).unwrap();
        let cat_p: Vec<usize> = p1.iter().chain(&p2).copied().collect();
        let cat_g: Vec<usize> = g1.iter().chain(&g2).copied().collect();
        assert_eq!(a, accumulate_confusion(&cat_p, &cat_g, 3).unwrap());
    }

    #[test]
    fn errors() {
        assert!(accumulate_confusion(&[0, 1], &[0], 2).is_err());
        assert!(accumulate_confusion(&[0, 3], &[0, 1], 2).is_err());
        assert!(compute_metrics(&ConfusionMatrix::new(2), &names(2)).is_err());
    }

    #[test]
    fn report_json_field_names() {
        let cm = accumulate_confusion(&[0, 1], &[0, 1], 2).unwrap();
        let v = serde_json::to_value(compute_metrics(&cm, &names(2)).unwrap()).unwrap();
        for key in ["mIoU", "Acc", "mAcc", "totalPoints", "perClass", "excluded"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
