//! Independent reference implementations shared by the test suites.

use ndarray::Array2;
use openaff::encoder::EncoderConfig;
use openaff::head::{class_weights, head_loss, AffordanceModel, EmbeddingTable, LogitScale, TemperatureMode};
use openaff::nn::{finite_difference_check, GradCheckConfig, GradCheckReport, ParameterStore, Probe};
use rand::Rng;

use super::{names, normal_matrix, random_cloud, rng};

pub struct Instance {
    pub p: Array2<f64>,
    pub t: Array2<f64>,
    pub labels: Vec<usize>,
    pub counts: Vec<usize>,
    pub scale: f64,
}

/// Random head problem with n ≤ 8, m ≤ 5, D ≤ 8.
pub fn instance(seed: u64) -> Instance {
    let mut g = rng(seed);
    let n = g.random_range(1..=8);
    let m = g.random_range(1..=5);
    let d = g.random_range(2..=8);
    Instance {
        p: normal_matrix(&mut g, n, d),
        t: normal_matrix(&mut g, m, d),
        labels: (0..n).map(|_| g.random_range(0..m)).collect(),
        counts: (0..m).map(|_| g.random_range(1..5000)).collect(),
        scale: g.random_range(0.5..40.0),
    }
}

/// `S[i][j]` and `log S[i][j]` by direct enumeration.
pub fn oracle_softmax(p: &Array2<f64>, t: &Array2<f64>, s: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (n, d) = p.dim();
    let m = t.nrows();
    let norm = |row: &dyn Fn(usize) -> f64| (0..d).map(|k| row(k) * row(k)).sum::<f64>().sqrt();
    let mut scores = vec![vec![0.0; m]; n];
    let mut logs = vec![vec![0.0; m]; n];
    for i in 0..n {
        let pn = norm(&|k| p[[i, k]]);
        let mut f = vec![0.0; m];
        for j in 0..m {
            let tn = norm(&|k| t[[j, k]]);
            let dot: f64 = (0..d).map(|k| p[[i, k]] * t[[j, k]]).sum();
            f[j] = dot / (pn * tn);
        }
        let top = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = f.iter().map(|&v| (s * (v - top)).exp()).sum();
        for j in 0..m {
            scores[i][j] = (s * (f[j] - top)).exp() / z;
            logs[i][j] = s * (f[j] - top) - z.ln();
        }
    }
    (scores, logs)
}

pub fn oracle_weights(counts: &[usize]) -> Vec<f64> {
    let max = *counts.iter().max().unwrap() as f64;
    counts.iter().map(|&c| (max / c as f64).powf(1.0 / 3.0)).collect()
}

/// Recomputes every candidate's distance to every selected point at every
/// step: O(k·n²) with no incremental state.
pub fn fps_brute_force(points: &[[f64; 3]], k: usize, start: usize) -> Vec<usize> {
    let dist = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt();
    let mut chosen = vec![start];
    while chosen.len() < k {
        let mut best = None;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&c| dist(p, &points[c]))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        chosen.push(best.unwrap());
    }
    chosen
}

pub struct Counted {
    pub iou: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    pub precision: Vec<Option<f64>>,
    pub acc: f64,
}

/// Per-class counts straight from the label sequences.
pub fn count_metrics(pred: &[usize], gt: &[usize], m: usize) -> Counted {
    let mut iou = Vec::new();
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    for c in 0..m {
        let pairs = || pred.iter().zip(gt);
        let tp = pairs().filter(|(&p, &g)| p == c && g == c).count();
        let fp = pairs().filter(|(&p, &g)| p == c && g != c).count();
        let fn_ = pairs().filter(|(&p, &g)| p != c && g == c).count();
        iou.push((tp + fp + fn_ > 0).then(|| tp as f64 / (tp + fp + fn_) as f64));
        recall.push((tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64));
        precision.push((tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64));
    }
    let correct = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    Counted {
        iou,
        recall,
        precision,
        acc: correct as f64 / pred.len() as f64,
    }
}

/// Mean over the defined entries.
pub fn mean_defined(v: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = v.iter().flatten().copied().collect();
    present.iter().sum::<f64>() / present.len() as f64
}

/// Encoder + correlation + scaled softmax + weighted NLL over a batch of
/// clouds, every trainable parameter checked.
pub fn full_model_report(seed: u64, temperature: TemperatureMode) -> GradCheckReport {
    let mut g = rng(500 + seed);
    let (m, d) = (4, 8);
    let config = EncoderConfig {
        seed,
        ..EncoderConfig::tiny(d)
    };
    let mut model = AffordanceModel::new(config.clone(), temperature).unwrap();
    if temperature == TemperatureMode::TemperatureLiteral {
        // Sharper than the literal initial value so the scale gradient matters.
        let id = model.logit_scale_id();
        model.params.store.values_mut(id)[0] = 0.3;
    }
    let clouds = [random_cloud(&mut g, 6, m), random_cloud(&mut g, 5, m)];
    let refs: Vec<_> = clouds.iter().collect();
    let table = EmbeddingTable::new(names(m), normal_matrix(&mut g, m, d), "gradcheck").unwrap();
    let weights = class_weights(&[5, 3, 2, 1]).unwrap();
    let mut grads = model.params.store.zero_gradients();
    model.batch_loss_and_grad(&refs, &table, &weights, &mut grads).unwrap();
    finite_difference_check(
        &model.params.store,
        &grads,
        |s| {
            let probe = AffordanceModel::from_store(config.clone(), s.clone(), temperature).unwrap();
            let mut scratch = s.zero_gradients();
            let (losses, cache) = probe
                .batch_loss_and_grad(&refs, &table, &weights, &mut scratch)
                .unwrap();
            Probe {
                loss: losses.iter().sum::<f64>() / losses.len() as f64,
                kinks: cache.kink_fingerprint(),
            }
        },
        GradCheckConfig::default(),
    )
}

/// Features and log-scale of a random head problem.
pub fn head_report(seed: u64) -> GradCheckReport {
    let inst = instance(seed);
    let m = inst.t.nrows();
    let table = EmbeddingTable::new(names(m), inst.t.clone(), "oracle").unwrap();
    let weights = class_weights(&inst.counts).unwrap();
    let (n, d) = inst.p.dim();
    let mut store = ParameterStore::new();
    let pid = store
        .register("p", vec![n, d], inst.p.iter().copied().collect(), true)
        .unwrap();
    let rho = store.register("rho", vec![], vec![inst.scale.ln()], true).unwrap();
    let head = head_loss(
        inst.p.view(),
        &table,
        LogitScale::from_scale(inst.scale),
        &inst.labels,
        &weights,
    )
    .unwrap();
    let mut grads = store.zero_gradients();
    grads.add_matrix(pid, head.features.view());
    grads.add_scalar(rho, head.logit_scale);
    finite_difference_check(
        &store,
        &grads,
        |s| {
            let scale = LogitScale::from_scale(s.scalar(rho).exp());
            let loss = head_loss(s.matrix(pid), &table, scale, &inst.labels, &weights)
                .unwrap()
                .loss;
            Probe { loss, kinks: 0 }
        },
        GradCheckConfig::default(),
    )
}
