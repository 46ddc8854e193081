//! Open-vocabulary correlation head.
//!
//! Point features `P` (`n × D`) are compared with label embeddings `T`
//! (`m × D`) by cosine similarity, scaled by a learnable logit scale and
//! pushed through a row-wise softmax. Labels are data: any embedding table
//! with matching `D` can be swapped in at inference time.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{cloud_matrix, init_encoder, EncoderConfig, EncoderParams, ForwardCache};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{self, FeatureMatrix, Gradients, Mode, ParamId};

const OADE_MAGIC: &[u8; 4] = b"OADE";
const OADE_VERSION: u32 = 1;

/// Norm below which a feature or embedding row counts as zero.
pub const MIN_NORM: f64 = 1e-8;

/// Label strings paired with their (frozen) text embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    labels: Vec<String>,
    vectors: Array2<f64>,
    pub source: String,
}

impl EmbeddingTable {
    pub fn new(labels: Vec<String>, vectors: Array2<f64>, source: impl Into<String>) -> Result<Self> {
        let bad = |msg: String| Err(Error::Embeddings(msg));
        if labels.is_empty() {
            return bad("table has no labels".into());
        }
        if vectors.nrows() != labels.len() {
            return bad(format!("{} labels but {} vectors", labels.len(), vectors.nrows()));
        }
        if vectors.ncols() == 0 {
            return bad("embedding dimension is zero".into());
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return bad(format!("duplicate label `{l}`"));
            }
            if l.len() > u16::MAX as usize {
                return bad(format!("label `{}…` is too long", &l[..16]));
            }
        }
        for (l, row) in labels.iter().zip(vectors.rows()) {
            if row.iter().any(|v| !v.is_finite()) {
                return bad(format!("embedding of `{l}` has a non-finite entry"));
            }
            if row.dot(&row).sqrt() <= MIN_NORM {
                return bad(format!("embedding of `{l}` has zero norm"));
            }
        }
        Ok(Self {
            labels,
            vectors,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn vectors(&self) -> ArrayView2<'_, f64> {
        self.vectors.view()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Table restricted to `labels`, in that order.
    pub fn subset<S: AsRef<str>>(&self, labels: &[S]) -> Result<Self> {
        let idx = labels
            .iter()
            .map(|l| {
                self.index_of(l.as_ref())
                    .ok_or_else(|| Error::LabelMismatch(format!("no embedding for label `{}`", l.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            idx.iter().map(|&i| self.labels[i].clone()).collect(),
            self.vectors.select(Axis(0), &idx),
            self.source.clone(),
        )
    }

    /// Appends a label with the given vector.
    pub fn with_label(&self, label: impl Into<String>, vector: ndarray::ArrayView1<'_, f64>) -> Result<Self> {
        let mut labels = self.labels.clone();
        labels.push(label.into());
        let vectors = ndarray::concatenate(Axis(0), &[self.vectors.view(), vector.insert_axis(Axis(0))])
            .map_err(|e| Error::Embeddings(e.to_string()))?;
        Self::new(labels, vectors, self.source.clone())
    }

    /// Serializes to the OADE byte layout (values rounded to `f32`).
    pub fn to_oade_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.vectors.len() * 4);
        out.extend_from_slice(OADE_MAGIC);
        out.extend_from_slice(&OADE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for l in &self.labels {
            out.extend_from_slice(&(l.len() as u16).to_le_bytes());
            out.extend_from_slice(l.as_bytes());
        }
        for &v in self.vectors.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_oade_bytes(bytes: &[u8], source: impl Into<String>) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != OADE_MAGIC {
            return Err(Error::Format("not an OADE file (bad magic)".into()));
        }
        let version = read_u32(&mut r, "version")?;
        if version != OADE_VERSION {
            return Err(Error::Format(format!("unsupported OADE version {version}")));
        }
        let m = read_u32(&mut r, "label count")? as usize;
        let d = read_u32(&mut r, "dimension")? as usize;
        let mut labels = Vec::with_capacity(m);
        for j in 0..m {
            let mut len = [0u8; 2];
            read_exact(&mut r, &mut len, "label length")?;
            let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(&mut r, &mut buf, "label bytes")?;
            labels.push(String::from_utf8(buf).map_err(|_| Error::Format(format!("label {j} is not valid UTF-8")))?);
        }
        let expected = m
            .checked_mul(d)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Format("OADE header sizes overflow".into()))?;
        if r.len() != expected {
            return Err(Error::Format(format!(
                "OADE payload has {} bytes, expected {expected} for {m}×{d}",
                r.len()
            )));
        }
        let values: Vec<f64> = r
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let vectors = Array2::from_shape_vec((m, d), values).expect("length checked");
        Self::new(labels, vectors, source)
    }

    pub fn write_oade(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_oade_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_oade(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_oade_bytes(&bytes, format!("oade:{}", path.display()))
    }

    /// SHA-256 of the OADE serialization.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_oade_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated OADE data while reading {what}")))
}

fn read_u32(r: &mut &[u8], what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Cosine similarities, `n × m`, entries in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix(pub Array2<f64>);

/// Intermediate values of [`correlate`] needed for its backward pass.
#[derive(Debug, Clone)]
pub struct CorrelationCache {
    unit_points: Array2<f64>,
    point_norms: Array1<f64>,
    unit_labels: Array2<f64>,
}

fn unit_rows(m: ArrayView2<'_, f64>) -> (Array2<f64>, Array1<f64>) {
    let norms: Array1<f64> = m.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let unit = &m / &norms.view().insert_axis(Axis(1));
    (unit, norms)
}

pub fn correlate_with_cache(
    features: ArrayView2<'_, f64>,
    table: &EmbeddingTable,
) -> Result<(CorrelationMatrix, CorrelationCache)> {
    if features.ncols() != table.dim() {
        return Err(Error::Shape(format!(
            "point features have D = {}, embeddings have D = {}",
            features.ncols(),
            table.dim()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFeatures);
    }
    let (unit_points, point_norms) = unit_rows(features);
    if let Some(i) = point_norms.iter().position(|&n| n < MIN_NORM) {
        return Err(Error::DegenerateFeature(i));
    }
    let (unit_labels, _) = unit_rows(table.vectors());
    let f = unit_points.dot(&unit_labels.t());
    Ok((
        CorrelationMatrix(f),
        CorrelationCache {
            unit_points,
            point_norms,
            unit_labels,
        },
    ))
}

/// `F[i][j] = ⟨P_i, T_j⟩ / (‖P_i‖·‖T_j‖)`.
pub fn correlate(features: ArrayView2<'_, f64>, table: &EmbeddingTable) -> Result<CorrelationMatrix> {
    Ok(correlate_with_cache(features, table)?.0)
}

/// Gradient of the loss with respect to the point features given its
/// gradient with respect to `F`. Label embeddings are frozen.
pub fn correlate_backward(cache: &CorrelationCache, grad_f: ArrayView2<'_, f64>) -> Array2<f64> {
    // F_i = T̂ u_i with u_i = P_i/‖P_i‖; dL/dP_i = (g_u − (g_u·u_i) u_i) / ‖P_i‖
    let g_unit = grad_f.dot(&cache.unit_labels);
    let mut g = g_unit.clone();
    for (i, mut row) in g.axis_iter_mut(Axis(0)).enumerate() {
        let u = cache.unit_points.row(i);
        let proj = g_unit.row(i).dot(&u);
        row.scaled_add(-proj, &u);
        row /= cache.point_norms[i];
    }
    g
}

/// How the learnable scalar maps to the multiplier applied to `F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemperatureMode {
    /// `s = exp(ρ)`; `ρ₀ = ln(1/0.07)` so `s₀ ≈ 14.29`.
    #[default]
    LogScale,
    /// `s = 1/τ` with the stored value used as `τ` directly, `τ₀ = ln(1/0.07)`.
    TemperatureLiteral,
}

/// The learnable softmax sharpness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitScale {
    pub value: f64,
    pub mode: TemperatureMode,
}

impl LogitScale {
    pub fn initial(mode: TemperatureMode) -> Self {
        Self {
            value: (1.0f64 / 0.07).ln(),
            mode,
        }
    }

    pub fn from_scale(scale: f64) -> Self {
        Self {
            value: scale.ln(),
            mode: TemperatureMode::LogScale,
        }
    }

    /// Multiplier applied to the correlations.
    pub fn scale(&self) -> f64 {
        match self.mode {
            TemperatureMode::LogScale => self.value.exp(),
            TemperatureMode::TemperatureLiteral => 1.0 / self.value,
        }
    }

    fn dscale(&self) -> f64 {
        match self.mode {
            TemperatureMode::LogScale => self.value.exp(),
            TemperatureMode::TemperatureLiteral => -1.0 / (self.value * self.value),
        }
    }
}

/// Per-point label distribution and hard assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceMap {
    pub scores: Array2<f64>,
    pub log_scores: Array2<f64>,
    pub assignment: Vec<usize>,
    pub labels: Vec<String>,
}

impl AffordanceMap {
    pub fn max_scores(&self) -> Vec<f64> {
        self.scores
            .rows()
            .into_iter()
            .zip(&self.assignment)
            .map(|(r, &a)| r[a])
            .collect()
    }

    pub fn assigned_labels(&self) -> Vec<&str> {
        self.assignment.iter().map(|&a| self.labels[a].as_str()).collect()
    }
}

/// Row argmax, lowest index on ties.
pub fn argmax_rows(m: ArrayView2<'_, f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for j in 1..r.len() {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Row-wise softmax of `s·F`, computed in log space.
///
/// The assignment is taken on `F` itself: for `s > 0` it is the argmax of
/// the scores, and it stays exact when columns are added or the scale
/// changes.
pub fn scaled_softmax(f: &CorrelationMatrix, scale: LogitScale, labels: &[String]) -> AffordanceMap {
    let s = scale.scale();
    let log_scores = nn::log_softmax_rows((&f.0 * s).view());
    AffordanceMap {
        scores: log_scores.mapv(f64::exp),
        assignment: argmax_rows(f.0.view()),
        log_scores,
        labels: labels.to_vec(),
    }
}

/// Cube-root inverse-frequency class weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    pub counts: Vec<usize>,
}

/// `w_j = (max_k c_k / c_j)^(1/3)`.
pub fn class_weights(counts: &[usize]) -> Result<ClassWeights> {
    if counts.is_empty() {
        return Err(Error::Config("class weights need at least one class".into()));
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::AbsentClass(format!("#{j}")));
    }
    let max = *counts.iter().max().unwrap() as f64;
    Ok(ClassWeights {
        weights: counts.iter().map(|&c| (max / c as f64).cbrt()).collect(),
        counts: counts.to_vec(),
    })
}

/// `L = −Σ_i w[y_i]·log S[i, y_i]` and its gradient with respect to the
/// log-scores.
pub fn weighted_nll(
    log_scores: ArrayView2<'_, f64>,
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<(f64, Array2<f64>)> {
    let (n, m) = log_scores.dim();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} points", labels.len())));
    }
    if weights.weights.len() != m {
        return Err(Error::Shape(format!(
            "{} class weights for {m} classes",
            weights.weights.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Array2::zeros((n, m));
    for (i, &y) in labels.iter().enumerate() {
        if y >= m {
            return Err(Error::LabelMismatch(format!(
                "label {y} at point {i} is outside [0, {m})"
            )));
        }
        let term = weights.weights[y] * log_scores[[i, y]];
        if !term.is_finite() {
            return Err(Error::NonFiniteLoss(i));
        }
        loss -= term;
        grad[[i, y]] = -weights.weights[y];
    }
    Ok((loss, grad))
}

/// Loss of one labeled cloud and the gradients feeding back into the
/// encoder output and the logit scale.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    pub loss: f64,
    pub features: Array2<f64>,
    pub logit_scale: f64,
}

pub fn head_loss(
    features: ArrayView2<'_, f64>,
    table: &EmbeddingTable,
    scale: LogitScale,
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<HeadGradients> {
    let (f, cache) = correlate_with_cache(features, table)?;
    let s = scale.scale();
    let log_scores = nn::log_softmax_rows((&f.0 * s).view());
    let (loss, g_log) = weighted_nll(log_scores.view(), labels, weights)?;
    let g_logits = nn::log_softmax_backward(log_scores.view(), g_log.view());
    let g_scale: f64 = (&g_logits * &f.0).sum();
    let g_f = g_logits * s;
    Ok(HeadGradients {
        loss,
        features: correlate_backward(&cache, g_f.view()),
        logit_scale: g_scale * scale.dscale(),
    })
}

/// Encoder, logit scale and the store holding both.
#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceModel {
    pub params: EncoderParams,
    logit_scale: ParamId,
    pub temperature: TemperatureMode,
}

pub const LOGIT_SCALE_PARAM: &str = "head.logit_scale";

impl AffordanceModel {
    pub fn new(config: EncoderConfig, temperature: TemperatureMode) -> Result<Self> {
        let mut params = init_encoder(config)?;
        let init = LogitScale::initial(temperature);
        let logit_scale = params
            .store
            .register(LOGIT_SCALE_PARAM, vec![], vec![init.value], true)?;
        Ok(Self {
            params,
            logit_scale,
            temperature,
        })
    }

    /// Rebuilds a model around a store that already holds every parameter.
    pub fn from_store(config: EncoderConfig, store: nn::ParameterStore, temperature: TemperatureMode) -> Result<Self> {
        let encoder = crate::encoder::Encoder::attach(config, &store)?;
        let logit_scale = store
            .id(LOGIT_SCALE_PARAM)
            .ok_or_else(|| Error::Format(format!("missing parameter `{LOGIT_SCALE_PARAM}`")))?;
        Ok(Self {
            params: EncoderParams { encoder, store },
            logit_scale,
            temperature,
        })
    }

    pub fn logit_scale(&self) -> LogitScale {
        LogitScale {
            value: self.params.store.scalar(self.logit_scale),
            mode: self.temperature,
        }
    }

    pub fn logit_scale_id(&self) -> ParamId {
        self.logit_scale
    }

    pub fn output_dim(&self) -> usize {
        self.params.encoder.output_dim()
    }

    pub fn encode(&self, cloud: &PointCloud, mode: Mode) -> Result<(FeatureMatrix, ForwardCache)> {
        self.params
            .encoder
            .forward(&self.params.store, cloud_matrix(cloud).view(), mode)
    }

    /// Train-mode loss of one labeled cloud; gradients are added to `grads`.
    pub fn loss_and_grad(
        &self,
        cloud: &PointCloud,
        table: &EmbeddingTable,
        weights: &ClassWeights,
        grads: &mut Gradients,
    ) -> Result<(f64, ForwardCache)> {
        let (losses, cache) = self.batch_loss_and_grad(&[cloud], table, weights, grads)?;
        Ok((losses[0], cache))
    }

    /// Encodes the clouds as one batch and adds the gradient of the mean
    /// per-cloud loss to `grads`. Returns each cloud's loss and the cache
    /// carrying the batch statistics for
    /// [`crate::encoder::Encoder::update_running_stats`].
    pub fn batch_loss_and_grad(
        &self,
        clouds: &[&PointCloud],
        table: &EmbeddingTable,
        weights: &ClassWeights,
        grads: &mut Gradients,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        if clouds.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let mut labels = Vec::with_capacity(clouds.len());
        for c in clouds {
            labels.push(
                c.labels()
                    .ok_or_else(|| Error::InvalidCloud("training cloud has no labels".into()))?,
            );
        }
        let sizes: Vec<usize> = clouds.iter().map(|c| c.len()).collect();
        let rows: Vec<Array2<f64>> = clouds.iter().map(|c| cloud_matrix(c)).collect();
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let coords = ndarray::concatenate(Axis(0), &views).expect("clouds have 3 columns");
        let (features, cache) =
            self.params
                .encoder
                .forward_batch(&self.params.store, coords.view(), &sizes, Mode::Train)?;
        let scale = self.logit_scale();
        let ranges: Vec<_> = crate::encoder::segments(&sizes).collect();
        let heads: Vec<Result<HeadGradients>> = ranges
            .par_iter()
            .zip(&labels)
            .map(|(r, l)| head_loss(features.slice(s![r.clone(), ..]), table, scale, l, weights))
            .collect();
        let inv_b = 1.0 / clouds.len() as f64;
        let mut g_features = Array2::zeros(features.dim());
        let mut g_scale = 0.0;
        let mut losses = Vec::with_capacity(clouds.len());
        for (r, head) in ranges.into_iter().zip(heads) {
            let head = head?;
            losses.push(head.loss);
            g_scale += head.logit_scale * inv_b;
            g_features.slice_mut(s![r, ..]).assign(&(head.features * inv_b));
        }
        grads.add_scalar(self.logit_scale, g_scale);
        self.params
            .encoder
            .backward(&self.params.store, &cache, g_features, grads)?;
        Ok((losses, cache))
    }
}

/// Eval-mode affordance map of a normalized, resampled cloud against any
/// label set.
pub fn detect(model: &AffordanceModel, cloud: &PointCloud, table: &EmbeddingTable) -> Result<AffordanceMap> {
    if table.dim() != model.output_dim() {
        return Err(Error::Shape(format!(
            "checkpoint produces D = {}, embeddings have D = {}",
            model.output_dim(),
            table.dim()
        )));
    }
    let (features, _) = model.encode(cloud, Mode::Eval)?;
    let f = correlate(features.view(), table)?;
    Ok(scaled_softmax(&f, model.logit_scale(), table.labels()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn table(rows: Array2<f64>) -> EmbeddingTable {
        let labels = (0..rows.nrows()).map(|j| format!("l{j}")).collect();
        EmbeddingTable::new(labels, rows, "test").unwrap()
    }

    #[test]
    fn correlate_hand_cases() {
        let t = table(array![[2.0, 0.0, 0.0], [0.0, 3.0, 0.0], [2.0, 4.0, 4.0]]);
        let p = array![[1.0, 2.0, 2.0]];
        let f = correlate(p.view(), &t).unwrap().0;
        assert!((f[[0, 0]] - 1.0 / 3.0).abs() < 1e-15);
        assert!((f[[0, 2]] - 1.0).abs() < 1e-9);
        let p = array![[0.0, 0.0, 5.0]];
        let f = correlate(p.view(), &t).unwrap().0;
        assert!(f[[0, 0]].abs() < 1e-9 && f[[0, 1]].abs() < 1e-9);
    }

    #[test]
    fn correlate_errors() {
        let t = table(array![[1.0, 0.0]]);
        assert!(matches!(
            correlate(array![[0.0, 0.0]].view(), &t),
            Err(Error::DegenerateFeature(0))
        ));
        assert!(matches!(
            correlate(array![[1.0, 0.0, 0.0]].view(), &t),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn softmax_cases() {
        let labels: Vec<String> = (0..4).map(|j| j.to_string()).collect();
        let f = CorrelationMatrix(array![[0.3, 0.3, 0.3, 0.3]]);
        let map = scaled_softmax(&f, LogitScale::from_scale(7.0), &labels);
        assert!(map.scores.iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let f = CorrelationMatrix(array![[0.1, 0.5, 0.4, -0.2]]);
        let map = scaled_softmax(&f, LogitScale::from_scale(1000.0), &labels);
        assert!((map.scores[[0, 1]] - 1.0).abs() < 1e-6);
        assert_eq!(map.assignment, vec![1]);

        let f = CorrelationMatrix(array![[0.5, 0.0]]);
        let map = scaled_softmax(&f, LogitScale::initial(TemperatureMode::LogScale), &labels[..2]);
        // exp(0.5/0.07)/(exp(0.5/0.07)+1) at 30 digits
        assert!((map.scores[[0, 0]] - 0.999_210_134_058_263_5).abs() < 1e-12);
        assert!((map.scores[[0, 1]] - 0.000_789_865_941_736_461_8).abs() < 1e-12);
    }

    #[test]
    fn class_weight_cases() {
        assert_eq!(class_weights(&[5, 5, 5]).unwrap().weights, vec![1.0; 3]);
        let w = class_weights(&[800, 100]).unwrap().weights;
        assert_eq!(w, vec![1.0, 2.0]);
        let err = class_weights(&[3, 0]).unwrap_err().to_string();
        assert!(err.contains("absent from training set"));
    }

    #[test]
    fn nll_perfect_and_uniform() {
        let w = class_weights(&[1, 1]).unwrap();
        let (l, _) = weighted_nll(array![[0.0, f64::NEG_INFINITY]].view(), &[0], &w).unwrap();
        assert_eq!(l, 0.0);
        let m = 37;
        let w = class_weights(&vec![1; m]).unwrap();
        let log_s = nn::log_softmax_rows(Array2::<f64>::zeros((1, m)).view());
        let (l, _) = weighted_nll(log_s.view(), &[5], &w).unwrap();
        assert!((l - 3.610_917_912_644_224).abs() < 1e-12);
    }

    #[test]
    fn nll_non_finite_names_point() {
        let w = class_weights(&[1, 1]).unwrap();
        let err = weighted_nll(array![[0.0, 0.0], [f64::NEG_INFINITY, 0.0]].view(), &[0, 0], &w).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss(1)));
    }

    #[test]
    fn literal_temperature_divides() {
        let s = LogitScale::initial(TemperatureMode::TemperatureLiteral);
        assert!((s.scale() - 1.0 / (1.0f64 / 0.07).ln()).abs() < 1e-15);
        let s = LogitScale::initial(TemperatureMode::LogScale);
        assert!((s.scale() - 1.0 / 0.07).abs() < 1e-12);
    }

    #[test]
    fn oade_rejects_bad_input() {
        let t = table(array![[1.0, 0.5], [0.0, 2.0]]);
        let mut bytes = t.to_oade_bytes();
        assert_eq!(&bytes[..4], b"OADE");
        assert!(EmbeddingTable::from_oade_bytes(&bytes[..bytes.len() - 1], "x").is_err());
        bytes[0] = b'X';
        assert!(EmbeddingTable::from_oade_bytes(&bytes, "x").is_err());
    }

    #[test]
    fn table_validation() {
        let dup = EmbeddingTable::new(vec!["a".into(), "a".into()], Array2::eye(2), "");
        assert!(dup.is_err());
        let zero = EmbeddingTable::new(vec!["a".into()], Array2::zeros((1, 2)), "");
        assert!(zero.is_err());
    }
}
