//! Training loop and the OADC checkpoint format.
//!
//! Every step is reproducible from one seed: initialization, per-epoch
//! shuffles and resampling each draw from their own stream, and the clouds
//! of a batch go through the encoder together as one stacked matrix.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{label_counts, Dataset, ShapeRecord};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, score_shapes};
use crate::geometry::{prepare_cloud, PointCloud};
use crate::head::{class_weights, AffordanceModel, EmbeddingTable, TemperatureMode};
use crate::nn::{adam_step, AdamConfig, AdamState, ParameterStore};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub decoupled_weight_decay: bool,
    /// Points per cloud after resampling.
    pub points: usize,
    pub embedding_dim: usize,
    pub seed: u64,
    /// Validate every k epochs on the `val` split; 0 disables validation.
    pub eval_every: usize,
    pub temperature: TemperatureMode,
    /// Architecture; its `output_dim` must equal `embedding_dim` and its
    /// seed is replaced by `seed`.
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 200,
            batch_size: 16,
            learning_rate: adam.learning_rate,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            decoupled_weight_decay: adam.decoupled_weight_decay,
            points: 2048,
            embedding_dim: 512,
            seed: 0,
            eval_every: 0,
            temperature: TemperatureMode::LogScale,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    /// 30 epochs, 512 points, D = 64, narrow encoder.
    pub fn desk(seed: u64) -> Self {
        Self {
            epochs: 30,
            points: 512,
            embedding_dim: 64,
            seed,
            encoder: EncoderConfig::desk(64),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("points", self.points),
            ("embedding_dim", self.embedding_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("`learning_rate` must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("`weight_decay` must be non-negative".into()));
        }
        if self.encoder.output_dim != self.embedding_dim {
            return Err(Error::Config(format!(
                "encoder output dimension {} differs from embedding_dim {}",
                self.encoder.output_dim, self.embedding_dim
            )));
        }
        if self.points < 2 {
            return Err(Error::BatchNormTooFewPoints(self.points));
        }
        self.encoder_config().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
            decoupled_weight_decay: self.decoupled_weight_decay,
        }
    }

    /// Encoder configuration with the run seed applied.
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            seed: self.seed,
            ..self.encoder.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(rename = "val_mIoU", default, skip_serializing_if = "Option::is_none")]
    pub val_miou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub epochs_completed: usize,
    pub seed: u64,
    pub loss_history: Vec<f64>,
    /// Label set the model was trained against, in embedding order.
    pub labels: Vec<String>,
    pub embeddings_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub metadata: TrainingMetadata,
    pub model: AffordanceModel,
}

impl Checkpoint {
    pub fn store(&self) -> &ParameterStore {
        &self.model.params.store
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

/// Relabels manifest ids to table indices and resamples + normalizes.
fn prepare_split(
    shapes: &[ShapeRecord],
    to_table: &[Option<usize>],
    points: usize,
    seed: u64,
) -> Result<Vec<PointCloud>> {
    shapes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let cloud = s
                .cloud
                .relabel(|l| to_table[l])
                .map_err(|e| Error::LabelMismatch(format!("{}: {e}", s.path.display())))?;
            Ok(prepare_cloud(&cloud, points, rng::resample_seed(seed, i as u64))?.0)
        })
        .collect()
}

/// Class weights from the raw training shapes, indexed like `table`.
fn training_weights(
    dataset: &Dataset,
    table: &EmbeddingTable,
    to_table: &[Option<usize>],
) -> Result<crate::head::ClassWeights> {
    let manifest_counts = label_counts(dataset.split("train"), dataset.manifest.labels.len());
    let mut counts = vec![0; table.len()];
    for (id, &c) in manifest_counts.iter().enumerate() {
        if let Some(j) = to_table[id] {
            counts[j] += c;
        }
    }
    class_weights(&counts).map_err(|e| match e {
        Error::AbsentClass(_) => {
            let j = counts.iter().position(|&c| c == 0).unwrap_or(0);
            Error::AbsentClass(table.labels()[j].clone())
        }
        other => other,
    })
}

/// Maps each manifest label id to its row in `table`.
fn table_mapping(dataset: &Dataset, table: &EmbeddingTable) -> Result<Vec<Option<usize>>> {
    let manifest = &dataset.manifest;
    let mut seen = manifest.seen_labels.clone();
    let mut have = table.labels().to_vec();
    seen.sort();
    have.sort();
    if seen != have {
        return Err(Error::LabelMismatch(format!(
            "training embeddings must cover exactly the training labels {:?}, got {:?}",
            manifest.seen_labels,
            table.labels()
        )));
    }
    Ok(manifest.labels.iter().map(|l| table.index_of(l)).collect())
}

/// Trains from scratch. `table` is never modified.
pub fn train(config: &TrainConfig, dataset: &Dataset, table: &EmbeddingTable) -> Result<TrainOutcome> {
    config.validate()?;
    if table.dim() != config.embedding_dim {
        return Err(Error::Shape(format!(
            "embeddings have D = {}, config expects {}",
            table.dim(),
            config.embedding_dim
        )));
    }
    dataset.check_zero_shot()?;
    let to_table = table_mapping(dataset, table)?;
    let weights = training_weights(dataset, table, &to_table)?;
    let train_shapes = dataset.split("train");
    if train_shapes.is_empty() {
        return Err(Error::TrainingSplit("split `train` is empty".into()));
    }
    let clouds = prepare_split(train_shapes, &to_table, config.points, config.seed)?;

    let val_shapes = dataset.split("val");
    let validate = config.eval_every > 0 && !val_shapes.is_empty();
    let val_columns: Vec<usize> = table
        .labels()
        .iter()
        .map(|l| dataset.manifest.label_id(l).expect("table labels are manifest labels"))
        .collect();

    let mut model = AffordanceModel::new(config.encoder_config(), config.temperature)?;
    let mut adam = AdamState::new(config.adam(), &model.params.store);
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..clouds.len()).collect();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut rng::stream(config.seed, Stream::Shuffle, epoch as u64));
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let diverged = |source: Error| Error::TrainingDiverged {
                epoch,
                batch,
                source: Box::new(source),
            };
            let batch_clouds: Vec<&PointCloud> = chunk.iter().map(|&i| &clouds[i]).collect();
            let mut grads = model.params.store.zero_gradients();
            let (losses, cache) = model
                .batch_loss_and_grad(&batch_clouds, table, &weights, &mut grads)
                .map_err(|e| if e.is_numeric() { diverged(e) } else { e })?;
            if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
                return Err(diverged(Error::NonFiniteLoss(i)));
            }
            let batch_loss: f64 = losses.iter().sum();
            let store = &mut model.params.store;
            model.params.encoder.update_running_stats(store, &cache);
            store.accumulate(&grads);
            adam_step(store, &mut adam).map_err(diverged)?;
            epoch_loss += batch_loss;
        }
        let mean_loss = epoch_loss / clouds.len() as f64;
        let val_miou = if validate && (epoch + 1) % config.eval_every == 0 {
            let cm = score_shapes(
                &model,
                val_shapes,
                table,
                &val_columns,
                dataset.manifest.labels.len(),
                config.points,
                config.seed,
            )?;
            Some(compute_metrics(&cm, &dataset.manifest.labels)?.miou)
        } else {
            None
        };
        log::info!(
            "epoch {}/{}: loss {:.5}{} ({:.1}s)",
            epoch + 1,
            config.epochs,
            mean_loss,
            val_miou.map(|v| format!(", val mIoU {v:.4}")).unwrap_or_default(),
            started.elapsed().as_secs_f64()
        );
        log.push(EpochRecord {
            epoch,
            mean_loss,
            val_miou,
        });
    }

    let metadata = TrainingMetadata {
        epochs_completed: config.epochs,
        seed: config.seed,
        loss_history: log.iter().map(|r| r.mean_loss).collect(),
        labels: table.labels().to_vec(),
        embeddings_sha256: table.fingerprint(),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: config.clone(),
            metadata,
            model,
        },
        log,
    })
}

/// One JSON object per line.
pub fn write_log(path: impl AsRef<Path>, log: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in log {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

const OADC_MAGIC: &[u8; 4] = b"OADC";
const OADC_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    /// Byte offset into the blob section.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OadcHeader {
    config: TrainConfig,
    encoder: EncoderConfig,
    metadata: TrainingMetadata,
    parameters: Vec<ParamEntry>,
}

impl Checkpoint {
    /// Serializes to OADC: magic, `u32` version, `u32` header length, JSON
    /// header, then `f32` little-endian parameter blobs.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let store = self.store();
        let mut offset = 0;
        let parameters = store
            .iter()
            .map(|p| {
                let e = ParamEntry {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    trainable: p.trainable,
                    offset,
                };
                offset += 4 * p.values.len();
                e
            })
            .collect();
        let header = OadcHeader {
            config: self.config.clone(),
            encoder: self.model.params.encoder.config().clone(),
            metadata: self.metadata.clone(),
            parameters,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + offset);
        out.extend_from_slice(OADC_MAGIC);
        out.extend_from_slice(&OADC_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in store.iter() {
            for &v in &p.values {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |msg: &str| Err(Error::Format(format!("OADC: {msg}")));
        if bytes.len() < 12 {
            return fail("truncated preamble");
        }
        if &bytes[..4] != OADC_MAGIC {
            return fail("bad magic");
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != OADC_VERSION {
            return Err(Error::Format(format!("OADC: unsupported version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let Some(json) = bytes.get(12..12 + header_len) else {
            return fail("truncated header");
        };
        let header: OadcHeader =
            serde_json::from_slice(json).map_err(|e| Error::Format(format!("OADC header: {e}")))?;
        let blobs = &bytes[12 + header_len..];
        let mut store = ParameterStore::new();
        let mut expected_offset = 0;
        for p in &header.parameters {
            if p.offset != expected_offset {
                return Err(Error::Format(format!("OADC: parameter `{}` is not contiguous", p.name)));
            }
            let numel: usize = p.shape.iter().product();
            let Some(raw) = blobs.get(p.offset..p.offset + 4 * numel) else {
                return Err(Error::Format(format!("OADC: truncated blob for `{}`", p.name)));
            };
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            store
                .register(&p.name, p.shape.clone(), values, p.trainable)
                .map_err(|e| Error::Format(format!("OADC: {e}")))?;
            expected_offset += 4 * numel;
        }
        if blobs.len() != expected_offset {
            return Err(Error::Format(format!(
                "OADC: {} trailing bytes after parameter blobs",
                blobs.len() - expected_offset
            )));
        }
        let model = AffordanceModel::from_store(header.encoder, store, header.config.temperature)
            .map_err(|e| Error::Format(format!("OADC: manifest disagrees with architecture: {e}")))?;
        Ok(Self {
            config: header.config,
            metadata: header.metadata,
            model,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint.to_bytes()?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
