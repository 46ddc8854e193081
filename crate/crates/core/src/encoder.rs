//! Point feature network.
//!
//! A PointNet-style local/global architecture:
//!
//! ```text
//! xyz ─▶ [linear → BN → ReLU]* ─▶ local ─┬─────────────────────┐
//!                                         └─▶ max-pool ─▶ global ┤ concat
//!        [linear → BN → ReLU]* ◀─────────────────────────────────┘
//!        linear(D) → BN ─▶ per-point features
//! ```
//!
//! Every stage except the max-pool acts on points independently, so the
//! network is permutation-equivariant. In training, batch norm normalizes
//! over every point of every cloud in the batch; inference uses the running
//! statistics.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{
    self, BatchNormCache, BatchNormConfig, FeatureMatrix, Gradients, Mode, ParamId, ParameterStore, RunningStats,
};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Shared per-point MLP, starting at the 3 input coordinates.
    pub point_widths: Vec<usize>,
    /// Width of the max-pooled global feature; equals the last point width.
    pub global_width: usize,
    /// MLP after concatenation; the first entry is the concat width.
    pub head_widths: Vec<usize>,
    pub output_dim: usize,
    pub seed: u64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
}

fn default_bn_momentum() -> f64 {
    BatchNormConfig::default().momentum
}

fn default_bn_eps() -> f64 {
    BatchNormConfig::default().eps
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            point_widths: vec![3, 64, 128, 256],
            global_width: 256,
            head_widths: vec![512, 512],
            output_dim: 512,
            seed: 0,
            bn_momentum: default_bn_momentum(),
            bn_eps: default_bn_eps(),
        }
    }
}

impl EncoderConfig {
    /// Narrow network for CPU-scale experiments.
    pub fn desk(output_dim: usize) -> Self {
        Self {
            point_widths: vec![3, 32, 64, 64],
            global_width: 64,
            head_widths: vec![128, 128],
            output_dim,
            ..Self::default()
        }
    }

    /// Tiny network for gradient checks.
    pub fn tiny(output_dim: usize) -> Self {
        Self {
            point_widths: vec![3, 8, 16],
            global_width: 16,
            head_widths: vec![32, 16],
            output_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.output_dim == 0 {
            return fail("output dimension must be positive".into());
        }
        if self.point_widths.len() < 2 || self.point_widths[0] != 3 {
            return fail(format!(
                "point widths must start at 3 and have at least one layer, got {:?}",
                self.point_widths
            ));
        }
        if self.point_widths.iter().chain(&self.head_widths).any(|&w| w == 0) {
            return fail("layer widths must be positive".into());
        }
        let local = *self.point_widths.last().unwrap();
        if self.global_width != local {
            return fail(format!(
                "global width {} must equal the last point width {local} (max-pooled)",
                self.global_width
            ));
        }
        match self.head_widths.first() {
            Some(&c) if c == local + self.global_width => {}
            _ => {
                return fail(format!(
                    "first head width must be the concat width {}, got {:?}",
                    local + self.global_width,
                    self.head_widths
                ))
            }
        }
        if self.bn_eps.is_nan() || self.bn_eps <= 0.0 || !(0.0..=1.0).contains(&self.bn_momentum) {
            return fail("batch norm eps must be positive and momentum in [0, 1]".into());
        }
        Ok(())
    }

    fn bn(&self) -> BatchNormConfig {
        BatchNormConfig {
            momentum: self.bn_momentum,
            eps: self.bn_eps,
        }
    }

    /// `(d_in, d_out, relu)` for every linear+BN block in forward order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, bool)> {
        let mut out: Vec<_> = self.point_widths.windows(2).map(|w| (w[0], w[1], true)).collect();
        out.extend(self.head_widths.windows(2).map(|w| (w[0], w[1], true)));
        out.push((*self.head_widths.last().unwrap(), self.output_dim, false));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    weight: ParamId,
    bias: ParamId,
    gain: ParamId,
    shift: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    relu: bool,
}

impl Block {
    fn register(
        store: &mut ParameterStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        relu: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = (6.0 / d_in as f64).sqrt();
        let w: Vec<f64> = (0..d_in * d_out).map(|_| rng.random_range(-bound..bound)).collect();
        Ok(Self {
            weight: store.register(format!("{prefix}.weight"), vec![d_in, d_out], w, true)?,
            bias: store.register(format!("{prefix}.bias"), vec![d_out], vec![0.0; d_out], true)?,
            gain: store.register(format!("{prefix}.bn.gain"), vec![d_out], vec![1.0; d_out], true)?,
            shift: store.register(format!("{prefix}.bn.shift"), vec![d_out], vec![0.0; d_out], true)?,
            running_mean: store.register(
                format!("{prefix}.bn.running_mean"),
                vec![d_out],
                vec![0.0; d_out],
                false,
            )?,
            running_var: store.register(format!("{prefix}.bn.running_var"), vec![d_out], vec![1.0; d_out], false)?,
            relu,
        })
    }

    fn lookup(store: &ParameterStore, prefix: &str, relu: bool) -> Result<Self> {
        let get = |suffix: &str| {
            store
                .id(&format!("{prefix}.{suffix}"))
                .ok_or_else(|| Error::Format(format!("missing parameter `{prefix}.{suffix}`")))
        };
        Ok(Self {
            weight: get("weight")?,
            bias: get("bias")?,
            gain: get("bn.gain")?,
            shift: get("bn.shift")?,
            running_mean: get("bn.running_mean")?,
            running_var: get("bn.running_var")?,
            relu,
        })
    }

    fn running(&self, store: &ParameterStore) -> RunningStats {
        RunningStats {
            mean: store.vector(self.running_mean).to_owned(),
            var: store.vector(self.running_var).to_owned(),
        }
    }

    fn forward(
        &self,
        store: &ParameterStore,
        input: Array2<f64>,
        mode: Mode,
        bn: BatchNormConfig,
    ) -> Result<(Array2<f64>, BlockCache)> {
        let lin = nn::pointwise_linear(input.view(), store.matrix(self.weight), store.vector(self.bias))?;
        let gain = store.vector(self.gain);
        let shift = store.vector(self.shift);
        let (normed, bn_cache) = match mode {
            Mode::Train => {
                let (o, c) = nn::batch_norm_train(lin.view(), gain, shift, bn.eps)?;
                (o, Some(c))
            }
            Mode::Eval => (
                nn::batch_norm_eval(lin.view(), gain, shift, &self.running(store), bn.eps)?,
                None,
            ),
        };
        let out = if self.relu {
            nn::relu(normed.view())
        } else {
            normed.clone()
        };
        Ok((
            out,
            BlockCache {
                input,
                bn: bn_cache,
                pre_act: normed,
            },
        ))
    }

    fn backward(
        &self,
        store: &ParameterStore,
        cache: &BlockCache,
        grad_out: Array2<f64>,
        grads: &mut Gradients,
    ) -> Result<Array2<f64>> {
        let g = if self.relu {
            nn::relu_backward(cache.pre_act.view(), grad_out.view())
        } else {
            grad_out
        };
        let bn = cache
            .bn
            .as_ref()
            .ok_or_else(|| Error::Config("backward requires a train-mode forward pass".into()))?;
        let (g_lin, g_gain, g_shift) = nn::batch_norm_backward(bn, store.vector(self.gain), g.view());
        grads.add_vector(self.gain, g_gain.view());
        grads.add_vector(self.shift, g_shift.view());
        let lg = nn::linear_backward(cache.input.view(), store.matrix(self.weight), g_lin.view());
        grads.add_matrix(self.weight, lg.weight.view());
        grads.add_vector(self.bias, lg.bias.view());
        Ok(lg.input)
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Array2<f64>,
    bn: Option<BatchNormCache>,
    pre_act: Array2<f64>,
}

/// Row ranges of consecutive clouds with the given sizes.
pub fn segments(sizes: &[usize]) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
    sizes.iter().scan(0, |start, &n| {
        let r = *start..*start + n;
        *start += n;
        Some(r)
    })
}

/// Activations kept for the backward pass of one batch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    sizes: Vec<usize>,
    point: Vec<BlockCache>,
    pool_argmax: Vec<Vec<usize>>,
    head: Vec<BlockCache>,
}

impl ForwardCache {
    /// Fingerprint of all ReLU gates and max-pool winners.
    pub fn kink_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for c in self.point.iter().chain(&self.head) {
            for &v in c.pre_act.iter() {
                (v > 0.0).hash(&mut h);
            }
        }
        self.pool_argmax.hash(&mut h);
        h.finish()
    }

    fn bn_caches(&self) -> impl Iterator<Item = Option<&BatchNormCache>> {
        self.point.iter().chain(&self.head).map(|c| c.bn.as_ref())
    }
}

/// Parameter handles of the encoder inside a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    point: Vec<Block>,
    head: Vec<Block>,
}

impl Encoder {
    /// Registers freshly initialized encoder parameters in `store`.
    pub fn register(config: EncoderConfig, store: &mut ParameterStore) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(config.seed, Stream::Init, 0);
        let n_point = config.point_widths.len() - 1;
        let mut point = Vec::new();
        let mut head = Vec::new();
        for (k, (d_in, d_out, relu)) in config.layer_shapes().into_iter().enumerate() {
            let prefix = block_prefix(&config, k);
            let block = Block::register(store, &prefix, d_in, d_out, relu, &mut rng)?;
            if k < n_point {
                point.push(block);
            } else {
                head.push(block);
            }
        }
        Ok(Self { config, point, head })
    }

    /// Resolves handles for parameters already present in `store`.
    pub fn attach(config: EncoderConfig, store: &ParameterStore) -> Result<Self> {
        config.validate()?;
        let n_point = config.point_widths.len() - 1;
        let mut point = Vec::new();
        let mut head = Vec::new();
        for (k, (d_in, d_out, relu)) in config.layer_shapes().into_iter().enumerate() {
            let block = Block::lookup(store, &block_prefix(&config, k), relu)?;
            if store.param(block.weight).shape != [d_in, d_out] {
                return Err(Error::Format(format!(
                    "parameter `{}` has shape {:?}, config expects [{d_in}, {d_out}]",
                    store.param(block.weight).name,
                    store.param(block.weight).shape
                )));
            }
            if k < n_point {
                point.push(block);
            } else {
                head.push(block);
            }
        }
        Ok(Self { config, point, head })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    /// Runs the network on an `n × 3` coordinate matrix. Train mode uses
    /// the cloud's own statistics but leaves the running statistics alone;
    /// see [`Encoder::update_running_stats`].
    pub fn forward(
        &self,
        store: &ParameterStore,
        coords: ArrayView2<'_, f64>,
        mode: Mode,
    ) -> Result<(FeatureMatrix, ForwardCache)> {
        self.forward_batch(store, coords, &[coords.nrows()], mode)
    }

    /// Runs the network on several clouds stacked row-wise; `sizes` gives
    /// the number of rows of each. Max-pooling is per cloud, while train-mode
    /// batch norm normalizes over all rows of the batch.
    pub fn forward_batch(
        &self,
        store: &ParameterStore,
        coords: ArrayView2<'_, f64>,
        sizes: &[usize],
        mode: Mode,
    ) -> Result<(FeatureMatrix, ForwardCache)> {
        if coords.ncols() != 3 {
            return Err(Error::Shape(format!(
                "encoder input must be n × 3, got {:?}",
                coords.dim()
            )));
        }
        if sizes.iter().sum::<usize>() != coords.nrows() || sizes.contains(&0) {
            return Err(Error::Shape(format!(
                "cloud sizes {sizes:?} do not partition {} rows",
                coords.nrows()
            )));
        }
        let bn = self.config.bn();
        let mut x = coords.to_owned();
        let mut point_caches = Vec::with_capacity(self.point.len());
        for block in &self.point {
            let (out, cache) = block.forward(store, x, mode, bn)?;
            point_caches.push(cache);
            x = out;
        }
        let mut broadcast = Array2::zeros((x.nrows(), self.config.global_width));
        let mut argmaxes = Vec::with_capacity(sizes.len());
        for range in segments(sizes) {
            let (global, argmax) = nn::max_pool_points(x.slice(s![range.clone(), ..]));
            broadcast.slice_mut(s![range, ..]).assign(&global);
            argmaxes.push(argmax);
        }
        let mut h = concatenate(Axis(1), &[x.view(), broadcast.view()]).expect("concat of equal row counts");
        let mut head_caches = Vec::with_capacity(self.head.len());
        for block in &self.head {
            let (out, cache) = block.forward(store, h, mode, bn)?;
            head_caches.push(cache);
            h = out;
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeatures);
        }
        Ok((
            h,
            ForwardCache {
                sizes: sizes.to_vec(),
                point: point_caches,
                pool_argmax: argmaxes,
                head: head_caches,
            },
        ))
    }

    /// Back-propagates `grad_out` (rows × D) into `grads`; returns the
    /// gradient with respect to the input coordinates.
    pub fn backward(
        &self,
        store: &ParameterStore,
        cache: &ForwardCache,
        grad_out: Array2<f64>,
        grads: &mut Gradients,
    ) -> Result<Array2<f64>> {
        let mut g = grad_out;
        for (block, c) in self.head.iter().zip(&cache.head).rev() {
            g = block.backward(store, c, g, grads)?;
        }
        let local = *self.config.point_widths.last().unwrap();
        let mut g_local = g.slice(s![.., ..local]).to_owned();
        for (range, argmax) in segments(&cache.sizes).zip(&cache.pool_argmax) {
            let mut g_global = Array1::<f64>::zeros(self.config.global_width);
            for row in g.slice(s![range.clone(), local..]).rows() {
                g_global += &row;
            }
            let mut part = g_local.slice_mut(s![range.clone(), ..]);
            part += &nn::max_pool_backward(argmax, range.len(), g_global.view());
        }
        let mut g = g_local;
        for (block, c) in self.point.iter().zip(&cache.point).rev() {
            g = block.backward(store, c, g, grads)?;
        }
        Ok(g)
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// statistics.
    pub fn update_running_stats(&self, store: &mut ParameterStore, cache: &ForwardCache) {
        let momentum = self.config.bn_momentum;
        for (block, bn) in self.point.iter().chain(&self.head).zip(cache.bn_caches()) {
            let Some(bn) = bn else { continue };
            let mut stats = block.running(store);
            stats.update(bn, momentum);
            store
                .values_mut(block.running_mean)
                .copy_from_slice(stats.mean.as_slice().unwrap());
            store
                .values_mut(block.running_var)
                .copy_from_slice(stats.var.as_slice().unwrap());
        }
    }
}

fn block_prefix(config: &EncoderConfig, k: usize) -> String {
    let n_point = config.point_widths.len() - 1;
    let n_head = config.head_widths.len() - 1;
    if k < n_point {
        format!("encoder.point.{k}")
    } else if k < n_point + n_head {
        format!("encoder.mlp.{}", k - n_point)
    } else {
        "encoder.out".to_string()
    }
}

/// Encoder handles plus the store that owns the values.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub encoder: Encoder,
    pub store: ParameterStore,
}

pub fn init_encoder(config: EncoderConfig) -> Result<EncoderParams> {
    let mut store = ParameterStore::new();
    let encoder = Encoder::register(config, &mut store)?;
    Ok(EncoderParams { encoder, store })
}

pub fn cloud_matrix(cloud: &PointCloud) -> Array2<f64> {
    Array2::from_shape_fn((cloud.len(), 3), |(i, a)| cloud.points()[i][a])
}

/// Per-point features of a normalized cloud. Train mode uses batch
/// statistics without updating the running ones.
pub fn encode_points(params: &EncoderParams, cloud: &PointCloud, mode: Mode) -> Result<FeatureMatrix> {
    let radius = cloud.max_norm();
    if radius > 1.0 + 1e-3 {
        log::warn!("encoding a cloud with max norm {radius:.4}; expected a normalized cloud");
    }
    let (features, _) = params
        .encoder
        .forward(&params.store, cloud_matrix(cloud).view(), mode)?;
    Ok(features)
}
