use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `out[i] = in[i]·W + b` for every row; `W` is `d_in × d_out`.
pub fn pointwise_linear(
    input: ArrayView2<'_, f64>,
    weight: ArrayView2<'_, f64>,
    bias: ArrayView1<'_, f64>,
) -> Result<Array2<f64>> {
    if input.ncols() != weight.nrows() || weight.ncols() != bias.len() {
        return Err(Error::Shape(format!(
            "linear: input {:?}, weight {:?}, bias [{}]",
            input.dim(),
            weight.dim(),
            bias.len()
        )));
    }
    let mut out = input.dot(&weight);
    out += &bias;
    Ok(out)
}

pub struct LinearGrads {
    pub input: Array2<f64>,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

pub fn linear_backward(
    input: ArrayView2<'_, f64>,
    weight: ArrayView2<'_, f64>,
    grad_out: ArrayView2<'_, f64>,
) -> LinearGrads {
    LinearGrads {
        input: grad_out.dot(&weight.t()),
        weight: input.t().dot(&grad_out),
        bias: column_sums(grad_out),
    }
}

pub fn relu(input: ArrayView2<'_, f64>) -> Array2<f64> {
    input.mapv(|v| v.max(0.0))
}

/// `pre` is the input the forward pass saw.
pub fn relu_backward(pre: ArrayView2<'_, f64>, grad_out: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut g = grad_out.to_owned();
    ndarray::Zip::from(&mut g).and(pre).for_each(|g, &x| {
        if x <= 0.0 {
            *g = 0.0;
        }
    });
    g
}

fn column_sums(m: ArrayView2<'_, f64>) -> Array1<f64> {
    let mut out = Array1::zeros(m.ncols());
    for row in m.rows() {
        out += &row;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            var: Array1::ones(dim),
        }
    }

    /// Exponential moving average with the unbiased batch variance.
    pub fn update(&mut self, cache: &BatchNormCache, momentum: f64) {
        let n = cache.x_hat.nrows() as f64;
        let unbias = n / (n - 1.0);
        self.mean
            .zip_mut_with(&cache.batch_mean, |r, &b| *r = (1.0 - momentum) * *r + momentum * b);
        self.var.zip_mut_with(&cache.batch_var, |r, &b| {
            *r = (1.0 - momentum) * *r + momentum * b * unbias
        });
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    pub batch_mean: Array1<f64>,
    /// Biased (divide by n) variance used for normalization.
    pub batch_var: Array1<f64>,
}

/// Train-mode batch norm over the rows (points) of `input`.
pub fn batch_norm_train(
    input: ArrayView2<'_, f64>,
    gain: ArrayView1<'_, f64>,
    shift: ArrayView1<'_, f64>,
    eps: f64,
) -> Result<(Array2<f64>, BatchNormCache)> {
    let (n, d) = input.dim();
    if n < 2 {
        return Err(Error::BatchNormTooFewPoints(n));
    }
    if gain.len() != d || shift.len() != d {
        return Err(Error::Shape(format!(
            "batch norm: input {:?}, gain [{}], shift [{}]",
            input.dim(),
            gain.len(),
            shift.len()
        )));
    }
    let mean = column_sums(input) / n as f64;
    let centered = &input - &mean;
    let var = column_sums(centered.mapv(|v| v * v).view()) / n as f64;
    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
    let x_hat = &centered * &inv_std;
    let out = &x_hat * &gain + shift;
    Ok((
        out,
        BatchNormCache {
            x_hat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    ))
}

pub fn batch_norm_eval(
    input: ArrayView2<'_, f64>,
    gain: ArrayView1<'_, f64>,
    shift: ArrayView1<'_, f64>,
    running: &RunningStats,
    eps: f64,
) -> Result<Array2<f64>> {
    let d = input.ncols();
    if gain.len() != d || shift.len() != d || running.mean.len() != d {
        return Err(Error::Shape(format!(
            "batch norm: input {:?}, gain [{}], running [{}]",
            input.dim(),
            gain.len(),
            running.mean.len()
        )));
    }
    let scale = ndarray::Zip::from(&running.var)
        .and(&gain)
        .map_collect(|&v, &g| g / (v + eps).sqrt());
    let offset = &shift - &(&running.mean * &scale);
    Ok(&input * &scale + &offset)
}

/// Batch norm in either mode; train mode also folds the batch statistics
/// into `state`.
pub fn batch_norm_points(
    input: ArrayView2<'_, f64>,
    gain: ArrayView1<'_, f64>,
    shift: ArrayView1<'_, f64>,
    mode: Mode,
    state: &mut RunningStats,
    config: BatchNormConfig,
) -> Result<(Array2<f64>, Option<BatchNormCache>)> {
    match mode {
        Mode::Train => {
            let (out, cache) = batch_norm_train(input, gain, shift, config.eps)?;
            state.update(&cache, config.momentum);
            Ok((out, Some(cache)))
        }
        Mode::Eval => Ok((batch_norm_eval(input, gain, shift, state, config.eps)?, None)),
    }
}

/// Returns gradients with respect to input, gain and shift.
pub fn batch_norm_backward(
    cache: &BatchNormCache,
    gain: ArrayView1<'_, f64>,
    grad_out: ArrayView2<'_, f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let n = cache.x_hat.nrows() as f64;
    let d_shift = column_sums(grad_out);
    let d_gain = column_sums((&grad_out * &cache.x_hat).view());
    // dx = gain·inv_std/n · (n·dy − Σdy − x̂·Σ(dy·x̂))
    let coef = &gain * &cache.inv_std / n;
    let mut dx = &grad_out * n - &d_shift - &(&cache.x_hat * &d_gain);
    dx *= &coef;
    (dx, d_gain, d_shift)
}

/// Column-wise maximum over points plus the row each maximum came from
/// (lowest row on ties).
pub fn max_pool_points(input: ArrayView2<'_, f64>) -> (Array1<f64>, Vec<usize>) {
    let (n, d) = input.dim();
    assert!(n >= 1, "max pool over an empty cloud");
    let mut best = input.row(0).to_owned();
    let mut arg = vec![0usize; d];
    for i in 1..n {
        let row = input.row(i);
        for j in 0..d {
            if row[j] > best[j] {
                best[j] = row[j];
                arg[j] = i;
            }
        }
    }
    (best, arg)
}

pub fn max_pool_backward(argmax: &[usize], n: usize, grad_out: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut g = Array2::zeros((n, argmax.len()));
    for (j, &i) in argmax.iter().enumerate() {
        g[[i, j]] += grad_out[j];
    }
    g
}

pub fn log_softmax_rows(input: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = input.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// `output` is the forward result of [`log_softmax_rows`].
pub fn log_softmax_backward(output: ArrayView2<'_, f64>, grad_out: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut g = grad_out.to_owned();
    for (mut g_row, out_row) in g.axis_iter_mut(Axis(0)).zip(output.axis_iter(Axis(0))) {
        let total: f64 = g_row.iter().sum();
        ndarray::Zip::from(&mut g_row)
            .and(&out_row)
            .for_each(|g, &o| *g -= o.exp() * total);
    }
    g
}
