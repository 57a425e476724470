//! The seven layer kinds and their forward/backward rules.
//!
//! Activations are batched: convolutional tensors are `[N, C, T]`, dense
//! tensors `[N, D]`. Every backward rule takes the cache produced by the
//! matching forward call.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding that keeps the temporal length, `(k-1)/2` on the left.
    Same,
    Valid,
}

impl Padding {
    fn left(self, kernel: usize) -> usize {
        match self {
            Padding::Same => (kernel - 1) / 2,
            Padding::Valid => 0,
        }
    }

    fn out_len(self, steps: usize, kernel: usize) -> usize {
        match self {
            Padding::Same => steps,
            Padding::Valid => steps + 1 - kernel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Architecture description of one layer, without weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv1d {
        filters: usize,
        kernel_size: usize,
        padding: Padding,
    },
    Batchnorm {
        momentum: f64,
        epsilon: f64,
    },
    Relu,
    GlobalAvgPool,
    Dense {
        units: usize,
    },
    Dropout {
        rate: f64,
    },
    Softmax,
}

impl LayerSpec {
    pub fn conv1d(filters: usize, kernel_size: usize) -> Self {
        LayerSpec::Conv1d {
            filters,
            kernel_size,
            padding: Padding::Same,
        }
    }

    pub fn batchnorm() -> Self {
        LayerSpec::Batchnorm {
            momentum: DEFAULT_BN_MOMENTUM,
            epsilon: DEFAULT_BN_EPSILON,
        }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units }
    }

    pub fn dropout(rate: f64) -> Self {
        LayerSpec::Dropout { rate }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Batchnorm { .. } => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::GlobalAvgPool => "global-avg-pool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Softmax => "softmax",
        }
    }
}

pub const DEFAULT_BN_MOMENTUM: f64 = 0.9;
pub const DEFAULT_BN_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub in_channels: usize,
    pub filters: usize,
    pub kernel_size: usize,
    pub padding: Padding,
    /// `[filters, in_channels * kernel_size]`, tap index fastest.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub features: usize,
    pub momentum: f64,
    pub epsilon: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub units: usize,
    /// `[units, inputs]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// A layer with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Layer {
    Conv1d(Conv1d),
    Batchnorm(BatchNorm),
    Relu,
    GlobalAvgPool,
    Dense(Dense),
    Dropout { rate: f64 },
    Softmax,
}

/// Per-layer state kept between forward and backward.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Conv {
        input: Tensor,
    },
    Batchnorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu {
        mask: Vec<bool>,
    },
    Pool {
        steps: usize,
    },
    Dense {
        input: Tensor,
    },
    Dropout {
        scale: Option<Vec<f64>>,
    },
    Softmax,
}

/// Batch statistics collected by a train-mode batchnorm forward.
#[derive(Debug, Clone)]
pub(crate) struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv1d(c) => LayerSpec::Conv1d {
                filters: c.filters,
                kernel_size: c.kernel_size,
                padding: c.padding,
            },
            Layer::Batchnorm(b) => LayerSpec::Batchnorm {
                momentum: b.momentum,
                epsilon: b.epsilon,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::GlobalAvgPool => LayerSpec::GlobalAvgPool,
            Layer::Dense(d) => LayerSpec::Dense { units: d.units },
            Layer::Dropout { rate } => LayerSpec::Dropout { rate: *rate },
            Layer::Softmax => LayerSpec::Softmax,
        }
    }

    /// Builds a layer for a per-sample input shape, returning it with its
    /// per-sample output shape. Weights use fan-in scaled uniform draws.
    pub(crate) fn build<R: Rng>(
        spec: &LayerSpec,
        input: &[usize],
        rng: &mut R,
    ) -> Result<(Layer, Vec<usize>)> {
        match *spec {
            LayerSpec::Conv1d {
                filters,
                kernel_size,
                padding,
            } => {
                let [channels, steps] = two_dims(input, "conv1d")?;
                if kernel_size == 0 || filters == 0 {
                    return Err(Error::InvalidArgument(
                        "conv1d needs kernel size >= 1 and filters >= 1".into(),
                    ));
                }
                if steps < kernel_size {
                    return Err(Error::Shape(format!(
                        "conv1d kernel {kernel_size} longer than input length {steps}"
                    )));
                }
                let fan_in = channels * kernel_size;
                let layer = Conv1d {
                    in_channels: channels,
                    filters,
                    kernel_size,
                    padding,
                    weight: uniform_init(rng, filters * fan_in, fan_in),
                    bias: vec![0.0; filters],
                };
                let out = vec![filters, padding.out_len(steps, kernel_size)];
                Ok((Layer::Conv1d(layer), out))
            }
            LayerSpec::Batchnorm { momentum, epsilon } => {
                let features = *input
                    .first()
                    .ok_or_else(|| Error::Shape("batchnorm on a scalar input".into()))?;
                if !(0.0..1.0).contains(&momentum) || epsilon <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "batchnorm momentum {momentum} / epsilon {epsilon} out of range"
                    )));
                }
                let layer = BatchNorm {
                    features,
                    momentum,
                    epsilon,
                    gamma: vec![1.0; features],
                    beta: vec![0.0; features],
                    running_mean: vec![0.0; features],
                    running_var: vec![1.0; features],
                };
                Ok((Layer::Batchnorm(layer), input.to_vec()))
            }
            LayerSpec::Relu => Ok((Layer::Relu, input.to_vec())),
            LayerSpec::GlobalAvgPool => {
                let [channels, _] = two_dims(input, "global-avg-pool")?;
                Ok((Layer::GlobalAvgPool, vec![channels]))
            }
            LayerSpec::Dense { units } => {
                if input.len() != 1 {
                    return Err(Error::Shape(format!(
                        "dense expects a flat input, got {input:?}"
                    )));
                }
                if units == 0 {
                    return Err(Error::InvalidArgument("dense needs units >= 1".into()));
                }
                let inputs = input[0];
                let layer = Dense {
                    inputs,
                    units,
                    weight: uniform_init(rng, units * inputs, inputs),
                    bias: vec![0.0; units],
                };
                Ok((Layer::Dense(layer), vec![units]))
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::InvalidArgument(format!(
                        "dropout rate {rate} outside [0, 1)"
                    )));
                }
                Ok((Layer::Dropout { rate }, input.to_vec()))
            }
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(Error::Shape(format!(
                        "softmax expects a flat input, got {input:?}"
                    )));
                }
                Ok((Layer::Softmax, input.to_vec()))
            }
        }
    }

    pub(crate) fn forward<R: Rng>(
        &self,
        x: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor, Cache, Option<BatchStats>)> {
        match self {
            Layer::Conv1d(c) => Ok((c.forward(x)?, Cache::Conv { input: x.clone() }, None)),
            Layer::Batchnorm(b) => b.forward(x, mode),
            Layer::Relu => {
                let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
                let data = x.data().iter().map(|&v| v.max(0.0)).collect();
                Ok((
                    Tensor::new(x.shape().to_vec(), data)?,
                    Cache::Relu { mask },
                    None,
                ))
            }
            Layer::GlobalAvgPool => {
                let (n, c, t) = ncs(x)?;
                let data = x
                    .data()
                    .chunks_exact(t)
                    .map(|row| row.iter().sum::<f64>() / t as f64)
                    .collect();
                Ok((
                    Tensor::new(vec![n, c], data)?,
                    Cache::Pool { steps: t },
                    None,
                ))
            }
            Layer::Dense(d) => Ok((d.forward(x)?, Cache::Dense { input: x.clone() }, None)),
            Layer::Dropout { rate } => {
                if mode == Mode::Infer || *rate == 0.0 {
                    return Ok((x.clone(), Cache::Dropout { scale: None }, None));
                }
                let keep = 1.0 - rate;
                let scale: Vec<f64> = (0..x.len())
                    .map(|_| {
                        if rng.gen::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let data = x.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
                Ok((
                    Tensor::new(x.shape().to_vec(), data)?,
                    Cache::Dropout { scale: Some(scale) },
                    None,
                ))
            }
            Layer::Softmax => {
                let [n, m] = two_dims(x.shape(), "softmax batch")?;
                let mut data = x.data().to_vec();
                for row in data.chunks_exact_mut(m) {
                    softmax_in_place(row);
                }
                Ok((Tensor::new(vec![n, m], data)?, Cache::Softmax, None))
            }
        }
    }

    /// Returns the input gradient. Parameter gradients are written into
    /// `param_grads` (in [`Layer::param_count`] order) when provided.
    pub(crate) fn backward(
        &self,
        grad: &Tensor,
        cache: &Cache,
        param_grads: Option<&mut [Vec<f64>]>,
    ) -> Result<Tensor> {
        match (self, cache) {
            (Layer::Conv1d(c), Cache::Conv { input }) => c.backward(grad, input, param_grads),
            (
                Layer::Batchnorm(b),
                Cache::Batchnorm {
                    xhat,
                    inv_std,
                    train,
                },
            ) => b.backward(grad, xhat, inv_std, *train, param_grads),
            (Layer::Relu, Cache::Relu { mask }) => {
                let data = grad
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&g, &on)| if on { g } else { 0.0 })
                    .collect();
                Tensor::new(grad.shape().to_vec(), data)
            }
            (Layer::GlobalAvgPool, Cache::Pool { steps }) => {
                let [n, c] = two_dims(grad.shape(), "pool gradient")?;
                let inv = 1.0 / *steps as f64;
                let mut data = Vec::with_capacity(n * c * steps);
                for &g in grad.data() {
                    data.extend(std::iter::repeat_n(g * inv, *steps));
                }
                Tensor::new(vec![n, c, *steps], data)
            }
            (Layer::Dense(d), Cache::Dense { input }) => d.backward(grad, input, param_grads),
            (Layer::Dropout { .. }, Cache::Dropout { scale }) => match scale {
                None => Ok(grad.clone()),
                Some(s) => {
                    let data = grad.data().iter().zip(s).map(|(g, s)| g * s).collect();
                    Tensor::new(grad.shape().to_vec(), data)
                }
            },
            (Layer::Softmax, Cache::Softmax) => Err(Error::InvalidArgument(
                "softmax is differentiated through its logits".into(),
            )),
            _ => Err(Error::InvalidArgument("cache does not match layer".into())),
        }
    }

    /// Number of trainable parameter vectors.
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv1d(_) | Layer::Batchnorm(_) | Layer::Dense(_) => 2,
            _ => 0,
        }
    }

    pub fn param_lens(&self) -> Vec<usize> {
        match self {
            Layer::Conv1d(c) => vec![c.weight.len(), c.bias.len()],
            Layer::Batchnorm(b) => vec![b.gamma.len(), b.beta.len()],
            Layer::Dense(d) => vec![d.weight.len(), d.bias.len()],
            _ => vec![],
        }
    }

    pub fn params(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::Conv1d(c) => vec![&c.weight, &c.bias],
            Layer::Batchnorm(b) => vec![&b.gamma, &b.beta],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Batchnorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => vec![],
        }
    }

    pub(crate) fn commit_stats(&mut self, stats: &BatchStats) {
        if let Layer::Batchnorm(b) = self {
            let m = b.momentum;
            let bessel = if stats.count > 1 {
                stats.count as f64 / (stats.count - 1) as f64
            } else {
                1.0
            };
            for i in 0..b.features {
                b.running_mean[i] = m * b.running_mean[i] + (1.0 - m) * stats.mean[i];
                b.running_var[i] = m * b.running_var[i] + (1.0 - m) * stats.var[i] * bessel;
            }
        }
    }
}

impl Conv1d {
    fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_size
    }

    /// Unfolds `[N, C, T]` into `[C*k, N*T_out]` with zero padding.
    fn im2col(&self, x: &[f64], n: usize, steps: usize) -> (Vec<f64>, usize) {
        let k = self.kernel_size;
        let left = self.padding.left(k) as isize;
        let t_out = self.padding.out_len(steps, k);
        let cols_w = n * t_out;
        let mut cols = vec![0.0; self.fan_in() * cols_w];
        for ci in 0..self.in_channels {
            for j in 0..k {
                let row = &mut cols[(ci * k + j) * cols_w..(ci * k + j + 1) * cols_w];
                let shift = j as isize - left;
                for ni in 0..n {
                    let src = &x[(ni * self.in_channels + ci) * steps..][..steps];
                    let dst = &mut row[ni * t_out..(ni + 1) * t_out];
                    let lo = (-shift).max(0) as usize;
                    let hi = ((steps as isize - shift).min(t_out as isize)).max(0) as usize;
                    if lo < hi {
                        let s0 = (lo as isize + shift) as usize;
                        dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                }
            }
        }
        (cols, t_out)
    }

    fn col2im(&self, cols: &[f64], n: usize, steps: usize, t_out: usize) -> Vec<f64> {
        let k = self.kernel_size;
        let left = self.padding.left(k) as isize;
        let cols_w = n * t_out;
        let mut x = vec![0.0; n * self.in_channels * steps];
        for ci in 0..self.in_channels {
            for j in 0..k {
                let row = &cols[(ci * k + j) * cols_w..(ci * k + j + 1) * cols_w];
                let shift = j as isize - left;
                for ni in 0..n {
                    let dst = &mut x[(ni * self.in_channels + ci) * steps..][..steps];
                    let src = &row[ni * t_out..(ni + 1) * t_out];
                    let lo = (-shift).max(0) as usize;
                    let hi = ((steps as isize - shift).min(t_out as isize)).max(0) as usize;
                    for t in lo..hi {
                        dst[(t as isize + shift) as usize] += src[t];
                    }
                }
            }
        }
        x
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize)> {
        let (n, c, t) = ncs(x)?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv1d expects {} channels, got {c}",
                self.in_channels
            )));
        }
        if t < self.kernel_size {
            return Err(Error::Shape(format!(
                "conv1d kernel {} longer than input length {t}",
                self.kernel_size
            )));
        }
        Ok((n, t))
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, steps) = self.check_input(x)?;
        let (cols, t_out) = self.im2col(x.data(), n, steps);
        let cols_w = n * t_out;
        let mut y2 = vec![0.0; self.filters * cols_w];
        gemm(
            self.filters,
            self.fan_in(),
            cols_w,
            &self.weight,
            false,
            &cols,
            false,
            0.0,
            &mut y2,
        );
        let mut out = vec![0.0; n * self.filters * t_out];
        for f in 0..self.filters {
            let b = self.bias[f];
            for ni in 0..n {
                let src = &y2[f * cols_w + ni * t_out..][..t_out];
                let dst = &mut out[(ni * self.filters + f) * t_out..][..t_out];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + b;
                }
            }
        }
        Tensor::new(vec![n, self.filters, t_out], out)
    }

    fn backward(
        &self,
        grad: &Tensor,
        input: &Tensor,
        param_grads: Option<&mut [Vec<f64>]>,
    ) -> Result<Tensor> {
        let (n, steps) = self.check_input(input)?;
        let t_out = self.padding.out_len(steps, self.kernel_size);
        if grad.shape() != [n, self.filters, t_out] {
            return Err(Error::Shape(format!(
                "conv1d gradient {:?} vs expected [{n}, {}, {t_out}]",
                grad.shape(),
                self.filters
            )));
        }
        let cols_w = n * t_out;
        // [N, F, T] -> [F, N*T]
        let mut g2 = vec![0.0; self.filters * cols_w];
        for ni in 0..n {
            for f in 0..self.filters {
                g2[f * cols_w + ni * t_out..][..t_out]
                    .copy_from_slice(&grad.data()[(ni * self.filters + f) * t_out..][..t_out]);
            }
        }
        let (cols, _) = self.im2col(input.data(), n, steps);
        if let Some(pg) = param_grads {
            gemm(
                self.filters,
                cols_w,
                self.fan_in(),
                &g2,
                false,
                &cols,
                true,
                1.0,
                &mut pg[0],
            );
            for f in 0..self.filters {
                pg[1][f] += g2[f * cols_w..(f + 1) * cols_w].iter().sum::<f64>();
            }
        }
        let mut dcols = cols;
        gemm(
            self.fan_in(),
            self.filters,
            cols_w,
            &self.weight,
            true,
            &g2,
            false,
            0.0,
            &mut dcols,
        );
        let dx = self.col2im(&dcols, n, steps, t_out);
        Tensor::new(vec![n, self.in_channels, steps], dx)
    }
}

impl BatchNorm {
    /// Views the input as `[N, features, S]`.
    fn layout(&self, x: &Tensor) -> Result<(usize, usize)> {
        let shape = x.shape();
        if shape.len() < 2 || shape[1] != self.features {
            return Err(Error::Shape(format!(
                "batchnorm over {} features got {shape:?}",
                self.features
            )));
        }
        Ok((shape[0], shape[2..].iter().product()))
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Cache, Option<BatchStats>)> {
        let (n, s) = self.layout(x)?;
        let f = self.features;
        let data = x.data();
        let (mean, var) = match mode {
            Mode::Infer => (self.running_mean.clone(), self.running_var.clone()),
            Mode::Train => {
                let count = (n * s) as f64;
                let mut mean = vec![0.0; f];
                let mut var = vec![0.0; f];
                for ni in 0..n {
                    for fi in 0..f {
                        mean[fi] += data[(ni * f + fi) * s..][..s].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for ni in 0..n {
                    for fi in 0..f {
                        let m = mean[fi];
                        var[fi] += data[(ni * f + fi) * s..][..s]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect();
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        for ni in 0..n {
            for fi in 0..f {
                let base = (ni * f + fi) * s;
                for j in base..base + s {
                    let h = (data[j] - mean[fi]) * inv_std[fi];
                    xhat[j] = h;
                    out[j] = self.gamma[fi] * h + self.beta[fi];
                }
            }
        }
        let train = mode == Mode::Train;
        let stats = train.then(|| BatchStats {
            mean,
            var,
            count: n * s,
        });
        Ok((
            Tensor::new(x.shape().to_vec(), out)?,
            Cache::Batchnorm {
                xhat,
                inv_std,
                train,
            },
            stats,
        ))
    }

    fn backward(
        &self,
        grad: &Tensor,
        xhat: &[f64],
        inv_std: &[f64],
        train: bool,
        param_grads: Option<&mut [Vec<f64>]>,
    ) -> Result<Tensor> {
        let (n, s) = self.layout(grad)?;
        let f = self.features;
        let g = grad.data();
        let mut sum_g = vec![0.0; f];
        let mut sum_gx = vec![0.0; f];
        for ni in 0..n {
            for fi in 0..f {
                let base = (ni * f + fi) * s;
                for j in base..base + s {
                    sum_g[fi] += g[j];
                    sum_gx[fi] += g[j] * xhat[j];
                }
            }
        }
        if let Some(pg) = param_grads {
            for fi in 0..f {
                pg[0][fi] += sum_gx[fi];
                pg[1][fi] += sum_g[fi];
            }
        }
        let count = (n * s) as f64;
        let mut dx = vec![0.0; g.len()];
        for ni in 0..n {
            for fi in 0..f {
                let base = (ni * f + fi) * s;
                let scale = self.gamma[fi] * inv_std[fi];
                for j in base..base + s {
                    dx[j] = if train {
                        scale * (g[j] - sum_g[fi] / count - xhat[j] * sum_gx[fi] / count)
                    } else {
                        scale * g[j]
                    };
                }
            }
        }
        Tensor::new(grad.shape().to_vec(), dx)
    }
}

impl Dense {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let [n, i] = two_dims(x.shape(), "dense batch")?;
        if i != self.inputs {
            return Err(Error::Shape(format!(
                "dense expects {} inputs, got {i}",
                self.inputs
            )));
        }
        let mut out = vec![0.0; n * self.units];
        for row in out.chunks_exact_mut(self.units) {
            row.copy_from_slice(&self.bias);
        }
        gemm(
            n,
            self.inputs,
            self.units,
            x.data(),
            false,
            &self.weight,
            true,
            1.0,
            &mut out,
        );
        Tensor::new(vec![n, self.units], out)
    }

    fn backward(
        &self,
        grad: &Tensor,
        input: &Tensor,
        param_grads: Option<&mut [Vec<f64>]>,
    ) -> Result<Tensor> {
        let [n, u] = two_dims(grad.shape(), "dense gradient")?;
        if u != self.units {
            return Err(Error::Shape(format!(
                "dense gradient has {u} units, expected {}",
                self.units
            )));
        }
        if let Some(pg) = param_grads {
            gemm(
                self.units,
                n,
                self.inputs,
                grad.data(),
                true,
                input.data(),
                false,
                1.0,
                &mut pg[0],
            );
            for row in grad.data().chunks_exact(u) {
                for (b, g) in pg[1].iter_mut().zip(row) {
                    *b += g;
                }
            }
        }
        let mut dx = vec![0.0; n * self.inputs];
        gemm(
            n,
            self.units,
            self.inputs,
            grad.data(),
            false,
            &self.weight,
            false,
            0.0,
            &mut dx,
        );
        Tensor::new(vec![n, self.inputs], dx)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

fn uniform_init<R: Rng>(rng: &mut R, len: usize, fan_in: usize) -> Vec<f64> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-limit..limit)).collect()
}

fn two_dims(shape: &[usize], what: &str) -> Result<[usize; 2]> {
    match shape {
        [a, b] => Ok([*a, *b]),
        _ => Err(Error::Shape(format!(
            "{what} expects 2 dims, got {shape:?}"
        ))),
    }
}

fn ncs(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [n, c, t] => Ok((*n, *c, *t)),
        s => Err(Error::Shape(format!("expected [N, C, T], got {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_padding_preserves_length_for_even_and_odd_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in [1, 2, 3, 5, 8] {
            let (layer, out) = Layer::build(&LayerSpec::conv1d(4, k), &[3, 20], &mut rng).unwrap();
            assert_eq!(out, vec![4, 20]);
            let x = Tensor::filled(vec![2, 3, 20], 1.0);
            let (y, _, _) = layer.forward(&x, Mode::Infer, &mut rng).unwrap();
            assert_eq!(y.shape(), &[2, 4, 20]);
        }
    }

    #[test]
    fn valid_padding_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = LayerSpec::Conv1d {
            filters: 1,
            kernel_size: 3,
            padding: Padding::Valid,
        };
        let (_, out) = Layer::build(&spec, &[1, 10], &mut rng).unwrap();
        assert_eq!(out, vec![1, 8]);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Layer::build(&LayerSpec::conv1d(0, 3), &[1, 10], &mut rng).is_err());
        assert!(Layer::build(&LayerSpec::conv1d(2, 0), &[1, 10], &mut rng).is_err());
        assert!(Layer::build(&LayerSpec::conv1d(2, 11), &[1, 10], &mut rng).is_err());
        assert!(Layer::build(&LayerSpec::dropout(1.0), &[4], &mut rng).is_err());
        assert!(Layer::build(&LayerSpec::dropout(-0.1), &[4], &mut rng).is_err());
        assert!(Layer::build(&LayerSpec::dense(3), &[2, 4], &mut rng).is_err());
    }

    #[test]
    fn dropout_is_identity_in_infer_mode_and_inverted_in_train_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = Layer::Dropout { rate: 0.5 };
        let x = Tensor::filled(vec![1, 1000], 1.0);
        let (y, _, _) = layer.forward(&x, Mode::Infer, &mut rng).unwrap();
        assert_eq!(y, x);
        let (y, _, _) = layer.forward(&x, Mode::Train, &mut rng).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let mean = y.sum() / 1000.0;
        assert!((mean - 1.0).abs() < 0.15);
    }

    #[test]
    fn pool_backward_spreads_gradient_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::new(vec![1, 2, 4], (0..8).map(f64::from).collect()).unwrap();
        let (y, cache, _) = Layer::GlobalAvgPool
            .forward(&x, Mode::Infer, &mut rng)
            .unwrap();
        assert_eq!(y.data(), &[1.5, 5.5]);
        let g = Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap();
        let dx = Layer::GlobalAvgPool.backward(&g, &cache, None).unwrap();
        assert_eq!(dx.data(), &[0.25, 0.25, 0.25, 0.25, -0.5, -0.5, -0.5, -0.5]);
    }

    #[test]
    fn relu_blocks_negative_preactivations() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::new(vec![1, 3], vec![-1.0, 0.5, -0.2]).unwrap();
        let (_, cache, _) = Layer::Relu.forward(&x, Mode::Infer, &mut rng).unwrap();
        let g = Tensor::filled(vec![1, 3], 1.0);
        let dx = Layer::Relu.backward(&g, &cache, None).unwrap();
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn batchnorm_infer_is_affine_per_channel() {
        let bn = BatchNorm {
            features: 2,
            momentum: 0.9,
            epsilon: 1e-3,
            gamma: vec![2.0, -1.0],
            beta: vec![0.5, 0.25],
            running_mean: vec![1.0, -3.0],
            running_var: vec![4.0, 0.5],
        };
        let layer = Layer::Batchnorm(bn.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::new(vec![1, 2, 3], vec![0.0, 1.0, 2.0, -1.0, 0.0, 5.0]).unwrap();
        let (y, _, stats) = layer.forward(&x, Mode::Infer, &mut rng).unwrap();
        assert!(stats.is_none());
        for c in 0..2 {
            let a = bn.gamma[c] / (bn.running_var[c] + bn.epsilon).sqrt();
            let b = bn.beta[c] - a * bn.running_mean[c];
            for t in 0..3 {
                let v = x.data()[c * 3 + t];
                assert!((y.data()[c * 3 + t] - (a * v + b)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batchnorm_train_normalizes_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (layer, _) = Layer::build(&LayerSpec::batchnorm(), &[3], &mut rng).unwrap();
        let x = Tensor::new(
            vec![4, 3],
            vec![
                1.0, 10.0, -2.0, 2.0, 20.0, -4.0, 3.0, 30.0, -6.0, 4.0, 40.0, -8.0,
            ],
        )
        .unwrap();
        let (y, _, stats) = layer.forward(&x, Mode::Train, &mut rng).unwrap();
        let stats = stats.unwrap();
        assert_eq!(stats.mean, vec![2.5, 25.0, -5.0]);
        for f in 0..3 {
            let col: Vec<f64> = (0..4).map(|n| y.data()[n * 3 + f]).collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
        }
    }
}
