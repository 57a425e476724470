//! Minimal reverse-mode differentiation over a sequential layer stack.
//!
//! A [`LayerStack`] is immutable during forward and backward passes; the
//! per-layer caches live in a [`Pass`]. Only training mutates the stack
//! (parameter updates and batchnorm running statistics).

mod gemm;
pub mod layers;
pub mod optim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use layers::{Layer, LayerSpec, Mode, Padding};
pub use optim::{mean_loss, smoothed_cross_entropy, train_step, AdamW, AdamWConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use layers::{BatchStats, Cache};

/// Which scalar of the classifier is differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Pre-softmax score of the target class.
    #[default]
    Logit,
    /// Post-softmax probability of the target class.
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<Layer>,
}

/// The result of one forward evaluation, retained for backward.
#[derive(Debug, Clone)]
pub struct Pass {
    /// Pre-softmax scores `[N, m]` (equal to `output` without a softmax head).
    pub logits: Tensor,
    /// Stack output `[N, m]`.
    pub output: Tensor,
    caches: Vec<Cache>,
    stats: Vec<Option<BatchStats>>,
}

/// Gradients of one backward sweep.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    /// Per layer, one vector per trainable parameter (empty when not requested).
    pub params: Vec<Vec<Vec<f64>>>,
    /// Gradient with respect to the batched input, same shape as the input.
    pub input: Tensor,
}

impl LayerStack {
    /// Builds a stack for per-sample `input_shape` (no batch axis).
    pub fn from_specs(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "invalid input shape {input_shape:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            if matches!(spec, LayerSpec::Softmax) && i + 1 != specs.len() {
                return Err(Error::InvalidArgument(
                    "softmax is only allowed as the final layer".into(),
                ));
            }
            let (layer, out) = Layer::build(spec, &shape, &mut rng)
                .map_err(|e| Error::InvalidArgument(format!("layer {i} ({}): {e}", spec.name())))?;
            layers.push(layer);
            shape = out;
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            output_shape: shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn has_softmax(&self) -> bool {
        matches!(self.layers.last(), Some(Layer::Softmax))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.param_lens())
            .sum::<usize>()
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let shape = x.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "model expects [N, {}], got {shape:?}",
                self.input_shape
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        Ok(shape[0])
    }

    /// Runs the stack over a batch `[N, ..input_shape]`.
    pub fn forward<R: Rng>(&self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<Pass> {
        self.check_input(x)?;
        x.ensure_finite("model input")?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::with_capacity(self.layers.len());
        let mut act = x.clone();
        let mut logits = None;
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer, Layer::Softmax) {
                logits = Some(act.clone());
            }
            let (out, cache, st) = layer.forward(&act, mode, rng)?;
            out.ensure_finite(&format!("layer {i} ({}) activation", layer.spec().name()))?;
            caches.push(cache);
            stats.push(st);
            act = out;
        }
        Ok(Pass {
            logits: logits.unwrap_or_else(|| act.clone()),
            output: act,
            caches,
            stats,
        })
    }

    /// Inference-mode forward returning the stack output (class probabilities
    /// for softmax-terminated stacks).
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        // Infer mode never draws from the generator.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(x, Mode::Infer, &mut rng)?.output)
    }

    /// Argmax class per batch row, evaluated in chunks of `chunk` rows.
    pub fn predict(&self, x: &Tensor, chunk: usize) -> Result<Vec<usize>> {
        let n = self.check_input(x)?;
        let inner: usize = self.input_shape.iter().product();
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(chunk.max(1)) {
            let end = (start + chunk.max(1)).min(n);
            let mut shape = vec![end - start];
            shape.extend_from_slice(&self.input_shape);
            let part = Tensor::new(shape, x.data()[start * inner..end * inner].to_vec())?;
            let probs = self.infer(&part)?;
            let m = probs.shape()[1];
            out.extend(probs.data().chunks_exact(m).map(argmax));
        }
        Ok(out)
    }

    /// Backpropagates `grad_logits` (`[N, m]`, gradient with respect to the
    /// pre-softmax scores) through every layer below the softmax head.
    pub fn backward(
        &self,
        pass: &Pass,
        grad_logits: &Tensor,
        want_params: bool,
    ) -> Result<GradientBundle> {
        if grad_logits.shape() != pass.logits.shape() {
            return Err(Error::Shape(format!(
                "logit gradient {:?} vs logits {:?}",
                grad_logits.shape(),
                pass.logits.shape()
            )));
        }
        let top = if self.has_softmax() {
            self.layers.len() - 1
        } else {
            self.layers.len()
        };
        let mut params: Vec<Vec<Vec<f64>>> = self
            .layers
            .iter()
            .map(|l| {
                if want_params {
                    l.param_lens().into_iter().map(|n| vec![0.0; n]).collect()
                } else {
                    Vec::new()
                }
            })
            .collect();
        let mut grad = grad_logits.clone();
        for i in (0..top).rev() {
            let layer = &self.layers[i];
            let pg = if want_params && layer.param_count() > 0 {
                Some(params[i].as_mut_slice())
            } else {
                None
            };
            grad = layer.backward(&grad, &pass.caches[i], pg)?;
            grad.ensure_finite(&format!("layer {i} ({}) gradient", layer.spec().name()))?;
        }
        for (i, layer_grads) in params.iter().enumerate() {
            for g in layer_grads {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("layer {i} parameter gradient")));
                }
            }
        }
        Ok(GradientBundle {
            params,
            input: grad,
        })
    }

    /// Gradient of the per-row target class score, summed over the batch, so
    /// each input row receives the gradient of its own target.
    pub fn backward_target(
        &self,
        pass: &Pass,
        targets: &[usize],
        objective: Objective,
        want_params: bool,
    ) -> Result<GradientBundle> {
        let grad = self.target_seed(pass, targets, objective)?;
        self.backward(pass, &grad, want_params)
    }

    fn target_seed(&self, pass: &Pass, targets: &[usize], objective: Objective) -> Result<Tensor> {
        let (n, m) = (pass.logits.shape()[0], pass.logits.shape()[1]);
        if targets.len() != n {
            return Err(Error::Shape(format!(
                "{} targets for a batch of {n}",
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= m) {
            return Err(Error::InvalidArgument(format!(
                "target class {t} outside [0, {m})"
            )));
        }
        let mut g = vec![0.0; n * m];
        match objective {
            Objective::Logit => {
                for (row, &t) in targets.iter().enumerate() {
                    g[row * m + t] = 1.0;
                }
            }
            Objective::Probability => {
                if !self.has_softmax() {
                    return Err(Error::InvalidArgument(
                        "probability objective needs a softmax head".into(),
                    ));
                }
                for (row, &t) in targets.iter().enumerate() {
                    let p = &pass.output.data()[row * m..(row + 1) * m];
                    for j in 0..m {
                        let delta = if j == t { 1.0 } else { 0.0 };
                        g[row * m + j] = p[t] * (delta - p[j]);
                    }
                }
            }
        }
        Tensor::new(vec![n, m], g)
    }

    /// Scalar value of `objective` for each row's target.
    pub fn objective_values(pass: &Pass, targets: &[usize], objective: Objective) -> Vec<f64> {
        let m = pass.logits.shape()[1];
        let src = match objective {
            Objective::Logit => &pass.logits,
            Objective::Probability => &pass.output,
        };
        targets
            .iter()
            .enumerate()
            .map(|(row, &t)| src.data()[row * m + t])
            .collect()
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// batchnorm estimates.
    pub fn commit_batch_stats(&mut self, pass: &Pass) {
        for (layer, st) in self.layers.iter_mut().zip(&pass.stats) {
            if let Some(st) = st {
                layer.commit_stats(st);
            }
        }
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
