//! AdamW with decoupled weight decay and label-smoothed cross-entropy.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{LayerStack, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, model: &LayerStack) -> Self {
        let lens: Vec<usize> = model.layers().iter().flat_map(|l| l.param_lens()).collect();
        Self {
            config,
            step: 0,
            first: lens.iter().map(|&n| vec![0.0; n]).collect(),
            second: lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from per-layer parameter gradients.
    pub fn apply(&mut self, model: &mut LayerStack, grads: &[Vec<Vec<f64>>]) {
        let AdamWConfig {
            learning_rate: lr,
            weight_decay,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        if lr == 0.0 {
            return;
        }
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let params = model.layers_mut().iter_mut().flat_map(|l| l.params_mut());
        let grads = grads.iter().flatten();
        for (((p, g), m), v) in params
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * (mhat / (vhat.sqrt() + epsilon) + weight_decay * p[i]);
            }
        }
    }
}

/// Cross-entropy of one logit row against the target `(1-s)·onehot + s/m`.
pub fn smoothed_cross_entropy(logits: &[f64], label: usize, smoothing: f64) -> f64 {
    let m = logits.len() as f64;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits
        .iter()
        .enumerate()
        .map(|(j, z)| {
            let y = if j == label { 1.0 - smoothing } else { 0.0 } + smoothing / m;
            -y * (z - lse)
        })
        .sum()
}

/// One optimizer step on a batch; returns the mean smoothed cross-entropy
/// measured before the update.
pub fn train_step<R: Rng>(
    model: &mut LayerStack,
    inputs: &Tensor,
    labels: &[usize],
    optimizer: &mut AdamW,
    smoothing: f64,
    rng: &mut R,
) -> Result<f64> {
    let n = inputs.shape().first().copied().unwrap_or(0);
    if n == 0 || labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "batch of {n} inputs with {} labels",
            labels.len()
        )));
    }
    if !model.has_softmax() {
        return Err(Error::InvalidArgument(
            "training needs a softmax-terminated stack".into(),
        ));
    }
    let pass = model.forward(inputs, Mode::Train, rng)?;
    let m = pass.logits.shape()[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside [0, {m})"
        )));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * m];
    for (row, &label) in labels.iter().enumerate() {
        let z = &pass.logits.data()[row * m..(row + 1) * m];
        loss += smoothed_cross_entropy(z, label, smoothing);
        let p = &pass.output.data()[row * m..(row + 1) * m];
        for j in 0..m {
            let y = if j == label { 1.0 - smoothing } else { 0.0 } + smoothing / m as f64;
            grad[row * m + j] = (p[j] - y) / n as f64;
        }
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss {loss}")));
    }
    let grads = model.backward(&pass, &Tensor::new(vec![n, m], grad)?, true)?;
    model.commit_batch_stats(&pass);
    optimizer.apply(model, &grads.params);
    Ok(loss)
}

/// Mean smoothed cross-entropy in inference mode, evaluated in chunks.
pub fn mean_loss(
    model: &LayerStack,
    inputs: &Tensor,
    labels: &[usize],
    smoothing: f64,
    chunk: usize,
) -> Result<f64> {
    let n = inputs.shape()[0];
    if n == 0 {
        return Err(Error::InvalidArgument("loss over an empty set".into()));
    }
    let inner = inputs.len() / n;
    let mut total = 0.0;
    for start in (0..n).step_by(chunk.max(1)) {
        let end = (start + chunk.max(1)).min(n);
        let mut shape = inputs.shape().to_vec();
        shape[0] = end - start;
        let part = Tensor::new(shape, inputs.data()[start * inner..end * inner].to_vec())?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let pass = model.forward(&part, Mode::Infer, &mut rng)?;
        let m = pass.logits.shape()[1];
        for (row, &label) in labels[start..end].iter().enumerate() {
            total += smoothed_cross_entropy(
                &pass.logits.data()[row * m..(row + 1) * m],
                label,
                smoothing,
            );
        }
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("evaluation loss {loss}")));
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::LayerSpec;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smoothed_loss_matches_hand_computation() {
        // logits chosen so the probabilities are (0.5, 0.1, 0.1, 0.1, 0.1, 0.1)
        let logits = [5f64.ln(), 0.0, 0.0, 0.0, 0.0, 0.0];
        let s = 0.05;
        let on = 0.95 + s / 6.0;
        let off = s / 6.0;
        let want = -(on * 0.5f64.ln() + 5.0 * off * 0.1f64.ln());
        let got = smoothed_cross_entropy(&logits, 0, s);
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        // hand value: 0.7602…
        assert!((want - 0.760_207_1).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged() {
        let mut model =
            LayerStack::from_specs(&[4], &[LayerSpec::dense(6), LayerSpec::Softmax], 9).unwrap();
        let before = model.clone();
        let x = Tensor::new(vec![1, 4], vec![0.3, -0.1, 0.8, 0.0]).unwrap();
        let mut opt = AdamW::new(
            AdamWConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            &model,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = train_step(&mut model, &x, &[2], &mut opt, 0.05, &mut rng).unwrap();
        assert_eq!(model, before);
        let logits = {
            let mut r = ChaCha8Rng::seed_from_u64(0);
            model.forward(&x, Mode::Infer, &mut r).unwrap().logits
        };
        assert_eq!(loss, smoothed_cross_entropy(logits.data(), 2, 0.05));
    }

    #[test]
    fn separable_toy_set_is_learned() {
        // Two classes split by the sign of x0 + x1.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 64;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            let label = usize::from(a + b > 0.0);
            let shift = if label == 1 { 0.3 } else { -0.3 };
            xs.extend([a + shift, b + shift]);
            ys.push(label);
        }
        let x = Tensor::new(vec![n, 2], xs).unwrap();
        let mut model = LayerStack::from_specs(
            &[2],
            &[
                LayerSpec::dense(8),
                LayerSpec::Relu,
                LayerSpec::dense(2),
                LayerSpec::Softmax,
            ],
            5,
        )
        .unwrap();
        let mut opt = AdamW::new(
            AdamWConfig {
                learning_rate: 0.02,
                ..Default::default()
            },
            &model,
        );
        for _ in 0..200 {
            train_step(&mut model, &x, &ys, &mut opt, 0.0, &mut rng).unwrap();
        }
        let pred = model.predict(&x, 64).unwrap();
        assert_eq!(pred, ys);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut model =
            LayerStack::from_specs(&[2], &[LayerSpec::dense(2), LayerSpec::Softmax], 0).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default(), &model);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::zeros(vec![0, 2]);
        assert!(train_step(&mut model, &x, &[], &mut opt, 0.0, &mut rng).is_err());
    }
}
