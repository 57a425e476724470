//! Helpers shared by the integration tests.

#![allow(dead_code)]

use damage_ig::netcore::{LayerSpec, LayerStack, Mode, Objective};
use damage_ig::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
/// Train-mode batch statistics couple every unit to every input, so a step
/// of 1e-4 pushes some unit across a ReLU kink for most coordinates.
pub const TRAIN_FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const FD_ABS_TOLERANCE: f64 = 1e-6;

pub fn fd_step(mode: Mode) -> f64 {
    match mode {
        Mode::Infer => FD_STEP,
        Mode::Train => TRAIN_FD_STEP,
    }
}

pub fn random_tensor(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// A small random model: either conv blocks with pooling or a dense stack,
/// optionally softmax-terminated. Batchnorm running statistics are moved
/// away from their initial values by one committed training pass and biases
/// are randomised.
pub fn random_model(seed: u64) -> LayerStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.gen_range(2..5);
    let softmax = rng.gen_bool(0.5);
    let (shape, mut specs) = if rng.gen_bool(0.7) {
        let c = rng.gen_range(1..4);
        let t = rng.gen_range(6..13);
        let mut specs = Vec::new();
        for _ in 0..rng.gen_range(1..4) {
            specs.push(LayerSpec::conv1d(rng.gen_range(2..5), rng.gen_range(1..6)));
            if rng.gen_bool(0.7) {
                specs.push(LayerSpec::batchnorm());
            }
            specs.push(LayerSpec::Relu);
        }
        specs.push(LayerSpec::GlobalAvgPool);
        (vec![c, t], specs)
    } else {
        let d = rng.gen_range(2..8);
        let mut specs = Vec::new();
        for _ in 0..rng.gen_range(1..3) {
            specs.push(LayerSpec::dense(rng.gen_range(3..9)));
            if rng.gen_bool(0.5) {
                specs.push(LayerSpec::batchnorm());
            }
            specs.push(LayerSpec::Relu);
        }
        (vec![d], specs)
    };
    specs.push(LayerSpec::dense(classes));
    if softmax {
        specs.push(LayerSpec::Softmax);
    }
    let mut model = LayerStack::from_specs(&shape, &specs, rng.gen()).unwrap();
    // zero biases put units exactly on a ReLU kink when their inputs vanish
    for layer in model.layers_mut() {
        if let Some(bias) = layer.params_mut().into_iter().nth(1) {
            bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
    }
    let mut batch_shape = vec![4];
    batch_shape.extend_from_slice(&shape);
    let x = random_tensor(batch_shape, &mut rng);
    let pass = model.forward(&x, Mode::Train, &mut rng).unwrap();
    model.commit_batch_stats(&pass);
    model
}

/// Sum over rows of the target objective in `mode` (no dropout in the
/// models above, so train mode is deterministic too).
pub fn scalar(
    model: &LayerStack,
    x: &Tensor,
    targets: &[usize],
    objective: Objective,
    mode: Mode,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pass = model.forward(x, mode, &mut rng).unwrap();
    LayerStack::objective_values(&pass, targets, objective)
        .iter()
        .sum()
}

fn agrees(a: f64, b: f64) -> bool {
    let diff = (a - b).abs();
    diff <= FD_ABS_TOLERANCE || diff <= FD_TOLERANCE * a.abs().max(b.abs())
}

/// Compares the analytic input gradient against central differences.
/// Returns `(coordinates within tolerance, coordinates checked)`.
pub fn input_gradcheck(
    model: &LayerStack,
    x: &Tensor,
    targets: &[usize],
    objective: Objective,
    mode: Mode,
) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pass = model.forward(x, mode, &mut rng).unwrap();
    let grad = model
        .backward_target(&pass, targets, objective, false)
        .unwrap()
        .input;
    let h = fd_step(mode);
    let mut ok = 0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let fd = (scalar(model, &plus, targets, objective, mode)
            - scalar(model, &minus, targets, objective, mode))
            / (2.0 * h);
        if agrees(grad.data()[i], fd) {
            ok += 1;
        }
    }
    (ok, x.len())
}

/// Same check for every trainable parameter.
pub fn param_gradcheck(
    model: &LayerStack,
    x: &Tensor,
    targets: &[usize],
    mode: Mode,
) -> (usize, usize) {
    let objective = Objective::Logit;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pass = model.forward(x, mode, &mut rng).unwrap();
    let grads = model
        .backward_target(&pass, targets, objective, true)
        .unwrap()
        .params;
    let h = fd_step(mode);
    let (mut ok, mut total) = (0, 0);
    for (li, layer_grads) in grads.iter().enumerate() {
        for (pi, g) in layer_grads.iter().enumerate() {
            for k in 0..g.len() {
                let eval = |delta: f64| {
                    let mut m = model.clone();
                    m.layers_mut()[li].params_mut()[pi][k] += delta;
                    scalar(&m, x, targets, objective, mode)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                total += 1;
                if agrees(g[k], fd) {
                    ok += 1;
                }
            }
        }
    }
    (ok, total)
}
