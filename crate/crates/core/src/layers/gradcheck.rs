//! Central-difference gradient check for a single layer.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Layer, LayerKind, Mode};
use crate::rng::{seeded, stream};
use crate::tensor::{Result, Tensor};

/// Perturbation step and the smallest denominator used in relative errors.
pub const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Which value (`input0[17]`, `kernel[3]`, ...) produced the maximum.
    pub worst: String,
    pub checked: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Inputs for the check. ReLU inputs stay at least 1e-3 away from zero;
/// max-pool inputs are a shuffled grid of distinct values so no window has
/// a near tie.
fn sample_input(kind: &LayerKind, shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = seeded(seed);
    let n: usize = shape.iter().product();
    match kind {
        LayerKind::Relu => Tensor::from_fn(shape.to_vec(), |_| loop {
            let v: f64 = rng.gen_range(-1.0..1.0);
            if v.abs() > 1e-3 {
                break v;
            }
        }),
        LayerKind::MaxPool(_) => {
            let mut grid: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / n.max(1) as f64).collect();
            grid.shuffle(&mut rng);
            Tensor::new(shape.to_vec(), grid).expect("shape matches grid")
        }
        _ => Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0)),
    }
}

/// Compares `backward` against central differences of `L = Σ y ⊙ R` for a
/// fixed random `R`, over every input and parameter element.
///
/// The forward pass runs in train mode with the same RNG seed on every
/// evaluation, so a dropout mask stays fixed across perturbations.
pub fn gradient_check(layer: &Layer<f64>, input_shapes: &[Vec<usize>], seed: u64) -> Result<GradCheckReport> {
    let inputs: Vec<Tensor<f64>> = input_shapes
        .iter()
        .enumerate()
        .map(|(i, s)| sample_input(&layer.kind, s, crate::rng::stream_seed(seed, &[i as u64])))
        .collect();
    let mask_seed = crate::rng::stream_seed(seed, &[u64::MAX]);

    let run = |layer: &Layer<f64>, inputs: &[Tensor<f64>]| {
        let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
        layer.forward(&refs, Mode::Train, &mut seeded(mask_seed))
    };

    let (y, cache) = run(layer, &inputs)?;
    let mut rng = stream(seed, &[u64::MAX - 1]);
    let probe = Tensor::from_fn(y.shape().to_vec(), |_| rng.gen_range(-1.0..1.0));
    let objective = |t: &Tensor<f64>| -> f64 { t.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum() };
    let grads = layer.backward(&cache, &probe)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |label: String, analytic: f64, numeric: f64| {
        let e = rel_error(analytic, numeric);
        report.checked += 1;
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(e);
            report.worst = label;
        }
    };

    for (which, grad) in grads.inputs.iter().enumerate() {
        for i in 0..inputs[which].len() {
            let mut plus = inputs.clone();
            plus[which].data_mut()[i] += STEP;
            let mut minus = inputs.clone();
            minus[which].data_mut()[i] -= STEP;
            let numeric = (objective(&run(layer, &plus)?.0) - objective(&run(layer, &minus)?.0)) / (2.0 * STEP);
            record(format!("input{which}[{i}]"), grad.data()[i], numeric);
        }
    }
    for (p, grad) in grads.params.iter().enumerate() {
        for i in 0..layer.params[p].value.len() {
            let mut plus = layer.clone();
            plus.params[p].value.data_mut()[i] += STEP;
            let mut minus = layer.clone();
            minus.params[p].value.data_mut()[i] -= STEP;
            let numeric = (objective(&run(&plus, &inputs)?.0) - objective(&run(&minus, &inputs)?.0)) / (2.0 * STEP);
            record(format!("{}[{i}]", layer.params[p].name), grad.data()[i], numeric);
        }
    }
    Ok(report)
}
