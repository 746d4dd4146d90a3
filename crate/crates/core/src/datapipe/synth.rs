//! Synthetic class-structured images for desk-scale runs.
//!
//! Class `k` gets base color `PALETTE[k]`, a motif chosen by `k % 3`
//! (stripes, rings, checkerboard) with period `4 + 2 * (k / 3)` pixels and
//! a random phase, and Gaussian pixel noise with σ = 10 (on the 0-255 scale).

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, Dataset, Example, Image, ImageSource};
use crate::rng;

pub const PALETTE: [[u8; 3]; 8] = [
    [200, 60, 60],
    [60, 190, 70],
    [60, 80, 200],
    [210, 200, 60],
    [190, 70, 190],
    [60, 190, 200],
    [230, 140, 40],
    [120, 120, 120],
];

const MOTIF_AMPLITUDE: f64 = 30.0;
const NOISE_SIGMA: f64 = 10.0;

fn motif(kind: usize, period: f64, phase: (f64, f64), x: f64, y: f64, size: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    match kind {
        0 => (tau * (x + phase.0) / period).sin(),
        1 => {
            let (cx, cy) = (size / 2.0 + phase.0 / 4.0, size / 2.0 + phase.1 / 4.0);
            (tau * ((x - cx).hypot(y - cy)) / period).sin()
        }
        _ => {
            let cell = |v: f64, p: f64| ((v + p) / (period / 2.0)).floor() as i64;
            if (cell(x, phase.0) + cell(y, phase.1)).rem_euclid(2) == 0 {
                1.0
            } else {
                -1.0
            }
        }
    }
}

fn synth_image(class: usize, size: usize, seed: u64, index: u64) -> Image {
    let mut r = rng::stream(seed, &[class as u64, index]);
    let period = 4.0 + 2.0 * (class / 3) as f64;
    let phase = (r.gen_range(0.0..period), r.gen_range(0.0..period));
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("positive sigma");
    let base = PALETTE[class];
    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let m = MOTIF_AMPLITUDE * motif(class % 3, period, phase, x as f64, y as f64, size as f64);
            for &b in &base {
                let v = b as f64 + m + noise.sample(&mut r);
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image {
        width: size,
        height: size,
        pixels,
    }
}

/// `n_per_class` images of `size`×`size` for each of `classes` classes,
/// ordered class by class. Class names are `class_0`, `class_1`, ...
pub fn synth_dataset(n_per_class: usize, classes: usize, size: usize, seed: u64) -> Result<Dataset, DataError> {
    if classes == 0 || classes > PALETTE.len() {
        return Err(DataError::Invalid(format!(
            "class count {classes} outside 1..={}",
            PALETTE.len()
        )));
    }
    if size < 8 {
        return Err(DataError::Invalid(format!("image size {size} below 8")));
    }
    let examples = (0..classes)
        .flat_map(|k| {
            (0..n_per_class).map(move |i| Example {
                source: ImageSource::Memory(synth_image(k, size, seed, i as u64)),
                label: k,
            })
        })
        .collect();
    Ok(Dataset {
        examples,
        class_names: (0..classes).map(|k| format!("class_{k}")).collect(),
        split: None,
    })
}
