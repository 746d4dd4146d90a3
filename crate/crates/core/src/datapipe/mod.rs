//! Image ingestion and preparation.

mod augment;
mod dataset;
mod image;
mod ppm;
mod synth;

pub use augment::{apply as apply_augment, augment, AugmentDraw, AugmentParams};
pub use dataset::{load_dataset, write_dataset, DataError, Dataset, Example, ImageSource, PreparedSet};
pub use image::{rescale, resize_bilinear, FloatImage, Image};
pub use ppm::{decode_ppm, encode_ppm, PpmError};
pub use synth::{synth_dataset, PALETTE};
