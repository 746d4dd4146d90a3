//! Hybrid dual-backbone image classifier.
//!
//! A VGG-style and an Inception-style feature extractor run on the same
//! batch; their globally average-pooled features are concatenated and fed
//! to a dense classification head. The crate carries everything needed to
//! train and evaluate that network on CPU:
//!
//! * [`tensor`]: dense NHWC tensors and the numerical kernels.
//! * [`layers`]: differentiable layers and a finite-difference gradient check.
//! * [`model`]: backbones, the fused model, and checkpoints.
//! * [`train`]: loss, Adam, learning-rate schedule, splits, and the epoch loop.
//! * [`datapipe`]: PPM decoding, resizing, augmentation, dataset ingestion.
//! * [`evalreport`]: confusion matrix, classification report, ROC/AUC, report files.
//!
//! Kernels parallelize over independent outputs with rayon when the
//! `parallel` feature is on (the default). Floating-point reductions always
//! run in a fixed order, so results do not depend on the worker count.

pub mod datapipe;
pub mod evalreport;
pub mod layers;
pub mod model;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod train;

pub use tensor::{Precision, Real, Tensor, TensorError};
