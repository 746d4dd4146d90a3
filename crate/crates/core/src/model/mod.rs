//! The hybrid network: a VGG-style backbone and an Inception-style
//! backbone read the same batch, each is globally average pooled, the two
//! feature vectors are concatenated, and a dense head classifies them.

mod checkpoint;
mod spec;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, Manifest, TensorEntry, FORMAT_VERSION};
pub use spec::{BackboneSpec, HybridSpec, InceptionWidths, VggBlock};

use rand::Rng;
use thiserror::Error;

use crate::layers::{Cache, Layer, Mode, Sequential, SequentialCache};
use crate::rng::{seeded, SeededRng};
use crate::tensor::{self, Padding, PoolParams, Real, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid spec field `{field}`: {msg}")]
    InvalidSpec { field: String, msg: String },
    #[error("input size {size:?} is not divisible by {divisor} (one 2x2 pool per VGG block)")]
    IndivisibleInput { size: [usize; 2], divisor: usize },
    #[error("head must contain at least the output layer")]
    EmptyHead,
    #[error("inception input {size:?} is smaller than the {min}x{min} branch")]
    SpatialTooSmall { size: [usize; 2], min: usize },
    #[error("head expects {head} features but the backbones produce {a} + {b}")]
    FusionWidth { head: usize, a: usize, b: usize },
    #[error("class table has {names} names but the model has {classes} outputs")]
    ClassNames { names: usize, classes: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

const POOL2: PoolParams = PoolParams {
    window: 2,
    stride: 2,
    padding: Padding::Valid,
};

fn he_uniform<T: Real>(shape: Vec<usize>, fan_in: usize, rng: &mut SeededRng) -> Tensor<T> {
    let limit = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-limit..limit)))
}

fn conv_layer<T: Real>(
    name: String,
    k: usize,
    c_in: usize,
    c_out: usize,
    rng: &mut SeededRng,
) -> Result<Layer<T>, ModelError> {
    let kernel = he_uniform(vec![k, k, c_in, c_out], k * k * c_in, rng);
    Ok(Layer::conv(name, kernel, Tensor::zeros(vec![c_out]), 1, Padding::Same)?)
}

/// Four parallel branches joined on the channel axis:
/// 1×1; 1×1 → 3×3; 1×1 → 5×5; 3×3 max pool → 1×1. Every convolution is
/// followed by a ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct InceptionBlock<T> {
    pub branches: [Sequential<T>; 4],
    pub concat: Layer<T>,
}

#[derive(Debug, Clone)]
pub struct InceptionCache<T> {
    branches: Vec<SequentialCache<T>>,
    concat: Cache<T>,
}

impl<T: Real> InceptionBlock<T> {
    pub fn new(name: &str, c_in: usize, w: InceptionWidths, rng: &mut SeededRng) -> Result<Self, ModelError> {
        let n = |s: &str| format!("{name}/{s}");
        let b1 = Sequential::new(vec![
            conv_layer(n("b1x1/conv"), 1, c_in, w.b1x1, rng)?,
            Layer::relu(n("b1x1/relu")),
        ]);
        let b3 = Sequential::new(vec![
            conv_layer(n("b3x3/reduce"), 1, c_in, w.b3x3_reduce, rng)?,
            Layer::relu(n("b3x3/reduce_relu")),
            conv_layer(n("b3x3/conv"), 3, w.b3x3_reduce, w.b3x3, rng)?,
            Layer::relu(n("b3x3/relu")),
        ]);
        let b5 = Sequential::new(vec![
            conv_layer(n("b5x5/reduce"), 1, c_in, w.b5x5_reduce, rng)?,
            Layer::relu(n("b5x5/reduce_relu")),
            conv_layer(n("b5x5/conv"), 5, w.b5x5_reduce, w.b5x5, rng)?,
            Layer::relu(n("b5x5/relu")),
        ]);
        let bp = Sequential::new(vec![
            Layer::maxpool(
                n("pool/pool"),
                PoolParams {
                    window: 3,
                    stride: 1,
                    padding: Padding::Same,
                },
            ),
            conv_layer(n("pool/proj"), 1, c_in, w.pool_proj, rng)?,
            Layer::relu(n("pool/relu")),
        ]);
        Ok(Self {
            branches: [b1, b3, b5, bp],
            concat: Layer::concat(n("concat")),
        })
    }

    pub fn forward(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Tensor<T>, InceptionCache<T>), ModelError> {
        let (_, h, w, _) = input.dims4("inception_block")?;
        if h < 5 || w < 5 {
            return Err(ModelError::SpatialTooSmall { size: [h, w], min: 5 });
        }
        let mut outs = Vec::with_capacity(4);
        let mut caches = Vec::with_capacity(4);
        for b in &self.branches {
            let (y, c) = b.forward(input, mode, rng)?;
            outs.push(y);
            caches.push(c);
        }
        let refs: Vec<&Tensor<T>> = outs.iter().collect();
        let (y, concat) = self.concat.forward(&refs, mode, rng)?;
        Ok((
            y,
            InceptionCache {
                branches: caches,
                concat,
            },
        ))
    }

    /// Input gradient (sum over branches) and per-layer parameter
    /// gradients in [`InceptionBlock::layers`] order.
    pub fn backward(
        &self,
        cache: &InceptionCache<T>,
        upstream: &Tensor<T>,
    ) -> Result<(Tensor<T>, ModelGrads<T>), ModelError> {
        let parts = self.concat.backward(&cache.concat, upstream)?.inputs;
        let mut dx: Option<Tensor<T>> = None;
        let mut grads = Vec::new();
        for ((b, c), g) in self.branches.iter().zip(&cache.branches).zip(&parts) {
            let (d, pg) = b.backward(c, g)?;
            grads.extend(pg);
            dx = Some(match dx {
                None => d,
                Some(acc) => tensor::add(&acc, &d)?,
            });
        }
        grads.push(Vec::new());
        Ok((dx.expect("four branches"), grads))
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.branches
            .iter()
            .flat_map(|b| b.layers.iter())
            .chain(std::iter::once(&self.concat))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<T>> {
        self.branches
            .iter_mut()
            .flat_map(|b| b.layers.iter_mut())
            .chain(std::iter::once(&mut self.concat))
    }
}

/// Gradients for every parameter of a [`Model`], aligned with
/// [`Model::layers`]: entry `i` holds the gradients of layer `i`'s params.
pub type ModelGrads<T> = crate::layers::LayerGrads<T>;

/// Everything [`Model::backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    backbone_a: SequentialCache<T>,
    stem: SequentialCache<T>,
    blocks: Vec<InceptionCache<T>>,
    gap_b: Cache<T>,
    fusion: Cache<T>,
    head: SequentialCache<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    pub spec: HybridSpec,
    pub class_names: Vec<String>,
    /// VGG stages followed by global average pooling.
    pub backbone_a: Sequential<T>,
    /// Inception stem (conv, ReLU, 2×2 pool).
    pub stem: Sequential<T>,
    pub blocks: Vec<InceptionBlock<T>>,
    pub gap_b: Layer<T>,
    pub fusion: Layer<T>,
    /// Dense/ReLU/dropout stack ending in the logits layer.
    pub head: Sequential<T>,
    pub softmax: Layer<T>,
}

/// Deterministic construction from a spec and seed: He-uniform weights,
/// zero biases, freeze patterns applied.
pub fn build(spec: &HybridSpec, seed: u64) -> Result<Model, ModelError> {
    Model::build(spec, seed)
}

impl<T: Real> Model<T> {
    pub fn build(spec: &HybridSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = seeded(seed);

        let BackboneSpec::VggStyle { blocks: vgg } = &spec.backbone_a else {
            unreachable!("validated")
        };
        let mut a_layers = Vec::new();
        let mut c_in = 3;
        for (bi, block) in vgg.iter().enumerate() {
            for ci in 0..block.convs {
                let base = format!("backbone_a/block{}", bi + 1);
                a_layers.push(conv_layer(
                    format!("{base}/conv{}", ci + 1),
                    3,
                    c_in,
                    block.channels,
                    &mut rng,
                )?);
                a_layers.push(Layer::relu(format!("{base}/relu{}", ci + 1)));
                c_in = block.channels;
            }
            a_layers.push(Layer::maxpool(format!("backbone_a/block{}/pool", bi + 1), POOL2));
        }
        a_layers.push(Layer::global_avg_pool("backbone_a/gap"));

        let BackboneSpec::InceptionStyle {
            stem_channels,
            widths,
            block_count,
        } = &spec.backbone_b
        else {
            unreachable!("validated")
        };
        let stem = Sequential::new(vec![
            conv_layer("backbone_b/stem/conv".into(), 3, 3, *stem_channels, &mut rng)?,
            Layer::relu("backbone_b/stem/relu"),
            Layer::maxpool("backbone_b/stem/pool", POOL2),
        ]);
        let mut blocks = Vec::new();
        let mut c_in = *stem_channels;
        for i in 0..*block_count {
            blocks.push(InceptionBlock::new(
                &format!("backbone_b/inception{}", i + 1),
                c_in,
                *widths,
                &mut rng,
            )?);
            c_in = widths.out_channels();
        }

        let mut head = Vec::new();
        let mut width = spec.fused_width();
        let last = spec.head.len() - 1;
        for (i, &out) in spec.head.iter().enumerate() {
            let name = if i == last {
                "head/logits".to_string()
            } else {
                format!("head/dense{}", i + 1)
            };
            let weight = he_uniform(vec![width, out], width, &mut rng);
            head.push(Layer::dense(name, weight, Tensor::zeros(vec![out]))?);
            if i != last {
                head.push(Layer::relu(format!("head/relu{}", i + 1)));
                head.push(Layer::dropout(format!("head/dropout{}", i + 1), spec.dropout_rate)?);
            }
            width = out;
        }

        let mut model = Self {
            spec: spec.clone(),
            class_names: (0..spec.class_count).map(|k| format!("class_{k}")).collect(),
            backbone_a: Sequential::new(a_layers),
            stem,
            blocks,
            gap_b: Layer::global_avg_pool("backbone_b/gap"),
            fusion: Layer::concat("fusion/concat"),
            head: Sequential::new(head),
            softmax: Layer::softmax("head/softmax"),
        };
        model.apply_freeze();
        model.check_fusion_width()?;
        Ok(model)
    }

    /// Checks that the head's input width equals the two GAP widths,
    /// reading the widths off the actual parameter shapes.
    pub fn check_fusion_width(&self) -> Result<(), ModelError> {
        let last_conv_width = |layers: &mut dyn Iterator<Item = &Layer<T>>| {
            layers
                .filter(|l| matches!(l.kind, crate::layers::LayerKind::Conv { .. }))
                .last()
                .map_or(0, |l| l.params[0].value.shape()[3])
        };
        let a = last_conv_width(&mut self.backbone_a.layers.iter());
        let b = match self.blocks.last() {
            Some(block) => block
                .branches
                .iter()
                .map(|br| last_conv_width(&mut br.layers.iter()))
                .sum(),
            None => last_conv_width(&mut self.stem.layers.iter()),
        };
        let head = self.head.layers.first().map_or(0, |l| l.params[0].value.shape()[0]);
        if head != a + b {
            return Err(ModelError::FusionWidth { head, a, b });
        }
        Ok(())
    }

    /// Marks every layer matching a freeze pattern as non-trainable.
    pub fn apply_freeze(&mut self) {
        let patterns: Vec<glob::Pattern> = self
            .spec
            .freeze
            .iter()
            .filter_map(|p| glob::Pattern::new(p).ok())
            .collect();
        for layer in self.layers_mut() {
            layer.trainable = !patterns.iter().any(|p| p.matches(&layer.name));
        }
    }

    pub fn set_class_names(&mut self, names: Vec<String>) -> Result<(), ModelError> {
        if names.len() != self.spec.class_count {
            return Err(ModelError::ClassNames {
                names: names.len(),
                classes: self.spec.class_count,
            });
        }
        self.class_names = names;
        Ok(())
    }

    /// Every layer in a fixed traversal order (the order of [`ModelGrads`]).
    pub fn layers(&self) -> Vec<&Layer<T>> {
        let mut out: Vec<&Layer<T>> = self.backbone_a.layers.iter().collect();
        out.extend(self.stem.layers.iter());
        for b in &self.blocks {
            out.extend(b.layers());
        }
        out.push(&self.gap_b);
        out.push(&self.fusion);
        out.extend(self.head.layers.iter());
        out.push(&self.softmax);
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Layer<T>> {
        let mut out: Vec<&mut Layer<T>> = self.backbone_a.layers.iter_mut().collect();
        out.extend(self.stem.layers.iter_mut());
        for b in &mut self.blocks {
            out.extend(b.layers_mut());
        }
        out.push(&mut self.gap_b);
        out.push(&mut self.fusion);
        out.extend(self.head.layers.iter_mut());
        out.push(&mut self.softmax);
        out
    }

    /// `(qualified name, tensor, trainable)` for every parameter.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>, bool)> {
        self.layers()
            .into_iter()
            .flat_map(|l| {
                l.params
                    .iter()
                    .map(move |p| (format!("{}/{}", l.name, p.name), &p.value, l.trainable))
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t, _)| t.len()).sum()
    }

    /// Converts every parameter to another element type.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let cast_layer = |l: &Layer<T>| Layer {
            name: l.name.clone(),
            kind: l.kind.clone(),
            params: l
                .params
                .iter()
                .map(|p| crate::layers::Param {
                    name: p.name,
                    value: p.value.cast(),
                })
                .collect(),
            trainable: l.trainable,
        };
        let cast_seq = |s: &Sequential<T>| Sequential::new(s.layers.iter().map(cast_layer).collect());
        Model {
            spec: self.spec.clone(),
            class_names: self.class_names.clone(),
            backbone_a: cast_seq(&self.backbone_a),
            stem: cast_seq(&self.stem),
            blocks: self
                .blocks
                .iter()
                .map(|b| InceptionBlock {
                    branches: [
                        cast_seq(&b.branches[0]),
                        cast_seq(&b.branches[1]),
                        cast_seq(&b.branches[2]),
                        cast_seq(&b.branches[3]),
                    ],
                    concat: cast_layer(&b.concat),
                })
                .collect(),
            gap_b: cast_layer(&self.gap_b),
            fusion: cast_layer(&self.fusion),
            head: cast_seq(&self.head),
            softmax: cast_layer(&self.softmax),
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<(), ModelError> {
        let (_, h, w, c) = batch.dims4("forward_hybrid")?;
        let [eh, ew] = self.spec.input_size;
        if (h, w, c) != (eh, ew, 3) {
            return Err(TensorError::ShapeMismatch {
                op: "forward_hybrid",
                left: vec![batch.shape()[0], eh, ew, 3],
                right: batch.shape().to_vec(),
            }
            .into());
        }
        let (lo, hi) = (T::zero(), T::one());
        if batch.data().iter().any(|&v| v < lo || v > hi) {
            log::warn!("input batch has pixel values outside [0, 1]");
        }
        Ok(())
    }

    /// Runs the network and keeps every cache. Returns `(logits, probs, trace)`.
    #[allow(clippy::type_complexity)]
    pub fn forward_traced(
        &self,
        batch: &Tensor<T>,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Tensor<T>, Tensor<T>, ForwardTrace<T>), ModelError> {
        self.check_batch(batch)?;
        let (fa, backbone_a) = self.backbone_a.forward(batch, mode, rng)?;
        let (mut h, stem) = self.stem.forward(batch, mode, rng)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(&h, mode, rng)?;
            blocks.push(c);
            h = y;
        }
        let (fb, gap_b) = self.gap_b.forward(&[&h], mode, rng)?;
        let (fused, fusion) = self.fusion.forward(&[&fa, &fb], mode, rng)?;
        debug_assert_eq!(fused.shape()[1], self.spec.fused_width());
        let (logits, head) = self.head.forward(&fused, mode, rng)?;
        let probs = crate::layers::softmax(&logits)?;
        Ok((
            logits,
            probs,
            ForwardTrace {
                backbone_a,
                stem,
                blocks,
                gap_b,
                fusion,
                head,
            },
        ))
    }

    /// Class probabilities `[N, K]`.
    pub fn forward_hybrid(&self, batch: &Tensor<T>, mode: Mode, rng: &mut SeededRng) -> Result<Tensor<T>, ModelError> {
        Ok(self.forward_traced(batch, mode, rng)?.1)
    }

    /// Parameter gradients given the gradient with respect to the logits.
    pub fn backward(&self, trace: &ForwardTrace<T>, d_logits: &Tensor<T>) -> Result<ModelGrads<T>, ModelError> {
        let (d_fused, head_g) = self.head.backward(&trace.head, d_logits)?;
        let parts = self.fusion.backward(&trace.fusion, &d_fused)?.inputs;
        let (_, a_g) = self.backbone_a.backward(&trace.backbone_a, &parts[0])?;
        let mut d = self.gap_b.backward(&trace.gap_b, &parts[1])?.inputs.swap_remove(0);
        let mut block_g = Vec::with_capacity(self.blocks.len());
        for (b, c) in self.blocks.iter().zip(&trace.blocks).rev() {
            let (dx, g) = b.backward(c, &d)?;
            block_g.push(g);
            d = dx;
        }
        block_g.reverse();
        let (_, stem_g) = self.stem.backward(&trace.stem, &d)?;

        let mut grads = a_g;
        grads.extend(stem_g);
        for g in block_g {
            grads.extend(g);
        }
        grads.push(Vec::new()); // gap_b
        grads.push(Vec::new()); // fusion
        grads.extend(head_g);
        grads.push(Vec::new()); // softmax
        Ok(grads)
    }
}
