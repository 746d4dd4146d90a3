//! Differentiable layers.
//!
//! A [`Layer`] is a tagged value: its [`LayerKind`] selects the forward and
//! backward rules, `params` holds the trainable tensors (kernel/weight first,
//! bias second) and `trainable` tells the optimizer whether to touch them.
//! `forward` returns a [`Cache`] that must be handed back to `backward`.

mod gradcheck;

pub use gradcheck::{gradient_check, GradCheckReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;
use crate::tensor::{self, ConvParams, Padding, PoolParams, Real, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        stride: usize,
        padding: Padding,
    },
    Dense,
    Relu,
    MaxPool(PoolParams),
    GlobalAvgPool,
    Dropout {
        rate: f64,
    },
    /// Joins any number of inputs along the last axis.
    Concat,
    Softmax,
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Dense => "dense",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool(_) => "maxpool",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Concat => "concat",
            LayerKind::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    /// Local name within the layer (`kernel`, `weight`, `bias`).
    pub name: &'static str,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// Hierarchical name, e.g. `backbone_a/block1/conv2`.
    pub name: String,
    pub kind: LayerKind,
    pub params: Vec<Param<T>>,
    pub trainable: bool,
}

/// Whatever a layer's backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    Conv {
        input: Tensor<T>,
    },
    Dense {
        input: Tensor<T>,
    },
    Relu {
        input: Tensor<T>,
    },
    MaxPool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
        output_shape: Vec<usize>,
    },
    GlobalAvgPool {
        input_shape: Vec<usize>,
    },
    /// `None` when the layer ran as the identity (inference or rate 0).
    Dropout {
        mask: Option<Tensor<T>>,
    },
    Concat {
        widths: Vec<usize>,
        output_shape: Vec<usize>,
    },
    Softmax {
        output: Tensor<T>,
    },
}

/// Gradients of one layer: one entry per parameter (same order as
/// `Layer::params`) and one per forward input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle<T> {
    pub params: Vec<Tensor<T>>,
    pub inputs: Vec<Tensor<T>>,
}

impl<T: Real> GradientBundle<T> {
    /// Gradient for a single-input layer.
    pub fn input(&self) -> &Tensor<T> {
        &self.inputs[0]
    }
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(TensorError::InvalidArgument {
            op: "dropout",
            msg: format!("rate {rate} outside [0, 1)"),
        })
    }
}

impl<T: Real> Layer<T> {
    fn plain(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
            params: Vec::new(),
            trainable: true,
        }
    }

    pub fn conv(
        name: impl Into<String>,
        kernel: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let (_, _, _, co) = ConvParams::new(kernel.clone(), stride, padding)?.dims()?;
        if bias.shape() != [co] {
            return Err(mismatch("conv", kernel.shape(), bias.shape()));
        }
        Ok(Self {
            params: vec![
                Param {
                    name: "kernel",
                    value: kernel,
                },
                Param {
                    name: "bias",
                    value: bias,
                },
            ],
            ..Self::plain(name, LayerKind::Conv { stride, padding })
        })
    }

    /// Fully connected layer, `weight: [in, out]`, `bias: [out]`.
    pub fn dense(name: impl Into<String>, weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (_, out) = weight.dims2("dense")?;
        if bias.shape() != [out] {
            return Err(mismatch("dense", weight.shape(), bias.shape()));
        }
        Ok(Self {
            params: vec![
                Param {
                    name: "weight",
                    value: weight,
                },
                Param {
                    name: "bias",
                    value: bias,
                },
            ],
            ..Self::plain(name, LayerKind::Dense)
        })
    }

    pub fn relu(name: impl Into<String>) -> Self {
        Self::plain(name, LayerKind::Relu)
    }

    pub fn maxpool(name: impl Into<String>, params: PoolParams) -> Self {
        Self::plain(name, LayerKind::MaxPool(params))
    }

    pub fn global_avg_pool(name: impl Into<String>) -> Self {
        Self::plain(name, LayerKind::GlobalAvgPool)
    }

    pub fn dropout(name: impl Into<String>, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Self::plain(name, LayerKind::Dropout { rate }))
    }

    pub fn concat(name: impl Into<String>) -> Self {
        Self::plain(name, LayerKind::Concat)
    }

    pub fn softmax(name: impl Into<String>) -> Self {
        Self::plain(name, LayerKind::Softmax)
    }

    /// Fully qualified parameter names, `<layer>/<param>`.
    pub fn param_names(&self) -> impl Iterator<Item = String> + '_ {
        self.params.iter().map(move |p| format!("{}/{}", self.name, p.name))
    }

    fn conv_params(&self, stride: usize, padding: Padding) -> Result<ConvParams<T>> {
        ConvParams::new(self.params[0].value.clone(), stride, padding)
    }

    fn single<'a>(&self, inputs: &[&'a Tensor<T>]) -> Result<&'a Tensor<T>> {
        match inputs {
            [x] => Ok(x),
            _ => Err(TensorError::InvalidArgument {
                op: "layer forward",
                msg: format!(
                    "{} `{}` takes one input, got {}",
                    self.kind.label(),
                    self.name,
                    inputs.len()
                ),
            }),
        }
    }

    /// Forward pass. Only `Concat` accepts more than one input.
    pub fn forward(&self, inputs: &[&Tensor<T>], mode: Mode, rng: &mut SeededRng) -> Result<(Tensor<T>, Cache<T>)> {
        if self.kind == LayerKind::Concat {
            let widths = inputs.iter().map(|t| *t.shape().last().unwrap_or(&0)).collect();
            let out = tensor::concat_last(inputs)?;
            let output_shape = out.shape().to_vec();
            return Ok((out, Cache::Concat { widths, output_shape }));
        }
        let x = self.single(inputs)?;
        match &self.kind {
            LayerKind::Conv { stride, padding } => {
                let p = self.conv_params(*stride, *padding)?;
                let y = tensor::conv2d(x, &p)?;
                let y = tensor::add_bias(&y, &self.params[1].value)?;
                Ok((y, Cache::Conv { input: x.clone() }))
            }
            LayerKind::Dense => {
                let y = tensor::matmul(x, &self.params[0].value)?;
                let y = tensor::add_bias(&y, &self.params[1].value)?;
                Ok((y, Cache::Dense { input: x.clone() }))
            }
            LayerKind::Relu => Ok((tensor::relu(x), Cache::Relu { input: x.clone() })),
            LayerKind::MaxPool(p) => {
                let (y, argmax) = tensor::maxpool2d_indexed(x, *p)?;
                let output_shape = y.shape().to_vec();
                Ok((
                    y,
                    Cache::MaxPool {
                        input_shape: x.shape().to_vec(),
                        argmax,
                        output_shape,
                    },
                ))
            }
            LayerKind::GlobalAvgPool => Ok((
                tensor::global_avg_pool(x)?,
                Cache::GlobalAvgPool {
                    input_shape: x.shape().to_vec(),
                },
            )),
            LayerKind::Dropout { rate } => {
                check_rate(*rate)?;
                if mode == Mode::Infer || *rate == 0.0 {
                    return Ok((x.clone(), Cache::Dropout { mask: None }));
                }
                let keep = T::of(1.0 / (1.0 - rate));
                let mask = Tensor::from_fn(x.shape().to_vec(), |_| {
                    if rng.gen::<f64>() < *rate {
                        T::zero()
                    } else {
                        keep
                    }
                });
                let y = tensor::mul(x, &mask)?;
                Ok((y, Cache::Dropout { mask: Some(mask) }))
            }
            LayerKind::Softmax => {
                let y = softmax(x)?;
                Ok((y.clone(), Cache::Softmax { output: y }))
            }
            LayerKind::Concat => unreachable!("handled above"),
        }
    }

    /// Reverse-mode gradients for the forward call that produced `cache`.
    pub fn backward(&self, cache: &Cache<T>, upstream: &Tensor<T>) -> Result<GradientBundle<T>> {
        let no_params = |inputs| GradientBundle {
            params: Vec::new(),
            inputs,
        };
        match (&self.kind, cache) {
            (LayerKind::Conv { stride, padding }, Cache::Conv { input }) => {
                let p = self.conv_params(*stride, *padding)?;
                let (dx, dk) = tensor::conv2d_backward(input, &p, upstream)?;
                Ok(GradientBundle {
                    params: vec![dk, tensor::sum_to_last(upstream)],
                    inputs: vec![dx],
                })
            }
            (LayerKind::Dense, Cache::Dense { input }) => {
                let w = &self.params[0].value;
                let dw = tensor::matmul(&tensor::transpose2d(input)?, upstream)?;
                let dx = tensor::matmul(upstream, &tensor::transpose2d(w)?)?;
                Ok(GradientBundle {
                    params: vec![dw, tensor::sum_to_last(upstream)],
                    inputs: vec![dx],
                })
            }
            (LayerKind::Relu, Cache::Relu { input }) => {
                if input.shape() != upstream.shape() {
                    return Err(mismatch("relu backward", input.shape(), upstream.shape()));
                }
                let data = input
                    .data()
                    .iter()
                    .zip(upstream.data())
                    .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                Ok(no_params(vec![Tensor::new(input.shape().to_vec(), data)?]))
            }
            (
                LayerKind::MaxPool(_),
                Cache::MaxPool {
                    input_shape,
                    argmax,
                    output_shape,
                },
            ) => {
                if upstream.shape() != &output_shape[..] {
                    return Err(mismatch("maxpool backward", output_shape, upstream.shape()));
                }
                Ok(no_params(vec![tensor::maxpool2d_backward(
                    input_shape,
                    argmax,
                    upstream,
                )?]))
            }
            (LayerKind::GlobalAvgPool, Cache::GlobalAvgPool { input_shape }) => {
                Ok(no_params(vec![tensor::global_avg_pool_backward(
                    input_shape,
                    upstream,
                )?]))
            }
            (LayerKind::Dropout { .. }, Cache::Dropout { mask }) => Ok(no_params(vec![match mask {
                Some(m) => {
                    if m.shape() != upstream.shape() {
                        return Err(mismatch("dropout backward", m.shape(), upstream.shape()));
                    }
                    tensor::mul(upstream, m)?
                }
                None => upstream.clone(),
            }])),
            (LayerKind::Concat, Cache::Concat { widths, output_shape }) => {
                if upstream.shape() != &output_shape[..] {
                    return Err(mismatch("concat backward", output_shape, upstream.shape()));
                }
                Ok(no_params(tensor::split_last(upstream, widths)?))
            }
            (LayerKind::Softmax, Cache::Softmax { output }) => Ok(no_params(vec![softmax_backward(output, upstream)?])),
            (kind, _) => Err(TensorError::InvalidArgument {
                op: "layer backward",
                msg: format!("cache does not belong to {} layer `{}`", kind.label(), self.name),
            }),
        }
    }
}

/// Row-wise softmax over the last axis with max subtraction.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let k = *logits.shape().last().ok_or(TensorError::Rank {
        op: "softmax",
        expected: 1,
        shape: vec![],
    })?;
    if k == 0 {
        return Err(TensorError::InvalidArgument {
            op: "softmax",
            msg: "need at least one class".into(),
        });
    }
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out.ensure_finite("softmax")
}

/// Vector-Jacobian product of softmax: `y ⊙ (g − Σ g·y)` per row.
pub fn softmax_backward<T: Real>(output: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if output.shape() != upstream.shape() {
        return Err(mismatch("softmax backward", output.shape(), upstream.shape()));
    }
    let k = *output.shape().last().unwrap_or(&1);
    let mut dx = upstream.clone();
    for (drow, yrow) in dx.data_mut().chunks_mut(k).zip(output.data().chunks(k)) {
        let dot: T = drow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
        for (d, &y) in drow.iter_mut().zip(yrow) {
            *d = y * (*d - dot);
        }
    }
    Ok(dx)
}

/// A straight chain of single-input layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

/// Per-layer caches of one [`Sequential::forward`] call.
#[derive(Debug, Clone)]
pub struct SequentialCache<T>(Vec<Cache<T>>);

/// Parameter gradients of each layer, in layer order.
pub type LayerGrads<T> = Vec<Vec<Tensor<T>>>;

impl<T> SequentialCache<T> {
    pub fn caches(&self) -> &[Cache<T>] {
        &self.0
    }
}

impl<T: Real> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn forward(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Tensor<T>, SequentialCache<T>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward(&[&x], mode, rng)?;
            caches.push(c);
            x = y;
        }
        Ok((x, SequentialCache(caches)))
    }

    /// Returns the input gradient and the parameter gradients of every
    /// layer, in layer order.
    pub fn backward(&self, cache: &SequentialCache<T>, upstream: &Tensor<T>) -> Result<(Tensor<T>, LayerGrads<T>)> {
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut g = upstream.clone();
        for (i, (layer, c)) in self.layers.iter().zip(&cache.0).enumerate().rev() {
            let mut bundle = layer.backward(c, &g)?;
            grads[i] = std::mem::take(&mut bundle.params);
            g = bundle.inputs.swap_remove(0);
        }
        Ok((g, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn dense_example() -> Layer<f64> {
        let w = Tensor::from_rows(&[&[1.0, -2.0, 0.5], &[0.0, 3.0, 1.0]]).unwrap();
        let b = Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        Layer::dense("d", w, b).unwrap()
    }

    #[test]
    fn dropout_degenerate_cases_are_identity() {
        let x = Tensor::<f32>::from_fn(vec![4, 5], |i| i as f32 - 7.0);
        let zero = Layer::dropout("d", 0.0).unwrap();
        assert_eq!(zero.forward(&[&x], Mode::Train, &mut seeded(1)).unwrap().0, x);
        let half = Layer::dropout("d", 0.5).unwrap();
        assert_eq!(half.forward(&[&x], Mode::Infer, &mut seeded(1)).unwrap().0, x);
        assert!(Layer::<f32>::dropout("d", 1.0).is_err());
        assert!(Layer::<f32>::dropout("d", -0.1).is_err());
    }

    #[test]
    fn dropout_is_deterministic_per_seed() {
        let x = Tensor::<f32>::full(vec![64], 1.0);
        let d = Layer::dropout("d", 0.5).unwrap();
        let a = d.forward(&[&x], Mode::Train, &mut seeded(9)).unwrap().0;
        let b = d.forward(&[&x], Mode::Train, &mut seeded(9)).unwrap().0;
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dense_forward_matches_matmul_plus_bias() {
        let layer = dense_example();
        let x = Tensor::from_rows(&[&[2.0, -1.0]]).unwrap();
        let (y, _) = layer.forward(&[&x], Mode::Infer, &mut seeded(0)).unwrap();
        // x·W + b by hand.
        assert_eq!(y.data(), &[2.0 + 0.1, -4.0 - 3.0 + 0.2, 1.0 - 1.0 + 0.3]);
    }

    #[test]
    fn dense_weight_gradient_is_outer_product() {
        let layer = dense_example();
        let x = Tensor::from_rows(&[&[2.0, -1.0]]).unwrap();
        let (_, cache) = layer.forward(&[&x], Mode::Train, &mut seeded(0)).unwrap();
        let up = Tensor::from_rows(&[&[1.0, 0.5, -2.0]]).unwrap();
        let g = layer.backward(&cache, &up).unwrap();
        assert_eq!(g.params[0].data(), &[2.0, 1.0, -4.0, -1.0, -0.5, 2.0]);
        assert_eq!(g.params[1].data(), up.data());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = seeded(3);
        let x = Tensor::<f64>::from_fn(vec![2, 5, 5, 2], |i| (i as f64 * 0.37).sin());
        let k = Tensor::from_fn(vec![3, 3, 2, 3], |i| (i as f64 * 0.11).cos());
        let conv = Layer::conv("c", k, Tensor::zeros(vec![3]), 1, Padding::Same).unwrap();
        let (y, cache) = conv.forward(&[&x], Mode::Train, &mut rng).unwrap();
        let g = conv.backward(&cache, &Tensor::zeros(y.shape().to_vec())).unwrap();
        for t in g.params.iter().chain(&g.inputs) {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_rejects_wrong_upstream_shape() {
        let relu = Layer::<f64>::relu("r");
        let x = Tensor::zeros(vec![2, 3]);
        let (_, cache) = relu.forward(&[&x], Mode::Train, &mut seeded(0)).unwrap();
        assert!(relu.backward(&cache, &Tensor::zeros(vec![3, 2])).is_err());
        let dense = dense_example();
        assert!(dense.backward(&cache, &Tensor::zeros(vec![2, 3])).is_err());
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&Tensor::<f32>::zeros(vec![1, 8])).unwrap();
        assert!(u.data().iter().all(|&p| (p - 0.125).abs() < 1e-7));
        let big = softmax(&Tensor::from_rows(&[&[1000.0f32, 0.0]]).unwrap()).unwrap();
        assert_eq!(big.data(), &[1.0, 0.0]);
    }

    #[test]
    fn concat_layer_splits_gradient() {
        let a = Tensor::<f64>::from_fn(vec![2, 3], |i| i as f64);
        let b = Tensor::<f64>::from_fn(vec![2, 1], |i| -(i as f64));
        let layer = Layer::concat("cat");
        let (y, cache) = layer.forward(&[&a, &b], Mode::Infer, &mut seeded(0)).unwrap();
        assert_eq!(y.shape(), &[2, 4]);
        let g = layer.backward(&cache, &y).unwrap();
        assert_eq!(g.inputs, vec![a, b]);
    }

    #[test]
    fn sequential_chains_layers() {
        let seq = Sequential::new(vec![dense_example(), Layer::relu("r"), Layer::softmax("s")]);
        let x = Tensor::from_rows(&[&[2.0, -1.0], &[0.5, 0.5]]).unwrap();
        let (y, cache) = seq.forward(&x, Mode::Train, &mut seeded(0)).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        let (dx, grads) = seq.backward(&cache, &Tensor::full(vec![2, 3], 1.0)).unwrap();
        assert_eq!(dx.shape(), x.shape());
        assert_eq!(grads[0].len(), 2);
        assert!(grads[1].is_empty() && grads[2].is_empty());
    }
}
