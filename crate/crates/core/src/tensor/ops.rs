use serde::{Deserialize, Serialize};

use super::{Real, Result, Tensor, TensorError};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding so the output spatial size is `ceil(input / stride)`.
    /// Odd padding totals put the extra row/column at the bottom/right.
    Same,
    Valid,
}

/// Output extent and leading pad for one spatial axis.
fn axis_geometry(
    op: &'static str,
    input: usize,
    window: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(TensorError::InvalidArgument {
            op,
            msg: "stride must be positive".into(),
        });
    }
    if window == 0 {
        return Err(TensorError::InvalidArgument {
            op,
            msg: "window must be positive".into(),
        });
    }
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out.saturating_sub(1)) * stride + window).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if input < window {
                return Err(TensorError::InvalidArgument {
                    op,
                    msg: format!("window {window} exceeds spatial extent {input}"),
                });
            }
            Ok(((input - window) / stride + 1, 0))
        }
    }
}

/// Convolution settings: kernel `[kh, kw, c_in, c_out]`, stride, padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub kernel: Tensor<T>,
    pub stride: usize,
    pub padding: Padding,
}

impl<T: Real> ConvParams<T> {
    pub fn new(kernel: Tensor<T>, stride: usize, padding: Padding) -> Result<Self> {
        let p = Self {
            kernel,
            stride,
            padding,
        };
        p.dims()?;
        Ok(p)
    }

    /// `(kh, kw, c_in, c_out)` after validating the invariants.
    pub fn dims(&self) -> Result<(usize, usize, usize, usize)> {
        let (kh, kw, ci, co) = self.kernel.dims4("conv2d")?;
        if self.stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                msg: "stride must be positive".into(),
            });
        }
        if self.padding == Padding::Same && (kh % 2 == 0 || kw % 2 == 0) {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                msg: format!("`same` padding needs odd kernel sizes, got {kh}x{kw}"),
            });
        }
        Ok((kh, kw, ci, co))
    }
}

/// Geometry shared by convolution forward and backward passes.
#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    ci: usize,
    kh: usize,
    kw: usize,
    co: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
}

impl ConvGeom {
    fn new<T: Real>(input: &Tensor<T>, p: &ConvParams<T>) -> Result<Self> {
        let (n, h, w, c) = input.dims4("conv2d")?;
        let (kh, kw, ci, co) = p.dims()?;
        if c != ci {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: input.shape().to_vec(),
                right: p.kernel.shape().to_vec(),
            });
        }
        let (oh, pad_top) = axis_geometry("conv2d", h, kh, p.stride, p.padding)?;
        let (ow, pad_left) = axis_geometry("conv2d", w, kw, p.stride, p.padding)?;
        Ok(Self {
            n,
            h,
            w,
            ci,
            kh,
            kw,
            co,
            oh,
            ow,
            stride: p.stride,
            pad_top,
            pad_left,
        })
    }

    /// Input coordinate for output `o` and kernel tap `k`, if inside the image.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * stride + k).checked_sub(pad)?;
        (pos < extent).then_some(pos)
    }
}

/// 2-D cross-correlation (no kernel flip) over an NHWC batch.
pub fn conv2d<T: Real>(input: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input, p)?;
    let x = input.data();
    let k = p.kernel.data();
    let mut out = vec![T::zero(); g.n * g.oh * g.ow * g.co];
    // One chunk per output row (n, oy).
    par::for_each_chunk(&mut out, g.ow * g.co, |row, chunk| {
        let (n, oy) = (row / g.oh, row % g.oh);
        for ki in 0..g.kh {
            let Some(iy) = ConvGeom::src(oy, ki, g.stride, g.pad_top, g.h) else {
                continue;
            };
            for ox in 0..g.ow {
                let acc = &mut chunk[ox * g.co..(ox + 1) * g.co];
                for kj in 0..g.kw {
                    let Some(ix) = ConvGeom::src(ox, kj, g.stride, g.pad_left, g.w) else {
                        continue;
                    };
                    let xin = &x[((n * g.h + iy) * g.w + ix) * g.ci..][..g.ci];
                    let kbase = (ki * g.kw + kj) * g.ci * g.co;
                    for (c, &xv) in xin.iter().enumerate() {
                        let krow = &k[kbase + c * g.co..][..g.co];
                        for (a, &kv) in acc.iter_mut().zip(krow) {
                            *a = *a + xv * kv;
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![g.n, g.oh, g.ow, g.co], out)?.ensure_finite("conv2d")
}

/// Gradients of [`conv2d`]: `(d_input, d_kernel)` for upstream `d_out`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    p: &ConvParams<T>,
    d_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = ConvGeom::new(input, p)?;
    if d_out.shape() != [g.n, g.oh, g.ow, g.co] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_backward",
            left: vec![g.n, g.oh, g.ow, g.co],
            right: d_out.shape().to_vec(),
        });
    }
    let x = input.data();
    let k = p.kernel.data();
    let dy = d_out.data();
    let per_image = g.h * g.w * g.ci;

    let mut dx = vec![T::zero(); g.n * per_image];
    par::for_each_chunk(&mut dx, per_image, |n, dxn| {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dyv = &dy[((n * g.oh + oy) * g.ow + ox) * g.co..][..g.co];
                for ki in 0..g.kh {
                    let Some(iy) = ConvGeom::src(oy, ki, g.stride, g.pad_top, g.h) else {
                        continue;
                    };
                    for kj in 0..g.kw {
                        let Some(ix) = ConvGeom::src(ox, kj, g.stride, g.pad_left, g.w) else {
                            continue;
                        };
                        let kbase = (ki * g.kw + kj) * g.ci * g.co;
                        let dst = &mut dxn[(iy * g.w + ix) * g.ci..][..g.ci];
                        for (c, d) in dst.iter_mut().enumerate() {
                            let krow = &k[kbase + c * g.co..][..g.co];
                            let s: T = krow.iter().zip(dyv).map(|(&a, &b)| a * b).sum();
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    });

    // Per-image kernel gradients, then an in-order sum.
    let ksize = g.kh * g.kw * g.ci * g.co;
    let partials = par::map_range(g.n, |n| {
        let mut dk = vec![T::zero(); ksize];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dyv = &dy[((n * g.oh + oy) * g.ow + ox) * g.co..][..g.co];
                for ki in 0..g.kh {
                    let Some(iy) = ConvGeom::src(oy, ki, g.stride, g.pad_top, g.h) else {
                        continue;
                    };
                    for kj in 0..g.kw {
                        let Some(ix) = ConvGeom::src(ox, kj, g.stride, g.pad_left, g.w) else {
                            continue;
                        };
                        let xin = &x[((n * g.h + iy) * g.w + ix) * g.ci..][..g.ci];
                        let kbase = (ki * g.kw + kj) * g.ci * g.co;
                        for (c, &xv) in xin.iter().enumerate() {
                            let drow = &mut dk[kbase + c * g.co..][..g.co];
                            for (d, &dv) in drow.iter_mut().zip(dyv) {
                                *d = *d + xv * dv;
                            }
                        }
                    }
                }
            }
        }
        dk
    });
    let mut dk = vec![T::zero(); ksize];
    for part in &partials {
        for (d, &v) in dk.iter_mut().zip(part) {
            *d = *d + v;
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?.ensure_finite("conv2d_backward")?,
        Tensor::new(p.kernel.shape().to_vec(), dk)?.ensure_finite("conv2d_backward")?,
    ))
}

/// Pooling window settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolParams {
    pub window: usize,
    pub stride: usize,
    pub padding: Padding,
}

/// Max pooling with `valid` coverage.
pub fn maxpool2d<T: Real>(input: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    maxpool2d_indexed(
        input,
        PoolParams {
            window,
            stride,
            padding: Padding::Valid,
        },
    )
    .map(|(t, _)| t)
}

/// Max pooling that also returns, per output cell, the flat input index of
/// the winning element. Ties go to the first maximum in row-major window
/// order. Under `same` padding, cells outside the image never win.
pub fn maxpool2d_indexed<T: Real>(input: &Tensor<T>, p: PoolParams) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, h, w, c) = input.dims4("maxpool2d")?;
    let (oh, pad_top) = axis_geometry("maxpool2d", h, p.window, p.stride, p.padding)?;
    let (ow, pad_left) = axis_geometry("maxpool2d", w, p.window, p.stride, p.padding)?;
    let x = input.data();
    let mut argmax = vec![0usize; n * oh * ow * c];
    par::for_each_chunk(&mut argmax, ow * c, |row, chunk| {
        let (b, oy) = (row / oh, row % oh);
        for ox in 0..ow {
            for ch in 0..c {
                let mut best: Option<usize> = None;
                for ki in 0..p.window {
                    let Some(iy) = ConvGeom::src(oy, ki, p.stride, pad_top, h) else {
                        continue;
                    };
                    for kj in 0..p.window {
                        let Some(ix) = ConvGeom::src(ox, kj, p.stride, pad_left, w) else {
                            continue;
                        };
                        let idx = ((b * h + iy) * w + ix) * c + ch;
                        if best.is_none_or(|bi| x[idx] > x[bi]) {
                            best = Some(idx);
                        }
                    }
                }
                // axis_geometry guarantees every window overlaps the image.
                chunk[ox * c + ch] = best.expect("pool window outside image");
            }
        }
    });
    let out = argmax.iter().map(|&i| x[i]).collect();
    Ok((
        Tensor::new(vec![n, oh, ow, c], out)?.ensure_finite("maxpool2d")?,
        argmax,
    ))
}

/// Routes `d_out` back to the argmax positions recorded by [`maxpool2d_indexed`].
pub fn maxpool2d_backward<T: Real>(input_shape: &[usize], argmax: &[usize], d_out: &Tensor<T>) -> Result<Tensor<T>> {
    if argmax.len() != d_out.len() {
        return Err(TensorError::ShapeMismatch {
            op: "maxpool2d_backward",
            left: vec![argmax.len()],
            right: d_out.shape().to_vec(),
        });
    }
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(d_out.data()) {
        d[i] = d[i] + g;
    }
    Ok(dx)
}

/// Mean over all spatial positions: `[N, H, W, C] -> [N, C]`.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, c) = input.dims4("global_avg_pool")?;
    if h * w == 0 {
        return Err(TensorError::InvalidArgument {
            op: "global_avg_pool",
            msg: "empty spatial extent".into(),
        });
    }
    let count = T::of((h * w) as f64);
    let x = input.data();
    let mut out = vec![T::zero(); n * c];
    for (b, row) in out.chunks_mut(c.max(1)).enumerate().take(n) {
        for px in x[b * h * w * c..(b + 1) * h * w * c].chunks(c.max(1)) {
            for (o, &v) in row.iter_mut().zip(px) {
                *o = *o + v;
            }
        }
        for o in row.iter_mut() {
            *o = *o / count;
        }
    }
    Tensor::new(vec![n, c], out)?.ensure_finite("global_avg_pool")
}

/// Spreads `d_out[n, c] / (H·W)` over every spatial position.
pub fn global_avg_pool_backward<T: Real>(input_shape: &[usize], d_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, h, w, c] = input_shape[..] else {
        return Err(TensorError::Rank {
            op: "global_avg_pool_backward",
            expected: 4,
            shape: input_shape.to_vec(),
        });
    };
    if d_out.shape() != [n, c] {
        return Err(TensorError::ShapeMismatch {
            op: "global_avg_pool_backward",
            left: vec![n, c],
            right: d_out.shape().to_vec(),
        });
    }
    let inv = T::one() / T::of((h * w) as f64);
    let g = d_out.data();
    Ok(Tensor::from_fn(input_shape.to_vec(), |i| {
        let ch = i % c;
        let b = i / (h * w * c);
        g[b * c + ch] * inv
    }))
}

/// Concatenates along the last axis; all leading dimensions must agree.
pub fn concat_last<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or(TensorError::InvalidArgument {
        op: "concat",
        msg: "no operands".into(),
    })?;
    if first.rank() == 0 {
        return Err(TensorError::Rank {
            op: "concat",
            expected: 1,
            shape: vec![],
        });
    }
    let lead = &first.shape()[..first.rank() - 1];
    for p in parts {
        if p.rank() != first.rank() || &p.shape()[..p.rank() - 1] != lead {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                left: first.shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
    }
    let rows: usize = lead.iter().product();
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[p.rank() - 1]).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &wd) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[r * wd..(r + 1) * wd]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(shape, data)
}

/// Two-operand channel concatenation `[N, F1] ++ [N, F2] -> [N, F1 + F2]`.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    concat_last(&[a, b])
}

/// Splits the last axis into consecutive pieces of the given widths.
pub fn split_last<T: Real>(t: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    let rank = t.rank();
    let total = *t.shape().last().unwrap_or(&0);
    if rank == 0 || widths.iter().sum::<usize>() != total {
        return Err(TensorError::InvalidArgument {
            op: "split",
            msg: format!("widths {widths:?} do not partition shape {:?}", t.shape()),
        });
    }
    let rows: usize = t.shape()[..rank - 1].iter().product();
    let mut out: Vec<Vec<T>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
    for r in 0..rows {
        let mut off = r * total;
        for (buf, &wd) in out.iter_mut().zip(widths) {
            buf.extend_from_slice(&t.data()[off..off + wd]);
            off += wd;
        }
    }
    out.into_iter()
        .zip(widths)
        .map(|(d, &wd)| {
            let mut shape = t.shape()[..rank - 1].to_vec();
            shape.push(wd);
            Tensor::new(shape, d)
        })
        .collect()
}

/// `[M, K] x [K, N] -> [M, N]`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    par::for_each_chunk(&mut out, n, |i, row| {
        for (kk, &av) in ad[i * k..(i + 1) * k].iter().enumerate() {
            for (o, &bv) in row.iter_mut().zip(&bd[kk * n..(kk + 1) * n]) {
                *o = *o + av * bv;
            }
        }
    });
    Tensor::new(vec![m, n], out)?.ensure_finite("matmul")
}

pub fn transpose2d<T: Real>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = a.dims2("transpose")?;
    let d = a.data();
    Tensor::new(vec![n, m], (0..m * n).map(|i| d[(i % m) * n + i / m]).collect())
}

fn binary<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let out = if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)?
    } else if b.len() == 1 {
        let y = b.data()[0];
        a.map(|x| f(x, y))
    } else if a.len() == 1 {
        let x = a.data()[0];
        b.map(|y| f(x, y))
    } else {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    };
    out.ensure_finite(op)
}

/// Elementwise sum; a one-element operand broadcasts as a scalar.
pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary("add", a, b, |x, y| x + y)
}

/// Elementwise product; a one-element operand broadcasts as a scalar.
pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary("mul", a, b, |x, y| x * y)
}

pub fn relu<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|x| if x > T::zero() { x } else { T::zero() })
}

pub fn scale<T: Real>(a: &Tensor<T>, s: T) -> Result<Tensor<T>> {
    a.map(|x| x * s).ensure_finite("scale")
}

/// Adds a `[C]` bias along the last axis.
pub fn add_bias<T: Real>(a: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let c = *a.shape().last().unwrap_or(&0);
    if bias.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            op: "add_bias",
            left: a.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let b = bias.data();
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(c.max(1)) {
        for (o, &bv) in row.iter_mut().zip(b) {
            *o = *o + bv;
        }
    }
    out.ensure_finite("add_bias")
}

/// Sum over every axis but the last: the gradient of [`add_bias`].
pub fn sum_to_last<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    let c = *a.shape().last().unwrap_or(&0);
    let mut out = vec![T::zero(); c];
    for row in a.data().chunks(c.max(1)) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    Tensor {
        shape: vec![c],
        data: out,
    }
}
