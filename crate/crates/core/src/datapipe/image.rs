use crate::tensor::{Tensor, TensorError};

/// 8-bit RGB image, row-major `[r, g, b]` triples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// RGB image with float channels, normally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height * 3, "FloatImage data length");
        Self { width, height, data }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height * 3])
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    /// `[1, H, W, 3]` tensor view of the image.
    pub fn to_tensor(&self) -> Result<Tensor<f32>, TensorError> {
        Tensor::new(vec![1, self.height, self.width, 3], self.data.clone())
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (y * self.width + (self.width - 1 - x)) * 3;
                let dst = (y * self.width + x) * 3;
                out.data[dst..dst + 3].copy_from_slice(&self.data[src..src + 3]);
            }
        }
        out
    }

    /// Bilinear sample at continuous index coordinates; taps outside the
    /// image contribute zero.
    pub(crate) fn sample_zero_fill(&self, u: f64, v: f64, c: usize) -> f32 {
        let x0 = u.floor();
        let y0 = v.floor();
        let (fx, fy) = (u - x0, v - y0);
        let tap = |x: f64, y: f64| -> f64 {
            if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
                0.0
            } else {
                self.at(x as usize, y as usize, c) as f64
            }
        };
        let top = tap(x0, y0) * (1.0 - fx) + tap(x0 + 1.0, y0) * fx;
        let bottom = tap(x0, y0 + 1.0) * (1.0 - fx) + tap(x0 + 1.0, y0 + 1.0) * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    }
}

/// Maps 8-bit channels to `[0, 1]` by dividing by 255.
pub fn rescale(img: &Image) -> FloatImage {
    FloatImage::new(
        img.width,
        img.height,
        img.pixels.iter().map(|&p| p as f32 / 255.0).collect(),
    )
}

/// Source coordinate for destination index `d` under half-pixel-center
/// alignment, clamped to the source extent. Returns `(i0, i1, frac)`.
fn source_axis(d: usize, src: usize, dst: usize) -> (usize, usize, f32) {
    let scale = src as f64 / dst as f64;
    let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src - 1);
    (i0, i1, (s - i0 as f64) as f32)
}

/// Bilinear resize with half-pixel centers and border clamping.
pub fn resize_bilinear(img: &FloatImage, width: usize, height: usize) -> FloatImage {
    assert!(width >= 1 && height >= 1, "resize target must be at least 1x1");
    if (width, height) == (img.width, img.height) {
        return img.clone();
    }
    let xs: Vec<_> = (0..width).map(|x| source_axis(x, img.width, width)).collect();
    let mut out = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let (y0, y1, fy) = source_axis(y, img.height, height);
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let lerp = |a: f32, b: f32, t: f32| a + (b - a) * t;
                let top = lerp(img.at(x0, y0, c), img.at(x1, y0, c), fx);
                let bottom = lerp(img.at(x0, y1, c), img.at(x1, y1, c), fx);
                out.push(lerp(top, bottom, fy));
            }
        }
    }
    FloatImage::new(width, height, out)
}
