//! Random flip, rotation and zoom, applied in that order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FloatImage;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Probability of a horizontal flip, in `[0, 1]`.
    pub p_hflip: f64,
    /// Rotation angle is uniform in `±max_rotation_deg`.
    pub max_rotation_deg: f64,
    /// Zoom factor is uniform in `[1 - max_zoom, 1 + max_zoom]`, `max_zoom < 1`.
    pub max_zoom: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            p_hflip: 0.5,
            max_rotation_deg: 15.0,
            max_zoom: 0.1,
        }
    }
}

impl AugmentParams {
    pub fn none() -> Self {
        Self {
            p_hflip: 0.0,
            max_rotation_deg: 0.0,
            max_zoom: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.p_hflip) {
            return Err(format!("p_hflip {} outside [0, 1]", self.p_hflip));
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg.is_finite()) {
            return Err(format!("max_rotation_deg {} must be >= 0", self.max_rotation_deg));
        }
        if !(0.0..1.0).contains(&self.max_zoom) {
            return Err(format!("max_zoom {} outside [0, 1)", self.max_zoom));
        }
        Ok(())
    }

    /// Draws one set of transform values. Disabled transforms consume no
    /// randomness.
    pub fn draw(&self, rng: &mut SeededRng) -> AugmentDraw {
        let flip = self.p_hflip > 0.0 && rng.gen::<f64>() < self.p_hflip;
        let angle_deg = if self.max_rotation_deg > 0.0 {
            rng.gen_range(-self.max_rotation_deg..=self.max_rotation_deg)
        } else {
            0.0
        };
        let zoom = if self.max_zoom > 0.0 {
            rng.gen_range(1.0 - self.max_zoom..=1.0 + self.max_zoom)
        } else {
            1.0
        };
        AugmentDraw { flip, angle_deg, zoom }
    }
}

/// Concrete transform values for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    /// Counter-clockwise as displayed (rows top to bottom).
    pub angle_deg: f64,
    /// Values above 1 magnify.
    pub zoom: f64,
}

impl AugmentDraw {
    pub const IDENTITY: Self = Self {
        flip: false,
        angle_deg: 0.0,
        zoom: 1.0,
    };
}

pub fn augment(img: &FloatImage, params: &AugmentParams, rng: &mut SeededRng) -> FloatImage {
    apply(img, params.draw(rng))
}

/// Applies fixed transform values. Identity steps are skipped, so
/// `AugmentDraw::IDENTITY` returns the input bit for bit.
pub fn apply(img: &FloatImage, draw: AugmentDraw) -> FloatImage {
    let mut out = if draw.flip { img.flip_horizontal() } else { img.clone() };
    if draw.angle_deg != 0.0 {
        let (s, c) = draw.angle_deg.to_radians().sin_cos();
        out = warp(&out, |dx, dy| (c * dx - s * dy, s * dx + c * dy));
    }
    if draw.zoom != 1.0 {
        let inv = 1.0 / draw.zoom;
        out = warp(&out, |dx, dy| (dx * inv, dy * inv));
    }
    out
}

/// Inverse-maps every output pixel center through `src_offset` (offsets
/// relative to the image center) and samples bilinearly with zero fill.
fn warp(img: &FloatImage, src_offset: impl Fn(f64, f64) -> (f64, f64)) -> FloatImage {
    let (cx, cy) = (img.width as f64 / 2.0, img.height as f64 / 2.0);
    let mut out = FloatImage::zeros(img.width, img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            let (sx, sy) = src_offset(x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let (u, v) = (sx + cx - 0.5, sy + cy - 0.5);
            for c in 0..3 {
                out.data[(y * img.width + x) * 3 + c] = img.sample_zero_fill(u, v, c);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn gray(w: usize, h: usize, vals: &[f32]) -> FloatImage {
        FloatImage::new(w, h, vals.iter().flat_map(|&v| [v, v, v]).collect())
    }

    #[test]
    fn zero_params_are_identity() {
        let img = gray(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(augment(&img, &AugmentParams::none(), &mut seeded(3)), img);
    }

    #[test]
    fn certain_flip_swaps_pixels() {
        let img = gray(2, 1, &[0.25, 0.75]);
        let p = AugmentParams {
            p_hflip: 1.0,
            ..AugmentParams::none()
        };
        assert_eq!(augment(&img, &p, &mut seeded(0)), gray(2, 1, &[0.75, 0.25]));
    }

    #[test]
    fn zoom_out_fills_borders_with_zero() {
        let img = gray(8, 8, &[1.0; 64]);
        let out = apply(
            &img,
            AugmentDraw {
                zoom: 0.5,
                ..AugmentDraw::IDENTITY
            },
        );
        assert_eq!(out.at(0, 0, 0), 0.0);
        assert!((out.at(4, 4, 0) - 1.0).abs() < 1e-6);
        assert_eq!((out.width, out.height), (8, 8));
    }

    #[test]
    fn draws_stay_in_range() {
        let p = AugmentParams {
            p_hflip: 0.5,
            max_rotation_deg: 20.0,
            max_zoom: 0.2,
        };
        let mut rng = seeded(1);
        for _ in 0..200 {
            let d = p.draw(&mut rng);
            assert!(d.angle_deg.abs() <= 20.0);
            assert!((0.8..=1.2).contains(&d.zoom));
        }
        assert!(AugmentParams { max_zoom: 1.0, ..p }.validate().is_err());
        assert!(AugmentParams { p_hflip: 1.5, ..p }.validate().is_err());
    }
}
