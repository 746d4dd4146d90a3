use serde::{Deserialize, Serialize};

use super::ModelError;

/// One VGG stage: `convs` 3×3 convolutions with `channels` outputs, then a
/// 2×2 stride-2 max pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VggBlock {
    pub convs: usize,
    pub channels: usize,
}

/// Output widths of the four Inception branches and their 1×1 reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionWidths {
    pub b1x1: usize,
    pub b3x3_reduce: usize,
    pub b3x3: usize,
    pub b5x5_reduce: usize,
    pub b5x5: usize,
    pub pool_proj: usize,
}

impl InceptionWidths {
    pub fn from_array([b1x1, b3x3_reduce, b3x3, b5x5_reduce, b5x5, pool_proj]: [usize; 6]) -> Self {
        Self {
            b1x1,
            b3x3_reduce,
            b3x3,
            b5x5_reduce,
            b5x5,
            pool_proj,
        }
    }

    pub fn as_array(&self) -> [usize; 6] {
        [
            self.b1x1,
            self.b3x3_reduce,
            self.b3x3,
            self.b5x5_reduce,
            self.b5x5,
            self.pool_proj,
        ]
    }

    /// Channels leaving the block.
    pub fn out_channels(&self) -> usize {
        self.b1x1 + self.b3x3 + self.b5x5 + self.pool_proj
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BackboneSpec {
    VggStyle {
        blocks: Vec<VggBlock>,
    },
    /// A 3×3 stem convolution with a 2×2 pool, then `block_count`
    /// Inception blocks sharing the same widths.
    InceptionStyle {
        stem_channels: usize,
        widths: InceptionWidths,
        block_count: usize,
    },
}

impl BackboneSpec {
    /// Channel count of the final feature map (the GAP output width).
    pub fn out_channels(&self) -> usize {
        match self {
            BackboneSpec::VggStyle { blocks } => blocks.last().map_or(0, |b| b.channels),
            BackboneSpec::InceptionStyle {
                stem_channels,
                widths,
                block_count,
            } => {
                if *block_count == 0 {
                    *stem_channels
                } else {
                    widths.out_channels()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridSpec {
    /// `[height, width]` in pixels.
    pub input_size: [usize; 2],
    pub class_count: usize,
    pub backbone_a: BackboneSpec,
    pub backbone_b: BackboneSpec,
    /// Dense widths; the last one is the class count.
    pub head: Vec<usize>,
    pub dropout_rate: f64,
    /// Glob patterns over layer names, e.g. `backbone_a/*`.
    pub freeze: Vec<String>,
}

impl Default for HybridSpec {
    fn default() -> Self {
        Self::desk(8)
    }
}

impl HybridSpec {
    /// The small default configuration: 32×32 input, a two-stage VGG
    /// backbone, one Inception block, one hidden dense layer of 64.
    pub fn desk(class_count: usize) -> Self {
        Self {
            input_size: [32, 32],
            class_count,
            backbone_a: BackboneSpec::VggStyle {
                blocks: vec![VggBlock { convs: 2, channels: 8 }, VggBlock { convs: 2, channels: 16 }],
            },
            backbone_b: BackboneSpec::InceptionStyle {
                stem_channels: 16,
                widths: InceptionWidths::from_array([8, 8, 16, 4, 8, 8]),
                block_count: 1,
            },
            head: vec![64, class_count],
            dropout_rate: 0.5,
            freeze: Vec::new(),
        }
    }

    /// Width of the concatenated feature vector entering the head.
    pub fn fused_width(&self) -> usize {
        self.backbone_a.out_channels() + self.backbone_b.out_channels()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |field: &str, msg: String| {
            Err(ModelError::InvalidSpec {
                field: field.to_string(),
                msg,
            })
        };
        let [h, w] = self.input_size;
        if h == 0 || w == 0 {
            return bad("input_size", "dimensions must be positive".into());
        }
        if self.class_count < 2 {
            return bad(
                "class_count",
                format!("need at least 2 classes, got {}", self.class_count),
            );
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate", format!("{} outside [0, 1)", self.dropout_rate));
        }
        match self.head.last() {
            None => return Err(ModelError::EmptyHead),
            Some(&k) if k != self.class_count => {
                return bad(
                    "head",
                    format!("final width {k} must equal class_count {}", self.class_count),
                )
            }
            _ => {}
        }
        if self.head.contains(&0) {
            return bad("head", "widths must be positive".into());
        }
        for p in &self.freeze {
            if let Err(e) = glob::Pattern::new(p) {
                return bad("freeze", format!("bad pattern `{p}`: {e}"));
            }
        }
        match &self.backbone_a {
            BackboneSpec::VggStyle { blocks } => {
                if blocks.is_empty() {
                    return bad("backbone_a.blocks", "need at least one block".into());
                }
                if blocks.iter().any(|b| b.convs == 0 || b.channels == 0) {
                    return bad("backbone_a.blocks", "conv counts and channels must be positive".into());
                }
                let div = 1usize << blocks.len();
                if h % div != 0 || w % div != 0 {
                    return Err(ModelError::IndivisibleInput {
                        size: self.input_size,
                        divisor: div,
                    });
                }
            }
            _ => return bad("backbone_a", "must be vgg_style".into()),
        }
        match &self.backbone_b {
            BackboneSpec::InceptionStyle {
                stem_channels,
                widths,
                block_count,
            } => {
                if *stem_channels == 0 {
                    return bad("backbone_b.stem_channels", "must be positive".into());
                }
                if *block_count > 0 && widths.as_array().contains(&0) {
                    return bad("backbone_b.widths", "all branch widths must be positive".into());
                }
                let (sh, sw) = (h / 2, w / 2);
                if *block_count > 0 && (sh < 5 || sw < 5) {
                    return Err(ModelError::SpatialTooSmall { size: [sh, sw], min: 5 });
                }
            }
            _ => return bad("backbone_b", "must be inception_style".into()),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_default_fused_width() {
        let spec = HybridSpec::desk(8);
        spec.validate().unwrap();
        assert_eq!(spec.fused_width(), 16 + (8 + 16 + 8 + 8));
    }

    #[test]
    fn validation_errors() {
        let mut s = HybridSpec::desk(8);
        s.input_size = [30, 32];
        assert!(matches!(s.validate(), Err(ModelError::IndivisibleInput { .. })));
        let mut s = HybridSpec::desk(8);
        s.head.clear();
        assert!(matches!(s.validate(), Err(ModelError::EmptyHead)));
        let mut s = HybridSpec::desk(8);
        s.head = vec![64, 7];
        assert!(s.validate().is_err());
        let mut s = HybridSpec::desk(8);
        s.input_size = [8, 8];
        assert!(matches!(s.validate(), Err(ModelError::SpatialTooSmall { .. })));
        let mut s = HybridSpec::desk(1);
        s.head = vec![1];
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = HybridSpec::desk(5);
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"family\":\"vgg_style\""));
        assert_eq!(serde_json::from_str::<HybridSpec>(&j).unwrap(), s);
    }
}
