use crate::error::{config_err, Result};
use crate::geometry::BBox;

use super::config::AnchorConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorLevel {
    pub stride: usize,
    pub base_size: f64,
    pub h: usize,
    pub w: usize,
    /// Index of the level's first anchor in [`AnchorGrid::boxes`].
    pub offset: usize,
}

/// Reference boxes of every pyramid level, ordered level-major, then
/// row-major over cells, then scale, then aspect ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorGrid {
    pub levels: Vec<AnchorLevel>,
    pub per_cell: usize,
    pub boxes: Vec<BBox>,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Level index owning anchor `i`.
    pub fn level_of(&self, i: usize) -> usize {
        self.levels.iter().rposition(|l| l.offset <= i).unwrap_or(0)
    }
}

pub fn generate_anchors(image_h: usize, image_w: usize, strides: &[usize], cfg: &AnchorConfig) -> Result<AnchorGrid> {
    let per_cell = cfg.per_cell();
    let mut levels = Vec::with_capacity(strides.len());
    let mut boxes = Vec::new();
    for &stride in strides {
        if stride == 0 || image_h % stride != 0 || image_w % stride != 0 {
            return Err(config_err!("image {image_h}x{image_w} is not divisible by anchor stride {stride}"));
        }
        let (h, w) = (image_h / stride, image_w / stride);
        let base_size = cfg.size_per_stride * stride as f64;
        levels.push(AnchorLevel { stride, base_size, h, w, offset: boxes.len() });
        for y in 0..h {
            for x in 0..w {
                let cx = (x as f64 + 0.5) * stride as f64;
                let cy = (y as f64 + 0.5) * stride as f64;
                for &scale in &cfg.scales {
                    for &ratio in &cfg.aspect_ratios {
                        let side = base_size * scale;
                        let r = ratio.sqrt();
                        boxes.push(BBox::from_center(cx, cy, side / r, side * r));
                    }
                }
            }
        }
    }
    Ok(AnchorGrid { levels, per_cell, boxes })
}
