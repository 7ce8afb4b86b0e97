//! Axis-aligned boxes in pixel coordinates (origin top-left, half-open).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
}

impl BBox {
    pub const fn new(x_min: f32, y_min: f32, x_max: f32, y_max: f32) -> Self {
        BBox { x_min, y_min, x_max, y_max }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new((cx - 0.5 * w) as f32, (cy - 0.5 * h) as f32, (cx + 0.5 * w) as f32, (cy + 0.5 * h) as f32)
    }

    pub fn width(&self) -> f32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        (self.x_max as f64 - self.x_min as f64).max(0.0) * (self.y_max as f64 - self.y_min as f64).max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min as f64 + self.x_max as f64), 0.5 * (self.y_min as f64 + self.y_max as f64))
    }

    /// Positive width and height, all coordinates finite.
    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Contract(format!("degenerate box {self:?}")))
        }
    }

    pub fn translate(&self, dx: f32, dy: f32) -> Self {
        BBox::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    pub fn scale(&self, sx: f32, sy: f32) -> Self {
        BBox::new(self.x_min * sx, self.y_min * sy, self.x_max * sx, self.y_max * sy)
    }

    /// Intersection with `[x0, x1) x [y0, y1)`; `None` when empty.
    pub fn clip(&self, x0: f32, y0: f32, x1: f32, y1: f32) -> Option<Self> {
        let b = BBox::new(self.x_min.max(x0), self.y_min.max(y0), self.x_max.min(x1), self.y_max.min(y1));
        b.is_valid().then_some(b)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) as f64 - self.x_min.max(other.x_min) as f64).max(0.0);
        let h = (self.y_max.min(other.y_max) as f64 - self.y_min.max(other.y_min) as f64).max(0.0);
        w * h
    }
}

/// Intersection over union without validity checks (0 for empty unions).
#[inline]
pub fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Intersection over union in `[0, 1]`; degenerate boxes are a contract error.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(iou_unchecked(a, b))
}

/// Ground-truth (or predicted) box with its class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub bbox: BBox,
    pub class_id: usize,
}

impl Annotation {
    pub fn new(bbox: BBox, class_id: usize) -> Self {
        Annotation { bbox, class_id }
    }
}
