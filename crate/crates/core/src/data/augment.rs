use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::geometry::{Annotation, BBox};

/// Probabilities and ranges of the training-time augmentations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    pub translate_prob: f64,
    /// Largest shift as a fraction of the patch side.
    pub translate_max_frac: f64,
    pub color_prob: f64,
    /// Per-channel multiplier range.
    pub channel_scale: (f64, f64),
    /// Blend-toward-grayscale weight range.
    pub desaturate: (f64, f64),
    pub cutout_prob: f64,
    pub cutout_count: (usize, usize),
    /// Cutout side as a fraction of the patch side.
    pub cutout_size_frac: (f64, f64),
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            translate_prob: 0.5,
            translate_max_frac: 0.1,
            color_prob: 0.5,
            channel_scale: (0.8, 1.2),
            desaturate: (0.0, 0.5),
            cutout_prob: 0.3,
            cutout_count: (1, 2),
            cutout_size_frac: (0.05, 0.15),
        }
    }
}

impl AugmentationPolicy {
    /// Every probability zero.
    pub fn identity() -> Self {
        AugmentationPolicy { hflip_prob: 0.0, vflip_prob: 0.0, translate_prob: 0.0, color_prob: 0.0, cutout_prob: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("hflip_prob", self.hflip_prob),
            ("vflip_prob", self.vflip_prob),
            ("translate_prob", self.translate_prob),
            ("color_prob", self.color_prob),
            ("cutout_prob", self.cutout_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err!("augment.{name} must be in [0, 1], got {p}"));
            }
        }
        if !(0.0..=0.25).contains(&self.translate_max_frac) {
            return Err(config_err!("augment.translate_max_frac must be in [0, 0.25], got {}", self.translate_max_frac));
        }
        let ranges = [("channel_scale", self.channel_scale), ("desaturate", self.desaturate), ("cutout_size_frac", self.cutout_size_frac)];
        for (name, (lo, hi)) in ranges {
            if !(lo <= hi && lo >= 0.0) {
                return Err(config_err!("augment.{name} must be an increasing non-negative range, got ({lo}, {hi})"));
            }
        }
        if self.desaturate.1 > 1.0 || self.cutout_size_frac.1 > 1.0 {
            return Err(config_err!("augment.desaturate and augment.cutout_size_frac must stay within [0, 1]"));
        }
        if self.cutout_count.0 > self.cutout_count.1 {
            return Err(config_err!("augment.cutout_count must be an increasing range"));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

pub fn hflip(img: &RgbImage, anns: &[Annotation]) -> (RgbImage, Vec<Annotation>) {
    let w = img.width() as f32;
    let out = image::imageops::flip_horizontal(img);
    let anns = anns
        .iter()
        .map(|a| Annotation::new(BBox::new(w - a.bbox.x_max, a.bbox.y_min, w - a.bbox.x_min, a.bbox.y_max), a.class_id))
        .collect();
    (out, anns)
}

pub fn vflip(img: &RgbImage, anns: &[Annotation]) -> (RgbImage, Vec<Annotation>) {
    let h = img.height() as f32;
    let out = image::imageops::flip_vertical(img);
    let anns = anns
        .iter()
        .map(|a| Annotation::new(BBox::new(a.bbox.x_min, h - a.bbox.y_max, a.bbox.x_max, h - a.bbox.y_min), a.class_id))
        .collect();
    (out, anns)
}

/// Shifts content by `(dx, dy)` pixels with zero fill; boxes are shifted,
/// clipped and dropped once nothing of them remains.
pub fn translate(img: &RgbImage, anns: &[Annotation], dx: i64, dy: i64) -> (RgbImage, Vec<Annotation>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut out = RgbImage::new(img.width(), img.height());
    for y in 0..h {
        let sy = y - dy;
        if !(0..h).contains(&sy) {
            continue;
        }
        for x in 0..w {
            let sx = x - dx;
            if (0..w).contains(&sx) {
                out.put_pixel(x as u32, y as u32, *img.get_pixel(sx as u32, sy as u32));
            }
        }
    }
    let anns = anns
        .iter()
        .filter_map(|a| {
            let b = a.bbox.translate(dx as f32, dy as f32).clip(0.0, 0.0, w as f32, h as f32)?;
            Some(Annotation::new(b, a.class_id))
        })
        .collect();
    (out, anns)
}

/// Scales each channel and blends toward luma.
pub fn degrade_color(img: &mut RgbImage, scale: [f64; 3], desat: f64) {
    for p in img.pixels_mut() {
        let v = [p[0] as f64 * scale[0], p[1] as f64 * scale[1], p[2] as f64 * scale[2]];
        let gray = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
        for c in 0..3 {
            p[c] = ((1.0 - desat) * v[c] + desat * gray).round().clamp(0.0, 255.0) as u8;
        }
    }
}

pub fn cutout(img: &mut RgbImage, x0: u32, y0: u32, side: u32) {
    for y in y0..(y0 + side).min(img.height()) {
        for x in x0..(x0 + side).min(img.width()) {
            img.put_pixel(x, y, Rgb([0, 0, 0]));
        }
    }
}

/// Applies the policy with randomness drawn only from `rng`.
pub fn augment<R: Rng + ?Sized>(img: &RgbImage, anns: &[Annotation], policy: &AugmentationPolicy, rng: &mut R) -> (RgbImage, Vec<Annotation>) {
    let mut img = img.clone();
    let mut anns = anns.to_vec();
    if rng.gen_bool(policy.hflip_prob) {
        (img, anns) = hflip(&img, &anns);
    }
    if rng.gen_bool(policy.vflip_prob) {
        (img, anns) = vflip(&img, &anns);
    }
    if rng.gen_bool(policy.translate_prob) {
        let max_x = (policy.translate_max_frac * img.width() as f64).floor() as i64;
        let max_y = (policy.translate_max_frac * img.height() as f64).floor() as i64;
        let dx = rng.gen_range(-max_x..=max_x);
        let dy = rng.gen_range(-max_y..=max_y);
        (img, anns) = translate(&img, &anns, dx, dy);
    }
    if rng.gen_bool(policy.color_prob) {
        let scale = [uniform(rng, policy.channel_scale), uniform(rng, policy.channel_scale), uniform(rng, policy.channel_scale)];
        let desat = uniform(rng, policy.desaturate);
        degrade_color(&mut img, scale, desat);
    }
    if rng.gen_bool(policy.cutout_prob) {
        let n = rng.gen_range(policy.cutout_count.0..=policy.cutout_count.1);
        let side_ref = img.width().min(img.height()) as f64;
        for _ in 0..n {
            let side = ((uniform(rng, policy.cutout_size_frac) * side_ref).round() as u32).max(1);
            let x0 = rng.gen_range(0..img.width());
            let y0 = rng.gen_range(0..img.height());
            cutout(&mut img, x0, y0, side);
        }
    }
    (img, anns)
}
