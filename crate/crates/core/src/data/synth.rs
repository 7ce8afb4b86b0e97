//! Procedural PCB-like boards: textured solder-mask background with
//! class-coded rectangular components and exact boxes.

use image::{Rgb, RgbImage};
use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::geometry::{Annotation, BBox};

use super::records::{BoardRecord, Role};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub width: usize,
    pub height: usize,
    pub min_components: usize,
    pub max_components: usize,
    /// Side length range of a component's longer edge.
    pub min_size: usize,
    pub max_size: usize,
    /// Frequency of the most common class over the rarest; classes in between
    /// are spaced geometrically.
    pub imbalance_ratio: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 3,
            width: 256,
            height: 128,
            min_components: 3,
            max_components: 7,
            min_size: 24,
            max_size: 52,
            imbalance_ratio: 10.0,
        }
    }
}

/// Body colour, marking colour and aspect range (long/short side) per class.
const LOOKS: [([u8; 3], [u8; 3], (f64, f64)); 6] = [
    ([28, 28, 32], [190, 190, 200], (1.0, 1.6)),
    ([205, 145, 60], [110, 60, 20], (1.6, 2.6)),
    ([45, 75, 175], [235, 235, 235], (1.0, 1.3)),
    ([170, 40, 40], [240, 200, 200], (1.3, 2.0)),
    ([225, 225, 215], [40, 40, 40], (2.0, 3.0)),
    ([120, 60, 150], [220, 220, 120], (1.0, 1.5)),
];

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width.min(self.height) < 64 {
            return Err(config_err!("synthetic boards must be at least 64 px on each side, got {}x{}", self.width, self.height));
        }
        if self.num_classes == 0 || self.num_classes > LOOKS.len() {
            return Err(config_err!("synthetic num_classes must be in 1..={}, got {}", LOOKS.len(), self.num_classes));
        }
        if self.min_components > self.max_components || self.min_size < 4 || self.min_size > self.max_size {
            return Err(config_err!("synthetic component count and size ranges must be increasing (min size >= 4)"));
        }
        if self.max_size * 2 > self.width.min(self.height) {
            return Err(config_err!("synthetic max_size {} too large for a {}x{} board", self.max_size, self.width, self.height));
        }
        if !(self.imbalance_ratio >= 1.0) {
            return Err(config_err!("imbalance_ratio must be >= 1, got {}", self.imbalance_ratio));
        }
        Ok(())
    }

    /// Sampling weight of each class, largest first.
    pub fn class_weights(&self) -> Vec<f64> {
        let k = self.num_classes;
        if k == 1 {
            return vec![1.0];
        }
        (0..k).map(|i| self.imbalance_ratio.powf((k - 1 - i) as f64 / (k - 1) as f64)).collect()
    }
}

fn jitter(rng: &mut ChaCha8Rng, c: [u8; 3], amount: i32) -> Rgb<u8> {
    let n = rng.gen_range(-amount..=amount);
    Rgb(c.map(|v| (v as i32 + n).clamp(0, 255) as u8))
}

fn background(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    let mut img = RgbImage::from_fn(w, h, |_, _| jitter(rng, [30, 100, 52], 10));
    // copper traces
    for _ in 0..rng.gen_range(3..8) {
        let horizontal = rng.gen_bool(0.5);
        let thick = rng.gen_range(1..3);
        if horizontal {
            let y = rng.gen_range(0..h - thick);
            let (a, b) = (rng.gen_range(0..w / 2), rng.gen_range(w / 2..w));
            for yy in y..y + thick {
                for x in a..b {
                    img.put_pixel(x, yy, jitter(rng, [70, 150, 80], 8));
                }
            }
        } else {
            let x = rng.gen_range(0..w - thick);
            let (a, b) = (rng.gen_range(0..h / 2), rng.gen_range(h / 2..h));
            for y in a..b {
                for xx in x..x + thick {
                    img.put_pixel(xx, y, jitter(rng, [70, 150, 80], 8));
                }
            }
        }
    }
    img
}

fn draw_component(rng: &mut ChaCha8Rng, img: &mut RgbImage, b: &BBox, class: usize) {
    let (body, mark, _) = LOOKS[class];
    let (x0, y0, x1, y1) = (b.x_min as u32, b.y_min as u32, b.x_max as u32, b.y_max as u32);
    let (w, h) = (x1 - x0, y1 - y0);
    for y in y0..y1 {
        for x in x0..x1 {
            img.put_pixel(x, y, jitter(rng, body, 12));
        }
    }
    let long_x = w >= h;
    match class % 3 {
        // pin rows along the long edges
        0 => {
            for t in (1..if long_x { w } else { h }).step_by(4) {
                let (ax, ay, bx, by) = if long_x { (x0 + t, y0, x0 + t, y1 - 1) } else { (x0, y0 + t, x1 - 1, y0 + t) };
                img.put_pixel(ax, ay, jitter(rng, mark, 10));
                img.put_pixel(bx, by, jitter(rng, mark, 10));
            }
        }
        // band across the middle
        1 => {
            let (c, half) = if long_x { (x0 + w / 2, (w / 8).max(1)) } else { (y0 + h / 2, (h / 8).max(1)) };
            for t in c - half..c + half {
                for s in 0..if long_x { h } else { w } {
                    let (x, y) = if long_x { (t, y0 + s) } else { (x0 + s, t) };
                    img.put_pixel(x, y, jitter(rng, mark, 10));
                }
            }
        }
        // centred dot
        _ => {
            let (cx, cy, r) = (x0 + w / 2, y0 + h / 2, (w.min(h) / 5).max(1));
            for y in cy - r..cy + r {
                for x in cx - r..cx + r {
                    img.put_pixel(x, y, jitter(rng, mark, 10));
                }
            }
        }
    }
}

/// Renders one board; the record's image path is left empty and its role is train/val.
pub fn generate_synthetic_scene(spec: &SynthSpec, board_id: &str, seed: u64) -> Result<(BoardRecord, RgbImage)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width as u32, spec.height as u32);
    let mut img = background(&mut rng, w, h);
    let classes = WeightedIndex::new(spec.class_weights()).map_err(|e| config_err!("class weights: {e}"))?;
    let count = rng.gen_range(spec.min_components..=spec.max_components);
    let mut placed: Vec<Annotation> = Vec::with_capacity(count);
    for _ in 0..count {
        let class = classes.sample(&mut rng);
        let (lo, hi) = LOOKS[class].2;
        for _attempt in 0..50 {
            let long = rng.gen_range(spec.min_size..=spec.max_size) as f32;
            let short = (long / rng.gen_range(lo..=hi) as f32).round().max(4.0);
            let (bw, bh) = if rng.gen_bool(0.5) { (long, short) } else { (short, long) };
            let x = rng.gen_range(0..=(spec.width - bw as usize)) as f32;
            let y = rng.gen_range(0..=(spec.height - bh as usize)) as f32;
            let b = BBox::new(x, y, x + bw, y + bh);
            // keep a 2 px gap between components
            let grown = BBox::new(b.x_min - 2.0, b.y_min - 2.0, b.x_max + 2.0, b.y_max + 2.0);
            if placed.iter().all(|p| p.bbox.intersection_area(&grown) == 0.0) {
                draw_component(&mut rng, &mut img, &b, class);
                placed.push(Annotation::new(b, class));
                break;
            }
        }
    }
    let rec = BoardRecord {
        board_id: board_id.to_string(),
        image: Default::default(),
        width: spec.width,
        height: spec.height,
        annotations: placed,
        role: Role::TrainVal,
    };
    Ok((rec, img))
}
