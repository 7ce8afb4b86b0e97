//! Anchor-relative box parameterisation.

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Upper bound on `dw`/`dh` before exponentiation.
pub fn max_log_scale() -> f64 {
    (1000.0f64 / 16.0).ln()
}

fn center_size(b: &BBox) -> (f64, f64, f64, f64) {
    let w = b.x_max as f64 - b.x_min as f64;
    let h = b.y_max as f64 - b.y_min as f64;
    (b.x_min as f64 + 0.5 * w, b.y_min as f64 + 0.5 * h, w, h)
}

/// Offsets `(dx, dy, dw, dh)` of `gt` relative to `anchor`.
pub fn encode(gt: &BBox, anchor: &BBox) -> Result<[f64; 4]> {
    let (gx, gy, gw, gh) = center_size(gt);
    let (ax, ay, aw, ah) = center_size(anchor);
    if !(gw > 0.0 && gh > 0.0 && aw > 0.0 && ah > 0.0) {
        return Err(Error::Contract(format!("encode needs positive sizes, got gt {gt:?} anchor {anchor:?}")));
    }
    Ok([(gx - ax) / aw, (gy - ay) / ah, (gw / aw).ln(), (gh / ah).ln()])
}

/// Inverse of [`encode`]. With `clip_to = Some((w, h))` the result is clipped
/// to the image and may come back degenerate; callers discard such boxes.
pub fn decode(offsets: [f64; 4], anchor: &BBox, clip_to: Option<(f64, f64)>) -> BBox {
    let (ax, ay, aw, ah) = center_size(anchor);
    let cap = max_log_scale();
    let [dx, dy, dw, dh] = offsets;
    let cx = ax + dx * aw;
    let cy = ay + dy * ah;
    let w = aw * dw.min(cap).exp();
    let h = ah * dh.min(cap).exp();
    let (mut x0, mut y0, mut x1, mut y1) = (cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h);
    if let Some((iw, ih)) = clip_to {
        x0 = x0.clamp(0.0, iw);
        x1 = x1.clamp(0.0, iw);
        y0 = y0.clamp(0.0, ih);
        y1 = y1.clamp(0.0, ih);
    }
    BBox::new(x0 as f32, y0 as f32, x1 as f32, y1 as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_width_doubling() {
        let a = BBox::new(10.0, 10.0, 30.0, 50.0);
        assert_eq!(encode(&a, &a).unwrap(), [0.0, 0.0, 0.0, 0.0]);
        let g = BBox::new(0.0, 10.0, 40.0, 50.0);
        let o = encode(&g, &a).unwrap();
        assert_eq!(o[..2], [0.0, 0.0]);
        assert!((o[2] - 2f64.ln()).abs() < 1e-12);
        assert_eq!(o[3], 0.0);
        assert_eq!(decode([0.0; 4], &a, None), a);
    }

    #[test]
    fn clamps_huge_scale() {
        let a = BBox::new(0.0, 0.0, 16.0, 16.0);
        let b = decode([0.0, 0.0, 50.0, 0.0], &a, None);
        assert!((b.width() as f64 - 1000.0).abs() < 1e-3);
        assert!(decode([0.0, 0.0, 50.0, 0.0], &a, Some((64.0, 64.0))).x_max <= 64.0);
    }

    #[test]
    fn rejects_degenerate() {
        let a = BBox::new(0.0, 0.0, 16.0, 16.0);
        assert!(encode(&BBox::new(1.0, 1.0, 1.0, 4.0), &a).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0f32..100.0, 0.0f32..100.0, 1.0f32..60.0, 1.0f32..60.0).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn roundtrip(g in arb_box(), a in arb_box()) {
            let back = decode(encode(&g, &a).unwrap(), &a, None);
            for (p, q) in [(back.x_min, g.x_min), (back.y_min, g.y_min), (back.x_max, g.x_max), (back.y_max, g.y_max)] {
                prop_assert!((p - q).abs() <= 1e-5 * q.abs().max(1.0), "{back:?} vs {g:?}");
            }
        }
    }
}
