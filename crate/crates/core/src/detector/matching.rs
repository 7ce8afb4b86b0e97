use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, BBox};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    /// Matched to the ground truth at this index.
    Positive(usize),
    Negative,
    Ignore,
}

/// Assigns every anchor a training label.
///
/// Anchors with best IoU `>= pos_thresh` go positive to their best ground
/// truth (ties to the lower index), below `neg_thresh` negative, otherwise
/// ignored. Each ground truth then claims its own best anchor (ties to the
/// lower anchor index, later ground truths win) so none stays unmatched;
/// boxes overlapping no anchor at all are left unmatched.
pub fn match_anchors(anchors: &[BBox], gts: &[BBox], pos_thresh: f64, neg_thresh: f64) -> Result<Vec<AnchorLabel>> {
    if anchors.is_empty() {
        return Err(Error::Contract("match_anchors needs at least one anchor".into()));
    }
    if pos_thresh < neg_thresh {
        return Err(Error::Contract(format!("pos_thresh {pos_thresh} < neg_thresh {neg_thresh}")));
    }
    let mut best_anchor = vec![(0.0f64, 0usize); gts.len()];
    let mut labels = Vec::with_capacity(anchors.len());
    for (ai, a) in anchors.iter().enumerate() {
        let mut best = (0.0f64, usize::MAX);
        for (gi, g) in gts.iter().enumerate() {
            let v = iou_unchecked(a, g);
            if v > best.0 || best.1 == usize::MAX {
                best = (v, gi);
            }
            if v > best_anchor[gi].0 {
                best_anchor[gi] = (v, ai);
            }
        }
        labels.push(if best.1 != usize::MAX && best.0 >= pos_thresh {
            AnchorLabel::Positive(best.1)
        } else if best.1 == usize::MAX || best.0 < neg_thresh {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        });
    }
    for (gi, &(v, ai)) in best_anchor.iter().enumerate() {
        if v > 0.0 {
            labels[ai] = AnchorLabel::Positive(gi);
        }
    }
    Ok(labels)
}

pub fn count_positive(labels: &[AnchorLabel]) -> usize {
    labels.iter().filter(|l| matches!(l, AnchorLabel::Positive(_))).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_and_disjoint() {
        let anchors = [BBox::new(0.0, 0.0, 10.0, 10.0), BBox::new(50.0, 50.0, 60.0, 60.0), BBox::new(0.0, 0.0, 10.0, 14.0)];
        let gts = [BBox::new(0.0, 0.0, 10.0, 10.0)];
        let l = match_anchors(&anchors, &gts, 0.5, 0.4).unwrap();
        assert_eq!(l, vec![AnchorLabel::Positive(0), AnchorLabel::Negative, AnchorLabel::Positive(0)]);
        let l = match_anchors(&anchors, &[], 0.5, 0.4).unwrap();
        assert!(l.iter().all(|&x| x == AnchorLabel::Negative));
        assert!(match_anchors(&[], &gts, 0.5, 0.4).is_err());
    }

    #[test]
    fn forced_match_for_small_box() {
        let anchors = [BBox::new(0.0, 0.0, 32.0, 32.0), BBox::new(32.0, 0.0, 64.0, 32.0)];
        let gts = [BBox::new(36.0, 4.0, 46.0, 14.0)];
        let l = match_anchors(&anchors, &gts, 0.5, 0.4).unwrap();
        assert_eq!(l, vec![AnchorLabel::Negative, AnchorLabel::Positive(0)]);
    }

    /// Builds the full IoU matrix first and labels from it.
    fn oracle(anchors: &[BBox], gts: &[BBox], pos: f64, neg: f64) -> Vec<AnchorLabel> {
        let m: Vec<Vec<f64>> = anchors.iter().map(|a| gts.iter().map(|g| iou_unchecked(a, g)).collect()).collect();
        let mut labels: Vec<AnchorLabel> = m
            .iter()
            .map(|row| {
                let Some(max) = row.iter().cloned().reduce(f64::max) else { return AnchorLabel::Negative };
                let gi = row.iter().position(|&v| v == max).unwrap();
                if max >= pos {
                    AnchorLabel::Positive(gi)
                } else if max < neg {
                    AnchorLabel::Negative
                } else {
                    AnchorLabel::Ignore
                }
            })
            .collect();
        for gi in 0..gts.len() {
            let col: Vec<f64> = m.iter().map(|r| r[gi]).collect();
            let max = col.iter().cloned().fold(0.0, f64::max);
            if max > 0.0 {
                labels[col.iter().position(|&v| v == max).unwrap()] = AnchorLabel::Positive(gi);
            }
        }
        labels
    }

    #[test]
    fn matches_iou_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rbox = |rng: &mut ChaCha8Rng| {
            let (x, y) = (rng.gen_range(0.0..60.0f32), rng.gen_range(0.0..60.0f32));
            // coarse grid so exact ties actually happen
            let (w, h) = (rng.gen_range(1..8) as f32 * 4.0, rng.gen_range(1..8) as f32 * 4.0);
            BBox::new(x.round(), y.round(), x.round() + w, y.round() + h)
        };
        for _ in 0..300 {
            let anchors: Vec<_> = (0..rng.gen_range(1..40)).map(|_| rbox(&mut rng)).collect();
            let gts: Vec<_> = (0..rng.gen_range(0..6)).map(|_| rbox(&mut rng)).collect();
            assert_eq!(match_anchors(&anchors, &gts, 0.5, 0.4).unwrap(), oracle(&anchors, &gts, 0.5, 0.4));
        }
    }
}
