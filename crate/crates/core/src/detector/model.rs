use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, StageOutputs};
use crate::error::{config_err, Result};
use crate::geometry::Annotation;
use crate::nn::ops::sigmoid;
use crate::nn::{Graph, NodeId, ParamStore, Real, Tensor};

use super::anchors::{generate_anchors, AnchorGrid};
use super::boxes::{decode, encode};
use super::config::DetectorConfig;
use super::fpn::{Fpn, Pyramid};
use super::head::Heads;
use super::loss::{focal_loss, smooth_l1};
use super::matching::{count_positive, match_anchors, AnchorLabel};
use super::nms::{nms, score_order, Detection};

/// One training image (`1 x 3 x S x S`, already normalised) with its boxes in input pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T: Real = f32> {
    pub image: Tensor<T>,
    pub annotations: Vec<Annotation>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub focal: f64,
    pub box_reg: f64,
    pub total: f64,
    pub n_positive: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DetectorOutput {
    pub stages: StageOutputs,
    pub pyramid: Pyramid,
    /// `n x 1 x anchors x classes` logits.
    pub cls: NodeId,
    /// `n x 1 x anchors x 4` box offsets.
    pub reg: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detector {
    pub cfg: DetectorConfig,
    pub backbone: Backbone,
    pub fpn: Fpn,
    pub heads: Heads,
}

impl Detector {
    pub fn new(cfg: &DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        let backbone = Backbone::new(&cfg.backbone)?;
        let fpn = Fpn::new(&cfg.fpn, cfg.backbone.channels())?;
        let heads = Heads::new(
            cfg.fpn.fpn_channels,
            cfg.head.subnet_depth,
            cfg.anchors.per_cell(),
            cfg.num_classes,
            cfg.head.prior_prob,
        );
        Ok(Detector { cfg: cfg.clone(), backbone, fpn, heads })
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.backbone.init(store, rng)?;
        self.fpn.init(store, rng)?;
        self.heads.init(store, rng)
    }

    /// Fresh parameters drawn from a seeded generator.
    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        self.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(store)
    }

    pub fn anchors(&self, h: usize, w: usize) -> Result<AnchorGrid> {
        generate_anchors(h, w, &self.cfg.pyramid_strides(), &self.cfg.anchors)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, image: NodeId) -> Result<DetectorOutput> {
        let s = g.shape(image);
        let max_stride = self.cfg.max_stride();
        if s.h() % max_stride != 0 || s.w() % max_stride != 0 {
            return Err(config_err!("image {}x{} not divisible by the largest pyramid stride {max_stride}", s.h(), s.w()));
        }
        let stages = self.backbone.forward(g, store, image)?;
        let pyramid = self.fpn.forward(g, store, &stages)?;
        let mut cls = Vec::with_capacity(pyramid.levels.len());
        let mut reg = Vec::with_capacity(pyramid.levels.len());
        for level in &pyramid.levels {
            let (c, r) = self.heads.forward(g, store, level.node)?;
            cls.push(c);
            reg.push(r);
        }
        let per_cell = self.cfg.anchors.per_cell();
        let cls = g.gather_anchors(&cls, per_cell)?;
        let reg = g.gather_anchors(&reg, per_cell)?;
        Ok(DetectorOutput { stages, pyramid, cls, reg })
    }

    /// Records focal plus smooth-L1 loss of one sample; returns the total node.
    pub fn loss<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, sample: &Sample<T>) -> Result<(NodeId, LossBreakdown)> {
        let s = sample.image.shape();
        if s.n() != 1 {
            return Err(config_err!("loss takes one image at a time, got batch of {}", s.n()));
        }
        let image = g.input(sample.image.clone());
        let out = self.forward(g, store, image)?;
        let anchors = self.anchors(s.h(), s.w())?;
        for a in &sample.annotations {
            a.bbox.validate()?;
            if a.class_id >= self.cfg.num_classes {
                return Err(config_err!("class id {} out of range for {} classes", a.class_id, self.cfg.num_classes));
            }
        }
        let gt_boxes: Vec<_> = sample.annotations.iter().map(|a| a.bbox).collect();
        let gt_classes: Vec<_> = sample.annotations.iter().map(|a| a.class_id).collect();
        let labels = match_anchors(&anchors.boxes, &gt_boxes, self.cfg.matching.pos_iou, self.cfg.matching.neg_iou)?;

        let logits: Vec<f64> = g.value(out.cls).data().iter().map(|v| v.as_f64()).collect();
        let lc = &self.cfg.loss;
        let (focal, focal_grad) = focal_loss(&logits, self.cfg.num_classes, &labels, &gt_classes, lc.focal_alpha, lc.focal_gamma)?;

        let mut targets = vec![[0.0; 4]; labels.len()];
        for (a, label) in labels.iter().enumerate() {
            if let AnchorLabel::Positive(gi) = *label {
                targets[a] = encode(&gt_boxes[gi], &anchors.boxes[a])?;
            }
        }
        let offsets: Vec<f64> = g.value(out.reg).data().iter().map(|v| v.as_f64()).collect();
        let (box_reg, box_grad) = smooth_l1(&offsets, &targets, &labels, lc.smooth_l1_beta)?;

        let f = g.scalar_loss(out.cls, T::lit(focal), focal_grad.into_iter().map(T::lit).collect())?;
        let b = g.scalar_loss(out.reg, T::lit(box_reg), box_grad.into_iter().map(T::lit).collect())?;
        let total = g.add(f, b)?;
        let breakdown = LossBreakdown { focal, box_reg, total: focal + box_reg, n_positive: count_positive(&labels) };
        Ok((total, breakdown))
    }

    /// Scores, decodes and suppresses predictions for every image in the batch.
    pub fn detect<T: Real>(&self, store: &ParamStore<T>, image: &Tensor<T>) -> Result<Vec<Vec<Detection>>> {
        let mut g = Graph::inference();
        let s = image.shape();
        let input = g.input(image.clone());
        let out = self.forward(&mut g, store, input)?;
        let anchors = self.anchors(s.h(), s.w())?;
        let k = self.cfg.num_classes;
        let inf = &self.cfg.inference;
        let cls = g.value(out.cls).data();
        let reg = g.value(out.reg).data();
        let total = anchors.len();
        let clip = Some((s.w() as f64, s.h() as f64));

        let mut results = Vec::with_capacity(s.n());
        for b in 0..s.n() {
            let mut cands = Vec::new();
            for (li, level) in anchors.levels.iter().enumerate() {
                let end = anchors.levels.get(li + 1).map_or(total, |l| l.offset);
                let mut level_cands: Vec<(usize, usize, f32)> = Vec::new();
                for a in level.offset..end {
                    for c in 0..k {
                        let p = sigmoid(cls[(b * total + a) * k + c].as_f64());
                        if p > inf.score_thresh {
                            level_cands.push((a, c, p as f32));
                        }
                    }
                }
                let order = score_order(level_cands.iter().map(|c| c.2));
                for &i in order.iter().take(inf.top_k_per_level) {
                    let (a, c, score) = level_cands[i];
                    let o = &reg[(b * total + a) * 4..][..4];
                    let offsets = [o[0].as_f64(), o[1].as_f64(), o[2].as_f64(), o[3].as_f64()];
                    let bbox = decode(offsets, &anchors.boxes[a], clip);
                    if bbox.is_valid() {
                        cands.push(Detection { bbox, class_id: c, score });
                    }
                }
            }
            results.push(nms(&cands, inf.nms_iou, inf.max_detections));
        }
        Ok(results)
    }

    /// Analytic parameter count of the pyramid and both sub-nets.
    pub fn head_and_fpn_params(&self) -> usize {
        self.fpn.param_count() + self.heads.param_count()
    }
}
