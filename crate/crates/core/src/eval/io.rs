use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ap::{GroundTruth, Prediction};
use crate::data::records::{read_lines, write_lines};
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// One line of the prediction / ground-truth interchange format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxLine {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: [f32; 4],
    pub class_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f32>,
}

fn to_bbox(b: [f32; 4]) -> BBox {
    BBox::new(b[0], b[1], b[2], b[3])
}

fn from_bbox(b: &BBox) -> [f32; 4] {
    [b.x_min, b.y_min, b.x_max, b.y_max]
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    write_lines(
        path,
        preds.iter().map(|p| BoxLine { image_id: p.image_id.clone(), bbox: from_bbox(&p.bbox), class_id: p.class_id, score: Some(p.score) }),
    )
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let lines: Vec<BoxLine> = read_lines(path)?;
    lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let score = l.score.ok_or_else(|| Error::format(path, format!("line {}: prediction without score", i + 1)))?;
            Ok(Prediction { image_id: l.image_id, bbox: to_bbox(l.bbox), class_id: l.class_id, score })
        })
        .collect()
}

pub fn write_ground_truth(path: &Path, gts: &[GroundTruth]) -> Result<()> {
    write_lines(
        path,
        gts.iter().map(|g| BoxLine { image_id: g.image_id.clone(), bbox: from_bbox(&g.bbox), class_id: g.class_id, score: None }),
    )
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let lines: Vec<BoxLine> = read_lines(path)?;
    Ok(lines.into_iter().map(|l| GroundTruth { image_id: l.image_id, bbox: to_bbox(l.bbox), class_id: l.class_id }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let preds = vec![Prediction { image_id: "p0".into(), bbox: BBox::new(1.0, 2.0, 3.5, 4.25), class_id: 2, score: 0.75 }];
        let gts = vec![GroundTruth { image_id: "p0".into(), bbox: BBox::new(0.0, 0.0, 8.0, 8.0), class_id: 1 }];
        let pp = dir.path().join("pred.jsonl");
        let gp = dir.path().join("gt.jsonl");
        write_predictions(&pp, &preds).unwrap();
        write_ground_truth(&gp, &gts).unwrap();
        assert_eq!(read_predictions(&pp).unwrap(), preds);
        assert_eq!(read_ground_truth(&gp).unwrap(), gts);
        assert!(read_predictions(&gp).is_err());
        let text = std::fs::read_to_string(&pp).unwrap();
        assert!(text.contains("\"box\":[1.0,2.0,3.5,4.25]"), "{text}");
    }
}
