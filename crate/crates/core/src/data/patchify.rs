use crate::error::{config_err, Result};
use crate::geometry::Annotation;

use super::records::{BoardRecord, PatchRecord};

/// Patch origins along one axis: multiples of `stride`, with the last one
/// moved inward so the final patch ends exactly at `len`.
pub fn patch_origins(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o + patch <= len).collect();
    let last = len - patch;
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Annotations of `anns` clipped to the square at `(x0, y0)`, in patch
/// coordinates. Boxes keeping less than `min_area_frac` of their area are dropped.
pub fn clip_annotations(anns: &[Annotation], x0: usize, y0: usize, size: usize, min_area_frac: f64) -> Vec<Annotation> {
    let (fx, fy, s) = (x0 as f32, y0 as f32, size as f32);
    anns.iter()
        .filter_map(|a| {
            let clipped = a.bbox.clip(fx, fy, fx + s, fy + s)?;
            if clipped.area() < min_area_frac * a.bbox.area() {
                return None;
            }
            Some(Annotation::new(clipped.translate(-fx, -fy), a.class_id))
        })
        .collect()
}

/// Tiles a board into square patches, row by row.
pub fn patchify_board(board: &BoardRecord, patch_size: usize, stride: usize, min_box_area_frac: f64) -> Result<Vec<PatchRecord>> {
    if patch_size == 0 || patch_size > board.width.min(board.height) {
        return Err(config_err!(
            "patch size {patch_size} does not fit board {} ({}x{})",
            board.board_id,
            board.width,
            board.height
        ));
    }
    if stride == 0 || stride > patch_size {
        return Err(config_err!("patch stride {stride} must be in 1..={patch_size} so patches cover the board"));
    }
    let xs = patch_origins(board.width, patch_size, stride);
    let ys = patch_origins(board.height, patch_size, stride);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y0 in &ys {
        for &x0 in &xs {
            out.push(PatchRecord {
                patch_id: format!("{}_{x0}_{y0}", board.board_id),
                board_id: board.board_id.clone(),
                x0,
                y0,
                size: patch_size,
                annotations: clip_annotations(&board.annotations, x0, y0, patch_size, min_box_area_frac),
            });
        }
    }
    Ok(out)
}
