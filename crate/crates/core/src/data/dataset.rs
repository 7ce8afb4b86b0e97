//! On-disk dataset layout, image I/O and conversion to network input.
//!
//! ```text
//! <root>/annotations.jsonl   board records
//! <root>/boards/<id>.png     (synthetic sets only)
//! <root>/patches.jsonl       patch records
//! <root>/patches/<id>.png
//! <root>/split.json          patch -> train | val | test
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::Sample;
use crate::error::{config_err, Error, Result};
use crate::geometry::{Annotation, BBox};
use crate::nn::{Shape, Tensor};
use crate::par::Exec;

use super::patchify::patchify_board;
use super::sample_rng;
use super::records::{read_boards, read_patches, write_boards, write_patches, BoardRecord, PatchRecord, Role, Split};
use super::split::{split_dataset, SplitManifest};
use super::synth::{generate_synthetic_scene, SynthSpec};

pub const ANNOTATIONS: &str = "annotations.jsonl";
pub const PATCHES: &str = "patches.jsonl";
pub const SPLIT: &str = "split.json";

/// Per-channel normalisation applied to `[0, 1]` pixel values.
pub const PIXEL_MEAN: f32 = 0.5;
pub const PIXEL_STD: f32 = 0.25;

pub fn load_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    Ok(img.to_rgb8())
}

pub fn save_image(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub fn crop_patch(board: &RgbImage, p: &PatchRecord) -> RgbImage {
    imageops::crop_imm(board, p.x0 as u32, p.y0 as u32, p.size as u32, p.size as u32).to_image()
}

/// Resizes to `size x size` (when needed) and normalises into a `1 x 3 x size x size`
/// tensor; boxes are scaled along.
pub fn to_sample(img: &RgbImage, anns: &[Annotation], size: usize) -> Sample<f32> {
    let (w, h) = img.dimensions();
    let resized;
    let src = if (w as usize, h as usize) == (size, size) {
        img
    } else {
        resized = imageops::resize(img, size as u32, size as u32, FilterType::Triangle);
        &resized
    };
    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, p) in src.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = (p[c] as f32 / 255.0 - PIXEL_MEAN) / PIXEL_STD;
        }
    }
    let (sx, sy) = (size as f32 / w as f32, size as f32 / h as f32);
    let annotations = anns
        .iter()
        .filter_map(|a| {
            let b = a.bbox.scale(sx, sy);
            b.is_valid().then_some(Annotation::new(b, a.class_id))
        })
        .collect();
    let image = Tensor::from_vec(Shape::new(1, 3, size, size), data).expect("length matches shape");
    Sample { image, annotations }
}

/// Maps boxes predicted on the network input back to the original image size.
pub fn rescale_box(b: &BBox, input_size: usize, width: usize, height: usize) -> BBox {
    b.scale(width as f32 / input_size as f32, height as f32 / input_size as f32)
}

/// A patch with its pixels held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedPatch {
    pub record: PatchRecord,
    pub image: RgbImage,
}

/// Boards, patches and split of a prepared dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDataset {
    pub root: PathBuf,
    pub boards: Vec<BoardRecord>,
    pub patches: Vec<PatchRecord>,
    pub manifest: SplitManifest,
}

impl PreparedDataset {
    pub fn open(root: &Path) -> Result<Self> {
        Ok(PreparedDataset {
            root: root.to_path_buf(),
            boards: read_boards(&root.join(ANNOTATIONS))?,
            patches: read_patches(&root.join(PATCHES))?,
            manifest: SplitManifest::load(&root.join(SPLIT))?,
        })
    }

    pub fn patch_image_path(&self, patch_id: &str) -> PathBuf {
        self.root.join("patches").join(format!("{patch_id}.png"))
    }

    /// Patches of one split, in manifest order.
    pub fn load_split(&self, split: Split, exec: Exec) -> Result<Vec<LoadedPatch>> {
        let by_id: HashMap<&str, &PatchRecord> = self.patches.iter().map(|p| (p.patch_id.as_str(), p)).collect();
        let records: Vec<PatchRecord> = self
            .manifest
            .ids(split)
            .map(|id| by_id.get(id).map(|p| (*p).clone()).ok_or_else(|| config_err!("split lists unknown patch {id}")))
            .collect::<Result<_>>()?;
        exec.try_map(&records, |_, r| Ok(LoadedPatch { image: load_image(&self.patch_image_path(&r.patch_id))?, record: r.clone() }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchOptions {
    pub patch_size: usize,
    pub stride: usize,
    pub min_box_area_frac: f64,
    pub val_frac: f64,
}

impl Default for PatchOptions {
    fn default() -> Self {
        PatchOptions { patch_size: 512, stride: 512, min_box_area_frac: 0.25, val_frac: 0.125 }
    }
}

/// Patchifies every non-excluded board, writes patch images, records and
/// the split under `out`. Board images are loaded through `image_of`.
fn write_patch_set(
    boards: &[BoardRecord],
    image_of: &dyn Fn(usize) -> Result<RgbImage>,
    opts: &PatchOptions,
    seed: u64,
    out: &Path,
) -> Result<PreparedDataset> {
    let mut patches = Vec::new();
    for (i, b) in boards.iter().enumerate() {
        if b.role == Role::Excluded {
            continue;
        }
        let ps = patchify_board(b, opts.patch_size, opts.stride, opts.min_box_area_frac)?;
        let img = image_of(i)?;
        if img.dimensions() != (b.width as u32, b.height as u32) {
            return Err(Error::format(&b.image, format!("image is {:?}, annotations say {}x{}", img.dimensions(), b.width, b.height)));
        }
        for p in &ps {
            save_image(&crop_patch(&img, p), &out.join("patches").join(format!("{}.png", p.patch_id)))?;
        }
        patches.extend(ps);
    }
    let manifest = split_dataset(boards, &patches, opts.val_frac, seed)?;
    write_patches(&out.join(PATCHES), &patches)?;
    manifest.save(&out.join(SPLIT))?;
    Ok(PreparedDataset { root: out.to_path_buf(), boards: boards.to_vec(), patches, manifest })
}

/// Patchifies an existing annotated board set into `out`. With `boards_dir`,
/// board images are looked up there by file name instead of at the paths
/// recorded in the annotations.
pub fn prepare_from_annotations(annotations: &Path, boards_dir: Option<&Path>, opts: &PatchOptions, seed: u64, out: &Path) -> Result<PreparedDataset> {
    let mut boards = read_boards(annotations)?;
    if let Some(dir) = boards_dir {
        for b in &mut boards {
            let name = b.image.file_name().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(format!("{}.png", b.board_id)));
            b.image = dir.join(name);
        }
    }
    if boards.is_empty() {
        return Err(Error::format(annotations, "no board records"));
    }
    let ds = write_patch_set(&boards, &|i| load_image(&boards[i].image), opts, seed, out)?;
    write_boards(&out.join(ANNOTATIONS), &boards)?;
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetSpec {
    pub board: SynthSpec,
    pub train_val_boards: usize,
    pub test_boards: usize,
    pub patches: PatchOptions,
}

impl Default for SyntheticDatasetSpec {
    /// 125 train/val boards of 256x128 yield 250 patches of 128 px, split 200/50.
    fn default() -> Self {
        SyntheticDatasetSpec {
            board: SynthSpec::default(),
            train_val_boards: 125,
            test_boards: 15,
            patches: PatchOptions { patch_size: 128, stride: 128, min_box_area_frac: 0.25, val_frac: 0.2 },
        }
    }
}

/// Renders every board of the synthetic set; board `i` uses seed stream `i`.
pub fn synthesize_boards(spec: &SyntheticDatasetSpec, seed: u64, exec: Exec) -> Result<Vec<(BoardRecord, RgbImage)>> {
    let n = spec.train_val_boards + spec.test_boards;
    let ids: Vec<usize> = (0..n).collect();
    let mut out = exec.try_map(&ids, |_, &i| {
        let board_seed = sample_rng(seed, i as u64).gen();
        generate_synthetic_scene(&spec.board, &format!("board{i:04}"), board_seed)
    })?;
    for (rec, _) in out.iter_mut().skip(spec.train_val_boards) {
        rec.role = Role::Test;
    }
    Ok(out)
}

/// Writes a full synthetic dataset (boards, annotations, patches, split) under `out`.
pub fn generate_dataset(spec: &SyntheticDatasetSpec, seed: u64, out: &Path, exec: Exec) -> Result<PreparedDataset> {
    let rendered = synthesize_boards(spec, seed, exec)?;
    let mut boards = Vec::with_capacity(rendered.len());
    for (mut rec, img) in rendered.iter().cloned() {
        rec.image = out.join("boards").join(format!("{}.png", rec.board_id));
        save_image(&img, &rec.image)?;
        boards.push(rec);
    }
    write_boards(&out.join(ANNOTATIONS), &boards)?;
    write_patch_set(&boards, &|i| Ok(rendered[i].1.clone()), &spec.patches, seed, out)
}

/// The same patches [`generate_dataset`] would write, kept in memory.
pub fn synthesize_in_memory(spec: &SyntheticDatasetSpec, seed: u64, exec: Exec) -> Result<(SplitManifest, Vec<LoadedPatch>)> {
    let rendered = synthesize_boards(spec, seed, exec)?;
    let mut patches = Vec::new();
    let mut loaded = Vec::new();
    for (rec, img) in &rendered {
        for p in patchify_board(rec, spec.patches.patch_size, spec.patches.stride, spec.patches.min_box_area_frac)? {
            loaded.push(LoadedPatch { image: crop_patch(img, &p), record: p.clone() });
            patches.push(p);
        }
    }
    let boards: Vec<BoardRecord> = rendered.into_iter().map(|(r, _)| r).collect();
    let manifest = split_dataset(&boards, &patches, spec.patches.val_frac, seed)?;
    Ok((manifest, loaded))
}
