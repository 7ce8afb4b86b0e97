//! Board and patch records and their line-delimited JSON form.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Annotation, BBox};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[default]
    TrainVal,
    Test,
    Excluded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (expected train, val or test)"))),
        }
    }
}

/// One annotated board image.
#[derive(Clone, Debug, PartialEq)]
pub struct BoardRecord {
    pub board_id: String,
    /// Image location, relative paths resolved against the annotation file.
    pub image: PathBuf,
    pub width: usize,
    pub height: usize,
    pub annotations: Vec<Annotation>,
    pub role: Role,
}

impl BoardRecord {
    pub fn validate(&self, num_classes: Option<usize>) -> Result<()> {
        for a in &self.annotations {
            let b = a.bbox;
            if !b.is_valid() || b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > self.width as f32 || b.y_max > self.height as f32 {
                return Err(Error::Contract(format!("board {}: box {b:?} outside {}x{}", self.board_id, self.width, self.height)));
            }
            if num_classes.is_some_and(|k| a.class_id >= k) {
                return Err(Error::Contract(format!("board {}: class {} out of range", self.board_id, a.class_id)));
            }
        }
        Ok(())
    }
}

/// Square crop of a board with annotations in patch coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub patch_id: String,
    pub board_id: String,
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
    pub annotations: Vec<Annotation>,
}

/// On-disk line: `{"image_id", "image"?, "width", "height", "boxes": [[x0, y0, x1, y1, class]], "role"?}`.
#[derive(Serialize, Deserialize)]
struct Line {
    image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<PathBuf>,
    width: usize,
    height: usize,
    boxes: Vec<[f64; 5]>,
    #[serde(default)]
    role: Role,
}

fn to_line(image_id: &str, image: Option<PathBuf>, width: usize, height: usize, anns: &[Annotation], role: Role) -> Line {
    let boxes = anns
        .iter()
        .map(|a| [a.bbox.x_min as f64, a.bbox.y_min as f64, a.bbox.x_max as f64, a.bbox.y_max as f64, a.class_id as f64])
        .collect();
    Line { image_id: image_id.to_string(), image, width, height, boxes, role }
}

fn from_boxes(boxes: &[[f64; 5]]) -> std::result::Result<Vec<Annotation>, String> {
    boxes
        .iter()
        .map(|b| {
            if b[4] < 0.0 || b[4].fract() != 0.0 {
                return Err(format!("class id {} is not a non-negative integer", b[4]));
            }
            Ok(Annotation::new(BBox::new(b[0] as f32, b[1] as f32, b[2] as f32, b[3] as f32), b[4] as usize))
        })
        .collect()
}

pub(crate) fn write_lines<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).map_err(|e| Error::format(path, e.to_string()))?;
        out.push(b'\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// Reads board annotations; image paths default to `<image_id>.png` next to the file.
pub fn read_boards(path: &Path) -> Result<Vec<BoardRecord>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let lines: Vec<Line> = read_lines(path)?;
    lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let annotations = from_boxes(&l.boxes).map_err(|m| Error::format(path, format!("line {}: {m}", i + 1)))?;
            let image = base.join(l.image.unwrap_or_else(|| PathBuf::from(format!("{}.png", l.image_id))));
            let b = BoardRecord { board_id: l.image_id, image, width: l.width, height: l.height, annotations, role: l.role };
            b.validate(None).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            Ok(b)
        })
        .collect()
}

/// Writes boards with image paths relative to the file's directory where possible.
pub fn write_boards(path: &Path, boards: &[BoardRecord]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    write_lines(
        path,
        boards.iter().map(|b| {
            let rel = b.image.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| b.image.clone());
            to_line(&b.board_id, Some(rel), b.width, b.height, &b.annotations, b.role)
        }),
    )
}

#[derive(Serialize, Deserialize)]
struct PatchLine {
    image_id: String,
    board_id: String,
    x0: usize,
    y0: usize,
    width: usize,
    height: usize,
    boxes: Vec<[f64; 5]>,
}

pub fn write_patches(path: &Path, patches: &[PatchRecord]) -> Result<()> {
    write_lines(
        path,
        patches.iter().map(|p| {
            let l = to_line(&p.patch_id, None, p.size, p.size, &p.annotations, Role::TrainVal);
            PatchLine { image_id: l.image_id, board_id: p.board_id.clone(), x0: p.x0, y0: p.y0, width: p.size, height: p.size, boxes: l.boxes }
        }),
    )
}

pub fn read_patches(path: &Path) -> Result<Vec<PatchRecord>> {
    let lines: Vec<PatchLine> = read_lines(path)?;
    lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            if l.width != l.height {
                return Err(Error::format(path, format!("line {}: patch {} is not square", i + 1, l.image_id)));
            }
            let annotations = from_boxes(&l.boxes).map_err(|m| Error::format(path, format!("line {}: {m}", i + 1)))?;
            Ok(PatchRecord { patch_id: l.image_id, board_id: l.board_id, x0: l.x0, y0: l.y0, size: l.width, annotations })
        })
        .collect()
}
