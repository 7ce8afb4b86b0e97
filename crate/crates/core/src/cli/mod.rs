//! Command implementations behind the `pcbdet` binary. Each returns its
//! primary result and writes its files under the output directory it is given.

mod config;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{DataSource, OptimizerConfig, RunConfig};
pub use train::{load_training_data, train_run, EpochRecord, TrainOutcome, ValScores, BEST_DIR, BEST_EVAL, LAST_DIR};

use crate::bench::{compare_models, time_inference, BenchReport, Comparison, DetectorModel};
use crate::data::dataset::{ANNOTATIONS, PATCHES, SPLIT};
use crate::data::{generate_dataset, load_image, prepare_from_annotations, rescale_box, to_sample, LoadedPatch, PatchOptions, PreparedDataset, Split, SyntheticDatasetSpec};
use crate::detector::{load_checkpoint, Detector};
use crate::error::{config_err, Error, Result};
use crate::eval::{coco_map, write_predictions, EvalReport, GroundTruth, Prediction};
use crate::nn::{ParamStore, Shape, Tensor};
use crate::par::Exec;

pub const RUN_CONFIG: &str = "run_config.toml";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const SUMMARY: &str = "summary.json";
pub const COMPARISON_TXT: &str = "comparison.txt";
pub const COMPARISON_CSV: &str = "comparison.csv";

/// Runs `f` with `out` prepared as an empty-of-our-files directory. On
/// failure everything this command would have written is removed again,
/// including `out` itself when it did not exist before.
fn atomic_output<T>(out: &Path, entries: &[&str], f: impl FnOnce() -> Result<T>) -> Result<T> {
    let existed = out.exists();
    if existed && !out.is_dir() {
        return Err(config_err!("output path {} exists and is not a directory", out.display()));
    }
    let clear = || -> Result<()> {
        for e in entries {
            let p = out.join(e);
            let r = if p.is_dir() { fs::remove_dir_all(&p) } else { fs::remove_file(&p) };
            match r {
                Err(err) if err.kind() != std::io::ErrorKind::NotFound => return Err(Error::io(&p, err)),
                _ => {}
            }
        }
        Ok(())
    };
    if existed {
        clear()?;
    } else {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    let r = f();
    if r.is_err() {
        if existed {
            let _ = clear();
        } else {
            let _ = fs::remove_dir_all(out);
        }
    }
    r
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Patch and box counts of a prepared dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub boards: usize,
    pub patches: usize,
    pub boxes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub patch_size: usize,
    pub stride: usize,
    pub seed: u64,
}

impl DatasetSummary {
    fn of(ds: &PreparedDataset, opts: &PatchOptions, seed: u64) -> Self {
        DatasetSummary {
            boards: ds.boards.len(),
            patches: ds.patches.len(),
            boxes: ds.patches.iter().map(|p| p.annotations.len()).sum(),
            train: ds.manifest.count(Split::Train),
            val: ds.manifest.count(Split::Val),
            test: ds.manifest.count(Split::Test),
            patch_size: opts.patch_size,
            stride: opts.stride,
            seed,
        }
    }

    fn save(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join(SUMMARY), &(serde_json::to_string_pretty(self).expect("summary serialises") + "\n"))
    }
}

/// Cuts annotated boards into square patches and splits them.
pub fn cmd_patchify(annotations: &Path, boards_dir: Option<&Path>, opts: &PatchOptions, seed: u64, out: &Path) -> Result<DatasetSummary> {
    atomic_output(out, &[ANNOTATIONS, PATCHES, SPLIT, "patches", SUMMARY], || {
        let ds = prepare_from_annotations(annotations, boards_dir, opts, seed, out)?;
        let s = DatasetSummary::of(&ds, opts, seed);
        s.save(out)?;
        Ok(s)
    })
}

/// Renders a synthetic board set and patchifies it.
pub fn cmd_synth(spec: &SyntheticDatasetSpec, seed: u64, out: &Path, exec: Exec) -> Result<DatasetSummary> {
    spec.board.validate()?;
    atomic_output(out, &[ANNOTATIONS, PATCHES, SPLIT, "patches", "boards", SUMMARY], || {
        let ds = generate_dataset(spec, seed, out, exec)?;
        let s = DatasetSummary::of(&ds, &spec.patches, seed);
        s.save(out)?;
        Ok(s)
    })
}

pub fn cmd_train(cfg: &RunConfig, exec: Exec) -> Result<TrainOutcome> {
    train_run(cfg, exec)
}

/// Detections for every patch, in patch order, mapped back to patch pixels.
pub fn predict_patches(det: &Detector, store: &ParamStore<f32>, patches: &[LoadedPatch], exec: Exec) -> Result<Vec<Prediction>> {
    let size = det.cfg.input_size;
    let per = exec.try_map(patches, |_, p| {
        let s = to_sample(&p.image, &[], size);
        let dets = det.detect(store, &s.image)?.swap_remove(0);
        let (w, h) = p.image.dimensions();
        Ok(dets
            .into_iter()
            .map(|d| Prediction {
                image_id: p.record.patch_id.clone(),
                bbox: rescale_box(&d.bbox, size, w as usize, h as usize),
                class_id: d.class_id,
                score: d.score,
            })
            .collect::<Vec<_>>())
    })?;
    Ok(per.into_iter().flatten().collect())
}

pub fn ground_truth(patches: &[LoadedPatch]) -> Vec<GroundTruth> {
    patches
        .iter()
        .flat_map(|p| p.record.annotations.iter().map(|a| GroundTruth { image_id: p.record.patch_id.clone(), bbox: a.bbox, class_id: a.class_id }))
        .collect()
}

/// COCO-style evaluation of the detector on in-memory patches.
pub fn evaluate_patches(det: &Detector, store: &ParamStore<f32>, patches: &[LoadedPatch], exec: Exec) -> Result<EvalReport> {
    let preds = predict_patches(det, store, patches, exec)?;
    let mut report = coco_map(&preds, &ground_truth(patches), det.cfg.num_classes)?;
    report.counts.images = patches.len();
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub split: Split,
    /// Permit scoring the training split.
    pub allow_train: bool,
    pub out: Option<PathBuf>,
}

/// Evaluates a checkpoint on one split of a prepared dataset. With `out`,
/// writes `eval_<split>.json`, `eval_<split>.txt` and `predictions_<split>.jsonl`.
pub fn cmd_eval(args: &EvalArgs, exec: Exec) -> Result<EvalReport> {
    if args.split == Split::Train && !args.allow_train {
        return Err(config_err!("refusing to evaluate on the train split without --allow-train"));
    }
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let det = ckpt.detector()?;
    let ds = PreparedDataset::open(&args.dataset)?;
    let k = ckpt.config.num_classes;
    if let Some((b, a)) = ds.boards.iter().flat_map(|b| b.annotations.iter().map(move |a| (b, a))).find(|(_, a)| a.class_id >= k) {
        return Err(config_err!("class count mismatch: board {} has class {} but the checkpoint has {k} classes", b.board_id, a.class_id));
    }
    let patches = ds.load_split(args.split, exec)?;
    if patches.is_empty() {
        return Err(Error::Eval(format!("split {} of {} is empty", args.split, args.dataset.display())));
    }
    let preds = predict_patches(&det, &ckpt.params, &patches, exec)?;
    let mut report = coco_map(&preds, &ground_truth(&patches), k)?;
    report.counts.images = patches.len();
    report.config = serde_json::json!({
        "model": ckpt.config.name,
        "checkpoint": args.checkpoint,
        "dataset": args.dataset,
        "split": args.split.to_string(),
    });
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_text(&out.join(format!("eval_{}.json", args.split)), &(report.to_json() + "\n"))?;
        write_text(&out.join(format!("eval_{}.txt", args.split)), &report.to_table())?;
        write_predictions(&out.join(format!("predictions_{}.jsonl", args.split)), &preds)?;
    }
    Ok(report)
}

/// Boxes for one image in its own pixel coordinates; `image_id` is the file stem.
pub fn cmd_predict(checkpoint: &Path, image: &Path) -> Result<Vec<Prediction>> {
    let ckpt = load_checkpoint(checkpoint)?;
    let det = ckpt.detector()?;
    let img = load_image(image)?;
    let id = image.file_stem().map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned());
    let patch = LoadedPatch {
        record: crate::data::PatchRecord { patch_id: id, board_id: String::new(), x0: 0, y0: 0, size: 0, annotations: Vec::new() },
        image: img,
    };
    predict_patches(&det, &ckpt.params, std::slice::from_ref(&patch), Exec::Sequential)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchArgs {
    pub checkpoints: Vec<PathBuf>,
    /// Evaluation reports paired with the checkpoints; when empty each
    /// checkpoint's own `eval.json` is used.
    pub evals: Vec<PathBuf>,
    /// Square input side; defaults to each checkpoint's configured size.
    pub input_size: Option<usize>,
    pub warmup: usize,
    pub iters: usize,
    pub out: Option<PathBuf>,
}

fn read_eval(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Times every checkpoint and builds the comparison table. With `out`,
/// writes `bench_<i>_<model>.json` per checkpoint plus `comparison.txt` and `comparison.csv`.
pub fn cmd_bench(args: &BenchArgs) -> Result<(Vec<BenchReport>, Comparison)> {
    if args.checkpoints.is_empty() {
        return Err(config_err!("bench needs at least one checkpoint"));
    }
    if !args.evals.is_empty() && args.evals.len() != args.checkpoints.len() {
        return Err(config_err!("{} checkpoints but {} evaluation reports", args.checkpoints.len(), args.evals.len()));
    }
    let mut reports = Vec::new();
    let mut evals = Vec::new();
    for (i, path) in args.checkpoints.iter().enumerate() {
        let eval_path = args.evals.get(i).cloned().unwrap_or_else(|| path.join(BEST_EVAL));
        if !eval_path.exists() {
            return Err(config_err!("no evaluation report for {} (expected {})", path.display(), eval_path.display()));
        }
        evals.push(read_eval(&eval_path)?);
        let ckpt = load_checkpoint(path)?;
        let det = ckpt.detector()?;
        let size = args.input_size.unwrap_or(ckpt.config.input_size);
        let mut rng = crate::data::sample_rng(0, 0);
        let input = Tensor::randn(Shape::new(1, 3, size, size), 1.0, &mut rng);
        let model = DetectorModel { name: ckpt.config.name.clone(), detector: &det, params: &ckpt.params };
        reports.push(time_inference(&model, &input, args.warmup, args.iters)?);
    }
    let cmp = compare_models(&reports, &evals)?;
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        for (i, r) in reports.iter().enumerate() {
            write_text(&out.join(format!("bench_{i}_{}.json", r.model)), &(r.to_json() + "\n"))?;
        }
        write_text(&out.join(COMPARISON_TXT), &cmp.to_table())?;
        write_text(&out.join(COMPARISON_CSV), &cmp.to_csv()?)?;
    }
    Ok((reports, cmp))
}
