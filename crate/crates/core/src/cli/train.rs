use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, RunConfig};
use super::{evaluate_patches, RUN_CONFIG, TRAIN_LOG};
use crate::backbone::freeze_stages;
use crate::data::{augment, sample_rng, synthesize_in_memory, to_sample, LoadedPatch, PreparedDataset, Split};
use crate::detector::checkpoint::RUN_MANIFEST;
use crate::detector::{save_checkpoint, Detector, LossBreakdown, RunManifest, Sample, Trainer, TrainerConfig};
use crate::error::{config_err, Error, Result};
use crate::eval::EvalReport;
use crate::par::Exec;

pub const BEST_DIR: &str = "best";
pub const LAST_DIR: &str = "last";
pub const BEST_EVAL: &str = "eval.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValScores {
    pub map: f64,
    pub map_50: f64,
    pub map_75: f64,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub lr: f64,
    /// Mean over the epoch's batches; `n_positive` is summed.
    pub loss: LossBreakdown,
    pub val: Option<ValScores>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub out: PathBuf,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_eval: Option<EvalReport>,
}

/// Train and validation patches of the configured source.
pub fn load_training_data(cfg: &RunConfig, exec: Exec) -> Result<(Vec<LoadedPatch>, Vec<LoadedPatch>)> {
    match &cfg.data {
        DataSource::Dataset { root } => {
            let ds = PreparedDataset::open(root)?;
            Ok((ds.load_split(Split::Train, exec)?, ds.load_split(Split::Val, exec)?))
        }
        DataSource::Synthetic { seed, spec } => {
            let (manifest, patches) = synthesize_in_memory(spec, *seed, exec)?;
            let pick = |split: Split| -> Vec<LoadedPatch> {
                let ids: std::collections::HashSet<&str> = manifest.ids(split).collect();
                patches.iter().filter(|p| ids.contains(p.record.patch_id.as_str())).cloned().collect()
            };
            Ok((pick(Split::Train), pick(Split::Val)))
        }
    }
}

fn check_classes(patches: &[LoadedPatch], num_classes: usize) -> Result<()> {
    for p in patches {
        if let Some(a) = p.record.annotations.iter().find(|a| a.class_id >= num_classes) {
            return Err(config_err!(
                "patch {} has class {} but detector.num_classes is {num_classes}",
                p.record.patch_id,
                a.class_id
            ));
        }
    }
    Ok(())
}

fn val_scores(r: &EvalReport) -> ValScores {
    ValScores { map: r.map, map_50: r.map_50, map_75: r.map_75 }
}

/// Runs a full training job under `cfg.out`.
///
/// Writes the run config first, then after every epoch a log line, the
/// `last` checkpoint and the run manifest; `best` holds the checkpoint with
/// the highest validation mAP@[0.5:0.95] so far. A numeric failure keeps the
/// last good checkpoint on disk and is returned as an error.
pub fn train_run(cfg: &RunConfig, exec: Exec) -> Result<TrainOutcome> {
    cfg.validate()?;
    let out = cfg.out.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let config_text = cfg.to_toml()?;
    let cfg_path = out.join(RUN_CONFIG);
    fs::write(&cfg_path, &config_text).map_err(|e| Error::io(&cfg_path, e))?;

    let (train, val) = load_training_data(cfg, exec)?;
    check_classes(&train, cfg.detector.num_classes)?;
    check_classes(&val, cfg.detector.num_classes)?;
    if train.is_empty() && cfg.epochs > 0 {
        return Err(config_err!("training split is empty"));
    }

    let det = Detector::new(&cfg.detector)?;
    let mut store = det.init_params::<f32>(cfg.seed)?;
    freeze_stages(&mut store, cfg.detector.backbone_kind(), cfg.n_frozen)?;
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let schedule = cfg.optimizer.schedule(steps_per_epoch * cfg.epochs as u64);
    let scheduler = schedule.describe();
    let mut trainer = Trainer::<f32>::new(TrainerConfig { adam: cfg.optimizer.adam, schedule }, exec);

    let save_last = |store: &_, epochs_done: usize| -> Result<()> {
        let weights = save_checkpoint(&out.join(LAST_DIR), &cfg.detector, store)?;
        RunManifest::new(cfg.seed, config_text.clone(), scheduler.clone(), &weights, epochs_done).save(&out.join(RUN_MANIFEST))
    };
    save_last(&store, 0)?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { out, epochs: Vec::new(), best_epoch: None, best_eval: None });
    }

    let log_path = out.join(TRAIN_LOG);
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let size = cfg.detector.input_size;
    let mut records = Vec::new();
    let mut best: Option<(usize, EvalReport)> = None;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let epoch_seed: u64 = sample_rng(cfg.seed, 1 << 32 | epoch as u64).gen();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut sample_rng(epoch_seed, 0));
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample<f32>> = exec.map(chunk, |_, &i| {
                let p = &train[i];
                let mut rng = sample_rng(epoch_seed, 1 + i as u64);
                let (img, anns) = augment(&p.image, &p.record.annotations, &cfg.augment, &mut rng);
                to_sample(&img, &anns, size)
            });
            let lb = match trainer.step(&det, &mut store, &batch) {
                Ok(lb) => lb,
                Err(e) => {
                    save_last(&store, epoch - 1)?;
                    return Err(match e {
                        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, step {}: {m}; last good weights kept in {}", trainer.state.step + 1, out.join(LAST_DIR).display())),
                        other => other,
                    });
                }
            };
            sum.focal += lb.focal;
            sum.box_reg += lb.box_reg;
            sum.n_positive += lb.n_positive;
            batches += 1;
        }
        let nb = batches.max(1) as f64;
        let loss = LossBreakdown { focal: sum.focal / nb, box_reg: sum.box_reg / nb, total: (sum.focal + sum.box_reg) / nb, n_positive: sum.n_positive };

        let report = if val.is_empty() { None } else { Some(evaluate_patches(&det, &store, &val, exec)?) };
        let rec = EpochRecord { epoch, steps: trainer.state.step, lr: trainer.current_lr(), loss, val: report.as_ref().map(val_scores) };
        let line = serde_json::to_string(&rec).expect("record serialises");
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        log::info!(
            "epoch {epoch}/{}: loss {:.4} (focal {:.4}, box {:.4}) val mAP {} [{:.1}s]",
            cfg.epochs,
            loss.total,
            loss.focal,
            loss.box_reg,
            rec.val.map_or("-".to_string(), |v| format!("{:.4} @0.5 {:.4}", v.map, v.map_50)),
            started.elapsed().as_secs_f64()
        );
        save_last(&store, epoch)?;
        let improved = match (&report, &best) {
            (None, _) => true,
            (Some(r), Some((_, b))) => r.map > b.map,
            (Some(_), None) => true,
        };
        if improved {
            let dir = out.join(BEST_DIR);
            save_checkpoint(&dir, &cfg.detector, &store)?;
            if let Some(r) = &report {
                let mut r = r.clone();
                r.config = serde_json::json!({ "model": cfg.detector.name, "split": "val", "epoch": epoch });
                let p = dir.join(BEST_EVAL);
                fs::write(&p, r.to_json() + "\n").map_err(|e| Error::io(&p, e))?;
                best = Some((epoch, r));
            } else {
                remove_if_exists(&dir.join(BEST_EVAL))?;
            }
        }
        records.push(rec);
    }
    let best_epoch = best.as_ref().map(|b| b.0).or(Some(cfg.epochs));
    Ok(TrainOutcome { out, epochs: records, best_epoch, best_eval: best.map(|b| b.1) })
}

fn remove_if_exists(p: &Path) -> Result<()> {
    match fs::remove_file(p) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(p, e)),
        _ => Ok(()),
    }
}
