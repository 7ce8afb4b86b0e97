use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

use super::records::{BoardRecord, PatchRecord, Role, Split};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub patch_id: String,
    pub board_id: String,
    pub split: Split,
}

/// Split of every usable patch; patches of excluded boards are absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub val_frac: f64,
    pub entries: Vec<SplitEntry>,
}

impl SplitManifest {
    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.entries.iter().filter(move |e| e.split == split).map(|e| e.patch_id.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Ids of train/val patches whose board has the test role (empty when hygienic).
    pub fn holdout_leaks(&self, boards: &[BoardRecord]) -> Vec<String> {
        let roles: HashMap<&str, Role> = boards.iter().map(|b| (b.board_id.as_str(), b.role)).collect();
        self.entries
            .iter()
            .filter(|e| e.split != Split::Test && roles.get(e.board_id.as_str()) != Some(&Role::TrainVal))
            .map(|e| e.patch_id.clone())
            .collect()
    }
}

/// Test-role boards go wholly to test; patches of train/val boards are
/// shuffled with `seed` and the first `round(n * val_frac)` become validation.
pub fn split_dataset(boards: &[BoardRecord], patches: &[PatchRecord], val_frac: f64, seed: u64) -> Result<SplitManifest> {
    if !(val_frac > 0.0 && val_frac < 1.0) {
        return Err(config_err!("val_frac must be in (0, 1), got {val_frac}"));
    }
    let roles: HashMap<&str, Role> = boards.iter().map(|b| (b.board_id.as_str(), b.role)).collect();
    if !roles.values().any(|&r| r == Role::TrainVal) {
        return Err(config_err!("no train_val boards to split"));
    }
    let mut entries = Vec::with_capacity(patches.len());
    let mut pool = Vec::new();
    for p in patches {
        let role = *roles
            .get(p.board_id.as_str())
            .ok_or_else(|| config_err!("patch {} refers to unknown board {}", p.patch_id, p.board_id))?;
        let split = match role {
            Role::Excluded => continue,
            Role::Test => Split::Test,
            Role::TrainVal => {
                pool.push(entries.len());
                Split::Train
            }
        };
        entries.push(SplitEntry { patch_id: p.patch_id.clone(), board_id: p.board_id.clone(), split });
    }
    let n_val = (pool.len() as f64 * val_frac).round() as usize;
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for &i in &pool[..n_val] {
        entries[i].split = Split::Val;
    }
    Ok(SplitManifest { seed, val_frac, entries })
}
