//! Board ingestion, square patch extraction, board-level splitting,
//! augmentation and the synthetic board generator.

pub mod augment;
pub mod dataset;
pub mod patchify;
pub mod records;
pub mod split;
pub mod synth;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{augment, AugmentationPolicy};
pub use dataset::{
    generate_dataset, load_image, prepare_from_annotations, rescale_box, save_image, synthesize_in_memory, to_sample, LoadedPatch,
    PatchOptions, PreparedDataset, SyntheticDatasetSpec,
};
pub use patchify::patchify_board;
pub use records::{read_boards, write_boards, BoardRecord, PatchRecord, Role, Split};
pub use split::{split_dataset, SplitManifest};
pub use synth::{generate_synthetic_scene, SynthSpec};

/// Generator for item `index` under `seed`: the same stream whichever thread
/// or order the item is processed in.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
