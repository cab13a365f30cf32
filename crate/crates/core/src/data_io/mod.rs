//! File formats (features, manifest, checkpoints) and the synthetic generator.

pub mod checkpoint;
pub mod features;
pub mod manifest;
pub mod synth;

pub use checkpoint::{export_bank, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use features::{FeatureFile, FeatureRecord, FEATURE_HEADER_LEN, FLAG_MEMORY_BANK};
pub use manifest::{ClassData, ClassEntry, Dataset, Manifest, Role};
pub use synth::{generate_synthetic, write_dataset, SyntheticData, SyntheticSpec};
