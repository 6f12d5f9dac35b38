//! Feature files, manifests, vocabulary and teacher-forcing batches.

mod batch;
mod feature;
mod manifest;
mod vocab;

pub use batch::{encode_targets, stack_features, Batch, Clip, Dataset};
pub use feature::{load_feature_matrix, prepare_audio, prepare_visual, FeatureMatrix};
pub use manifest::{ClipRecord, Manifest, Split};
pub use vocab::{tokenize, Vocabulary, EOS, PAD, RESERVED, RESERVED_TOKENS, SOS, UNK};

pub mod mmcf {
    pub use super::feature::{HEADER_LEN, MAGIC, VERSION};
}
