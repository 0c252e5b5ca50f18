//! Annotation parsing, patch labeling, class balancing, train/validation
//! splitting and episode sampling.

mod annotations;
mod cache;
mod labeling;
mod sampling;

pub use annotations::{parse_annotations, read_annotations, AnnotationRow, Label};
pub use cache::{read_patch_cache, write_patch_cache};
pub use labeling::{label_patches, recording_patches, ClassMap, FrameTiming, LabeledPatch, PatchSource};
pub(crate) use labeling::overlap;
pub use sampling::{
    balance_oversample, sample_episode, split_train_val, Episode, EpisodeItem, EpisodeSampler, EpisodeSpec,
};
