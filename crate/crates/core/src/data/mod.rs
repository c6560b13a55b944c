//! Volumes, manifests, preprocessing, augmentation, the synthetic cohort and
//! stratified splitting.

mod augment;
mod dataset;
mod patch;
mod split;
pub mod study;
pub mod synth;
mod volume;

pub use augment::{augment_pair, CubeSymmetry};
pub use dataset::{Batch, Dataset, Sample, PATCH_SIZE};
pub use patch::{clip_normalize, clip_normalize_volume, extract_patch, normalize_hu, FILL_HU, HU_MAX, HU_MIN};
pub use split::{stratified_kfold, stratified_split, FoldPlan, SplitPlan};
pub use study::{CohortIndex, Label, NoduleStudy, TimePoint};
pub use synth::{synthesize_study, write_cohort, SynthConfig, SynthStudy};
pub use volume::{Volume, NVOL_MAGIC, NVOL_VERSION};
