//! Volumes, preprocessing, patches, sampling and synthetic phantoms.

mod patch;
mod phantom;
mod preprocess;
mod sampler;
mod volume;

pub(crate) use patch::fill_pair;
pub use patch::{
    batch_centers, batch_pairs, extract_patch_pair, extract_raw_pair, standardize_planes, Center, PatchPair,
    PLANE_VAR_FLOOR,
};
pub use phantom::{generate_phantom, PhantomSpec, TumorSpec};
pub use preprocess::{normalize_slice, percentile, preprocess_volume, NormScope, SIGMA_FLOOR};
pub use sampler::{
    class_counts, sample_patches, sample_sites, stratified_shuffle, stratified_shuffle_by, PatchSample, SamplerMode, SamplerSpec, Site,
    SiteSample,
};
pub use volume::{LabelMap, Volume, VolumeSet};
