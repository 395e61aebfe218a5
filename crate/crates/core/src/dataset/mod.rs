//! Change-detection dataset construction: rasterize polygons, align and
//! crop both dates, cut sliding windows, normalize, add NDVI and store.

mod builder;
pub mod cdp1;
mod normalize;
mod patches;
mod rasterize;

pub use builder::{
    align_scene, build_dataset, build_scene, prepare_scene, sample_path, BuildConfig, DatasetManifest,
    EqualizationMode, ManifestEntry, PreparedScene, SceneCount, SceneInput, Split, NDVI_BAND_NAME,
};
pub use cdp1::{read_sample, write_sample};
pub use normalize::{compute_ndvi, standardize, BandStats, STD_EPSILON};
pub use patches::{
    extract_patches, extract_patches_with_nulls, patch_windows, window_starts, PatchConfig, PatchSample,
    SampleMeta,
};
pub use rasterize::rasterize_polygons;
