//! Training-time image transforms.

mod augment;
mod equalize;
mod magenta;

pub use augment::{augment, augment_arrays, transform_image, transform_mask, AugmentConfig, AugmentParams};
pub use equalize::{
    equalize_histogram, equalize_quantized, equalize_raw_band, equalize_sample_quantized, Equalizer,
};
pub use magenta::{
    detect_magenta, fit_magenta, replace_magenta, BBox, MagentaReplacement, MagentaSignature, TexturePatch,
    DEFAULT_WIDTH_FACTOR,
};
