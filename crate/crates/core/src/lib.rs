//! Change-detection toolkit for deforestation mapping from bitemporal
//! Landsat-style imagery and yearly deforestation polygons.
//!
//! The crate covers the whole chain: polygon rasterization and grid
//! alignment, windowed dataset construction, radiometric preprocessing,
//! a small fully convolutional combiner trained under focal loss,
//! voting ensembles, small-region post-processing and the evaluation
//! metric suite.

pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod fcn;
pub mod metrics;
pub mod postprocess;
pub mod preprocess;
pub mod raster;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use raster::{BinaryMask, GeoTransform, PolygonLayer, RasterStack};
