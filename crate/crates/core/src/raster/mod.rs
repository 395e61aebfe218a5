//! Georeferenced raster and vector primitives.
//!
//! Pixel `(row, col)` covers the half-open square `[row, row+1) x [col, col+1)`
//! in continuous pixel space; its center sits at `(row + 0.5, col + 0.5)`.
//! Rasterization, resampling and alignment all use that convention.

mod align;
pub mod io;
mod polygon;

pub use align::{intersect_extents, intersection_windows, resample_mask_to_grid, resample_to_grid};
pub use polygon::{ClassLabel, Polygon, PolygonLayer, Ring};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Six-coefficient affine map from continuous pixel space to world space.
///
/// ```text
/// x = origin_x + col * pixel_w + row * rot_x
/// y = origin_y + col * rot_y   + row * pixel_h
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_w: f64,
    pub pixel_h: f64,
    pub rot_x: f64,
    pub rot_y: f64,
}

impl GeoTransform {
    /// North-up transform without rotation.
    pub fn north_up(origin_x: f64, origin_y: f64, pixel_w: f64, pixel_h: f64) -> Self {
        Self {
            origin_x,
            origin_y,
            pixel_w,
            pixel_h,
            rot_x: 0.0,
            rot_y: 0.0,
        }
    }

    /// Unit pixels, world == pixel space with x = col and y = row.
    pub fn identity() -> Self {
        Self::north_up(0.0, 0.0, 1.0, 1.0)
    }

    /// GDAL coefficient order: `[origin_x, pixel_w, rot_x, origin_y, rot_y, pixel_h]`.
    pub fn from_gdal(c: [f64; 6]) -> Self {
        Self {
            origin_x: c[0],
            pixel_w: c[1],
            rot_x: c[2],
            origin_y: c[3],
            rot_y: c[4],
            pixel_h: c[5],
        }
    }

    pub fn to_gdal(&self) -> [f64; 6] {
        [
            self.origin_x,
            self.pixel_w,
            self.rot_x,
            self.origin_y,
            self.rot_y,
            self.pixel_h,
        ]
    }

    pub fn determinant(&self) -> f64 {
        self.pixel_w * self.pixel_h - self.rot_x * self.rot_y
    }

    pub fn validate(&self) -> Result<()> {
        let det = self.determinant();
        let coeffs = self.to_gdal();
        if !coeffs.iter().all(|c| c.is_finite()) || det == 0.0 || !det.is_finite() {
            return Err(Error::Config(format!("singular or non-finite geotransform {coeffs:?}")));
        }
        Ok(())
    }

    /// Continuous pixel coordinates to world coordinates.
    pub fn pixel_to_world(&self, row: f64, col: f64) -> (f64, f64) {
        (
            self.origin_x + col * self.pixel_w + row * self.rot_x,
            self.origin_y + col * self.rot_y + row * self.pixel_h,
        )
    }

    /// World position of the center of pixel `(row, col)`.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        self.pixel_to_world(row as f64 + 0.5, col as f64 + 0.5)
    }

    /// Inverse affine; returns unrounded `(row, col)`.
    pub fn world_to_pixel(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        self.validate()?;
        let det = self.determinant();
        let dx = x - self.origin_x;
        let dy = y - self.origin_y;
        let col = (self.pixel_h * dx - self.rot_x * dy) / det;
        let row = (self.pixel_w * dy - self.rot_y * dx) / det;
        Ok((row, col))
    }

    /// Transform of the grid whose pixel (0,0) is this grid's pixel `(row, col)`.
    pub fn shifted(&self, row: isize, col: isize) -> Self {
        let (x, y) = self.pixel_to_world(row as f64, col as f64);
        Self {
            origin_x: x,
            origin_y: y,
            ..*self
        }
    }

    pub(crate) fn same_linear_part(&self, other: &Self) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        close(self.pixel_w, other.pixel_w)
            && close(self.pixel_h, other.pixel_h)
            && close(self.rot_x, other.rot_x)
            && close(self.rot_y, other.rot_y)
    }
}

/// Shape plus placement of a raster grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub transform: GeoTransform,
    pub height: usize,
    pub width: usize,
}

/// Rectangular pixel window `[row, row+height) x [col, col+width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Window {
    pub fn new(row: usize, col: usize, height: usize, width: usize) -> Self {
        Self {
            row,
            col,
            height,
            width,
        }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.row + self.height <= height && self.col + self.width <= width
    }
}

/// Anything laid out on a georeferenced grid that can be cropped.
pub trait Gridded: Sized {
    fn grid(&self) -> Grid;
    fn crop(&self, window: &Window) -> Result<Self>;
}

/// Encoding of the samples in a raster file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleType {
    U8,
    U16,
    F32,
}

/// Band-major multi-band raster. Samples are held as `f32`; raw 16-bit input
/// is represented exactly and remembers its encoding through `dtype`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterStack {
    bands: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
    transform: GeoTransform,
    band_names: Vec<String>,
    dtype: SampleType,
}

impl RasterStack {
    pub fn new(
        bands: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
        transform: GeoTransform,
    ) -> Result<Self> {
        if bands == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "raster dimensions must be positive, got {bands}x{height}x{width}"
            )));
        }
        if data.len() != bands * height * width {
            return Err(Error::Shape(format!(
                "raster data has {} values, expected {bands}x{height}x{width}",
                data.len()
            )));
        }
        transform.validate()?;
        Ok(Self {
            bands,
            height,
            width,
            data,
            transform,
            band_names: (1..=bands).map(|b| format!("B{b}")).collect(),
            dtype: SampleType::F32,
        })
    }

    pub fn from_u16(
        bands: usize,
        height: usize,
        width: usize,
        data: &[u16],
        transform: GeoTransform,
    ) -> Result<Self> {
        let mut s = Self::new(
            bands,
            height,
            width,
            data.iter().map(|&v| v as f32).collect(),
            transform,
        )?;
        s.dtype = SampleType::U16;
        Ok(s)
    }

    pub fn zeros(bands: usize, height: usize, width: usize, transform: GeoTransform) -> Result<Self> {
        Self::new(bands, height, width, vec![0.0; bands * height * width], transform)
    }

    pub fn with_band_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.bands {
            return Err(Error::Shape(format!(
                "{} band names for {} bands",
                names.len(),
                self.bands
            )));
        }
        self.band_names = names;
        Ok(self)
    }

    pub fn with_dtype(mut self, dtype: SampleType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn bands(&self) -> usize {
        self.bands
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }
    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }
    pub fn dtype(&self) -> SampleType {
        self.dtype
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn band(&self, k: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn band_mut(&mut self, k: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[(band * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, band: usize, row: usize, col: usize, v: f32) {
        self.data[(band * self.height + row) * self.width + col] = v;
    }

    /// Raw nodata rule: a pixel is null iff every band is exactly 0.
    pub fn is_null(&self, idx: usize) -> bool {
        let n = self.pixels();
        (0..self.bands).all(|k| self.data[k * n + idx] == 0.0)
    }

    pub fn null_mask(&self) -> Vec<bool> {
        let n = self.pixels();
        let mut null = vec![true; n];
        for k in 0..self.bands {
            for (flag, &v) in null.iter_mut().zip(self.band(k)) {
                *flag &= v == 0.0;
            }
        }
        null
    }

    /// Appends one band after the existing ones.
    pub fn push_band(&mut self, values: Vec<f32>, name: impl Into<String>) -> Result<()> {
        if values.len() != self.pixels() {
            return Err(Error::Shape(format!(
                "new band has {} pixels, raster has {}",
                values.len(),
                self.pixels()
            )));
        }
        self.data.extend(values);
        self.bands += 1;
        self.band_names.push(name.into());
        if self.dtype != SampleType::F32 {
            self.dtype = SampleType::F32;
        }
        Ok(())
    }
}

impl Gridded for RasterStack {
    fn grid(&self) -> Grid {
        Grid {
            transform: self.transform,
            height: self.height,
            width: self.width,
        }
    }

    fn crop(&self, w: &Window) -> Result<Self> {
        if w.height == 0 || w.width == 0 || !w.fits(self.height, self.width) {
            return Err(Error::Shape(format!(
                "window {w:?} outside {}x{} raster",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.bands * w.area());
        for k in 0..self.bands {
            let band = self.band(k);
            for r in w.row..w.row + w.height {
                let start = r * self.width + w.col;
                data.extend_from_slice(&band[start..start + w.width]);
            }
        }
        Ok(Self {
            bands: self.bands,
            height: w.height,
            width: w.width,
            data,
            transform: self.transform.shifted(w.row as isize, w.col as isize),
            band_names: self.band_names.clone(),
            dtype: self.dtype,
        })
    }
}

/// Single-band {0,1} raster.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
    transform: GeoTransform,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>, transform: GeoTransform) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask data has {} values, expected {height}x{width}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|&v| v > 1) {
            return Err(Error::Domain(format!(
                "mask value {} at index {pos} is not 0 or 1",
                data[pos]
            )));
        }
        Ok(Self {
            height,
            width,
            data,
            transform,
        })
    }

    pub fn zeros(height: usize, width: usize, transform: GeoTransform) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
            transform,
        }
    }

    /// Mask on the identity grid, handy for patch-level work.
    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(height, width, data, GeoTransform::identity())
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c) as u8);
            }
        }
        Self {
            height,
            width,
            data,
            transform: GeoTransform::identity(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn with_transform(mut self, t: GeoTransform) -> Self {
        self.transform = t;
        self
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.data[row * self.width + col] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }
}

impl Gridded for BinaryMask {
    fn grid(&self) -> Grid {
        Grid {
            transform: self.transform,
            height: self.height,
            width: self.width,
        }
    }

    fn crop(&self, w: &Window) -> Result<Self> {
        if w.height == 0 || w.width == 0 || !w.fits(self.height, self.width) {
            return Err(Error::Shape(format!(
                "window {w:?} outside {}x{} mask",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(w.area());
        for r in w.row..w.row + w.height {
            let start = r * self.width + w.col;
            data.extend_from_slice(&self.data[start..start + w.width]);
        }
        Ok(Self {
            height: w.height,
            width: w.width,
            data,
            transform: self.transform.shifted(w.row as isize, w.col as isize),
        })
    }
}
