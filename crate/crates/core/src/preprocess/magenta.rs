//! Detection of burned clear-cut ("magenta") pixels by per-band interval
//! tests and their replacement with a tiled deforestation texture.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Gridded, RasterStack, Window};

pub const DEFAULT_WIDTH_FACTOR: f64 = 1.2;

/// Inclusive pixel bounding box, corners given as `(x, y) = (col, row)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub col0: usize,
    pub row0: usize,
    pub col1: usize,
    pub row1: usize,
}

impl BBox {
    pub fn new(corner0: (usize, usize), corner1: (usize, usize)) -> Self {
        Self {
            col0: corner0.0,
            row0: corner0.1,
            col1: corner1.0,
            row1: corner1.1,
        }
    }

    fn window(&self, height: usize, width: usize) -> Result<Window> {
        if self.col1 < self.col0 || self.row1 < self.row0 {
            return Err(Error::Config(format!("empty bounding box {self:?}")));
        }
        let w = Window::new(
            self.row0,
            self.col0,
            self.row1 - self.row0 + 1,
            self.col1 - self.col0 + 1,
        );
        if !w.fits(height, width) {
            return Err(Error::Config(format!(
                "bounding box {self:?} outside {height}x{width} raster"
            )));
        }
        Ok(w)
    }
}

/// Per-band spectral statistics of a reference region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagentaSignature {
    /// Indices of the bands tested.
    pub bands: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Interval half-width in standard deviations.
    pub k: f64,
}

impl MagentaSignature {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sig: Self = serde_json::from_str(&text)?;
        if sig.mean.len() != sig.bands.len() || sig.std.len() != sig.bands.len() {
            return Err(Error::Format(format!("{}: signature arrays differ in length", path.display())));
        }
        if sig.k <= 0.0 || sig.std.iter().any(|&s| s < 0.0) {
            return Err(Error::Format(format!("{}: invalid k or std", path.display())));
        }
        Ok(sig)
    }
}

/// Mean and population standard deviation of `bands` over `bbox`.
pub fn fit_magenta(stack: &RasterStack, bbox: BBox, bands: &[usize], k: f64) -> Result<MagentaSignature> {
    if k <= 0.0 {
        return Err(Error::Config(format!("width factor must be positive, got {k}")));
    }
    if let Some(&b) = bands.iter().find(|&&b| b >= stack.bands()) {
        return Err(Error::Config(format!("band {b} out of range")));
    }
    let window = bbox.window(stack.height(), stack.width())?;
    let region = stack.crop(&window)?;
    let n = region.pixels() as f64;
    let mut mean = Vec::with_capacity(bands.len());
    let mut std = Vec::with_capacity(bands.len());
    for &b in bands {
        let vals = region.band(b);
        let m = vals.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = vals.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n;
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok(MagentaSignature {
        bands: bands.to_vec(),
        mean,
        std,
        k,
    })
}

/// Flags pixels with `mean_b - k*std_b <= p_b <= mean_b + k*std_b` in every tested band.
pub fn detect_magenta(stack: &RasterStack, sig: &MagentaSignature) -> Result<BinaryMask> {
    if let Some(&b) = sig.bands.iter().find(|&&b| b >= stack.bands()) {
        return Err(Error::Shape(format!("signature band {b} not in a {}-band raster", stack.bands())));
    }
    let mut flags = vec![1u8; stack.pixels()];
    for (i, &b) in sig.bands.iter().enumerate() {
        let lo = sig.mean[i] - sig.k * sig.std[i];
        let hi = sig.mean[i] + sig.k * sig.std[i];
        for (f, &p) in flags.iter_mut().zip(stack.band(b)) {
            let p = p as f64;
            if !(lo <= p && p <= hi) {
                *f = 0;
            }
        }
    }
    BinaryMask::new(stack.height(), stack.width(), flags, *stack.transform())
}

/// Texture cut from a reference scene, tiled over images during replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TexturePatch {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub bbox: Option<BBox>,
    #[serde(skip)]
    pub data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct TextureHeader {
    channels: usize,
    height: usize,
    width: usize,
    bbox: Option<BBox>,
    data_file: String,
}

impl TexturePatch {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "texture {channels}x{height}x{width} with {} values",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            bbox: None,
            data,
        })
    }

    pub fn from_stack(stack: &RasterStack, bbox: BBox) -> Result<Self> {
        let window = bbox.window(stack.height(), stack.width())?;
        let region = stack.crop(&window)?;
        Ok(Self {
            channels: region.bands(),
            height: region.height(),
            width: region.width(),
            bbox: Some(bbox),
            data: region.into_data(),
        })
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[(band * self.height + row) * self.width + col]
    }

    /// JSON header at `path` plus a raw little-endian f32 blob next to it.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bin = path.with_extension("bin");
        let header = TextureHeader {
            channels: self.channels,
            height: self.height,
            width: self.width,
            bbox: self.bbox,
            data_file: bin
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(path, e))?;
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header: TextureHeader = serde_json::from_str(&text)?;
        let bin = path.with_file_name(&header.data_file);
        let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if bytes.len() != header.channels * header.height * header.width * 4 {
            return Err(Error::Format(format!("{}: texture blob has wrong length", bin.display())));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut tex = Self::new(header.channels, header.height, header.width, data)?;
        tex.bbox = header.bbox;
        Ok(tex)
    }
}

/// Flagged pixel `(i, j)` takes `tex(i mod h, j mod w)` in every band.
pub fn replace_magenta(stack: &RasterStack, flags: &BinaryMask, tex: &TexturePatch) -> Result<RasterStack> {
    if flags.height() != stack.height() || flags.width() != stack.width() {
        return Err(Error::Shape("flag mask does not match raster".into()));
    }
    if tex.channels != stack.bands() {
        return Err(Error::Shape(format!(
            "texture has {} channels, raster has {}",
            tex.channels,
            stack.bands()
        )));
    }
    let mut out = stack.clone();
    for r in 0..stack.height() {
        for c in 0..stack.width() {
            if flags.get(r, c) == 1 {
                for b in 0..stack.bands() {
                    out.set(b, r, c, tex.get(b, r % tex.height, c % tex.width));
                }
            }
        }
    }
    Ok(out)
}

/// Signature and texture shipped together.
#[derive(Debug, Clone, PartialEq)]
pub struct MagentaReplacement {
    pub signature: MagentaSignature,
    pub texture: TexturePatch,
}

impl MagentaReplacement {
    pub fn apply(&self, stack: &RasterStack) -> Result<RasterStack> {
        let flags = detect_magenta(stack, &self.signature)?;
        replace_magenta(stack, &flags, &self.texture)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    fn stack(bands: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f32) -> RasterStack {
        let mut data = Vec::new();
        for b in 0..bands {
            for r in 0..h {
                for c in 0..w {
                    data.push(f(b, r, c));
                }
            }
        }
        RasterStack::new(bands, h, w, data, GeoTransform::identity()).unwrap()
    }

    #[test]
    fn constant_bbox_has_zero_std() {
        let s = stack(3, 5, 5, |b, _, _| b as f32 * 10.0);
        let sig = fit_magenta(&s, BBox::new((1, 1), (3, 3)), &[0, 1, 2], 1.2).unwrap();
        assert!(sig.std.iter().all(|&v| v == 0.0));
        assert_eq!(sig.mean, vec![0.0, 10.0, 20.0]);
    }

    #[test]
    fn two_pixel_bbox() {
        let v = 40.0;
        let s = stack(1, 1, 2, |_, _, c| v + 2.0 * c as f32);
        let sig = fit_magenta(&s, BBox::new((0, 0), (1, 0)), &[0], 1.2).unwrap();
        assert_eq!((sig.mean[0], sig.std[0]), (41.0, 1.0));
    }

    #[test]
    fn empty_or_outside_bbox() {
        let s = stack(1, 4, 4, |_, _, _| 1.0);
        let inverted = BBox { col0: 3, row0: 0, col1: 1, row1: 2 };
        assert!(matches!(fit_magenta(&s, inverted, &[0], 1.2), Err(Error::Config(_))));
        assert!(matches!(fit_magenta(&s, BBox::new((0, 0), (4, 1)), &[0], 1.2), Err(Error::Config(_))));
    }

    #[test]
    fn interval_test_in_every_band() {
        let sig = MagentaSignature {
            bands: vec![0, 1],
            mean: vec![100.0, 50.0],
            std: vec![10.0, 0.0],
            k: 1.2,
        };
        // pixel 0: at the mean; pixel 1: +1.3 sigma in band 0; pixel 2: off by one in the zero-std band
        let s = stack(3, 1, 3, |b, _, c| match (b, c) {
            (0, 1) => 113.0,
            (0, _) => 100.0,
            (1, 2) => 51.0,
            (1, _) => 50.0,
            _ => 9999.0,
        });
        let m = detect_magenta(&s, &sig).unwrap();
        assert_eq!(m.data(), &[1, 0, 0]);
        // band 2 is not tested, so its values do not matter
        let s2 = stack(3, 1, 3, |b, r, c| if b == 2 { -5.0 } else { s.get(b, r, c) });
        assert_eq!(detect_magenta(&s2, &sig).unwrap(), m);
    }

    #[test]
    fn replacement_tiles_texture() {
        let s = stack(2, 5, 7, |b, r, c| (b * 100 + r * 10 + c) as f32);
        let tex = TexturePatch::new(2, 2, 3, (0..12).map(|v| -(v as f32)).collect()).unwrap();
        let none = BinaryMask::zeros(5, 7, GeoTransform::identity());
        assert_eq!(replace_magenta(&s, &none, &tex).unwrap(), s);

        let mut flags = none.clone();
        flags.set(4, 5, true);
        let out = replace_magenta(&s, &flags, &tex).unwrap();
        for b in 0..2 {
            assert_eq!(out.get(b, 4, 5), tex.get(b, 4 % 2, 5 % 3));
        }
        assert_eq!(out.get(0, 4, 4), s.get(0, 4, 4));

        let all = BinaryMask::from_fn(5, 7, |_, _| true);
        let one = TexturePatch::new(2, 1, 1, vec![3.0, 4.0]).unwrap();
        let out = replace_magenta(&s, &all, &one).unwrap();
        assert!(out.band(0).iter().all(|&v| v == 3.0) && out.band(1).iter().all(|&v| v == 4.0));
    }

    #[test]
    fn texture_and_signature_files() {
        let dir = tempfile::tempdir().unwrap();
        let s = stack(2, 6, 6, |b, r, c| (b + r * c) as f32);
        let tex = TexturePatch::from_stack(&s, BBox::new((1, 2), (4, 3))).unwrap();
        assert_eq!((tex.height, tex.width), (2, 4));
        tex.write(&dir.path().join("tex.json")).unwrap();
        assert_eq!(TexturePatch::read(&dir.path().join("tex.json")).unwrap(), tex);
        let sig = fit_magenta(&s, BBox::new((0, 0), (2, 2)), &[0, 1], 1.2).unwrap();
        sig.write_json(&dir.path().join("sig.json")).unwrap();
        assert_eq!(MagentaSignature::read_json(&dir.path().join("sig.json")).unwrap(), sig);
    }
}
