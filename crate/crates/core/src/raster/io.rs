//! Raw-binary raster files with a JSON sidecar.
//!
//! `scene.json` describes the raster; `scene.bin` next to it holds band-major
//! little-endian samples. Masks use the same layout with one `u8` band.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BinaryMask, GeoTransform, RasterStack, SampleType};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub dtype: SampleType,
    /// GDAL order: origin_x, pixel_w, rot_x, origin_y, rot_y, pixel_h.
    pub geotransform: [f64; 6],
    #[serde(default)]
    pub band_names: Vec<String>,
    /// Data file name relative to the sidecar; defaults to `<stem>.bin`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_file: Option<String>,
}

impl RasterHeader {
    fn sample_size(&self) -> usize {
        match self.dtype {
            SampleType::U8 => 1,
            SampleType::U16 => 2,
            SampleType::F32 => 4,
        }
    }
}

fn data_path(sidecar: &Path, header: &RasterHeader) -> PathBuf {
    match &header.data_file {
        Some(name) => sidecar.with_file_name(name),
        None => sidecar.with_extension("bin"),
    }
}

fn encode(values: &[f32], dtype: SampleType) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(values.len() * 4);
    match dtype {
        SampleType::F32 => values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        SampleType::U16 => {
            for &v in values {
                if v.fract() != 0.0 || !(0.0..=65535.0).contains(&v) {
                    return Err(Error::Domain(format!("value {v} not representable as u16")));
                }
                out.extend_from_slice(&(v as u16).to_le_bytes());
            }
        }
        SampleType::U8 => {
            for &v in values {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    return Err(Error::Domain(format!("value {v} not representable as u8")));
                }
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

fn decode(bytes: &[u8], dtype: SampleType) -> Vec<f32> {
    match dtype {
        SampleType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        SampleType::U16 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32)
            .collect(),
        SampleType::U8 => bytes.iter().map(|&b| b as f32).collect(),
    }
}

fn write_parts(sidecar: &Path, header: &RasterHeader, payload: &[u8]) -> Result<()> {
    let text = serde_json::to_string_pretty(header)?;
    std::fs::write(sidecar, text).map_err(|e| Error::io(sidecar, e))?;
    let bin = data_path(sidecar, header);
    std::fs::write(&bin, payload).map_err(|e| Error::io(&bin, e))
}

fn read_parts(sidecar: &Path) -> Result<(RasterHeader, Vec<f32>)> {
    let text = std::fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
    let header: RasterHeader = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", sidecar.display())))?;
    let bin = data_path(sidecar, &header);
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let expected = header.bands * header.height * header.width * header.sample_size();
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: {} bytes, header implies {expected}",
            bin.display(),
            bytes.len()
        )));
    }
    let values = decode(&bytes, header.dtype);
    Ok((header, values))
}

fn data_file_name(sidecar: &Path) -> Option<String> {
    sidecar
        .with_extension("bin")
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
}

/// Writes the raster in its own `dtype`.
pub fn write_raster(stack: &RasterStack, sidecar: &Path) -> Result<()> {
    let header = RasterHeader {
        bands: stack.bands(),
        height: stack.height(),
        width: stack.width(),
        dtype: stack.dtype(),
        geotransform: stack.transform().to_gdal(),
        band_names: stack.band_names().to_vec(),
        data_file: data_file_name(sidecar),
    };
    write_parts(sidecar, &header, &encode(stack.data(), stack.dtype())?)
}

pub fn read_raster(sidecar: &Path) -> Result<RasterStack> {
    let (header, values) = read_parts(sidecar)?;
    let t = GeoTransform::from_gdal(header.geotransform);
    let mut stack = RasterStack::new(header.bands, header.height, header.width, values, t)?
        .with_dtype(header.dtype);
    if !header.band_names.is_empty() {
        stack = stack.with_band_names(header.band_names)?;
    }
    Ok(stack)
}

pub fn write_mask(mask: &BinaryMask, sidecar: &Path) -> Result<()> {
    let header = RasterHeader {
        bands: 1,
        height: mask.height(),
        width: mask.width(),
        dtype: SampleType::U8,
        geotransform: mask.transform().to_gdal(),
        band_names: vec!["mask".into()],
        data_file: data_file_name(sidecar),
    };
    write_parts(sidecar, &header, mask.data())
}

/// Reads a single-band raster of 0/1 values in any sample type.
pub fn read_mask(sidecar: &Path) -> Result<BinaryMask> {
    let (header, values) = read_parts(sidecar)?;
    if header.bands != 1 {
        return Err(Error::Shape(format!(
            "{}: mask must have 1 band, found {}",
            sidecar.display(),
            header.bands
        )));
    }
    let data = values
        .iter()
        .map(|&v| match v {
            v if v == 0.0 => Ok(0u8),
            v if v == 1.0 => Ok(1u8),
            v => Err(Error::Format(format!("{}: mask value {v}", sidecar.display()))),
        })
        .collect::<Result<Vec<_>>>()?;
    BinaryMask::new(
        header.height,
        header.width,
        data,
        GeoTransform::from_gdal(header.geotransform),
    )
}

/// Binary PGM (P5) with maxval 1.
pub fn write_pgm(mask: &BinaryMask, path: &Path) -> Result<()> {
    let mut out = format!("P5\n{} {}\n1\n", mask.width(), mask.height()).into_bytes();
    out.extend_from_slice(mask.data());
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
