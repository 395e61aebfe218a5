//! `CDP1` sample container.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "CDP1"
//!      4     4  version (1)
//!      8     4  channels
//!     12     4  height
//!     16     4  width
//!     20     4  flags (bit 0: payload is DEFLATE-compressed)
//!     24     8  payload length in bytes
//!     32     8  metadata length in bytes
//!     40     .  payload: img1 f32[C*H*W] | img2 f32[C*H*W] | mask u8[H*W]
//!      .     .  metadata: UTF-8 JSON
//! ```
//! All integers little-endian.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use super::patches::{PatchSample, SampleMeta};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CDP1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 40;
const FLAG_DEFLATE: u32 = 1;

fn raw_payload(s: &PatchSample) -> Vec<u8> {
    let mut raw = Vec::with_capacity((s.img1.len() + s.img2.len()) * 4 + s.mask.len());
    for v in s.img1.iter().chain(&s.img2) {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    raw.extend_from_slice(&s.mask);
    raw
}

pub fn encode_sample(s: &PatchSample) -> Result<Vec<u8>> {
    s.validate()?;
    let raw = raw_payload(s);
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&raw).expect("writing to a Vec cannot fail");
    let payload = enc.finish().expect("writing to a Vec cannot fail");
    let meta = serde_json::to_vec(&s.meta)?;

    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + meta.len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, s.channels as u32, s.height as u32, s.width as u32, FLAG_DEFLATE] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&meta);
    Ok(out)
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(b[off..off + 8].try_into().expect("8 bytes"))
}

pub fn decode_sample(bytes: &[u8]) -> Result<PatchSample> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{} bytes is shorter than the CDP1 header", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported CDP1 version {version}")));
    }
    let (c, h, w) = (
        u32_at(bytes, 8) as usize,
        u32_at(bytes, 12) as usize,
        u32_at(bytes, 16) as usize,
    );
    let flags = u32_at(bytes, 20);
    let payload_len = u64_at(bytes, 24) as usize;
    let meta_len = u64_at(bytes, 32) as usize;
    let expected_total = HEADER_LEN
        .checked_add(payload_len)
        .and_then(|v| v.checked_add(meta_len))
        .ok_or_else(|| Error::Format("length fields overflow".into()))?;
    if bytes.len() < expected_total {
        return Err(Error::Format(format!(
            "truncated: {} bytes, header declares {expected_total}",
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let n = c * h * w;
    let raw_len = n * 8 + h * w;
    let raw = if flags & FLAG_DEFLATE != 0 {
        let mut raw = Vec::with_capacity(raw_len);
        DeflateDecoder::new(payload)
            .take(raw_len as u64 + 1)
            .read_to_end(&mut raw)
            .map_err(|e| Error::Format(format!("corrupt payload: {e}")))?;
        raw
    } else {
        payload.to_vec()
    };
    if raw.len() != raw_len {
        return Err(Error::Format(format!(
            "payload decodes to {} bytes, expected {raw_len}",
            raw.len()
        )));
    }
    let floats = |b: &[u8]| -> Vec<f32> {
        b.chunks_exact(4)
            .map(|q| f32::from_le_bytes([q[0], q[1], q[2], q[3]]))
            .collect()
    };
    let meta: SampleMeta = serde_json::from_slice(&bytes[HEADER_LEN + payload_len..expected_total])
        .map_err(|e| Error::Format(format!("bad metadata: {e}")))?;
    let sample = PatchSample {
        channels: c,
        height: h,
        width: w,
        img1: floats(&raw[..n * 4]),
        img2: floats(&raw[n * 4..n * 8]),
        mask: raw[n * 8..].to_vec(),
        meta,
    };
    sample.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(sample)
}

pub fn write_sample(s: &PatchSample, path: &Path) -> Result<()> {
    let bytes = encode_sample(s)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_sample(path: &Path) -> Result<PatchSample> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_sample(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
