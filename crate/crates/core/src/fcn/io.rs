//! `FCNW` weights file: magic, u32 version, u32 header length, JSON header,
//! then each tensor as raw little-endian f32 in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{FcnWeights, Params, HIDDEN, KERNEL};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FCNW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsHeader {
    pub n_in: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub bn_momentum: f32,
    pub bn_eps: f32,
    /// Binarization threshold selected on validation data, if any.
    pub threshold: Option<f32>,
    pub tensors: Vec<TensorEntry>,
}

fn shapes(n_in: usize) -> Vec<TensorEntry> {
    let e = |name: &str, shape: &[usize]| TensorEntry {
        name: name.into(),
        shape: shape.to_vec(),
    };
    vec![
        e("conv1.weight", &[HIDDEN, n_in, KERNEL, KERNEL]),
        e("conv1.bias", &[HIDDEN]),
        e("bn.weight", &[HIDDEN]),
        e("bn.bias", &[HIDDEN]),
        e("bn.running_mean", &[HIDDEN]),
        e("bn.running_var", &[HIDDEN]),
        e("conv2.weight", &[1, HIDDEN, KERNEL, KERNEL]),
        e("conv2.bias", &[1]),
    ]
}

pub fn encode_weights(w: &FcnWeights<f32>, threshold: Option<f32>) -> Result<Vec<u8>> {
    let header = WeightsHeader {
        n_in: w.n_in(),
        hidden: HIDDEN,
        kernel: KERNEL,
        bn_momentum: w.momentum,
        bn_eps: w.eps,
        threshold,
        tensors: shapes(w.n_in()),
    };
    let json = serde_json::to_vec(&header)?;
    let p = &w.params;
    let blobs: [&[f32]; 8] = [
        &p.conv1_w,
        &p.conv1_b,
        &p.bn_gamma,
        &p.bn_beta,
        &w.running_mean,
        &w.running_var,
        &p.conv2_w,
        &p.conv2_b,
    ];
    let mut out = Vec::with_capacity(12 + json.len() + 4 * blobs.iter().map(|b| b.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for b in blobs {
        for v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<(FcnWeights<f32>, WeightsHeader)> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not an FCNW weights file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported weights version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let json = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| Error::Format("truncated weights header".into()))?;
    let header: WeightsHeader =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("bad weights header: {e}")))?;
    if header.hidden != HIDDEN || header.kernel != KERNEL || header.tensors != shapes(header.n_in) {
        return Err(Error::Format("weights header does not describe this architecture".into()));
    }
    let mut rest = &bytes[12 + hlen..];
    let mut blobs = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        if rest.len() < 4 * n {
            return Err(Error::Format(format!("truncated tensor {}", t.name)));
        }
        let (head, tail) = rest.split_at(4 * n);
        blobs.push(
            head.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect::<Vec<f32>>(),
        );
        rest = tail;
    }
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after weights", rest.len())));
    }
    let mut it = blobs.into_iter();
    let mut next = || it.next().unwrap();
    let (conv1_w, conv1_b, bn_gamma, bn_beta) = (next(), next(), next(), next());
    let (running_mean, running_var, conv2_w, conv2_b) = (next(), next(), next(), next());
    let params = Params {
        conv1_w,
        conv1_b,
        bn_gamma,
        bn_beta,
        conv2_w,
        conv2_b,
    };
    let w = FcnWeights::from_parts(
        header.n_in,
        params,
        running_mean,
        running_var,
        header.bn_momentum,
        header.bn_eps,
    )?;
    Ok((w, header))
}

pub fn write_weights(w: &FcnWeights<f32>, threshold: Option<f32>, path: &Path) -> Result<()> {
    let bytes = encode_weights(w, threshold)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Weights plus the stored threshold.
pub fn read_weights(path: &Path) -> Result<(FcnWeights<f32>, Option<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes).map(|(w, h)| (w, h.threshold))
}
