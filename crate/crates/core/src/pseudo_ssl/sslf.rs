//! SSLF layer-stack dumps: `"SSLF"`, u32 version, u32 L+1, u32 T, u32 D,
//! then (L+1)·T·D float32 little-endian values, layer-major then time-major.

use std::path::Path;

use crate::error::{Error, Result};
use crate::substrate::Tensor;

use super::LayerStackFeatures;

pub const SSLF_MAGIC: &[u8; 4] = b"SSLF";
pub const SSLF_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// Encodes features as float32; values outside float32 range become infinite
/// and are rejected.
pub fn features_to_bytes(features: &LayerStackFeatures) -> Result<Vec<u8>> {
    let (l, t, d) = (features.num_layers(), features.frames(), features.dim());
    let mut out = Vec::with_capacity(HEADER_LEN + l * t * d * 4);
    out.extend_from_slice(SSLF_MAGIC);
    for v in [SSLF_VERSION, l as u32, t as u32, d as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for layer in features.layers() {
        for &v in layer.data() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::NonFinite("SSLF payload"));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn features_from_bytes(bytes: &[u8]) -> Result<LayerStackFeatures> {
    if bytes.len() < 4 || &bytes[..4] != SSLF_MAGIC {
        return Err(Error::BadMagic { expected: "SSLF" });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != SSLF_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (l, t, d) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    if l == 0 || t == 0 || d == 0 {
        return Err(Error::InvalidDimensions(format!("L+1={l} T={t} D={d}")));
    }
    let per_layer = t.checked_mul(d).ok_or(Error::DimensionOverflow)?;
    let payload = per_layer
        .checked_mul(l)
        .and_then(|n| n.checked_mul(4))
        .ok_or(Error::DimensionOverflow)?;
    let needed = HEADER_LEN.checked_add(payload).ok_or(Error::DimensionOverflow)?;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::TrailingBytes(bytes.len() - needed));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SSLF payload"));
    }
    let layers = values
        .chunks_exact(per_layer)
        .map(|c| Tensor::new(vec![t, d], c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    LayerStackFeatures::new(layers)
}

pub fn dump_features(features: &LayerStackFeatures, path: &Path) -> Result<()> {
    let bytes = features_to_bytes(features)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: &Path) -> Result<LayerStackFeatures> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    features_from_bytes(&bytes)
}
