//! `KMNS v1` codebook files and tab-separated unit files.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::substrate::Tensor;

use super::{Codebook, UnitSequence};

pub const KMNS_MAGIC: &[u8] = b"KMNS v1\n";
pub const UNITS_SUFFIX: &str = ".units";
pub const DEDUP_UNITS_SUFFIX: &str = ".dedup.units";

/// Serialises centroids as float32; training metadata is not stored.
pub fn codebook_to_bytes(cb: &Codebook) -> Vec<u8> {
    let mut out = Vec::with_capacity(KMNS_MAGIC.len() + 12 + cb.centroids.len() * 4);
    out.extend_from_slice(KMNS_MAGIC);
    out.extend_from_slice(&(cb.k() as u32).to_le_bytes());
    out.extend_from_slice(&(cb.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(cb.layer_index as u32).to_le_bytes());
    for &v in cb.centroids.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn codebook_from_bytes(bytes: &[u8]) -> Result<Codebook> {
    if bytes.len() < KMNS_MAGIC.len() || &bytes[..KMNS_MAGIC.len()] != KMNS_MAGIC {
        return Err(Error::BadMagic { expected: "KMNS v1" });
    }
    let header_end = KMNS_MAGIC.len() + 12;
    if bytes.len() < header_end {
        return Err(Error::Truncated {
            needed: header_end,
            available: bytes.len(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (k, d, layer) = (u32_at(8), u32_at(12), u32_at(16));
    let payload = k
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or(Error::DimensionOverflow)?;
    let needed = header_end.checked_add(payload).ok_or(Error::DimensionOverflow)?;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::TrailingBytes(bytes.len() - needed));
    }
    let data = bytes[header_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let centroids = Tensor::new(vec![k, d], data)?;
    Codebook::new(centroids, layer)
}

pub fn save_codebook(cb: &Codebook, path: &Path) -> Result<()> {
    std::fs::write(path, codebook_to_bytes(cb)).map_err(|e| Error::io(path, e))
}

pub fn load_codebook(path: &Path) -> Result<Codebook> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    codebook_from_bytes(&bytes)
}

pub fn units_to_text(seqs: &[UnitSequence]) -> String {
    let mut out = String::new();
    for s in seqs {
        out.push_str(&s.utt_id);
        out.push('\t');
        let units: Vec<String> = s.units.iter().map(|u| u.to_string()).collect();
        out.push_str(&units.join(" "));
        out.push('\n');
    }
    out
}

/// Parses `utt_id<TAB>u1 u2 ...` lines. With `deduplicated` set, adjacent
/// repeats are rejected.
pub fn parse_units(text: &str, deduplicated: bool) -> Result<Vec<UnitSequence>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(lineno, "expected utt_id<TAB>units"))?;
        if id.is_empty() {
            return Err(Error::parse(lineno, "empty utterance id"));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::parse(lineno, format!("duplicate id {id:?}")));
        }
        let units = rest
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| Error::parse(lineno, format!("bad unit {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if deduplicated && units.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::parse(lineno, "adjacent repeat in deduplicated unit file"));
        }
        out.push(UnitSequence {
            utt_id: id.to_string(),
            units,
            deduplicated,
        });
    }
    Ok(out)
}

pub fn save_units(seqs: &[UnitSequence], path: &Path) -> Result<()> {
    std::fs::write(path, units_to_text(seqs)).map_err(|e| Error::io(path, e))
}

/// Loads a unit file; names ending in `.dedup.units` are read as deduplicated.
pub fn load_units(path: &Path) -> Result<Vec<UnitSequence>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dedup = path.to_string_lossy().ends_with(DEDUP_UNITS_SUFFIX);
    parse_units(&text, dedup)
}
