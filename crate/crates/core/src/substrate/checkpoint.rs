//! Named-tensor checkpoint text format.
//!
//! ```text
//! DNZR v1
//! #config<TAB>key<TAB>value        (zero or more)
//! name<TAB>d0,d1,...<TAB>base64(float64 LE payload)
//! ```

use std::path::Path;

use base64::Engine as _;
use base64::engine::general_purpose::STANDARD as B64;

use crate::error::{Error, Result};

use super::Tensor;

pub const CHECKPOINT_HEADER: &str = "DNZR v1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_HEADER);
        out.push('\n');
        for (k, v) in &self.config {
            out.push_str(&format!("#config\t{k}\t{v}\n"));
        }
        for (name, t) in &self.tensors {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let mut bytes = Vec::with_capacity(t.len() * 8);
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            out.push_str(&format!("{name}\t{}\t{}\n", shape.join(","), B64.encode(&bytes)));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == CHECKPOINT_HEADER => {}
            _ => return Err(Error::BadMagic { expected: CHECKPOINT_HEADER }),
        }
        let mut ck = Checkpoint::default();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields[0] == "#config" {
                if fields.len() != 3 {
                    return Err(Error::parse(lineno, "config line needs key and value"));
                }
                ck.config.push((fields[1].to_string(), fields[2].to_string()));
                continue;
            }
            if fields.len() != 3 {
                return Err(Error::parse(lineno, format!("expected 3 fields, got {}", fields.len())));
            }
            let name = fields[0];
            if name.is_empty() || ck.tensors.iter().any(|(n, _)| n == name) {
                return Err(Error::parse(lineno, format!("empty or duplicate tensor name {name:?}")));
            }
            let shape = fields[1]
                .split(',')
                .map(|d| d.parse::<usize>().map_err(|_| Error::parse(lineno, format!("bad dimension {d:?}"))))
                .collect::<Result<Vec<_>>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or(Error::DimensionOverflow)?;
            if count == 0 {
                return Err(Error::parse(lineno, "zero-sized tensor"));
            }
            let bytes = B64
                .decode(fields[2])
                .map_err(|e| Error::parse(lineno, format!("base64: {e}")))?;
            let needed = count.checked_mul(8).ok_or(Error::DimensionOverflow)?;
            if bytes.len() != needed {
                return Err(Error::parse(
                    lineno,
                    format!("payload has {} bytes, shape needs {needed}", bytes.len()),
                ));
            }
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("checkpoint tensor"));
            }
            ck.tensors.push((name.to_string(), Tensor::new(shape, data)?));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
