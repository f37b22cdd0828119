//! Line-delimited utterance manifests.
//!
//! Base record: `id<TAB>wav_path<TAB>condition<TAB>snr_db_or_dash` where the
//! condition is `clean`, `reverb` or `noise:<source_tag>`. Augmented
//! manifests append `source_utt_id<TAB>aug_type<TAB>noise_tag<TAB>snr_db<TAB>ir_tag<TAB>rescaled_flag`
//! (`-` for absent values, flag `0`/`1`).

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Condition {
    Clean,
    Reverb,
    Noise { source_tag: String, snr_db: f64 },
}

impl Condition {
    pub fn label(&self) -> String {
        match self {
            Condition::Clean => "clean".into(),
            Condition::Reverb => "reverb".into(),
            Condition::Noise { source_tag, .. } => format!("noise:{source_tag}"),
        }
    }

    pub fn snr_db(&self) -> Option<f64> {
        match self {
            Condition::Noise { snr_db, .. } => Some(*snr_db),
            _ => None,
        }
    }

    /// Parses the condition and SNR columns.
    pub fn parse(label: &str, snr: &str) -> std::result::Result<Self, String> {
        let snr = parse_opt_f64(snr)?;
        match (label, snr) {
            ("clean", None) => Ok(Condition::Clean),
            ("reverb", None) => Ok(Condition::Reverb),
            (l, Some(snr_db)) if l.starts_with("noise:") && l.len() > 6 => Ok(Condition::Noise {
                source_tag: l[6..].to_string(),
                snr_db,
            }),
            (l, s) if l.starts_with("noise:") && s.is_none() => Err("noise condition needs an SNR".into()),
            (l, Some(_)) if l == "clean" || l == "reverb" => Err(format!("{l} condition must not carry an SNR")),
            (l, _) => Err(format!("unknown condition {l:?}")),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentInfo {
    pub source_utt_id: String,
    pub aug_type: String,
    pub noise_tag: Option<String>,
    pub snr_db: Option<f64>,
    pub ir_tag: Option<String>,
    pub rescaled: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub wav_path: PathBuf,
    pub condition: Condition,
    pub augment: Option<AugmentInfo>,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>, wav_path: impl Into<PathBuf>, condition: Condition) -> Self {
        Self {
            id: id.into(),
            wav_path: wav_path.into(),
            condition,
            augment: None,
        }
    }

    /// Id of the clean utterance this record derives from.
    pub fn source_id(&self) -> &str {
        self.augment.as_ref().map_or(&self.id, |a| &a.source_utt_id)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

fn dash(s: Option<&str>) -> &str {
    s.unwrap_or("-")
}

fn parse_opt(s: &str) -> Option<String> {
    (s != "-").then(|| s.to_string())
}

fn parse_opt_f64(s: &str) -> std::result::Result<Option<f64>, String> {
    if s == "-" {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| format!("bad number {s:?}"))?;
    if !v.is_finite() {
        return Err(format!("non-finite number {s:?}"));
    }
    Ok(Some(v))
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let snr = e.condition.snr_db().map(|v| v.to_string());
            out.push_str(&format!(
                "{}\t{}\t{}\t{}",
                e.id,
                e.wav_path.display(),
                e.condition.label(),
                dash(snr.as_deref())
            ));
            if let Some(a) = &e.augment {
                let snr = a.snr_db.map(|v| v.to_string());
                out.push_str(&format!(
                    "\t{}\t{}\t{}\t{}\t{}\t{}",
                    a.source_utt_id,
                    a.aug_type,
                    dash(a.noise_tag.as_deref()),
                    dash(snr.as_deref()),
                    dash(a.ir_tag.as_deref()),
                    u8::from(a.rescaled)
                ));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 && f.len() != 10 {
                return Err(Error::parse(lineno, format!("expected 4 or 10 fields, got {}", f.len())));
            }
            if f[0].is_empty() {
                return Err(Error::parse(lineno, "empty id"));
            }
            if !seen.insert(f[0].to_string()) {
                return Err(Error::parse(lineno, format!("duplicate id {:?}", f[0])));
            }
            if f[1].is_empty() {
                return Err(Error::parse(lineno, "empty wav path"));
            }
            let condition = Condition::parse(f[2], f[3]).map_err(|m| Error::parse(lineno, m))?;
            let augment = if f.len() == 10 {
                let rescaled = match f[9] {
                    "0" => false,
                    "1" => true,
                    other => return Err(Error::parse(lineno, format!("bad rescaled flag {other:?}"))),
                };
                if f[4].is_empty() || f[5].is_empty() {
                    return Err(Error::parse(lineno, "empty source id or aug type"));
                }
                Some(AugmentInfo {
                    source_utt_id: f[4].to_string(),
                    aug_type: f[5].to_string(),
                    noise_tag: parse_opt(f[6]),
                    snr_db: parse_opt_f64(f[7]).map_err(|m| Error::parse(lineno, m))?,
                    ir_tag: parse_opt(f[8]),
                    rescaled,
                })
            } else {
                None
            };
            entries.push(ManifestEntry {
                id: f[0].to_string(),
                wav_path: PathBuf::from(f[1]),
                condition,
                augment,
            });
        }
        Ok(Self { entries })
    }

    /// Loads a manifest and resolves relative wav paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            if e.wav_path.is_relative() {
                e.wav_path = base.join(&e.wav_path);
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
