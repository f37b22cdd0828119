//! Unit error rate, per-condition pooled aggregation and binomial error bars.

use std::fmt::Write as _;

use crate::audio::Condition;
use crate::error::{Error, Result};
use crate::quantizer::dedup_units;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AlignmentCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_length: usize,
}

impl AlignmentCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Levenshtein alignment with unit costs. Among minimal alignments the
/// backtrace prefers match/substitution, then deletion, then insertion.
pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> AlignmentCounts {
    let (n, m) = (hyp.len(), reference.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            let del = d[i * w + j - 1] + 1;
            let ins = d[(i - 1) * w + j] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut c = AlignmentCounts {
        ref_length: m,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = hyp[i - 1] == reference[j - 1];
            if d[(i - 1) * w + j - 1] + usize::from(!same) == here {
                if !same {
                    c.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i * w + j - 1] + 1 == here {
            c.deletions += 1;
            j -= 1;
        } else {
            c.insertions += 1;
            i -= 1;
        }
    }
    c
}

fn rate(c: &AlignmentCounts) -> Result<f64> {
    if c.ref_length == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(100.0 * c.errors() as f64 / c.ref_length as f64)
}

/// Alignment counts of the deduplicated sequences.
pub fn unit_alignment(hyp: &[usize], reference: &[usize]) -> AlignmentCounts {
    edit_distance(&dedup_units(hyp), &dedup_units(reference))
}

/// Unit error rate in percent, computed after deduplicating both sides.
pub fn uer(hyp: &[usize], reference: &[usize]) -> Result<f64> {
    rate(&unit_alignment(hyp, reference))
}

/// Token error rate in percent over arbitrary tokens, without deduplication.
pub fn token_error_rate<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<f64> {
    rate(&edit_distance(hyp, reference))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bucket {
    Clean,
    NoiseH,
    NoiseL,
    Reverb,
}

impl Bucket {
    pub const ALL: [Bucket; 4] = [Bucket::Clean, Bucket::NoiseH, Bucket::NoiseL, Bucket::Reverb];

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Clean => "clean",
            Bucket::NoiseH => "noise_h",
            Bucket::NoiseL => "noise_l",
            Bucket::Reverb => "reverb",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Bucket::Clean => "Clean",
            Bucket::NoiseH => "Noise-H",
            Bucket::NoiseL => "Noise-L",
            Bucket::Reverb => "Reverb",
        }
    }

    /// SNR 15/20 dB is high, 5/10 dB is low; other SNRs have no bucket.
    pub fn of(condition: &Condition) -> Result<Bucket> {
        match condition {
            Condition::Clean => Ok(Bucket::Clean),
            Condition::Reverb => Ok(Bucket::Reverb),
            Condition::Noise { snr_db, .. } => match *snr_db {
                s if s == 15.0 || s == 20.0 => Ok(Bucket::NoiseH),
                s if s == 5.0 || s == 10.0 => Ok(Bucket::NoiseL),
                _ => Err(Error::UnknownCondition(condition_label(condition))),
            },
        }
    }
}

fn condition_label(c: &Condition) -> String {
    match c.snr_db() {
        Some(s) => format!("{}@{s}dB", c.label()),
        None => c.label(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StdMode {
    /// Worst-case variance, `p = 0.5`.
    Conservative,
    /// Observed error rate.
    Exact,
}

/// Binomial standard deviation in percent: `100·sqrt(p(1−p)/n)`.
pub fn binomial_std(p: f64, n: usize, mode: StdMode) -> Result<f64> {
    if n == 0 {
        return Err(Error::ZeroCount);
    }
    let p = match mode {
        StdMode::Conservative => 0.5,
        StdMode::Exact => p.clamp(0.0, 1.0),
    };
    Ok(100.0 * (p * (1.0 - p) / n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pub utt_id: String,
    pub condition: Condition,
    pub hyp: Vec<usize>,
    pub reference: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellStats {
    pub uer: f64,
    pub errors: usize,
    pub n_ref_units: usize,
    pub n_utts: usize,
    pub std: f64,
}

impl CellStats {
    fn from_counts(errors: usize, n_ref_units: usize, n_utts: usize, mode: StdMode) -> Result<Self> {
        if n_ref_units == 0 {
            return Err(Error::EmptyReference);
        }
        let p = errors as f64 / n_ref_units as f64;
        Ok(Self {
            uer: 100.0 * p,
            errors,
            n_ref_units,
            n_utts,
            std: binomial_std(p, n_ref_units, mode)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    pub cells: Vec<(Bucket, CellStats)>,
    pub overall: CellStats,
    pub mode: StdMode,
}

impl ConditionReport {
    pub fn get(&self, bucket: Bucket) -> Option<&CellStats> {
        self.cells.iter().find(|(b, _)| *b == bucket).map(|(_, c)| c)
    }

    /// Table with one row and columns Clean / Noise-H / Noise-L / Reverb / All.
    pub fn render_table(&self, row_label: &str) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<24}", "");
        for b in Bucket::ALL {
            let _ = write!(out, "{:>16}", b.title());
        }
        let _ = writeln!(out, "{:>16}", "All");
        let _ = write!(out, "{:<24}", row_label);
        for b in Bucket::ALL {
            match self.get(b) {
                Some(c) => {
                    let _ = write!(out, "{:>16}", format!("{:.1} ±{:.1}", c.uer, c.std));
                }
                None => {
                    let _ = write!(out, "{:>16}", "-");
                }
            }
        }
        let _ = writeln!(out, "{:>16}", format!("{:.1} ±{:.1}", self.overall.uer, self.overall.std));
        out
    }

    /// `bucket<TAB>uer<TAB>std<TAB>errors<TAB>n_ref_units<TAB>n_utts` lines.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        let rows = self.cells.iter().map(|(b, c)| (b.name(), c)).chain([("all", &self.overall)]);
        for (name, c) in rows {
            let _ = writeln!(
                out,
                "{name}\t{:.6}\t{:.6}\t{}\t{}\t{}",
                c.uer, c.std, c.errors, c.n_ref_units, c.n_utts
            );
        }
        out
    }
}

/// Pooled UER per condition bucket: `100·Σ(S+I+D)/Σ ref_length`.
pub fn condition_report(pairs: &[EvalPair], mode: StdMode) -> Result<ConditionReport> {
    let mut acc = [(0usize, 0usize, 0usize); 4];
    for p in pairs {
        let b = Bucket::of(&p.condition)?;
        let c = unit_alignment(&p.hyp, &p.reference);
        let slot = &mut acc[b as usize];
        slot.0 += c.errors();
        slot.1 += c.ref_length;
        slot.2 += 1;
    }
    let mut cells = Vec::new();
    for b in Bucket::ALL {
        let (e, n, u) = acc[b as usize];
        if u > 0 {
            cells.push((b, CellStats::from_counts(e, n, u, mode)?));
        }
    }
    let (e, n, u) = acc.iter().fold((0, 0, 0), |t, a| (t.0 + a.0, t.1 + a.1, t.2 + a.2));
    Ok(ConditionReport {
        cells,
        overall: CellStats::from_counts(e, n, u, mode)?,
        mode,
    })
}
