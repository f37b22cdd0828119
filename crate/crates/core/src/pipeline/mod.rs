//! Stage orchestration over a work directory. Every stage declares the
//! workdir-relative paths it reads and writes; the run manifest records
//! their content hashes so stale or missing inputs are reported and
//! up-to-date stages are skipped.

mod config;
mod manifest;
mod stages;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use config::{AdaptSection, AugmentSection, CorpusSection, DecodeSection, PipelineConfig, QuantizerSection, TrainSection};
pub use manifest::{hash_bytes, hash_path, RunManifest, StageRecord, WorkdirLock, LOCK_FILE, RUN_MANIFEST};
pub use stages::{ablation_overall, AdaptPoint, EvalSummary};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Augment,
    Extract,
    TrainKmeans,
    Quantize,
    TrainDenoiser,
    Decode,
    Eval,
    Adapt,
    Report,
    Ablate,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::Synth,
        Stage::Augment,
        Stage::Extract,
        Stage::TrainKmeans,
        Stage::Quantize,
        Stage::TrainDenoiser,
        Stage::Decode,
        Stage::Eval,
        Stage::Adapt,
        Stage::Report,
        Stage::Ablate,
    ];

    /// Stages executed by a full run, in order.
    pub const RUN: [Stage; 10] = [
        Stage::Synth,
        Stage::Augment,
        Stage::Extract,
        Stage::TrainKmeans,
        Stage::Quantize,
        Stage::TrainDenoiser,
        Stage::Decode,
        Stage::Eval,
        Stage::Adapt,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Augment => "augment",
            Stage::Extract => "extract",
            Stage::TrainKmeans => "train-kmeans",
            Stage::Quantize => "quantize",
            Stage::TrainDenoiser => "train-denoiser",
            Stage::Decode => "decode",
            Stage::Eval => "eval",
            Stage::Adapt => "adapt",
            Stage::Report => "report",
            Stage::Ablate => "ablate",
        }
    }

    fn inputs(self) -> &'static [&'static str] {
        match self {
            Stage::Synth => &[],
            Stage::Augment => &["corpus"],
            Stage::Extract => &["corpus", "aug"],
            Stage::TrainKmeans => &["corpus", "features"],
            Stage::Quantize => &["corpus", "aug", "features", "kmeans"],
            Stage::TrainDenoiser => &["aug", "features", "units"],
            Stage::Decode => &["aug", "features", "model"],
            Stage::Eval => &["aug", "units", "decode"],
            Stage::Adapt => &["corpus", "units", "model"],
            Stage::Report => &["eval", "model"],
            Stage::Ablate => &["aug", "features", "units"],
        }
    }

    fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Synth => &["corpus"],
            Stage::Augment => &["aug"],
            Stage::Extract => &["features"],
            Stage::TrainKmeans => &["kmeans"],
            Stage::Quantize => &["units"],
            Stage::TrainDenoiser => &["model"],
            Stage::Decode => &["decode"],
            Stage::Eval => &["eval"],
            Stage::Adapt => &["adapt"],
            Stage::Report => &["report.md"],
            Stage::Ablate => &["ablate"],
        }
    }

    /// Config sections whose values affect the stage outputs.
    fn sections(self) -> &'static [&'static str] {
        match self {
            Stage::Synth => &["run", "corpus"],
            Stage::Augment => &["run", "augment"],
            Stage::Extract => &["ssl"],
            Stage::TrainKmeans => &["run", "quantizer"],
            Stage::Quantize => &["quantizer"],
            Stage::TrainDenoiser => &["run", "ssl", "quantizer", "denoiser", "train", "decode"],
            Stage::Decode => &["decode"],
            Stage::Eval => &[],
            Stage::Adapt => &["run", "ssl", "quantizer", "decode", "adapt"],
            Stage::Report => &["adapt"],
            Stage::Ablate => &["run", "ssl", "quantizer", "denoiser", "train", "decode", "ablate"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config("stage", format!("unknown stage {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    UpToDate,
}

/// A work directory driven by one configuration. Holds the directory lock
/// while alive.
#[derive(Debug)]
pub struct Pipeline {
    workdir: PathBuf,
    config: PipelineConfig,
    _lock: WorkdirLock,
}

impl Pipeline {
    pub fn open(workdir: &Path, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let lock = WorkdirLock::acquire(workdir)?;
        Ok(Self {
            workdir: workdir.to_path_buf(),
            config,
            _lock: lock,
        })
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.workdir.join(rel)
    }

    fn config_hash(&self, stage: Stage) -> String {
        hash_bytes(self.config.section_text(stage.sections()).as_bytes())
    }

    /// Inputs of `stage`, including optional ones that exist.
    fn stage_inputs(&self, stage: Stage) -> Vec<&'static str> {
        let mut v = stage.inputs().to_vec();
        if stage == Stage::Report {
            v.extend(["adapt", "ablate"].into_iter().filter(|p| self.path(p).exists()));
        }
        v
    }

    /// Runs `stage` unless its recorded inputs, config and outputs are all
    /// unchanged.
    pub fn run_stage(&self, stage: Stage) -> Result<StageStatus> {
        let mut manifest = RunManifest::load(&self.workdir)?;
        let inputs = self.stage_inputs(stage);
        let in_hashes = manifest.check_inputs(&self.workdir, stage.name(), &inputs)?;
        let ch = self.config_hash(stage);
        if manifest.is_current(&self.workdir, stage.name(), &ch, &in_hashes) {
            return Ok(StageStatus::UpToDate);
        }
        for out in stage.outputs() {
            let p = self.path(out);
            if p.is_dir() {
                std::fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        stages::execute(self, stage)?;
        let mut outputs = std::collections::BTreeMap::new();
        for out in stage.outputs() {
            outputs.insert(out.to_string(), hash_path(&self.path(out))?);
        }
        manifest.stages.insert(
            stage.name().to_string(),
            StageRecord {
                config_hash: ch,
                inputs: in_hashes,
                outputs,
            },
        );
        manifest.save(&self.workdir)?;
        Ok(StageStatus::Ran)
    }

    /// Every stage of a full run in order.
    pub fn run_all(&self, mut progress: impl FnMut(Stage, StageStatus)) -> Result<()> {
        for stage in Stage::RUN {
            let s = self.run_stage(stage)?;
            progress(stage, s);
        }
        Ok(())
    }

    /// Evaluation with an explicit hypothesis file in place of the decode
    /// output; writes nothing.
    pub fn evaluate_file(&self, hyp: &Path) -> Result<crate::metrics::ConditionReport> {
        stages::evaluate_hyp_file(self, hyp)
    }
}
