use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::unit_alignment;
use crate::pseudo_ssl::LayerStackFeatures;
use crate::substrate::{adam_step, lr_at_step, AdamConfig, AdamState, Gradients, ScheduleConfig, Tape};

use super::decode::{beam_search_decode, BeamOptions};
use super::model::DenoiserModel;

/// Features of one (possibly distorted) utterance and the clean deduplicated
/// units of its source.
#[derive(Clone, Debug)]
pub struct TrainingExample {
    pub utt_id: String,
    pub features: LayerStackFeatures,
    pub target: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: ScheduleConfig,
    pub adam: AdamConfig,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Decoding used for the validation error rate.
    pub valid_decode: BeamOptions,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            schedule: ScheduleConfig::default(),
            adam: AdamConfig::default(),
            clip_norm: Some(5.0),
            seed: 0,
            valid_decode: BeamOptions {
                beam_size: 1,
                ..BeamOptions::default()
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// NaN for epoch 0, which only evaluates the initial model.
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_uer: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn to_text(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tvalid_loss\tvalid_uer\n");
        for r in &self.records {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", r.epoch, r.train_loss, r.valid_loss, r.valid_uer);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 && line.starts_with("epoch\t") || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::parse(i + 1, format!("expected 4 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(i + 1, format!("bad number {s:?}")));
            records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| Error::parse(i + 1, "bad epoch"))?,
                train_loss: num(f[1])?,
                valid_loss: num(f[2])?,
                valid_uer: num(f[3])?,
            });
        }
        let best_epoch = best_record(&records).map_or(0, |r| r.epoch);
        Ok(Self { records, best_epoch })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }
}

/// Lowest validation error; ties go to the earlier epoch.
fn best_record(records: &[EpochRecord]) -> Option<&EpochRecord> {
    records.iter().fold(None, |best: Option<&EpochRecord>, r| match best {
        Some(b) if b.valid_uer <= r.valid_uer => Some(b),
        _ => Some(r),
    })
}

fn example_seed(seed: u64, step: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(step.wrapping_mul(1_000_003))
        .wrapping_add(index as u64)
}

/// Gradients averaged over `batch`, plus the mean loss. Each example gets
/// its own tape; results are reduced in batch order.
fn batch_gradients(model: &DenoiserModel, batch: &[&TrainingExample], seed: u64, step: u64) -> Result<(Gradients, f64)> {
    let store = model.store();
    let parts: Vec<(Gradients, f64)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut tape = Tape::training(store, example_seed(seed, step, i));
            let loss = model.loss(&mut tape, &ex.features, &ex.target)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numerical(format!("loss {value} on {}", ex.utt_id)));
            }
            Ok((tape.backward(loss)?, value))
        })
        .collect::<Result<_>>()?;
    let mut total = Gradients::zeros_like(store);
    let mut loss = 0.0;
    for (g, l) in &parts {
        total.accumulate(g);
        loss += l;
    }
    total.scale(1.0 / batch.len() as f64);
    Ok((total, loss / batch.len() as f64))
}

fn clip(grads: &mut Gradients, max_norm: Option<f64>) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    if let Some(m) = max_norm {
        let n = grads.global_norm();
        if n > m {
            grads.scale(m / n);
        }
    }
    Ok(())
}

/// Mean evaluation loss and pooled unit error rate.
pub fn evaluate(model: &DenoiserModel, examples: &[TrainingExample], decode: &BeamOptions) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset("evaluation set"));
    }
    let per: Vec<(f64, usize, usize)> = examples
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new(model.store());
            let loss = model.loss(&mut tape, &ex.features, &ex.target)?;
            let loss = tape.value(loss).item();
            let hyp = beam_search_decode(model, &ex.features, decode)?;
            let a = unit_alignment(&hyp, &ex.target);
            Ok((loss, a.errors(), a.ref_length))
        })
        .collect::<Result<_>>()?;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / per.len() as f64;
    let errors: usize = per.iter().map(|p| p.1).sum();
    let refs: usize = per.iter().map(|p| p.2).sum();
    if refs == 0 {
        return Err(Error::EmptyReference);
    }
    Ok((loss, errors as f64 / refs as f64))
}

fn check_examples(examples: &[TrainingExample], what: &'static str) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset(what));
    }
    if let Some(ex) = examples.iter().find(|e| e.target.is_empty()) {
        return Err(Error::MissingTarget(ex.utt_id.clone()));
    }
    Ok(())
}

/// Trains with seeded shuffling, Adam and the warmup/decay schedule. The
/// parameters of the epoch with the lowest validation error (epoch 0 being
/// the initial model) are restored before returning.
pub fn train_denoiser(
    model: &mut DenoiserModel,
    train: &[TrainingExample],
    valid: &[TrainingExample],
    opts: &TrainOptions,
) -> Result<TrainingLog> {
    check_examples(train, "training set")?;
    check_examples(valid, "validation set")?;
    opts.schedule.validate()?;
    if opts.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = AdamState::new(model.store());
    let mut step = 0u64;
    let mut log = TrainingLog::default();
    let (vl, vu) = evaluate(model, valid, &opts.valid_decode)?;
    log.records.push(EpochRecord {
        epoch: 0,
        train_loss: f64::NAN,
        valid_loss: vl,
        valid_uer: vu,
    });
    let mut best = (vu, model.store().named_tensors());

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            step += 1;
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &train[i]).collect();
            let (mut grads, loss) = batch_gradients(model, &batch, opts.seed, step)?;
            clip(&mut grads, opts.clip_norm)?;
            let lr = lr_at_step(&opts.schedule, step);
            adam_step(model.store_mut(), &grads, &mut adam, lr, &opts.adam)?;
            loss_sum += loss * batch.len() as f64;
        }
        let (vl, vu) = evaluate(model, valid, &opts.valid_decode)?;
        if !vl.is_finite() {
            return Err(Error::Numerical(format!("validation loss {vl} at epoch {epoch}")));
        }
        log.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            valid_loss: vl,
            valid_uer: vu,
        });
        if vu < best.0 {
            best = (vu, model.store().named_tensors());
        }
    }
    model.store_mut().load_from(&best.1)?;
    log.best_epoch = best_record(&log.records).map_or(0, |r| r.epoch);
    Ok(log)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinetuneOptions {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        Self {
            steps: 100,
            lr: 1e-4,
            batch_size: 8,
            clip_norm: Some(5.0),
            seed: 0,
        }
    }
}

/// Adapts the layer weights, projection, encoder and adapters on
/// target-environment data at a constant learning rate. Decoder and CTC
/// head stay bitwise unchanged.
pub fn finetune_encoder(model: &mut DenoiserModel, examples: &[TrainingExample], opts: &FinetuneOptions) -> Result<()> {
    if opts.steps == 0 {
        return Ok(());
    }
    check_examples(examples, "adaptation set")?;
    if opts.batch_size == 0 || !(opts.lr > 0.0) {
        return Err(Error::InvalidConfig("finetuning needs batch size >= 1 and lr > 0".into()));
    }
    let saved: Vec<bool> = model.store().ids().map(|id| model.store().is_trainable(id)).collect();
    let enc = model.encoder_param_ids();
    let store = model.store_mut();
    store.set_all_trainable(false);
    for &id in &enc {
        store.set_trainable(id, true);
    }
    let result = finetune_loop(model, examples, opts);
    let store = model.store_mut();
    let ids: Vec<_> = store.ids().collect();
    for (id, t) in ids.into_iter().zip(saved) {
        store.set_trainable(id, t);
    }
    result
}

fn finetune_loop(model: &mut DenoiserModel, examples: &[TrainingExample], opts: &FinetuneOptions) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = AdamState::new(model.store());
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let cfg = AdamConfig::default();
    for step in 1..=opts.steps as u64 {
        let mut batch = Vec::with_capacity(opts.batch_size);
        while batch.len() < opts.batch_size.min(examples.len()) {
            if cursor == order.len() {
                order = (0..examples.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&examples[order[cursor]]);
            cursor += 1;
        }
        let (mut grads, _) = batch_gradients(model, &batch, opts.seed, step)?;
        clip(&mut grads, opts.clip_norm)?;
        adam_step(model.store_mut(), &grads, &mut adam, opts.lr, &cfg)?;
    }
    Ok(())
}
