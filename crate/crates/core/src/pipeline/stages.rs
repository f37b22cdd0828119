use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio::{read_wav, Manifest, Waveform};
use crate::augment::{
    augment_corpus, mix_at_snr, synth_corpus, synth_environment, synth_ir_bank, synth_noise_bank, utterance_rng,
    write_corpus, Recipe, SynthConfig, TestRecipe, TrainRecipe,
};
use crate::denoiser::{
    ablation_variant, beam_search_decode, finetune_encoder, train_denoiser, BeamOptions, DenoiserConfig, DenoiserModel,
    FinetuneOptions, TrainOptions, TrainingExample, TrainingLog,
};
use crate::error::{Error, Result};
use crate::metrics::{condition_report, Bucket, CellStats, ConditionReport, EvalPair, StdMode};
use crate::pseudo_ssl::{dump_features, load_features, PseudoEncoder};
use crate::quantizer::{
    assign_layer, dedup_units, load_codebook, load_units, save_codebook, save_units, train_kmeans_best_of, UnitSequence,
};
use crate::substrate::{AdamConfig, Tensor};

use super::{Pipeline, Stage};

const SPLITS: [&str; 3] = ["train", "valid", "test"];

// Sub-seeds derived from `run.seed`.
const SEED_TRAIN_NOISE: u64 = 101;
const SEED_TRAIN_IRS: u64 = 102;
const SEED_TRAIN_MIX: u64 = 103;
const SEED_VALID_MIX: u64 = 104;
const SEED_TEST_NOISE: u64 = 201;
const SEED_TEST_IRS: u64 = 202;
const SEED_TEST_MIX: u64 = 203;
const SEED_KMEANS: u64 = 301;
const SEED_TRAIN: u64 = 402;
const SEED_ENV: u64 = 501;
const SEED_ADAPT_MIX: u64 = 502;
const SEED_ADAPT_EVAL: u64 = 503;
const SEED_FINETUNE: u64 = 504;

pub(super) fn execute(p: &Pipeline, stage: Stage) -> Result<()> {
    match stage {
        Stage::Synth => synth(p),
        Stage::Augment => augment(p),
        Stage::Extract => extract(p),
        Stage::TrainKmeans => train_kmeans(p),
        Stage::Quantize => quantize(p),
        Stage::TrainDenoiser => train(p),
        Stage::Decode => decode(p),
        Stage::Eval => eval(p),
        Stage::Adapt => adapt(p),
        Stage::Report => report(p),
        Stage::Ablate => ablate(p),
    }
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn seed(p: &Pipeline, offset: u64) -> u64 {
    p.config().seed.wrapping_add(offset)
}

fn synth(p: &Pipeline) -> Result<()> {
    let c = &p.config().corpus;
    let corpus = synth_corpus(&SynthConfig {
        num_utterances: c.num_utterances,
        num_unit_types: c.num_unit_types,
        min_units: c.min_units,
        max_units: c.max_units,
        seed: p.config().seed,
    })?;
    let dir = p.path("corpus");
    let manifest = write_corpus(&corpus, &dir)?;
    let n_train = c.num_utterances - c.num_valid - c.num_test;
    let bounds = [(0, n_train), (n_train, n_train + c.num_valid), (n_train + c.num_valid, c.num_utterances)];
    for (split, (a, b)) in SPLITS.iter().zip(bounds) {
        let m = Manifest {
            entries: manifest.entries[a..b].to_vec(),
        };
        m.save(&dir.join(format!("{split}.tsv")))?;
    }
    Ok(())
}

fn augment(p: &Pipeline) -> Result<()> {
    let a = &p.config().augment;
    let train_noise = synth_noise_bank(seed(p, SEED_TRAIN_NOISE), a.noise_duration_s)?;
    let train_irs = synth_ir_bank(seed(p, SEED_TRAIN_IRS), a.num_irs)?;
    let test_noise = synth_noise_bank(seed(p, SEED_TEST_NOISE), a.noise_duration_s)?;
    let test_irs = synth_ir_bank(seed(p, SEED_TEST_IRS), a.num_irs)?;
    let tags = train_noise.tags();
    let train_recipe = |include_clean: bool, s: u64| {
        Recipe::Train(TrainRecipe {
            snr_low_db: a.snr_low_db,
            snr_high_db: a.snr_high_db,
            noise_tags: tags.clone(),
            include_clean,
            seed: s,
        })
    };
    let plans = [
        ("train", train_recipe(true, seed(p, SEED_TRAIN_MIX)), &train_noise, &train_irs),
        ("valid", train_recipe(false, seed(p, SEED_VALID_MIX)), &train_noise, &train_irs),
        (
            "test",
            Recipe::Test(TestRecipe {
                noise_tags: test_noise.tags(),
                seed: seed(p, SEED_TEST_MIX),
            }),
            &test_noise,
            &test_irs,
        ),
    ];
    for (split, recipe, noise, irs) in plans {
        let src = Manifest::load(&p.path(&format!("corpus/{split}.tsv")))?;
        let out = p.path(&format!("aug/{split}"));
        let m = augment_corpus(&src, &recipe, noise, irs, &out)?;
        m.save(&out.join("manifest.tsv"))?;
    }
    Ok(())
}

fn extract(p: &Pipeline) -> Result<()> {
    let enc = PseudoEncoder::new(p.config().ssl.clone())?;
    let mut jobs: Vec<(std::path::PathBuf, std::path::PathBuf)> = Vec::new();
    let corpus = Manifest::load(&p.path("corpus/manifest.tsv"))?;
    mkdir(&p.path("features/clean"))?;
    for e in &corpus.entries {
        jobs.push((e.wav_path.clone(), p.path(&format!("features/clean/{}.sslf", e.id))));
    }
    for split in SPLITS {
        let m = Manifest::load(&p.path(&format!("aug/{split}/manifest.tsv")))?;
        mkdir(&p.path(&format!("features/{split}")))?;
        for e in &m.entries {
            jobs.push((e.wav_path.clone(), p.path(&format!("features/{split}/{}.sslf", e.id))));
        }
    }
    jobs.par_iter().try_for_each(|(wav, out)| {
        let w = read_wav(wav)?;
        dump_features(&enc.extract(&w, None)?, out)
    })
}

fn train_kmeans(p: &Pipeline) -> Result<()> {
    let q = &p.config().quantizer;
    let mut ids: Vec<String> = Manifest::load(&p.path("corpus/train.tsv"))?.entries.into_iter().map(|e| e.id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed(p, SEED_KMEANS));
    ids.shuffle(&mut rng);
    let take = ((ids.len() as f64 * q.subset_fraction).ceil() as usize).clamp(1, ids.len());
    ids.truncate(take);
    ids.sort();
    let mut rows = Vec::new();
    let mut dim = 0;
    for id in &ids {
        let f = load_features(&p.path(&format!("features/clean/{id}.sslf")))?;
        let layer = crate::pseudo_ssl::select_layer(&f, q.layer_index)?;
        dim = layer.cols();
        rows.extend_from_slice(layer.data());
    }
    let data = Tensor::matrix(rows.len() / dim.max(1), dim, rows)?;
    let cb = train_kmeans_best_of(&data, q.k, q.max_iters, rng.random(), q.restarts, q.layer_index)?;
    mkdir(&p.path("kmeans"))?;
    save_codebook(&cb, &p.path("kmeans/codebook.kmns"))?;
    let trace = cb.meta.as_ref().map(|m| m.inertia_trace.clone()).unwrap_or_default();
    let mut t = String::new();
    for (i, v) in trace.iter().enumerate() {
        let _ = writeln!(t, "{i}\t{v}");
    }
    write(&p.path("kmeans/inertia.tsv"), &t)
}

fn quantize(p: &Pipeline) -> Result<()> {
    let cb = load_codebook(&p.path("kmeans/codebook.kmns"))?;
    let layer = cb.layer_index();
    let units_of = |path: &Path| -> Result<Vec<usize>> {
        let f = load_features(path)?;
        assign_layer(crate::pseudo_ssl::select_layer(&f, layer)?, layer, &cb)
    };
    let corpus = Manifest::load(&p.path("corpus/manifest.tsv"))?;
    let clean: Vec<UnitSequence> = corpus
        .entries
        .par_iter()
        .map(|e| Ok(UnitSequence::new(e.id.clone(), units_of(&p.path(&format!("features/clean/{}.sslf", e.id)))?)))
        .collect::<Result<_>>()?;
    mkdir(&p.path("units"))?;
    save_units(&clean, &p.path("units/clean.units"))?;
    let dedup: Vec<UnitSequence> = clean.iter().map(crate::quantizer::deduplicate).collect();
    save_units(&dedup, &p.path("units/clean.dedup.units"))?;
    let test = Manifest::load(&p.path("aug/test/manifest.tsv"))?;
    let raw: Vec<UnitSequence> = test
        .entries
        .par_iter()
        .map(|e| {
            let u = units_of(&p.path(&format!("features/test/{}.sslf", e.id)))?;
            Ok(UnitSequence {
                utt_id: e.id.clone(),
                units: dedup_units(&u),
                deduplicated: true,
            })
        })
        .collect::<Result<_>>()?;
    save_units(&raw, &p.path("units/test_raw.dedup.units"))
}

fn unit_map(path: &Path) -> Result<HashMap<String, Vec<usize>>> {
    Ok(load_units(path)?.into_iter().map(|s| (s.utt_id, s.units)).collect())
}

fn load_examples(p: &Pipeline, split: &str, targets: &HashMap<String, Vec<usize>>) -> Result<Vec<TrainingExample>> {
    let m = Manifest::load(&p.path(&format!("aug/{split}/manifest.tsv")))?;
    m.entries
        .par_iter()
        .map(|e| {
            let target = targets
                .get(e.source_id())
                .ok_or_else(|| Error::MissingTarget(e.id.clone()))?
                .clone();
            Ok(TrainingExample {
                utt_id: e.id.clone(),
                features: load_features(&p.path(&format!("features/{split}/{}.sslf", e.id)))?,
                target,
            })
        })
        .collect()
}

fn train_options(p: &Pipeline, decode_ctc_weight: f64) -> TrainOptions {
    let c = p.config();
    TrainOptions {
        epochs: c.train.epochs,
        batch_size: c.train.batch_size,
        schedule: c.train.schedule,
        adam: AdamConfig::default(),
        clip_norm: c.train.clip_norm,
        seed: seed(p, SEED_TRAIN),
        valid_decode: BeamOptions {
            beam_size: c.decode.valid_beam_size,
            ctc_weight: decode_ctc_weight,
            max_len: None,
        },
    }
}

fn train_model(p: &Pipeline, cfg: DenoiserConfig, decode_ctc_weight: f64) -> Result<(DenoiserModel, TrainingLog)> {
    let targets = unit_map(&p.path("units/clean.dedup.units"))?;
    let train = load_examples(p, "train", &targets)?;
    let valid = load_examples(p, "valid", &targets)?;
    let mut model = DenoiserModel::new(cfg)?;
    let log = train_denoiser(&mut model, &train, &valid, &train_options(p, decode_ctc_weight))?;
    Ok((model, log))
}

fn train(p: &Pipeline) -> Result<()> {
    let (model, log) = train_model(p, p.config().denoiser_config(), p.config().decode.ctc_weight)?;
    mkdir(&p.path("model"))?;
    model.save(&p.path("model/denoiser.ckpt"))?;
    log.save(&p.path("model/train_log.tsv"))
}

fn beam(p: &Pipeline) -> BeamOptions {
    BeamOptions {
        beam_size: p.config().decode.beam_size,
        ctc_weight: p.config().decode.ctc_weight,
        max_len: None,
    }
}

fn decode_split(model: &DenoiserModel, p: &Pipeline, opts: &BeamOptions) -> Result<Vec<UnitSequence>> {
    let m = Manifest::load(&p.path("aug/test/manifest.tsv"))?;
    m.entries
        .par_iter()
        .map(|e| {
            let f = load_features(&p.path(&format!("features/test/{}.sslf", e.id)))?;
            Ok(UnitSequence {
                utt_id: e.id.clone(),
                units: dedup_units(&beam_search_decode(model, &f, opts)?),
                deduplicated: true,
            })
        })
        .collect()
}

fn decode(p: &Pipeline) -> Result<()> {
    let model = DenoiserModel::load(&p.path("model/denoiser.ckpt"))?;
    let hyps = decode_split(&model, p, &beam(p))?;
    mkdir(&p.path("decode"))?;
    save_units(&hyps, &p.path("decode/test.dedup.units"))
}

/// Pairs every test record with its hypothesis (looked up by record id, then
/// by source id) and the clean reference of its source.
fn eval_pairs(p: &Pipeline, hyps: &HashMap<String, Vec<usize>>) -> Result<Vec<EvalPair>> {
    let refs = unit_map(&p.path("units/clean.dedup.units"))?;
    let m = Manifest::load(&p.path("aug/test/manifest.tsv"))?;
    m.entries
        .iter()
        .map(|e| {
            let hyp = hyps
                .get(&e.id)
                .or_else(|| hyps.get(e.source_id()))
                .ok_or_else(|| Error::MissingTarget(e.id.clone()))?;
            let reference = refs.get(e.source_id()).ok_or_else(|| Error::MissingTarget(e.source_id().into()))?;
            Ok(EvalPair {
                utt_id: e.id.clone(),
                condition: e.condition.clone(),
                hyp: hyp.clone(),
                reference: reference.clone(),
            })
        })
        .collect()
}

pub(super) fn evaluate_hyp_file(p: &Pipeline, hyp: &Path) -> Result<ConditionReport> {
    let hyps = unit_map(hyp)?;
    condition_report(&eval_pairs(p, &hyps)?, StdMode::Conservative)
}

/// Raw-unit versus denoiser error rates per bucket, with the pooled noisy
/// bucket (Noise-H and Noise-L together).
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub rows: Vec<(String, f64, f64)>,
}

impl EvalSummary {
    fn from_reports(raw: &ConditionReport, den: &ConditionReport) -> Self {
        let pooled = |r: &ConditionReport| {
            let cells: Vec<&CellStats> = [Bucket::NoiseH, Bucket::NoiseL].iter().filter_map(|&b| r.get(b)).collect();
            let e: usize = cells.iter().map(|c| c.errors).sum();
            let n: usize = cells.iter().map(|c| c.n_ref_units).sum();
            if n == 0 {
                f64::NAN
            } else {
                100.0 * e as f64 / n as f64
            }
        };
        let cell = |r: &ConditionReport, b: Bucket| r.get(b).map_or(f64::NAN, |c| c.uer);
        let mut rows = vec![("noisy".to_string(), pooled(raw), pooled(den))];
        for b in Bucket::ALL {
            rows.push((b.name().to_string(), cell(raw, b), cell(den, b)));
        }
        rows.push(("all".into(), raw.overall.uer, den.overall.uer));
        Self { rows }
    }

    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        self.rows.iter().find(|r| r.0 == name).map(|r| (r.1, r.2))
    }

    /// `1 − denoised / raw`; `None` for an unknown bucket or a raw UER of zero.
    pub fn relative_reduction(&self, name: &str) -> Option<f64> {
        self.get(name).filter(|&(r, _)| r > 0.0).map(|(r, d)| 1.0 - d / r)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("bucket\traw_uer\tdenoised_uer\trelative_reduction\n");
        for (n, r, d) in &self.rows {
            let _ = writeln!(out, "{n}\t{r:.6}\t{d:.6}\t{:.6}", 1.0 - d / r);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::parse(i + 1, "expected 4 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(i + 1, format!("bad number {s:?}")));
            rows.push((f[0].to_string(), num(f[1])?, num(f[2])?));
        }
        Ok(Self { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

fn eval(p: &Pipeline) -> Result<()> {
    let raw = evaluate_hyp_file(p, &p.path("units/test_raw.dedup.units"))?;
    let den = evaluate_hyp_file(p, &p.path("decode/test.dedup.units"))?;
    mkdir(&p.path("eval"))?;
    write(&p.path("eval/raw.tsv"), &raw.to_records())?;
    write(&p.path("eval/denoised.tsv"), &den.to_records())?;
    let mut table = raw.render_table("Raw units");
    table.push_str(den.render_table("Denoiser").lines().nth(1).unwrap_or(""));
    table.push('\n');
    write(&p.path("eval/table.txt"), &table)?;
    write(&p.path("eval/summary.tsv"), &EvalSummary::from_reports(&raw, &den).to_text())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptPoint {
    pub recordings: usize,
    pub uer: f64,
}

impl AdaptPoint {
    pub fn parse_series(text: &str) -> Result<Vec<AdaptPoint>> {
        text.lines()
            .enumerate()
            .skip(1)
            .map(|(i, l)| {
                let (a, b) = l.split_once('\t').ok_or_else(|| Error::parse(i + 1, "expected 2 fields"))?;
                Ok(AdaptPoint {
                    recordings: a.parse().map_err(|_| Error::parse(i + 1, "bad count"))?,
                    uer: b.parse().map_err(|_| Error::parse(i + 1, "bad number"))?,
                })
            })
            .collect()
    }
}

fn pooled_uer(model: &DenoiserModel, data: &[TrainingExample], opts: &BeamOptions) -> Result<f64> {
    let counts: Vec<(usize, usize)> = data
        .par_iter()
        .map(|ex| {
            let hyp = beam_search_decode(model, &ex.features, opts)?;
            let a = crate::metrics::unit_alignment(&hyp, &ex.target);
            Ok((a.errors(), a.ref_length))
        })
        .collect::<Result<_>>()?;
    let e: usize = counts.iter().map(|c| c.0).sum();
    let n: usize = counts.iter().map(|c| c.1).sum();
    if n == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(100.0 * e as f64 / n as f64)
}

fn mixed_example(
    enc: &PseudoEncoder,
    id: String,
    clean: &Waveform,
    noise: &Waveform,
    snr: f64,
    rng: &mut ChaCha8Rng,
    target: &[usize],
) -> Result<TrainingExample> {
    let m = mix_at_snr(clean, noise, snr, rng)?;
    Ok(TrainingExample {
        utt_id: id,
        features: enc.extract(&m.waveform, None)?,
        target: target.to_vec(),
    })
}

/// Finetunes copies of the trained model on 1..=N target-environment
/// recordings, each turned into `utterances_per_recording` mixtures with
/// training utterances, and scores them on held-out test utterances mixed
/// with an unseen recording of the same environment.
fn adapt(p: &Pipeline) -> Result<()> {
    let c = p.config();
    let a = &c.adapt;
    let enc = PseudoEncoder::new(c.ssl.clone())?;
    let targets = unit_map(&p.path("units/clean.dedup.units"))?;
    let load_split = |split: &str| -> Result<Vec<(String, Waveform)>> {
        Manifest::load(&p.path(&format!("corpus/{split}.tsv")))?
            .entries
            .into_iter()
            .map(|e| Ok((e.id.clone(), read_wav(&e.wav_path)?)))
            .collect()
    };
    let train_utts = load_split("train")?;
    let test_utts = load_split("test")?;
    let target_of = |id: &str| targets.get(id).ok_or_else(|| Error::MissingTarget(id.to_string()));
    let env_seed = seed(p, SEED_ENV);

    let per_recording: Vec<Vec<TrainingExample>> = (0..a.max_recordings)
        .into_par_iter()
        .map(|r| {
            let rec = synth_environment(&a.environment, env_seed, r as u64, a.recording_len_s)?;
            let mut rng = utterance_rng(seed(p, SEED_ADAPT_MIX), &format!("rec{r}"));
            (0..a.utterances_per_recording)
                .map(|j| {
                    let (id, w) = &train_utts[rng.random_range(0..train_utts.len())];
                    let snr = rng.random_range(a.snr_low_db..=a.snr_high_db);
                    mixed_example(&enc, format!("rec{r}_{j}_{id}"), w, &rec, snr, &mut rng, target_of(id)?)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let held_out = synth_environment(&a.environment, env_seed, 1000 + a.max_recordings as u64, a.recording_len_s)?;
    let eval_set: Vec<TrainingExample> = test_utts
        .par_iter()
        .flat_map_iter(|(id, w)| (0..a.eval_mixtures).map(move |m| (id, w, m)))
        .map(|(id, w, m)| {
            let mut rng = utterance_rng(seed(p, SEED_ADAPT_EVAL), &format!("{id}_{m}"));
            mixed_example(&enc, format!("{id}_{m}"), w, &held_out, a.eval_snr_db, &mut rng, target_of(id)?)
        })
        .collect::<Result<_>>()?;

    let base = DenoiserModel::load(&p.path("model/denoiser.ckpt"))?;
    let opts = beam(p);
    let mut series = vec![AdaptPoint {
        recordings: 0,
        uer: pooled_uer(&base, &eval_set, &opts)?,
    }];
    mkdir(&p.path("adapt"))?;
    for n in 1..=a.max_recordings {
        let data: Vec<TrainingExample> = per_recording[..n].iter().flatten().cloned().collect();
        let mut model = base.clone();
        finetune_encoder(
            &mut model,
            &data,
            &FinetuneOptions {
                steps: a.epochs * data.len().div_ceil(a.batch_size),
                lr: a.lr,
                batch_size: a.batch_size,
                clip_norm: c.train.clip_norm,
                seed: seed(p, SEED_FINETUNE),
            },
        )?;
        series.push(AdaptPoint {
            recordings: n,
            uer: pooled_uer(&model, &eval_set, &opts)?,
        });
        model.save(&p.path(&format!("adapt/model_{n}.ckpt")))?;
    }
    let mut t = String::from("recordings\tuer\n");
    for pt in &series {
        let _ = writeln!(t, "{}\t{:.6}", pt.recordings, pt.uer);
    }
    write(&p.path("adapt/series.tsv"), &t)
}

fn ablate(p: &Pipeline) -> Result<()> {
    let base = p.config().denoiser_config();
    mkdir(&p.path("ablate"))?;
    let mut table = String::new();
    let mut records = String::from("variant\tbucket\tuer\tstd\terrors\tn_ref_units\tn_utts\n");
    for (i, name) in p.config().ablate_variants.iter().enumerate() {
        let (mut cfg, alpha) = ablation_variant(name, &base)?;
        if cfg.variant == crate::denoiser::Variant::Adapter {
            cfg.ssl = Some(p.config().ssl.clone());
        }
        let (model, log) = train_model(p, cfg, alpha)?;
        log.save(&p.path(&format!("ablate/{name}.log.tsv")))?;
        let opts = BeamOptions {
            ctc_weight: alpha,
            ..beam(p)
        };
        let hyps: HashMap<String, Vec<usize>> =
            decode_split(&model, p, &opts)?.into_iter().map(|s| (s.utt_id, s.units)).collect();
        let report = condition_report(&eval_pairs(p, &hyps)?, StdMode::Conservative)?;
        let rendered = report.render_table(name);
        table.push_str(if i == 0 { &rendered } else { rendered.lines().nth(1).unwrap_or("") });
        if i > 0 {
            table.push('\n');
        }
        for line in report.to_records().lines() {
            let _ = writeln!(records, "{name}\t{line}");
        }
    }
    write(&p.path("ablate/table.txt"), &table)?;
    write(&p.path("ablate/results.tsv"), &records)
}

/// Overall error rate per variant from `ablate/results.tsv`.
pub fn ablation_overall(text: &str) -> Vec<(String, f64)> {
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f.len() > 2 && f[1] == "all").then(|| (f[0].to_string(), f[2].parse().unwrap_or(f64::NAN)))
        })
        .collect()
}

fn report(p: &Pipeline) -> Result<()> {
    let read = |rel: &str| std::fs::read_to_string(p.path(rel)).map_err(|e| Error::io(p.path(rel), e));
    let mut out = String::from("# Unit denoising report\n\n");
    let log = TrainingLog::parse(&read("model/train_log.tsv")?)?;
    if let Some(b) = log.best() {
        let _ = writeln!(
            out,
            "Best validation epoch {} of {}: loss {:.3}, UER {:.1}%.\n",
            b.epoch,
            log.records.len().saturating_sub(1),
            b.valid_loss,
            100.0 * b.valid_uer
        );
    }
    out.push_str("## Test conditions (UER %, ±1 binomial std)\n\n```\n");
    out.push_str(&read("eval/table.txt")?);
    out.push_str("```\n\n");
    let summary = EvalSummary::parse(&read("eval/summary.tsv")?)?;
    out.push_str("| bucket | raw | denoised | relative reduction |\n|---|---|---|---|\n");
    for (n, r, d) in &summary.rows {
        let rel = summary.relative_reduction(n).map_or("n/a".into(), |x| format!("{:.1}%", 100.0 * x));
        let _ = writeln!(out, "| {n} | {r:.1} | {d:.1} | {rel} |");
    }
    if p.path("adapt/series.tsv").exists() {
        let a = &p.config().adapt;
        let _ = write!(
            out,
            "\n## Test-time adaptation ({} environment, evaluated at {} dB)\n\n| recordings | UER |\n|---|---|\n",
            a.environment, a.eval_snr_db
        );
        for pt in AdaptPoint::parse_series(&read("adapt/series.tsv")?)? {
            let _ = writeln!(out, "| {} | {:.1} |", pt.recordings, pt.uer);
        }
    }
    if p.path("ablate/table.txt").exists() {
        out.push_str("\n## Ablation\n\n```\n");
        out.push_str(&read("ablate/table.txt")?);
        out.push_str("```\n");
    }
    write(&p.path("report.md"), &out)
}
