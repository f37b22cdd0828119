use std::path::Path;

use proptest::prelude::*;
use unitden::pipeline::{hash_path, Pipeline, PipelineConfig, RunManifest, Stage, StageStatus, LOCK_FILE};
use unitden::Error;

const TINY: &str = "
run.seed = 3
corpus.num_utterances = 16
corpus.num_unit_types = 4
corpus.min_units = 3
corpus.max_units = 4
corpus.num_valid = 4
corpus.num_test = 4
augment.noise_duration_s = 2
augment.num_irs = 2
ssl.num_layers = 2
ssl.dim = 8
quantizer.k = 4
quantizer.layer_index = 1
quantizer.restarts = 1
denoiser.encoder_layers = 1
denoiser.decoder_layers = 1
denoiser.model_dim = 8
denoiser.heads = 2
denoiser.ffn_dim = 8
train.epochs = 1
train.batch_size = 8
train.warmup_steps = 2
decode.beam_size = 2
adapt.max_recordings = 2
adapt.recording_len_s = 2
adapt.utterances_per_recording = 3
adapt.eval_mixtures = 1
adapt.batch_size = 4
ablate.variants = encoder_only,encoder_decoder
";

fn tiny() -> PipelineConfig {
    PipelineConfig::parse(TINY).unwrap()
}

fn run_through(p: &Pipeline, last: Stage) {
    for s in Stage::RUN {
        p.run_stage(s).unwrap();
        if s == last {
            break;
        }
    }
}

#[test]
fn tiny_pipeline_end_to_end() {
    let d = tempfile::tempdir().unwrap();
    let p = Pipeline::open(d.path(), tiny()).unwrap();
    let mut seen = Vec::new();
    p.run_all(|s, st| seen.push((s, st))).unwrap();
    assert_eq!(seen.len(), Stage::RUN.len());
    assert!(seen.iter().all(|(_, st)| *st == StageStatus::Ran));
    for rel in ["eval/raw.tsv", "eval/denoised.tsv", "eval/summary.tsv", "adapt/series.tsv", "model/train_log.tsv"] {
        assert!(p.path(rel).is_file(), "{rel}");
    }
    let series = std::fs::read_to_string(p.path("adapt/series.tsv")).unwrap();
    assert_eq!(series.lines().count(), 1 + 3);
    let report = std::fs::read_to_string(p.path("report.md")).unwrap();
    assert!(report.contains("Raw units") && report.contains("Denoiser") && report.contains("recordings"));

    // a second run does nothing
    let mut again = Vec::new();
    p.run_all(|s, st| again.push((s, st))).unwrap();
    assert!(again.iter().all(|(_, st)| *st == StageStatus::UpToDate));

    p.run_stage(Stage::Ablate).unwrap();
    let table = std::fs::read_to_string(p.path("ablate/table.txt")).unwrap();
    assert!(table.contains("encoder_only") && table.contains("encoder_decoder"));
    // ablation output becomes a report input
    assert_eq!(p.run_stage(Stage::Report).unwrap(), StageStatus::Ran);
    assert!(std::fs::read_to_string(p.path("report.md")).unwrap().contains("Ablation"));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let p = Pipeline::open(d, tiny()).unwrap();
        run_through(&p, Stage::Decode);
    }
    let ma = RunManifest::load(a.path()).unwrap();
    let mb = RunManifest::load(b.path()).unwrap();
    assert_eq!(ma, mb);

    // forcing a stage to run again reproduces its outputs exactly
    let p = Pipeline::open(a.path(), tiny()).unwrap();
    let before = hash_path(&p.path("units")).unwrap();
    let mut m = RunManifest::load(a.path()).unwrap();
    m.stages.remove("quantize");
    m.save(a.path()).unwrap();
    assert_eq!(p.run_stage(Stage::Quantize).unwrap(), StageStatus::Ran);
    assert_eq!(hash_path(&p.path("units")).unwrap(), before);
}

#[test]
fn config_change_reruns_only_affected_stages() {
    let d = tempfile::tempdir().unwrap();
    {
        let p = Pipeline::open(d.path(), tiny()).unwrap();
        run_through(&p, Stage::TrainKmeans);
    }
    let mut cfg = tiny();
    cfg.quantizer.max_iters = 7;
    let p = Pipeline::open(d.path(), cfg).unwrap();
    assert_eq!(p.run_stage(Stage::Synth).unwrap(), StageStatus::UpToDate);
    assert_eq!(p.run_stage(Stage::Extract).unwrap(), StageStatus::UpToDate);
    assert_eq!(p.run_stage(Stage::TrainKmeans).unwrap(), StageStatus::Ran);
}

#[test]
fn missing_and_stale_inputs_are_named() {
    let d = tempfile::tempdir().unwrap();
    let p = Pipeline::open(d.path(), tiny()).unwrap();
    match p.run_stage(Stage::Decode) {
        Err(Error::MissingArtifact { stage, path }) => {
            assert_eq!(stage, "decode");
            assert!(path.ends_with("aug"));
        }
        other => panic!("{other:?}"),
    }
    run_through(&p, Stage::Augment);
    std::fs::write(p.path("corpus/train.tsv"), "").unwrap();
    match p.run_stage(Stage::Extract) {
        Err(Error::StaleInput { stage, producer, .. }) => {
            assert_eq!(stage, "extract");
            assert_eq!(producer, "synth");
        }
        other => panic!("{other:?}"),
    }
    // regenerating the producer restores identical bytes, so consumers are fine
    assert_eq!(p.run_stage(Stage::Synth).unwrap(), StageStatus::Ran);
    assert_eq!(p.run_stage(Stage::Augment).unwrap(), StageStatus::UpToDate);
    p.run_stage(Stage::Extract).unwrap();
    // a changed upstream output makes the consumer's inputs stale
    std::fs::write(p.path("aug/test/manifest.tsv"), "").unwrap();
    match p.run_stage(Stage::Quantize) {
        Err(Error::StaleInput { producer, .. }) => assert_eq!(producer, "augment"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn reference_units_as_hypothesis_score_zero() {
    let d = tempfile::tempdir().unwrap();
    let p = Pipeline::open(d.path(), tiny()).unwrap();
    run_through(&p, Stage::Quantize);
    let r = p.evaluate_file(&p.path("units/clean.dedup.units")).unwrap();
    assert_eq!(r.overall.errors, 0);
    assert_eq!(r.overall.uer, 0.0);
    assert!(r.cells.iter().all(|(_, c)| c.uer == 0.0));
    assert_eq!(r.cells.len(), 4);
}

#[test]
fn workdir_is_locked() {
    let d = tempfile::tempdir().unwrap();
    let p = Pipeline::open(d.path(), tiny()).unwrap();
    assert!(d.path().join(LOCK_FILE).exists());
    assert!(matches!(Pipeline::open(d.path(), tiny()), Err(Error::Locked(_))));
    drop(p);
    assert!(!d.path().join(LOCK_FILE).exists());
    Pipeline::open(d.path(), tiny()).unwrap();
}

#[test]
fn bundled_config_parses_and_round_trips() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.conf");
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.corpus.num_utterances, 200);
    assert_eq!(cfg.corpus.num_unit_types, 8);
    assert_eq!(cfg.quantizer.k, 16);
    assert_eq!(PipelineConfig::parse(&cfg.to_text()).unwrap(), cfg);
}

#[test]
fn invalid_values_name_their_field() {
    let field = |extra: &str| match PipelineConfig::parse(&format!("{TINY}{extra}\n")) {
        Err(Error::Config { field, .. }) => field,
        other => panic!("{other:?}"),
    };
    assert_eq!(field("decode.ctc_weight = 2"), "decode.ctc_weight");
    assert_eq!(field("quantizer.subset_fraction = 0"), "quantizer.subset_fraction");
    assert_eq!(field("quantizer.layer_index = 9"), "quantizer.layer_index");
    assert_eq!(field("train.clip_norm = nan"), "train.clip_norm");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_text_is_a_fixed_point(
        seed in any::<u64>(),
        k in 2usize..64,
        lr in 1e-6f64..1.0,
        clip in proptest::option::of(0.1f64..100.0),
        weight in 0.0f64..=1.0,
        variants in proptest::sample::subsequence(
            vec!["encoder_only", "decoder_only", "encoder_decoder", "adapter_encoder_decoder"], 1..=4),
    ) {
        let mut cfg = tiny();
        cfg.seed = seed;
        cfg.quantizer.k = k;
        cfg.train.schedule.peak_lr = lr;
        cfg.train.clip_norm = clip;
        cfg.decode.ctc_weight = weight;
        cfg.ablate_variants = variants.into_iter().map(String::from).collect();
        let text = cfg.to_text();
        let back = PipelineConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_text(), text);
    }
}
