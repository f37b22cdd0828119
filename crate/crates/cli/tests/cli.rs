use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "run.seed = 3
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
";

fn unitden(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unitden"))
        .arg("--config")
        .arg(dir.join("c.conf"))
        .arg("--workdir")
        .arg(dir.join("work"))
        .args(args)
        .output()
        .unwrap()
}

fn setup(conf: &str) -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.conf"), conf).unwrap();
    d
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let d = setup("corpus.num_utterances = 10\n");
    let out = unitden(d.path(), &["synth"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.seed"));

    let d = setup(&format!("{TINY}ablate.variants = bogus\n"));
    assert_eq!(unitden(d.path(), &["show-config"]).status.code(), Some(2));
}

#[test]
fn missing_upstream_exits_3() {
    let d = setup(TINY);
    let out = unitden(d.path(), &["quantize"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("quantize"));
}

#[test]
fn stages_run_and_eval_accepts_a_hypothesis_file() {
    let d = setup(TINY);
    for stage in ["synth", "augment", "extract", "train-kmeans", "quantize"] {
        let out = unitden(d.path(), &[stage]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let again = unitden(d.path(), &["synth"]);
    assert!(String::from_utf8_lossy(&again.stderr).contains("up to date"));
    let hyp = d.path().join("work/units/clean.dedup.units");
    let out = unitden(d.path(), &["eval", "--hyp", hyp.to_str().unwrap()]);
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout);
    assert_eq!(table.matches(" 0.0 ±").count(), 5, "{table}");
}

#[test]
fn seed_override_changes_the_effective_config() {
    let d = setup(TINY);
    let out = unitden(d.path(), &["--seed-override", "99", "--threads", "1", "show-config"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("run.seed = 99"));
}
