//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unitden::audio::{Condition, Waveform};
use unitden::augment::{convolve, convolve_rir, measure_snr, mix_at_snr, ImpulseResponse};
use unitden::denoiser::ctc::{ctc_loss, ctc_loss_and_grad};
use unitden::denoiser::*;
use unitden::metrics::*;
use unitden::pipeline::{ablation_overall, AdaptPoint, EvalSummary, Pipeline, PipelineConfig, Stage};
use unitden::pseudo_ssl::{LayerStackFeatures, PseudoEncoder, PseudoEncoderConfig};
use unitden::quantizer::{dedup_units, train_kmeans, train_kmeans_best_of};
use unitden::substrate::tensor::log_softmax;
use unitden::substrate::{grad_check, randn, GradCheckOptions, ParamStore, Tape, Tensor, Var};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let e = start.elapsed();
    ensure(e < limit, || format!("took {e:.1?}, limit {limit:?}"))?;
    Ok(e)
}

// ---------------------------------------------------------------- 1

fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if k != blank && prev != Some(k) {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// `-log Σ p(path)` over all `V^T` paths collapsing to `target`.
fn enumerated_ctc(lp: &Tensor, target: &[usize], blank: usize) -> f64 {
    let (t, v) = lp.dims2();
    let mut total = 0.0;
    for code in 0..v.pow(t as u32) {
        let mut c = code;
        let mut path = Vec::with_capacity(t);
        let mut logp = 0.0;
        for i in 0..t {
            path.push(c % v);
            logp += lp.get2(i, c % v);
            c /= v;
        }
        if collapse(&path, blank) == target {
            total += logp.exp();
        }
    }
    -total.ln()
}

fn random_log_probs(t: usize, v: usize, rng: &mut impl Rng) -> Tensor {
    log_softmax(
        &Tensor::matrix(t, v, (0..t * v).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap(),
        1,
    )
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut checked) = (0.0f64, 0);
    for _ in 0..200 {
        let t = rng.random_range(1..=6);
        let v = rng.random_range(2..=3);
        let len = rng.random_range(0..=3);
        let lp = random_log_probs(t, v, &mut rng);
        let target: Vec<usize> = (0..len).map(|_| rng.random_range(1..v)).collect();
        let oracle = enumerated_ctc(&lp, &target, 0);
        match ctc_loss(&lp, &target, 0) {
            Ok(l) => {
                worst = worst.max((l - oracle).abs());
                checked += 1;
            }
            Err(unitden::Error::TargetTooLong { .. }) => {
                ensure(oracle.is_infinite(), || format!("rejected reachable target {target:?}"))?
            }
            Err(e) => return Err(e.to_string()),
        }
    }
    ensure(worst < 1e-9, || format!("max |Δ| {worst:e}"))?;
    let e = within(Duration::from_secs(5), start)?;
    Ok(format!("200 instances ({checked} reachable), max |Δ| {worst:.1e}, {e:.2?}"))
}

// ---------------------------------------------------------------- 2

fn probe(tape: &mut Tape<'_>, x: Var, seed: u64) -> unitden::Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(randn(&shape, 1.0, &mut rng));
    let m = tape.mul(x, w)?;
    Ok(tape.sum(m))
}

fn op_errors(r: usize, c: usize, k: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let a = s.register("a", randn(&[r, c], 1.0, &mut rng));
    let b = s.register("b", randn(&[c, k], 1.0, &mut rng));
    let a2 = s.register("a2", randn(&[r, c], 1.0, &mut rng));
    let row = s.register("row", randn(&[c], 1.0, &mut rng));
    let bt = s.register("bt", randn(&[k, r], 1.0, &mut rng));
    let g3 = s.register("g3", randn(&[3 * c], 1.0, &mut rng));
    let ids: Vec<usize> = (0..5).map(|i| (i * 7) % r).collect();
    let tg: Vec<usize> = (0..r).map(|i| i % c).collect();
    let ctc_target: Vec<usize> = (1..c.min(3)).collect();
    type Op<'a> = Box<dyn Fn(&mut Tape<'_>) -> unitden::Result<Var> + 'a>;
    let ops: Vec<(&'static str, Op)> = vec![
        ("matmul", Box::new(|t| { let (x, y) = (t.param(a), t.param(b)); let o = t.matmul(x, y)?; probe(t, o, 1) })),
        ("matmul_t", Box::new(|t| { let (x, y) = (t.param(a), t.param(bt)); let o = t.matmul_t(x, y, true, true)?; probe(t, o, 2) })),
        ("add", Box::new(|t| { let (x, y) = (t.param(a), t.param(a2)); let o = t.add(x, y)?; probe(t, o, 3) })),
        ("mul", Box::new(|t| { let (x, y) = (t.param(a), t.param(a2)); let o = t.mul(x, y)?; probe(t, o, 4) })),
        ("add_row", Box::new(|t| { let (x, y) = (t.param(a), t.param(row)); let o = t.add_row(x, y)?; probe(t, o, 5) })),
        ("mul_row", Box::new(|t| { let (x, y) = (t.param(a), t.param(row)); let o = t.mul_row(x, y)?; probe(t, o, 6) })),
        ("scale", Box::new(|t| { let x = t.param(a); let o = t.scale(x, -1.7); probe(t, o, 7) })),
        ("softmax", Box::new(|t| { let x = t.param(a); let o = t.softmax(x, 1)?; probe(t, o, 8) })),
        ("softmax_axis0", Box::new(|t| { let x = t.param(a); let o = t.softmax(x, 0)?; probe(t, o, 9) })),
        ("log_softmax", Box::new(|t| { let x = t.param(a); let o = t.log_softmax(x, 1)?; probe(t, o, 10) })),
        ("tanh", Box::new(|t| { let x = t.param(a); let o = t.tanh(x); probe(t, o, 11) })),
        ("gelu", Box::new(|t| { let x = t.param(a); let o = t.gelu(x); probe(t, o, 12) })),
        ("layer_norm", Box::new(|t| { let (x, y) = (t.param(a), t.param(a2)); let w = t.concat(&[x, y, x], 1)?; let o = t.layer_norm(w, 1e-5); probe(t, o, 13) })),
        ("layer_norm_affine", Box::new(|t| { let (x, y, g) = (t.param(a), t.param(a2), t.param(g3)); let w = t.concat(&[x, y, x], 1)?; let o = t.layer_norm_affine(w, g, g, 1e-5)?; probe(t, o, 14) })),
        ("embedding", Box::new(|t| { let x = t.param(a); let o = t.embedding(x, &ids)?; probe(t, o, 15) })),
        ("concat", Box::new(|t| { let (x, y) = (t.param(a), t.param(a2)); let o = t.concat(&[x, y], 0)?; probe(t, o, 16) })),
        ("slice", Box::new(|t| { let x = t.param(a); let o = t.slice(x, 1, c / 3, c - c / 3)?; probe(t, o, 17) })),
        ("transpose", Box::new(|t| { let x = t.param(a); let o = t.transpose(x); probe(t, o, 18) })),
        ("mean", Box::new(|t| { let x = t.param(a); let m = t.mean(x); let o = t.tanh(m); Ok(t.sum(o)) })),
        ("dropout", Box::new(|t| { let x = t.param(a); let o = t.dropout(x, 0.5); probe(t, o, 19) })),
        ("weighted_sum", Box::new(|t| { let (w, x, y) = (t.param(row), t.param(a), t.param(a2)); let w2 = t.slice(w, 1, 0, 1)?; let w2 = t.concat(&[w2, w2], 1)?; let w2 = t.tanh(w2); let o = t.weighted_sum(w2, &[x, y])?; probe(t, o, 20) })),
        ("nll", Box::new(|t| { let x = t.param(a); let lp = t.log_softmax(x, 1)?; t.nll(lp, &tg) })),
        ("ctc_scalar_loss", Box::new(|t| {
            let x = t.param(a);
            let lp = t.log_softmax(x, 1)?;
            let (v, g) = ctc_loss_and_grad(t.value(lp), &ctc_target, 0)?;
            t.scalar_loss(lp, v, g)
        })),
    ];
    ops.into_iter()
        .map(|(name, f)| {
            if name == "ctc_scalar_loss" && (c < 2 || r < 2 * ctc_target.len() + 1) {
                return (name, 0.0);
            }
            let rep = grad_check(f, &mut s, GradCheckOptions::default()).unwrap();
            (name, rep.max_rel_err())
        })
        .collect()
}

fn tiny_denoiser(variant: Variant) -> DenoiserConfig {
    DenoiserConfig {
        variant,
        encoder_kind: EncoderKind::Transformer,
        encoder_layers: 1,
        decoder_layers: 1,
        model_dim: 8,
        heads: 2,
        ffn_dim: 8,
        ctc_weight: 0.3,
        dropout: 0.1,
        num_units: 3,
        input_layers: 3,
        input_dim: 8,
        adapter_bottleneck: 3,
        seed: 7,
        ssl: (variant == Variant::Adapter).then(|| PseudoEncoderConfig {
            num_layers: 2,
            dim: 8,
            ..Default::default()
        }),
    }
}

fn random_features(layers: usize, t: usize, d: usize, seed: u64) -> LayerStackFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LayerStackFeatures::new(
        (0..layers)
            .map(|_| Tensor::matrix(t, d, (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect(),
    )
    .unwrap()
}

fn perturb(model: &mut DenoiserModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = model.store_mut();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst_op = ("", 0.0f64);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..6 {
        let (r, c, k) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=8));
        for (name, e) in op_errors(r, c, k, seed) {
            ensure(e < 1e-4, || format!("{name} at {r}x{c}x{k}: rel err {e:e}"))?;
            if e > worst_op.1 {
                worst_op = (name, e);
            }
        }
    }
    let mut worst_model = 0.0f64;
    for variant in [Variant::External, Variant::Adapter] {
        let mut model = DenoiserModel::new(tiny_denoiser(variant)).unwrap();
        perturb(&mut model, 3);
        let shape = model.clone();
        let feats = random_features(3, 4, 8, 11);
        let target = [0, 2, 1];
        let opts = GradCheckOptions {
            tol: 1e-4,
            max_entries_per_param: usize::MAX,
            ..Default::default()
        };
        let rep = grad_check(|t| shape.loss(t, &feats, &target), model.store_mut(), opts).unwrap();
        ensure(rep.passed(), || format!("{variant}: {:?}", rep.failures().map(|p| &p.name).collect::<Vec<_>>()))?;
        if variant == Variant::Adapter {
            ensure(rep.params.iter().any(|p| p.name.starts_with("adapter.")), || "adapters not checked".into())?;
        }
        worst_model = worst_model.max(rep.max_rel_err());
    }
    let e = within(Duration::from_secs(60), start)?;
    Ok(format!(
        "ops worst {} {:.1e}; hybrid loss (external + adapter) worst {worst_model:.1e}; {e:.2?}",
        worst_op.0, worst_op.1
    ))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut flagged) = (0.0f64, 0);
    for _ in 0..100 {
        let n = rng.random_range(400..4000);
        let amp = rng.random_range(0.05..0.9);
        let clean = Waveform::new((0..n).map(|_| rng.random_range(-amp..amp)).collect()).unwrap();
        let noise = Waveform::new((0..n + 300).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let snr = rng.random_range(0.0..=20.0);
        let m = mix_at_snr(&clean, &noise, snr, &mut rng).map_err(|e| e.to_string())?;
        if m.rescaled {
            flagged += 1;
            continue;
        }
        worst = worst.max((measure_snr(&m.waveform, &clean).unwrap() - snr).abs());
    }
    ensure(worst <= 0.01, || format!("max |Δ| {worst} dB"))?;
    let e = within(Duration::from_secs(5), start)?;
    Ok(format!("100 mixtures, max |Δ| {worst:.1e} dB, {flagged} flagged as rescaled, {e:.2?}"))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=64);
        let m = rng.random_range(1..=8);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = convolve(&a, &h);
        ensure(got.len() == n + m - 1, || "wrong length".into())?;
        for (i, g) in got.iter().enumerate() {
            let direct: f64 = (0..n).filter(|&j| i >= j && i - j < m).map(|j| a[j] * h[i - j]).sum();
            worst = worst.max((g - direct).abs());
        }
    }
    ensure(worst < 1e-12, || format!("max |Δ| {worst:e}"))?;
    for _ in 0..20 {
        let clean = Waveform::new((0..500).map(|_| rng.random_range(-0.8..0.8)).collect()).unwrap();
        let delta = ImpulseResponse::new(vec![1.0], 16_000, "delta").unwrap();
        ensure(convolve_rir(&clean, &delta).unwrap() == clean, || "identity IR changed the input".into())?;
    }
    Ok(format!("200 random pairs, max |Δ| {worst:.1e}; identity IR exact"))
}

// ---------------------------------------------------------------- 5

fn best_two_partition(x: &Tensor) -> f64 {
    let (n, d) = x.dims2();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << n) - 1 {
        let mut total = 0.0;
        for side in [true, false] {
            let rows: Vec<usize> = (0..n).filter(|&i| (mask >> i & 1 == 1) == side).collect();
            for j in 0..d {
                let mean = rows.iter().map(|&i| x.get2(i, j)).sum::<f64>() / rows.len() as f64;
                total += rows.iter().map(|&i| (x.get2(i, j) - mean).powi(2)).sum::<f64>();
            }
        }
        best = best.min(total);
    }
    best
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut runs = 0;
    for seed in 0..100u64 {
        let n = rng.random_range(10..200);
        let d = rng.random_range(1..5);
        let k = rng.random_range(2..8);
        let x = Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let cb = train_kmeans(&x, k, 100, seed, 0).map_err(|e| e.to_string())?;
        let trace = cb.meta.unwrap().inertia_trace;
        ensure(trace.windows(2).all(|w| w[1] <= w[0]), || format!("trace rises: {trace:?}"))?;
        runs += 1;
    }
    let mut exact = 0;
    for seed in 0..30u64 {
        let n = rng.random_range(4..=12);
        let d = rng.random_range(1..=2);
        let x = Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(0.0..10.0)).collect()).unwrap();
        let opt = best_two_partition(&x);
        let cb = train_kmeans_best_of(&x, 2, 100, seed, 10, 0).map_err(|e| e.to_string())?;
        let fin = *cb.meta.unwrap().inertia_trace.last().unwrap();
        ensure((fin - opt).abs() <= 1e-9 * opt.max(1e-12), || format!("n={n}: {fin} vs optimum {opt}"))?;
        exact += 1;
    }
    Ok(format!("{runs} traces non-increasing; {exact}/30 best-of-10 runs at the exhaustive optimum"))
}

// ---------------------------------------------------------------- 6

fn joint_score(model: &DenoiserModel, feats: &LayerStackFeatures, seq: &[usize], alpha: f64) -> f64 {
    let cfg = model.config();
    let mut tape = Tape::new(model.store());
    let (s, lp) = model.forward_encode(&mut tape, feats).unwrap();
    let ctc_lp = tape.value(lp).clone();
    let mem = model.memory(&mut tape, s).unwrap();
    let mut inputs = vec![cfg.sos()];
    inputs.extend_from_slice(seq);
    let dec = model.decoder_log_probs(&mut tape, &mem, &inputs).unwrap();
    let dec = tape.value(dec);
    let att: f64 = seq.iter().chain([cfg.eos()].iter()).enumerate().map(|(i, &tok)| dec.get2(i, tok)).sum();
    let ctc = ctc_loss(&ctc_lp, seq, cfg.blank()).map_or(f64::NEG_INFINITY, |l| -l);
    if alpha == 0.0 {
        att
    } else {
        (1.0 - alpha) * att + alpha * ctc
    }
}

fn sequences(k: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_len {
        let next: Vec<Vec<usize>> = frontier
            .iter()
            .flat_map(|s| (0..k).filter(move |c| s.last() != Some(c)).map(move |c| [s.clone(), vec![c]].concat()))
            .collect();
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn criterion_6() -> Outcome {
    let mut cases = 0;
    let mut worst_prefix = 0.0f64;
    for seed in 0..6u64 {
        let k = 3 + (seed as usize % 2);
        let mut model = DenoiserModel::new(DenoiserConfig {
            num_units: k,
            seed,
            ..tiny_denoiser(Variant::External)
        })
        .unwrap();
        perturb(&mut model, seed + 10);
        let feats = random_features(3, 4 + seed as usize % 3, 8, seed + 20);
        for alpha in [0.0, 0.3, 0.7, 1.0] {
            let got = decode_detailed(
                &model,
                &feats,
                &BeamOptions {
                    beam_size: 1000,
                    ctc_weight: alpha,
                    max_len: Some(3),
                },
            )
            .map_err(|e| e.to_string())?;
            let (best, score) = sequences(k, 3)
                .into_iter()
                .map(|s| {
                    let sc = joint_score(&model, &feats, &s, alpha);
                    (s, sc)
                })
                .fold((vec![], f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            ensure(got.units == best && (got.score - score).abs() < 1e-9, || {
                format!("seed {seed} α {alpha}: beam {:?} ({}) vs brute force {best:?} ({score})", got.units, got.score)
            })?;
            if alpha > 0.0 {
                let lp = model.encode(&feats).unwrap().ctc_log_probs;
                let l = ctc_loss(&lp, &got.units, model.config().blank()).unwrap();
                worst_prefix = worst_prefix.max((got.ctc_score + l).abs());
            }
            cases += 1;
        }
    }
    ensure(worst_prefix < 1e-9, || format!("eos prefix score off by {worst_prefix:e}"))?;
    Ok(format!("{cases} instances match brute force; eos prefix vs ctc_loss max |Δ| {worst_prefix:.1e}"))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let ext = DenoiserModel::new(tiny_denoiser(Variant::External)).unwrap();
    let ada = DenoiserModel::new(tiny_denoiser(Variant::Adapter)).unwrap();
    let enc = PseudoEncoder::new(ada.config().ssl.clone().unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let t = 4 + trial;
        let layer0 = Tensor::matrix(t, 8, (0..t * 8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let plain = enc.extract_from_layer0(layer0.clone(), None).unwrap();
        let with = enc.extract_from_layer0(layer0, Some((ada.store(), ada.adapters().unwrap()))).unwrap();
        ensure(plain == with, || "adapted features differ at init".into())?;
        let target: Vec<usize> = (0..3).map(|i| (i + trial) % 3).collect();
        let loss = |m: &DenoiserModel| {
            let mut tp = Tape::new(m.store());
            let l = m.loss(&mut tp, &plain, &target).unwrap();
            tp.value(l).item()
        };
        let (a, b) = (loss(&ext), loss(&ada));
        worst = worst.max((a - b).abs());
        ensure(ext.encode(&plain).unwrap().states == ada.encode(&plain).unwrap().states, || "encoder states differ".into())?;
    }
    ensure(worst <= 1e-12, || format!("loss differs by {worst:e}"))?;
    Ok(format!("features bitwise identical, max loss |Δ| {worst:.1e}"))
}

// ---------------------------------------------------------------- 8-10

struct Run {
    pipeline: Pipeline,
    _dir: tempfile::TempDir,
    elapsed: Duration,
}

fn toy_run() -> Result<Run, String> {
    let conf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.conf");
    let config = PipelineConfig::load(&conf).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pipeline = Pipeline::open(dir.path(), config).map_err(|e| e.to_string())?;
    let start = Instant::now();
    pipeline.run_all(|_, _| {}).map_err(|e| e.to_string())?;
    Ok(Run {
        pipeline,
        _dir: dir,
        elapsed: start.elapsed(),
    })
}

fn criterion_8(run: &Run) -> Outcome {
    let s = EvalSummary::load(&run.pipeline.path("eval/summary.tsv")).map_err(|e| e.to_string())?;
    let (raw_noisy, den_noisy) = s.get("noisy").ok_or("no noisy bucket")?;
    let (raw_rev, den_rev) = s.get("reverb").ok_or("no reverb bucket")?;
    let (raw_all, _) = s.get("all").unwrap();
    let noisy = s.relative_reduction("noisy").ok_or("raw noisy UER is zero")?;
    let reverb = s.relative_reduction("reverb").ok_or("raw reverb UER is zero")?;
    let detail = format!(
        "raw UER {raw_all:.1}%; noisy {raw_noisy:.1}% -> {den_noisy:.1}% ({:.0}% reduction), reverb {raw_rev:.1}% -> {den_rev:.1}% ({:.0}% reduction); pipeline {:.0?}",
        100.0 * noisy,
        100.0 * reverb,
        run.elapsed
    );
    ensure(raw_all > 0.0 && raw_noisy > 0.0 && raw_rev > 0.0, || format!("raw UER not positive: {detail}"))?;
    ensure(noisy >= 0.25, || format!("noisy reduction below 25%: {detail}"))?;
    ensure(reverb >= 0.15, || format!("reverb reduction below 15%: {detail}"))?;
    ensure(run.elapsed < Duration::from_secs(15 * 60), || format!("too slow: {detail}"))?;
    Ok(detail)
}

fn criterion_9(run: &Run) -> Outcome {
    let start = Instant::now();
    run.pipeline.run_stage(Stage::Ablate).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(run.pipeline.path("ablate/results.tsv")).map_err(|e| e.to_string())?;
    let rows = ablation_overall(&text);
    let get = |n: &str| rows.iter().find(|r| r.0 == n).map(|r| r.1).ok_or(format!("{n} missing"));
    let (eo, ed) = (get("encoder_only")?, get("encoder_decoder")?);
    let detail = format!("encoder_decoder {ed:.1}% vs encoder_only {eo:.1}% ({:.0?})", start.elapsed());
    ensure(ed <= eo, || detail.clone())?;
    Ok(detail)
}

/// Least-squares slope of `y` against `x`.
fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn criterion_10(run: &Run) -> Outcome {
    let p = &run.pipeline;
    let text = std::fs::read_to_string(p.path("adapt/series.tsv")).map_err(|e| e.to_string())?;
    let series = AdaptPoint::parse_series(&text).map_err(|e| e.to_string())?;
    let adapted: Vec<(f64, f64)> = series.iter().filter(|s| s.recordings >= 1).map(|s| (s.recordings as f64, s.uer)).collect();
    let trend = slope(&adapted);
    let base = series[0].uer;
    let last = series.last().unwrap().uer;
    let shown: Vec<String> = series.iter().map(|s| format!("{:.1}", s.uer)).collect();

    let before = DenoiserModel::load(&p.path("model/denoiser.ckpt")).map_err(|e| e.to_string())?;
    let encoder: std::collections::HashSet<String> =
        before.encoder_param_ids().into_iter().map(|id| before.store().name(id).to_string()).collect();
    let mut frozen = 0;
    for s in series.iter().filter(|s| s.recordings >= 1) {
        let after = DenoiserModel::load(&p.path(&format!("adapt/model_{}.ckpt", s.recordings))).map_err(|e| e.to_string())?;
        for ((name, a), (_, b)) in before.store().named_tensors().iter().zip(after.store().named_tensors()) {
            if !encoder.contains(name) {
                let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
                ensure(same, || format!("{name} changed after adapting on {} recordings", s.recordings))?;
                frozen += 1;
            }
        }
    }
    let env = &p.config().adapt.environment;
    let detail = format!(
        "{env} UER by recordings 0..5: [{}]; slope over 1..5 {trend:+.2} per recording; {frozen} non-encoder tensors bitwise unchanged",
        shown.join(", ")
    );
    ensure(trend <= 0.0 && last <= base, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 11

fn recursive_distance(a: &[usize], b: &[usize]) -> usize {
    match (a, b) {
        ([], _) => b.len(),
        (_, []) => a.len(),
        ([xs @ .., x], [ys @ .., y]) => (recursive_distance(xs, ys) + usize::from(x != y))
            .min(recursive_distance(xs, b) + 1)
            .min(recursive_distance(a, ys) + 1),
    }
}

fn criterion_11() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let a: Vec<usize> = (0..rng.random_range(0..=6)).map(|_| rng.random_range(0..3)).collect();
        let b: Vec<usize> = (0..rng.random_range(0..=6)).map(|_| rng.random_range(0..3)).collect();
        let got = edit_distance(&a, &b).errors();
        ensure(got == recursive_distance(&a, &b), || format!("{a:?} vs {b:?}: {got}"))?;
        if !b.is_empty() {
            let u = uer(&a, &b).unwrap();
            ensure((u == 0.0) == (dedup_units(&a) == dedup_units(&b)), || format!("dedup contract broken on {a:?} {b:?}"))?;
        }
    }
    ensure(uer(&[1, 1, 2], &[1, 2]).unwrap() == 0.0, || "dedup-first contract".into())?;

    let reference: Vec<usize> = (0..10).map(|i| i % 3).collect();
    let mut wrong = reference.clone();
    wrong[0] = 9;
    let noisy = |snr| Condition::Noise {
        source_tag: "babble".into(),
        snr_db: snr,
    };
    let pairs: Vec<EvalPair> = [noisy(15.0), noisy(20.0), noisy(15.0), Condition::Clean]
        .into_iter()
        .enumerate()
        .map(|(i, c)| EvalPair {
            utt_id: i.to_string(),
            hyp: if c == Condition::Clean { reference.clone() } else { wrong.clone() },
            condition: c,
            reference: reference.clone(),
        })
        .collect();
    let r = condition_report(&pairs, StdMode::Conservative).unwrap();
    let h = r.get(Bucket::NoiseH).unwrap();
    ensure(h.errors == 3 && h.n_ref_units == 30 && (h.uer - 10.0).abs() < 1e-12, || format!("{h:?}"))?;
    ensure(r.get(Bucket::Clean).unwrap().uer == 0.0 && r.overall.n_ref_units == 40, || "fixture totals".into())?;
    let s = binomial_std(0.01, 250_000, StdMode::Conservative).unwrap();
    ensure((s - 0.1).abs() < 1e-12, || format!("binomial std {s}"))?;
    Ok(format!("1000 random pairs match recursion; fixtures exact; conservative std at n=250000 is {s:.3}%"))
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    })
}

fn main() {
    // `cargo test` passes harness flags; a name filter that excludes this
    // target's name skips the suite.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let mut results: Vec<(usize, Outcome)> = vec![
        (1, guarded(criterion_1)),
        (2, guarded(criterion_2)),
        (3, guarded(criterion_3)),
        (4, guarded(criterion_4)),
        (5, guarded(criterion_5)),
        (6, guarded(criterion_6)),
        (7, guarded(criterion_7)),
    ];
    let run = catch_unwind(toy_run).unwrap_or_else(|_| Err("panicked".into()));
    match run {
        Ok(run) => {
            results.push((8, guarded(|| criterion_8(&run))));
            results.push((9, guarded(|| criterion_9(&run))));
            results.push((10, guarded(|| criterion_10(&run))));
        }
        Err(e) => {
            for c in 8..=10 {
                results.push((c, Err(format!("toy pipeline failed: {e}"))));
            }
        }
    }
    results.push((11, guarded(criterion_11)));
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, r) in &results {
        match r {
            Ok(d) => println!("criterion {n:>2}: PASS  {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2}: FAIL  {d}");
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
