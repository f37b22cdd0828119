use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unitden::quantizer::*;
use unitden::substrate::Tensor;

fn points(seed: u64, n: usize, d: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * d)
        .map(|i| rng.random_range(-1.0..1.0) + if (i / d) % 3 == 0 { 2.0 } else { 0.0 })
        .collect();
    Tensor::matrix(n, d, data).unwrap()
}

/// Lowest within-cluster sum of squares over every split of `x` into two
/// non-empty groups.
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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn inertia_trace_never_increases(seed in any::<u64>(), n in 8usize..80, k in 2usize..6, d in 1usize..4) {
        let x = points(seed, n, d);
        let cb = train_kmeans(&x, k, 50, seed, 0).unwrap();
        let trace = &cb.meta.as_ref().unwrap().inertia_trace;
        for w in trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "{trace:?}");
        }
        // the recorded final inertia is what assignment gives
        let fin = *trace.last().unwrap();
        prop_assert!((inertia(&x, &cb).unwrap() - fin).abs() <= 1e-9 * fin.max(1.0));
    }

    #[test]
    fn assignment_matches_naive_scan(seed in any::<u64>(), k in 2usize..8, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = Tensor::matrix(k, d, (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let cb = Codebook::new(c.clone(), 0).unwrap();
        let x = Tensor::matrix(20, d, (0..20 * d).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
        let got = assign(&x, &cb).unwrap();
        for (t, &u) in got.iter().enumerate() {
            let dist = |j: usize| (0..d).map(|i| (x.get2(t, i) - c.get2(j, i)).powi(2)).sum::<f64>();
            let naive = (0..k).min_by(|&a, &b| dist(a).partial_cmp(&dist(b)).unwrap()).unwrap();
            prop_assert_eq!(u, naive);
        }
    }

    #[test]
    fn dedup_properties(s in proptest::collection::vec(0usize..4, 0..30)) {
        let d = dedup_units(&s);
        prop_assert_eq!(dedup_units(&d), d.clone());
        prop_assert!(d.len() <= s.len());
        prop_assert_eq!(d.first(), s.first());
        let heads: Vec<usize> = s.iter().enumerate().filter(|&(i, v)| i == 0 || s[i - 1] != *v).map(|(_, &v)| v).collect();
        prop_assert_eq!(d, heads);
    }

    #[test]
    fn codebook_bytes_round_trip(seed in any::<u64>(), k in 2usize..10, d in 1usize..8, layer in 0usize..13) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..k * d).map(|_| rng.random_range(-4.0f32..4.0) as f64).collect();
        let cb = Codebook::new(Tensor::matrix(k, d, data).unwrap(), layer).unwrap();
        let back = codebook_from_bytes(&codebook_to_bytes(&cb)).unwrap();
        prop_assert_eq!(back.centroids(), cb.centroids());
        prop_assert_eq!(back.layer_index(), layer);
    }

    #[test]
    fn unit_text_round_trip(seqs in proptest::collection::vec(proptest::collection::vec(0usize..16, 0..12), 1..6)) {
        let seqs: Vec<UnitSequence> = seqs.into_iter().enumerate().map(|(i, u)| UnitSequence::new(format!("u{i}"), u)).collect();
        prop_assert_eq!(parse_units(&units_to_text(&seqs), false).unwrap(), seqs);
    }
}

#[test]
fn two_means_reach_the_exhaustive_optimum() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = 10;
        let x = Tensor::matrix(n, 1, (0..n).map(|_| rng.random_range(0.0..10.0)).collect()).unwrap();
        let opt = best_two_partition(&x);
        let best = train_kmeans_best_of(&x, 2, 100, seed, 10, 0).unwrap();
        let fin = *best.meta.unwrap().inertia_trace.last().unwrap();
        assert!((fin - opt).abs() <= 1e-9 * opt, "seed {seed}: {fin} vs {opt}");
    }
}

#[test]
fn single_runs_usually_find_the_optimum() {
    // one k-means++ start lands in the global optimum roughly three times in four
    let total = 200;
    let hits = (0..total as u64)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
            let x = Tensor::matrix(10, 1, (0..10).map(|_| rng.random_range(0.0..10.0)).collect()).unwrap();
            let cb = train_kmeans(&x, 2, 100, seed, 0).unwrap();
            *cb.meta.unwrap().inertia_trace.last().unwrap() <= best_two_partition(&x) * (1.0 + 1e-9)
        })
        .count();
    assert!(hits * 10 >= total * 7, "{hits}/{total}");
}

#[test]
fn small_multidimensional_instances_reach_the_optimum() {
    for seed in 0..10u64 {
        let x = points(seed, 12, 2);
        let opt = best_two_partition(&x);
        let cb = train_kmeans_best_of(&x, 2, 100, seed, 10, 0).unwrap();
        let fin = *cb.meta.unwrap().inertia_trace.last().unwrap();
        assert!((fin - opt).abs() <= 1e-9 * opt, "seed {seed}: {fin} vs {opt}");
    }
}

#[test]
fn separable_and_guarded() {
    let x = Tensor::matrix(4, 1, vec![0.0, 0.0, 10.0, 10.0]).unwrap();
    let cb = train_kmeans(&x, 2, 10, 0, 5).unwrap();
    let mut c: Vec<f64> = cb.centroids().data().to_vec();
    c.sort_by(f64::total_cmp);
    assert_eq!(c, [0.0, 10.0]);
    assert_eq!(inertia(&x, &cb).unwrap(), 0.0);
    assert!(matches!(assign_layer(&x, 4, &cb), Err(unitden::Error::LayerMismatch { expected: 5, got: 4 })));
    assert_eq!(assign_layer(&x, 5, &cb).unwrap(), assign(&x, &cb).unwrap());
}

#[test]
fn unit_files_mark_deduplication_by_suffix() {
    let d = tempfile::tempdir().unwrap();
    let seqs = vec![UnitSequence::new("a", vec![5, 5, 5, 2, 2, 5]), UnitSequence::new("b", vec![])];
    let dedup: Vec<UnitSequence> = seqs.iter().map(deduplicate).collect();
    assert_eq!(dedup[0].units, [5, 2, 5]);
    assert!(dedup[1].units.is_empty());
    let p = d.path().join("x.dedup.units");
    save_units(&dedup, &p).unwrap();
    let back = load_units(&p).unwrap();
    assert!(back.iter().all(|s| s.deduplicated));
    assert_eq!(back, dedup);
}
