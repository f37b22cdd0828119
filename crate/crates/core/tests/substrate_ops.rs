use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unitden::substrate::{
    grad_check, randn, tensor, GradCheckOptions, ParamStore, Tape, Tensor, Var,
};
use unitden::Error;

/// Contracts a tensor with a fixed random weight so every entry matters.
fn probe(tape: &mut Tape<'_>, x: Var, seed: u64) -> unitden::Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(randn(&shape, 1.0, &mut rng));
    let m = tape.mul(x, w)?;
    Ok(tape.sum(m))
}

fn check(store: &mut ParamStore, f: impl Fn(&mut Tape<'_>) -> unitden::Result<Var>) -> f64 {
    let report = grad_check(f, store, GradCheckOptions::default()).unwrap();
    report.max_rel_err()
}

fn random_store(shapes: &[&[usize]], seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (i, sh) in shapes.iter().enumerate() {
        s.register(format!("p{i}"), randn(sh, 1.0, &mut rng));
    }
    s
}

const TOL: f64 = 1e-5;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn every_op_passes_grad_check(r in 1usize..=8, c in 1usize..=8, k in 1usize..=8, seed in any::<u64>()) {
        let mut s = random_store(&[&[r, c], &[c, k], &[r, c], &[c], &[k, r]], seed);
        let ids: Vec<_> = s.ids().collect();
        let (a, b, a2, row, bt) = (ids[0], ids[1], ids[2], ids[3], ids[4]);

        let errs = [
            ("matmul", check(&mut s, |t| { let (x, y) = (t.param(a), t.param(b)); let o = t.matmul(x, y)?; probe(t, o, 1) })),
            ("matmul_tt", check(&mut s, |t| { let (x, y) = (t.param(a), t.param(bt)); let o = t.matmul_t(x, y, true, true)?; probe(t, o, 2) })),
            ("add", check(&mut s, |t| { let (x, y) = (t.param(a), t.param(a2)); let o = t.add(x, y)?; probe(t, o, 3) })),
            ("mul", check(&mut s, |t| { let (x, y) = (t.param(a), t.param(a2)); let o = t.mul(x, y)?; probe(t, o, 4) })),
            ("add_row", check(&mut s, |t| { let (x, y) = (t.param(a), t.param(row)); let o = t.add_row(x, y)?; probe(t, o, 5) })),
            ("mul_row", check(&mut s, |t| { let (x, y) = (t.param(a), t.param(row)); let o = t.mul_row(x, y)?; probe(t, o, 6) })),
            ("scale", check(&mut s, |t| { let x = t.param(a); let o = t.scale(x, -1.7); probe(t, o, 7) })),
            ("softmax1", check(&mut s, |t| { let x = t.param(a); let o = t.softmax(x, 1)?; probe(t, o, 8) })),
            ("softmax0", check(&mut s, |t| { let x = t.param(a); let o = t.softmax(x, 0)?; probe(t, o, 9) })),
            ("log_softmax1", check(&mut s, |t| { let x = t.param(a); let o = t.log_softmax(x, 1)?; probe(t, o, 10) })),
            ("log_softmax0", check(&mut s, |t| { let x = t.param(a); let o = t.log_softmax(x, 0)?; probe(t, o, 11) })),
            ("tanh", check(&mut s, |t| { let x = t.param(a); let o = t.tanh(x); probe(t, o, 12) })),
            ("gelu", check(&mut s, |t| { let x = t.param(a); let o = t.gelu(x); probe(t, o, 13) })),
            ("layer_norm", check(&mut s, |t| { let (x, y) = (t.param(a), t.param(a2)); let w = t.concat(&[x, y, x], 1)?; let o = t.layer_norm(w, 1e-5); probe(t, o, 14) })),
            ("embedding", check(&mut s, |t| { let x = t.param(a); let ids: Vec<usize> = (0..5).map(|i| (i * 7) % r).collect(); let o = t.embedding(x, &ids)?; probe(t, o, 15) })),
            ("concat0", check(&mut s, |t| { let (x, y) = (t.param(a), t.param(a2)); let o = t.concat(&[x, y], 0)?; probe(t, o, 16) })),
            ("concat1", check(&mut s, |t| { let (x, y) = (t.param(a), t.param(a2)); let o = t.concat(&[x, y, x], 1)?; probe(t, o, 17) })),
            ("slice0", check(&mut s, |t| { let x = t.param(a); let o = t.slice(x, 0, r / 2, r - r / 2)?; probe(t, o, 18) })),
            ("slice1", check(&mut s, |t| { let x = t.param(a); let o = t.slice(x, 1, c / 3, c - c / 3)?; probe(t, o, 19) })),
            ("transpose", check(&mut s, |t| { let x = t.param(a); let o = t.transpose(x); probe(t, o, 20) })),
            ("mean", check(&mut s, |t| { let x = t.param(a); let m = t.mean(x); let o = t.tanh(m); Ok(t.sum(o)) })),
            ("dropout_eval", check(&mut s, |t| { let x = t.param(a); let o = t.dropout(x, 0.5); probe(t, o, 21) })),
            ("weighted_sum", check(&mut s, |t| { let (w, x, y) = (t.param(row), t.param(a), t.param(a2)); let ws = t.slice(w, 1, 0, 1)?; let w1 = t.concat(&[ws, ws], 1)?; let w1 = t.tanh(w1); let o = t.weighted_sum(w1, &[x, y])?; probe(t, o, 22) })),
            ("nll", check(&mut s, |t| { let x = t.param(a); let lp = t.log_softmax(x, 1)?; let tg: Vec<usize> = (0..r).map(|i| i % c).collect(); t.nll(lp, &tg) })),
        ];
        for (name, err) in errs {
            prop_assert!(err < TOL, "{} rel err {}", name, err);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_layer_norm_is_standardised(r in 1usize..=8, c in 2usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randn(&[r, c], 10.0, &mut rng);
        let s = tensor::softmax(&x, 1);
        for i in 0..r {
            prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let (n, _) = tensor::layer_norm(&x, 1e-12);
        for i in 0..r {
            let row = n.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var - 1.0).abs() < 1e-8);
        }
    }
}

#[test]
fn log_softmax_is_stable_for_large_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.random_range(2..20);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
        let ls = tensor::log_softmax(&Tensor::vector(v), 0);
        let total: f64 = ls.data().iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12, "{total}");
    }
}

#[test]
fn backward_of_sum_is_all_ones_and_of_dot_is_twice_x() {
    let mut s = ParamStore::new();
    let id = s.register("x", Tensor::vector(vec![0.5, -2.0, 3.0]));
    let mut t = Tape::new(&s);
    let x = t.param(id);
    let loss = t.sum(x);
    let g = t.backward(loss).unwrap();
    assert_eq!(g.get(id).data(), &[1.0, 1.0, 1.0]);

    let mut t = Tape::new(&s);
    let x = t.param(id);
    let sq = t.matmul_t(x, x, false, true).unwrap();
    let loss = t.sum(sq);
    let g = t.backward(loss).unwrap();
    assert_eq!(g.get(id).data(), &[1.0, -4.0, 6.0]);
}

#[test]
fn untouched_parameters_get_zero_gradient() {
    let mut s = ParamStore::new();
    let used = s.register("used", Tensor::vector(vec![1.0, 2.0]));
    let unused = s.register("unused", Tensor::vector(vec![3.0]));
    let mut t = Tape::new(&s);
    let x = t.param(used);
    let loss = t.sum(x);
    let g = t.backward(loss).unwrap();
    assert_eq!(g.get(unused).data(), &[0.0]);
}

#[test]
fn backward_errors() {
    let mut s = ParamStore::new();
    let id = s.register("x", Tensor::vector(vec![1.0, 2.0]));
    let mut t = Tape::new(&s);
    let x = t.param(id);
    assert!(matches!(t.backward(x), Err(Error::NonScalarLoss(_))));
    let loss = t.sum(x);
    t.backward(loss).unwrap();
    assert!(matches!(t.backward(loss), Err(Error::TapeReused)));
}

#[test]
fn frozen_parameters_receive_no_gradient() {
    let mut s = ParamStore::new();
    let a = s.register("a", Tensor::vector(vec![1.0, 2.0]));
    let b = s.register("b", Tensor::vector(vec![3.0, 4.0]));
    s.set_trainable(b, false);
    let mut t = Tape::new(&s);
    let (x, y) = (t.param(a), t.param(b));
    let m = t.mul(x, y).unwrap();
    let loss = t.sum(m);
    let g = t.backward(loss).unwrap();
    assert_eq!(g.get(a).data(), &[3.0, 4.0]);
    assert_eq!(g.get(b).data(), &[0.0, 0.0]);
}

#[test]
fn grad_check_of_linear_and_two_layer_tanh() {
    let mut s = random_store(&[&[3, 4], &[4, 5], &[5]], 11);
    let ids: Vec<_> = s.ids().collect();
    let x = randn(&[6, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
    let lin = grad_check(
        |t| {
            let xi = t.constant(x.clone());
            let w = t.param(ids[0]);
            let h = t.matmul(xi, w)?;
            probe(t, h, 5)
        },
        &mut s,
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(lin.max_rel_err() < 1e-8, "{}", lin.max_rel_err());

    let net = grad_check(
        |t| {
            let xi = t.constant(x.clone());
            let (w1, w2, b2) = (t.param(ids[0]), t.param(ids[1]), t.param(ids[2]));
            let h = t.matmul(xi, w1)?;
            let h = t.tanh(h);
            let o = t.matmul(h, w2)?;
            let o = t.add_row(o, b2)?;
            let o = t.tanh(o);
            probe(t, o, 6)
        },
        &mut s,
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(net.max_rel_err() < 1e-6, "{}", net.max_rel_err());
}

#[test]
fn shape_errors_name_the_op() {
    let mut t = Tape::detached();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(t.add(a, b), Err(Error::Shape { op: "add", .. })));
    assert!(matches!(t.matmul(a, a), Err(Error::Shape { op: "matmul", .. })));
    assert!(matches!(t.concat(&[a, b], 0), Err(Error::Shape { op: "concat", .. })));
}

#[test]
fn training_dropout_is_seeded() {
    let s = ParamStore::new();
    let run = |seed| {
        let mut t = Tape::training(&s, seed);
        let x = t.constant(Tensor::filled(&[4, 4], 1.0));
        let d = t.dropout(x, 0.5);
        t.value(d).clone()
    };
    assert_eq!(run(9), run(9));
    let v = run(9);
    assert!(v.data().iter().all(|&x| x == 0.0 || x == 2.0));
}
