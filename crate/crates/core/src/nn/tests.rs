use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::gradcheck::check_params;
use crate::tensor::{ParamStore, Tape, Tensor};
use crate::Error;

type M = Vec<Vec<f64>>;

fn to_m(t: &Tensor<f64>) -> M {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn mm(a: &M, b: &M) -> M {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

fn add_bias(a: &M, b: &[f64]) -> M {
    a.iter()
        .map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect()
}

fn madd(a: &M, b: &M) -> M {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

fn cols(a: &M, start: usize, len: usize) -> M {
    a.iter().map(|r| r[start..start + len].to_vec()).collect()
}

fn linear(store: &ParamStore<f64>, l: &Linear, x: &M) -> M {
    let w = to_m(store.value(l.weight));
    let y = mm(x, &w);
    match l.bias {
        Some(b) => add_bias(&y, store.value(b).data()),
        None => y,
    }
}

fn norm(store: &ParamStore<f64>, ln: &LayerNorm, x: &M) -> M {
    let g = store.value(ln.gain).data();
    let b = store.value(ln.bias).data();
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mu = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let sd = (var + LAYER_NORM_EPS).sqrt();
            r.iter()
                .enumerate()
                .map(|(j, v)| (v - mu) / sd * g[j] + b[j])
                .collect()
        })
        .collect()
}

/// Plain attention of one head, with exclusions and min-shifted scaling.
fn attend(q: &M, k: &M, v: &M, causal: bool, scale: Option<&[f64]>) -> M {
    let d = q[0].len() as f64;
    let mut out = Vec::new();
    for (i, qi) in q.iter().enumerate() {
        let live: Vec<usize> = (0..k.len()).filter(|&j| !causal || j <= i).collect();
        let e: Vec<f64> = live
            .iter()
            .map(|&j| qi.iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
            .collect();
        let e: Vec<f64> = match scale {
            Some(s) => {
                let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
                e.iter().zip(&live).map(|(x, &j)| (x - lo) * s[j]).collect()
            }
            None => e,
        };
        let z: f64 = e.iter().map(|x| x.exp()).sum();
        let mut row = vec![0.0; v[0].len()];
        for (x, &j) in e.iter().zip(&live) {
            for (c, r) in row.iter_mut().enumerate() {
                *r += x.exp() / z * v[j][c];
            }
        }
        out.push(row);
    }
    out
}

fn mha_replay(store: &ParamStore<f64>, m: &MultiHeadAttention, xq: &M, xkv: &M, causal: bool, scale: Option<&[f64]>) -> M {
    let q = linear(store, &m.q, xq);
    let k = linear(store, &m.k, xkv);
    let v = linear(store, &m.v, xkv);
    let dh = q[0].len() / m.heads;
    let mut joined: M = vec![Vec::new(); q.len()];
    for h in 0..m.heads {
        let o = attend(&cols(&q, h * dh, dh), &cols(&k, h * dh, dh), &cols(&v, h * dh, dh), causal, scale);
        for (r, row) in o.into_iter().enumerate() {
            joined[r].extend(row);
        }
    }
    linear(store, &m.o, &joined)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    use rand::Rng;
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn store_with<T>(seed: u64, build: impl FnOnce(&mut Init<'_, f64>) -> T) -> (ParamStore<f64>, T) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = build(&mut Init {
        store: &mut store,
        rng: &mut rng,
    });
    (store, t)
}

fn assert_close(a: &M, b: &M, tol: f64) {
    for (r, s) in a.iter().zip(b) {
        for (x, y) in r.iter().zip(s) {
            assert!((x - y).abs() < tol, "{x} vs {y}");
        }
    }
}

#[test]
fn scaled_energies_follow_hand_evaluation() {
    let tape = Tape::<f64>::new();
    let q = tape.leaf(Tensor::from_rows(&[vec![1.0]]).unwrap());
    let k = tape.leaf(Tensor::from_rows(&[vec![-2.0], vec![0.0], vec![1.0]]).unwrap());
    let v = tape.leaf(Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap());
    let s = tape.leaf(Tensor::from_f64(&[3], &[1.0, 1.0, 0.0]).unwrap());
    let (_, w) = scaled_dot_attention(AttentionInputs::new(q, k, v).scaled(Some(s))).unwrap();
    // shifted [0, 2, 3], scaled [0, 2, 0]
    let z = 2.0 + 2f64.exp();
    let want = [1.0 / z, 2f64.exp() / z, 1.0 / z];
    for (got, want) in w.value().data().iter().zip(want) {
        assert!((got - want).abs() < 1e-12);
    }
    assert!((want[0] - 0.1065).abs() < 1e-4 && (want[1] - 0.7870).abs() < 1e-4);
}

#[test]
fn single_live_key_returns_its_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tape = Tape::<f64>::new();
    let q = tape.leaf(random(&mut rng, &[2, 4]));
    let k = tape.leaf(random(&mut rng, &[3, 4]));
    let vt = random(&mut rng, &[3, 4]);
    let v = tape.leaf(vt.clone());
    let pad = [true, false, true];
    let (o, _) = scaled_dot_attention(AttentionInputs::new(q, k, v).padded(Some(&pad))).unwrap();
    for r in 0..2 {
        assert_eq!(o.value().row(r), vt.row(1));
    }
}

#[test]
fn all_padded_keys_is_a_contract_error() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[2, 2]));
    let pad = [true, true];
    let err = scaled_dot_attention(AttentionInputs::new(x, x, x).padded(Some(&pad)));
    assert!(matches!(err, Err(Error::Contract(_))));
}

#[test]
fn scale_length_mismatch_is_rejected() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[2, 2]));
    let s = tape.leaf(Tensor::zeros(&[3]));
    let err = scaled_dot_attention(AttentionInputs::new(x, x, x).scaled(Some(s)));
    assert!(matches!(err, Err(Error::Shape(_))));
}

#[test]
fn heads_must_divide_width() {
    let err = store_with(0, |init| MultiHeadAttention::new(init, "a", 6, 4));
    assert!(matches!(err.1, Err(Error::Config(_))));
}

#[test]
fn two_head_attention_matches_per_head_replay() {
    let (store, mha) = store_with(3, |init| MultiHeadAttention::new(init, "a", 8, 2).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xq = random(&mut rng, &[3, 8]);
    let xkv = random(&mut rng, &[5, 8]);
    let s = [1.0, 1.0, 0.3, 0.9, 0.0];
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let sv = tape.constant(Tensor::from_f64(&[5], &s).unwrap());
    let (q, kv) = (tape.leaf(xq.clone()), tape.leaf(xkv.clone()));
    let out = mha
        .forward(&ctx, AttentionInputs::new(q, kv, kv).scaled(Some(sv)))
        .unwrap();
    assert_eq!(out.out.shape(), vec![3, 8]);
    assert_eq!(out.weights.len(), 2);
    let want = mha_replay(&store, &mha, &to_m(&xq), &to_m(&xkv), false, Some(&s));
    assert_close(&to_m(&out.out.value()), &want, 1e-12);
}

#[test]
fn one_head_is_projected_single_head_attention() {
    let (store, mha) = store_with(5, |init| MultiHeadAttention::new(init, "a", 4, 1).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, &[2, 4]);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let xv = tape.leaf(x.clone());
    let out = mha.forward(&ctx, AttentionInputs::new(xv, xv, xv)).unwrap();
    let xm = to_m(&x);
    let (q, k, v) = (linear(&store, &mha.q, &xm), linear(&store, &mha.k, &xm), linear(&store, &mha.v, &xm));
    let want = linear(&store, &mha.o, &attend(&q, &k, &v, false, None));
    assert_close(&to_m(&out.out.value()), &want, 1e-12);
}

#[test]
fn embedding_adds_three_tables() {
    let (mut store, emb) = store_with(0, |init| EmbeddingSet::new(init, 5, 4, 2));
    store.set(emb.token, Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0], vec![3.0, -1.0]]).unwrap()).unwrap();
    store.set(emb.pos, Tensor::from_rows(&[vec![10.0, 0.0], vec![20.0, 0.0], vec![30.0, 0.0], vec![40.0, 0.0]]).unwrap()).unwrap();
    store.set(emb.lang, Tensor::from_rows(&[vec![0.0, 100.0], vec![0.0, 200.0]]).unwrap()).unwrap();
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let x = emb.embed(&ctx, &[4, 1, 4], Some(LANG_MT)).unwrap();
    let want = vec![vec![13.0, 199.0], vec![21.0, 200.0], vec![33.0, 199.0]];
    assert_eq!(to_m(&x.value()), want);
    let y = emb.embed(&ctx, &[2], None).unwrap();
    assert_eq!(to_m(&y.value()), vec![vec![10.0, 1.0]]);
}

#[test]
fn segment_positions_restart() {
    let (store, emb) = store_with(2, |init| EmbeddingSet::new(init, 6, 5, 3));
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let mt = emb.embed(&ctx, &[2, 3], Some(LANG_MT)).unwrap();
    let tok = store.value(emb.token);
    let pos = store.value(emb.pos);
    let lang = store.value(emb.lang);
    for j in 0..3 {
        let want = tok.row(3)[j] + pos.row(1)[j] + lang.row(1)[j];
        assert_eq!(mt.value().row(1)[j], want);
    }
}

#[test]
fn zero_tables_embed_to_zero() {
    let (mut store, emb) = store_with(2, |init| EmbeddingSet::new(init, 6, 5, 3));
    for id in [emb.token, emb.pos, emb.lang] {
        let shape = store.value(id).shape().to_vec();
        store.set(id, Tensor::zeros(&shape)).unwrap();
    }
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let x = emb.embed(&ctx, &[1, 2, 5], Some(LANG_SRC)).unwrap();
    assert!(x.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn overlong_sequence_is_a_length_error() {
    let (store, emb) = store_with(2, |init| EmbeddingSet::new(init, 6, 2, 3));
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let err = emb.embed(&ctx, &[1, 2, 3], None);
    assert!(matches!(err, Err(Error::Length { len: 3, max: 2 })));
}

#[test]
fn silenced_sublayers_leave_the_residual_stream() {
    let (mut store, layer) = store_with(7, |init| EncoderLayer::new(init, "e", 4, 2, 8).unwrap());
    for id in [layer.attn.o.weight, layer.ffn.outer.weight] {
        let shape = store.value(id).shape().to_vec();
        store.set(id, Tensor::zeros(&shape)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[3, 4]);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let (y, _) = layer.forward(&ctx, tape.leaf(x.clone()), None).unwrap();
    assert!(y.value().max_abs_diff(&x) < 1e-15);
}

#[test]
fn encoder_layer_matches_sublayer_replay() {
    let (store, layer) = store_with(8, |init| EncoderLayer::new(init, "e", 8, 2, 16).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, &[4, 8]);
    let s = [1.0, 1.0, 0.2, 0.7];
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let sv = tape.constant(Tensor::from_f64(&[4], &s).unwrap());
    let (y, _) = layer.forward(&ctx, tape.leaf(x.clone()), Some(sv)).unwrap();

    let x = to_m(&x);
    let n = norm(&store, &layer.attn_norm, &x);
    let x = madd(&x, &mha_replay(&store, &layer.attn, &n, &n, false, Some(&s)));
    let n = norm(&store, &layer.ffn_norm, &x);
    let h: M = linear(&store, &layer.ffn.inner, &n)
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    let want = madd(&x, &linear(&store, &layer.ffn.outer, &h));
    assert_close(&to_m(&y.value()), &want, 1e-12);
}

#[test]
fn decoder_layer_matches_sublayer_replay() {
    let (store, layer) = store_with(10, |init| DecoderLayer::new(init, "d", 8, 2, 16, 2).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let y = random(&mut rng, &[3, 8]);
    let m0 = random(&mut rng, &[4, 8]);
    let m1 = random(&mut rng, &[2, 8]);
    let s = [0.5, 0.1];
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let mems = [
        MemoryRef { states: tape.leaf(m0.clone()), scale: None },
        MemoryRef { states: tape.leaf(m1.clone()), scale: Some(tape.constant(Tensor::from_f64(&[2], &s).unwrap())) },
    ];
    let (out, maps) = layer.forward(&ctx, tape.leaf(y.clone()), &mems).unwrap();
    assert_eq!(maps.len(), 2);
    assert_eq!(maps[1][0].shape(), vec![3, 2]);

    let y = to_m(&y);
    let n = norm(&store, &layer.self_norm, &y);
    let y = madd(&y, &mha_replay(&store, &layer.self_attn, &n, &n, true, None));
    let n = norm(&store, &layer.cross[0].norm, &y);
    let y = madd(&y, &mha_replay(&store, &layer.cross[0].attn, &n, &to_m(&m0), false, None));
    let n = norm(&store, &layer.cross[1].norm, &y);
    let y = madd(&y, &mha_replay(&store, &layer.cross[1].attn, &n, &to_m(&m1), false, Some(&s)));
    let n = norm(&store, &layer.ffn_norm, &y);
    let h: M = linear(&store, &layer.ffn.inner, &n)
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    let want = madd(&y, &linear(&store, &layer.ffn.outer, &h));
    assert_close(&to_m(&out.value()), &want, 1e-12);
}

#[test]
fn decoder_prefix_ignores_suffix() {
    let (store, dec) = store_with(12, |init| DecoderStack::new(init, "d", 2, 8, 2, 16, 1).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mem = random(&mut rng, &[3, 8]);
    let y = random(&mut rng, &[5, 8]);
    let run = |y: &Tensor<f64>| {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let m = [MemoryRef { states: tape.leaf(mem.clone()), scale: None }];
        let (out, _) = dec.forward(&ctx, tape.leaf(y.clone()), &m).unwrap();
        to_m(&out.value())
    };
    let base = run(&y);
    let mut changed = y.clone();
    for v in &mut changed.data_mut()[3 * 8..] {
        *v += 1.5;
    }
    let other = run(&changed);
    assert_eq!(base[..3], other[..3]);
    assert_ne!(base[3], other[3]);
}

#[test]
fn dropout_is_seeded_and_inverted() {
    let store = ParamStore::<f64>::new();
    let run = || {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store).with_dropout(0.5, ChaCha8Rng::seed_from_u64(3));
        let x = tape.leaf(Tensor::full(&[200], 1.0));
        ctx.dropout(x).unwrap().value().data().to_vec()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.iter().all(|&v| v == 0.0 || v == 2.0));
    assert!(a.contains(&0.0) && a.contains(&2.0));
}

#[test]
fn stacks_pass_gradient_checks() {
    let (store, (emb, enc, dec)) = store_with(14, |init| {
        (
            EmbeddingSet::new(init, 7, 6, 8),
            EncoderStack::new(init, "enc", 1, 8, 2, 12).unwrap(),
            DecoderStack::new(init, "dec", 1, 8, 2, 12, 1).unwrap(),
        )
    });
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let w = random(&mut rng, &[4, 8]);
    let ids: Vec<_> = store.ids().collect();
    let report = check_params(&store, &ids, 1e-5, Some(6), |tape, params| {
        let ctx = Ctx::new(tape, params);
        let x = emb.embed(&ctx, &[3, 4, 5, 6, 1], Some(LANG_SRC))?;
        let s = tape.constant(Tensor::from_f64(&[5], &[1.0, 1.0, 0.4, 0.8, 0.1])?);
        let (h, _) = enc.forward(&ctx, x, Some(s))?;
        let y = emb.embed(&ctx, &[1, 2, 3, 4], None)?;
        let (o, _) = dec.forward(&ctx, y, &[MemoryRef { states: h, scale: Some(s) }])?;
        Ok(o.mul(tape.constant(w.clone()))?.sum())
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unit_scale_is_the_identity(seed in any::<u64>(), lq in 1usize..5, lk in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::<f32>::new();
        let q = tape.leaf(random(&mut rng, &[lq, 4]).cast());
        let k = tape.leaf(random(&mut rng, &[lk, 4]).cast());
        let ones = tape.constant(Tensor::full(&[lk], 1.0));
        let (a, wa) = scaled_dot_attention(AttentionInputs::new(q, k, k)).unwrap();
        let (b, wb) = scaled_dot_attention(AttentionInputs::new(q, k, k).scaled(Some(ones))).unwrap();
        prop_assert_eq!(&*a.value(), &*b.value());
        prop_assert_eq!(&*wa.value(), &*wb.value());
    }

    #[test]
    fn zeroing_a_scale_never_raises_its_weight(
        seed in any::<u64>(),
        lk in 2usize..6,
        raw in proptest::collection::vec(0.0f64..1.0, 6),
        pick in 0usize..6,
    ) {
        let pick = pick % lk;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::<f64>::new();
        let q = tape.leaf(random(&mut rng, &[3, 4]));
        let k = tape.leaf(random(&mut rng, &[lk, 4]));
        let mut s = raw[..lk].to_vec();
        let before = tape.constant(Tensor::from_f64(&[lk], &s).unwrap());
        s[pick] = 0.0;
        let after = tape.constant(Tensor::from_f64(&[lk], &s).unwrap());
        let (_, w0) = scaled_dot_attention(AttentionInputs::new(q, k, k).scaled(Some(before))).unwrap();
        let (_, w1) = scaled_dot_attention(AttentionInputs::new(q, k, k).scaled(Some(after))).unwrap();
        for r in 0..3 {
            prop_assert!(w1.value().row(r)[pick] <= w0.value().row(r)[pick] + 1e-12);
        }
    }

    #[test]
    fn weights_are_distributions_over_live_keys(
        seed in any::<u64>(),
        pad in proptest::collection::vec(any::<bool>(), 5),
        causal in any::<bool>(),
    ) {
        prop_assume!(pad.iter().any(|&p| !p));
        prop_assume!(!causal || !pad[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::<f64>::new();
        let x = tape.leaf(random(&mut rng, &[5, 4]));
        let s = tape.constant(random(&mut rng, &[5]));
        let (_, w) = scaled_dot_attention(
            AttentionInputs::new(x, x, x).padded(Some(&pad)).causal(causal).scaled(Some(s)),
        ).unwrap();
        let w = w.value();
        for r in 0..5 {
            let row = w.row(r);
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            for (c, &p) in pad.iter().enumerate() {
                if p || (causal && c > r) {
                    prop_assert_eq!(row[c], 0.0);
                }
            }
        }
    }
}
