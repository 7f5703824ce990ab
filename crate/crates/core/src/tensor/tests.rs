use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check_inputs;
use super::*;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

#[test]
fn matmul_identity_and_scalar() {
    let tape = Tape::<f64>::new();
    let eye = tape.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
    let b = tape.constant(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
    assert_eq!(eye.matmul(b).unwrap().value().data(), b.value().data());

    let x = tape.constant(t(&[1, 1], &[2.]));
    let y = tape.constant(t(&[1, 1], &[3.]));
    assert_eq!(x.matmul(y).unwrap().value().data(), &[6.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&mut rng, &[4, 5]);
    let b = random(&mut rng, &[5, 3]);
    let tape = Tape::new();
    let c = tape.constant(a.clone()).matmul(tape.constant(b.clone())).unwrap();
    for i in 0..4 {
        for j in 0..3 {
            let mut acc = 0.0;
            for p in 0..5 {
                acc += a.get(&[i, p]) * b.get(&[p, j]);
            }
            assert!((c.value().get(&[i, j]) - acc).abs() < 1e-6);
        }
    }
}

#[test]
fn matmul_dimension_mismatch_is_shape_error() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(a.matmul(b), Err(crate::Error::Shape(_))));
}

#[test]
fn softmax_examples() {
    let tape = Tape::<f64>::new();
    let v = tape.constant(t(&[3], &[0.7, 0.7, 0.7])).softmax().unwrap();
    for &p in v.value().data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
    }

    let base = [0.3, -1.2, 2.5, 0.0];
    let shifted: Vec<f64> = base.iter().map(|x| x + 11.0).collect();
    let a = tape.constant(t(&[4], &base)).softmax().unwrap();
    let b = tape.constant(t(&[4], &shifted)).softmax().unwrap();
    assert!(a.value().max_abs_diff(&b.value()) < 1e-12);

    let w = tape
        .constant(t(&[2], &[0.0, std::f64::consts::LN_2]))
        .softmax()
        .unwrap();
    assert!((w.value().data()[0] - 1.0 / 3.0).abs() < 1e-12);
    assert!((w.value().data()[1] - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn softmax_rejects_nan_and_empty_rows() {
    let tape = Tape::<f64>::new();
    let v = tape.constant(t(&[2], &[f64::NAN, 1.0]));
    assert!(matches!(v.softmax(), Err(crate::Error::Numeric(_))));
    let v = tape.constant(t(&[2], &[0.0, 1.0]));
    let mask: Arc<[bool]> = Arc::from(vec![true, true]);
    assert!(matches!(
        v.softmax_masked(Some(mask), None),
        Err(crate::Error::Contract(_))
    ));
}

#[test]
fn softmax_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tape = Tape::new();
    let x = tape.constant(random(&mut rng, &[6, 9]).cast::<f64>());
    let x = x.scale(20.0);
    let y = x.softmax().unwrap().value();
    for r in 0..6 {
        let s: f64 = y.row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(y.row(r).iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}

#[test]
fn scaled_softmax_with_unit_scale_is_bitwise_plain() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tape = Tape::<f32>::new();
    let e = tape.constant(random(&mut rng, &[3, 5]).cast::<f32>());
    let ones = tape.constant(Tensor::full(&[5], 1.0));
    let plain = e.softmax().unwrap().value();
    let scaled = e.softmax_masked(None, Some(ones)).unwrap().value();
    assert_eq!(plain.data(), scaled.data());
}

#[test]
fn elementwise_examples() {
    let tape = Tape::<f64>::new();
    let s = tape.constant(t(&[2], &[0.0, 1.0])).sigmoid().value();
    assert_eq!(s.data()[0], 0.5);
    assert!((s.data()[1] - 0.7310585786).abs() < 1e-9);

    let row = tape.constant(t(&[1, 4], &[2.5; 4]));
    let g = tape.constant(Tensor::full(&[4], 1.0));
    let b = tape.constant(Tensor::zeros(&[4]));
    let y = row.layer_norm(g, b, 1e-6).unwrap().value();
    assert!(y.data().iter().all(|&v| v == 0.0));

    let r = tape.constant(t(&[3], &[-1.0, 0.0, 2.0])).relu().value();
    assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn layer_norm_rows_are_standardised() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tape = Tape::new();
    let x = tape.constant(random(&mut rng, &[4, 16]));
    let g = tape.constant(Tensor::full(&[16], 1.0));
    let b = tape.constant(Tensor::zeros(&[16]));
    let y = x.layer_norm(g, b, 1e-9).unwrap().value();
    for r in 0..4 {
        let row = y.row(r);
        let mean: f64 = row.iter().sum::<f64>() / 16.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }
}

#[test]
fn broadcast_errors_are_shape_errors() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2]));
    assert!(matches!(a.add(b), Err(crate::Error::Shape(_))));
    let bias = tape.constant(Tensor::full(&[3], 1.0));
    assert_eq!(a.add(bias).unwrap().value().data(), &[1.0; 6]);
}

#[test]
fn embedding_lookup_examples() {
    let tape = Tape::<f64>::new();
    let table = tape.leaf(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
    assert_eq!(table.gather_rows(&[0]).unwrap().value().data(), &[1., 0., 0.]);
    assert!(matches!(
        table.gather_rows(&[3]),
        Err(crate::Error::Index { index: 3, size: 3 })
    ));

    let rows = table.gather_rows(&[2, 2]).unwrap();
    let grads = tape.backward(rows.sum()).unwrap();
    let g = grads.get(table).unwrap();
    assert_eq!(g.data(), &[0., 0., 0., 0., 0., 0., 2., 2., 2.]);
}

#[test]
fn gather_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let table = random(&mut rng, &[5, 4]);
    let weights = random(&mut rng, &[3, 4]);
    let report = check_inputs(&[table], 1e-5, |tape, v| {
        let w = tape.constant(weights.clone());
        Ok(v[0].gather_rows(&[1, 4, 1])?.mul(w)?.sum())
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn backward_scalar_product() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let y = tape.leaf(Tensor::scalar(-2.0));
    let grads = tape.backward(x.mul(y).unwrap()).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), -2.0);
    assert_eq!(grads.get(y).unwrap().item(), 3.0);
}

#[test]
fn backward_needs_scalar_and_skips_disconnected() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::full(&[2], 1.0));
    let unused = tape.leaf(Tensor::full(&[2], 1.0));
    assert!(matches!(tape.backward(x), Err(crate::Error::Shape(_))));
    let grads = tape.backward(x.sum()).unwrap();
    assert!(grads.get(unused).is_none());
    assert_eq!(grads.get_or_zeros(unused).data(), &[0.0, 0.0]);
}

#[test]
fn composite_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[3, 4]);
    let w = random(&mut rng, &[4, 5]);
    let g = random(&mut rng, &[5]);
    let b = random(&mut rng, &[5]);
    let report = check_inputs(&[x, w, g, b], 1e-5, |_, v| {
        let s = v[0].softmax()?;
        Ok(s.matmul(v[1])?.layer_norm(v[2], v[3], 1e-5)?.sum())
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

fn assert_fd<Fun>(inputs: Vec<Tensor<f64>>, f: Fun)
where
    Fun: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> crate::Result<Var<'t, f64>>,
{
    let report = check_inputs(&inputs, 1e-5, f).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn every_op_passes_finite_difference_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..3 {
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[3, 4]);
        let bias = random(&mut rng, &[4]);
        let w = random(&mut rng, &[4, 2]);
        let sq = random(&mut rng, &[3, 3]);
        let col = random(&mut rng, &[3]);
        let weights = random(&mut rng, &[3, 4]);

        assert_fd(vec![a.clone(), b.clone()], |_, v| wsum(&weights, v[0].add(v[1])?));
        assert_fd(vec![a.clone(), b.clone()], |_, v| wsum(&weights, v[0].sub(v[1])?));
        assert_fd(vec![a.clone(), b.clone()], |_, v| wsum(&weights, v[0].mul(v[1])?));
        assert_fd(vec![a.clone(), bias.clone()], |_, v| wsum(&weights, v[0].add(v[1])?));
        assert_fd(vec![a.clone(), bias.clone()], |_, v| wsum(&weights, v[0].mul(v[1])?));
        assert_fd(vec![a.clone(), bias.clone()], |_, v| wsum(&weights, v[0].sub(v[1])?));
        assert_fd(vec![a.clone(), col.clone()], |_, v| wsum(&weights, v[0].mul_rows(v[1])?));
        assert_fd(vec![a.clone()], |_, v| wsum(&weights, v[0].affine(-1.5, 0.3)));
        assert_fd(vec![a.clone()], |_, v| wsum(&weights, v[0].sigmoid()));
        assert_fd(vec![a.clone()], |_, v| wsum(&weights, v[0].relu()));
        assert_fd(vec![a.clone()], |_, v| {
            wsum(&weights, v[0].mul(v[0])?.affine(1.0, 0.5).log()?)
        });
        assert_fd(vec![a.clone()], |_, v| wsum(&weights, v[0].softmax()?));
        assert_fd(vec![a.clone(), bias.clone(), b.row(0).to_vec().pipe()], |_, v| {
            wsum(&weights, v[0].layer_norm(v[1], v[2], 1e-5)?)
        });
        assert_fd(vec![a.clone(), w.clone()], |_, v| {
            let out = v[0].matmul(v[1])?;
            Ok(out.mul(out)?.sum())
        });
        assert_fd(vec![a.clone(), b.clone()], |_, v| weighted3(v[0].matmul_nt(v[1])?));
        assert_fd(vec![a.clone(), sq.clone()], |_, v| wsum(&weights, v[0].matmul_tn(v[1])?.transpose()?));
        assert_fd(vec![a.clone()], |_, v| wsum(&weights, v[0].transpose()?.transpose()?));
        assert_fd(vec![a.clone()], |_, v| {
            let top = v[0].slice_rows(0, 1)?;
            let rest = v[0].slice_rows(1, 2)?;
            wsum(&weights, Var::concat_rows(&[rest, top])?)
        });
        assert_fd(vec![a.clone()], |_, v| {
            let left = v[0].slice_cols(0, 3)?;
            let right = v[0].slice_cols(3, 1)?;
            wsum(&weights, Var::concat_cols(&[right, left])?)
        });
        assert_fd(vec![a.clone()], |_, v| {
            let p = v[0].pick(&[1, 3, 0])?;
            Ok(p.mul(p)?.sum())
        });
        assert_fd(vec![a.clone()], |_, v| wsum(&weights, v[0].reshape(&[4, 3])?.reshape(&[3, 4])?));
        assert_fd(vec![a.clone()], |_, v| Ok(v[0].mul(v[0])?.mean()));
    }
}

fn wsum<'t>(w: &Tensor<f64>, x: Var<'t, f64>) -> crate::Result<Var<'t, f64>> {
    let w = x.tape().constant(w.clone());
    Ok(x.mul(w)?.sum())
}

fn weighted3(x: Var<'_, f64>) -> crate::Result<Var<'_, f64>> {
    let n = x.value().len();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
    let w = x.tape().constant(Tensor::new(&x.shape(), w)?);
    Ok(x.mul(w)?.sum())
}

trait Pipe {
    fn pipe(self) -> Tensor<f64>;
}

impl Pipe for Vec<f64> {
    fn pipe(self) -> Tensor<f64> {
        let n = self.len();
        Tensor::new(&[n], self).unwrap()
    }
}

#[test]
fn masked_scaled_softmax_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let e = random(&mut rng, &[3, 5]);
        let s = Tensor::new(&[5], (0..5).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap();
        let w = random(&mut rng, &[3, 5]);
        let mask: Arc<[bool]> = Arc::from(
            (0..15)
                .map(|j| j % 5 == 4 && j != 4)
                .collect::<Vec<_>>(),
        );
        let report = check_inputs(&[e, s], 1e-6, |tape, v| {
            let y = v[0].softmax_masked(Some(mask.clone()), Some(v[1]))?;
            Ok(y.mul(tape.constant(w.clone()))?.sum())
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}

#[test]
fn repeated_backward_accumulates_twice() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", random(&mut rng, &[3, 3]));
    let x = random(&mut rng, &[2, 3]);
    let tape = Tape::new();
    let loss = tape
        .constant(x)
        .matmul(tape.param(&store, w))
        .unwrap()
        .softmax()
        .unwrap()
        .pick(&[0, 2])
        .unwrap()
        .sum();
    let grads = tape.backward(loss).unwrap();
    store.accumulate(&grads);
    let once = store.grad(w).clone();
    let grads = tape.backward(loss).unwrap();
    store.accumulate(&grads);
    for (a, b) in store.grad(w).data().iter().zip(once.data()) {
        assert_eq!(*a, 2.0 * b);
    }
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let a = random(&mut rng, &[5, 8]).cast::<f32>();
        let b = random(&mut rng, &[8, 8]).cast::<f32>();
        let tape = Tape::new();
        let y = tape.constant(a).matmul(tape.constant(b)).unwrap().softmax().unwrap();
        y.value().data().to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn parameters_load_once_per_tape() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::full(&[2], 1.0));
    let tape = Tape::new();
    let a = tape.param(&store, w);
    let b = tape.param(&store, w);
    assert_eq!(a.id(), b.id());
    let grads = tape.backward(a.add(b).unwrap().sum()).unwrap();
    assert_eq!(grads.param(w).unwrap().data(), &[2.0, 2.0]);
}
