use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::error::Result;
use crate::rng::rng_for;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_for(seed, "test-tensor", 0);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn affine_identity_and_zero_weights() {
    let mut tape = Tape::new();
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 3 + i] = 1.0;
    }
    let w = tape.constant(eye).unwrap();
    let b = tape.constant(Tensor::zeros(&[3])).unwrap();
    let x = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
    let y = tape.affine(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0]);

    let w0 = tape.constant(Tensor::zeros(&[1, 3])).unwrap();
    let b5 = tape.constant(Tensor::vector(vec![5.0])).unwrap();
    let y = tape.affine(x, w0, b5).unwrap();
    assert_eq!(tape.value(y).data(), &[5.0]);
}

#[test]
fn affine_matches_dot_product_loop() {
    let wt = random_tensor(&[4, 3], 1);
    let bt = random_tensor(&[4], 2);
    let xt = random_tensor(&[5, 3], 3);
    let mut tape = Tape::new();
    let (w, b, x) = (
        tape.constant(wt.clone()).unwrap(),
        tape.constant(bt.clone()).unwrap(),
        tape.constant(xt.clone()).unwrap(),
    );
    let y = tape.affine(x, w, b).unwrap();
    for i in 0..5 {
        for j in 0..4 {
            let mut s = bt.data()[j];
            for k in 0..3 {
                s += xt.row(i)[k] * wt.row(j)[k];
            }
            assert!((tape.value(y).row(i)[j] - s).abs() < 1e-14);
        }
    }
}

#[test]
fn affine_rejects_mismatched_inner_dimension() {
    let mut tape = Tape::new();
    let w = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = tape.constant(Tensor::zeros(&[2])).unwrap();
    let x = tape.constant(Tensor::zeros(&[4, 2])).unwrap();
    assert!(matches!(tape.affine(x, w, b), Err(crate::Error::Dimension(_))));
}

#[test]
fn activation_fixed_points() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![-1.0, 0.0])).unwrap();
    let r = tape.relu(x).unwrap();
    let t = tape.tanh(x).unwrap();
    let s = tape.sigmoid(x).unwrap();
    assert_eq!(tape.value(r).data()[0], 0.0);
    assert_eq!(tape.value(t).data()[1], 0.0);
    assert_eq!(tape.value(s).data()[1], 0.5);
}

#[test]
fn maxpool_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(2, 2, vec![1.0, 5.0, 3.0, 2.0]).unwrap()).unwrap();
    let y = tape.maxpool_rows(x).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 5.0]);
    let single = tape.constant(Tensor::matrix(1, 3, vec![0.1, -2.0, 4.0]).unwrap()).unwrap();
    let y = tape.maxpool_rows(single).unwrap();
    assert_eq!(tape.value(y).data(), &[0.1, -2.0, 4.0]);
    let empty = tape.constant(Tensor::zeros(&[0, 3])).unwrap();
    assert!(matches!(tape.maxpool_rows(empty), Err(crate::Error::Argument(_))));
}

#[test]
fn maxpool_gradient_goes_to_first_argmax() {
    let mut tape = Tape::new();
    let x = tape
        .variable(Tensor::matrix(3, 2, vec![2.0, 1.0, 2.0, 4.0, 0.0, 4.0]).unwrap())
        .unwrap();
    let y = tape.maxpool_rows(x).unwrap();
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn maxpool_is_permutation_invariant(
        rows in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 1..12),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng_for(seed, "perm", 0));
        let pool = |r: &Vec<Vec<f64>>| {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::matrix(r.len(), 3, r.concat()).unwrap()).unwrap();
            let y = tape.maxpool_rows(x).unwrap();
            tape.value(y).clone()
        };
        prop_assert_eq!(pool(&rows), pool(&shuffled));
    }
}

#[test]
fn backward_quadratic_and_constant() {
    let mut tape = Tape::new();
    let z = tape.variable(Tensor::vector(vec![1.0, -2.0])).unwrap();
    let c = tape.variable(Tensor::vector(vec![3.0])).unwrap();
    let _unused = tape.scale(c, 2.0).unwrap();
    let loss = tape.sum_squares(z).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(z).unwrap().data(), &[2.0, -4.0]);
    assert!(g.get(c).is_none());
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let z = tape.variable(Tensor::vector(vec![1.0, -2.0])).unwrap();
    let y = tape.tanh(z).unwrap();
    assert!(matches!(tape.backward(y), Err(crate::Error::Argument(_))));
}

#[test]
fn norm_gradient_is_zero_at_origin() {
    let mut tape = Tape::new();
    let z = tape.variable(Tensor::zeros(&[4])).unwrap();
    let n = tape.norm(z).unwrap();
    assert_eq!(tape.value(n).item().unwrap(), 0.0);
    let g = tape.backward(n).unwrap();
    assert_eq!(g.get(z).unwrap().data(), &[0.0; 4]);
}

#[test]
fn shared_affine_equals_explicit_concatenation() {
    let rows_t = random_tensor(&[6, 3], 10);
    let shared_t = random_tensor(&[5], 11);
    let w_t = random_tensor(&[4, 8], 12);
    let b_t = random_tensor(&[4], 13);
    let mut tape = Tape::new();
    let rows = tape.variable(rows_t).unwrap();
    let shared = tape.variable(shared_t).unwrap();
    let w = tape.variable(w_t).unwrap();
    let b = tape.variable(b_t).unwrap();
    let fused = tape.shared_affine(rows, shared, w, b).unwrap();
    let rep = tape.broadcast_rows(shared, 6).unwrap();
    let cat = tape.concat_cols(rep, rows).unwrap();
    let plain = tape.affine(cat, w, b).unwrap();
    assert!(tape.value(fused).max_abs_diff(tape.value(plain)) < 1e-14);

    // gradients agree too
    let wf = tape.tanh(fused).unwrap();
    let lf = tape.sum(wf).unwrap();
    let gf = tape.backward(lf).unwrap();
    let wp = tape.tanh(plain).unwrap();
    let lp = tape.sum(wp).unwrap();
    let gp = tape.backward(lp).unwrap();
    for v in [rows, shared, w, b] {
        assert!(gf.get(v).unwrap().max_abs_diff(gp.get(v).unwrap()) < 1e-13);
    }
}

/// Exercises every differentiable primitive in one scalar function.
fn composite(p: &ParamSet, x: &Tensor) -> Result<(f64, GradMap)> {
    let mut tape = Tape::new();
    let b = p.bind(&mut tape, true)?;
    let xv = tape.constant(x.clone())?;
    let h = tape.shared_affine(xv, b.var("z")?, b.var("w0")?, b.var("b0")?)?;
    let (hn, _) = tape.batch_norm(h, b.var("g")?, b.var("beta")?, BN_EPS)?;
    let h = tape.relu(hn)?;
    let extra = tape.broadcast_rows(b.var("z")?, x.rows())?;
    let h = tape.concat_cols(h, extra)?;
    let h = tape.affine(h, b.var("w1")?, b.var("b1")?)?;
    let hs = tape.sigmoid(h)?;
    let ht = tape.tanh(h)?;
    let m = tape.max_of(&[hs, ht])?;
    let pooled = tape.maxpool_rows(m)?;
    let r0 = tape.row(m, 0)?;
    let stacked = tape.stack_rows(&[pooled, r0])?;
    let flat = tape.reshape(stacked, vec![stacked_len(&tape, stacked)])?;
    let c = tape.clamp(flat, -0.3, 0.6)?;
    let a = tape.abs(c)?;
    let ls = tape.log_sigmoid(flat)?;
    let sm = tape.sum(ls)?;
    let mn = tape.mean(a)?;
    let nz = tape.norm(b.var("z")?)?;
    let sq = tape.sum_squares(b.var("z")?)?;
    let d = tape.sub(mn, sm)?;
    let d = tape.scale(d, 0.7)?;
    let loss = tape.add_all(&[d, nz, sq])?;
    let g = tape.backward(loss)?;
    Ok((tape.value(loss).item()?, b.gradients(&tape, &g)))
}

fn stacked_len(tape: &Tape, v: Var) -> usize {
    tape.value(v).len()
}

#[test]
fn composite_function_passes_gradcheck() {
    let mut p = ParamSet::new();
    p.insert("z", random_tensor(&[4], 20), true).unwrap();
    p.insert("w0", random_tensor(&[5, 7], 21), true).unwrap();
    p.insert("b0", random_tensor(&[5], 22), true).unwrap();
    p.insert("g", random_tensor(&[5], 23).map(|v| v + 1.5), true).unwrap();
    p.insert("beta", random_tensor(&[5], 24), true).unwrap();
    p.insert("w1", random_tensor(&[3, 9], 25), true).unwrap();
    p.insert("b1", random_tensor(&[3], 26), true).unwrap();
    let x = random_tensor(&[6, 3], 27);
    let err = gradcheck(|p| composite(p, &x), &p, 1e-5, 200, 5).unwrap();
    assert!(err < 1e-6, "max relative error {err}");
}

#[test]
fn eval_normalization_passes_gradcheck() {
    let mut p = ParamSet::new();
    p.insert("x", random_tensor(&[3, 4], 30), true).unwrap();
    p.insert("g", random_tensor(&[4], 31), true).unwrap();
    p.insert("b", random_tensor(&[4], 32), true).unwrap();
    let mean = vec![0.1, -0.2, 0.0, 0.5];
    let var = vec![1.0, 0.5, 2.0, 0.1];
    let f = |p: &ParamSet| -> Result<(f64, GradMap)> {
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, true)?;
        let y = tape.normalize(b.var("x")?, b.var("g")?, b.var("b")?, &mean, &var, BN_EPS)?;
        let y = tape.tanh(y)?;
        let s = tape.sum(y)?;
        let g = tape.backward(s)?;
        Ok((tape.value(s).item()?, b.gradients(&tape, &g)))
    };
    assert!(gradcheck(f, &p, 1e-5, 100, 6).unwrap() < 1e-7);
}

#[test]
fn non_finite_values_are_errors() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![1e308])).unwrap();
    assert!(matches!(tape.scale(x, 10.0), Err(crate::Error::Numeric(_))));
}
