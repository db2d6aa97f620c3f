//! Op-level contracts and finite-difference gradient checks (64-bit).

use super::*;
use crate::rng::Rng;

/// Independent oracle: central differences of a scalar function of the inputs.
fn numeric_grad(f: &dyn Fn(&[Tensor<f64>]) -> f64, inputs: &[Tensor<f64>], which: usize, h: f64) -> Vec<f64> {
    let mut probe = inputs.to_vec();
    (0..inputs[which].len())
        .map(|i| {
            let orig = probe[which].data()[i];
            probe[which].data_mut()[i] = orig + h;
            let up = f(&probe);
            probe[which].data_mut()[i] = orig - h;
            let down = f(&probe);
            probe[which].data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Builds the graph once for analytic gradients and repeatedly for the
/// numeric ones, then compares every input element.
fn check(build: impl Fn(&mut Tape<f64>, &[Var]) -> Var, inputs: Vec<Tensor<f64>>, tol: f64) {
    let eval = |ts: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.leaf(t)).collect();
        let out = build(&mut tape, &vars);
        tape.value(out)[0]
    };
    let mut tape = Tape::new().with_finite_checks(true);
    let with_grad: Vec<Tensor<f64>> = inputs.iter().cloned().map(Tensor::with_grad).collect();
    let vars: Vec<Var> = with_grad.iter().map(|t| tape.leaf(t)).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[which].len()]);
        let numeric = numeric_grad(&eval, &inputs, which, 1e-5);
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            assert!(rel_err(*a, *n) <= tol, "input {which} element {i}: analytic {a} vs numeric {n}");
        }
    }
}

fn random(shape: Vec<usize>, rng: &mut Rng) -> Tensor<f64> {
    let n = numel(&shape);
    Tensor::new(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

/// Weighted sum so that every output element gets a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape<f64>, x: Var) -> Var {
    let n = tape.value(x).len();
    let w = Tensor::new(tape.shape(x).to_vec(), (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect()).unwrap();
    let w = tape.constant(w);
    let prod = tape.mul(x, w).unwrap();
    tape.sum(prod).unwrap()
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut tape = Tape::<f64>::new();
    let eye = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let x = tape.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let y = tape.matmul(eye, x).unwrap();
    assert_eq!(tape.value(y), tape.value(x));

    let a = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = tape.constant(Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap());
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.shape(c), &[2, 1]);
    assert_eq!(tape.value(c), &[3.0, 7.0]);
}

#[test]
fn matmul_rejects_bad_inner_dimension() {
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::zeros(vec![2, 3]));
    let b = tape.constant(Tensor::zeros(vec![2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
}

#[test]
fn matmul_gradient_check() {
    let mut rng = Rng::new(1);
    check(
        |t, v| {
            let c = t.matmul(v[0], v[1]).unwrap();
            weighted_sum(t, c)
        },
        vec![random(vec![3, 4], &mut rng), random(vec![4, 2], &mut rng)],
        1e-6,
    );
}

#[test]
fn bmm_and_linear_gradient_check() {
    let mut rng = Rng::new(2);
    for transpose_b in [false, true] {
        let b_shape = if transpose_b { vec![2, 5, 4] } else { vec![2, 4, 5] };
        check(
            |t, v| {
                let c = t.bmm(v[0], v[1], transpose_b).unwrap();
                weighted_sum(t, c)
            },
            vec![random(vec![2, 3, 4], &mut rng), random(b_shape, &mut rng)],
            1e-6,
        );
    }
    check(
        |t, v| {
            let y = t.linear(v[0], v[1], v[2]).unwrap();
            weighted_sum(t, y)
        },
        vec![random(vec![2, 3, 4], &mut rng), random(vec![4, 5], &mut rng), random(vec![5], &mut rng)],
        1e-6,
    );
}

#[test]
fn softmax_contract() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
    let y = tape.softmax(x).unwrap();
    assert_eq!(tape.value(y), &[0.5, 0.5]);

    // oracle: exp(i) / (e + e^2 + e^3) written out directly
    let x = tape.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let y = tape.softmax(x).unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    for (i, &p) in tape.value(y).iter().enumerate() {
        assert!((p - ((i + 1) as f64).exp() / z).abs() < 1e-12);
    }

    let shifted = tape.constant(Tensor::new(vec![3], vec![1001.0, 1002.0, 1003.0]).unwrap());
    let ys = tape.softmax(shifted).unwrap();
    for (a, b) in tape.value(y).iter().zip(tape.value(ys)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn softmax_gradient_check() {
    let mut rng = Rng::new(3);
    check(
        |t, v| {
            let y = t.softmax(v[0]).unwrap();
            weighted_sum(t, y)
        },
        vec![random(vec![3, 5], &mut rng)],
        1e-6,
    );
}

#[test]
fn layer_norm_contract() {
    let mut tape = Tape::<f64>::new();
    let ones = tape.constant(Tensor::full(vec![3], 1.0));
    let zeros = tape.constant(Tensor::zeros(vec![3]));
    let x = tape.constant(Tensor::new(vec![3], vec![5.0, 5.0, 5.0]).unwrap());
    let y = tape.layer_norm(x, ones, zeros, 1e-5).unwrap();
    assert_eq!(tape.value(y), &[0.0, 0.0, 0.0]);

    let bias = tape.constant(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
    let x = tape.constant(Tensor::new(vec![2, 3], vec![1.0, -2.0, 7.0, 0.5, 0.0, 3.0]).unwrap());
    let y = tape.layer_norm(x, zeros, bias, 1e-5).unwrap();
    assert_eq!(tape.value(y), &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3]);
}

#[test]
fn layer_norm_gradient_check() {
    let mut rng = Rng::new(4);
    check(
        |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            weighted_sum(t, y)
        },
        vec![random(vec![4, 6], &mut rng), random(vec![6], &mut rng), random(vec![6], &mut rng)],
        1e-5,
    );
}

#[test]
fn cross_entropy_contract() {
    let mut tape = Tape::<f64>::new();
    let uniform = tape.constant(Tensor::zeros(vec![2, 4]));
    let loss = tape.cross_entropy(uniform, &[1, 3], 0).unwrap();
    assert!((tape.value(loss)[0] - 4f64.ln()).abs() < 1e-12);

    let peaked = tape.constant(Tensor::new(vec![1, 3], vec![0.0, 200.0, 0.0]).unwrap());
    let loss = tape.cross_entropy(peaked, &[1], 0).unwrap();
    assert!(tape.value(loss)[0] < 1e-60);

    let bad = tape.constant(Tensor::zeros(vec![2, 4]));
    assert_eq!(
        tape.cross_entropy(bad, &[1, 4], 0).unwrap_err(),
        TensorError::TargetOutOfRange { position: 1, id: 4, vocab: 4 }
    );
}

#[test]
fn cross_entropy_ignores_pad_targets() {
    let mut tape = Tape::<f64>::new();
    let logits = tape.leaf(&Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 0.5, 0.5, 0.1]).unwrap().with_grad());
    let loss = tape.cross_entropy(logits, &[0, 0], 0).unwrap();
    assert_eq!(tape.value(loss), &[0.0]);
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(logits).is_none_or(|g| g.iter().all(|&x| x == 0.0)));

    // an ignored row gets zero gradient while the other row's is unchanged
    let mut rng = Rng::new(5);
    check(|t, v| t.cross_entropy(v[0], &[2, 0, 1], 0).unwrap(), vec![random(vec![3, 4], &mut rng)], 1e-6);
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(&Tensor::zeros(vec![2]).with_grad());
    assert_eq!(tape.backward(x).unwrap_err(), TensorError::NotScalar(vec![2]));
}

#[test]
fn sum_gradient_is_ones_and_disconnected_is_zero() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(&Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().with_grad());
    let p = tape.leaf(&Tensor::new(vec![2], vec![4.0, 5.0]).unwrap().with_grad());
    let loss = tape.sum(x).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x), Some(&[1.0, 1.0, 1.0][..]));
    assert_eq!(grads.get(p), None);

    let mut param = Tensor::new(vec![2], vec![4.0, 5.0]).unwrap();
    grads.accumulate_into(p, &mut param).unwrap();
    assert_eq!(param.grad(), Some(&[0.0, 0.0][..]));

    // a second pass without reset accumulates
    let mut xt = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    grads.accumulate_into(x, &mut xt).unwrap();
    let again = tape.backward(loss).unwrap();
    again.accumulate_into(x, &mut xt).unwrap();
    assert_eq!(xt.grad(), Some(&[2.0, 2.0, 2.0][..]));
}

#[test]
fn elementwise_and_shape_ops_gradient_check() {
    let mut rng = Rng::new(6);
    check(
        |t, v| {
            let s = t.add(v[0], v[1]).unwrap();
            let m = t.mul(s, v[1]).unwrap();
            let r = t.relu(m).unwrap();
            let sc = t.scale(r, 1.7).unwrap();
            let rs = t.reshape(sc, &[3, 2, 2]).unwrap();
            let pm = t.permute(rs, &[2, 0, 1]).unwrap();
            weighted_sum(t, pm)
        },
        vec![random(vec![4, 3], &mut rng), random(vec![4, 3], &mut rng)],
        1e-6,
    );
    check(
        |t, v| {
            let c = t.concat(&[v[0], v[1]], 1).unwrap();
            let tr = t.transpose(c).unwrap();
            let m = t.mean(tr).unwrap();
            let w = weighted_sum(t, tr);
            t.add(m, w).unwrap()
        },
        vec![random(vec![2, 3], &mut rng), random(vec![2, 1], &mut rng)],
        1e-6,
    );
}

#[test]
fn permute_layout() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(vec![2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
    let t = tape.transpose(x).unwrap();
    assert_eq!(tape.shape(t), &[3, 2]);
    assert_eq!(tape.value(t), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    assert!(tape.permute(x, &[0, 0]).is_err());
}

#[test]
fn concat_layout() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::from_f64(vec![2, 1], &[1.0, 2.0]).unwrap());
    let b = tape.constant(Tensor::from_f64(vec![2, 2], &[3.0, 4.0, 5.0, 6.0]).unwrap());
    let c = tape.concat(&[a, b], 1).unwrap();
    assert_eq!(tape.value(c), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    let rows = tape.concat(&[b, b], 0).unwrap();
    assert_eq!(tape.shape(rows), &[4, 2]);
    assert!(tape.concat(&[a, b], 0).is_err());
}

#[test]
fn embedding_gathers_and_scatters() {
    let mut rng = Rng::new(7);
    let ids = [2usize, 0, 2, 1];
    check(
        |t, v| {
            let e = t.embedding(v[0], &ids, &[2, 2]).unwrap();
            weighted_sum(t, e)
        },
        vec![random(vec![3, 4], &mut rng)],
        1e-6,
    );
    let mut tape = Tape::<f64>::new();
    let table = tape.constant(Tensor::zeros(vec![3, 2]));
    assert_eq!(
        tape.embedding(table, &[3], &[1]).unwrap_err(),
        TensorError::IndexOutOfRange { id: 3, rows: 3 }
    );
}

#[test]
fn dropout_is_inverted_and_unbiased() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(vec![200_000], 1.0));
    let mut rng = Rng::new(8);
    let same = tape.dropout(x, 0.0, &mut rng).unwrap();
    assert_eq!(same, x);
    let y = tape.dropout(x, 0.1, &mut rng).unwrap();
    let vals = tape.value(y);
    assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.9).abs() < 1e-12));
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    // std of the mean is sqrt(p/(1-p)/n) ~ 7.5e-4
    assert!((mean - 1.0).abs() < 4e-3, "mean {mean}");
    assert!(tape.dropout(x, 1.0, &mut rng).is_err());
}

#[test]
fn finite_checks_catch_overflow() {
    let mut tape = Tape::<f32>::new().with_finite_checks(true);
    let x = tape.constant(Tensor::full(vec![2], 3e38));
    assert_eq!(tape.add(x, x).unwrap_err(), TensorError::NonFinite { op: "add" });
    let mut lax = Tape::<f32>::new();
    let x = lax.constant(Tensor::full(vec![2], 3e38));
    assert!(lax.add(x, x).is_ok());
}

#[test]
fn softmax_rows_sum_to_one_property() {
    use proptest::prelude::*;
    proptest!(|(rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 1..9), 1..6))| {
        let width = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().cycle().take(width).copied()).collect();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![rows.len(), width], flat).unwrap());
        let y = tape.softmax(x).unwrap();
        for row in tape.value(y).chunks(width) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    });
}

#[test]
fn layer_norm_moments_property() {
    use proptest::prelude::*;
    proptest!(|(row in proptest::collection::vec(-100.0f64..100.0, 2..16))| {
        let spread = row.iter().cloned().fold(f64::MIN, f64::max) - row.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-2);
        let d = row.len();
        let mut tape = Tape::<f64>::new();
        let g = tape.constant(Tensor::full(vec![d], 1.0));
        let b = tape.constant(Tensor::zeros(vec![d]));
        let x = tape.constant(Tensor::new(vec![d], row).unwrap());
        let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
        let v = tape.value(y);
        let mean = v.iter().sum::<f64>() / d as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d as f64;
        prop_assert!(mean.abs() <= 1e-6);
        prop_assert!((var - 1.0).abs() <= 1e-4);
    });
}
