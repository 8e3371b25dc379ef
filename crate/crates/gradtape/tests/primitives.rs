use gradtape::cases::{primitive_cases, random_tensor};
use gradtape::{
    grad_check, grad_check_params, read_checkpoint, write_checkpoint, AdamConfig, AdamState,
    CheckpointHeader, Dtype, Grads, ParamStore, Tape, TapeError, Tensor,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_primitive_passes_grad_check_at_ten_points() {
    for point in 0..10u64 {
        for case in primitive_cases(1000 + point) {
            let err = grad_check(&case.f, &case.inputs).unwrap();
            assert!(err < 1e-4, "{} at point {point}: relative error {err:e}", case.name);
        }
    }
}

#[test]
fn sum_of_linear_matches_outer_product() {
    // loss = sum(x W^T): dL/dW[i][j] = sum over rows of x[.][j]
    let x = Tensor::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.5, 4.0]]).unwrap();
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::zeros(2, 3), true);
    let mut t = Tape::new();
    let wv = t.param(&store, w);
    let xv = t.constant(x);
    let y = t.linear(wv, xv, None).unwrap();
    let loss = t.sum(y);
    t.backward(loss).unwrap();
    assert_eq!(t.param_grads(&store).get(w).data(), &[0.0, 2.5, 7.0, 0.0, 2.5, 7.0]);

    let err = grad_check_params(&store, |t, s| {
        let wv = t.param(s, w);
        let xv = t.constant(Tensor::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.5, 4.0]]).unwrap());
        let y = t.linear(wv, xv, None)?;
        let y = t.tanh(y);
        Ok(t.sum(y))
    })
    .unwrap();
    assert!(err < 1e-4);
}

#[test]
fn single_head_attention_matches_composed_route() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mut t = Tape::new();
        let q = t.input(random_tensor(&mut rng, 3, 5, 2.0));
        let k = t.input(random_tensor(&mut rng, 4, 5, 2.0));
        let v = t.input(random_tensor(&mut rng, 4, 5, 2.0));
        let fused = t.multi_head_attention(q, k, v, 1).unwrap();
        let composed = t.scaled_dot_attention(q, k, v).unwrap();
        for (a, b) in t.value(fused).data().iter().zip(t.value(composed).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let case = &primitive_cases(77)[25];
        let mut t = Tape::new();
        let vars: Vec<_> = case.inputs.iter().map(|x| t.input(x.clone())).collect();
        let out = (case.f)(&mut t, &vars).unwrap();
        t.value(out).item()
    };
    assert_eq!(run().to_bits(), run().to_bits());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        vals in proptest::collection::vec(-30.0f64..30.0, 24),
    ) {
        let cols = vals.len() / rows;
        let x = Tensor::from_vec(rows, cols, vals[..rows * cols].to_vec()).unwrap();
        for axis in [0, 1] {
            let mut t = Tape::new();
            let xv = t.input(x.clone());
            let y = t.softmax(xv, axis).unwrap();
            let y = t.value(y);
            prop_assert!(y.data().iter().all(|&p| p >= 0.0));
            let sums: Vec<f64> = if axis == 1 {
                (0..rows).map(|r| y.row_slice(r).iter().sum()).collect()
            } else {
                (0..cols).map(|c| (0..rows).map(|r| y.get(r, c)).sum()).collect()
            };
            for s in sums {
                prop_assert!((s - 1.0).abs() <= 1e-9);
            }
        }
    }
}

fn one_param_store(value: &[f64]) -> ParamStore {
    let mut s = ParamStore::new();
    s.add("p", Tensor::row(value), true);
    s
}

#[test]
fn adam_zero_gradient_leaves_params_but_counts_step() {
    let mut store = one_param_store(&[1.0, -2.0]);
    let before = store.clone();
    let mut adam = AdamState::new(&store, AdamConfig::default());
    let zero = Grads::zeros_like(&store);
    adam.step(&mut store, &zero).unwrap();
    assert_eq!(store, before);
    assert_eq!(adam.step, 1);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    // m = (1-b1) g, v = (1-b2) g^2, bias corrected to g and g^2:
    // update = lr * g / (|g| + eps)
    let mut store = one_param_store(&[0.0, 0.0]);
    let mut adam = AdamState::new(&store, AdamConfig::default());
    let mut g = Grads::zeros_like(&store);
    g.get_mut(gradtape::ParamId(0))
        .data_mut()
        .copy_from_slice(&[0.3, -5.0]);
    adam.step(&mut store, &g).unwrap();
    let p = store.get(gradtape::ParamId(0)).data();
    let expect0 = -1e-4 * 0.3 / (0.3 + 1e-8);
    let expect1 = 1e-4 * 5.0 / (5.0 + 1e-8);
    assert!((p[0] - expect0).abs() < 1e-15);
    assert!((p[1] - expect1).abs() < 1e-15);
}

#[test]
fn adam_constant_gradient_moves_against_sign() {
    let mut store = one_param_store(&[0.5]);
    let mut adam = AdamState::new(&store, AdamConfig::default());
    let mut g = Grads::zeros_like(&store);
    g.get_mut(gradtape::ParamId(0)).data_mut()[0] = 2.0;
    let mut last = 0.5;
    for _ in 0..100 {
        adam.step(&mut store, &g).unwrap();
        let now = store.get(gradtape::ParamId(0)).data()[0];
        assert!(now < last);
        last = now;
    }
}

#[test]
fn adam_rejects_mismatched_grads() {
    let mut store = one_param_store(&[0.5]);
    let mut adam = AdamState::new(&store, AdamConfig::default());
    let other = one_param_store(&[0.5, 1.0]);
    let err = adam.step(&mut store, &Grads::zeros_like(&other)).unwrap_err();
    assert!(matches!(err, TapeError::ShapeMismatch { .. }));
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    store.add("a", random_tensor(&mut rng, 3, 4, 1.0), true);
    store.add("stats", random_tensor(&mut rng, 1, 4, 1.0), false);
    for dtype in [Dtype::F32, Dtype::F64] {
        let header = CheckpointHeader::new(&store, dtype, 9, 120, serde_json::json!({"lr": 1e-4}));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &header, &store).unwrap();
        let (h2, loaded) = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(h2, header);
        let mut expected = store.clone();
        if dtype == Dtype::F32 {
            expected.round_to_f32();
        }
        assert_eq!(loaded, expected);
    }
    let header = CheckpointHeader::new(&store, Dtype::F64, 0, 0, serde_json::Value::Null);
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &header, &store).unwrap();
    buf.truncate(buf.len() - 3);
    assert!(read_checkpoint(&buf[..]).is_err());
}
