use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uavlab::autodiff::{attention_weights, Graph, Mode, NodeId, Tensor};
use uavlab::gradcheck::{self, random, random_away_from_zero, random_distinct, STEP};
use uavlab::Result;

const SMOOTH_TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn assert_grads<F>(name: &str, inputs: &[Tensor<f64>], mode: Mode, build: F)
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let reports = gradcheck::check(inputs, mode, 7, STEP, build).unwrap();
    let worst = gradcheck::worst(&reports);
    assert!(worst <= SMOOTH_TOL, "{name}: relative error {worst:e} ({reports:?})");
}

#[test]
fn grad_add_sub_mul_broadcast() {
    let mut r = rng(1);
    let a = random(&[2, 3, 4], -1.0, 1.0, &mut r);
    let b = random(&[3, 4], -1.0, 1.0, &mut r);
    let c = random(&[4], -1.0, 1.0, &mut r);
    assert_grads("add", &[a.clone(), b.clone()], Mode::Eval, |g, x| g.add(x[0], x[1]));
    assert_grads("add swapped", &[c.clone(), a.clone()], Mode::Eval, |g, x| g.add(x[0], x[1]));
    assert_grads("sub", &[a.clone(), c.clone()], Mode::Eval, |g, x| g.sub(x[0], x[1]));
    assert_grads("mul", &[a.clone(), b], Mode::Eval, |g, x| g.mul(x[0], x[1]));
    assert_grads("scale", &[a], Mode::Eval, |g, x| Ok(g.scale(x[0], -2.5)));
}

#[test]
fn grad_matmul_batched_and_shared() {
    let mut r = rng(2);
    let a = random(&[2, 3, 4], -1.0, 1.0, &mut r);
    let b = random(&[2, 4, 2], -1.0, 1.0, &mut r);
    let w = random(&[4, 3], -1.0, 1.0, &mut r);
    assert_grads("matmul batched", &[a.clone(), b], Mode::Eval, |g, x| g.matmul(x[0], x[1]));
    assert_grads("matmul shared", &[a, w], Mode::Eval, |g, x| g.matmul(x[0], x[1]));
}

#[test]
fn grad_linear_with_and_without_bias() {
    let mut r = rng(3);
    let x = random(&[2, 3, 4], -1.0, 1.0, &mut r);
    let w = random(&[3, 4], -1.0, 1.0, &mut r);
    let b = random(&[3], -1.0, 1.0, &mut r);
    assert_grads("linear+bias", &[x.clone(), w.clone(), b], Mode::Eval, |g, v| {
        g.linear(v[0], v[1], Some(v[2]))
    });
    assert_grads("linear", &[x, w], Mode::Eval, |g, v| g.linear(v[0], v[1], None));
}

#[test]
fn grad_conv2d_same_padding_and_strided_patch() {
    let mut r = rng(4);
    let x = random(&[2, 2, 4, 4], -1.0, 1.0, &mut r);
    let w = random(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
    let b = random(&[3], -1.0, 1.0, &mut r);
    assert_grads("conv2d 3x3 pad1", &[x.clone(), w, b.clone()], Mode::Eval, |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), (1, 1), (1, 1))
    });
    let wp = random(&[3, 2, 2, 2], -1.0, 1.0, &mut r);
    assert_grads("conv2d 2x2 stride2", &[x.clone(), wp, b.clone()], Mode::Eval, |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), (2, 1), (0, 0))
    });
    let wide = random(&[2, 2, 5, 7], -1.0, 1.0, &mut r);
    let w3 = random(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
    assert_grads("conv2d 3x3 stride2 pad1", &[wide, w3, b], Mode::Eval, |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), (2, 3), (1, 1))
    });
}

#[test]
fn grad_maxpool_away_from_ties() {
    let x = random_distinct(&[1, 2, 4, 5], &mut rng(5));
    assert_grads("maxpool2d", &[x], Mode::Eval, |g, v| g.maxpool2d(v[0]));
}

#[test]
fn grad_batchnorm_train_and_eval() {
    let mut r = rng(6);
    let x = random(&[3, 2, 2, 3], -1.0, 1.0, &mut r);
    let gamma = random(&[2], 0.5, 1.5, &mut r);
    let beta = random(&[2], -0.5, 0.5, &mut r);
    let rm = Tensor::new([2], vec![0.1, -0.2]).unwrap();
    let rv = Tensor::new([2], vec![0.9, 1.3]).unwrap();
    for mode in [Mode::Train, Mode::Eval] {
        assert_grads("batchnorm2d", &[x.clone(), gamma.clone(), beta.clone()], mode, |g, v| {
            Ok(g.batchnorm2d(v[0], v[1], v[2], &rm, &rv, 0.1, 1e-5)?.0)
        });
    }
}

#[test]
fn grad_layernorm_relu_gelu_softmax() {
    let mut r = rng(7);
    let x = random(&[2, 3, 4], -2.0, 2.0, &mut r);
    let gamma = random(&[4], 0.5, 1.5, &mut r);
    let beta = random(&[4], -0.5, 0.5, &mut r);
    assert_grads("layernorm", &[x.clone(), gamma, beta], Mode::Eval, |g, v| {
        g.layernorm(v[0], v[1], v[2], 1e-12)
    });
    let xr = random_away_from_zero(&[3, 4], 0.05, &mut r);
    assert_grads("relu", &[xr], Mode::Eval, |g, v| Ok(g.relu(v[0])));
    assert_grads("gelu", std::slice::from_ref(&x), Mode::Eval, |g, v| Ok(g.gelu(v[0])));
    assert_grads("softmax", &[x], Mode::Eval, |g, v| g.softmax(v[0]));
}

#[test]
fn grad_dropout_train_with_pinned_mask() {
    let x = random(&[4, 4], -1.0, 1.0, &mut rng(8));
    assert_grads("dropout", &[x], Mode::Train, |g, v| g.dropout(v[0], 0.3));
}

#[test]
fn grad_shape_ops() {
    let mut r = rng(9);
    let x = random(&[2, 3, 4], -1.0, 1.0, &mut r);
    let y = random(&[2, 1, 4], -1.0, 1.0, &mut r);
    let t = random(&[1, 2, 4], -1.0, 1.0, &mut r);
    assert_grads("reshape", std::slice::from_ref(&x), Mode::Eval, |g, v| g.reshape(v[0], &[6, 4]));
    assert_grads("transpose", std::slice::from_ref(&x), Mode::Eval, |g, v| g.transpose(v[0], 0, 2));
    assert_grads("permute", std::slice::from_ref(&x), Mode::Eval, |g, v| g.permute(v[0], &[1, 2, 0]));
    assert_grads("concat", &[y, x.clone()], Mode::Eval, |g, v| g.concat(&[v[0], v[1]], 1));
    assert_grads("slice", std::slice::from_ref(&x), Mode::Eval, |g, v| g.slice(v[0], 1, 1, 2));
    assert_grads("expand", &[t], Mode::Eval, |g, v| g.expand(v[0], 3));
    assert_grads("sum", std::slice::from_ref(&x), Mode::Eval, |g, v| Ok(g.sum(v[0])));
    assert_grads("mean", &[x], Mode::Eval, |g, v| Ok(g.mean(v[0])));
}

#[test]
fn grad_cross_entropy_and_attention() {
    let mut r = rng(10);
    let logits = random(&[3, 4], -2.0, 2.0, &mut r);
    assert_grads("cross_entropy", &[logits], Mode::Eval, |g, v| g.cross_entropy(v[0], &[0, 3, 1]));
    let q = random(&[1, 2, 3, 4], -1.0, 1.0, &mut r);
    let k = random(&[1, 2, 3, 4], -1.0, 1.0, &mut r);
    let vv = random(&[1, 2, 3, 4], -1.0, 1.0, &mut r);
    assert_grads("attention", &[q, k, vv], Mode::Eval, |g, v| {
        g.scaled_dot_product_attention(v[0], v[1], v[2])
    });
}

#[test]
fn grad_inverse_and_packed_skew() {
    let mut r = rng(11);
    let mut a = random(&[2, 3, 3], -0.3, 0.3, &mut r);
    for b in 0..2 {
        for i in 0..3 {
            a.data_mut()[b * 9 + i * 4] += 2.0;
        }
    }
    assert_grads("inverse", &[a], Mode::Eval, |g, v| g.inverse(v[0]));
    let p = random(&[2, 6], -1.0, 1.0, &mut r);
    assert_grads("skew_from_packed", &[p], Mode::Eval, |g, v| g.skew_from_packed(v[0], 4));
}

#[test]
fn sum_of_squares_gradient_is_two_x() {
    let x = random(&[3, 4], -1.0, 1.0, &mut rng(12));
    let mut g = Graph::new(Mode::Eval, 0);
    let xi = g.leaf(x.clone(), true);
    let sq = g.mul(xi, xi).unwrap();
    let loss = g.sum(sq);
    let grads = g.backward(loss).unwrap();
    let expected = x.map(|v| 2.0 * v);
    assert!(grads.get(xi).unwrap().max_abs_diff(&expected) < 1e-6);
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let logits = Tensor::<f64>::new([1, 4], vec![0.3, -1.2, 2.0, 0.5]).unwrap();
    let mut g = Graph::new(Mode::Eval, 0);
    let l = g.leaf(logits.clone(), true);
    let loss = g.cross_entropy(l, &[2]).unwrap();
    let grads = g.backward(loss).unwrap();
    let z: f64 = logits.data().iter().map(|v| v.exp()).sum();
    let expected: Vec<f64> = logits
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v.exp() / z - if i == 2 { 1.0 } else { 0.0 })
        .collect();
    let expected = Tensor::new([1, 4], expected).unwrap();
    assert!(grads.get(l).unwrap().max_abs_diff(&expected) < 1e-6);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::<f64>::new(Mode::Eval, 0);
    let x = g.leaf(Tensor::zeros([2]), true);
    assert!(matches!(g.backward(x), Err(uavlab::Error::Contract(_))));
}

#[test]
fn shape_mismatch_names_the_op() {
    let mut g = Graph::<f32>::new(Mode::Eval, 0);
    let a = g.leaf(Tensor::zeros([2, 3]), false);
    let b = g.leaf(Tensor::zeros([4, 2]), false);
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
}

#[test]
fn conv_and_pool_shape_rules() {
    let mut g = Graph::<f32>::new(Mode::Eval, 0);
    let x = g.constant(Tensor::zeros([1, 1, 128, 157]));
    let w = g.constant(Tensor::zeros([16, 1, 3, 3]));
    let y = g.conv2d(x, w, None, (1, 1), (1, 1)).unwrap();
    assert_eq!(g.shape(y), [1, 16, 128, 157]);
    let p = g.maxpool2d(y).unwrap();
    assert_eq!(g.shape(p), [1, 16, 64, 78]);
}

#[test]
fn softmax_rows_sum_to_one() {
    let x = random(&[5, 9], -10.0, 10.0, &mut rng(13)).cast::<f32>();
    let mut g = Graph::new(Mode::Eval, 0);
    let xi = g.constant(x);
    let s = g.softmax(xi).unwrap();
    for row in g.value(s).data().chunks(9) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn attention_weights_are_row_stochastic() {
    let mut r = rng(14);
    let q = random(&[2, 3, 5, 4], -2.0, 2.0, &mut r);
    let k = random(&[2, 3, 5, 4], -2.0, 2.0, &mut r);
    let w = attention_weights(&q, &k);
    assert_eq!(w.shape(), [2, 3, 5, 5]);
    for row in w.data().chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    }
}

#[test]
fn batchnorm_eval_is_per_channel_affine() {
    let x = random(&[2, 2, 3, 3], -1.0, 1.0, &mut rng(15));
    let rm = Tensor::new([2], vec![0.2, -0.1]).unwrap();
    let rv = Tensor::new([2], vec![0.5, 2.0]).unwrap();
    let mut g = Graph::new(Mode::Eval, 0);
    let xi = g.constant(x.clone());
    let gamma = g.constant(Tensor::new([2], vec![1.5, 0.5]).unwrap());
    let beta = g.constant(Tensor::new([2], vec![0.1, 0.2]).unwrap());
    let (y, update) = g.batchnorm2d(xi, gamma, beta, &rm, &rv, 0.1, 1e-5).unwrap();
    assert!(update.is_none());
    for (i, (&xv, &yv)) in x.data().iter().zip(g.value(y).data()).enumerate() {
        let c = (i / 9) % 2;
        let (ga, be) = ([1.5, 0.5][c], [0.1, 0.2][c]);
        let expected = ga * (xv - rm[c]) / (rv[c] + 1e-5f64).sqrt() + be;
        assert!((expected - yv).abs() < 1e-12);
    }
}

#[test]
fn batchnorm_train_updates_running_stats_with_momentum() {
    // One channel, values 1..4: mean 2.5, biased var 1.25, unbiased 5/3.
    let x = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let mut g = Graph::<f64>::new(Mode::Train, 0);
    let xi = g.constant(x);
    let gamma = g.constant(Tensor::ones([1]));
    let beta = g.constant(Tensor::zeros([1]));
    let (_, update) = g
        .batchnorm2d(xi, gamma, beta, &Tensor::zeros([1]), &Tensor::ones([1]), 0.1, 1e-5)
        .unwrap();
    let (rm, rv) = update.unwrap();
    assert!((rm[0] - 0.25).abs() < 1e-12);
    assert!((rv[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn dropout_eval_identity_and_train_expectation() {
    let x = Tensor::<f64>::full([10_000], 1.0);
    let mut g = Graph::new(Mode::Eval, 0);
    let xi = g.constant(x.clone());
    assert_eq!(g.dropout(xi, 0.5).unwrap(), xi);

    let mut g = Graph::new(Mode::Train, 3);
    let xi = g.constant(x);
    let y = g.dropout(xi, 0.5).unwrap();
    let mean = g.value(y).sum() / 10_000.0;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
}

#[test]
fn ops_do_not_mutate_inputs() {
    let x = random(&[2, 4], -1.0, 1.0, &mut rng(16));
    let mut g = Graph::new(Mode::Train, 0);
    let xi = g.leaf(x.clone(), true);
    let a = g.relu(xi);
    let b = g.softmax(a).unwrap();
    let c = g.dropout(b, 0.5).unwrap();
    let d = g.scale(c, 3.0);
    let loss = g.sum(d);
    g.backward(loss).unwrap();
    assert_eq!(g.value(xi), &x);
}
