use posetrack_core::tensor::{Conv2dSpec, Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Direct six-loop cross-correlation with zero padding.
fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for b in 0..n {
        for o in 0..f {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xo * stride + j) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x.data()[((b * c + ci) * h + iy as usize) * w + ix as usize]
                                        * k.data()[((o * c + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                    }
                    out[((b * f + o) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    t(&[n, f, oh, ow], out)
}

#[test]
fn conv_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::<f64>::randn([1, 3, 4, 5], 1.0, &mut rng);
    let mut k = vec![0.0; 9];
    for c in 0..3 {
        k[c * 3 + c] = 1.0;
    }
    let mut g = Graph::inference();
    let xv = g.input(x.clone());
    let kv = g.input(t(&[3, 3, 1, 1], k));
    let y = g.conv2d(xv, kv, None, Conv2dSpec::same(1, 1)).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn conv_window_sum() {
    let mut g = Graph::inference();
    let x = g.input(Tensor::full([1, 1, 5, 5], 1.0f64));
    let k = g.input(Tensor::full([1, 1, 3, 3], 1.0));
    let y = g.conv2d(x, k, None, Conv2dSpec::same(3, 1)).unwrap();
    let v = g.value(y);
    assert_eq!(v.shape(), &[1, 1, 5, 5]);
    assert_eq!(v.data()[2 * 5 + 2], 9.0);
    assert_eq!(v.data()[0], 4.0);
}

#[test]
fn conv_shape_mismatch() {
    let mut g = Graph::<f32>::inference();
    let x = g.input(Tensor::zeros([1, 2, 4, 4]));
    let k = g.input(Tensor::zeros([1, 3, 3, 3]));
    assert!(g.conv2d(x, k, None, Conv2dSpec::same(3, 1)).is_err());
}

proptest! {
    #[test]
    fn conv_matches_naive_loops(seed in 0u64..1000, stride in 1usize..3, ksize in prop::sample::select(vec![1usize, 3, 5]),
                                h in 3usize..9, w in 3usize..9, c in 1usize..4, f in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::randn([2, c, h, w], 1.0, &mut rng);
        let k = Tensor::<f64>::randn([f, c, ksize, ksize], 1.0, &mut rng);
        let spec = Conv2dSpec::same(ksize, stride);
        let mut g = Graph::inference();
        let (xv, kv) = (g.input(x.clone()), g.input(k.clone()));
        let y = g.conv2d(xv, kv, None, spec).unwrap();
        let want = naive_conv(&x, &k, stride, spec.pad);
        prop_assert_eq!(g.value(y).shape(), want.shape());
        for (a, b) in g.value(y).data().iter().zip(want.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn upsample_examples() {
    let mut g = Graph::<f64>::inference();
    let x = g.input(t(&[1, 1, 1, 1], vec![3.5]));
    let y = g.upsample2x(x).unwrap();
    assert_eq!(g.value(y), &Tensor::full([1, 1, 2, 2], 3.5));

    let x = g.input(Tensor::zeros([1, 4, 3, 5]));
    let y = g.upsample2x(x).unwrap();
    assert_eq!(g.shape(y), &[1, 4, 6, 10]);
}

#[test]
fn upsample_adjoint_sums_blocks() {
    let mut store = ParamStore::new();
    let id = store.insert("x", Tensor::zeros([1, 1, 2, 2])).unwrap();
    let mut g = Graph::new();
    let x = g.param(&store, id);
    let y = g.upsample2x(x).unwrap();
    let w = g.input(t(&[1, 1, 4, 4], (0..16).map(|v| v as f64).collect()));
    let prod = g.mul(y, w).unwrap();
    let loss = g.sum(prod);
    let grads = g.backward(loss).unwrap();
    // block sums of the 4x4 ramp: rows 0-1/cols 0-1 = 0+1+4+5
    assert_eq!(grads.param(id).unwrap().data(), &[10.0, 18.0, 42.0, 50.0]);
}

#[test]
fn pointwise_examples() {
    let mut g = Graph::<f64>::inference();
    let x = g.input(t(&[2], vec![-1.0, 2.0]));
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 2.0]);
    let z = g.input(t(&[1], vec![0.0]));
    let s = g.sigmoid(z);
    assert_eq!(g.value(s).data(), &[0.5]);
    let big = g.input(t(&[2], vec![-800.0, 800.0]));
    let s = g.sigmoid(big);
    assert!(g.value(s).all_finite());
}

#[test]
fn linear_identity() {
    let mut g = Graph::<f64>::inference();
    let x = g.input(t(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let mut eye = vec![0.0; 9];
    eye[0] = 1.0;
    eye[4] = 1.0;
    eye[8] = 1.0;
    let w = g.input(t(&[3, 3], eye));
    let b = g.input(Tensor::zeros([3]));
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y), g.value(x));
}

#[test]
fn stop_gradient_semantics() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let id = store.insert("x", Tensor::<f64>::randn([7], 1.0, &mut rng)).unwrap();

    let mut g = Graph::new();
    let x = g.param(&store, id);
    let s = g.stop_gradient(x).unwrap();
    let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(g.value(s)), bits(g.value(x)));
    let loss = g.sum(s);
    let grads = g.backward(loss).unwrap();
    assert!(grads.param(id).is_none());
    assert!(grads.dense(&store)[0].data().iter().all(|v| *v == 0.0));

    let mut g = Graph::new();
    let x = g.param(&store, id);
    let s = g.stop_gradient(x).unwrap();
    let y = g.add(x, s).unwrap();
    let loss = g.sum(y);
    let grads = g.backward(loss).unwrap();
    assert!(grads.param(id).unwrap().data().iter().all(|v| *v == 1.0));
}

#[test]
fn loss_examples() {
    let mut g = Graph::<f64>::inference();
    let x = g.input(t(&[3], vec![1.0, -2.0, 0.5]));
    let l = g.mse(x, &t(&[3], vec![1.0, -2.0, 0.5]), None).unwrap();
    assert_eq!(g.value(l).item(), 0.0);

    let z = g.input(t(&[1], vec![0.0]));
    let l = g.bce_with_logits(z, &t(&[1], vec![0.5]), None).unwrap();
    assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);

    // half-mask oracle: direct sum over the selected entries
    let p = t(&[4], vec![1.0, 2.0, 3.0, 4.0]);
    let target = t(&[4], vec![0.0, 0.0, 1.0, 1.0]);
    let mask = t(&[4], vec![1.0, 0.0, 1.0, 0.0]);
    let pv = g.input(p);
    let l = g.mse(pv, &target, Some(&mask)).unwrap();
    assert!((g.value(l).item() - (1.0 + 4.0) / 2.0).abs() < 1e-15);

    let l = g.mse(pv, &target, Some(&Tensor::zeros([4]))).unwrap();
    assert_eq!(g.value(l).item(), 0.0);

    assert!(g.mse(pv, &Tensor::zeros([3]), None).is_err());
    assert!(g.mse(pv, &target, Some(&Tensor::full([4], 2.0))).is_err());
}

#[test]
fn backward_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let id = store.insert("p", Tensor::<f64>::randn([2, 3], 1.0, &mut rng)).unwrap();

    let mut g = Graph::new();
    let p = g.param(&store, id);
    let loss = g.sum(p);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param(id).unwrap(), &Tensor::full([2, 3], 1.0));

    let mut g = Graph::new();
    let p = g.param(&store, id);
    let sq = g.mul(p, p).unwrap();
    let loss = g.mean(sq);
    let grads = g.backward(loss).unwrap();
    let want = store.get(id).map(|v| 2.0 * v / 6.0);
    for (a, b) in grads.param(id).unwrap().data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-15);
    }

    assert!(g.backward(sq).is_err());
}

#[test]
fn backward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let k = store
        .insert("k", Tensor::<f32>::randn([4, 3, 3, 3], 0.3, &mut rng))
        .unwrap();
    let w = store.insert("w", Tensor::<f32>::randn([2, 64], 0.3, &mut rng)).unwrap();
    let x = Tensor::<f32>::randn([2, 3, 8, 8], 1.0, &mut rng);
    let run = || {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let kv = g.param(&store, k);
        let h = g.conv2d(xv, kv, None, Conv2dSpec::same(3, 2)).unwrap();
        let h = g.relu(h);
        let f = g.flatten(h).unwrap();
        let wv = g.param(&store, w);
        let y = g.linear(f, wv, None).unwrap();
        let loss = g.mse(y, &Tensor::zeros([2, 2]), None).unwrap();
        g.backward(loss).unwrap().dense(&store)
    };
    assert_eq!(run(), run());
}
