use collab_deblur::nn::gradcheck::{self, corrupted_case, run_case, standard_cases};
use collab_deblur::nn::layers::{Builder, MergeGlobal, Params};
use collab_deblur::nn::pooling::{LambdaPool, SelfAttentionPool};
use collab_deblur::nn::{checkpoint, ops, Graph, ModelConfig, PoolingKind, Tensor, Unet};
use collab_deblur::rng;
use rand::Rng as _;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::rng(seed);
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn conv_identity_and_constant() {
    let g = Graph::new();
    let x = g.input(random(&[2, 3, 5, 4], 1));
    let mut eye = Tensor::zeros(&[3, 3, 1, 1]);
    for c in 0..3 {
        eye.data_mut()[c * 3 + c] = 1.0;
    }
    let y = ops::conv2d(x, g.input(eye), None, 1, 0).unwrap();
    assert_eq!(*y.value(), *x.value());

    let b = Tensor::new(&[2], vec![0.25, -1.5]).unwrap();
    let y = ops::conv2d(x, g.input(Tensor::zeros(&[2, 3, 3, 3])), Some(g.input(b)), 1, 1).unwrap();
    let v = y.value();
    assert_eq!(v.shape(), &[2, 2, 5, 4]);
    for (i, chunk) in v.data().chunks(20).enumerate() {
        let want = if i % 2 == 0 { 0.25 } else { -1.5 };
        assert!(chunk.iter().all(|&a| a == want));
    }
}

#[test]
fn conv_matches_direct_loop() {
    let x = random(&[1, 2, 6, 5], 2);
    let w = random(&[3, 2, 3, 3], 3);
    let g = Graph::new();
    let y = ops::conv2d(g.input(x.clone()), g.input(w.clone()), None, 2, 1).unwrap();
    let y = y.value();
    let (_, _, ho, wo) = y.dims4().unwrap();
    assert_eq!((ho, wo), (3, 3));
    for co in 0..3 {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for ci in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if iy < 0 || ix < 0 || iy >= 6 || ix >= 5 {
                                continue;
                            }
                            acc += w.data()[((co * 2 + ci) * 3 + ky) * 3 + kx]
                                * x.data()[(ci * 6 + iy as usize) * 5 + ix as usize];
                        }
                    }
                }
                let got = y.data()[(co * ho + oy) * wo + ox];
                assert!((acc - got).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    // <conv(x), y> == <x, conv_t(y)> with shared weights.
    let x = random(&[1, 2, 7, 5], 4);
    let w = random(&[3, 2, 3, 3], 5);
    let g = Graph::new();
    let cx = ops::conv2d(g.input(x.clone()), g.input(w.clone()), None, 2, 1).unwrap();
    let y = random(&cx.shape(), 6);
    let ty = ops::conv_transpose2d(g.input(y.clone()), g.input(w), None, 2, 1).unwrap();
    let ty = ty.value();
    assert_eq!(ty.shape(), x.shape());
    let lhs: f64 = cx.value().data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
}

#[test]
fn layer_norm_normalizes_channels() {
    let g = Graph::new();
    let x = g.input(random(&[2, 6, 3, 3], 7));
    let y = ops::layer_norm(x, g.input(Tensor::filled(&[6], 1.0)), g.input(Tensor::zeros(&[6])), 1e-6).unwrap();
    let y = y.value();
    for n in 0..2 {
        for p in 0..9 {
            let vals: Vec<f64> = (0..6).map(|c| y.data()[(n * 6 + c) * 9 + p]).collect();
            let mean = vals.iter().sum::<f64>() / 6.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-8);
            assert!((var - 1.0).abs() < 1e-4, "eps keeps the variance just under 1: {var}");
        }
    }
    // constant across channels -> bias
    let c = g.input(Tensor::filled(&[1, 3, 2, 2], 0.7));
    let bias = Tensor::new(&[3], vec![0.1, 0.2, 0.3]).unwrap();
    let y = ops::layer_norm(c, g.input(Tensor::filled(&[3], 2.0)), g.input(bias), 1e-6).unwrap();
    for (i, &v) in y.value().data().iter().enumerate() {
        assert!((v - [0.1, 0.2, 0.3][i / 4]).abs() < 1e-9);
    }
}

#[test]
fn layer_scale_extremes() {
    let g = Graph::new();
    let x = g.input(random(&[2, 3, 2, 2], 8));
    let zero = ops::layer_scale(x, g.input(Tensor::zeros(&[3]))).unwrap();
    assert!(zero.value().data().iter().all(|&v| v == 0.0));
    let one = ops::layer_scale(x, g.input(Tensor::filled(&[3], 1.0))).unwrap();
    assert_eq!(*one.value(), *x.value());
}

#[test]
fn stack_max_contracts() {
    let g = Graph::new();
    let x = random(&[8, 3, 4, 4], 9);
    // N = 1 is the identity
    let y = ops::stack_max(g.input(x.clone()), 1).unwrap();
    assert_eq!(*y.value(), x);
    // loop oracle
    let y = ops::stack_max(g.input(x.clone()), 4).unwrap();
    let m = 3 * 16;
    for b in 0..2 {
        for j in 0..m {
            let want = (0..4).map(|s| x.data()[(b * 4 + s) * m + j]).fold(f64::MIN, f64::max);
            for s in 0..4 {
                assert_eq!(y.value().data()[(b * 4 + s) * m + j], want);
            }
        }
    }
    // dominant slot 0
    let mut d = x.clone();
    d.data_mut()[..m].iter_mut().for_each(|v| *v += 10.0);
    let y = ops::stack_max(g.input(d.clone()), 8).unwrap();
    for s in 0..8 {
        assert_eq!(y.value().data()[s * m..(s + 1) * m], d.data()[..m]);
    }
    assert!(ops::stack_max(g.input(x), 3).is_err());
}

#[test]
fn stack_max_ties_route_to_first_slot() {
    let g = Graph::new();
    let x = g.param(Tensor::filled(&[3, 1, 1, 2], 0.5));
    let y = ops::stack_max(x, 3).unwrap();
    let loss = ops::dot_const(y, &Tensor::filled(&[3, 1, 1, 2], 1.0)).unwrap();
    let grads = g.backward(loss);
    assert_eq!(grads.get(x).unwrap().data(), &[3.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn attention_rows_sum_to_one() {
    let q = random(&[8, 8, 3, 3], 10);
    let k = random(&[8, 8, 3, 3], 11);
    let a = ops::stack_attention_weights(&q, &k, 4, 2).unwrap();
    assert_eq!(a.shape(), &[2, 2, 4, 4, 9]);
    for blk in a.data().chunks(4 * 4 * 9) {
        for i in 0..4 {
            for p in 0..9 {
                let s: f64 = (0..4).map(|j| blk[(i * 4 + j) * 9 + p]).sum();
                assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }
    let single = ops::stack_attention_weights(&q, &k, 1, 2).unwrap();
    assert!(single.data().iter().all(|&v| v == 1.0));
}

#[test]
fn lambda_summary_is_permutation_invariant() {
    let mut params = Params::new();
    let mut r = rng::rng(12);
    let pool = LambdaPool::new(&mut Builder::new(&mut params, &mut r), "l", 8, 4);
    let x = random(&[4, 8, 3, 3], 13);
    let perm = [2usize, 0, 3, 1];
    let m = 8 * 9;
    let mut xp = Tensor::zeros(&[4, 8, 3, 3]);
    for (i, &src) in perm.iter().enumerate() {
        xp.data_mut()[i * m..(i + 1) * m].copy_from_slice(&x.data()[src * m..(src + 1) * m]);
    }
    let g = Graph::new();
    let p = params.bind(&g, false);
    let a = pool.summary(&p, g.input(x), 4).unwrap().value();
    let b = pool.summary(&p, g.input(xp), 4).unwrap().value();
    assert_eq!(a.shape(), &[4, 32, 3, 3]);
    assert!(a.max_abs_diff(&b) <= 1e-12);
}

#[test]
fn lambda_single_slot_reduces_to_merge_of_queries() {
    let mut params = Params::new();
    let mut r = rng::rng(14);
    let pool = LambdaPool::new(&mut Builder::new(&mut params, &mut r), "l", 4, 2);
    let g = Graph::new();
    let p = params.bind(&g, false);
    let x = g.input(random(&[1, 4, 2, 2], 15));
    let s = pool.summary(&p, x, 1).unwrap().value();
    let q = pool.to_q.forward(&p, pool.prenorm.forward(&p, x).unwrap()).unwrap().value();
    // softmax over one slot is 1, so every key block equals Q
    for k in 0..2 {
        assert!(s.data()[k * 16..(k + 1) * 16]
            .iter()
            .zip(q.data())
            .all(|(a, b)| (a - b).abs() < 1e-15));
    }
}

#[test]
fn merge_global_selectors() {
    let mut params = Params::new();
    let mut r = rng::rng(16);
    let merge = MergeGlobal::new(&mut Builder::new(&mut params, &mut r), "m", 3);
    let e = random(&[2, 3, 2, 2], 17);
    let gl = random(&[2, 3, 2, 2], 18);
    for (offset, want) in [(0, &e), (3, &gl)] {
        let w = params.get_mut("m.weight").unwrap();
        w.data_mut().iter_mut().for_each(|v| *v = 0.0);
        for c in 0..3 {
            w.data_mut()[c * 6 + offset + c] = 1.0;
        }
        let g = Graph::new();
        let p = params.bind(&g, false);
        let out = merge.forward(&p, g.input(e.clone()), g.input(gl.clone())).unwrap();
        assert_eq!(*out.value(), *want);
    }
}

#[test]
fn self_attention_single_slot_has_unit_attention() {
    let mut params = Params::new();
    let mut r = rng::rng(19);
    let sa = SelfAttentionPool::new(&mut Builder::new(&mut params, &mut r), "sa", 8, 2).unwrap();
    let g = Graph::new();
    let p = params.bind(&g, false);
    let x = g.input(random(&[1, 8, 2, 2], 20));
    let [_, _, v] = sa.qkv(&p, x).unwrap();
    let att = ops::stack_attention(sa.qkv(&p, x).unwrap()[0], sa.qkv(&p, x).unwrap()[1], v, 1, 2).unwrap();
    assert!(att.value().max_abs_diff(&v.value()) < 1e-15);
    assert!(SelfAttentionPool::new(&mut Builder::new(&mut params, &mut r), "bad", 8, 3).is_err());
}

#[test]
fn every_gradient_case_passes() {
    for seed in [0u64, 1] {
        for case in standard_cases(seed).unwrap() {
            let res = run_case(&case, seed).unwrap();
            assert!(res.passed(), "{} seed {seed}: {:.3e}", res.name, res.rel_error);
        }
    }
}

#[test]
fn corrupted_backward_is_caught() {
    let res = run_case(&corrupted_case(3), 3).unwrap();
    assert!(!res.passed());
    assert!(res.rel_error > 0.1);
}

#[test]
fn gradcheck_report_is_reproducible() {
    let a = gradcheck::gradcheck_all(5, false).unwrap();
    let b = gradcheck::gradcheck_all(5, false).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.all_passed());
}

#[test]
fn bottleneck_widths() {
    assert_eq!(ModelConfig::unet().bottleneck_channels(), 512);
    assert_eq!(ModelConfig::unet_t().bottleneck_channels(), 256);
}

#[test]
fn unet_shapes_and_identity_head() {
    let cfg = ModelConfig {
        base_channels: 8,
        depth: 2,
        ..ModelConfig::unet_t()
    }
    .with_pooling(PoolingKind::Max, 2);
    let mut model: Unet<f64> = Unet::new(cfg, 1).unwrap();
    let x = random(&[4, 3, 8, 8], 21);
    // Residual models start as the identity.
    assert_eq!(model.infer(&x).unwrap(), x);
    for v in model.params_mut().values_mut() {
        v.data_mut().iter_mut().for_each(|w| *w += 0.01);
    }
    let y = model.infer(&x).unwrap();
    assert_eq!(y.shape(), x.shape());
    assert_ne!(y, x);
    model.zero_head();
    assert_eq!(model.infer(&x).unwrap(), x);
    assert!(model.infer(&random(&[4, 3, 6, 8], 22)).is_err());
    assert!(model.infer(&random(&[3, 3, 8, 8], 22)).is_err());
}

#[test]
fn unet_without_residual_and_zero_head_outputs_zero() {
    let cfg = ModelConfig {
        base_channels: 4,
        depth: 1,
        residual: false,
        ..ModelConfig::unet_t()
    };
    let mut model: Unet<f64> = Unet::new(cfg, 2).unwrap();
    model.zero_head();
    let y = model.infer(&random(&[2, 3, 4, 4], 23)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn checkpoint_round_trip() {
    let cfg = ModelConfig {
        base_channels: 4,
        depth: 2,
        ..ModelConfig::unet_t()
    }
    .with_pooling(PoolingKind::Lambda { k: 4 }, 2);
    let model: Unet<f64> = Unet::new(cfg, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save_checkpoint(&path, &model).unwrap();
    let back: Unet<f64> = checkpoint::load_checkpoint(&path).unwrap();
    assert_eq!(back.config(), model.config());
    assert_eq!(back.params(), model.params());
    let bytes = std::fs::read(&path).unwrap();
    assert!(checkpoint::decode_checkpoint::<f64>(&path, &bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::decode_checkpoint::<f64>(&path, &bad).is_err());
}

#[test]
fn pooling_kind_parsing() {
    for s in ["none", "max", "mean", "lambda:4", "sa", "sa:2"] {
        assert_eq!(s.parse::<PoolingKind>().unwrap().to_string(), s);
    }
    assert_eq!("lambda".parse::<PoolingKind>().unwrap(), PoolingKind::Lambda { k: 4 });
    assert!("median".parse::<PoolingKind>().is_err());
    assert!("sa:0".parse::<PoolingKind>().is_err());
}
