//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Runs without the libtest harness so the lines always reach stdout.
//! `ACCEPTANCE_ONLY=1,5` restricts the run to the listed criteria.

use std::path::Path;
use std::time::Instant;

use collab_deblur::cli::dispatch;
use collab_deblur::estimate::{
    crop_at_origin, estimate_kernel_fourier, estimate_kernel_spatial_oracle, run_collaboration_sweep, PairSet,
    SweepParams,
};
use collab_deblur::imaging::{Boundary, Image, Kernel};
use collab_deblur::nn::gradcheck::{self, TOLERANCE};
use collab_deblur::nn::layers::{Builder, Params};
use collab_deblur::nn::pooling::LambdaPool;
use collab_deblur::nn::{ops, Graph, ModelConfig, PoolingKind, Tensor, Unet};
use collab_deblur::patches::{stitch, tile_uniform};
use collab_deblur::rng::{self, derive_seed};
use collab_deblur::synth::{dead_leaves_pool, motion_kernel};
use collab_deblur::train::{default_corpus, train_toy, TrainConfig};
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::rng(seed);
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image<f64> {
    let mut r = rng::rng(seed);
    Image::from_fn(h, w, c, |_, _, _| r.random::<f64>()).unwrap()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

// 1. Kernel quality grows with the number of collaborating pairs.
fn criterion_1() -> Outcome {
    let pool = dead_leaves_pool::<f64>(64, 128, 128, 1, 11).unwrap();
    let kernels: Vec<Kernel<f64>> = [13, 15, 17, 19]
        .iter()
        .enumerate()
        .map(|(i, &s)| motion_kernel(s, derive_seed(12, i as u64)).unwrap())
        .collect();
    let ns = [1, 2, 4, 8, 16, 32, 64];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut summary = String::new();
    for lambda in [1e-4, 1e-3, 1e-2] {
        let params = SweepParams {
            ns: ns.to_vec(),
            noise_sigma: 0.01,
            lambda,
            seeds: vec![0, 1, 2],
            boundary: Boundary::Circular,
        };
        let report = run_collaboration_sweep(&pool, &kernels, &params).unwrap();
        let curve: Vec<f64> = ns.iter().map(|&n| report.mean_at(n).unwrap().0).collect();
        summary.push_str(&format!(" lambda={lambda:e}:{:.3}..{:.3}", curve[0], curve[6]));
        let score = curve.iter().sum::<f64>();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, curve));
        }
    }
    let curve = best.unwrap().1;
    let monotone = curve.windows(2).all(|w| w[1] >= w[0] - 0.01);
    let gain = curve[3] - curve[0];
    let pass = monotone && gain >= 0.05 && curve[6] >= 0.95;
    outcome(
        pass,
        format!(
            "best-lambda KSIM by N {:?}; non-decreasing(tol 0.01)={monotone}, KSIM(8)-KSIM(1)={gain:.3} (>=0.05), KSIM(64)={:.4} (>=0.95);{summary}",
            curve.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            curve[6]
        ),
    )
}

// 2. Fourier estimator equals the dense spatial normal equations.
fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let lambda = if i % 2 == 0 { 1e-6 } else { 1e-2 };
        let mut r = rng::rng(derive_seed(2, i));
        let count = r.random_range(1..=3);
        let k = Kernel::from_taps(5, (0..25).map(|_| r.random::<f64>()).collect()).unwrap();
        let pairs = (0..count)
            .map(|j| {
                let x = random_image(16, 16, 1, derive_seed(derive_seed(2, i), 10 + j));
                let y = collab_deblur::imaging::convolve(&x, &k, Boundary::Circular).unwrap();
                (x, y)
            })
            .collect();
        let set = PairSet::new(pairs, lambda, 5).unwrap();
        let fourier = estimate_kernel_fourier(&set).unwrap();
        let oracle = estimate_kernel_spatial_oracle(&set).unwrap();
        let crop = crop_at_origin(&fourier.plane, 16, 16, 5).unwrap();
        worst = worst
            .max(rel_l2(&fourier.plane, &oracle.plane))
            .max(rel_l2(&crop.taps, &oracle.raw.taps));
    }
    outcome(worst <= 1e-8, format!("worst relative l2 over 20 instances = {worst:.3e} (<=1e-8)"))
}

// 3. Every differentiable operation passes finite differences.
fn criterion_3() -> Outcome {
    let report = gradcheck::gradcheck_all(0, false).unwrap();
    let required = [
        "conv2d",
        "conv_transpose2d",
        "relu",
        "gelu",
        "layer_norm",
        "layer_scale",
        "merge_global",
        "pool_max_stack",
        "pool_lambda",
        "pool_self_attention",
        "stack_l1",
    ];
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|op| report.rows.iter().filter(|r| r.name == *op).count() < 5)
        .collect();
    let worst = report.worst().unwrap();
    outcome(
        report.all_passed() && missing.is_empty(),
        format!(
            "{} checks, worst {} rel err {:.3e} (<= {TOLERANCE:e}); ops lacking 5 seeds: {missing:?}",
            report.rows.len(),
            worst.name,
            worst.rel_error
        ),
    )
}

fn permute_slots(x: &Tensor<f64>, order: &[usize]) -> Tensor<f64> {
    let m = x.len() / x.shape()[0];
    let mut out = x.clone();
    for (i, &src) in order.iter().enumerate() {
        out.data_mut()[i * m..(i + 1) * m].copy_from_slice(&x.data()[src * m..(src + 1) * m]);
    }
    out
}

// 4. Permuting the stack permutes the outputs.
fn criterion_4() -> Outcome {
    let kinds = [
        PoolingKind::None,
        PoolingKind::Max,
        PoolingKind::Mean,
        PoolingKind::Lambda { k: PoolingKind::LAMBDA_K },
        PoolingKind::SelfAttention { heads: None },
    ];
    let mut worst = 0.0f64;
    let mut max_bitwise = true;
    for (ki, &kind) in kinds.iter().enumerate() {
        for n in [2usize, 4, 8] {
            let cfg = ModelConfig {
                depth: 2,
                base_channels: 8,
                ..ModelConfig::unet()
            }
            .with_pooling(kind, n);
            let seed = derive_seed(4, (ki * 10 + n) as u64);
            let mut model = Unet::<f64>::new(cfg, seed).unwrap();
            // Move off the identity initialization so the head matters.
            let mut r = rng::rng(derive_seed(seed, 1));
            for v in model.params_mut().values_mut() {
                v.data_mut().iter_mut().for_each(|w| *w += 0.05 * r.random_range(-1.0..1.0));
            }
            let x = random_tensor(&[n, 3, 16, 16], derive_seed(seed, 2));
            let mut order: Vec<usize> = (0..n).rev().collect();
            order.rotate_left(1);
            let y = model.infer(&x).unwrap();
            let yp = model.infer(&permute_slots(&x, &order)).unwrap();
            let want = permute_slots(&y, &order);
            let d = yp.max_abs_diff(&want);
            worst = worst.max(d);
            if matches!(kind, PoolingKind::Max | PoolingKind::None) && yp != want {
                max_bitwise = false;
            }
        }
    }
    outcome(
        worst <= 1e-12 && max_bitwise,
        format!("5 pooling kinds x N in {{2,4,8}}: max deviation {worst:.3e} (<=1e-12), max/none bitwise={max_bitwise}"),
    )
}

// 5. Tiling then stitching is the identity.
fn criterion_5() -> Outcome {
    let mut worst = 0.0f64;
    let mut constant_worst = 0.0f64;
    let mut r = rng::rng(5);
    for i in 0..20u64 {
        let patch = [8usize, 12, 16, 32][r.random_range(0..4)];
        let h = r.random_range(patch..patch * 4);
        let w = r.random_range(patch..patch * 4);
        let c = if r.random::<bool>() { 3 } else { 1 };
        let im = random_image(h, w, c, derive_seed(5, i));
        let back = stitch(&tile_uniform(&im, patch, 0.25).unwrap(), h, w).unwrap();
        worst = worst.max(im.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let flat = Image::<f64>::filled(h, w, c, 0.37).unwrap();
        let back = stitch(&tile_uniform(&flat, patch, 0.25).unwrap(), h, w).unwrap();
        constant_worst = constant_worst.max(back.data().iter().map(|v| (v - 0.37).abs()).fold(0.0, f64::max));
    }
    outcome(
        worst <= 1e-12 && constant_worst <= 1e-12,
        format!("20 random sizes: max abs error {worst:.3e}, constant image {constant_worst:.3e} (<=1e-12)"),
    )
}

// 6. Softmax and pooling contracts.
fn criterion_6() -> Outcome {
    let q = random_tensor(&[16, 8, 4, 4], 61);
    let k = random_tensor(&[16, 8, 4, 4], 62);
    let a = ops::stack_attention_weights(&q, &k, 8, 2).unwrap();
    let mut row_err = 0.0f64;
    for blk in a.data().chunks(8 * 8 * 16) {
        for i in 0..8 {
            for p in 0..16 {
                let s: f64 = (0..8).map(|j| blk[(i * 8 + j) * 16 + p]).sum();
                row_err = row_err.max((s - 1.0).abs());
            }
        }
    }

    let g = Graph::new();
    let x = random_tensor(&[5, 4, 3, 3], 63);
    let identity = *ops::stack_max(g.input(x.clone()), 1).unwrap().value() == x;

    let mut params = Params::new();
    let mut r = rng::rng(64);
    let pool = LambdaPool::new(&mut Builder::new(&mut params, &mut r), "l", 8, PoolingKind::LAMBDA_K);
    let x = random_tensor(&[8, 8, 4, 4], 65);
    let xp = permute_slots(&x, &[3, 7, 0, 5, 1, 6, 2, 4]);
    let p = params.bind(&g, false);
    let s = pool.summary(&p, g.input(x), 8).unwrap().value();
    let sp = pool.summary(&p, g.input(xp), 8).unwrap().value();
    let lambda_dev = s.max_abs_diff(&sp);

    outcome(
        row_err <= 1e-12 && identity && lambda_dev <= 1e-12,
        format!(
            "attention row-sum error {row_err:.3e} (<=1e-12), max pooling N=1 identity={identity}, lambda summary permutation deviation {lambda_dev:.3e} (<=1e-12)"
        ),
    )
}

// 7. Collaboration helps at toy scale.
fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut psnr = [[0.0f64; 3]; 2];
    for (si, seed) in [0u64, 1, 2].into_iter().enumerate() {
        for (ni, n) in [1usize, 8].into_iter().enumerate() {
            let model = ModelConfig {
                depth: 2,
                base_channels: 8,
                ..ModelConfig::unet()
            }
            .with_pooling(PoolingKind::Max, n);
            let cfg = TrainConfig {
                steps: 5000,
                stack_n: n,
                seed,
                val_every: 0,
                ..TrainConfig::default()
            };
            let corpus = default_corpus::<f32>(&cfg, model.in_channels).unwrap();
            let (_, report) = train_toy(model, &cfg, &corpus, |_| {}).unwrap();
            psnr[ni][si] = report.final_val_psnr().unwrap();
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let mean = |v: &[f64; 3]| v.iter().sum::<f64>() / 3.0;
    let (m1, m8) = (mean(&psnr[0]), mean(&psnr[1]));
    outcome(
        m8 >= m1 && secs < 1800.0,
        format!(
            "mean val PSNR N=8 {m8:.3} dB vs N=1 {m1:.3} dB (per seed N=8 {:?}, N=1 {:?}); runtime {secs:.0}s (<1800s)",
            psnr[1].map(|v| (v * 1e3).round() / 1e3),
            psnr[0].map(|v| (v * 1e3).round() / 1e3)
        ),
    )
}

// 8. Parameter counts match the published sizes; collaboration is cheap.
fn criterion_8() -> Outcome {
    let cases = [
        ("UNet", ModelConfig::unet(), 17.7e6),
        ("UNet-T", ModelConfig::unet_t(), 4.3e6),
        ("UNet-S", ModelConfig::unet().with_divisor(2), 4.4e6),
        ("UNet-X", ModelConfig::unet().with_divisor(4), 1.1e6),
        ("UNet-TS", ModelConfig::unet_t().with_divisor(2), 1.1e6),
        ("UNet-TX", ModelConfig::unet_t().with_divisor(4), 270e3),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, cfg, paper) in cases {
        let base = Unet::<f32>::new(cfg, 0).unwrap().param_count() as f64;
        // The published overhead refers to the max-pooling variants; lambda
        // pooling merges k extra summary features per channel and is reported only.
        let count = |kind| Unet::<f32>::new(cfg.with_pooling(kind, 8), 0).unwrap().param_count() as f64 / base - 1.0;
        let overhead = count(PoolingKind::Max);
        let lambda = count(PoolingKind::Lambda { k: PoolingKind::LAMBDA_K });
        let ratio = base / paper;
        pass &= (0.75..=1.25).contains(&ratio) && overhead <= 0.10;
        detail.push(format!(
            "{name} {:.3}M (x{ratio:.2}, max +{:.1}%, lambda +{:.1}%)",
            base / 1e6,
            100.0 * overhead,
            100.0 * lambda
        ));
    }
    outcome(pass, format!("{} (ratio within 0.75..1.25, max-pooling overhead <=10%)", detail.join(", ")))
}

fn run_cli(args: &[&str]) -> i32 {
    let mut argv = vec!["collab-deblur"];
    argv.extend_from_slice(args);
    dispatch(argv)
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = walk(dir)
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

// 9. Every subcommand is reproducible byte for byte.
fn criterion_9() -> Outcome {
    let runs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut failures = Vec::new();
    for dir in &runs {
        let d = |s: &str| dir.path().join(s).display().to_string();
        let grid_dir = dir.path().join("grid");
        std::fs::create_dir_all(&grid_dir).unwrap();
        let mut manifest = String::from("center 32 32\n");
        for (i, (u, v)) in [(8.0, 8.0), (8.0, 56.0), (56.0, 8.0), (56.0, 56.0)].iter().enumerate() {
            let k: Kernel<f64> = motion_kernel(7, i as u64).unwrap();
            collab_deblur::imaging::io::write_kernel_text(&grid_dir.join(format!("k{i}.txt")), &k).unwrap();
            manifest.push_str(&format!("{u} {v} k{i}.txt\n"));
        }
        std::fs::write(grid_dir.join("grid.txt"), manifest).unwrap();
        let steps: Vec<(&str, Vec<String>)> = vec![
            ("synth", vec!["synth".into(), "--out".into(), d("synth"), "--n".into(), "4".into(), "--size".into(), "32".into(), "--sigma-max".into(), "2".into(), "--seed".into(), "3".into()]),
            ("synth-motion", vec!["synth".into(), "--out".into(), d("synth_motion"), "--blur".into(), "motion".into(), "--motion-size".into(), "9".into(), "--size".into(), "32".into(), "--seed".into(), "3".into()]),
            ("synth-grid", vec!["synth".into(), "--out".into(), d("synth_grid"), "--grid".into(), grid_dir.join("grid.txt").display().to_string(), "--location".into(), "10,12".into()]),
            ("estimate", vec!["estimate".into(), "--stack".into(), d("synth"), "--out".into(), d("estimate")]),
            ("sweep", vec!["sweep".into(), "--out".into(), d("sweep.csv"), "--ns".into(), "1,2,4".into(), "--pool-size".into(), "4".into(), "--size".into(), "32".into(), "--kernel-count".into(), "2".into(), "--kernel-size".into(), "9".into(), "--seeds".into(), "2".into(), "--seed".into(), "3".into()]),
            ("tile", vec!["tile".into(), "--input".into(), d("synth/sharp_000.txt"), "--out".into(), d("tiles"), "--patch".into(), "16".into()]),
            ("stitch", vec!["stitch".into(), "--input".into(), d("tiles"), "--out".into(), d("stitched.txt")]),
            ("train", vec!["train".into(), "--out".into(), d("train"), "--steps".into(), "4".into(), "--depth".into(), "1".into(), "--base-channels".into(), "4".into(), "--patch".into(), "16".into(), "--stack-n".into(), "2".into(), "--val-every".into(), "2".into(), "--seed".into(), "3".into()]),
            ("eval", vec!["eval".into(), "--checkpoint".into(), d("train/checkpoint.bin"), "--out".into(), d("eval.csv"), "--n-images".into(), "8".into(), "--patch".into(), "16".into(), "--seed".into(), "3".into()]),
            ("gradcheck", vec!["gradcheck".into(), "--out".into(), d("gradcheck.csv"), "--seed".into(), "3".into()]),
        ];
        for (name, args) in &steps {
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            let code = run_cli(&args);
            if code != 0 {
                failures.push(format!("{name} exited {code}"));
            }
        }
    }
    let (a, b) = (csv_files(runs[0].path()), csv_files(runs[1].path()));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    let identical = a == b && a.len() >= 9;
    let stitched_same = std::fs::read(runs[0].path().join("stitched.txt")).ok()
        == std::fs::read(runs[1].path().join("stitched.txt")).ok();
    outcome(
        failures.is_empty() && identical && stitched_same,
        format!("{} CSV files byte-identical={identical} {names:?}; stitched image identical={stitched_same}; failures {failures:?}", a.len()),
    )
}

fn main() {
    // libtest-style flags (e.g. from `cargo test -- --nocapture`) are accepted and ignored.
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "collaboration sweep trend", criterion_1),
        (2, "Fourier estimator = spatial oracle", criterion_2),
        (3, "gradient suite", criterion_3),
        (4, "stack permutation equivariance", criterion_4),
        (5, "tile/stitch identity", criterion_5),
        (6, "softmax/pooling contracts", criterion_6),
        (7, "toy training trend N=8 vs N=1", criterion_7),
        (8, "parameter-count calibration", criterion_8),
        (9, "CLI determinism", criterion_9),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        println!(
            "criterion {id} [PRIMARY] {name}: {} ({:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
