use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use super::{
    BlurKind, CliError, CliResult, Command, EstimateArgs, EvalArgs, GradcheckArgs, Precision, StitchArgs, SweepArgs,
    SynthArgs, TileArgs, TrainArgs,
};
use crate::error::Error;
use crate::estimate::{estimate_kernel_fourier, run_collaboration_sweep, PairSet, SweepParams};
use crate::imaging::io::{list_files, read_image_any, read_kernel_text, write_atomic, write_image_any, write_image_text, write_kernel_text};
use crate::imaging::{add_gaussian_noise, convolve, kernel_psnr, kernel_similarity, Image, Kernel};
use crate::nn::gradcheck::gradcheck_all;
use crate::nn::{load_checkpoint, save_checkpoint, ModelConfig, PoolingKind};
use crate::patches::{extract, quadrant_symmetric_placements, read_placements, stitch, tile_uniform, write_placements, PatchStack};
use crate::rng::{self, derive_seed};
use crate::scalar::Scalar;
use crate::synth::{dead_leaves_pool, gaussian_kernel, kernel_grid_sample_quadrants, motion_kernel, sample_blur_config, KernelGrid};
use crate::train::{default_corpus, default_eval_corpus, evaluate, parse_run_config, run_config_text, Corpus, EvalSpec, TrainConfig, Trainer};

pub(super) fn run(command: Command) -> CliResult {
    match command {
        Command::Synth(a) => synth(a),
        Command::Estimate(a) => estimate(a),
        Command::Sweep(a) => sweep(a),
        Command::Tile(a) => tile(a),
        Command::Stitch(a) => stitch_cmd(a),
        Command::Train(a) => match a.precision {
            Precision::F32 => train::<f32>(a),
            Precision::F64 => train::<f64>(a),
        },
        Command::Eval(a) => match a.precision {
            Precision::F32 => eval::<f32>(a),
            Precision::F64 => eval::<f64>(a),
        },
        Command::Gradcheck(a) => gradcheck(a),
        Command::Version => {
            println!("{}", version_text());
            Ok(())
        }
    }
}

pub fn version_text() -> String {
    format!(
        "collab-deblur {} ({}-{}, {} build)",
        env!("CARGO_PKG_VERSION"),
        std::env::consts::ARCH,
        std::env::consts::OS,
        if cfg!(debug_assertions) { "debug" } else { "release" }
    )
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn make_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(Error::io(dir, e)))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Prints the resolved settings, one `key = value` per line.
fn announce(command: &str, settings: &[(&str, String)]) {
    println!("[{command}]");
    for (k, v) in settings {
        println!("{k} = {v}");
    }
}

fn pair(values: &Option<Vec<f64>>, flag: &str) -> CliResult<Option<(f64, f64)>> {
    match values.as_deref() {
        None => Ok(None),
        Some([a, b]) => Ok(Some((*a, *b))),
        Some(_) => Err(usage(format!("{flag} expects two comma-separated values"))),
    }
}

fn load_images(dir: &Path) -> CliResult<Vec<Image<f64>>> {
    let files = list_files(dir, &["png", "txt"])?;
    if files.is_empty() {
        return Err(CliError::Runtime(Error::InvalidArgument(format!("no images in {}", dir.display()))));
    }
    Ok(files.iter().map(|f| read_image_any(f)).collect::<Result<_, _>>()?)
}

fn synth(a: SynthArgs) -> CliResult {
    if let Some(grid) = &a.grid {
        return synth_grid(&a, grid);
    }
    if a.n == 0 {
        return Err(usage("--n must be positive"));
    }
    let sharp: Vec<Image<f64>> = match &a.corpus {
        Some(dir) => {
            let images = load_images(dir)?;
            if images.len() < a.n {
                return Err(CliError::Runtime(Error::InvalidArgument(format!(
                    "--n {} exceeds the {} images in {}",
                    a.n,
                    images.len(),
                    dir.display()
                ))));
            }
            images.into_iter().take(a.n).collect()
        }
        None => dead_leaves_pool(a.n, a.size, a.size, a.channels, derive_seed(a.seed, 0))?,
    };
    let mut settings = vec![
        ("seed", a.seed.to_string()),
        ("n", a.n.to_string()),
        ("blur", format!("{:?}", a.blur).to_lowercase()),
        ("boundary", a.boundary.to_string()),
    ];
    let (kernel, noise): (Kernel<f64>, f64) = match a.blur {
        BlurKind::Gaussian => {
            let cfg = sample_blur_config(
                derive_seed(a.seed, 1),
                [a.sigma_min, a.sigma_max],
                [a.noise_min, a.noise_max],
            )?;
            settings.push(("sigma_major", cfg.sigma_major.to_string()));
            settings.push(("sigma_minor", cfg.sigma_minor.to_string()));
            settings.push(("theta", cfg.theta.to_string()));
            (gaussian_kernel(&cfg)?, cfg.noise_sigma)
        }
        BlurKind::Motion => {
            if !(0.0 <= a.noise_min && a.noise_min <= a.noise_max) {
                return Err(usage("--noise-min/--noise-max must satisfy 0 <= min <= max"));
            }
            let k = motion_kernel(a.motion_size, derive_seed(a.seed, 1))?;
            let u: f64 = rng::rng(derive_seed(a.seed, 2)).random();
            (k, a.noise_min + (a.noise_max - a.noise_min) * u)
        }
    };
    settings.push(("noise_sigma", noise.to_string()));
    settings.push(("support", kernel.size().to_string()));
    announce("synth", &settings);

    make_dir(&a.out)?;
    let noise_seed = derive_seed(a.seed, 3);
    let mut csv = String::from("index,sharp,blurry,noise_sigma\n");
    for (i, x) in sharp.iter().enumerate() {
        let y = add_gaussian_noise(&convolve(x, &kernel, a.boundary)?, noise, derive_seed(noise_seed, i as u64))?;
        let (sn, bn) = (format!("sharp_{i:03}.txt"), format!("blurry_{i:03}.txt"));
        write_image_text(&a.out.join(&sn), x)?;
        write_image_text(&a.out.join(&bn), &y)?;
        let _ = writeln!(csv, "{i},{sn},{bn},{noise:e}");
    }
    write_kernel_text(&a.out.join("kernel.txt"), &kernel)?;
    let params: String = settings.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    write_text(&a.out.join("params.txt"), &params)?;
    write_text(&a.out.join("synth.csv"), &csv)
}

fn synth_grid(a: &SynthArgs, grid_path: &Path) -> CliResult {
    let loc = pair(&a.location, "--location")?.ok_or_else(|| usage("--grid needs --location"))?;
    let grid = KernelGrid::<f64>::load_manifest(grid_path)?;
    let kernels = kernel_grid_sample_quadrants(&grid, loc)?;
    announce(
        "synth",
        &[
            ("grid", grid_path.display().to_string()),
            ("location", format!("{},{}", loc.0, loc.1)),
            ("center", format!("{},{}", grid.center.0, grid.center.1)),
        ],
    );
    make_dir(&a.out)?;
    let mut csv = String::from("quadrant,file\n");
    for (q, k) in kernels.iter().enumerate() {
        let name = format!("kernel_q{q}.txt");
        write_kernel_text(&a.out.join(&name), k)?;
        let _ = writeln!(csv, "{q},{name}");
    }
    write_text(&a.out.join("synth.csv"), &csv)
}

fn stack_files(dir: &Path, prefix: &str) -> CliResult<Vec<PathBuf>> {
    Ok(list_files(dir, &["txt"])?
        .into_iter()
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(prefix))
        })
        .collect())
}

fn estimate(a: EstimateArgs) -> CliResult {
    let sharp = stack_files(&a.stack, "sharp_")?;
    let blurry = stack_files(&a.stack, "blurry_")?;
    if sharp.is_empty() || sharp.len() != blurry.len() {
        return Err(CliError::Runtime(Error::InvalidArgument(format!(
            "{}: expected matching sharp_*/blurry_* files, found {} and {}",
            a.stack.display(),
            sharp.len(),
            blurry.len()
        ))));
    }
    let count = a.count.unwrap_or(sharp.len());
    if count == 0 || count > sharp.len() {
        return Err(usage(format!("--count must lie in 1..={}", sharp.len())));
    }
    let truth_path = a.truth.clone().unwrap_or_else(|| a.stack.join("kernel.txt"));
    let truth: Option<Kernel<f64>> = if truth_path.exists() {
        Some(read_kernel_text(&truth_path)?)
    } else if a.truth.is_some() {
        return Err(CliError::Runtime(Error::InvalidArgument(format!(
            "--truth {} does not exist",
            truth_path.display()
        ))));
    } else {
        None
    };
    let support = a.support.or(truth.as_ref().map(Kernel::size)).unwrap_or(15);
    announce(
        "estimate",
        &[
            ("stack", a.stack.display().to_string()),
            ("pairs", count.to_string()),
            ("lambda", a.lambda.to_string()),
            ("support", support.to_string()),
        ],
    );
    let pairs = sharp
        .iter()
        .zip(&blurry)
        .take(count)
        .map(|(s, b)| Ok((read_image_any::<f64>(s)?, read_image_any::<f64>(b)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let est = estimate_kernel_fourier(&PairSet::new(pairs, a.lambda, support)?)?;
    make_dir(&a.out)?;
    write_kernel_text(&a.out.join("kernel_est.txt"), &est.projected)?;
    let mut csv = String::from("pairs,lambda,support,ksim,psnr_kernel\n");
    let (ksim, kpsnr) = match &truth {
        Some(k) => (
            format!("{:.6}", kernel_similarity(k, &est.projected)?),
            format!("{:.4}", kernel_psnr(k, &est.projected)?),
        ),
        None => (String::new(), String::new()),
    };
    let _ = writeln!(csv, "{count},{:e},{support},{ksim},{kpsnr}", a.lambda);
    write_text(&a.out.join("estimate.csv"), &csv)
}

fn sweep(a: SweepArgs) -> CliResult {
    if a.seeds == 0 {
        return Err(usage("--seeds must be positive"));
    }
    let pool = match &a.pool {
        Some(dir) => load_images(dir)?,
        None => dead_leaves_pool(a.pool_size, a.size, a.size, a.channels, derive_seed(a.seed, 0))?,
    };
    let kernels: Vec<Kernel<f64>> = match &a.kernels {
        Some(dir) => {
            let files = list_files(dir, &["txt"])?;
            if files.is_empty() {
                return Err(CliError::Runtime(Error::InvalidArgument(format!(
                    "no kernel files in {}",
                    dir.display()
                ))));
            }
            files.iter().map(|f| read_kernel_text(f)).collect::<Result<_, _>>()?
        }
        None => (0..a.kernel_count)
            .map(|i| motion_kernel(a.kernel_size, derive_seed(derive_seed(a.seed, 1), i as u64)))
            .collect::<Result<_, _>>()?,
    };
    let params = SweepParams {
        ns: a.ns.clone(),
        noise_sigma: a.noise,
        lambda: a.lambda,
        seeds: (a.seed..a.seed + a.seeds).collect(),
        boundary: a.boundary,
    };
    announce(
        "sweep",
        &[
            ("seed", a.seed.to_string()),
            ("pool", format!("{} images", pool.len())),
            ("kernels", kernels.len().to_string()),
            ("ns", format!("{:?}", params.ns)),
            ("noise", a.noise.to_string()),
            ("lambda", a.lambda.to_string()),
            ("seeds", format!("{:?}", params.seeds)),
            ("boundary", a.boundary.to_string()),
        ],
    );
    let report = run_collaboration_sweep(&pool, &kernels, &params)?;
    write_text(&a.out, &report.to_csv())
}

fn tile(a: TileArgs) -> CliResult {
    let image: Image<f64> = read_image_any(&a.input)?;
    let (h, w, _) = image.shape();
    let stack = match &a.location {
        None => tile_uniform(&image, a.patch, a.overlap)?,
        Some(loc) => {
            let [u, v] = loc.as_slice() else {
                return Err(usage("--location expects row,col"));
            };
            let center = match a.center.as_deref() {
                None => (h / 2, w / 2),
                Some([cu, cv]) => (*cu, *cv),
                Some(_) => return Err(usage("--center expects row,col")),
            };
            let placements = quadrant_symmetric_placements(h, w, a.patch, (*u, *v), center)?;
            extract(&image, &placements)?
        }
    };
    announce(
        "tile",
        &[
            ("input", a.input.display().to_string()),
            ("image", format!("{h}x{w}")),
            ("patch", a.patch.to_string()),
            ("overlap", a.overlap.to_string()),
            ("patches", stack.len().to_string()),
        ],
    );
    make_dir(&a.out)?;
    let placements = stack.placements().expect("tiling records placements").to_vec();
    let mut csv = String::from("index,file,top,left,height,width\n");
    for (i, (p, pl)) in stack.patches().iter().zip(&placements).enumerate() {
        let name = format!("patch_{i:03}.txt");
        write_image_text(&a.out.join(&name), p)?;
        let _ = writeln!(csv, "{i},{name},{},{},{},{}", pl.top, pl.left, pl.height, pl.width);
    }
    write_placements(&a.out.join("placements.txt"), &placements)?;
    write_text(&a.out.join("tiles.csv"), &csv)
}

fn stitch_cmd(a: StitchArgs) -> CliResult {
    let placements = read_placements(&a.input.join("placements.txt"))?;
    let files = stack_files(&a.input, "patch_")?;
    if files.len() != placements.len() {
        return Err(CliError::Runtime(Error::InvalidArgument(format!(
            "{}: {} patch files for {} placements",
            a.input.display(),
            files.len(),
            placements.len()
        ))));
    }
    let patches = files.iter().map(|f| read_image_any::<f64>(f)).collect::<Result<Vec<_>, _>>()?;
    let h = a
        .height
        .unwrap_or_else(|| placements.iter().map(|p| p.top + p.height).max().unwrap_or(0));
    let w = a
        .width
        .unwrap_or_else(|| placements.iter().map(|p| p.left + p.width).max().unwrap_or(0));
    announce(
        "stitch",
        &[
            ("input", a.input.display().to_string()),
            ("patches", patches.len().to_string()),
            ("size", format!("{h}x{w}")),
        ],
    );
    let image = stitch(&PatchStack::with_placements(patches, placements)?, h, w)?;
    write_image_any(&a.out, &image)?;
    Ok(())
}

/// Model used when no run file is given: the desk-scale collaborative UNet.
fn toy_model() -> ModelConfig {
    ModelConfig {
        depth: 2,
        base_channels: 8,
        ..ModelConfig::unet()
    }
    .with_pooling(PoolingKind::Max, 8)
}

fn resolve_train_config(a: &TrainArgs) -> CliResult<(ModelConfig, TrainConfig)> {
    let (mut model, mut train) = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(Error::io(path, e)))?;
            parse_run_config(path, &text)?
        }
        None => {
            let m = toy_model();
            (m, TrainConfig {
                stack_n: m.stack_n,
                ..TrainConfig::default()
            })
        }
    };
    if let Some(v) = a.seed {
        train.seed = v;
    }
    if let Some(v) = a.steps {
        train.steps = v;
    }
    if let Some(v) = a.stack_n {
        train.stack_n = v;
        model.stack_n = v;
    }
    if let Some(v) = a.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = a.pooling {
        model.pooling = v;
    }
    if let Some(v) = a.depth {
        model.depth = v;
    }
    if let Some(v) = a.base_channels {
        model.base_channels = v;
    }
    if let Some(v) = a.width_divisor {
        model.width_divisor = v;
    }
    if let Some(v) = a.patch {
        train.patch = v;
    }
    if let Some(v) = a.lr {
        train.lr_init = v;
    }
    if let Some(v) = a.val_every {
        train.val_every = v;
    }
    // Flag overrides can break validation val_n % stack_n; keep val_n a multiple.
    if train.val_n % train.stack_n != 0 {
        train.val_n = train.stack_n * train.val_n.div_ceil(train.stack_n);
    }
    model.validate().map_err(|e| usage(e.to_string()))?;
    train.validate().map_err(|e| usage(e.to_string()))?;
    Ok((model, train))
}

fn train<T: Scalar>(a: TrainArgs) -> CliResult {
    let (model_cfg, cfg) = resolve_train_config(&a)?;
    let text = run_config_text(&model_cfg, &cfg);
    println!("[train]\nprecision = {:?}", a.precision);
    print!("{text}");
    let corpus: Corpus<T> = match &a.corpus {
        Some(dir) => Corpus::load(dir)?,
        None => default_corpus(&cfg, model_cfg.in_channels)?,
    };
    make_dir(&a.out)?;
    write_text(&a.out.join("config.txt"), &text)?;
    let mut trainer = Trainer::new(model_cfg, cfg, &corpus)?;
    let report = trainer.run(|row| {
        if let Some(v) = row.val_psnr {
            log::info!("step {} loss {:.6} val_psnr {v:.3}", row.step, row.loss);
        }
    })?;
    write_text(&a.out.join("metrics.csv"), &report.to_csv())?;
    save_checkpoint(&a.out.join("checkpoint.bin"), trainer.model())?;
    if let Some(v) = report.final_val_psnr() {
        println!("final_val_psnr = {v:.4}");
    }
    Ok(())
}

fn eval<T: Scalar>(a: EvalArgs) -> CliResult {
    let model = load_checkpoint::<T>(&a.checkpoint)?;
    let n = model.config().stack_n;
    let stack_n = a.stack_n.unwrap_or(if 8 % n == 0 { 8 } else { n });
    let spec = EvalSpec {
        sigmas: a.sigmas.clone(),
        noise: a.noise,
        n_images: a.n_images,
        stack_n,
        seed: a.seed,
        patch: a.patch,
    };
    announce(
        "eval",
        &[
            ("checkpoint", a.checkpoint.display().to_string()),
            ("sigmas", format!("{:?}", spec.sigmas)),
            ("noise", spec.noise.to_string()),
            ("n_images", spec.n_images.to_string()),
            ("stack_n", spec.stack_n.to_string()),
            ("seed", spec.seed.to_string()),
            ("patch", spec.patch.to_string()),
            ("precision", format!("{:?}", a.precision)),
        ],
    );
    let corpus: Corpus<T> = match &a.corpus {
        Some(dir) => Corpus::load(dir)?,
        None => default_eval_corpus(a.seed, model.config().in_channels)?,
    };
    let table = evaluate(&model, &spec, &corpus)?;
    write_text(&a.out, &table.to_csv())
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    announce("gradcheck", &[("seed", a.seed.to_string()), ("corrupt", a.corrupt.to_string())]);
    let report = gradcheck_all(a.seed, a.corrupt)?;
    let csv = report.to_csv();
    match &a.out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    if report.all_passed() {
        println!("all {} checks passed", report.rows.len());
        Ok(())
    } else {
        let worst = report.worst().expect("nonempty report");
        Err(CliError::Runtime(Error::InvalidArgument(format!(
            "gradient check failed: worst {} (seed {}) relative error {:.3e}",
            worst.name, worst.seed, worst.rel_error
        ))))
    }
}
