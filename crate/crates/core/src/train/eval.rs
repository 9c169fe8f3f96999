use std::fmt::Write as _;

use super::data::{degrade_stack, eval_blur, Corpus};
use crate::error::{Error, Result};
use crate::imaging::psnr;
use crate::nn::Unet;
use crate::rng::derive_seed;
use crate::scalar::Scalar;

/// Evaluation protocol: `n_images` crops per blur level, grouped into
/// stacks of `stack_n` that share one blur; replicate boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSpec {
    pub sigmas: Vec<f64>,
    pub noise: f64,
    pub n_images: usize,
    pub stack_n: usize,
    pub seed: u64,
    pub patch: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            sigmas: vec![1.0, 2.0, 3.0, 4.0],
            noise: 0.5 / 255.0,
            n_images: 32,
            stack_n: 8,
            seed: 0,
            patch: 64,
        }
    }
}

/// Synthetic test scenes, drawn from a stream no training run uses.
pub fn default_eval_corpus<T: Scalar>(seed: u64, channels: usize) -> Result<Corpus<T>> {
    Corpus::synthetic(16, 128, channels, derive_seed(seed, EVAL_CORPUS_STREAM))
}

const EVAL_CORPUS_STREAM: u64 = 0xE7A1;

/// Mean PSNR per blur level; one row per method.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTable {
    pub sigmas: Vec<f64>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl EvalTable {
    pub fn row(&self, method: &str) -> Option<&[f64]> {
        self.rows.iter().find(|(m, _)| m == method).map(|(_, v)| v.as_slice())
    }

    pub fn average(&self, method: &str) -> Option<f64> {
        self.row(method).map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// `method,sigma=1,...,average`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method");
        for sigma in &self.sigmas {
            let _ = write!(s, ",sigma={sigma}");
        }
        s.push_str(",average\n");
        for (method, values) in &self.rows {
            s.push_str(method);
            for v in values {
                let _ = write!(s, ",{v:.4}");
            }
            let avg = values.iter().sum::<f64>() / values.len() as f64;
            let _ = writeln!(s, ",{avg:.4}");
        }
        s
    }
}

/// Scores `model` and the unrestored blurry input on the same degraded crops.
pub fn evaluate<T: Scalar>(model: &Unet<T>, spec: &EvalSpec, corpus: &Corpus<T>) -> Result<EvalTable> {
    let n_model = model.config().stack_n;
    if spec.stack_n == 0 || spec.stack_n % n_model != 0 {
        return Err(Error::invalid(format!(
            "eval stack size {} is not a multiple of the model stack size {n_model}",
            spec.stack_n
        )));
    }
    if spec.n_images == 0 || spec.n_images % spec.stack_n != 0 {
        return Err(Error::invalid(format!(
            "n_images {} is not a positive multiple of stack size {}",
            spec.n_images, spec.stack_n
        )));
    }
    if spec.sigmas.is_empty() {
        return Err(Error::invalid("no blur levels to evaluate"));
    }
    let mut model_row = Vec::with_capacity(spec.sigmas.len());
    let mut blurry_row = Vec::with_capacity(spec.sigmas.len());
    for (i, &sigma) in spec.sigmas.iter().enumerate() {
        let level_seed = derive_seed(spec.seed, i as u64);
        let (mut m, mut b) = (0.0, 0.0);
        for s in 0..spec.n_images / spec.stack_n {
            let stack_seed = derive_seed(level_seed, s as u64);
            let blur = eval_blur(sigma, spec.noise, derive_seed(stack_seed, 0))?;
            let (blurry, sharp) = degrade_stack(corpus, spec.stack_n, spec.patch, &blur, derive_seed(stack_seed, 1))?;
            let restored = model.forward_collaborative(&blurry)?;
            for ((x, y), r) in sharp.patches().iter().zip(blurry.patches()).zip(restored.patches()) {
                m += psnr(x, r, 1.0)?;
                b += psnr(x, y, 1.0)?;
            }
        }
        model_row.push(m / spec.n_images as f64);
        blurry_row.push(b / spec.n_images as f64);
    }
    Ok(EvalTable {
        sigmas: spec.sigmas.clone(),
        rows: vec![("model".into(), model_row), ("blurry".into(), blurry_row)],
    })
}
