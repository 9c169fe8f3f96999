use std::fmt::Write as _;

use super::adam::Adam;
use super::config::{lr_schedule, TrainConfig};
use super::data::{sample_training_stack, Corpus};
use super::loss::stack_l1;
use crate::error::{Error, Result};
use crate::imaging::psnr;
use crate::nn::{Graph, ModelConfig, Tensor, Unet};
use crate::patches::PatchStack;
use crate::rng::derive_seed;
use crate::scalar::Scalar;

// Stream tags separating the random draws of one run.
const TRAIN_STREAM: u64 = 1;
const VAL_STREAM: u64 = 2;
const MODEL_STREAM: u64 = 3;
const CORPUS_STREAM: u64 = 4;

/// One line of the metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    /// Updates applied before this row was measured.
    pub step: usize,
    /// Loss of the batch for this step, before its update.
    pub loss: f64,
    pub val_psnr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<MetricRow>,
}

impl TrainReport {
    /// `step,loss,val_psnr`; `val_psnr` is empty on steps without validation.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,val_psnr\n");
        for r in &self.rows {
            let _ = write!(s, "{},{:.9}", r.step, r.loss);
            match r.val_psnr {
                Some(v) => {
                    let _ = writeln!(s, ",{v:.6}");
                }
                None => s.push_str(",\n"),
            }
        }
        s
    }

    pub fn final_val_psnr(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.val_psnr)
    }

    /// Mean loss over rows with `from <= step < to`.
    pub fn mean_loss(&self, from: usize, to: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.step >= from && r.step < to)
            .map(|r| r.loss)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Synthetic corpus used when no image directory is supplied.
pub fn default_corpus<T: Scalar>(cfg: &TrainConfig, channels: usize) -> Result<Corpus<T>> {
    Corpus::synthetic(
        cfg.corpus_images,
        cfg.corpus_size,
        channels,
        derive_seed(cfg.seed, CORPUS_STREAM),
    )
}

/// Frozen validation stacks.
///
/// They depend on the seed, degradation ranges, patch size and `val_n` only,
/// so models with different stack sizes are scored on identical data.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationSet<T = f64> {
    pub blurry: Vec<PatchStack<T>>,
    pub sharp: Vec<PatchStack<T>>,
}

impl<T: Scalar> ValidationSet<T> {
    pub fn generate(corpus: &Corpus<T>, cfg: &TrainConfig) -> Result<Self> {
        let base = derive_seed(cfg.seed, VAL_STREAM);
        let mut blurry = Vec::with_capacity(cfg.val_stacks);
        let mut sharp = Vec::with_capacity(cfg.val_stacks);
        for i in 0..cfg.val_stacks {
            let (b, s) = sample_training_stack(
                corpus,
                cfg.val_n,
                cfg.patch,
                cfg.sigma_range,
                cfg.noise_range,
                derive_seed(base, i as u64),
            )?;
            blurry.push(b);
            sharp.push(s);
        }
        Ok(Self { blurry, sharp })
    }

    /// Mean per-image PSNR (peak 1) of the model's restorations.
    pub fn psnr(&self, model: &Unet<T>) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for (b, s) in self.blurry.iter().zip(&self.sharp) {
            let out = model.forward_collaborative(b)?;
            for (p, t) in out.patches().iter().zip(s.patches()) {
                total += psnr(t, p, 1.0)?;
                count += 1;
            }
        }
        Ok(total / count as f64)
    }

    /// PSNR of the degraded inputs themselves.
    pub fn baseline_psnr(&self) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for (b, s) in self.blurry.iter().zip(&self.sharp) {
            for (p, t) in b.patches().iter().zip(s.patches()) {
                total += psnr(t, p, 1.0)?;
                count += 1;
            }
        }
        Ok(total / count as f64)
    }
}

/// Packed `(input, target)` of the batch used at `step`.
///
/// Every stack is seeded from the global step index, so a run is
/// reproducible regardless of how batches are produced.
pub fn training_batch<T: Scalar>(corpus: &Corpus<T>, cfg: &TrainConfig, step: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let step_seed = derive_seed(derive_seed(cfg.seed, TRAIN_STREAM), step as u64);
    let mut blurry = Vec::with_capacity(cfg.batch_size);
    let mut sharp = Vec::with_capacity(cfg.batch_size);
    for j in 0..cfg.batch_size {
        let (b, s) = sample_training_stack(
            corpus,
            cfg.stack_n,
            cfg.patch,
            cfg.sigma_range,
            cfg.noise_range,
            derive_seed(step_seed, j as u64),
        )?;
        blurry.push(b);
        sharp.push(s);
    }
    Ok((Tensor::from_stacks(&blurry)?, Tensor::from_stacks(&sharp)?))
}

/// Model, optimizer and data of one training run.
pub struct Trainer<T: Scalar = f64> {
    model: Unet<T>,
    opt: Adam<T>,
    cfg: TrainConfig,
    corpus: Corpus<T>,
    val: ValidationSet<T>,
    step: usize,
}

impl<T: Scalar> Trainer<T> {
    /// Splits off validation images and initializes the model from the run seed.
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig, corpus: &Corpus<T>) -> Result<Self> {
        cfg.validate()?;
        model_cfg.validate()?;
        if model_cfg.stack_n != cfg.stack_n {
            return Err(Error::invalid(format!(
                "model stack size {} differs from training stack size {}",
                model_cfg.stack_n, cfg.stack_n
            )));
        }
        if cfg.patch % (1 << model_cfg.depth) != 0 {
            return Err(Error::invalid(format!(
                "patch {} is not divisible by 2^{}",
                cfg.patch, model_cfg.depth
            )));
        }
        if corpus.channels() != model_cfg.in_channels {
            return Err(Error::invalid(format!(
                "corpus has {} channels, model expects {}",
                corpus.channels(),
                model_cfg.in_channels
            )));
        }
        let (train, held) = corpus.split_validation();
        let val = ValidationSet::generate(&held, &cfg)?;
        let model = Unet::new(model_cfg, derive_seed(cfg.seed, MODEL_STREAM))?;
        let opt = Adam::new(model.params().values());
        Ok(Self {
            model,
            opt,
            cfg,
            corpus: train,
            val,
            step: 0,
        })
    }

    pub fn model(&self) -> &Unet<T> {
        &self.model
    }

    pub fn into_model(self) -> Unet<T> {
        self.model
    }

    pub fn validation(&self) -> &ValidationSet<T> {
        &self.val
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn loss_and_grads(&self, step: usize, want_grads: bool) -> Result<(f64, Vec<Tensor<T>>)> {
        let (x, y) = training_batch(&self.corpus, &self.cfg, step)?;
        let g = Graph::new();
        let p = self.model.params().bind(&g, want_grads);
        let out = self.model.forward(&p, g.input(x))?;
        let loss = stack_l1(out, &y)?;
        let value = loss.value().data()[0].as_f64();
        if !want_grads {
            return Ok((value, Vec::new()));
        }
        let grads = g.backward(loss);
        Ok((value, p.iter().map(|&v| grads.get_or_zeros(v)).collect()))
    }

    /// Runs one update; returns the batch loss measured before it.
    pub fn step(&mut self) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(self.step, true)?;
        if !loss.is_finite() {
            return Err(Error::invalid(format!("loss diverged at step {}", self.step)));
        }
        let lr = lr_schedule(self.step, &self.cfg);
        self.opt.step(self.model.params_mut().values_mut(), &grads, lr)?;
        self.step += 1;
        Ok(loss)
    }

    /// Loss on the batch of the current step without updating.
    pub fn current_loss(&self) -> Result<f64> {
        Ok(self.loss_and_grads(self.step, false)?.0)
    }

    pub fn val_psnr(&self) -> Result<f64> {
        self.val.psnr(&self.model)
    }

    /// Runs the remaining steps, validating every `val_every` steps and at the end.
    pub fn run(&mut self, mut progress: impl FnMut(&MetricRow)) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        while self.step < self.cfg.steps {
            let validate = self.cfg.val_every > 0 && self.step % self.cfg.val_every == 0;
            let val_psnr = if validate { Some(self.val_psnr()?) } else { None };
            let step = self.step;
            let loss = self.step()?;
            let row = MetricRow { step, loss, val_psnr };
            progress(&row);
            report.rows.push(row);
        }
        let row = MetricRow {
            step: self.step,
            loss: self.current_loss()?,
            val_psnr: Some(self.val_psnr()?),
        };
        progress(&row);
        report.rows.push(row);
        Ok(report)
    }
}

/// Trains from scratch; returns the final model and its metrics.
pub fn train_toy<T: Scalar>(
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    corpus: &Corpus<T>,
    progress: impl FnMut(&MetricRow),
) -> Result<(Unet<T>, TrainReport)> {
    let mut trainer = Trainer::new(model_cfg, cfg.clone(), corpus)?;
    let report = trainer.run(progress)?;
    Ok((trainer.into_model(), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::PoolingKind;

    fn tiny(n: usize) -> (ModelConfig, TrainConfig) {
        let model = ModelConfig {
            depth: 1,
            base_channels: 4,
            in_channels: 1,
            out_channels: 1,
            ..ModelConfig::unet()
        }
        .with_pooling(PoolingKind::Max, n);
        let cfg = TrainConfig {
            steps: 3,
            stack_n: n,
            patch: 8,
            val_every: 2,
            val_stacks: 2,
            val_n: 2,
            corpus_images: 4,
            corpus_size: 16,
            seed: 11,
            ..TrainConfig::default()
        };
        (model, cfg)
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let (m, mut c) = tiny(2);
        c.steps = 0;
        let corpus = default_corpus::<f64>(&c, 1).unwrap();
        let (model, report) = train_toy(m, &c, &corpus, |_| {}).unwrap();
        let init = Unet::<f64>::new(m, derive_seed(c.seed, MODEL_STREAM)).unwrap();
        assert_eq!(model.params(), init.params());
        assert_eq!(report.rows.len(), 1);
        assert!(report.rows[0].val_psnr.is_some());
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let (m, c) = tiny(2);
        let corpus = default_corpus::<f64>(&c, 1).unwrap();
        let a = train_toy(m, &c, &corpus, |_| {}).unwrap();
        let b = train_toy(m, &c, &corpus, |_| {}).unwrap();
        assert_eq!(a.0.params(), b.0.params());
        assert_eq!(a.1.to_csv(), b.1.to_csv());
        let csv = a.1.to_csv();
        assert!(csv.starts_with("step,loss,val_psnr\n0,"));
        assert_eq!(csv.lines().count(), 1 + c.steps + 1);
    }

    #[test]
    fn validation_is_independent_of_stack_size() {
        let (_, c1) = tiny(1);
        let (_, c2) = tiny(2);
        let corpus = default_corpus::<f64>(&c1, 1).unwrap();
        assert_eq!(
            ValidationSet::generate(&corpus, &c1).unwrap(),
            ValidationSet::generate(&corpus, &c2).unwrap()
        );
    }

    #[test]
    fn mismatched_stack_size_rejected() {
        let (m, mut c) = tiny(2);
        c.stack_n = 1;
        let corpus = default_corpus::<f64>(&c, 1).unwrap();
        assert!(Trainer::new(m, c, &corpus).is_err());
    }
}
