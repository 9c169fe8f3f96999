use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::nn::ModelConfig;

/// Training hyper-parameters and the degradation protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Stacks per step.
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub lr_floor: f64,
    /// Images per stack; must equal the model's stack size.
    pub stack_n: usize,
    pub sigma_range: [f64; 2],
    pub noise_range: [f64; 2],
    pub seed: u64,
    /// Square patch side; divisible by `2^depth`.
    pub patch: usize,
    /// Validation period in steps (0 disables intermediate validation).
    pub val_every: usize,
    /// Frozen validation stacks.
    pub val_stacks: usize,
    /// Images per validation stack, independent of `stack_n`.
    pub val_n: usize,
    /// Synthetic training images generated when no corpus is given.
    pub corpus_images: usize,
    pub corpus_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 1,
            lr_init: 1e-3,
            lr_decay: 0.5,
            decay_every: 2000,
            lr_floor: 1e-6,
            stack_n: 8,
            sigma_range: [0.3, 2.0],
            noise_range: [0.5 / 255.0, 2.0 / 255.0],
            seed: 0,
            patch: 64,
            val_every: 500,
            val_stacks: 4,
            val_n: 8,
            corpus_images: 32,
            corpus_size: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_floor > 0.0 && self.lr_init >= self.lr_floor) {
            return Err(Error::invalid("learning rates need lr_init >= lr_floor > 0"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(Error::invalid("lr_decay must lie in (0, 1)"));
        }
        if self.decay_every == 0 || self.batch_size == 0 || self.stack_n == 0 || self.patch == 0 {
            return Err(Error::invalid("decay_every, batch_size, stack_n and patch must be positive"));
        }
        if self.val_stacks == 0 || self.val_n == 0 || self.val_n % self.stack_n != 0 {
            return Err(Error::invalid("validation stacks must be a positive multiple of stack_n"));
        }
        for (name, r) in [("sigma_range", self.sigma_range), ("noise_range", self.noise_range)] {
            if !(r[0] <= r[1]) || r[0] < 0.0 {
                return Err(Error::invalid(format!("{name} must satisfy 0 <= lo <= hi")));
            }
        }
        if self.sigma_range[0] <= 0.0 {
            return Err(Error::invalid("sigma_range must be positive"));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "lr_init = {:e}", self.lr_init);
        let _ = writeln!(s, "lr_decay = {}", self.lr_decay);
        let _ = writeln!(s, "decay_every = {}", self.decay_every);
        let _ = writeln!(s, "lr_floor = {:e}", self.lr_floor);
        let _ = writeln!(s, "stack_n = {}", self.stack_n);
        let _ = writeln!(s, "sigma_range = {},{}", self.sigma_range[0], self.sigma_range[1]);
        let _ = writeln!(s, "noise_range = {:e},{:e}", self.noise_range[0], self.noise_range[1]);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "patch = {}", self.patch);
        let _ = writeln!(s, "val_every = {}", self.val_every);
        let _ = writeln!(s, "val_stacks = {}", self.val_stacks);
        let _ = writeln!(s, "val_n = {}", self.val_n);
        let _ = writeln!(s, "corpus_images = {}", self.corpus_images);
        let _ = writeln!(s, "corpus_size = {}", self.corpus_size);
        s
    }

    /// Consumes the training keys; missing keys keep their defaults.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            steps: kv.take("steps")?.unwrap_or(d.steps),
            batch_size: kv.take("batch_size")?.unwrap_or(d.batch_size),
            lr_init: kv.take("lr_init")?.unwrap_or(d.lr_init),
            lr_decay: kv.take("lr_decay")?.unwrap_or(d.lr_decay),
            decay_every: kv.take("decay_every")?.unwrap_or(d.decay_every),
            lr_floor: kv.take("lr_floor")?.unwrap_or(d.lr_floor),
            stack_n: kv.take("stack_n")?.unwrap_or(d.stack_n),
            sigma_range: kv.take_range("sigma_range")?.unwrap_or(d.sigma_range),
            noise_range: kv.take_range("noise_range")?.unwrap_or(d.noise_range),
            seed: kv.take("seed")?.unwrap_or(d.seed),
            patch: kv.take("patch")?.unwrap_or(d.patch),
            val_every: kv.take("val_every")?.unwrap_or(d.val_every),
            val_stacks: kv.take("val_stacks")?.unwrap_or(d.val_stacks),
            val_n: kv.take("val_n")?.unwrap_or(d.val_n),
            corpus_images: kv.take("corpus_images")?.unwrap_or(d.corpus_images),
            corpus_size: kv.take("corpus_size")?.unwrap_or(d.corpus_size),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(path, text)?;
        let cfg = Self::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }
}

/// Reads a run file holding both model and training keys.
///
/// `stack_n` is shared: it sets the model's stack size and the number of
/// images per training stack (default 1).
pub fn parse_run_config(path: &Path, text: &str) -> Result<(ModelConfig, TrainConfig)> {
    let mut kv = KeyValues::parse(path, text)?;
    let n: Option<usize> = kv.take("stack_n")?;
    let mut model = ModelConfig::from_kv(&mut kv)?;
    let mut train = TrainConfig::from_kv(&mut kv)?;
    kv.finish()?;
    let n = n.unwrap_or(model.stack_n);
    model.stack_n = n;
    train.stack_n = n;
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}

/// Text accepted by [`parse_run_config`].
pub fn run_config_text(model: &ModelConfig, train: &TrainConfig) -> String {
    let mut s = model.to_text();
    for line in train.to_text().lines().filter(|l| !l.starts_with("stack_n ")) {
        s.push_str(line);
        s.push('\n');
    }
    s
}

/// Step decay: `lr_init * decay^floor(step / decay_every)`, never below `lr_floor`.
pub fn lr_schedule(step: usize, config: &TrainConfig) -> f64 {
    let k = (step / config.decay_every) as f64;
    (config.lr_init * config.lr_decay.powf(k)).max(config.lr_floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig {
            lr_init: 5e-5,
            lr_decay: 0.5,
            decay_every: 40_000,
            lr_floor: 1e-6,
            ..TrainConfig::default()
        };
        assert_eq!(lr_schedule(0, &cfg), 5e-5);
        assert_eq!(lr_schedule(39_999, &cfg), 5e-5);
        assert_eq!(lr_schedule(40_000, &cfg), 2.5e-5);
        assert_eq!(lr_schedule(10_000_000, &cfg), 1e-6);
    }

    #[test]
    fn text_round_trip() {
        let cfg = TrainConfig {
            seed: 7,
            noise_range: [0.001, 0.002],
            ..TrainConfig::default()
        };
        let back = TrainConfig::parse(Path::new("cfg"), &cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert!(TrainConfig::parse(Path::new("cfg"), "stepz = 3").is_err());
        assert!(TrainConfig::parse(Path::new("cfg"), "lr_decay = 1.5").is_err());
    }

    #[test]
    fn run_config_round_trip() {
        let text = "depth = 2\nbase_channels = 8\npooling = max\nstack_n = 8\nsteps = 10\n";
        let (m, t) = parse_run_config(Path::new("run"), text).unwrap();
        assert_eq!((m.depth, m.stack_n, t.stack_n, t.steps), (2, 8, 8, 10));
        let again = parse_run_config(Path::new("run"), &run_config_text(&m, &t)).unwrap();
        assert_eq!(again, (m, t));
        assert!(parse_run_config(Path::new("run"), "stack_n = 3\n").is_err());
    }
}
