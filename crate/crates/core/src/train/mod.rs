//! Stack-supervised training at toy scale and the PSNR evaluation harness.

mod adam;
mod config;
pub mod data;
mod eval;
mod loss;
mod trainer;

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use config::{lr_schedule, parse_run_config, run_config_text, TrainConfig};
pub use data::Corpus;
pub use eval::{default_eval_corpus, evaluate, EvalSpec, EvalTable};
pub use loss::{per_slot_l1, stack_l1, stack_l1_loss};
pub use trainer::{default_corpus, train_toy, training_batch, MetricRow, TrainReport, Trainer, ValidationSet};
