//! Central finite-difference gradient checks.
//!
//! Every case is reduced to a scalar by a random linear probe
//! `L = <f(x), r>`, whose analytic gradient comes from the tape and whose
//! numerical gradient comes from `(L(x + eps) - L(x - eps)) / (2 eps)` per
//! input element. The reported error is norm-wise:
//! `|g_tape - g_fd| / max(|g_tape|, |g_fd|)` over all inputs jointly.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::graph::{Graph, Var};
use super::layers::{Builder, MergeGlobal, Params};
use super::pooling::{LambdaPool, PoolingKind, SelfAttentionPool};
use super::unet::{ModelConfig, Unet};
use super::{ops, Tensor};
use crate::error::Result;
use crate::rng::{self, Rng};

pub const FD_EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
pub const SEEDS_PER_CASE: usize = 5;

/// Differentiable function of the case inputs.
pub type CaseFn = Box<dyn for<'g> Fn(&[Var<'g, f64>]) -> Result<Var<'g, f64>>>;

pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    pub f: CaseFn,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Tensor<f64>>,
        f: impl for<'g> Fn(&[Var<'g, f64>]) -> Result<Var<'g, f64>> + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            inputs,
            f: Box::new(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub seed: u64,
    pub elements: usize,
    pub rel_error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_error <= TOLERANCE
    }
}

fn probe_value(case: &GradCase, inputs: &[Tensor<f64>], probe: &Tensor<f64>) -> Result<f64> {
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = (case.f)(&vars)?;
    let loss = ops::dot_const(out, probe)?;
    let v = loss.value().data()[0];
    Ok(v)
}

/// Runs one case; `seed` drives the probe direction.
pub fn run_case(case: &GradCase, seed: u64) -> Result<GradCheck> {
    let mut rng = rng::stream(seed, 0x9c);
    let g = Graph::new();
    let vars: Vec<_> = case.inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (case.f)(&vars)?;
    let probe = normal(&out.shape(), &mut rng);
    let loss = ops::dot_const(out, &probe)?;
    let grads = g.backward(loss);
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|&v| grads.get_or_zeros(v).into_data())
        .collect();

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut inputs = case.inputs.clone();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            inputs[i].data_mut()[j] = orig + FD_EPS;
            let plus = probe_value(case, &inputs, &probe)?;
            inputs[i].data_mut()[j] = orig - FD_EPS;
            let minus = probe_value(case, &inputs, &probe)?;
            inputs[i].data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * FD_EPS));
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    let scale = norm(&analytic).max(norm(&numeric));
    let rel_error = if scale == 0.0 { 0.0 } else { norm(&diff) / scale };
    Ok(GradCheck {
        name: case.name.clone(),
        seed,
        elements: analytic.len(),
        rel_error,
    })
}

fn normal(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.sample(StandardNormal)).collect()).expect("shape")
}

/// Normal samples pushed at least `margin` away from zero (keeps ReLU and
/// |.| away from their kinks).
fn away_from_zero(shape: &[usize], margin: f64, rng: &mut Rng) -> Tensor<f64> {
    normal(shape, rng).map(|v| if v >= 0.0 { v + margin } else { v - margin })
}

/// Pairwise distinct values in `[-1, 1]` (keeps max ops away from ties).
fn distinct(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    let step = 2.0 / len as f64;
    Tensor::new(shape, order.into_iter().map(|i| -1.0 + step * (i as f64 + 0.5)).collect()).expect("shape")
}

fn build<M>(seed: u64, f: impl FnOnce(&mut Builder<'_, f64>) -> M) -> (M, Params<f64>) {
    let mut params = Params::new();
    let mut rng = rng::rng(seed);
    let mut b = Builder::new(&mut params, &mut rng);
    let m = f(&mut b);
    (m, params)
}

/// Perturbs freshly initialised parameters so identity-like inits
/// (unit norms, constant layer scales, zero biases) are exercised generically.
fn jitter(params: &Params<f64>, rng: &mut Rng) -> Vec<Tensor<f64>> {
    params
        .values()
        .iter()
        .map(|t| {
            let noise = normal(t.shape(), rng);
            let mut out = t.clone();
            for (v, n) in out.data_mut().iter_mut().zip(noise.data()) {
                *v += 0.3 * n;
            }
            out
        })
        .collect()
}

/// Every differentiable op and module, with inputs drawn from `seed`.
pub fn standard_cases(seed: u64) -> Result<Vec<GradCase>> {
    let mut r = rng::stream(seed, 0x67);
    let mut cases = Vec::new();

    cases.push(GradCase::new(
        "conv2d",
        vec![normal(&[2, 3, 5, 5], &mut r), normal(&[4, 3, 3, 3], &mut r), normal(&[4], &mut r)],
        |v| ops::conv2d(v[0], v[1], Some(v[2]), 1, 1),
    ));
    cases.push(GradCase::new(
        "conv2d_strided",
        vec![normal(&[2, 2, 6, 5], &mut r), normal(&[3, 2, 3, 3], &mut r)],
        |v| ops::conv2d(v[0], v[1], None, 2, 1),
    ));
    cases.push(GradCase::new(
        "conv_transpose2d",
        vec![normal(&[2, 3, 3, 4], &mut r), normal(&[3, 2, 2, 2], &mut r), normal(&[2], &mut r)],
        |v| ops::conv_transpose2d(v[0], v[1], Some(v[2]), 2, 0),
    ));
    cases.push(GradCase::new(
        "conv_transpose2d_overlap",
        vec![normal(&[1, 2, 4, 3], &mut r), normal(&[2, 3, 3, 3], &mut r)],
        |v| ops::conv_transpose2d(v[0], v[1], None, 2, 1),
    ));
    cases.push(GradCase::new("relu", vec![away_from_zero(&[2, 3, 4, 4], 1e-2, &mut r)], |v| {
        Ok(ops::relu(v[0]))
    }));
    cases.push(GradCase::new("gelu", vec![normal(&[2, 3, 4, 4], &mut r)], |v| Ok(ops::gelu(v[0]))));
    cases.push(GradCase::new("max_pool2d", vec![distinct(&[2, 2, 4, 6], &mut r)], |v| {
        ops::max_pool2d(v[0])
    }));
    cases.push(GradCase::new(
        "layer_norm",
        vec![normal(&[2, 5, 3, 3], &mut r), normal(&[5], &mut r), normal(&[5], &mut r)],
        |v| ops::layer_norm(v[0], v[1], v[2], 1e-6),
    ));
    cases.push(GradCase::new(
        "layer_scale",
        vec![normal(&[2, 4, 3, 3], &mut r), normal(&[4], &mut r)],
        |v| ops::layer_scale(v[0], v[1]),
    ));
    cases.push(GradCase::new(
        "concat_slice_add",
        vec![normal(&[2, 3, 3, 3], &mut r), normal(&[2, 2, 3, 3], &mut r)],
        |v| {
            let cat = ops::concat_channels(&[v[0], v[1]])?;
            let a = ops::slice_channels(cat, 1, 3)?;
            ops::add(a, v[0])
        },
    ));

    let (merge, mp) = build(derive(seed, 1), |b| MergeGlobal::new(b, "merge", 4));
    let mut inputs = vec![normal(&[4, 4, 3, 3], &mut r), normal(&[4, 4, 3, 3], &mut r)];
    inputs.extend(jitter(&mp, &mut r));
    cases.push(GradCase::new("merge_global", inputs, move |v| merge.forward(&v[2..], v[0], v[1])));

    cases.push(GradCase::new("pool_max_stack", vec![distinct(&[6, 3, 3, 3], &mut r)], |v| {
        ops::stack_max(v[0], 3)
    }));
    cases.push(GradCase::new("stack_softmax", vec![normal(&[4, 3, 2, 3], &mut r)], |v| {
        ops::stack_softmax(v[0], 2)
    }));
    cases.push(GradCase::new(
        "lambda_summary",
        vec![normal(&[6, 2, 3, 3], &mut r), normal(&[6, 4, 3, 3], &mut r)],
        |v| ops::lambda_summary(v[0], v[1], 3),
    ));
    cases.push(GradCase::new(
        "stack_attention",
        vec![
            normal(&[4, 4, 2, 3], &mut r),
            normal(&[4, 4, 2, 3], &mut r),
            normal(&[4, 4, 2, 3], &mut r),
        ],
        |v| ops::stack_attention(v[0], v[1], v[2], 4, 2),
    ));

    let (lambda, lp) = build(derive(seed, 2), |b| LambdaPool::new(b, "lambda", 8, 4));
    let mut inputs = vec![normal(&[2, 8, 3, 3], &mut r)];
    inputs.extend(jitter(&lp, &mut r));
    cases.push(GradCase::new("pool_lambda", inputs, move |v| lambda.forward(&v[1..], v[0], 2)));

    let (sa, sp) = build(derive(seed, 3), |b| SelfAttentionPool::new(b, "sa", 8, 2));
    let sa = sa?;
    let mut inputs = vec![normal(&[3, 8, 2, 3], &mut r)];
    inputs.extend(jitter(&sp, &mut r));
    cases.push(GradCase::new("pool_self_attention", inputs, move |v| sa.forward(&v[1..], v[0], 3)));

    let pred = normal(&[2, 3, 4, 4], &mut r);
    let offset = away_from_zero(&[2, 3, 4, 4], 1e-3, &mut r);
    let mut target = pred.clone();
    for (t, o) in target.data_mut().iter_mut().zip(offset.data()) {
        *t += o;
    }
    cases.push(GradCase::new("stack_l1", vec![pred], move |v| ops::l1_loss(v[0], &target)));

    let cfg = ModelConfig {
        depth: 1,
        base_channels: 4,
        ..ModelConfig::unet_t()
    }
    .with_pooling(PoolingKind::Max, 2);
    let model: Unet<f64> = Unet::new(cfg, derive(seed, 4))?;
    let mut inputs = vec![distinct(&[2, 3, 4, 4], &mut r)];
    inputs.extend(jitter(model.params(), &mut r));
    cases.push(GradCase::new("unet_tiny_max", inputs, move |v| model.forward(&v[1..], v[0])));
    Ok(cases)
}

fn derive(seed: u64, k: u64) -> u64 {
    rng::derive_seed(seed, k)
}

/// A deliberately wrong backward rule (`d(x^2)/dx` reported as `3x`), used as
/// a negative control for the checker.
pub fn corrupted_case(seed: u64) -> GradCase {
    let mut r = rng::stream(seed, 0xbad);
    GradCase::new("corrupted_square", vec![normal(&[2, 2, 3, 3], &mut r)], |v| {
        let x = v[0];
        let xv = x.value();
        let value = xv.map(|a| a * a);
        Ok(x.graph().op(&[x], value, move |dy, _| {
            let data = xv.data().iter().zip(dy.data()).map(|(a, g)| 3.0 * a * g).collect();
            vec![Some(Tensor::new(xv.shape(), data).expect("shape"))]
        }))
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub rows: Vec<GradCheck>,
}

impl GradReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(GradCheck::passed)
    }

    pub fn worst(&self) -> Option<&GradCheck> {
        self.rows.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("op,seed,elements,rel_error,pass\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{:.3e},{}", r.name, r.seed, r.elements, r.rel_error, r.passed());
        }
        s
    }
}

/// Runs every standard case for [`SEEDS_PER_CASE`] seeds derived from `seed`,
/// plus the corrupted control when `include_corrupted`.
pub fn gradcheck_all(seed: u64, include_corrupted: bool) -> Result<GradReport> {
    let mut rows = Vec::new();
    for k in 0..SEEDS_PER_CASE as u64 {
        let s = derive(seed, 100 + k);
        let mut cases = standard_cases(s)?;
        if include_corrupted {
            cases.push(corrupted_case(s));
        }
        for case in &cases {
            rows.push(run_case(case, s)?);
        }
    }
    rows.sort_by(|a, b| a.name.cmp(&b.name).then(a.seed.cmp(&b.seed)));
    Ok(GradReport { rows })
}
