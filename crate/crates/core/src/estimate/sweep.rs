use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::fourier::FourierAccumulator;
use crate::error::{Error, Result};
use crate::imaging::fft::Fft2;
use crate::imaging::{
    add_gaussian_noise, convolve, convolve_circular_spectrum, kernel_psnr, kernel_similarity, kernel_to_plane,
    Boundary, Image, Kernel,
};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepParams {
    /// Stack sizes to evaluate.
    pub ns: Vec<usize>,
    pub noise_sigma: f64,
    pub lambda: f64,
    /// One shuffle of the pool per seed.
    pub seeds: Vec<u64>,
    pub boundary: Boundary,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            ns: vec![1, 2, 4, 8, 16, 32, 64],
            noise_sigma: 0.01,
            lambda: 1e-3,
            seeds: vec![0, 1, 2],
            boundary: Boundary::Circular,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub kernel_id: usize,
    pub n: usize,
    pub seed: u64,
    pub ksim: f64,
    pub psnr_kernel: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    /// One row per `(kernel, N, seed)`, sorted by that key.
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn ns(&self) -> Vec<usize> {
        let mut ns: Vec<usize> = self.rows.iter().map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();
        ns
    }

    /// Mean `(ksim, psnr_kernel)` over kernels and seeds for stack size `n`.
    pub fn mean_at(&self, n: usize) -> Option<(f64, f64)> {
        let sel: Vec<&SweepRow> = self.rows.iter().filter(|r| r.n == n).collect();
        if sel.is_empty() {
            return None;
        }
        let k = sel.len() as f64;
        Some((
            sel.iter().map(|r| r.ksim).sum::<f64>() / k,
            sel.iter().map(|r| r.psnr_kernel).sum::<f64>() / k,
        ))
    }

    /// CSV with a header, per-cell rows, then `mean` rows per `N` (seed column `all`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kernel_id,N,seed,ksim,psnr_kernel\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.6},{:.4}", r.kernel_id, r.n, r.seed, r.ksim, r.psnr_kernel);
        }
        for n in self.ns() {
            let (ksim, psnr) = self.mean_at(n).expect("n present");
            let _ = writeln!(out, "mean,{n},all,{ksim:.6},{psnr:.4}");
        }
        out
    }
}

/// Estimates every kernel from `N` sharp/blurry pairs for each requested `N`
/// and each shuffle seed, recording kernel similarity and kernel PSNR.
///
/// For a given `(kernel, seed)` the pool is shuffled once, the first
/// `max(N)` images are degraded, and each `N` uses the first `N` of them.
/// Estimation uses the true kernel's support.
pub fn run_collaboration_sweep<T: Scalar>(
    pool: &[Image<T>],
    kernels: &[Kernel<T>],
    params: &SweepParams,
) -> Result<SweepReport> {
    let max_n = *params
        .ns
        .iter()
        .max()
        .ok_or_else(|| Error::invalid("sweep needs at least one N"))?;
    if params.ns.contains(&0) {
        return Err(Error::invalid("stack sizes must be positive"));
    }
    if max_n > pool.len() {
        return Err(Error::invalid(format!(
            "N = {max_n} exceeds the pool of {} images",
            pool.len()
        )));
    }
    if kernels.is_empty() || params.seeds.is_empty() {
        return Err(Error::invalid("sweep needs kernels and seeds"));
    }
    let first = &pool[0];
    if pool.iter().any(|p| !p.same_shape(first)) {
        return Err(Error::shape("pool images must share one shape"));
    }
    let mut ns = params.ns.clone();
    ns.sort_unstable();
    ns.dedup();

    let cells: Vec<(usize, u64)> = (0..kernels.len())
        .flat_map(|k| params.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let results: Vec<Result<Vec<SweepRow>>> = cells
        .par_iter()
        .map(|&(kid, seed)| sweep_cell(pool, &kernels[kid], kid, seed, &ns, params))
        .collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| (a.kernel_id, a.n, a.seed).cmp(&(b.kernel_id, b.n, b.seed)));
    Ok(SweepReport { rows })
}

fn sweep_cell<T: Scalar>(
    pool: &[Image<T>],
    kernel: &Kernel<T>,
    kernel_id: usize,
    seed: u64,
    ns: &[usize],
    params: &SweepParams,
) -> Result<Vec<SweepRow>> {
    let (h, w, c) = pool[0].shape();
    let cell_seed = rng::derive_seed(seed, kernel_id as u64);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng::stream(cell_seed, 0));

    let fft = Fft2::new(h, w);
    let kspec = fft.forward_real(&kernel_to_plane(kernel, h, w)?);
    let mut acc = FourierAccumulator::new(h, w, c);
    let mut rows = Vec::with_capacity(ns.len());
    let mut next = 0;
    for (i, &idx) in order.iter().take(*ns.last().unwrap()).enumerate() {
        let x = &pool[idx];
        let blurred = match params.boundary {
            Boundary::Circular => convolve_circular_spectrum(x, &kspec, &fft)?,
            Boundary::Replicate => convolve(x, kernel, Boundary::Replicate)?,
        };
        let y = add_gaussian_noise(&blurred, params.noise_sigma, rng::derive_seed(cell_seed, 1 + i as u64))?;
        acc.add_pair(x, &y)?;
        while next < ns.len() && ns[next] == i + 1 {
            let est = acc.estimate(params.lambda, kernel.size())?;
            rows.push(SweepRow {
                kernel_id,
                n: ns[next],
                seed,
                ksim: kernel_similarity(kernel, &est.projected)?,
                psnr_kernel: kernel_psnr(kernel, &est.projected)?,
            });
            next += 1;
        }
    }
    Ok(rows)
}
