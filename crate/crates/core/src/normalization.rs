//! Batch normalization (applied to pre-activations) and per-batch min-max
//! normalization (applied to activations).
//!
//! Both work per neuron: statistics are taken down each column of a
//! `batch × width` matrix.

use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Matrix, Rng};
use crate::network::Mode;
use crate::report::sig10;

/// Which normalizer a layer carries, without its state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizerKind {
    None,
    BatchNorm,
    MinMax,
}

impl NormalizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            NormalizerKind::None => "none",
            NormalizerKind::BatchNorm => "batchnorm",
            NormalizerKind::MinMax => "minmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalizer {
    None,
    BatchNorm(BatchNormPre),
    MinMax(MinMaxPost),
}

impl Normalizer {
    pub fn new(kind: NormalizerKind, width: usize) -> Self {
        match kind {
            NormalizerKind::None => Normalizer::None,
            NormalizerKind::BatchNorm => Normalizer::BatchNorm(BatchNormPre::new(width)),
            NormalizerKind::MinMax => Normalizer::MinMax(MinMaxPost::default()),
        }
    }

    pub fn kind(&self) -> NormalizerKind {
        match self {
            Normalizer::None => NormalizerKind::None,
            Normalizer::BatchNorm(_) => NormalizerKind::BatchNorm,
            Normalizer::MinMax(_) => NormalizerKind::MinMax,
        }
    }
}

fn require_batch(op: &str, rows: usize) -> Result<()> {
    if rows < 2 {
        return Err(Error::config(format!(
            "{op} needs a batch of at least 2 rows in training, got {rows}"
        )));
    }
    Ok(())
}

/// Batch normalization placed before the activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormPre {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
    /// Weight on the old running value: `running ← m·running + (1−m)·batch`.
    pub momentum: f64,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Everything `bn_backward` needs from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub x_hat: Matrix,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl BatchNormPre {
    pub fn new(width: usize) -> Self {
        BatchNormPre {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            eps: 1e-5,
            momentum: 0.9,
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes `z`; in training mode also folds the batch statistics into
    /// the running estimates.
    pub fn forward(&mut self, z: &Matrix, mode: Mode) -> Result<(Matrix, Option<BatchNormCache>)> {
        let (out, cache) = self.forward_frozen(z, mode)?;
        if let Some(c) = &cache {
            self.update_running(c, z.rows());
        }
        Ok((out, cache))
    }

    /// Like [`BatchNormPre::forward`] but leaves the running statistics alone.
    pub fn forward_frozen(
        &self,
        z: &Matrix,
        mode: Mode,
    ) -> Result<(Matrix, Option<BatchNormCache>)> {
        let (n, w) = z.shape();
        if w != self.width() {
            return Err(Error::config(format!(
                "batch norm of width {} applied to {w} columns",
                self.width()
            )));
        }
        match mode {
            Mode::Eval => {
                let scale: Vec<f64> = self
                    .running_var
                    .iter()
                    .zip(&self.gamma)
                    .map(|(v, g)| g / (v + self.eps).sqrt())
                    .collect();
                let mut out = z.clone();
                for row in out.data_mut().chunks_exact_mut(w) {
                    for j in 0..w {
                        row[j] = (row[j] - self.running_mean[j]) * scale[j] + self.beta[j];
                    }
                }
                Ok((out, None))
            }
            Mode::Train => {
                require_batch("batch norm", n)?;
                let inv_n = 1.0 / n as f64;
                let mean: Vec<f64> = z.col_sums().into_iter().map(|s| s * inv_n).collect();
                let mut var = vec![0.0; w];
                for row in z.data().chunks_exact(w) {
                    for j in 0..w {
                        let d = row[j] - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v *= inv_n);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                let mut x_hat = z.clone();
                let mut out = z.clone();
                for (xr, or) in x_hat
                    .data_mut()
                    .chunks_exact_mut(w)
                    .zip(out.data_mut().chunks_exact_mut(w))
                {
                    for j in 0..w {
                        let h = (xr[j] - mean[j]) * inv_std[j];
                        xr[j] = h;
                        or[j] = self.gamma[j] * h + self.beta[j];
                    }
                }
                out.ensure_finite("batch norm")?;
                let cache = BatchNormCache {
                    x_hat,
                    mean,
                    var,
                    inv_std,
                    gamma: self.gamma.clone(),
                };
                Ok((out, Some(cache)))
            }
        }
    }

    /// Running variance uses the unbiased batch estimate.
    pub fn update_running(&mut self, cache: &BatchNormCache, batch: usize) {
        let m = self.momentum;
        let unbias = batch as f64 / (batch as f64 - 1.0);
        for j in 0..self.width() {
            self.running_mean[j] = m * self.running_mean[j] + (1.0 - m) * cache.mean[j];
            self.running_var[j] = m * self.running_var[j] + (1.0 - m) * cache.var[j] * unbias;
        }
    }
}

/// Gradients of the batch-norm transform: `(dZ, dGamma, dBeta)`.
pub fn bn_backward(d_out: &Matrix, cache: &BatchNormCache) -> (Matrix, Vec<f64>, Vec<f64>) {
    let (n, w) = d_out.shape();
    let x_hat = &cache.x_hat;
    let mut d_gamma = vec![0.0; w];
    let mut d_beta = vec![0.0; w];
    for (dr, hr) in d_out.data().chunks_exact(w).zip(x_hat.data().chunks_exact(w)) {
        for j in 0..w {
            d_gamma[j] += dr[j] * hr[j];
            d_beta[j] += dr[j];
        }
    }
    // with g = γ·dOut:  dZ = inv_std/N · (N·g − Σg − x̂·Σ(g·x̂))
    // and Σg = γ·dβ, Σ(g·x̂) = γ·dγ
    let inv_n = 1.0 / n as f64;
    let mut dz = d_out.clone();
    for (dr, hr) in dz.data_mut().chunks_exact_mut(w).zip(x_hat.data().chunks_exact(w)) {
        for j in 0..w {
            let g = cache.gamma[j];
            dr[j] = g
                * cache.inv_std[j]
                * (dr[j] - inv_n * d_beta[j] - hr[j] * inv_n * d_gamma[j]);
        }
    }
    (dz, d_gamma, d_beta)
}

/// Per-batch min-max rescaling to `[0, 1]` placed after the activation.
/// Holds no running state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxPost {
    /// Guards the denominator when a column is constant.
    pub eps: f64,
}

impl Default for MinMaxPost {
    fn default() -> Self {
        MinMaxPost { eps: 1e-8 }
    }
}

/// Per-column batch extremes from a min-max forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxCache {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub eps: f64,
}

impl MinMaxCache {
    fn inv_range(&self) -> Vec<f64> {
        self.min
            .iter()
            .zip(&self.max)
            .map(|(lo, hi)| 1.0 / (hi - lo + self.eps))
            .collect()
    }
}

impl MinMaxPost {
    pub fn forward(&self, a: &Matrix) -> Result<(Matrix, MinMaxCache)> {
        let (n, w) = a.shape();
        require_batch("min-max normalization", n)?;
        let mut min = a.row(0).to_vec();
        let mut max = min.clone();
        for row in a.data().chunks_exact(w).skip(1) {
            for j in 0..w {
                let v = row[j];
                if v < min[j] {
                    min[j] = v;
                }
                if v > max[j] {
                    max[j] = v;
                }
            }
        }
        let cache = MinMaxCache {
            min,
            max,
            eps: self.eps,
        };
        let out = apply_minmax(a, &cache)?;
        Ok((out, cache))
    }
}

/// Rescales with given extremes; with a cache from the same batch this is the
/// forward pass, with a foreign cache it treats the extremes as constants.
pub fn apply_minmax(a: &Matrix, cache: &MinMaxCache) -> Result<Matrix> {
    let w = a.cols();
    let inv = cache.inv_range();
    let mut out = a.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        for j in 0..w {
            row[j] = (row[j] - cache.min[j]) * inv[j];
        }
    }
    out.ensure_finite("min-max normalization")?;
    Ok(out)
}

/// Stop-gradient backward: the batch min and max are treated as constants,
/// so `dA = dOut / (max − min + eps)`.
pub fn minmax_backward(d_out: &Matrix, cache: &MinMaxCache) -> Matrix {
    let w = d_out.cols();
    let inv = cache.inv_range();
    let mut da = d_out.clone();
    for row in da.data_mut().chunks_exact_mut(w) {
        for j in 0..w {
            row[j] *= inv[j];
        }
    }
    da
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormTiming {
    pub width: usize,
    pub batch: usize,
    pub bn_ns_per_elem: f64,
    pub minmax_ns_per_elem: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall-clock cost per element of each normalizer's training-mode
/// forward pass over `iters` repetitions.
pub fn time_normalizers(width: usize, batch: usize, iters: usize) -> Result<NormTiming> {
    if width == 0 || batch < 2 || iters == 0 {
        return Err(Error::config(format!(
            "timing needs width >= 1, batch >= 2, iters >= 1 (got {width}, {batch}, {iters})"
        )));
    }
    let mut rng = Rng::new(0x5EED);
    let input = Matrix::new(batch, width, rng.normal(batch * width, 0.0, 1.0))?;
    let mut bn = BatchNormPre::new(width);
    let mm = MinMaxPost::default();
    let elems = (batch * width) as f64;

    // one untimed pass each to warm caches and the allocator
    black_box(bn.forward(&input, Mode::Train)?);
    black_box(mm.forward(&input)?);

    let mut bn_times = Vec::with_capacity(iters);
    let mut mm_times = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        black_box(bn.forward(black_box(&input), Mode::Train)?);
        bn_times.push(t.elapsed().as_nanos() as f64 / elems);

        let t = Instant::now();
        black_box(mm.forward(black_box(&input))?);
        mm_times.push(t.elapsed().as_nanos() as f64 / elems);
    }
    Ok(NormTiming {
        width,
        batch,
        // a zero reading means the clock is coarser than the work
        bn_ns_per_elem: median(bn_times).max(f64::MIN_POSITIVE),
        minmax_ns_per_elem: median(mm_times).max(f64::MIN_POSITIVE),
    })
}

/// CSV with header `normalizer,width,batch,ns_per_element`.
pub fn write_timing_csv<W: Write>(timings: &[NormTiming], mut w: W) -> std::io::Result<()> {
    writeln!(w, "normalizer,width,batch,ns_per_element")?;
    for t in timings {
        writeln!(w, "batchnorm,{},{},{}", t.width, t.batch, sig10(t.bn_ns_per_elem))?;
        writeln!(w, "minmax,{},{},{}", t.width, t.batch, sig10(t.minmax_ns_per_elem))?;
    }
    Ok(())
}
