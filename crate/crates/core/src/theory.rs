//! Moments of the cosine similarity between independent zero-mean Gaussian
//! vectors with diagonal covariance, and the tools used to check them.
//!
//! For `X, Y ~ N(0, diag(σ²))` the relaxation `r(Z) = Z / √(Σσᵢ²)` has unit
//! expected squared norm, and to first order
//! `cos(X, Y) ≈ Σᵢ r(X)ᵢ r(Y)ᵢ`. That gives `E[cos] = 0` and
//! `Var[cos] = Σσᵢ⁴ / (Σσⱼ²)²`, which for a fixed trace is smallest when all
//! `σᵢ²` are equal (value `1/d`).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{dot, l2_normalize_rows_strict, Matrix};
use crate::rng::Rng;

/// Per-dimension variances of a zero-mean diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum(Vec<f64>);

impl Spectrum {
    pub fn new(variances: Vec<f64>) -> Result<Self> {
        if let Some(v) = variances.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Precondition(format!(
                "spectrum entries must be positive and finite, got {v}"
            )));
        }
        Ok(Self(variances))
    }

    pub fn equal(d: usize, variance: f64) -> Result<Self> {
        Self::new(vec![variance; d])
    }

    /// `σᵢ² = 1/i` for `i = 1..=d`.
    pub fn harmonic(d: usize) -> Self {
        Self((1..=d).map(|i| 1.0 / i as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn trace(&self) -> f64 {
        self.0.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Divides every entry by `√(Σσᵢ²)`.
pub fn relax(embeddings: &Matrix, spectrum: &Spectrum) -> Result<Matrix> {
    if spectrum.dim() != embeddings.cols() {
        return Err(Error::Shape(format!(
            "spectrum has {} entries for {} columns",
            spectrum.dim(),
            embeddings.cols()
        )));
    }
    Ok(embeddings.scale(1.0 / spectrum.trace().sqrt()))
}

fn require_dim(spectrum: &Spectrum) -> Result<()> {
    if spectrum.dim() < 2 {
        return Err(Error::Precondition(format!(
            "cosine moments need d ≥ 2, got {}",
            spectrum.dim()
        )));
    }
    Ok(())
}

/// `E[cos] = 0`, `Var[cos] = Σσᵢ⁴ / (Σσⱼ²)²`.
pub fn cos_moments_closed_form(spectrum: &Spectrum) -> Result<CosineMoments> {
    require_dim(spectrum)?;
    let s2 = spectrum.trace();
    let s4: f64 = spectrum.values().iter().map(|v| v * v).sum();
    Ok(CosineMoments {
        mean: 0.0,
        variance: s4 / (s2 * s2),
    })
}

/// `∂ Var[cos] / ∂σᵢ² = 2 (Σσⱼ²)⁻³ [(Σσⱼ²) σᵢ² − Σσⱼ⁴]`.
pub fn cos_variance_gradient(spectrum: &Spectrum) -> Result<Vec<f64>> {
    require_dim(spectrum)?;
    let s2 = spectrum.trace();
    let s4: f64 = spectrum.values().iter().map(|v| v * v).sum();
    let scale = 2.0 / (s2 * s2 * s2);
    Ok(spectrum
        .values()
        .iter()
        .map(|&v| scale * (s2 * v - s4))
        .collect())
}

/// `erf((E[cos] − τ) / √Var[cos])`.
///
/// This is the discriminative-power score exactly as usually quoted for this
/// analysis. Note it is not a probability: a Gaussian tail would read
/// `½(1 + erf((μ − τ)/(σ√2)))`, and this form goes negative for `τ > μ`.
pub fn discriminative_power(moments: &CosineMoments, tau: f64) -> Result<f64> {
    if !(moments.variance > 0.0) {
        return Err(Error::Precondition(format!(
            "variance must be positive, got {}",
            moments.variance
        )));
    }
    Ok(erf((moments.mean - tau) / moments.variance.sqrt()))
}

/// Error function, accurate to about 1e-15 absolute.
///
/// For `|x| < 3` the everywhere-positive series
/// `erf(x) = (2/√π) e^{−x²} Σₙ 2ⁿ x^{2n+1} / (1·3·…·(2n+1))` is summed until
/// terms stop contributing. For `|x| ≥ 3` the complement comes from the
/// continued fraction
/// `erfc(x) = e^{−x²}/√π · 1/(x + ½/(x + 1/(x + 3/2/(x + …))))`,
/// evaluated bottom-up over 60 levels.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return -erf(-x);
    }
    const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;
    if x < 3.0 {
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= 2.0 * x2 / (2.0 * n + 1.0);
            sum += term;
            if term <= sum * 1e-17 {
                break;
            }
        }
        FRAC_2_SQRT_PI * (-x2).exp() * sum
    } else {
        let mut frac = x;
        for k in (1..=60).rev() {
            frac = x + (k as f64 / 2.0) / frac;
        }
        let erfc = (-x * x).exp() / (std::f64::consts::PI.sqrt() * frac);
        1.0 - erfc
    }
}

/// Number of independent streams Monte-Carlo sampling is split into. Shard
/// `s` draws from `rng.split(s)` and handles `pairs / SHARDS` pairs (the first
/// `pairs % SHARDS` shards take one extra), so results do not depend on how
/// many threads run them.
pub const MONTE_CARLO_SHARDS: u64 = 16;

fn gaussian_vector(std: &[f64], rng: &mut Rng, out: &mut [f64]) {
    for (o, s) in out.iter_mut().zip(std) {
        *o = s * rng.normal();
    }
}

/// Sample mean and (1/n) variance of `cos(X, Y)` over independent pairs
/// `X, Y ~ N(0, diag(spectrum))`.
pub fn monte_carlo_cos_moments(spectrum: &Spectrum, pairs: usize, rng: &Rng) -> Result<CosineMoments> {
    use rayon::prelude::*;

    if pairs < 1000 {
        return Err(Error::Precondition(format!(
            "Monte-Carlo estimate needs at least 1000 pairs, got {pairs}"
        )));
    }
    require_dim(spectrum)?;
    let std: Vec<f64> = spectrum.values().iter().map(|v| v.sqrt()).collect();
    let shards = MONTE_CARLO_SHARDS as usize;
    let samples: Vec<Vec<f64>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let count = pairs / shards + usize::from(s < pairs % shards);
            let mut local = rng.split(s as u64);
            let mut x = vec![0.0; std.len()];
            let mut y = vec![0.0; std.len()];
            (0..count)
                .map(|_| {
                    gaussian_vector(&std, &mut local, &mut x);
                    gaussian_vector(&std, &mut local, &mut y);
                    dot(&x, &y) / (dot(&x, &x) * dot(&y, &y)).sqrt()
                })
                .collect()
        })
        .collect();
    let all: Vec<f64> = samples.concat();
    Ok(sample_moments(&all))
}

fn sample_moments(values: &[f64]) -> CosineMoments {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    CosineMoments { mean, variance }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityHistogram {
    /// `bins + 1` equally spaced edges from −1 to 1.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub pairs: u64,
    /// Moments of the exact sampled similarities, not of the binned values.
    pub mean: f64,
    pub variance: f64,
}

impl SimilarityHistogram {
    pub fn bin_of(&self, value: f64) -> usize {
        bin_index(value, self.counts.len())
    }

    /// `bin_edge_lo,bin_edge_hi,count` rows under a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_edge_lo,bin_edge_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{},{},{}", self.edges[i], self.edges[i + 1], c).expect("string write");
        }
        out
    }
}

/// Bins are half-open `[lo, hi)` except the last, which also holds 1.
fn bin_index(value: f64, bins: usize) -> usize {
    let t = (value.clamp(-1.0, 1.0) + 1.0) / 2.0;
    ((t * bins as f64).floor() as usize).min(bins - 1)
}

/// Histogram of pairwise cosine similarities between distinct rows. Uses
/// every pair when there are at most `max_pairs`, otherwise `max_pairs`
/// uniformly drawn pairs of distinct rows.
pub fn empirical_similarity_histogram(
    embeddings: &Matrix,
    bins: usize,
    max_pairs: usize,
    rng: &mut Rng,
) -> Result<SimilarityHistogram> {
    let n = embeddings.rows();
    if n < 2 {
        return Err(Error::Precondition(format!("need at least 2 rows, got {n}")));
    }
    if bins < 2 {
        return Err(Error::Precondition(format!("need at least 2 bins, got {bins}")));
    }
    if max_pairs == 0 {
        return Err(Error::Precondition("max_pairs must be positive".into()));
    }
    let unit = l2_normalize_rows_strict(embeddings)?;
    let total = n * (n - 1) / 2;
    let mut values = Vec::with_capacity(total.min(max_pairs));
    if total <= max_pairs {
        for i in 0..n {
            for j in (i + 1)..n {
                values.push(dot(unit.row(i), unit.row(j)));
            }
        }
    } else {
        for _ in 0..max_pairs {
            let i = rng.below(n as u64) as usize;
            let mut j = rng.below(n as u64 - 1) as usize;
            if j >= i {
                j += 1;
            }
            values.push(dot(unit.row(i), unit.row(j)));
        }
    }
    let mut counts = vec![0u64; bins];
    for &v in &values {
        counts[bin_index(v, bins)] += 1;
    }
    let edges = (0..=bins)
        .map(|i| -1.0 + 2.0 * i as f64 / bins as f64)
        .collect();
    let m = sample_moments(&values);
    Ok(SimilarityHistogram {
        edges,
        counts,
        pairs: values.len() as u64,
        mean: m.mean,
        variance: m.variance,
    })
}
