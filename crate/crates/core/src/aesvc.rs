//! Autoencoder with strong variance constraints.
//!
//! The encoder maps an embedding `I ∈ ℝᵈ` to a latent `z`, the decoder maps
//! `z` back to a reconstruction `I′`. Alongside the reconstruction error the
//! latent batch `Z` (n × k) is penalized toward
//!
//! * identity covariance: `‖(1/n)(Z − μ)ᵀ(Z − μ) − 𝕀‖²_F`
//! * unit variance per dimension: `(1/k) Σᵢ (Var zⁱ − 1)²`
//! * zero mean: `(1/k) Σᵢ (μⁱ)²`
//!
//! with all statistics normalized by `1/n`. The four terms are combined with
//! the weights in [`LossWeights`].

use crate::data::ReferenceSet;
use crate::error::{Error, Result};
use crate::linalg::{matmul, Matrix};
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, GradientSet, MlpModel};
use crate::training::{epoch_batches, TrainConfig, TrainStreams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub reconstruction: f64,
    pub covariance: f64,
    pub variance: f64,
    pub mean: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            reconstruction: 25.0,
            covariance: 1.0,
            variance: 15.0,
            mean: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("reconstruction", self.reconstruction),
            ("covariance", self.covariance),
            ("variance", self.variance),
            ("mean", self.mean),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A scalar loss and its gradient with respect to the matrix it was
/// evaluated on.
#[derive(Debug, Clone)]
pub struct LossTerm {
    pub value: f64,
    pub grad: Matrix,
}

/// `(1/n) Σᵢ ‖Iᵢ − I′ᵢ‖²`, averaged over samples only.
pub fn loss_reconstruction(inputs: &Matrix, reconstructions: &Matrix) -> Result<LossTerm> {
    if inputs.shape() != reconstructions.shape() {
        return Err(Error::Shape(format!(
            "inputs {:?} vs reconstructions {:?}",
            inputs.shape(),
            reconstructions.shape()
        )));
    }
    let n = inputs.rows().max(1) as f64;
    let diff = reconstructions.sub(inputs)?;
    let value = diff.as_slice().iter().map(|v| v * v).sum::<f64>() / n;
    Ok(LossTerm {
        value,
        grad: diff.scale(2.0 / n),
    })
}

fn require_rows(latents: &Matrix, min: usize, what: &str) -> Result<()> {
    if latents.rows() < min {
        return Err(Error::Precondition(format!(
            "{what} needs at least {min} rows, got {}",
            latents.rows()
        )));
    }
    Ok(())
}

/// `‖(1/n)(Z − μ)ᵀ(Z − μ) − 𝕀‖²_F`.
pub fn loss_covariance(latents: &Matrix) -> Result<LossTerm> {
    require_rows(latents, 2, "covariance loss")?;
    let n = latents.rows() as f64;
    let (mean, cov) = latents.covariance();
    let mut resid = cov;
    for i in 0..resid.rows() {
        resid.set(i, i, resid.get(i, i) - 1.0);
    }
    let value = resid.as_slice().iter().map(|v| v * v).sum();
    // ∂/∂Z = (4/n)(Z − μ)·D with D the symmetric residual; the mean's own
    // contribution vanishes because centered columns sum to zero.
    let grad = matmul(&latents.center(&mean), &resid)?.scale(4.0 / n);
    Ok(LossTerm { value, grad })
}

/// `(1/k) Σᵢ (Var(zⁱ) − 1)²` with `1/n` variances.
pub fn loss_variance(latents: &Matrix) -> Result<LossTerm> {
    require_rows(latents, 2, "variance loss")?;
    let (n, k) = latents.shape();
    let mean = latents.column_means();
    let centered = latents.center(&mean);
    let mut var = vec![0.0; k];
    for row in centered.row_iter() {
        for (v, x) in var.iter_mut().zip(row) {
            *v += x * x;
        }
    }
    var.iter_mut().for_each(|v| *v /= n as f64);
    let value = var.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / k as f64;
    let mut grad = centered;
    let coef: Vec<f64> = var
        .iter()
        .map(|v| 4.0 * (v - 1.0) / (k as f64 * n as f64))
        .collect();
    for r in 0..n {
        for (g, c) in grad.row_mut(r).iter_mut().zip(&coef) {
            *g *= c;
        }
    }
    Ok(LossTerm { value, grad })
}

/// `(1/k) Σᵢ (μⁱ)²`.
pub fn loss_mean(latents: &Matrix) -> Result<LossTerm> {
    require_rows(latents, 1, "mean loss")?;
    let (n, k) = latents.shape();
    let mean = latents.column_means();
    let value = mean.iter().map(|m| m * m).sum::<f64>() / k as f64;
    let per_col: Vec<f64> = mean.iter().map(|m| 2.0 * m / (k as f64 * n as f64)).collect();
    let mut grad = Matrix::zeros(n, k);
    for r in 0..n {
        grad.row_mut(r).copy_from_slice(&per_col);
    }
    Ok(LossTerm { value, grad })
}

/// Raw (unweighted) values of the four terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub covariance: f64,
    pub variance: f64,
    pub mean: f64,
}

impl LossBreakdown {
    pub fn weighted(&self, w: &LossWeights) -> LossBreakdown {
        LossBreakdown {
            reconstruction: w.reconstruction * self.reconstruction,
            covariance: w.covariance * self.covariance,
            variance: w.variance * self.variance,
            mean: w.mean * self.mean,
        }
    }

    pub fn sum(&self) -> f64 {
        self.reconstruction + self.covariance + self.variance + self.mean
    }

    pub fn total(&self, w: &LossWeights) -> f64 {
        self.weighted(w).sum()
    }
}

/// Mean, `1/n` covariance and per-dimension variance of a latent batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatchStats {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    pub per_dim_variance: Vec<f64>,
}

impl LatentBatchStats {
    pub fn from_latents(latents: &Matrix) -> Self {
        let (mean, covariance) = latents.covariance();
        let per_dim_variance = (0..covariance.rows()).map(|i| covariance.get(i, i)).collect();
        Self {
            mean,
            covariance,
            per_dim_variance,
        }
    }

    pub fn max_abs_mean(&self) -> f64 {
        self.mean.iter().fold(0.0, |a, m| a.max(m.abs()))
    }

    pub fn variance_range(&self) -> (f64, f64) {
        self.per_dim_variance
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Frobenius norm of the covariance with its diagonal removed.
    pub fn off_diagonal_norm(&self) -> f64 {
        let k = self.covariance.rows();
        let mut acc = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    acc += self.covariance.get(i, j).powi(2);
                }
            }
        }
        acc.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AesvcModel {
    pub encoder: MlpModel,
    pub decoder: MlpModel,
}

impl AesvcModel {
    pub fn new(encoder: MlpModel, decoder: MlpModel) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() || decoder.output_dim() != encoder.input_dim()
        {
            return Err(Error::Shape(format!(
                "encoder {}→{} does not pair with decoder {}→{}",
                encoder.input_dim(),
                encoder.output_dim(),
                decoder.input_dim(),
                decoder.output_dim()
            )));
        }
        Ok(Self { encoder, decoder })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    /// Latent representation of every row of `data`.
    pub fn encode(&self, data: &Matrix) -> Result<Matrix> {
        self.encoder.predict(data)
    }

    pub fn decode(&self, latents: &Matrix) -> Result<Matrix> {
        self.decoder.predict(latents)
    }

    /// Total objective on one batch, with gradients for both halves.
    pub fn objective(
        &self,
        batch: &Matrix,
        weights: &LossWeights,
    ) -> Result<(LossBreakdown, GradientSet, GradientSet)> {
        let (latents, enc_tape) = self.encoder.forward(batch)?;
        let (recon, dec_tape) = self.decoder.forward(&latents)?;

        let rec = loss_reconstruction(batch, &recon)?;
        let cov = loss_covariance(&latents)?;
        let var = loss_variance(&latents)?;
        let mean = loss_mean(&latents)?;

        let (dec_grads, mut latent_grad) = self
            .decoder
            .backward(&dec_tape, &rec.grad.scale(weights.reconstruction))?;
        latent_grad.add_assign(&cov.grad.scale(weights.covariance))?;
        latent_grad.add_assign(&var.grad.scale(weights.variance))?;
        latent_grad.add_assign(&mean.grad.scale(weights.mean))?;
        let (enc_grads, _) = self.encoder.backward(&enc_tape, &latent_grad)?;

        let losses = LossBreakdown {
            reconstruction: rec.value,
            covariance: cov.value,
            variance: var.value,
            mean: mean.value,
        };
        Ok((losses, enc_grads, dec_grads))
    }
}

/// Default step size for AE-SVC. At the generic Adam default of 1e-3 the
/// 200-epoch budget ends with latent variances still far below one.
pub const AESVC_LEARNING_RATE: f64 = 2e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct AesvcConfig {
    /// Defaults to the input dimension.
    pub latent_dim: Option<usize>,
    pub weights: LossWeights,
    /// Adds a tanh hidden layer of the input width on both sides.
    pub hidden_layer: bool,
    pub train: TrainConfig,
}

impl Default for AesvcConfig {
    fn default() -> Self {
        Self {
            latent_dim: None,
            weights: LossWeights::default(),
            hidden_layer: false,
            train: TrainConfig {
                adam: AdamConfig {
                    learning_rate: AESVC_LEARNING_RATE,
                    ..AdamConfig::default()
                },
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct AesvcEpoch {
    pub epoch: usize,
    /// Raw loss terms averaged over the epoch's mini-batches.
    pub raw: LossBreakdown,
    pub weighted: LossBreakdown,
    pub total: f64,
    /// Statistics of the whole training set's latents after the epoch.
    pub stats: LatentBatchStats,
}

#[derive(Debug, Clone)]
pub struct AesvcTraining {
    pub model: AesvcModel,
    pub history: Vec<AesvcEpoch>,
}

pub fn build_model(input_dim: usize, config: &AesvcConfig, rng: &mut crate::Rng) -> Result<AesvcModel> {
    let latent = config.latent_dim.unwrap_or(input_dim);
    if latent == 0 || input_dim == 0 {
        return Err(Error::Precondition("dimensions must be positive".into()));
    }
    let (encoder, decoder) = if config.hidden_layer {
        let acts = [Activation::Tanh, Activation::Identity];
        (
            MlpModel::init(&[input_dim, input_dim, latent], &acts, rng)?,
            MlpModel::init(&[latent, input_dim, input_dim], &acts, rng)?,
        )
    } else {
        (
            MlpModel::init(&[input_dim, latent], &[Activation::Identity], rng)?,
            MlpModel::init(&[latent, input_dim], &[Activation::Identity], rng)?,
        )
    };
    AesvcModel::new(encoder, decoder)
}

/// Fits the autoencoder on reference embeddings by mini-batch Adam.
pub fn train_aesvc(data: &ReferenceSet, config: &AesvcConfig) -> Result<AesvcTraining> {
    let x = data.embeddings();
    if x.rows() < 2 {
        return Err(Error::Precondition(format!(
            "training needs at least 2 rows, got {}",
            x.rows()
        )));
    }
    config.weights.validate()?;
    config.train.validate()?;
    let mut streams = TrainStreams::new(config.train.seed);
    let mut model = build_model(x.cols(), config, &mut streams.init)?;
    let mut enc_state = AdamState::new(&model.encoder, config.train.adam);
    let mut dec_state = AdamState::new(&model.decoder, config.train.adam);

    let mut history = Vec::with_capacity(config.train.epochs);
    for epoch in 0..config.train.epochs {
        let batches = epoch_batches(x.rows(), config.train.batch_size, 2, &mut streams.shuffle);
        let mut acc = LossBreakdown::default();
        for (b, idx) in batches.iter().enumerate() {
            let batch = x.select_rows(idx);
            let (losses, enc_g, dec_g) = model.objective(&batch, &config.weights)?;
            if !losses.total(&config.weights).is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite AE-SVC loss at epoch {epoch}, batch {b}"
                )));
            }
            adam_step(&mut model.encoder, &enc_g, &mut enc_state)?;
            adam_step(&mut model.decoder, &dec_g, &mut dec_state)?;
            acc.reconstruction += losses.reconstruction;
            acc.covariance += losses.covariance;
            acc.variance += losses.variance;
            acc.mean += losses.mean;
        }
        let nb = batches.len() as f64;
        let raw = LossBreakdown {
            reconstruction: acc.reconstruction / nb,
            covariance: acc.covariance / nb,
            variance: acc.variance / nb,
            mean: acc.mean / nb,
        };
        let stats = LatentBatchStats::from_latents(&model.encode(x)?);
        history.push(AesvcEpoch {
            epoch,
            raw,
            weighted: raw.weighted(&config.weights),
            total: raw.total(&config.weights),
            stats,
        });
    }
    Ok(AesvcTraining { model, history })
}
