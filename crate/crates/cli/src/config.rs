//! Run configuration: a TOML document with defaults for every key.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use simspace::aesvc::{AesvcConfig, LossWeights};
use simspace::data::SynthSpec;
use simspace::nn::AdamConfig;
use simspace::ssd::{NestedSizes, SsdConfig};
use simspace::training::TrainConfig;

pub const METHODS: [&str; 5] = ["raw", "pca", "aesvc", "ss2d", "ssd"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Parent of the run directories.
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub aesvc: AesvcSection,
    pub ss2d: SsdSection,
    pub eval: EvalSection,
    pub theory: TheorySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            data: DataSection::default(),
            aesvc: AesvcSection::default(),
            ss2d: SsdSection::default(),
            eval: EvalSection::default(),
            theory: TheorySection::default(),
        }
    }
}

/// Synthetic dataset. Nuisance column `i` (1-based) has variance `1/i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub num_classes: usize,
    pub points_per_class: usize,
    pub class_separation: f64,
    pub nuisance_dims: usize,
    pub discriminative_dims: usize,
    pub discriminative_variance: f64,
    pub query_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let a = SynthSpec::acceptance(0);
        Self {
            num_classes: a.num_classes,
            points_per_class: a.points_per_class,
            class_separation: a.class_separation,
            nuisance_dims: a.nuisance_spectrum.len(),
            discriminative_dims: a.discriminative_spectrum.len(),
            discriminative_variance: a.discriminative_spectrum[0],
            query_fraction: a.query_fraction,
        }
    }
}

/// Optimizer and schedule keys; each trainer gets its own type so a partial
/// table falls back to that trainer's defaults.
macro_rules! optim_section {
    ($name:ident, $defaults:expr) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields, default)]
        pub struct $name {
            pub learning_rate: f64,
            pub beta1: f64,
            pub beta2: f64,
            pub epsilon: f64,
            pub batch_size: usize,
            pub epochs: usize,
        }

        impl Default for $name {
            fn default() -> Self {
                let t: TrainConfig = $defaults;
                Self {
                    learning_rate: t.adam.learning_rate,
                    beta1: t.adam.beta1,
                    beta2: t.adam.beta2,
                    epsilon: t.adam.epsilon,
                    batch_size: t.batch_size,
                    epochs: t.epochs,
                }
            }
        }

        impl $name {
            pub fn to_train(&self, seed: u64) -> TrainConfig {
                TrainConfig {
                    adam: AdamConfig {
                        learning_rate: self.learning_rate,
                        beta1: self.beta1,
                        beta2: self.beta2,
                        epsilon: self.epsilon,
                    },
                    batch_size: self.batch_size,
                    epochs: self.epochs,
                    seed,
                }
            }
        }
    };
}

optim_section!(AesvcOptim, AesvcConfig::default().train);
optim_section!(SsdOptim, SsdConfig::default().train);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AesvcSection {
    /// Latent width; 0 keeps the input width.
    pub latent_dim: usize,
    pub hidden_layer: bool,
    pub lambda_reconstruction: f64,
    pub lambda_covariance: f64,
    pub lambda_variance: f64,
    pub lambda_mean: f64,
    pub optim: AesvcOptim,
}

impl Default for AesvcSection {
    fn default() -> Self {
        let c = AesvcConfig::default();
        Self {
            latent_dim: 0,
            hidden_layer: c.hidden_layer,
            lambda_reconstruction: c.weights.reconstruction,
            lambda_covariance: c.weights.covariance,
            lambda_variance: c.weights.variance,
            lambda_mean: c.weights.mean,
            optim: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsdSection {
    /// Nested prefix sizes; empty means halving from the latent width to 8.
    pub sizes: Vec<usize>,
    pub temperature: f64,
    pub identity_init: bool,
    pub optim: SsdOptim,
}

impl Default for SsdSection {
    fn default() -> Self {
        let c = SsdConfig::default();
        Self {
            sizes: Vec::new(),
            temperature: c.temperature,
            identity_init: c.identity_init,
            optim: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub methods: Vec<String>,
    pub dims: Vec<usize>,
    pub ks: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            methods: ["raw", "pca", "aesvc", "ss2d"].map(String::from).to_vec(),
            dims: vec![8, 16, 32, 64],
            ks: vec![1, 5, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheorySection {
    pub dims: Vec<usize>,
    pub pairs: usize,
    pub bins: usize,
    pub histogram_pairs: usize,
    /// Threshold of the erf discriminative-power score.
    pub tau: f64,
    /// Share of the trace held by one dominant eigenvalue in the sweep
    /// probing where the Gaussian approximation breaks down.
    pub dominant_fractions: Vec<f64>,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            dims: vec![32, 64, 128],
            pairs: 100_000,
            bins: 40,
            histogram_pairs: 200_000,
            tau: 0.0,
            dominant_fractions: vec![0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9],
        }
    }
}

impl RunConfig {
    /// Defaults, then `file`, then `--set key=value` overrides, then the
    /// dedicated flags.
    pub fn resolve(
        file: Option<&Path>,
        sets: &[String],
        seed: Option<u64>,
        out_dir: Option<PathBuf>,
    ) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read config {}", path.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("invalid TOML in {}", path.display()))?
            }
            None => toml::Table::new(),
        };
        for assignment in sets {
            apply_set(&mut table, assignment)?;
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .context("invalid configuration")?;
        if let Some(s) = seed {
            config.seed = s;
        }
        if let Some(dir) = out_dir {
            config.out_dir = dir;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth_spec().validate()?;
        self.aesvc_config(self.dim()).weights.validate()?;
        self.aesvc_config(self.dim()).train.validate()?;
        self.ssd_config().train.validate()?;
        if !(self.ss2d.temperature > 0.0) {
            bail!("ss2d.temperature must be positive");
        }
        if !self.ss2d.sizes.is_empty() {
            NestedSizes::new(self.ss2d.sizes.clone())?;
        }
        for m in &self.eval.methods {
            if !METHODS.contains(&m.as_str()) {
                bail!("unknown eval method {m:?}; expected one of {METHODS:?}");
            }
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            bail!("eval.ks must be non-empty and positive");
        }
        if self.eval.dims.is_empty() || self.eval.dims.contains(&0) {
            bail!("eval.dims must be non-empty and positive");
        }
        if self.theory.dims.iter().any(|&d| d < 2) {
            bail!("theory.dims entries must be at least 2");
        }
        if self.theory.pairs < 1000 {
            bail!("theory.pairs must be at least 1000");
        }
        if self.theory.bins < 2 {
            bail!("theory.bins must be at least 2");
        }
        if self.theory.dominant_fractions.iter().any(|f| !(0.0..1.0).contains(f) || *f == 0.0) {
            bail!("theory.dominant_fractions must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.data.nuisance_dims + self.data.discriminative_dims
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            num_classes: self.data.num_classes,
            points_per_class: self.data.points_per_class,
            class_separation: self.data.class_separation,
            nuisance_spectrum: (1..=self.data.nuisance_dims).map(|i| 1.0 / i as f64).collect(),
            discriminative_spectrum: vec![self.data.discriminative_variance; self.data.discriminative_dims],
            query_fraction: self.data.query_fraction,
            seed: self.seed,
        }
    }

    pub fn aesvc_config(&self, input_dim: usize) -> AesvcConfig {
        let a = &self.aesvc;
        let latent = if a.latent_dim == 0 { input_dim } else { a.latent_dim };
        AesvcConfig {
            latent_dim: Some(latent),
            weights: LossWeights {
                reconstruction: a.lambda_reconstruction,
                covariance: a.lambda_covariance,
                variance: a.lambda_variance,
                mean: a.lambda_mean,
            },
            hidden_layer: a.hidden_layer,
            train: a.optim.to_train(self.seed),
        }
    }

    pub fn ssd_config(&self) -> SsdConfig {
        SsdConfig {
            temperature: self.ss2d.temperature,
            identity_init: self.ss2d.identity_init,
            train: self.ss2d.optim.to_train(self.seed),
        }
    }

    pub fn nested_sizes(&self, latent_dim: usize) -> Result<NestedSizes> {
        let sizes = if self.ss2d.sizes.is_empty() {
            NestedSizes::halving(latent_dim)?
        } else {
            NestedSizes::new(self.ss2d.sizes.clone())?
        };
        if sizes.max() != latent_dim {
            bail!(
                "largest ss2d size {} must equal the latent width {latent_dim}",
                sizes.max()
            );
        }
        Ok(sizes)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 over the resolved configuration without `seed` and
    /// `out_dir`, so every seed of one setup shares a hash prefix.
    pub fn hash(&self) -> String {
        let mut table: toml::Table = toml::Value::try_from(self)
            .expect("config serializes")
            .try_into()
            .expect("config is a table");
        table.remove("seed");
        table.remove("out_dir");
        let digest = Sha256::digest(toml::to_string(&table).expect("table serializes").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(format!("run-{}-s{}", &self.hash()[..8], self.seed))
    }
}

/// `a.b.c=value`: the value is read as a TOML literal, or as a bare string
/// when it does not parse as one.
fn apply_set(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("--set expects KEY=VALUE, got {assignment:?}"))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed key {key:?}");
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("{key:?}: {part:?} is not a table"))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
