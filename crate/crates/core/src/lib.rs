//! Embedding-space reshaping for cosine-similarity retrieval.
//!
//! * [`aesvc`]: an autoencoder whose latent space is pushed toward zero mean,
//!   unit per-dimension variance and decorrelated dimensions.
//! * [`ssd`]: similarity-space distillation, both per-size and the single-shot
//!   nested variant whose every prefix preserves the teacher's neighborhoods.
//! * [`theory`]: closed-form and Monte-Carlo moments of the cosine similarity
//!   between Gaussian vectors, and empirical similarity histograms.
//! * [`retrieval`]: exact cosine search, mAP@k / Recall@k, PCA baseline.
//! * [`data`]: synthetic labeled embeddings and the on-disk formats.

pub mod aesvc;
pub mod data;
pub mod error;
mod format;
pub mod linalg;
pub mod nn;
pub mod retrieval;
pub mod rng;
pub mod ssd;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use rng::Rng;
