//! Small feed-forward networks with hand-written reverse mode and Adam.

mod adam;
mod checkpoint;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use mlp::{Activation, GradientSet, Layer, LayerGrad, MlpModel, Tape};
