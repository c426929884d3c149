//! The learnable part of the pipeline: MLP encoder with feature dispatch,
//! parallel query decoder, cross-attention refinement and prediction heads,
//! differentiated by a small reverse-mode tape and trained with Adam.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod layers;
mod params;
mod tape;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use layers::{cross_entropy_loss, decode_segments, dispatch, encode, predict, refine, Graph, VideoOutputs};
pub use params::{DecoderLayerIds, GradientStore, ModelConfig, ModelParams, ParamLayout};
pub use tape::{sigmoid, Fault, Tape, Var, LAYER_NORM_EPS};
