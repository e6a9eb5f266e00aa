//! Model variants: the ADAT encoder with a classical decoder, a canonical
//! encoder-decoder, and encoder-only and decoder-only baselines.

mod checkpoint;
mod config;
mod layers;
mod model;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::{Mode, ModelConfig, Variant};
pub use layers::{
    add_positional, positional_encoding, temporal_conv, AdatBlock, AdatTrace, Ctx, DecoderLayer, Embedding, EncoderLayer,
    FeedForward, LayerNorm, Linear, LN_EPS,
};
pub use model::{collapse_decode, stretch_labels, Decoder, EncoderOutput, Example, Head, Model, Outputs, Translation};
