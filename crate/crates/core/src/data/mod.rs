//! Vocabularies, the synthetic sign-language generator, dataset splitting
//! and the ADSL container format.

mod dataset;
mod format;
mod split;
mod synth;
pub mod vocab;

pub use dataset::{Dataset, SampleRecord};
pub use format::{dataset_bytes, load_dataset, parse_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use split::{split_dataset, Split};
pub use synth::{synth_generate, Grammar, SynthSpec, MAX_GLOSSES};
pub use vocab::{build_vocab, content_ids, encode_sequence, Vocab, EOS_ID, PAD_ID, SOS_ID, UNK_ID};
