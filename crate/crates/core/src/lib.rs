//! Adaptive transformer (ADAT) for sign language translation, built on a
//! small reverse-mode autodiff tensor library.

pub mod attention;
pub mod data;
pub mod error;
pub mod features;
pub mod flops;
pub mod gradcheck;
pub mod graph;
pub mod models;
pub mod params;
pub mod tensor;
pub mod train_eval;

pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradReport};
pub use graph::{Graph, Var};
pub use tensor::{Real, Tensor};
