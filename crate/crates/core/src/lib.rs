//! Core library: tensors with reverse-mode autodiff, a byte-level BPE
//! tokenizer, a bidirectional transformer encoder, masked-language-model
//! objectives, corpus mixing and packing, the training loop with warmup —
//! stable — decay scheduling, fine-tuning heads, and evaluation statistics.

pub mod datamix;
pub mod encoder;
pub mod error;
pub mod evalstats;
pub mod finetune;
pub mod mlm;
pub mod rng;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{fl, grad_check, Elem, Graph, GradCheckReport, Tensor};
