//! Attribute-modulated recurrent language models.
//!
//! A GRU language model whose transitions read, next to the current word
//! embedding, an attention-fused embedding of document attributes (title,
//! author, category). The crate also carries the baselines used to judge it
//! (plain GRU variants, an interpolated Kneser-Ney n-gram model), an LDA
//! labeller for corpora without categories, a trainer, perplexity tooling and
//! attribute-controlled generation.
//!
//! Module map:
//!
//! ```text
//! corpus     documents, vocabularies, splits
//! tensor     dense kernels, parameter store, gradient checking, checkpoints
//! gru        GRU cell forward/backward
//! attention  title-word and attribute-level attention
//! model      the variant family and full-document BPTT
//! trainer    Adam, clipping, early stopping
//! eval       perplexity and per-word delta reports
//! ngram      interpolated Kneser-Ney baseline
//! lda        collapsed Gibbs LDA for pseudo-categories
//! genapp     generation, style variation, attention export
//! ```

pub mod attention;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod genapp;
pub mod gru;
pub mod lda;
pub mod model;
pub mod ngram;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
