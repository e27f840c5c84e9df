//! BiLSTM-CRF sequence labeling with adversarial training.
//!
//! The crate is organized around a small reverse-mode autodiff tape
//! ([`autodiff`]) on which the tagger ([`network`], [`crf`], [`model`]) is
//! built. [`adversarial`] generates Fast Gradient Method perturbations of
//! the input embeddings and mixes clean and adversarial losses; [`trainer`]
//! runs mini-batch SGD with momentum, decay, clipping and early stopping.
//! [`eval`] holds the measurement procedures (token/sentence accuracy,
//! chunk F1, frequency buckets, neighbor accuracy, cluster tightness) and
//! [`synthetic`] generates seeded HMM corpora for desk-scale experiments.

pub mod adversarial;
pub mod autodiff;
pub mod config;
pub mod crf;
pub mod data;
pub mod embeddings;
pub mod eval;
pub mod model;
pub mod network;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use tensor::Tensor;
