//! Context-aware text-to-speech over discrete semantic tokens.
//!
//! The pipeline has two halves. `txt2vec` predicts semantic-token sequences
//! from text with a discrete-diffusion decoder that conditions on clean
//! context tokens flanking the region to generate, so continuation and
//! editing splice seamlessly. `vec2wav` turns token sequences into waveforms
//! while taking speaker identity from a mel-spectrogram prompt instead of a
//! speaker embedding.
//!
//! Everything is desk-scale: models are small enough to train on a CPU, the
//! diffusion math is exact 64-bit, and every stochastic path is seeded.

pub mod audio;
pub mod cli;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod features;
pub mod nn;
pub mod pipeline;
pub mod rng;
#[cfg(test)]
pub(crate) mod testutil;
pub mod txt2vec;
pub mod vec2wav;

pub use error::{Error, Result};
