//! Deterministic text-to-garment latent diffusion over a synthetic parametric
//! garment world.
//!
//! The pipeline couples a closed-vocabulary phrase parser, a template-based
//! garment renderer/segmenter, a differentiable image↔phrase similarity
//! oracle, Hungarian part↔phrase alignment, cross-attention map algebra, an
//! analytic prototype-mixture denoiser with a DDIM sampler, and
//! region-consistent prompt editing. Everything is seeded and bit-reproducible.
//!
//! The crate is `no_std` (alloc required); all IO, PNG and JSON handling lives
//! in the companion CLI crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod alignment;
pub mod attention;
pub mod diffusion;
pub mod edit;
pub mod error;
pub mod eval;
pub mod grid;
pub mod math;
pub mod prompt;
pub mod sim;
pub mod world;

pub use error::{Error, Result};
