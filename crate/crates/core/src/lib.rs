//! Entropy-coded BF16 weight compression.
//!
//! Every BF16 value splits into a sign bit, an 8-bit exponent and a 7-bit
//! mantissa. Exponents of trained (and randomly initialised) weights carry
//! under three bits of information, so they are range-ANS coded while the
//! sign and mantissa are stored raw. That path is lossless and lets a
//! network train on compressed weights with bit-identical dynamics. A lossy
//! path additionally rounds mantissas to 0, 1 or 3 bits after block-wise
//! normalisation, for inference storage.
//!
//! Module map:
//!
//! - [`bitfloat`]: BF16 split/merge, mantissa rounding, sub-byte packing.
//! - [`ans`]: byte-alphabet rANS coder with 12-bit frequency tables.
//! - [`entropy`]: per-component histograms and Shannon entropy.
//! - [`tensorstore`]: lossless/lossy blobs and the NZT/BFT file formats.
//! - [`nn`]: a small MLP trained layer-by-layer on compressed weights.
//! - [`perturb`]: weight-noise tolerance grid.
//! - [`cli`]: the `neuzip` command-line front end.

pub mod ans;
pub mod bitfloat;
pub mod cli;
pub mod entropy;
mod error;
pub mod fmt;
pub mod nn;
mod par;
pub mod perturb;
pub mod rng;
pub mod tensorstore;

pub use bitfloat::{Bf16, ComponentTriple, SignedMantissa};
pub use error::{Error, Result};
