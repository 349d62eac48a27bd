//! Compression of complex-valued neural-network weights.
//!
//! The pipeline has three stages, each usable on its own:
//!
//! 1. [`pruning`]: drop weights whose complex modulus (or real/imaginary
//!    magnitude) is below a threshold and store survivors as CSR.
//! 2. [`quantization`]: cluster the surviving weights in the complex plane
//!    with Lloyd's algorithm and replace each by an index into a codebook.
//! 3. [`entropy`]: canonical Huffman coding of the index table, either as a
//!    single index stream or as separate real and imaginary streams.
//!
//! [`container`] chains the stages and defines the CCNZ file format,
//! [`tensor`] defines the CWT raw input format, and [`metrics`] produces the
//! per-stage storage accounting.

pub mod bitpack;
pub mod container;
pub mod entropy;
mod error;
pub mod metrics;
pub mod oracle;
pub mod pruning;
pub mod quantization;
pub mod tensor;
mod wire;

pub use error::{Error, Result};
pub use tensor::{ComplexScalar, ComplexTensor, RawModel};
