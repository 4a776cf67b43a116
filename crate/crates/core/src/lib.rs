//! Grayscale DCT image codec that removes the signs of quantized AC
//! coefficients from the bitstream.
//!
//! Both encoder and decoder restore the signs from the coefficient
//! magnitudes alone: a small recursive convolutional network proposes an
//! image, a closed-form projection clamps its DCT coefficients into the
//! box `|coeff| <= |dequantized level|`, and the signs of the restored
//! coefficients are read off. Only the XOR residual between true and
//! restored signs is range coded.
//!
//! Module map:
//! - [`imageio`]: PGM I/O, block padding, training patches.
//! - [`transform`]: orthonormal 8x8 DCT, JPEG quantization, tiling.
//! - [`pocs`]: projection onto the magnitude-constraint set and its sub-gradient.
//! - [`neuralnet`]: the three-layer network, its adjoints, and the PDSR/RDSR/FDSR compositions.
//! - [`trainer`]: example construction, squared-error loss, Adam.
//! - [`codec`]: DSR1 bitstream encoder/decoder.
//! - [`metrics`]: entropy, BPS/BPP, sign accuracy, PSNR.
//! - [`cli`]: the `dsr` command-line front end.

pub mod cli;
pub mod codec;
pub mod error;
pub mod imageio;
pub mod metrics;
pub mod neuralnet;
pub mod pocs;
pub mod trainer;
pub mod transform;

pub use error::{Error, Result};
pub use imageio::{Image, PaddedImage};
pub use neuralnet::{ModelParams, Variant};
