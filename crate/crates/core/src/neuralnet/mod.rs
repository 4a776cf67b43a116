//! The sign-retrieval network and its reverse-mode derivatives.

mod checkpoint;
mod conv;
mod model;

pub use checkpoint::{load_checkpoint, parse_checkpoint, save_checkpoint, write_checkpoint};
pub use conv::{conv2d, conv2d_backward, Activation, ConvGrads, ConvLayer};
pub use model::{
    init_params, phi_backward, phi_forward, psi_backward, psi_forward, ModelParams, PsiTape,
    Stage, StageTape, Variant, STAGE_PARAMS,
};

use crate::imageio::Image;

/// Channel-major `C x H x W` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    /// One-channel view of an image.
    pub fn from_image(image: &Image) -> Self {
        Tensor {
            channels: 1,
            height: image.height(),
            width: image.width(),
            data: image.samples().to_vec(),
        }
    }

    /// Inverse of [`Tensor::from_image`]; panics unless single-channel.
    pub fn into_image(self) -> Image {
        assert_eq!(self.channels, 1, "only single-channel tensors are images");
        Image::new(self.width, self.height, self.data).expect("tensor shape is consistent")
    }
}
