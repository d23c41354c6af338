//! Convolutional layers with hand-written gradients and the U-Net
//! classifier built from them.

mod checkpoint;
pub mod layers;
mod params;
mod scalar;
mod tensor;
mod unet;

pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, Checkpoint};
pub use params::{Param, ParamStore};
pub use scalar::{matmul, Scalar};
pub use tensor::Tensor;
pub use unet::{Mode, UNet, UNetConfig};
