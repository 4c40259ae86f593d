//! The k-space / image-space U-Net, its loss and its weight checkpoints.

mod checkpoint;
mod gradcheck;
pub mod layers;
mod loss;
mod unet;

use std::fmt::Debug;

use ndarray::LinalgScalar;
use num_traits::{Float, FromPrimitive};

pub use checkpoint::{load_checkpoint, save_checkpoint, MANIFEST_FILE, WEIGHTS_FILE};
pub use gradcheck::{loss_gradient_check, GradCheckReport};
pub use loss::{combined_loss, combined_loss_grad, LossWeights};
pub use unet::{build_unet, LayerKind, LayerSpec, ParamSlot, UNetConfig, UNetModel, LAYER_NAMES};

/// Scalar type the network can run in. `f32` for training, `f64` for
/// gradient checking.
pub trait Real: LinalgScalar + Float + FromPrimitive + Send + Sync + Debug + 'static {}

impl<T> Real for T where T: LinalgScalar + Float + FromPrimitive + Send + Sync + Debug + 'static {}
