//! Image-to-image translation: tensors, autodiff, networks, losses,
//! training and inference.

pub mod checkpoint;
pub mod graph;
pub mod loss;
pub mod nets;
pub mod optim;
pub mod schedule;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use graph::{Graph, NodeId};
pub use loss::{discriminator_loss, generator_loss, GeneratorLoss};
pub use nets::{discriminator_forward, generator_forward, DiscConfig, ParamSet, Role, UNetConfig};
pub use optim::Adam;
pub use schedule::{CheckOutcome, PlateauSchedule};
pub use tensor::{Real, Tensor};
pub use train::{
    evaluate_l1, train, train_split_l1, train_with, validation_l1, LogLine, Mode, StopReason, TrainConfig, TrainReport,
};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imgcore::{from_model_range, to_model_range, GrayImage, ModelImage};

/// Runs the trained generator in inference mode on a backbone image and
/// returns the synthesized chromosome in `[0, 1]`.
pub fn straighten(checkpoint: &Checkpoint, backbone: &GrayImage) -> Result<GrayImage> {
    let (h, w) = checkpoint.canvas;
    if backbone.height() != h || backbone.width() != w {
        return Err(Error::DimensionMismatch(format!(
            "backbone is {}x{}, model was trained at {w}x{h}",
            backbone.width(),
            backbone.height()
        )));
    }
    let m = to_model_range(backbone);
    let x = Tensor::from_vec([1, 1, h, w], m.data().to_vec())?;
    let out = generator_forward::<f32, ChaCha8Rng>(&checkpoint.unet, &checkpoint.generator, &x, None)?;
    Ok(from_model_range(&ModelImage::from_vec(w, h, out.into_vec())?))
}
