//! Straightening of curved chromosome images by backbone-conditioned
//! image-to-image translation, with the geometric baseline, a synthetic
//! ground-truth generator and the evaluation metrics used to compare them.

pub mod augment;
pub mod backbone;
pub mod error;
pub mod evalkit;
pub mod geobase;
pub mod imgcore;
pub mod pipeline;
pub mod seed;
pub mod synthgen;
pub mod translator;

pub use augment::{AugmentParams, AugmentedDataset, TrainingPair};
pub use backbone::{BackboneParams, ControlPoints, Point, StickStyle};
pub use error::{Error, Result};
pub use imgcore::{load_image, save_image, GrayImage, ModelImage};
pub use translator::{Checkpoint, Mode, TrainConfig};
