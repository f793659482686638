//! End-to-end straightening of one curved chromosome: backbone extraction,
//! augmentation of the (backbone, chromosome) pair, per-image training and
//! inference on the vertical backbone.

use crate::augment::{build_augmented_dataset, AugmentParams, AugmentedDataset};
use crate::backbone::{extract_backbone, BackboneParams, Extraction};
use crate::error::{Error, Result};
use crate::imgcore::GrayImage;
use crate::seed::{self, streams};
use crate::translator::{straighten, train_with, LogLine, Mode, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub canvas: usize,
    pub backbone: BackboneParams,
    pub augment: AugmentParams,
    pub train: TrainConfig,
    pub mode: Mode,
    /// Root of every random stream in the run.
    pub seed: u64,
}

impl PipelineConfig {
    /// Full-size settings, with stick width and deformation strength scaled
    /// to `canvas`.
    pub fn for_canvas(canvas: usize) -> Self {
        Self {
            canvas,
            backbone: BackboneParams::for_canvas(canvas),
            augment: AugmentParams::for_canvas(canvas),
            train: TrainConfig::default(),
            mode: Mode::UNetOnly,
            seed: 0,
        }
    }

    /// Small configuration that trains one image in minutes on a single
    /// core: 64x64 canvas, 100 augmented pairs, at most 1000 updates.
    pub fn desk() -> Self {
        let mut c = Self::for_canvas(64);
        c.augment.k = 100;
        c.train.max_steps = Some(1000);
        c.train.lr = DESK_LR;
        c
    }

    fn augment_seed(&self) -> u64 {
        seed::derive(self.seed, streams::AUGMENT)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: seed::derive(self.seed, streams::TRAIN), ..self.train.clone() }
    }
}

/// Learning rate of the desk preset. Far fewer updates than a full run, so a
/// larger step than the full-size default.
pub const DESK_LR: f64 = 3e-3;

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub extraction: Extraction,
    pub dataset: AugmentedDataset,
    pub report: TrainReport,
    pub straightened: GrayImage,
}

/// Runs every stage on `img`, which must already be on the square canvas.
pub fn run_pipeline(img: &GrayImage, config: &PipelineConfig, on_check: impl FnMut(&LogLine)) -> Result<PipelineOutput> {
    if img.width() != config.canvas || img.height() != config.canvas {
        return Err(Error::DimensionMismatch(format!(
            "pipeline expects a {0}x{0} image, got {1}x{2}",
            config.canvas,
            img.width(),
            img.height()
        )));
    }
    let extraction = extract_backbone(img, &config.backbone)?;
    let dataset = build_augmented_dataset(img, &extraction.backbone.curved, &config.augment, config.augment_seed())?;
    let report = train_with(&dataset, &config.train_config(), config.mode, on_check)?;
    let straightened = straighten(&report.checkpoint, &extraction.backbone.vertical)?;
    Ok(PipelineOutput { extraction, dataset, report, straightened })
}
