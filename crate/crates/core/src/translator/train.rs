//! Update loop with validation-driven checkpointing.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::graph::Graph;
use super::nets::{DiscConfig, ParamSet, UNetConfig};
use super::optim::Adam;
use super::schedule::{CheckOutcome, PlateauSchedule};
use super::tensor::Tensor;
use crate::augment::AugmentedDataset;
use crate::error::{Error, Result};
use crate::imgcore::{to_model_range, GrayImage};
use crate::seed::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Generator alone, supervised by the pixel L1 loss.
    #[default]
    UNetOnly,
    /// Generator and patch discriminator trained adversarially plus L1.
    Pix2Pix,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::UNetOnly => "u_net_only",
            Mode::Pix2Pix => "pix2pix",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u_net_only" | "unet" => Ok(Mode::UNetOnly),
            "pix2pix" => Ok(Mode::Pix2Pix),
            other => Err(Error::InvalidParameter(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub checks_per_epoch: usize,
    pub decay_patience: usize,
    pub decay_factor: f64,
    pub stop_patience: usize,
    pub max_epochs: usize,
    /// Hard cap on update steps; a final validation check runs when it hits.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Standard deviation of the normal weight initialisation.
    pub init_std: f64,
    pub unet: UNetConfig,
    pub disc: DiscConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 4e-5,
            lambda: 100.0,
            batch_size: 4,
            checks_per_epoch: 3,
            decay_patience: 9,
            decay_factor: 0.8,
            stop_patience: 27,
            max_epochs: 200,
            max_steps: None,
            seed: 0,
            dropout: 0.5,
            beta1: 0.5,
            beta2: 0.999,
            init_std: super::nets::INIT_STD,
            unet: UNetConfig::default(),
            disc: DiscConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidParameter(what));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return bad(format!("decay factor must lie in (0, 1), got {}", self.decay_factor));
        }
        if self.stop_patience < self.decay_patience || self.decay_patience == 0 {
            return bad(format!(
                "need 0 < decay patience ({}) <= stop patience ({})",
                self.decay_patience, self.stop_patience
            ));
        }
        if self.batch_size == 0 || self.checks_per_epoch == 0 || self.max_epochs == 0 {
            return bad("batch size, checks per epoch and max epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout rate must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.init_std > 0.0) {
            return bad(format!("init std must be positive, got {}", self.init_std));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Flat `key=value` echo of every setting.
    pub fn echo(&self) -> Vec<(String, String)> {
        let max_steps = self.max_steps.map_or("none".to_string(), |s| s.to_string());
        [
            ("lr", self.lr.to_string()),
            ("lambda", self.lambda.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("checks_per_epoch", self.checks_per_epoch.to_string()),
            ("decay_patience", self.decay_patience.to_string()),
            ("decay_factor", self.decay_factor.to_string()),
            ("stop_patience", self.stop_patience.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("max_steps", max_steps),
            ("seed", self.seed.to_string()),
            ("dropout", self.dropout.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("init_std", self.init_std.to_string()),
            ("unet_depth", self.unet.depth.to_string()),
            ("unet_base_channels", self.unet.base_channels.to_string()),
            ("unet_dropout_levels", self.unet.dropout_levels.to_string()),
            ("disc_base_channels", self.disc.base_channels.to_string()),
            ("disc_stride2_layers", self.disc.stride2_layers.to_string()),
            ("disc_stride1_layers", self.disc.stride1_layers.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// One validation check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLine {
    pub check_idx: usize,
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub train_l1: f64,
    pub val_l1: f64,
    pub train_adv: Option<f64>,
}

impl fmt::Display for LogLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}, {:e}, {:.6}, {:.6}", self.check_idx, self.epoch, self.lr, self.train_l1, self.val_l1)?;
        if let Some(adv) = self.train_adv {
            write!(f, ", {adv:.6}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Plateau,
    MaxEpochs,
    MaxSteps,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogLine>,
    pub steps: usize,
    pub stop: StopReason,
    /// Per-step batch L1 (model range) in update order.
    pub step_l1: Vec<f64>,
    /// Generator weights after the last update (not necessarily the best).
    pub final_generator: ParamSet<f32>,
}

struct Split {
    x: Vec<Tensor<f32>>,
    y: Vec<Tensor<f32>>,
}

fn as_tensor(img: &GrayImage) -> Tensor<f32> {
    let m = to_model_range(img);
    Tensor::from_vec([1, 1, m.height(), m.width()], m.data().to_vec()).expect("image shape")
}

impl Split {
    fn new(dataset: &AugmentedDataset, indices: &[usize]) -> Self {
        let x = indices.iter().map(|&i| as_tensor(&dataset.pairs[i].x)).collect();
        let y = indices.iter().map(|&i| as_tensor(&dataset.pairs[i].y)).collect();
        Self { x, y }
    }

    fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        let xs: Vec<_> = idx.iter().map(|&i| &self.x[i]).collect();
        let ys: Vec<_> = idx.iter().map(|&i| &self.y[i]).collect();
        (Tensor::stack(&xs).expect("uniform size"), Tensor::stack(&ys).expect("uniform size"))
    }
}

/// Mean absolute error (model range) of the generator in inference mode over
/// `(x, y)` pairs, evaluated in chunks of `batch`.
pub fn evaluate_l1(unet: &UNetConfig, params: &ParamSet<f32>, x: &[Tensor<f32>], y: &[Tensor<f32>], batch: usize) -> Result<f64> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidParameter("evaluation needs matching, nonempty inputs".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (xc, yc) in x.chunks(batch.max(1)).zip(y.chunks(batch.max(1))) {
        let xb = Tensor::stack(&xc.iter().collect::<Vec<_>>())?;
        let yb = Tensor::stack(&yc.iter().collect::<Vec<_>>())?;
        let pred = super::nets::generator_forward::<f32, ChaCha8Rng>(unet, params, &xb, None)?;
        total += pred.data().iter().zip(yb.data()).map(|(&p, &q)| (p as f64 - q as f64).abs()).sum::<f64>();
        count += pred.numel();
    }
    Ok(total / count as f64)
}

/// Validation L1 of `params` on the dataset's validation split.
pub fn validation_l1(dataset: &AugmentedDataset, unet: &UNetConfig, params: &ParamSet<f32>, batch: usize) -> Result<f64> {
    let v = Split::new(dataset, &dataset.validation);
    evaluate_l1(unet, params, &v.x, &v.y, batch)
}

/// Training-split L1 of `params` in inference mode.
pub fn train_split_l1(dataset: &AugmentedDataset, unet: &UNetConfig, params: &ParamSet<f32>, batch: usize) -> Result<f64> {
    let t = Split::new(dataset, &dataset.train);
    evaluate_l1(unet, params, &t.x, &t.y, batch)
}

fn check_steps(steps_per_epoch: usize, checks: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..=checks)
        .map(|j| ((steps_per_epoch * j) as f64 / checks as f64).round().max(1.0) as usize)
        .collect();
    out.dedup();
    out
}

fn finite(v: f64, what: &str, step: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::TrainingAborted(format!("{what} became {v} at update step {step}")))
    }
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    mode: Mode,
    g: ParamSet<f32>,
    d: ParamSet<f32>,
    g_opt: Adam<f32>,
    d_opt: Adam<f32>,
    dropout_rng: ChaCha8Rng,
}

impl Trainer<'_> {
    /// One update on a batch; returns `(l1, adversarial)`.
    fn step(&mut self, x: Tensor<f32>, y: Tensor<f32>, lr: f64, step: usize) -> Result<(f64, Option<f64>)> {
        let cfg = self.config;
        let dropout = (cfg.dropout > 0.0).then_some((cfg.dropout, &mut self.dropout_rng));
        let mut g = Graph::new();
        let gb = g.bind(self.g.iter(), true);
        let xi = g.input(x.clone());
        let yi = g.input(y.clone());
        let fake = cfg.unet.forward(&mut g, &self.g, &gb, xi, dropout)?;
        let l1 = g.l1(fake, yi)?;
        let l1_value = finite(g.value(l1).value() as f64, "L1 loss", step)?;
        match self.mode {
            Mode::UNetOnly => {
                let grads = g.backward(l1)?;
                self.g_opt.update(&mut self.g, &grads, lr)?;
                Ok((l1_value, None))
            }
            Mode::Pix2Pix => {
                let db = g.bind(self.d.iter(), false);
                let d_fake = cfg.disc.forward(&mut g, &self.d, &db, xi, fake)?;
                let adv = g.squared_error(d_fake, 1.0);
                let total = g.weighted_sum(&[(adv, 1.0), (l1, cfg.lambda)])?;
                let adv_value = finite(g.value(adv).value() as f64, "adversarial loss", step)?;
                let g_grads = g.backward(total)?;
                let fake_value = g.value(fake).clone();
                drop(g);

                let mut h = Graph::new();
                let hb = h.bind(self.d.iter(), true);
                let (xi, yi, fi) = (h.input(x), h.input(y), h.input(fake_value));
                let d_real = cfg.disc.forward(&mut h, &self.d, &hb, xi, yi)?;
                let d_fake = cfg.disc.forward(&mut h, &self.d, &hb, xi, fi)?;
                let real_term = h.squared_error(d_real, 1.0);
                let fake_term = h.squared_error(d_fake, 0.0);
                let d_loss = h.weighted_sum(&[(real_term, 1.0), (fake_term, 1.0)])?;
                finite(h.value(d_loss).value() as f64, "discriminator loss", step)?;
                let d_grads = h.backward(d_loss)?;

                self.g_opt.update(&mut self.g, &g_grads, lr)?;
                self.d_opt.update(&mut self.d, &d_grads, lr)?;
                Ok((l1_value, Some(adv_value)))
            }
        }
    }
}

/// Trains a generator on the dataset's training split, checking validation
/// L1 `checks_per_epoch` times per epoch and keeping the best weights.
/// `on_check` sees every log line as it is produced.
pub fn train_with(
    dataset: &AugmentedDataset,
    config: &TrainConfig,
    mode: Mode,
    mut on_check: impl FnMut(&LogLine),
) -> Result<TrainReport> {
    config.validate()?;
    if dataset.train.is_empty() || dataset.validation.is_empty() {
        return Err(Error::InvalidParameter("training needs nonempty train and validation splits".into()));
    }
    let (h, w) = dataset.canvas();
    let gran = config.unet.granularity();
    if h % gran != 0 || w % gran != 0 {
        return Err(Error::Shape(format!("{w}x{h} canvas is not divisible by {gran}")));
    }
    let train = Split::new(dataset, &dataset.train);
    let val = Split::new(dataset, &dataset.validation);

    let mut init_rng = seed::stream_rng(config.seed, streams::INIT);
    let g_params = config.unet.init_with_std::<f32>(config.init_std, &mut init_rng);
    let d_params = config.disc.init_with_std::<f32>(config.init_std, &mut init_rng);
    let mut trainer = Trainer {
        config,
        mode,
        g: g_params,
        d: d_params,
        g_opt: Adam::new(config.beta1, config.beta2),
        d_opt: Adam::new(config.beta1, config.beta2),
        dropout_rng: seed::stream_rng(config.seed, streams::DROPOUT),
    };
    let mut shuffle_rng = seed::stream_rng(config.seed, streams::SHUFFLE);
    let mut schedule = PlateauSchedule::new(config.lr, config.decay_factor, config.decay_patience, config.stop_patience);

    let n = train.x.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let checks = check_steps(steps_per_epoch, config.checks_per_epoch);
    let mut log = Vec::new();
    let mut step_l1 = Vec::new();
    let mut best: Option<(ParamSet<f32>, LogLine)> = None;
    let mut step = 0usize;
    let mut stop = StopReason::MaxEpochs;
    let (mut window_l1, mut window_adv, mut window_n) = (0.0, 0.0, 0usize);
    let mut last_epoch = 0;

    'epochs: for epoch in 1..=config.max_epochs {
        last_epoch = epoch;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);
        for (local, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = train.batch(chunk);
            step += 1;
            let (l1, adv) = trainer.step(x, y, schedule.lr(), step)?;
            step_l1.push(l1);
            window_l1 += l1;
            window_adv += adv.unwrap_or(0.0);
            window_n += 1;

            let capped = config.max_steps.is_some_and(|m| step >= m);
            if checks.contains(&(local + 1)) || capped {
                let val_l1 = finite(evaluate_l1(&config.unet, &trainer.g, &val.x, &val.y, config.batch_size)?, "validation L1", step)?;
                let line = LogLine {
                    check_idx: schedule.checks() + 1,
                    epoch,
                    step,
                    lr: schedule.lr(),
                    train_l1: window_l1 / window_n as f64,
                    val_l1,
                    train_adv: (mode == Mode::Pix2Pix).then(|| window_adv / window_n as f64),
                };
                (window_l1, window_adv, window_n) = (0.0, 0.0, 0);
                log::debug!("{line}");
                on_check(&line);
                log.push(line);
                let outcome = schedule.observe(val_l1);
                if outcome == CheckOutcome::Improved {
                    best = Some((trainer.g.clone(), line));
                }
                if outcome == CheckOutcome::Stop {
                    stop = StopReason::Plateau;
                    break 'epochs;
                }
                if capped {
                    stop = StopReason::MaxSteps;
                    break 'epochs;
                }
            }
        }
    }

    let (best_params, best_line) = best.ok_or_else(|| Error::TrainingAborted("no validation check was run".into()))?;
    let checkpoint = Checkpoint {
        generator: best_params,
        unet: config.unet,
        canvas: (h, w),
        best_val_l1: best_line.val_l1,
        check_idx: best_line.check_idx,
        epoch: best_line.epoch,
        lr: best_line.lr,
        mode,
        config: config.echo(),
    };
    log::info!(
        "training stopped ({stop:?}) after {step} steps in epoch {last_epoch}; best val L1 {:.6} at check {}",
        checkpoint.best_val_l1,
        checkpoint.check_idx
    );
    Ok(TrainReport { checkpoint, log, steps: step, stop, step_l1, final_generator: trainer.g })
}

pub fn train(dataset: &AugmentedDataset, config: &TrainConfig, mode: Mode) -> Result<TrainReport> {
    train_with(dataset, config, mode, |_| {})
}
