//! Effective run configuration: defaults, then a `key=value` file, then flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use straightkit::augment::AugmentParams;
use straightkit::backbone::BackboneParams;
use straightkit::evalkit::{ProfileParams, DEFAULT_THRESHOLD};
use straightkit::geobase::GeoParams;
use straightkit::pipeline::{PipelineConfig, DESK_LR};
use straightkit::Mode;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown configuration key {key:?} ({origin})")]
    UnknownKey { key: String, origin: String },
    #[error("bad value {value:?} for {key}: expected {expected}")]
    BadValue { key: String, value: String, expected: &'static str },
    #[error("{path}:{line}: expected key=value, got {text:?}")]
    Malformed { path: PathBuf, line: usize, text: String },
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Full-size constants at a 256-pixel canvas.
    Full,
    /// Small per-image run: 64-pixel canvas, 100 pairs, at most 1000 updates.
    Desk,
}

impl Preset {
    fn as_str(self) -> &'static str {
        match self {
            Preset::Full => "full",
            Preset::Desk => "desk",
        }
    }
}

/// Every key accepted in a config file or through `--set`.
pub const KEYS: &[&str] = &[
    "preset",
    "canvas",
    "seed",
    "mode",
    "invert",
    "threshold",
    "window",
    "stick_width",
    "value_step",
    "k",
    "points",
    "sigma",
    "max_angle",
    "lr",
    "lambda",
    "batch_size",
    "checks_per_epoch",
    "decay_patience",
    "decay_factor",
    "stop_patience",
    "max_epochs",
    "max_steps",
    "dropout",
    "beta1",
    "beta2",
    "init_std",
    "unet_depth",
    "unet_base_channels",
    "unet_dropout_levels",
    "disc_base_channels",
    "disc_stride2_layers",
    "disc_stride1_layers",
    "cases",
    "bends",
];

/// One `key=value` setting and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub key: String,
    pub value: String,
    pub origin: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    /// Named input and output paths of the subcommand.
    pub paths: Vec<(String, PathBuf)>,
    pub preset: Preset,
    pub pipeline: PipelineConfig,
    /// Invert input images on load (dark chromosome on a light background).
    pub invert: bool,
    /// Foreground threshold of the geometric baseline and the metrics.
    pub threshold: f32,
    /// Number of cases written by `synth`.
    pub cases: usize,
    /// Bends per synthetic case.
    pub bends: usize,
}

/// Reads a flat `key=value` file; blank lines and `#` comments are skipped.
pub fn read_config_file(path: &Path) -> Result<Vec<Setting>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            text: line.to_string(),
        })?;
        out.push(Setting {
            key: key.trim().to_string(),
            value: value.trim().to_string(),
            origin: format!("{}:{}", path.display(), i + 1),
        });
    }
    Ok(out)
}

/// Splits a `--set KEY=VALUE` argument.
pub fn parse_assignment(arg: &str) -> Result<Setting, ConfigError> {
    let (key, value) = arg.split_once('=').ok_or_else(|| ConfigError::BadValue {
        key: "--set".into(),
        value: arg.into(),
        expected: "KEY=VALUE",
    })?;
    Ok(Setting { key: key.trim().into(), value: value.trim().into(), origin: "--set".into() })
}

fn parse<T: FromStr>(s: &Setting, expected: &'static str) -> Result<T, ConfigError> {
    s.value.parse().map_err(|_| ConfigError::BadValue { key: s.key.clone(), value: s.value.clone(), expected })
}

impl RunConfig {
    /// Builds the effective configuration from `settings` in increasing
    /// priority order (file entries first, then flags).
    pub fn build(command: &str, paths: Vec<(String, PathBuf)>, settings: &[Setting]) -> Result<Self, ConfigError> {
        if let Some(s) = settings.iter().find(|s| !KEYS.contains(&s.key.as_str())) {
            return Err(ConfigError::UnknownKey { key: s.key.clone(), origin: s.origin.clone() });
        }
        let last = |key: &str| settings.iter().rev().find(|s| s.key == key);
        let preset = match last("preset") {
            None => Preset::Full,
            Some(s) => match s.value.as_str() {
                "full" => Preset::Full,
                "desk" => Preset::Desk,
                _ => {
                    return Err(ConfigError::BadValue { key: s.key.clone(), value: s.value.clone(), expected: "full or desk" })
                }
            },
        };
        let canvas = match last("canvas") {
            Some(s) => parse::<usize>(s, "a positive integer")?,
            None if preset == Preset::Desk => 64,
            None => 256,
        };
        if canvas == 0 {
            return Err(ConfigError::Invalid("canvas must be positive".into()));
        }
        // stick width and sigma follow the canvas unless set explicitly
        let mut pipeline = PipelineConfig::for_canvas(canvas);
        if preset == Preset::Desk {
            pipeline.augment.k = 100;
            pipeline.train.max_steps = Some(1000);
            pipeline.train.lr = DESK_LR;
        }
        let mut config = RunConfig {
            command: command.into(),
            paths,
            preset,
            pipeline,
            invert: false,
            threshold: DEFAULT_THRESHOLD,
            cases: 10,
            bends: 1,
        };
        for s in settings.iter().filter(|s| s.key != "preset" && s.key != "canvas") {
            config.apply(s)?;
        }
        config.pipeline.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if config.pipeline.backbone.window.is_multiple_of(2) || config.pipeline.backbone.window < 3 {
            return Err(ConfigError::Invalid(format!("window must be odd and at least 3, got {}", config.pipeline.backbone.window)));
        }
        Ok(config)
    }

    fn apply(&mut self, s: &Setting) -> Result<(), ConfigError> {
        const INT: &str = "a non-negative integer";
        const REAL: &str = "a number";
        let p = &mut self.pipeline;
        let t = &mut p.train;
        match s.key.as_str() {
            "seed" => p.seed = parse(s, INT)?,
            "mode" => {
                p.mode = parse::<Mode>(s, "u_net_only or pix2pix")?;
            }
            "invert" => self.invert = parse(s, "true or false")?,
            "threshold" => self.threshold = parse(s, REAL)?,
            "window" => p.backbone.window = parse(s, INT)?,
            "stick_width" => p.backbone.style.width = parse(s, INT)?,
            "value_step" => p.backbone.style.value_step = parse(s, "an integer in 1..=28")?,
            "k" => p.augment.k = parse(s, INT)?,
            "points" => p.augment.points = parse(s, INT)?,
            "sigma" => p.augment.sigma = parse(s, REAL)?,
            "max_angle" => p.augment.max_angle = parse(s, REAL)?,
            "lr" => t.lr = parse(s, REAL)?,
            "lambda" => t.lambda = parse(s, REAL)?,
            "batch_size" => t.batch_size = parse(s, INT)?,
            "checks_per_epoch" => t.checks_per_epoch = parse(s, INT)?,
            "decay_patience" => t.decay_patience = parse(s, INT)?,
            "decay_factor" => t.decay_factor = parse(s, REAL)?,
            "stop_patience" => t.stop_patience = parse(s, INT)?,
            "max_epochs" => t.max_epochs = parse(s, INT)?,
            "max_steps" => {
                t.max_steps = if s.value == "none" { None } else { Some(parse(s, "a non-negative integer or none")?) }
            }
            "dropout" => t.dropout = parse(s, REAL)?,
            "beta1" => t.beta1 = parse(s, REAL)?,
            "beta2" => t.beta2 = parse(s, REAL)?,
            "init_std" => t.init_std = parse(s, REAL)?,
            "unet_depth" => t.unet.depth = parse(s, INT)?,
            "unet_base_channels" => t.unet.base_channels = parse(s, INT)?,
            "unet_dropout_levels" => t.unet.dropout_levels = parse(s, INT)?,
            "disc_base_channels" => t.disc.base_channels = parse(s, INT)?,
            "disc_stride2_layers" => t.disc.stride2_layers = parse(s, INT)?,
            "disc_stride1_layers" => t.disc.stride1_layers = parse(s, INT)?,
            "cases" => self.cases = parse(s, INT)?,
            "bends" => self.bends = parse(s, INT)?,
            other => unreachable!("key {other} is listed but not handled"),
        }
        Ok(())
    }

    pub fn canvas(&self) -> usize {
        self.pipeline.canvas
    }

    pub fn augment(&self) -> AugmentParams {
        self.pipeline.augment
    }

    pub fn backbone(&self) -> BackboneParams {
        self.pipeline.backbone
    }

    pub fn geo(&self) -> GeoParams {
        GeoParams { threshold: self.threshold, window: self.pipeline.backbone.window }
    }

    pub fn profile(&self) -> ProfileParams {
        ProfileParams { threshold: self.threshold, window: self.pipeline.backbone.window, ..ProfileParams::default() }
    }

    /// Full effective configuration as `key=value` lines, in a fixed order.
    pub fn manifest(&self) -> String {
        let p = &self.pipeline;
        let mut m = String::new();
        let mut put = |k: &str, v: String| writeln!(m, "{k}={v}").unwrap();
        put("command", self.command.clone());
        for (name, path) in &self.paths {
            put(&format!("path.{name}"), path.display().to_string());
        }
        put("preset", self.preset.as_str().into());
        put("canvas", p.canvas.to_string());
        put("seed", p.seed.to_string());
        put("mode", p.mode.to_string());
        put("invert", self.invert.to_string());
        put("threshold", self.threshold.to_string());
        put("window", p.backbone.window.to_string());
        put("stick_width", p.backbone.style.width.to_string());
        put("value_step", p.backbone.style.value_step.to_string());
        put("k", p.augment.k.to_string());
        put("points", p.augment.points.to_string());
        put("sigma", p.augment.sigma.to_string());
        put("max_angle", p.augment.max_angle.to_string());
        // the training seed is derived from `seed` above
        for (k, v) in p.train.echo().into_iter().filter(|(k, _)| k != "seed") {
            put(&k, v);
        }
        put("cases", self.cases.to_string());
        put("bends", self.bends.to_string());
        m
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::build("", Vec::new(), &[]).expect("defaults are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use straightkit::backbone::{StickStyle, DEFAULT_SMOOTHING_WINDOW, DEFAULT_STICK_WIDTH};

    fn set(key: &str, value: &str) -> Setting {
        Setting { key: key.into(), value: value.into(), origin: "test".into() }
    }

    #[test]
    fn defaults_are_the_full_size_constants() {
        let c = RunConfig::default();
        let a = c.augment();
        assert_eq!((a.k, a.points, a.sigma, a.max_angle), (1000, 3, 18.0, 45.0));
        assert_eq!(c.backbone().window, 11);
        assert_eq!(DEFAULT_SMOOTHING_WINDOW, 11);
        assert_eq!(c.backbone().style.width, 33);
        assert_eq!(DEFAULT_STICK_WIDTH, 33);
        assert_eq!(c.backbone().style.value_step, 23);
        let t = &c.pipeline.train;
        assert_eq!(t.lr, 4e-5);
        assert_eq!((t.checks_per_epoch, t.decay_patience, t.stop_patience), (3, 9, 27));
        assert_eq!(t.decay_factor, 0.8);
        assert_eq!(t.max_steps, None);
        assert_eq!(straightkit::augment::VALIDATION_FRACTION, 0.1);
        assert_eq!((c.canvas(), c.pipeline.mode, c.pipeline.seed), (256, Mode::UNetOnly, 0));
    }

    #[test]
    fn desk_preset_scales_with_the_canvas() {
        let c = RunConfig::build("x", vec![], &[set("preset", "desk")]).unwrap();
        assert_eq!(c.pipeline, PipelineConfig::desk());
        let c = RunConfig::build("x", vec![], &[set("canvas", "128")]).unwrap();
        assert_eq!(c.backbone().style, StickStyle::for_canvas(128));
        assert_eq!(c.augment().sigma, 9.0);
    }

    #[test]
    fn later_settings_win() {
        let c = RunConfig::build("x", vec![], &[set("k", "5"), set("sigma", "3"), set("k", "7")]).unwrap();
        assert_eq!((c.augment().k, c.augment().sigma), (7, 3.0));
        // an explicit sigma survives a canvas change wherever it appears
        let c = RunConfig::build("x", vec![], &[set("sigma", "0"), set("canvas", "64")]).unwrap();
        assert_eq!(c.augment().sigma, 0.0);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::build("x", vec![], &[set("k", "5"), set("sigmaa", "1")]).unwrap_err();
        assert!(err.to_string().contains("\"sigmaa\""), "{err}");
    }

    #[test]
    fn type_mismatch_names_the_key() {
        let err = RunConfig::build("x", vec![], &[set("k", "many")]).unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { ref key, .. } if key == "k"), "{err}");
        assert!(RunConfig::build("x", vec![], &[set("mode", "gan")]).is_err());
        assert!(RunConfig::build("x", vec![], &[set("window", "10")]).is_err());
        assert!(RunConfig::build("x", vec![], &[set("decay_factor", "1.5")]).is_err());
    }

    #[test]
    fn max_steps_accepts_none() {
        let c = RunConfig::build("x", vec![], &[set("preset", "desk"), set("max_steps", "none")]).unwrap();
        assert_eq!(c.pipeline.train.max_steps, None);
    }

    #[test]
    fn config_file_skips_comments_and_reports_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# desk run\n\nk = 12\nmode=pix2pix\n").unwrap();
        let settings = read_config_file(&path).unwrap();
        assert_eq!(settings.len(), 2);
        let c = RunConfig::build("x", vec![], &settings).unwrap();
        assert_eq!((c.augment().k, c.pipeline.mode), (12, Mode::Pix2Pix));
        std::fs::write(&path, "k 12\n").unwrap();
        assert!(matches!(read_config_file(&path), Err(ConfigError::Malformed { line: 1, .. })));
    }

    #[test]
    fn manifest_round_trips_through_settings() {
        let c = RunConfig::build("x", vec![], &[set("preset", "desk"), set("seed", "9"), set("sigma", "0")]).unwrap();
        let settings: Vec<Setting> = c
            .manifest()
            .lines()
            .filter(|l| !l.starts_with("command="))
            .map(|l| parse_assignment(l).unwrap())
            .collect();
        assert_eq!(RunConfig::build("x", vec![], &settings).unwrap(), c);
    }
}
