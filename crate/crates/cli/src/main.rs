mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;
use config::{parse_assignment, read_config_file, ConfigError, RunConfig, Setting};

/// Chromosome straightening with backbone-conditioned image translation.
#[derive(Debug, Parser)]
#[command(name = "straightkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    settings: SettingFlags,
}

/// Settings shared by every subcommand. Flags override `--config`, which
/// overrides the defaults.
#[derive(Debug, Args)]
struct SettingFlags {
    /// Flat key=value file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Any configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// full (256 px) or desk (64 px, 100 pairs, at most 1000 updates).
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    canvas: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// u_net_only or pix2pix.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Treat inputs as dark chromosomes on a light background.
    #[arg(long, global = true)]
    invert: bool,
    /// Augmented pairs per image.
    #[arg(long, global = true)]
    k: Option<String>,
    /// Elastic deformation strength in pixels; 0 leaves rotation only.
    #[arg(long, global = true)]
    sigma: Option<String>,
    #[arg(long, global = true)]
    max_angle: Option<String>,
    #[arg(long, global = true)]
    lr: Option<String>,
    #[arg(long, global = true)]
    max_steps: Option<String>,
}

impl SettingFlags {
    fn collect(&self) -> Result<Vec<Setting>, ConfigError> {
        let mut out = match &self.config {
            Some(path) => read_config_file(path)?,
            None => Vec::new(),
        };
        for arg in &self.set {
            out.push(parse_assignment(arg)?);
        }
        let named = [
            ("preset", &self.preset),
            ("canvas", &self.canvas),
            ("seed", &self.seed),
            ("mode", &self.mode),
            ("k", &self.k),
            ("sigma", &self.sigma),
            ("max_angle", &self.max_angle),
            ("lr", &self.lr),
            ("max_steps", &self.max_steps),
        ];
        for (key, value) in named {
            if let Some(v) = value {
                out.push(Setting { key: key.into(), value: v.clone(), origin: format!("--{}", key.replace('_', "-")) });
            }
        }
        if self.invert {
            out.push(Setting { key: "invert".into(), value: "true".into(), origin: "--invert".into() });
        }
        Ok(out)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract the curved and vertical stick-figure backbones of an image.
    Backbone {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the augmented (backbone, chromosome) training set of an image.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a generator on a dataset directory written by `augment`.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a backbone image through a trained checkpoint.
    Straighten {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut-and-stitch geometric straightening.
    Baseline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic bent/straight case directories.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every method image in each case directory against its truth.
    Eval {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Backbone, augmentation, training and straightening in one run.
    Pipeline {
        #[arg(long)]
        input: PathBuf,
        /// Straight ground truth; adds a metrics report.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name_and_paths(&self) -> (&'static str, Vec<(String, PathBuf)>) {
        let p = |pairs: &[(&str, &PathBuf)]| pairs.iter().map(|(n, p)| (n.to_string(), (*p).clone())).collect();
        match self {
            Command::Backbone { input, out } => ("backbone", p(&[("input", input), ("out", out)])),
            Command::Augment { input, out } => ("augment", p(&[("input", input), ("out", out)])),
            Command::Train { dataset, out } => ("train", p(&[("dataset", dataset), ("out", out)])),
            Command::Straighten { checkpoint, backbone, out } => {
                ("straighten", p(&[("checkpoint", checkpoint), ("backbone", backbone), ("out", out)]))
            }
            Command::Baseline { input, out } => ("baseline", p(&[("input", input), ("out", out)])),
            Command::Synth { out } => ("synth", p(&[("out", out)])),
            Command::Eval { cases, out } => ("eval", p(&[("cases", cases), ("out", out)])),
            Command::Pipeline { input, truth, out } => {
                let mut v: Vec<(String, PathBuf)> = p(&[("input", input), ("out", out)]);
                if let Some(t) = truth {
                    v.push(("truth".into(), t.clone()));
                }
                ("pipeline", v)
            }
        }
    }
}

fn execute(command: &Command, config: &RunConfig) -> Result<(), CliError> {
    match command {
        Command::Backbone { input, out } => commands::backbone(config, input, out),
        Command::Augment { input, out } => commands::augment(config, input, out),
        Command::Train { dataset, out } => commands::train(config, dataset, out),
        Command::Straighten { checkpoint, backbone, out } => {
            commands::straighten_backbone(config, checkpoint, backbone, out)
        }
        Command::Baseline { input, out } => commands::baseline(config, input, out),
        Command::Synth { out } => commands::synth(config, out),
        Command::Eval { cases, out } => commands::eval(config, cases, out),
        Command::Pipeline { input, truth, out } => commands::pipeline(config, input, truth.as_deref(), out),
    }
}

/// Caps the global rayon pool at `STRAIGHTKIT_THREADS` when set.
fn configure_threads() -> Result<(), ConfigError> {
    let Ok(value) = std::env::var("STRAIGHTKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = value.trim().parse().ok().filter(|&n| n > 0).ok_or(ConfigError::BadValue {
        key: "STRAIGHTKIT_THREADS".into(),
        value,
        expected: "a positive integer",
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ConfigError::Invalid(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    configure_threads()?;
    let (name, paths) = cli.command.name_and_paths();
    let config = RunConfig::build(name, paths, &cli.settings.collect()?)?;
    log::debug!("effective configuration:\n{}", config.manifest());
    execute(&cli.command, &config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
