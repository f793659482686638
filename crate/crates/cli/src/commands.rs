//! Subcommand bodies. Each writes its artifacts and `run_manifest.txt` into
//! its output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use straightkit::augment::build_augmented_dataset;
use straightkit::backbone::{extract_backbone, Extraction};
use straightkit::evalkit::{evaluate_methods, EvalCase, MetricsReport};
use straightkit::geobase::geometric_straighten;
use straightkit::pipeline::run_pipeline;
use straightkit::seed::{self, streams};
use straightkit::synthgen::{make_case, CaseSpec};
use straightkit::translator::{straighten, train_with, LogLine, TrainConfig, TrainReport};
use straightkit::{load_image, save_image, AugmentedDataset, Checkpoint, Error, GrayImage};

use crate::config::{ConfigError, RunConfig};

pub const MANIFEST: &str = "run_manifest.txt";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Module(#[from] Error),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    /// 2 for usage and configuration, 4 for an aborted training run, 3 for
    /// everything else a module rejects.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Module(e) if e.is_training_abort() => 4,
            CliError::Module(_) | CliError::Data(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source }.into())
}

fn prepare_out(out: &Path, config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|source| Error::Io { path: out.to_path_buf(), source })?;
    write_text(&out.join(MANIFEST), &config.manifest())
}

fn load_input(path: &Path, config: &RunConfig) -> Result<GrayImage> {
    Ok(load_image(path, config.invert, Some(config.canvas()))?)
}

fn log_check(line: &LogLine) {
    info!(
        "check {} (epoch {}, step {}): lr {:e}, train L1 {:.5}, val L1 {:.5}",
        line.check_idx, line.epoch, line.step, line.lr, line.train_l1, line.val_l1
    );
}

fn save_extraction(ex: &Extraction, out: &Path) -> Result<()> {
    save_image(&ex.backbone.curved, out.join("curved_backbone.png"))?;
    save_image(&ex.backbone.vertical, out.join("vertical_backbone.png"))?;
    write_text(&out.join("control_points.txt"), &ex.control_points.to_text())
}

fn training_log_csv(log: &[LogLine]) -> String {
    let mut s = String::from("check_idx,epoch,step,lr,train_l1,val_l1,train_adv\n");
    for l in log {
        let adv = l.train_adv.map_or(String::new(), |a| format!("{a:.6}"));
        writeln!(s, "{},{},{},{:e},{:.6},{:.6},{adv}", l.check_idx, l.epoch, l.step, l.lr, l.train_l1, l.val_l1).unwrap();
    }
    s
}

fn training_summary(report: &TrainReport) -> String {
    let ck = &report.checkpoint;
    let mut s = String::new();
    writeln!(s, "steps={}", report.steps).unwrap();
    writeln!(s, "stop={:?}", report.stop).unwrap();
    writeln!(s, "checks={}", report.log.len()).unwrap();
    writeln!(s, "best_check={}", ck.check_idx).unwrap();
    writeln!(s, "best_epoch={}", ck.epoch).unwrap();
    writeln!(s, "best_val_l1={:.6}", ck.best_val_l1).unwrap();
    s
}

fn save_training(report: &TrainReport, out: &Path) -> Result<()> {
    report.checkpoint.save(out.join("model.ckpt"))?;
    write_text(&out.join("log.csv"), &training_log_csv(&report.log))
}

fn train_config(config: &RunConfig) -> TrainConfig {
    TrainConfig { seed: seed::derive(config.pipeline.seed, streams::TRAIN), ..config.pipeline.train.clone() }
}

pub fn backbone(config: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let img = load_input(input, config)?;
    let ex = extract_backbone(&img, &config.backbone())?;
    prepare_out(out, config)?;
    save_extraction(&ex, out)?;
    info!("stick lengths {:?}", ex.control_points.stick_lengths());
    Ok(())
}

pub fn augment(config: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let img = load_input(input, config)?;
    let ex = extract_backbone(&img, &config.backbone())?;
    let seed = seed::derive(config.pipeline.seed, streams::AUGMENT);
    let dataset = build_augmented_dataset(&img, &ex.backbone.curved, &config.augment(), seed)?;
    prepare_out(out, config)?;
    dataset.save(out)?;
    save_extraction(&ex, out)?;
    info!("{} pairs ({} train, {} validation), hash {}", dataset.len(), dataset.train.len(), dataset.validation.len(), dataset.content_hash());
    Ok(())
}

pub fn train(config: &RunConfig, dataset: &Path, out: &Path) -> Result<()> {
    let dataset = AugmentedDataset::load(dataset)?;
    let report = train_with(&dataset, &train_config(config), config.pipeline.mode, log_check)?;
    prepare_out(out, config)?;
    save_training(&report, out)?;
    write_text(&out.join("summary.txt"), &training_summary(&report))
}

pub fn straighten_backbone(config: &RunConfig, checkpoint: &Path, backbone: &Path, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let backbone = load_image(backbone, false, None)?;
    let img = straighten(&ck, &backbone)?;
    prepare_out(out, config)?;
    save_image(&img, out.join("straightened.png"))?;
    Ok(())
}

pub fn baseline(config: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let img = load_input(input, config)?;
    let straight = geometric_straighten(&img, &config.geo())?;
    prepare_out(out, config)?;
    save_image(&straight, out.join("geometric.png"))?;
    Ok(())
}

/// Case `i` is generated from `derive(seed, i)`.
pub fn synth(config: &RunConfig, out: &Path) -> Result<()> {
    if config.bends == 0 || config.cases == 0 {
        return Err(CliError::Config(ConfigError::Invalid("synth needs cases >= 1 and bends >= 1".into())));
    }
    prepare_out(out, config)?;
    let spec = CaseSpec::for_canvas(config.canvas(), config.bends);
    let mut index = String::from("case,seed\n");
    for i in 0..config.cases {
        let case_seed = seed::derive(config.pipeline.seed, i as u64);
        let case = make_case(&spec, case_seed)?;
        let name = format!("case_{i:03}");
        let dir = out.join(&name);
        std::fs::create_dir_all(&dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
        save_image(&case.bent, dir.join("bent.png"))?;
        save_image(&case.straight, dir.join("straight.png"))?;
        write_text(&dir.join("profile.txt"), &case.profile.to_text())?;
        writeln!(index, "{name},{case_seed}").unwrap();
    }
    write_text(&out.join("cases.csv"), &index)
}

/// A case directory holds `straight.png` (ground truth), `bent.png` (input)
/// and one PNG per method, named after the method.
fn read_case(dir: &Path) -> Result<EvalCase> {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let truth = load_image(dir.join("straight.png"), false, None)?;
    let curved = load_image(dir.join("bent.png"), false, None)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| Error::Io { path: dir.to_path_buf(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    files.sort();
    let mut outputs = Vec::new();
    for path in files {
        let method = path.file_stem().unwrap().to_string_lossy().into_owned();
        if method != "straight" && method != "bent" {
            outputs.push((method, load_image(&path, false, None)?));
        }
    }
    Ok(EvalCase { name, curved, truth, outputs })
}

pub fn eval(config: &RunConfig, cases: &Path, out: &Path) -> Result<()> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(cases)
        .map_err(|source| Error::Io { path: cases.to_path_buf(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("straight.png").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Data(format!("no case directories with straight.png under {}", cases.display())));
    }
    let cases = dirs.iter().map(|d| read_case(d)).collect::<Result<Vec<_>>>()?;
    let report = evaluate_methods(&cases, &config.profile())?;
    prepare_out(out, config)?;
    write_report(&report, out)?;
    print!("{}", report.to_table());
    Ok(())
}

fn write_report(report: &MetricsReport, out: &Path) -> Result<()> {
    write_text(&out.join("report.csv"), &report.to_csv())?;
    write_text(&out.join("report.txt"), &report.to_table())
}

pub fn pipeline(config: &RunConfig, input: &Path, truth: Option<&Path>, out: &Path) -> Result<()> {
    let img = load_input(input, config)?;
    let truth = truth.map(|t| load_input(t, config)).transpose()?;
    let result = run_pipeline(&img, &config.pipeline, log_check)?;
    let geometric = match geometric_straighten(&img, &config.geo()) {
        Ok(g) => Some(g),
        Err(e) => {
            log::warn!("geometric baseline failed: {e}");
            None
        }
    };
    prepare_out(out, config)?;
    save_image(&result.straightened, out.join("straightened.png"))?;
    save_extraction(&result.extraction, out)?;
    save_training(&result.report, out)?;
    if let Some(g) = &geometric {
        save_image(g, out.join("geometric.png"))?;
    }
    let mut text = training_summary(&result.report);
    writeln!(text, "dataset_hash={}", result.dataset.content_hash()).unwrap();
    if let Some(truth) = truth {
        let mut outputs = vec![("framework".to_string(), result.straightened.clone())];
        outputs.extend(geometric.map(|g| ("geometric".to_string(), g)));
        let case = EvalCase { name: "input".into(), curved: img, truth, outputs };
        let report = evaluate_methods(&[case], &config.profile())?;
        write_text(&out.join("report.csv"), &report.to_csv())?;
        text.push('\n');
        text.push_str(&report.to_table());
        print!("{}", report.to_table());
    }
    write_text(&out.join("report.txt"), &text)
}
