//! The `sargan` command line. Every command maps its failure to an exit
//! code: 1 for usage and configuration, 2 for data, checkpoint and tensor
//! errors, 3 for a failed verification run.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::began::{sample, GanModel};
use crate::classifier::{evaluate, init_classifier, train_classifier, Classifier, InitMode};
use crate::config::ExperimentConfig;
use crate::data::{
    augment_dataset_named, load_dataset, make_toy_dataset, read_pgm, save_dataset, write_pgm, GrayImage, Scenario,
    N_CLASSES, PATCH_SIZE,
};
use crate::error::{DataError, Error};
use crate::experiment::{
    pretrain_standin, run_ablation, run_augmentation, save_params, split_for_training, to_full_resolution, train_gan_on,
};
use crate::tensor::load_checkpoint;
use crate::verify::{run_verify, VerifyOptions};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_VERIFY: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "sargan", version, about = "SAR patch synthesis and classification toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic 7-class speckle dataset.
    MakeToyData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the GAN on scenario-prepared patches.
    TrainGan {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_scenario)]
        scenario: Scenario,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        /// Train on a single class only.
        #[arg(long)]
        class_label: Option<u8>,
    },
    /// Draw images from a trained generator.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Bring outputs to the 160x160 patch grid before export.
        #[arg(long)]
        upsample_to_full: bool,
    },
    /// Train the patch classifier from random or checkpoint weights.
    TrainClassifier {
        #[arg(long)]
        data: PathBuf,
        /// `random` or a checkpoint path whose backbone is reused.
        #[arg(long, default_value = "random")]
        init: String,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy and confusion matrix of a classifier checkpoint.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Merge a directory of generated PGMs into a dataset under one label.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(long)]
        class_label: u8,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random-init vs checkpoint-init classifier on the same split.
    Ablation {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        /// Backbone source; defaults to a classifier trained on an
        /// independently seeded toy set.
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Baseline vs GAN-augmented classifier on the same held-out split.
    AugmentExperiment {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gradient checks and brute-force oracles in 64-bit mode.
    Verify {
        #[arg(long, hide = true)]
        perturb_op: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// `key=value` experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    Scenario::parse(s).ok_or_else(|| format!("unknown scenario `{s}` (hard, intermediate, simple)"))
}

enum Failure {
    Usage(String),
    Run(Error),
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Run(e.into())
    }
}

/// Exit code for a pipeline error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Invalid(_) => EXIT_USAGE,
        Error::Tensor(_) | Error::Checkpoint(_) | Error::Data(_) => EXIT_DATA,
    }
}

/// Parse `args` and run the command.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), DataError> {
    fs::write(path, text).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn check_label(label: u8) -> Result<(), Failure> {
    if label as usize >= N_CLASSES {
        return Err(Failure::Usage(format!("class label {label} out of range [0, {N_CLASSES})")));
    }
    Ok(())
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::MakeToyData { out, per_class, seed } => {
            if per_class == 0 {
                return Err(Failure::Usage("--per-class must be >= 1".into()));
            }
            let ds = make_toy_dataset(seed, per_class)?;
            save_dataset(&ds, &out)?;
            println!("records={}", ds.len());
        }
        Command::TrainGan {
            data,
            scenario,
            config,
            out,
            class_label,
        } => {
            let mut cfg = config.load()?;
            cfg.scenario = scenario;
            if let Some(k) = class_label {
                check_label(k)?;
            }
            let ds = load_dataset(&data)?;
            create_dir(&out)?;
            write_text(&out.join("config.txt"), &cfg.render())?;
            let (model, report) = train_gan_on(&cfg, &ds, class_label)?;
            write_text(&out.join("curves.csv"), &report.to_csv())?;
            save_params(&model.to_checkpoint(), &out, "gan.ckpt")?;
            if !report.samples.is_empty() {
                let dir = out.join("samples");
                create_dir(&dir)?;
                for (step, grid) in &report.samples {
                    write_pgm(&dir.join(format!("step_{step:06}.pgm")), grid)?;
                }
            }
            let last = report.records.last();
            println!("steps={}", report.records.len());
            if let Some(r) = last {
                println!("final_M={} final_k={}", r.m, r.k);
            }
        }
        Command::Sample {
            model,
            n,
            seed,
            out,
            upsample_to_full,
        } => {
            if n == 0 {
                return Err(Failure::Usage("--n must be >= 1".into()));
            }
            let gan = GanModel::from_checkpoint(load_checkpoint(&model).map_err(Error::from)?, 0.0).map_err(Error::from)?;
            create_dir(&out)?;
            for (i, plane) in sample(&gan, n, seed)?.iter().enumerate() {
                let plane = if upsample_to_full {
                    to_full_resolution(plane)?
                } else {
                    plane.clone()
                };
                let img = GrayImage {
                    width: plane.width,
                    height: plane.height,
                    pixels: plane.to_bytes(),
                };
                write_pgm(&out.join(format!("sample_{i:05}.pgm")), &img)?;
            }
            println!("written={n}");
        }
        Command::TrainClassifier { data, init, config, out } => {
            let cfg = config.load()?;
            let init = match init.as_str() {
                "random" => InitMode::Random,
                path => InitMode::FromCheckpoint(PathBuf::from(path)),
            };
            let ds = load_dataset(&data)?;
            let (train, test) = split_for_training(&ds, cfg.train_frac, cfg.seed)?;
            let mut model = init_classifier(&cfg.classifier_config(), &init, cfg.seed)?;
            create_dir(&out)?;
            write_text(&out.join("config.txt"), &cfg.render())?;
            let eval = (!test.is_empty()).then_some(&test);
            let report = train_classifier(&mut model, &train, eval, &cfg.classifier_options(), &init.label())?;
            write_text(&out.join("epochs.csv"), &report.to_csv())?;
            write_text(&out.join("summary.txt"), &report.summary())?;
            save_params(&model.to_checkpoint(), &out, "classifier.ckpt")?;
            print!("{}", report.summary());
            if let Some(e) = &report.eval {
                print!("{}", e.render());
            }
        }
        Command::Evaluate { model, data } => {
            let clf = Classifier::from_checkpoint(load_checkpoint(&model).map_err(Error::from)?).map_err(Error::from)?;
            let ds = load_dataset(&data)?;
            print!("{}", evaluate(&clf, &ds)?.render());
        }
        Command::Augment {
            data,
            synthetic,
            class_label,
            out,
        } => {
            let ds = load_dataset(&data)?;
            let images = read_synthetic_dir(&synthetic)?;
            let merged = augment_dataset_named(&ds, &images, class_label)?;
            save_dataset(&merged, &out)?;
            println!("{}", merged.counts().summary_line());
        }
        Command::Ablation {
            data,
            config,
            out,
            pretrained,
        } => {
            let cfg = config.load()?;
            let ds = load_dataset(&data)?;
            create_dir(&out)?;
            write_text(&out.join("config.txt"), &cfg.render())?;
            let source = match pretrained {
                Some(p) => p,
                None => save_params(&pretrain_standin(&cfg, cfg.toy_per_class)?, &out, "pretrained.ckpt")?,
            };
            let report = run_ablation(&cfg, &ds, &InitMode::FromCheckpoint(source))?;
            write_text(&out.join("report.txt"), &report.render())?;
            print!("{}", report.render());
        }
        Command::AugmentExperiment { data, config, out } => {
            let cfg = config.load()?;
            let ds = load_dataset(&data)?;
            create_dir(&out)?;
            write_text(&out.join("config.txt"), &cfg.render())?;
            let report = run_augmentation(&cfg, &ds)?;
            write_text(&out.join("curves.csv"), &report.gan.to_csv())?;
            write_text(&out.join("report.txt"), &report.render())?;
            print!("{}", report.render());
        }
        Command::Verify { perturb_op } => {
            let report = run_verify(&VerifyOptions { perturb: perturb_op });
            print!("{}", report.render());
            if !report.all_passed() {
                let names: Vec<&str> = report.failures().iter().map(|r| r.name.as_str()).collect();
                return Err(Failure::Verify(names.join(", ")));
            }
        }
    }
    Ok(())
}

/// `(file stem, pixels)` for every `.pgm` in `dir`, sorted by file name.
fn read_synthetic_dir(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, DataError> {
    if !dir.is_dir() {
        return Err(DataError::MissingFile { path: dir.to_path_buf() });
    }
    let entries = fs::read_dir(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|source| DataError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        if path.extension().is_some_and(|e| e == "pgm") {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let img = read_pgm(&p)?;
            if img.width != PATCH_SIZE || img.height != PATCH_SIZE {
                return Err(DataError::ImageShape {
                    path: p,
                    width: img.width,
                    height: img.height,
                    expected: PATCH_SIZE,
                });
            }
            Ok((id, img.pixels))
        })
        .collect()
}
