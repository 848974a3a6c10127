//! End-to-end harnesses: GAN inputs per scenario, synthetic patch export,
//! the initialization ablation and the augmentation experiment.

use std::fmt::Write as _;

use crate::began::{sample, train_gan, GanModel, GanReport};
use crate::classifier::{init_classifier, train_classifier, ClassifierReport, InitMode};
use crate::config::ExperimentConfig;
use crate::data::{
    augment_dataset, box_downsample, make_toy_dataset, resize_bilinear, scenario_prepare, train_test_split,
    upsample_to_full, CropMode, DatasetCounts, PatchDataset, Plane, Provenance, Scenario, PATCH_SIZE,
};
use crate::error::{DataError, Error};
use crate::rng::derive_seed;
use crate::tensor::save_checkpoint;

/// Resample a plane to `size x size`: box averaging for integer factors,
/// bilinear otherwise.
pub fn resample(plane: &Plane, size: usize) -> Result<Plane, DataError> {
    if plane.width == size && plane.height == size {
        Ok(plane.clone())
    } else if plane.width % size == 0 && plane.width == plane.height {
        box_downsample(plane, plane.width / size)
    } else {
        resize_bilinear(plane, size)
    }
}

/// Scenario-prepared GAN training images at `image_size`.
pub fn gan_inputs(ds: &PatchDataset, scenario: Scenario, image_size: usize, seed: u64) -> Result<Vec<Plane>, DataError> {
    ds.records()
        .iter()
        .map(|r| resample(&scenario_prepare(r, scenario, CropMode::Train { seed }), image_size))
        .collect()
}

/// Bring a generated image to the 160x160 patch grid: the 2x bilinear
/// upsampling for 80x80 outputs, bilinear resampling for other sizes.
pub fn to_full_resolution(plane: &Plane) -> Result<Plane, DataError> {
    match plane.width {
        w if w == PATCH_SIZE => Ok(plane.clone()),
        w if 2 * w == PATCH_SIZE => upsample_to_full(plane),
        _ => resize_bilinear(plane, PATCH_SIZE),
    }
}

/// Real records split stratified into train/held-out; synthetic records
/// always join the training side so evaluation stays on real data and the
/// real partition does not depend on how many synthetic patches exist.
pub fn split_for_training(ds: &PatchDataset, train_frac: f64, seed: u64) -> Result<(PatchDataset, PatchDataset), DataError> {
    let mut real = PatchDataset::new(ds.class_names().to_vec());
    let mut synthetic = Vec::new();
    for r in ds.records() {
        match r.provenance {
            Provenance::Real => real.push(r.clone())?,
            Provenance::Synthetic => synthetic.push(r.clone()),
        }
    }
    let (mut train, test) = train_test_split(&real, train_frac, seed);
    for r in synthetic {
        train.push(r)?;
    }
    Ok((train, test))
}

/// Train a GAN from scratch on one class (or all) of `ds` as configured.
pub fn train_gan_on(cfg: &ExperimentConfig, ds: &PatchDataset, class: Option<u8>) -> Result<(GanModel<f32>, GanReport), Error> {
    let subset = match class {
        Some(c) => ds.filter_label(c),
        None => ds.clone(),
    };
    let net = cfg.net_config();
    let planes = gan_inputs(&subset, cfg.scenario, net.image_size, cfg.seed)?;
    let mut model = GanModel::new(&net, &cfg.loss_config(), cfg.equilibrium(), cfg.lr, cfg.seed)?;
    let report = train_gan(&mut model, &planes, &cfg.gan_options())?;
    Ok((model, report))
}

/// `n` generated patches as 160x160 bytes.
pub fn synthesize(model: &GanModel<f32>, n: usize, seed: u64) -> Result<Vec<Vec<u8>>, Error> {
    if n == 0 {
        return Ok(Vec::new());
    }
    sample(model, n, seed)?
        .iter()
        .map(|p| Ok(to_full_resolution(p)?.to_bytes()))
        .collect()
}

/// Random-init and checkpoint-init classifier runs on the same split.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub random: ClassifierReport,
    pub pretrained: ClassifierReport,
}

impl AblationReport {
    fn acc(r: &ClassifierReport) -> f64 {
        r.eval.as_ref().map_or(f64::NAN, |e| e.accuracy)
    }

    pub fn random_accuracy(&self) -> f64 {
        Self::acc(&self.random)
    }

    pub fn pretrained_accuracy(&self) -> f64 {
        Self::acc(&self.pretrained)
    }

    /// `pretrained - random`.
    pub fn difference(&self) -> f64 {
        self.pretrained_accuracy() - self.random_accuracy()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "random_accuracy={}", self.random_accuracy());
        let _ = writeln!(s, "pretrained_accuracy={}", self.pretrained_accuracy());
        let _ = writeln!(s, "difference={}", self.difference());
        let _ = writeln!(s, "pretrained_init={}", self.pretrained.init_mode);
        let _ = writeln!(s, "seed={}", self.random.seed);
        s
    }
}

pub fn run_ablation(cfg: &ExperimentConfig, ds: &PatchDataset, pretrained: &InitMode) -> Result<AblationReport, Error> {
    let (train, test) = split_for_training(ds, cfg.train_frac, cfg.seed)?;
    let ccfg = cfg.classifier_config();
    let opts = cfg.classifier_options();
    let run = |init: &InitMode| -> Result<ClassifierReport, Error> {
        let mut model = init_classifier(&ccfg, init, cfg.seed)?;
        train_classifier(&mut model, &train, Some(&test), &opts, &init.label())
    };
    Ok(AblationReport {
        random: run(&InitMode::Random)?,
        pretrained: run(pretrained)?,
    })
}

/// Stand-in for externally pretrained weights: a classifier trained on an
/// independently seeded toy set. Returns its checkpoint parameters.
pub fn pretrain_standin(cfg: &ExperimentConfig, per_class: usize) -> Result<crate::tensor::ParamSet<f32>, Error> {
    let seed = derive_seed(cfg.seed, "ablation.pretrain");
    let ds = make_toy_dataset(seed, per_class)?;
    let mut model = init_classifier(&cfg.classifier_config(), &InitMode::Random, seed)?;
    let opts = crate::classifier::ClassifierTrainOptions {
        seed,
        ..cfg.classifier_options()
    };
    train_classifier(&mut model, &ds, None, &opts, "random")?;
    Ok(model.to_checkpoint())
}

/// Baseline vs augmented classifier, both evaluated on the same real
/// held-out split.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationReport {
    pub target_class: u8,
    pub n_synthetic: usize,
    pub train_counts: DatasetCounts,
    pub augmented_counts: DatasetCounts,
    pub gan: GanReport,
    pub baseline: ClassifierReport,
    pub augmented: ClassifierReport,
}

impl AugmentationReport {
    pub fn baseline_accuracy(&self) -> f64 {
        self.baseline.eval.as_ref().map_or(f64::NAN, |e| e.accuracy)
    }

    pub fn augmented_accuracy(&self) -> f64 {
        self.augmented.eval.as_ref().map_or(f64::NAN, |e| e.accuracy)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "baseline_accuracy={}", self.baseline_accuracy());
        let _ = writeln!(s, "augmented_accuracy={}", self.augmented_accuracy());
        let _ = writeln!(s, "difference={}", self.augmented_accuracy() - self.baseline_accuracy());
        let _ = writeln!(s, "target_class={}", self.target_class);
        let _ = writeln!(s, "n_synthetic={}", self.n_synthetic);
        let _ = writeln!(s, "train_counts={}", self.train_counts.summary_line());
        let _ = writeln!(s, "augmented_counts={}", self.augmented_counts.summary_line());
        let _ = writeln!(s, "seed={}", self.baseline.seed);
        s
    }
}

/// Number of synthetic patches for a class with `class_count` real
/// training patches at the configured ratio.
pub fn synthetic_count(class_count: usize, ratio: f64) -> usize {
    (class_count as f64 * ratio).round() as usize
}

pub fn run_augmentation(cfg: &ExperimentConfig, ds: &PatchDataset) -> Result<AugmentationReport, Error> {
    let label = cfg.augment_label;
    let (train, test) = split_for_training(ds, cfg.train_frac, cfg.seed)?;
    let (gan, gan_report) = train_gan_on(cfg, &train, Some(label))?;
    let class_count = train.counts().per_class[label as usize];
    let n_synthetic = synthetic_count(class_count, cfg.synthetic_ratio);
    let synthetic = synthesize(&gan, n_synthetic, derive_seed(cfg.seed, "augment.sample"))?;
    let augmented = augment_dataset(&train, &synthetic, label)?;
    let ccfg = cfg.classifier_config();
    let opts = cfg.classifier_options();
    let run = |data: &PatchDataset| -> Result<ClassifierReport, Error> {
        let mut model = init_classifier(&ccfg, &InitMode::Random, cfg.seed)?;
        train_classifier(&mut model, data, Some(&test), &opts, "random")
    };
    Ok(AugmentationReport {
        target_class: label,
        n_synthetic,
        train_counts: train.counts(),
        augmented_counts: augmented.counts(),
        gan: gan_report,
        baseline: run(&train)?,
        augmented: run(&augmented)?,
    })
}

/// Save `params` under `dir/name`, creating `dir`.
pub fn save_params(params: &crate::tensor::ParamSet<f32>, dir: &std::path::Path, name: &str) -> Result<std::path::PathBuf, Error> {
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    save_checkpoint(params, &path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_and_full_resolution() {
        let p = Plane::filled(80, 80, 0.25);
        assert_eq!(resample(&p, 16).unwrap(), Plane::filled(16, 16, 0.25));
        assert_eq!(to_full_resolution(&p).unwrap(), Plane::filled(160, 160, 0.25));
        assert_eq!(to_full_resolution(&Plane::filled(16, 16, -0.5)).unwrap(), Plane::filled(160, 160, -0.5));
        assert_eq!(resample(&Plane::filled(160, 160, 1.0), 32).unwrap().width, 32);
    }

    #[test]
    fn synthetic_ratio_rounding() {
        assert_eq!(synthetic_count(25000, 5100.0 / 25000.0), 5100);
        assert_eq!(synthetic_count(80, 5100.0 / 25000.0), 16);
        assert_eq!(synthetic_count(250, 5100.0 / 25000.0), 51);
    }

    #[test]
    fn synthetic_records_always_train() {
        let ds = make_toy_dataset(1, 5).unwrap();
        let aug = augment_dataset(&ds, &[vec![7; 160 * 160], vec![9; 160 * 160]], 3).unwrap();
        let (tr, te) = split_for_training(&aug, 0.8, 4).unwrap();
        let (tr0, te0) = train_test_split(&ds, 0.8, 4);
        assert_eq!(te, te0);
        assert_eq!(tr.len(), tr0.len() + 2);
        assert!(te.records().iter().all(|r| r.provenance == Provenance::Real));
    }
}
