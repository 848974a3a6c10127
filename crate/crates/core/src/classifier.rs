//! Residual patch classifier with a three-layer fully connected head,
//! softmax cross-entropy training and accuracy/confusion evaluation.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::began::net::{conv, fc, uniform};
use crate::began::Tracking;
use crate::data::{box_downsample, resize_bilinear, PatchDataset, PatchRecord, N_CLASSES, PATCH_SIZE};
use crate::error::{CheckpointError, DataError, Error, TensorError};
use crate::rng;
use crate::tensor::{
    load_checkpoint, meta_tensor, meta_values, Adam, CustomOp, Graph, ParamSet, Real, Tensor, Var,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    /// Side of the square network input; patches are resampled to it.
    pub input_size: usize,
    /// Channels after the stem; doubled at every later stage.
    pub base_width: usize,
    pub blocks_per_stage: Vec<usize>,
    pub head_dims: Vec<usize>,
    pub n_classes: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            input_size: 32,
            base_width: 8,
            blocks_per_stage: vec![1, 1],
            head_dims: vec![256, 256, N_CLASSES],
            n_classes: N_CLASSES,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |reason: String| Err(TensorError::invalid("classifier config", reason));
        if self.head_dims.last() != Some(&self.n_classes) {
            return bad(format!(
                "last head dim must equal n_classes ({}), got {:?}",
                self.n_classes, self.head_dims
            ));
        }
        if self.head_dims.contains(&0) || self.n_classes < 2 {
            return bad("head dims must be positive and n_classes >= 2".into());
        }
        if self.blocks_per_stage.is_empty() {
            return bad("at least one stage is required".into());
        }
        let div = 1usize << self.blocks_per_stage.len();
        if self.input_size == 0 || self.input_size % div != 0 {
            return bad(format!(
                "input_size {} must be divisible by 2^{} (one pooling per stage)",
                self.input_size,
                self.blocks_per_stage.len()
            ));
        }
        if self.base_width == 0 {
            return bad("base_width must be >= 1".into());
        }
        Ok(())
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    /// Width of the globally pooled feature vector fed to the head.
    pub fn pooled_width(&self) -> usize {
        self.stage_width(self.blocks_per_stage.len() - 1)
    }

    fn to_meta(&self) -> Vec<f64> {
        let mut v = vec![
            self.input_size as f64,
            self.base_width as f64,
            self.n_classes as f64,
            self.blocks_per_stage.len() as f64,
        ];
        v.extend(self.blocks_per_stage.iter().map(|&b| b as f64));
        v.extend(self.head_dims.iter().map(|&d| d as f64));
        v
    }

    fn from_meta(v: &[f64]) -> Option<Self> {
        let n_stages = *v.get(3)? as usize;
        let (blocks, head) = v.get(4..)?.split_at_checked(n_stages)?;
        Some(ClassifierConfig {
            input_size: v[0] as usize,
            base_width: v[1] as usize,
            n_classes: v[2] as usize,
            blocks_per_stage: blocks.iter().map(|&b| b as usize).collect(),
            head_dims: head.iter().map(|&d| d as usize).collect(),
        })
    }
}

/// Where backbone weights come from.
#[derive(Clone, Debug, PartialEq)]
pub enum InitMode {
    Random,
    FromCheckpoint(PathBuf),
}

impl InitMode {
    pub fn label(&self) -> String {
        match self {
            InitMode::Random => "random".into(),
            InitMode::FromCheckpoint(p) => format!("checkpoint:{}", p.display()),
        }
    }
}

const META: &str = "__meta.classifier";

fn add_he_conv<T: Real>(ps: &mut ParamSet<T>, name: &str, out_ch: usize, in_ch: usize, rng: &mut impl Rng) -> Result<(), TensorError> {
    let bound = (6.0 / (in_ch * 9) as f64).sqrt();
    ps.insert(&format!("{name}.w"), uniform(&[out_ch, in_ch, 3, 3], bound, rng))?;
    ps.insert(&format!("{name}.b"), Tensor::zeros(&[out_ch]))
}

fn add_he_fc<T: Real>(ps: &mut ParamSet<T>, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Result<(), TensorError> {
    let bound = (6.0 / inputs as f64).sqrt();
    ps.insert(&format!("{name}.w"), uniform(&[inputs, outputs], bound, rng))?;
    ps.insert(&format!("{name}.b"), Tensor::zeros(&[outputs]))
}

fn backbone_params<T: Real>(cfg: &ClassifierConfig, rng: &mut impl Rng) -> Result<ParamSet<T>, TensorError> {
    let mut ps = ParamSet::new();
    add_he_conv(&mut ps, "backbone.stem", cfg.base_width, 1, rng)?;
    let mut width = cfg.base_width;
    for (s, &blocks) in cfg.blocks_per_stage.iter().enumerate() {
        let out = cfg.stage_width(s);
        if out != width {
            add_he_conv(&mut ps, &format!("backbone.s{s}.proj"), out, width, rng)?;
            width = out;
        }
        for b in 0..blocks {
            add_he_conv(&mut ps, &format!("backbone.s{s}.b{b}.c1"), width, width, rng)?;
            add_he_conv(&mut ps, &format!("backbone.s{s}.b{b}.c2"), width, width, rng)?;
        }
    }
    Ok(ps)
}

fn head_params<T: Real>(cfg: &ClassifierConfig, rng: &mut impl Rng) -> Result<ParamSet<T>, TensorError> {
    let mut ps = ParamSet::new();
    let mut inputs = cfg.pooled_width();
    for (i, &d) in cfg.head_dims.iter().enumerate() {
        add_he_fc(&mut ps, &format!("head.fc{i}"), inputs, d, rng)?;
        inputs = d;
    }
    Ok(ps)
}

/// `x + relu(conv2(relu(conv1(x))))`; with all-zero weights this is the identity.
pub fn residual_block<'g, T: Real>(
    g: &'g Graph<T>,
    ps: &ParamSet<T>,
    name: &str,
    x: Var<'g, T>,
    tracking: Tracking,
) -> Result<Var<'g, T>, TensorError> {
    let h = conv(g, ps, &format!("{name}.c1"), x, tracking)?.relu();
    let h = conv(g, ps, &format!("{name}.c2"), h, tracking)?.relu();
    x.add(&h)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<T> {
    pub cfg: ClassifierConfig,
    pub params: ParamSet<T>,
}

impl<T: Real> Classifier<T> {
    /// Random backbone and head from seeded streams.
    pub fn new(cfg: &ClassifierConfig, seed: u64) -> Result<Self, TensorError> {
        cfg.validate()?;
        let mut params = backbone_params(cfg, &mut rng::stream(seed, "classifier.init.backbone"))?;
        params.extend(head_params(cfg, &mut rng::stream(seed, "classifier.init.head"))?)?;
        Ok(Classifier {
            cfg: cfg.clone(),
            params,
        })
    }

    /// Backbone copied from `source` (every backbone name must be present
    /// with a matching shape); head freshly randomized.
    pub fn with_backbone(cfg: &ClassifierConfig, source: &ParamSet<T>, seed: u64) -> Result<Self, CheckpointError> {
        let mut model = Self::new(cfg, seed).map_err(|e| CheckpointError::Meta(e.to_string()))?;
        let names: Vec<String> = model
            .params
            .names()
            .filter(|n| n.starts_with("backbone."))
            .map(str::to_string)
            .collect();
        for name in names {
            let src = source
                .get(&name)
                .ok_or_else(|| CheckpointError::MissingParam(name.clone()))?;
            let dst = model.params.get_mut(&name).expect("listed name");
            if src.value.shape() != dst.value.shape() {
                return Err(CheckpointError::ParamShape {
                    name,
                    expected: dst.value.shape().to_vec(),
                    got: src.value.shape().to_vec(),
                });
            }
            dst.value = src.value.clone();
        }
        Ok(model)
    }

    pub fn head_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with("head."))
            .map(|p| p.value.len())
            .sum()
    }

    /// Logits `[N, n_classes]` for images `[N,1,S,S]`.
    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>, tracking: Tracking) -> Result<Var<'g, T>, TensorError> {
        let s = self.cfg.input_size;
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != s || shape[3] != s {
            return Err(TensorError::shape("classifier", format!("[N,1,{s},{s}]"), &shape));
        }
        let ps = &self.params;
        let mut h = conv(g, ps, "backbone.stem", x, tracking)?.relu();
        for (st, &blocks) in self.cfg.blocks_per_stage.iter().enumerate() {
            h = h.avgpool2x()?;
            let proj = format!("backbone.s{st}.proj");
            if ps.contains(&format!("{proj}.w")) {
                h = conv(g, ps, &proj, h, tracking)?.relu();
            }
            for b in 0..blocks {
                h = residual_block(g, ps, &format!("backbone.s{st}.b{b}"), h, tracking)?;
            }
        }
        h = h.global_avg_pool()?;
        let last = self.cfg.head_dims.len() - 1;
        for i in 0..=last {
            h = fc(g, ps, &format!("head.fc{i}"), h, tracking)?;
            if i < last {
                h = h.relu();
            }
        }
        Ok(h)
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let g = Graph::new();
        let out = self.forward(&g, g.input(x.clone()), Tracking::Frozen)?;
        Ok((*out.value()).clone())
    }

    /// Network input for a batch of records (resampled and normalized).
    pub fn batch_tensor(&self, records: &[&PatchRecord]) -> Result<Tensor<T>, Error> {
        let s = self.cfg.input_size;
        let mut data = Vec::with_capacity(records.len() * s * s);
        for r in records {
            data.extend(prepare_input(r, s)?.into_iter().map(|v| T::from_f64_lossy(v as f64)));
        }
        Ok(Tensor::new(&[records.len(), 1, s, s], data)?)
    }
}

/// Normalized `size x size` input for one patch: box average when the
/// patch side is a multiple of `size`, bilinear resampling otherwise.
pub fn prepare_input(record: &PatchRecord, size: usize) -> Result<Vec<f32>, DataError> {
    let plane = record.plane();
    let out = if PATCH_SIZE % size == 0 {
        box_downsample(&plane, PATCH_SIZE / size)?
    } else {
        resize_bilinear(&plane, size)?
    };
    Ok(out.data)
}

impl Classifier<f32> {
    pub fn to_checkpoint(&self) -> ParamSet<f32> {
        let mut ps = self.params.clone();
        ps.set(META, meta_tensor(&self.cfg.to_meta()));
        ps
    }

    pub fn from_checkpoint(mut ps: ParamSet<f32>) -> Result<Self, CheckpointError> {
        let meta = ps
            .remove(META)
            .ok_or_else(|| CheckpointError::Meta(format!("missing `{META}`; not a classifier checkpoint")))?;
        let cfg = ClassifierConfig::from_meta(&meta_values(&meta.value))
            .ok_or_else(|| CheckpointError::Meta(format!("malformed `{META}`")))?;
        let mut model = Classifier::new(&cfg, 0).map_err(|e| CheckpointError::Meta(e.to_string()))?;
        for p in model.params.iter_mut() {
            let src = ps
                .remove(&p.name)
                .ok_or_else(|| CheckpointError::MissingParam(p.name.clone()))?;
            if src.value.shape() != p.value.shape() {
                return Err(CheckpointError::ParamShape {
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    got: src.value.shape().to_vec(),
                });
            }
            p.value = src.value;
        }
        if let Some(extra) = ps.names().next() {
            return Err(CheckpointError::Meta(format!("unexpected parameter `{extra}`")));
        }
        Ok(model)
    }
}

struct SoftmaxXent {
    /// Row-major softmax probabilities.
    probs: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl<T: Real> CustomOp<T> for SoftmaxXent {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let n = self.labels.len();
        let up = grad.item().to_f64().unwrap_or(0.0) / n as f64;
        let mut d = self.probs.clone();
        for (i, &l) in self.labels.iter().enumerate() {
            d[i * self.classes + l] -= 1.0;
        }
        let data = d.into_iter().map(|v| T::from_f64_lossy(v * up)).collect();
        vec![Some(Tensor::new(&[n, self.classes], data).expect("logit shape"))]
    }
}

/// Mean negative log-softmax at the true labels, stabilized by subtracting
/// each row's maximum. Evaluated in f64 regardless of `T`.
pub fn softmax_cross_entropy<'g, T: Real>(logits: &Var<'g, T>, labels: &[usize]) -> Result<Var<'g, T>, TensorError> {
    let shape = logits.shape();
    let &[n, classes] = shape.as_slice() else {
        return Err(TensorError::shape("softmax_cross_entropy", "[N,C]", &shape));
    };
    if labels.len() != n {
        return Err(TensorError::invalid(
            "softmax_cross_entropy",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(TensorError::invalid(
            "softmax_cross_entropy",
            format!("label {l} outside [0,{classes})"),
        ));
    }
    let value = logits.value();
    let mut probs = Vec::with_capacity(n * classes);
    let mut total = 0.0;
    for (row, &l) in value.data().chunks(classes).zip(labels) {
        let row: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() - (row[l] - max);
        probs.extend(exps.iter().map(|e| e / z));
    }
    let loss = Tensor::scalar(T::from_f64_lossy(total / n as f64));
    Ok(logits.graph().custom(
        &[*logits],
        loss,
        Box::new(SoftmaxXent {
            probs,
            labels: labels.to_vec(),
            classes,
        }),
    ))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Anything that scores a batch of records with one logit row each.
pub trait Scorer {
    fn n_classes(&self) -> usize;
    fn score(&self, records: &[&PatchRecord]) -> Result<Vec<Vec<f64>>, Error>;
}

impl<T: Real> Scorer for Classifier<T> {
    fn n_classes(&self) -> usize {
        self.cfg.n_classes
    }

    fn score(&self, records: &[&PatchRecord]) -> Result<Vec<Vec<f64>>, Error> {
        let logits = self.logits(&self.batch_tensor(records)?)?;
        Ok(logits
            .data()
            .chunks(self.cfg.n_classes)
            .map(|r| r.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

impl Evaluation {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Accuracy line followed by the confusion matrix, rows = true class.
    pub fn render(&self) -> String {
        let mut s = format!("overall_accuracy={}\nconfusion (rows=true, cols=predicted)\n", self.accuracy);
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
            s.push_str(&cells.join(""));
            s.push('\n');
        }
        s
    }
}

/// Fraction of records whose argmax logit equals the label, plus the
/// confusion matrix.
pub fn evaluate(model: &impl Scorer, dataset: &PatchDataset) -> Result<Evaluation, Error> {
    if dataset.is_empty() {
        return Err(DataError::Empty.into());
    }
    let k = model.n_classes();
    let mut confusion = vec![vec![0u64; k]; k];
    let records: Vec<&PatchRecord> = dataset.records().iter().collect();
    for chunk in records.chunks(64) {
        for (r, row) in chunk.iter().zip(model.score(chunk)?) {
            let label = r.label as usize;
            if label >= k {
                return Err(DataError::LabelRange {
                    path: r.id.clone().into(),
                    label: label as i64,
                    n_classes: k,
                }
                .into());
            }
            confusion[label][argmax(&row)] += 1;
        }
    }
    let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / dataset.len() as f64,
        confusion,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierTrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop once an epoch's training accuracy reaches this value.
    pub stop_at_train_acc: Option<f64>,
}

impl Default for ClassifierTrainOptions {
    fn default() -> Self {
        ClassifierTrainOptions {
            epochs: 30,
            batch: 16,
            lr: 1e-3,
            seed: 0,
            stop_at_train_acc: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierReport {
    pub seed: u64,
    pub init_mode: String,
    pub epochs: Vec<EpochRecord>,
    /// Held-out evaluation, when an evaluation set was given.
    pub eval: Option<Evaluation>,
}

impl ClassifierReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{}", e.epoch, e.train_loss, e.train_acc);
        }
        s
    }

    /// `key=value` lines.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        if let Some(e) = &self.eval {
            let _ = writeln!(s, "overall_accuracy={}", e.accuracy);
            let _ = writeln!(s, "eval_records={}", e.total());
        }
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "init_mode={}", self.init_mode);
        let _ = writeln!(s, "epochs_run={}", self.epochs.len());
        if let Some(last) = self.epochs.last() {
            let _ = writeln!(s, "final_train_loss={}", last.train_loss);
            let _ = writeln!(s, "final_train_acc={}", last.train_acc);
        }
        s
    }
}

/// Build the initial model for `init`.
pub fn init_classifier(cfg: &ClassifierConfig, init: &InitMode, seed: u64) -> Result<Classifier<f32>, Error> {
    Ok(match init {
        InitMode::Random => Classifier::new(cfg, seed)?,
        InitMode::FromCheckpoint(path) => Classifier::with_backbone(cfg, &load_checkpoint(path)?, seed)?,
    })
}

/// Train `model` in place on seed-shuffled minibatches with Adam.
pub fn train_classifier(
    model: &mut Classifier<f32>,
    train: &PatchDataset,
    eval: Option<&PatchDataset>,
    opts: &ClassifierTrainOptions,
    init_mode: &str,
) -> Result<ClassifierReport, Error> {
    if train.is_empty() {
        return Err(DataError::Empty.into());
    }
    if opts.batch == 0 {
        return Err(Error::Invalid("batch must be >= 1".into()));
    }
    let k = model.cfg.n_classes;
    if let Some(r) = train.records().iter().find(|r| r.label as usize >= k) {
        return Err(DataError::LabelRange {
            path: r.id.clone().into(),
            label: r.label as i64,
            n_classes: k,
        }
        .into());
    }
    let s = model.cfg.input_size;
    let inputs: Vec<Vec<f32>> = train
        .records()
        .iter()
        .map(|r| prepare_input(r, s))
        .collect::<Result<_, _>>()?;
    let labels: Vec<usize> = train.records().iter().map(|r| r.label as usize).collect();
    let mut opt = Adam::with_lr(opts.lr);
    let mut report = ClassifierReport {
        seed: opts.seed,
        init_mode: init_mode.to_string(),
        epochs: Vec::new(),
        eval: None,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng::stream(opts.seed, &format!("classifier.shuffle.{epoch}")));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(opts.batch) {
            let mut data = Vec::with_capacity(batch.len() * s * s);
            for &i in batch {
                data.extend_from_slice(&inputs[i]);
            }
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let g = Graph::new();
            let x = g.input(Tensor::new(&[batch.len(), 1, s, s], data)?);
            let logits = model.forward(&g, x, Tracking::Train)?;
            let loss = softmax_cross_entropy(&logits, &y)?;
            loss_sum += loss.value().item() as f64 * batch.len() as f64;
            correct += logits
                .value()
                .data()
                .chunks(k)
                .zip(&y)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            model.params.zero_grad();
            g.backward_into(loss, &mut model.params)?;
            opt.step(&mut model.params)?;
        }
        let train_acc = correct as f64 / train.len() as f64;
        report.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc,
        });
        if opts.stop_at_train_acc.is_some_and(|t| train_acc >= t) {
            break;
        }
    }
    if let Some(ds) = eval {
        report.eval = Some(evaluate(model, ds)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0; 7]), 0);
        assert_eq!(argmax(&[-1.0, -0.5]), 1);
    }

    #[test]
    fn config_checks() {
        ClassifierConfig::default().validate().unwrap();
        let bad_head = ClassifierConfig {
            head_dims: vec![256, 256, 6],
            ..Default::default()
        };
        assert!(bad_head.validate().is_err());
        let bad_size = ClassifierConfig {
            input_size: 30,
            ..Default::default()
        };
        assert!(bad_size.validate().is_err());
        let cfg = ClassifierConfig {
            blocks_per_stage: vec![2, 0, 1],
            input_size: 40,
            ..Default::default()
        };
        assert_eq!(ClassifierConfig::from_meta(&cfg.to_meta()), Some(cfg));
    }
}
