use proptest::prelude::*;
use rand::Rng;
use sargan::began::Tracking;
use sargan::classifier::*;
use sargan::data::{make_toy_dataset, PatchDataset, PatchRecord, Provenance};
use sargan::error::Error;
use sargan::rng::stream;
use sargan::tensor::{param_grad_check, save_checkpoint, Graph, ParamSet, Tensor};

fn tiny() -> ClassifierConfig {
    ClassifierConfig {
        input_size: 8,
        base_width: 2,
        blocks_per_stage: vec![1, 1],
        head_dims: vec![5, 4, 7],
        n_classes: 7,
    }
}

fn xent_oracle(logits: &[f64], labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for (row, &l) in logits.chunks(k).zip(labels) {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[l].exp() / z).ln();
    }
    total / labels.len() as f64
}

fn xent(logits: Vec<f64>, labels: &[usize]) -> f64 {
    let g = Graph::<f64>::new();
    let n = labels.len();
    let x = g.leaf(Tensor::new(&[n, logits.len() / n], logits).unwrap());
    softmax_cross_entropy(&x, labels).unwrap().value().item()
}

#[test]
fn logits_have_class_shape() {
    let cfg = ClassifierConfig::default();
    let m = Classifier::<f32>::new(&cfg, 1).unwrap();
    let ds = make_toy_dataset(1, 1).unwrap();
    let recs: Vec<&PatchRecord> = ds.records().iter().collect();
    let out = m.logits(&m.batch_tensor(&recs).unwrap()).unwrap();
    assert_eq!(out.shape(), &[7, 7]);
    assert!(out.data().iter().all(|v| v.is_finite()));
    assert!(m.logits(&Tensor::zeros(&[1, 1, 16, 16])).is_err());
}

#[test]
fn head_parameter_count_is_exact() {
    for cfg in [ClassifierConfig::default(), ClassifierConfig { base_width: 5, blocks_per_stage: vec![1, 2, 1], ..Default::default() }] {
        let m = Classifier::<f32>::new(&cfg, 2).unwrap();
        let d = cfg.pooled_width();
        assert_eq!(m.head_param_count(), d * 256 + 256 + 256 * 256 + 256 + 256 * 7 + 7);
    }
}

#[test]
fn zero_residual_block_is_identity() {
    let cfg = ClassifierConfig::default();
    let mut m = Classifier::<f64>::new(&cfg, 3).unwrap();
    for p in m.params.iter_mut().filter(|p| p.name.starts_with("backbone.s0.b0.")) {
        p.value = Tensor::zeros(p.value.shape());
    }
    let mut r = stream(3, "x");
    let x = Tensor::new(&[2, 8, 5, 5], (0..400).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap();
    let g = Graph::new();
    let y = residual_block(&g, &m.params, "backbone.s0.b0", g.input(x.clone()), Tracking::Frozen).unwrap();
    assert_eq!(*y.value(), x);
}

#[test]
fn cross_entropy_reference_values() {
    assert!((xent(vec![0.3; 7], &[4]) - 7f64.ln()).abs() < 1e-9);
    assert!((xent(vec![0.0; 14], &[0, 6]) - 7f64.ln()).abs() < 1e-9);
    let mut hot = vec![0.0; 7];
    hot[2] = 50.0;
    assert!(xent(hot, &[2]) < 1e-6);
    let mut r = stream(4, "logits");
    for _ in 0..20 {
        let logits: Vec<f64> = (0..5 * 7).map(|_| r.random_range(-5.0..5.0)).collect();
        let labels: Vec<usize> = (0..5).map(|_| r.random_range(0..7)).collect();
        assert!((xent(logits.clone(), &labels) - xent_oracle(&logits, &labels, 7)).abs() < 1e-6);
    }
    let g = Graph::<f64>::new();
    let x = g.leaf(Tensor::zeros(&[1, 7]));
    assert!(softmax_cross_entropy(&x, &[7]).is_err());
    assert!(softmax_cross_entropy(&x, &[0, 1]).is_err());
}

proptest! {
    #[test]
    fn cross_entropy_is_shift_invariant(row in proptest::collection::vec(-20.0f64..20.0, 7), shift in -100.0f64..100.0, label in 0usize..7) {
        let base = xent(row.clone(), &[label]);
        let moved = xent(row.iter().map(|v| v + shift).collect(), &[label]);
        prop_assert!(base >= 0.0);
        prop_assert!((base - moved).abs() < 1e-6);
        let shifted: Vec<f64> = row.iter().map(|v| v + shift).collect();
        prop_assert_eq!(argmax(&row), argmax(&shifted));
    }
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut r = stream(5, "g");
    let labels = [1usize, 6, 0];
    let x = Tensor::new(&[3, 7], (0..21).map(|_| r.random_range(-3.0..3.0)).collect()).unwrap();
    let rep = sargan::tensor::grad_check(|_, v| softmax_cross_entropy(&v, &labels), &x, 1e-5).unwrap();
    assert!(rep.max_rel_error < 1e-6, "{rep:?}");
}

#[test]
fn full_classifier_gradient_matches_finite_differences() {
    let cfg = tiny();
    let m = Classifier::<f64>::new(&cfg, 6).unwrap();
    let mut r = stream(6, "img");
    let x = Tensor::new(&[3, 1, 8, 8], (0..192).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let labels = [0usize, 3, 6];
    let names: Vec<String> = m.params.names().filter(|n| n.ends_with(".w")).map(str::to_string).collect();
    for name in names {
        let len = m.params.value(&name).unwrap().len();
        let idx: Vec<usize> = (0..4).map(|_| r.random_range(0..len)).collect();
        let rep = param_grad_check(
            &m.params,
            &name,
            |g, ps| {
                let probe = Classifier { cfg: cfg.clone(), params: ps.clone() };
                let logits = probe.forward(g, g.input(x.clone()), Tracking::Train)?;
                softmax_cross_entropy(&logits, &labels)
            },
            &idx,
            1e-6,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "{name}: {rep:?}");
    }
}

fn opts(epochs: usize, seed: u64) -> ClassifierTrainOptions {
    ClassifierTrainOptions {
        epochs,
        batch: 8,
        lr: 1e-3,
        seed,
        stop_at_train_acc: None,
    }
}

#[test]
fn zero_epochs_leaves_the_model_alone() {
    let ds = make_toy_dataset(7, 1).unwrap();
    let mut m = init_classifier(&ClassifierConfig::default(), &InitMode::Random, 7).unwrap();
    let before = m.params.checksum();
    let rep = train_classifier(&mut m, &ds, None, &opts(0, 7), "random").unwrap();
    assert!(rep.epochs.is_empty());
    assert_eq!(m.params.checksum(), before);
    assert_eq!(rep.to_csv(), "epoch,train_loss,train_acc\n");
    assert!(train_classifier(&mut m, &PatchDataset::default(), None, &opts(1, 7), "random").is_err());
}

#[test]
fn training_is_deterministic() {
    let ds = make_toy_dataset(8, 2).unwrap();
    let run = || {
        let mut m = init_classifier(&ClassifierConfig::default(), &InitMode::Random, 8).unwrap();
        let rep = train_classifier(&mut m, &ds, Some(&ds), &opts(2, 8), "random").unwrap();
        (rep, m.params.checksum())
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.summary().contains("seed=8\ninit_mode=random\n"));
    assert!(a.summary().starts_with("overall_accuracy="));
}

struct Oracle;

impl Scorer for Oracle {
    fn n_classes(&self) -> usize {
        7
    }
    fn score(&self, records: &[&PatchRecord]) -> Result<Vec<Vec<f64>>, Error> {
        Ok(records
            .iter()
            .map(|r| (0..7).map(|c| if c == r.label as usize { 1.0 } else { 0.0 }).collect())
            .collect())
    }
}

struct Constant;

impl Scorer for Constant {
    fn n_classes(&self) -> usize {
        7
    }
    fn score(&self, records: &[&PatchRecord]) -> Result<Vec<Vec<f64>>, Error> {
        Ok(vec![vec![0.25; 7]; records.len()])
    }
}

#[test]
fn evaluation_with_stub_models() {
    let ds = make_toy_dataset(9, 3).unwrap();
    let perfect = evaluate(&Oracle, &ds).unwrap();
    assert_eq!(perfect.accuracy, 1.0);
    for (i, row) in perfect.confusion.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            assert_eq!(c, if i == j { 3 } else { 0 });
        }
    }
    let flat = evaluate(&Constant, &ds).unwrap();
    assert_eq!(flat.accuracy, 3.0 / 21.0);
    assert!(flat.confusion.iter().all(|row| row[0] == 3));
    assert_eq!(flat.total(), 21);
    // tie-break to class 0: accuracy equals class 0's share
    let mut skewed = ds.filter_label(0);
    for r in ds.filter_label(4).records() {
        skewed.push(r.clone()).unwrap();
    }
    assert_eq!(evaluate(&Constant, &skewed).unwrap().accuracy, 0.5);
    assert!(evaluate(&Oracle, &PatchDataset::default()).is_err());
    assert!(flat.render().starts_with("overall_accuracy="));
}

#[test]
fn checkpoint_init_copies_backbone_and_rerandomizes_head() {
    let cfg = ClassifierConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let mut pre = Classifier::<f32>::new(&cfg, 10).unwrap();
    let ds = make_toy_dataset(10, 1).unwrap();
    train_classifier(&mut pre, &ds, None, &opts(1, 10), "random").unwrap();
    let path = dir.path().join("pre.ckpt");
    save_checkpoint(&pre.to_checkpoint(), &path).unwrap();
    let m = init_classifier(&cfg, &InitMode::FromCheckpoint(path.clone()), 10).unwrap();
    for p in m.params.iter() {
        let src = pre.params.get(&p.name).unwrap();
        if p.name.starts_with("backbone.") {
            assert_eq!(
                p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                src.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        } else if p.name.ends_with(".w") {
            assert_ne!(p.value, src.value, "{}", p.name);
        }
    }
    // a checkpoint missing part of the backbone is rejected
    let mut partial: ParamSet<f32> = pre.params.clone();
    partial.remove("backbone.stem.w");
    assert!(Classifier::with_backbone(&cfg, &partial, 1).is_err());
    let wider = ClassifierConfig { base_width: 16, ..cfg.clone() };
    assert!(Classifier::with_backbone(&wider, &pre.params, 1).is_err());
    assert!(init_classifier(&cfg, &InitMode::FromCheckpoint(dir.path().join("none.ckpt")), 1).is_err());
}

#[test]
fn classifier_checkpoint_round_trip() {
    let cfg = ClassifierConfig { blocks_per_stage: vec![2, 1], ..Default::default() };
    let m = Classifier::<f32>::new(&cfg, 11).unwrap();
    let bytes = sargan::tensor::encode_checkpoint(&m.to_checkpoint());
    let back = sargan::tensor::decode_checkpoint(&bytes, std::path::Path::new("m")).unwrap();
    let back = Classifier::from_checkpoint(back).unwrap();
    assert_eq!(back, m);
    assert!(Classifier::from_checkpoint(m.params.clone()).is_err());
}

#[test]
fn out_of_range_labels_are_rejected() {
    let cfg = ClassifierConfig { head_dims: vec![256, 256, 3], n_classes: 3, ..Default::default() };
    let mut m = Classifier::<f32>::new(&cfg, 12).unwrap();
    let mut ds = PatchDataset::default();
    ds.push(PatchRecord::new("a", 5, Provenance::Real, vec![0; 160 * 160]).unwrap()).unwrap();
    assert!(train_classifier(&mut m, &ds, None, &opts(1, 1), "random").is_err());
    assert!(evaluate(&m, &ds).is_err());
}
