use sargan::data::{
    augment_dataset, encode_pgm, load_dataset, make_toy_dataset, save_dataset, train_test_split,
    GrayImage, PatchDataset, Provenance, ToyClass, INDEX_FILE, PATCH_SIZE,
};
use sargan::error::DataError;

#[test]
fn toy_dataset_counts_and_determinism() {
    let ds = make_toy_dataset(42, 10).unwrap();
    assert_eq!(ds.len(), 70);
    assert_eq!(ds.counts().per_class, [10; 7]);
    let again = make_toy_dataset(42, 10).unwrap();
    assert_eq!(ds, again);
    let other = make_toy_dataset(43, 10).unwrap();
    assert_ne!(ds.checksum(), other.checksum());
    assert!(make_toy_dataset(1, 0).is_err());
}

/// Expected byte mean of unit-mean exponential speckle after clipping at
/// its 99.5th percentile q = ln(200) and mapping [~0, q] onto [0, 255]:
/// 255 * E[min(X, q)] / q = 255 * (1 - e^-q) / q.
fn flat_class_expected_mean() -> f64 {
    let q = 200f64.ln();
    255.0 * (1.0 - (-q).exp()) / q
}

#[test]
fn flat_class_mean_matches_speckle_expectation() {
    let ds = make_toy_dataset(5, 100).unwrap();
    let flat: Vec<_> = ds
        .records()
        .iter()
        .filter(|r| r.label == ToyClass::Flat as u8)
        .collect();
    assert_eq!(flat.len(), 100);
    let total: u64 = flat.iter().flat_map(|r| r.image.iter()).map(|&b| b as u64).sum();
    let mean = total as f64 / (100 * PATCH_SIZE * PATCH_SIZE) as f64;
    let want = flat_class_expected_mean();
    assert!((want - 47.9).abs() < 0.1);
    assert!((mean - want).abs() < 2.0, "mean {mean}, expected {want}");
}

#[test]
fn save_load_round_trip_is_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_toy_dataset(7, 10).unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
    let index = std::fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
    assert!(index.starts_with("id,relative_path,label,provenance\n"));
}

fn one_record_dir(label: &str, size: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    let img = GrayImage {
        width: size,
        height: size,
        pixels: vec![9; size * size],
    };
    std::fs::write(dir.path().join("images/a.pgm"), encode_pgm(&img)).unwrap();
    std::fs::write(
        dir.path().join(INDEX_FILE),
        format!("id,relative_path,label,provenance\na,images/a.pgm,{label},real\n"),
    )
    .unwrap();
    dir
}

#[test]
fn load_errors_name_the_offending_file() {
    let dir = one_record_dir("0", 80);
    match load_dataset(dir.path()) {
        Err(DataError::ImageShape { path, width, .. }) => {
            assert!(path.ends_with("images/a.pgm"));
            assert_eq!(width, 80);
        }
        other => panic!("expected shape error, got {other:?}"),
    }

    let dir = one_record_dir("7", PATCH_SIZE);
    assert!(matches!(
        load_dataset(dir.path()),
        Err(DataError::LabelRange { label: 7, .. })
    ));

    let dir = one_record_dir("0", PATCH_SIZE);
    std::fs::remove_file(dir.path().join("images/a.pgm")).unwrap();
    match load_dataset(dir.path()) {
        Err(DataError::MissingFile { path }) => assert!(path.ends_with("images/a.pgm")),
        other => panic!("expected missing file, got {other:?}"),
    }

    let dir = one_record_dir("0", PATCH_SIZE);
    std::fs::write(dir.path().join("images/a.pgm"), b"P6\n1 1\n255\n\0\0\0").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(DataError::MalformedPgm { .. })));

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(empty.path()), Err(DataError::MissingFile { .. })));
}

#[test]
fn augmentation_merge() {
    let real = make_toy_dataset(3, 36).unwrap().filter_label(0);
    let mut base = make_toy_dataset(3, 36).unwrap();
    let before = base.checksum();

    let same = augment_dataset(&base, &[], 0).unwrap();
    assert_eq!(same, base);

    let synth: Vec<Vec<u8>> = (0..51).map(|i| vec![i as u8; PATCH_SIZE * PATCH_SIZE]).collect();
    // 250-record analog: 36 per class is 252, trim to 250
    let mut trimmed = PatchDataset::new(base.class_names().to_vec());
    for r in base.records().iter().take(250) {
        trimmed.push(r.clone()).unwrap();
    }
    let merged = augment_dataset(&trimmed, &synth, 0).unwrap();
    assert_eq!(merged.len(), 301);
    let c = merged.counts();
    assert_eq!((c.real, c.synthetic), (250, 51));
    assert!(merged.records()[250..].iter().all(|r| r.provenance == Provenance::Synthetic));
    assert!(c.summary_line().contains("synthetic=51"));
    assert_eq!(base.checksum(), before);

    assert!(augment_dataset(&base, &synth, 7).is_err());
    assert_eq!(real.len(), 36);
    // merging the same synthetic ids twice collides
    base = merged;
    assert!(matches!(
        augment_dataset(&base, &synth, 0),
        Err(DataError::DuplicateId(_))
    ));
}

#[test]
fn split_is_stratified_and_deterministic() {
    let ds = make_toy_dataset(9, 10).unwrap();
    let (a, b) = train_test_split(&ds, 0.8, 1);
    assert_eq!((a.len(), b.len()), (56, 14));
    assert_eq!(a.counts().per_class, [8; 7]);
    let (a2, _) = train_test_split(&ds, 0.8, 1);
    assert_eq!(a, a2);
    let (a3, _) = train_test_split(&ds, 0.8, 2);
    assert_ne!(a.checksum(), a3.checksum());
}
