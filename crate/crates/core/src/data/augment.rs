use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{PatchDataset, PatchRecord, Provenance, N_CLASSES};
use crate::error::DataError;
use crate::rng;

/// Record counts by provenance and class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetCounts {
    pub real: usize,
    pub synthetic: usize,
    pub per_class: [usize; N_CLASSES],
}

impl DatasetCounts {
    pub fn of(ds: &PatchDataset) -> Self {
        let mut c = DatasetCounts {
            real: 0,
            synthetic: 0,
            per_class: [0; N_CLASSES],
        };
        for r in ds.records() {
            match r.provenance {
                Provenance::Real => c.real += 1,
                Provenance::Synthetic => c.synthetic += 1,
            }
            c.per_class[r.label as usize] += 1;
        }
        c
    }

    /// `real=.. synthetic=.. class0=.. ... class6=..`
    pub fn summary_line(&self) -> String {
        let mut s = format!("real={} synthetic={}", self.real, self.synthetic);
        for (i, n) in self.per_class.iter().enumerate() {
            s.push_str(&format!(" class{i}={n}"));
        }
        s
    }
}

/// Append synthetic patches (ids `syn_00000`, ...) to a copy of `real`.
pub fn augment_dataset(
    real: &PatchDataset,
    synthetic: &[Vec<u8>],
    class_label: u8,
) -> Result<PatchDataset, DataError> {
    let named: Vec<(String, Vec<u8>)> = synthetic
        .iter()
        .enumerate()
        .map(|(i, img)| (format!("syn_{i:05}"), img.clone()))
        .collect();
    augment_dataset_named(real, &named, class_label)
}

/// Same as [`augment_dataset`] with caller-chosen ids; an id clash with an
/// existing record is an error.
pub fn augment_dataset_named(
    real: &PatchDataset,
    synthetic: &[(String, Vec<u8>)],
    class_label: u8,
) -> Result<PatchDataset, DataError> {
    if class_label as usize >= N_CLASSES {
        return Err(DataError::LabelRange {
            path: "class_label".into(),
            label: class_label as i64,
            n_classes: N_CLASSES,
        });
    }
    let mut out = real.clone();
    for (id, img) in synthetic {
        out.push(PatchRecord::new(
            id.clone(),
            class_label,
            Provenance::Synthetic,
            img.clone(),
        )?)?;
    }
    Ok(out)
}

/// Stratified seed-determined split: within each class, a shuffled
/// `train_frac` share goes to the first set. Relative record order is kept.
pub fn train_test_split(
    ds: &PatchDataset,
    train_frac: f64,
    seed: u64,
) -> (PatchDataset, PatchDataset) {
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.records().iter().enumerate() {
        by_class.entry(r.label).or_default().push(i);
    }
    let mut rng = rng::stream(seed, "data.split");
    let mut in_train = vec![false; ds.len()];
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        let n_train = (idx.len() as f64 * train_frac).round() as usize;
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let mut train = PatchDataset::new(ds.class_names().to_vec());
    let mut test = PatchDataset::new(ds.class_names().to_vec());
    for (r, t) in ds.records().iter().zip(in_train) {
        let target = if t { &mut train } else { &mut test };
        target.push(r.clone()).expect("ids already unique");
    }
    (train, test)
}
