//! Patch datasets, 8-bit intensity conventions, the three generation
//! scenarios, the augmentation merge and a synthetic speckle generator.

mod augment;
mod io;
mod pgm;
mod quantize;
mod scenario;
mod toy;

use std::collections::HashSet;

pub use augment::{augment_dataset, augment_dataset_named, train_test_split, DatasetCounts};
pub use io::{load_dataset, save_dataset, INDEX_FILE};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm, GrayImage};
pub use quantize::{percentile, quantize_to_u8};
pub use scenario::{
    box_downsample, resize_bilinear, scenario_prepare, upsample_nearest, upsample_to_full, CropMode,
    Scenario,
};
pub use toy::{make_toy_dataset, ToyClass};

use crate::error::DataError;

/// Side length of every stored patch.
pub const PATCH_SIZE: usize = 160;
pub const N_CLASSES: usize = 7;

/// Map a byte onto [-1, 1].
pub fn to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Inverse of [`to_unit`] with rounding; out-of-range values saturate.
pub fn to_byte(x: f32) -> u8 {
    let y = ((x as f64 + 1.0) * 127.5).round();
    y.clamp(0.0, 255.0) as u8
}

/// Square-or-rectangular single-channel image with real values.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, DataError> {
        if width * height != data.len() || data.is_empty() {
            return Err(DataError::Invalid(format!(
                "plane {width}x{height} does not match {} values",
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, v: f32) -> Self {
        Plane {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self, DataError> {
        Self::new(width, height, bytes.iter().map(|&b| to_unit(b)).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_byte(v)).collect()
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Real,
    Synthetic,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "real" => Some(Provenance::Real),
            "synthetic" => Some(Provenance::Synthetic),
            _ => None,
        }
    }
}

/// One 160x160 8-bit patch with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecord {
    pub id: String,
    pub label: u8,
    pub provenance: Provenance,
    pub image: Vec<u8>,
}

impl PatchRecord {
    pub fn new(
        id: impl Into<String>,
        label: u8,
        provenance: Provenance,
        image: Vec<u8>,
    ) -> Result<Self, DataError> {
        let id = id.into();
        if label as usize >= N_CLASSES {
            return Err(DataError::LabelRange {
                path: id.into(),
                label: label as i64,
                n_classes: N_CLASSES,
            });
        }
        if image.len() != PATCH_SIZE * PATCH_SIZE {
            return Err(DataError::Invalid(format!(
                "record `{id}`: image has {} pixels, expected {}",
                image.len(),
                PATCH_SIZE * PATCH_SIZE
            )));
        }
        Ok(PatchRecord {
            id,
            label,
            provenance,
            image,
        })
    }

    pub fn plane(&self) -> Plane {
        Plane::from_bytes(PATCH_SIZE, PATCH_SIZE, &self.image).expect("record size checked")
    }
}

pub fn default_class_names() -> Vec<String> {
    ToyClass::ALL.iter().map(|c| c.name().to_string()).collect()
}

/// Ordered patch collection with unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchDataset {
    records: Vec<PatchRecord>,
    class_names: Vec<String>,
    ids: HashSet<String>,
}

impl Default for PatchDataset {
    fn default() -> Self {
        Self::new(default_class_names())
    }
}

impl PatchDataset {
    pub fn new(class_names: Vec<String>) -> Self {
        PatchDataset {
            records: Vec::new(),
            class_names,
            ids: HashSet::new(),
        }
    }

    pub fn push(&mut self, record: PatchRecord) -> Result<(), DataError> {
        if !self.ids.insert(record.id.clone()) {
            return Err(DataError::DuplicateId(record.id));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[PatchRecord] {
        &self.records
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    /// Records of one class, in dataset order.
    pub fn filter_label(&self, label: u8) -> PatchDataset {
        let mut out = PatchDataset::new(self.class_names.clone());
        for r in self.records.iter().filter(|r| r.label == label) {
            out.push(r.clone()).expect("ids already unique");
        }
        out
    }

    pub fn counts(&self) -> DatasetCounts {
        DatasetCounts::of(self)
    }

    /// FNV-1a digest over ids, labels, provenance and pixels.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for r in &self.records {
            r.id.bytes().for_each(&mut eat);
            eat(r.label);
            eat(r.provenance as u8);
            r.image.iter().copied().for_each(&mut eat);
        }
        h
    }
}
