//! On-disk dataset layout:
//!
//! ```text
//! DIR/index.csv     id,relative_path,label,provenance
//! DIR/classes.txt   one class name per line (optional on load)
//! DIR/images/*.pgm  160x160 P5
//! ```

use std::path::{Path, PathBuf};

use super::pgm::{read_pgm, write_pgm, GrayImage};
use super::{default_class_names, PatchDataset, PatchRecord, Provenance, N_CLASSES, PATCH_SIZE};
use crate::error::DataError;

pub const INDEX_FILE: &str = "index.csv";
const CLASSES_FILE: &str = "classes.txt";
const HEADER: [&str; 4] = ["id", "relative_path", "label", "provenance"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_dataset(ds: &PatchDataset, dir: &Path) -> Result<(), DataError> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(io_err(&images))?;
    let index = dir.join(INDEX_FILE);
    let mut w = csv::Writer::from_path(&index).map_err(|e| csv_err(&index, e))?;
    w.write_record(HEADER).map_err(|e| csv_err(&index, e))?;
    for r in ds.records() {
        let rel = format!("images/{}.pgm", r.id);
        write_pgm(
            &dir.join(&rel),
            &GrayImage {
                width: PATCH_SIZE,
                height: PATCH_SIZE,
                pixels: r.image.clone(),
            },
        )?;
        w.write_record([r.id.as_str(), &rel, &r.label.to_string(), r.provenance.as_str()])
            .map_err(|e| csv_err(&index, e))?;
    }
    w.flush().map_err(io_err(&index))?;
    let classes = dir.join(CLASSES_FILE);
    let mut text = ds.class_names().join("\n");
    text.push('\n');
    std::fs::write(&classes, text).map_err(io_err(&classes))?;
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> DataError {
    DataError::MalformedIndex {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Records come back in index order.
pub fn load_dataset(dir: &Path) -> Result<PatchDataset, DataError> {
    let index = dir.join(INDEX_FILE);
    if !index.is_file() {
        return Err(DataError::MissingFile { path: index });
    }
    let classes_path = dir.join(CLASSES_FILE);
    let class_names = if classes_path.is_file() {
        let text = std::fs::read_to_string(&classes_path).map_err(io_err(&classes_path))?;
        let names: Vec<String> = text.lines().map(str::to_string).collect();
        if names.len() != N_CLASSES {
            return Err(DataError::Invalid(format!(
                "{}: expected {N_CLASSES} class names, found {}",
                classes_path.display(),
                names.len()
            )));
        }
        names
    } else {
        default_class_names()
    };
    let mut rdr = csv::Reader::from_path(&index).map_err(|e| csv_err(&index, e))?;
    let header = rdr.headers().map_err(|e| csv_err(&index, e))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(DataError::MalformedIndex {
            path: index,
            reason: format!("header must be `{}`", HEADER.join(",")),
        });
    }
    let mut ds = PatchDataset::new(class_names);
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_err(&index, e))?;
        let malformed = |reason: String| DataError::MalformedIndex {
            path: index.clone(),
            reason: format!("line {}: {reason}", line + 2),
        };
        if row.len() != 4 {
            return Err(malformed(format!("expected 4 fields, got {}", row.len())));
        }
        let (id, rel, label, prov) = (&row[0], &row[1], &row[2], &row[3]);
        let path: PathBuf = dir.join(rel);
        let label: i64 = label
            .parse()
            .map_err(|_| malformed(format!("label `{label}` is not an integer")))?;
        if !(0..N_CLASSES as i64).contains(&label) {
            return Err(DataError::LabelRange {
                path,
                label,
                n_classes: N_CLASSES,
            });
        }
        let provenance = Provenance::parse(prov)
            .ok_or_else(|| malformed(format!("unknown provenance `{prov}`")))?;
        let img = read_pgm(&path)?;
        if img.width != PATCH_SIZE || img.height != PATCH_SIZE {
            return Err(DataError::ImageShape {
                path,
                width: img.width,
                height: img.height,
                expected: PATCH_SIZE,
            });
        }
        ds.push(PatchRecord::new(id, label as u8, provenance, img.pixels)?)?;
    }
    Ok(ds)
}
