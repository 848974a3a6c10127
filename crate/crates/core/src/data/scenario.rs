use rand::Rng;

use super::{PatchRecord, Plane, PATCH_SIZE};
use crate::error::DataError;
use crate::rng;

/// How real patches are turned into GAN training targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    /// Full 160x160 patches.
    Hard,
    /// 2x2 average-pooled to 80x80: same footprint, half the resolution.
    Intermediate,
    /// 80x80 crop: full resolution, a quarter of the footprint.
    Simple,
}

impl Scenario {
    pub fn native_size(self) -> usize {
        match self {
            Scenario::Hard => PATCH_SIZE,
            Scenario::Intermediate | Scenario::Simple => PATCH_SIZE / 2,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hard" => Some(Scenario::Hard),
            "intermediate" => Some(Scenario::Intermediate),
            "simple" => Some(Scenario::Simple),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Hard => "hard",
            Scenario::Intermediate => "intermediate",
            Scenario::Simple => "simple",
        }
    }
}

/// Crop placement for the simple scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropMode {
    /// Uniform random window position, drawn from the seed.
    Train { seed: u64 },
    /// Centred window.
    Eval,
}

/// Turn a stored patch into a normalized training image in [-1, 1].
pub fn scenario_prepare(record: &PatchRecord, scenario: Scenario, mode: CropMode) -> Plane {
    let full = record.plane();
    match scenario {
        Scenario::Hard => full,
        Scenario::Intermediate => box_downsample(&full, 2).expect("160 is even"),
        Scenario::Simple => {
            let side = PATCH_SIZE / 2;
            let span = PATCH_SIZE - side;
            let (x0, y0) = match mode {
                CropMode::Eval => (span / 2, span / 2),
                CropMode::Train { seed } => {
                    let mut r = rng::stream(seed, &format!("crop.{}", record.id));
                    (r.random_range(0..=span), r.random_range(0..=span))
                }
            };
            let mut data = Vec::with_capacity(side * side);
            for y in y0..y0 + side {
                data.extend_from_slice(&full.data[y * PATCH_SIZE + x0..y * PATCH_SIZE + x0 + side]);
            }
            Plane::new(side, side, data).expect("crop size")
        }
    }
}

/// Mean over non-overlapping `factor x factor` blocks.
pub fn box_downsample(img: &Plane, factor: usize) -> Result<Plane, DataError> {
    if factor == 0 || img.width % factor != 0 || img.height % factor != 0 {
        return Err(DataError::Invalid(format!(
            "cannot box-downsample {}x{} by {factor}",
            img.width, img.height
        )));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width / factor, img.height / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for dy in 0..factor {
                let row = (y * factor + dy) * img.width + x * factor;
                acc += img.data[row..row + factor].iter().map(|&v| v as f64).sum::<f64>();
            }
            data.push((acc * inv) as f32);
        }
    }
    Plane::new(w, h, data)
}

/// Corner-aligned bilinear resampling of a square image to `size x size`.
pub fn resize_bilinear(img: &Plane, size: usize) -> Result<Plane, DataError> {
    if img.width != img.height || size < 2 || img.width < 2 {
        return Err(DataError::Invalid(format!(
            "bilinear resize needs square input of side >= 2, got {}x{} -> {size}",
            img.width, img.height
        )));
    }
    let src = img.width;
    let scale = (src - 1) as f64 / (size - 1) as f64;
    let coords: Vec<(usize, f64)> = (0..size)
        .map(|i| {
            let p = i as f64 * scale;
            let i0 = (p.floor() as usize).min(src - 2);
            (i0, p - i0 as f64)
        })
        .collect();
    let mut data = Vec::with_capacity(size * size);
    for &(y0, fy) in &coords {
        for &(x0, fx) in &coords {
            let v = |x: usize, y: usize| img.data[y * src + x] as f64;
            let top = v(x0, y0) + (v(x0 + 1, y0) - v(x0, y0)) * fx;
            let bot = v(x0, y0 + 1) + (v(x0 + 1, y0 + 1) - v(x0, y0 + 1)) * fx;
            data.push((top + (bot - top) * fy) as f32);
        }
    }
    Plane::new(size, size, data)
}

/// Pixel duplication by an integer factor.
pub fn upsample_nearest(img: &Plane, factor: usize) -> Plane {
    let (w, h) = (img.width * factor, img.height * factor);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(img.at(x / factor, y / factor));
        }
    }
    Plane {
        width: w,
        height: h,
        data,
    }
}

/// Bilinear 80x80 -> 160x160.
pub fn upsample_to_full(img: &Plane) -> Result<Plane, DataError> {
    let half = PATCH_SIZE / 2;
    if img.width != half || img.height != half {
        return Err(DataError::Invalid(format!(
            "upsample_to_full expects {half}x{half}, got {}x{}",
            img.width, img.height
        )));
    }
    resize_bilinear(img, PATCH_SIZE)
}
