//! Deterministic stand-in for real SAR patches: seven class-specific
//! textures, each multiplied by single-look (unit-mean exponential) speckle
//! and quantized to 8 bits.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::Exp1;

use super::quantize::quantize_to_u8;
use super::{PatchDataset, PatchRecord, Provenance, N_CLASSES, PATCH_SIZE};
use crate::error::DataError;
use crate::rng;

/// Default clip percentiles for 8-bit conversion.
pub const CLIP_PERCENTILES: (f64, f64) = (0.0, 99.5);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyClass {
    Flat,
    StripesHorizontal,
    StripesVertical,
    StripesDiagonal,
    Grid,
    Gradient,
    Blobs,
}

impl ToyClass {
    pub const ALL: [ToyClass; N_CLASSES] = [
        ToyClass::Flat,
        ToyClass::StripesHorizontal,
        ToyClass::StripesVertical,
        ToyClass::StripesDiagonal,
        ToyClass::Grid,
        ToyClass::Gradient,
        ToyClass::Blobs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToyClass::Flat => "flat",
            ToyClass::StripesHorizontal => "stripes_h",
            ToyClass::StripesVertical => "stripes_v",
            ToyClass::StripesDiagonal => "stripes_diag",
            ToyClass::Grid => "grid",
            ToyClass::Gradient => "gradient",
            ToyClass::Blobs => "blobs",
        }
    }

    /// Noise-free reflectivity map, positive everywhere.
    fn texture(self, rng: &mut impl Rng) -> Vec<f64> {
        let n = PATCH_SIZE;
        let period = rng.random_range(24.0..40.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        let wave = |s: f64| 1.0 + 0.8 * (2.0 * PI * s / period + phase).sin();
        let mut out = vec![0.0; n * n];
        match self {
            ToyClass::Flat => out.fill(1.0),
            ToyClass::StripesHorizontal | ToyClass::StripesVertical | ToyClass::StripesDiagonal => {
                for y in 0..n {
                    for x in 0..n {
                        let s = match self {
                            ToyClass::StripesHorizontal => y as f64,
                            ToyClass::StripesVertical => x as f64,
                            _ => (x + y) as f64 / 2f64.sqrt(),
                        };
                        out[y * n + x] = wave(s);
                    }
                }
            }
            ToyClass::Grid => {
                let p = period as usize;
                let (ox, oy) = (rng.random_range(0..p), rng.random_range(0..p));
                for y in 0..n {
                    for x in 0..n {
                        let line = (x + ox) % p < 4 || (y + oy) % p < 4;
                        out[y * n + x] = if line { 2.0 } else { 0.4 };
                    }
                }
            }
            ToyClass::Gradient => {
                let (s, c) = phase.sin_cos();
                let half = n as f64 / 2.0;
                for y in 0..n {
                    for x in 0..n {
                        let t = ((x as f64 - half) * c + (y as f64 - half) * s) / (half * 2f64.sqrt());
                        out[y * n + x] = 1.0 + 0.8 * t;
                    }
                }
            }
            ToyClass::Blobs => {
                let blobs: Vec<(f64, f64, f64)> = (0..6)
                    .map(|_| {
                        (
                            rng.random_range(0.0..n as f64),
                            rng.random_range(0.0..n as f64),
                            rng.random_range(6.0..12.0),
                        )
                    })
                    .collect();
                for y in 0..n {
                    for x in 0..n {
                        out[y * n + x] = 0.3
                            + blobs
                                .iter()
                                .map(|&(bx, by, sig)| {
                                    let r2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                                    2.0 * (-r2 / (2.0 * sig * sig)).exp()
                                })
                                .sum::<f64>();
                    }
                }
            }
        }
        out
    }
}

/// One speckled 8-bit patch of the given class.
pub fn toy_patch(class: ToyClass, rng: &mut impl Rng) -> Result<Vec<u8>, DataError> {
    let texture = class.texture(rng);
    let intensity: Vec<f64> = texture
        .iter()
        .map(|&t| {
            let speckle: f64 = rng.sample(Exp1);
            t * speckle
        })
        .collect();
    quantize_to_u8(&intensity, CLIP_PERCENTILES.0, CLIP_PERCENTILES.1)
}

/// `per_class` patches for each of the seven classes, class-major order.
pub fn make_toy_dataset(seed: u64, per_class: usize) -> Result<PatchDataset, DataError> {
    if per_class == 0 {
        return Err(DataError::Invalid("per_class must be >= 1".into()));
    }
    let mut ds = PatchDataset::default();
    for (label, class) in ToyClass::ALL.iter().enumerate() {
        for i in 0..per_class {
            let mut r = rng::stream(seed, &format!("toy.{label}.{i}"));
            let image = toy_patch(*class, &mut r)?;
            ds.push(PatchRecord::new(
                format!("toy_{label}_{i:05}"),
                label as u8,
                Provenance::Real,
                image,
            )?)?;
        }
    }
    Ok(ds)
}
