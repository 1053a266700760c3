//! Seeded synthetic datasets for convergence checks without Malimg.
//!
//! - `blobs`: isotropic Gaussian clusters in `side²` dimensions.
//! - `patterns`: 32×32 textures (stripes in three orientations and a
//!   checkerboard) with random phase and pixel noise, for the CNN.
//! - `rows`: a bright band whose vertical position encodes the class, so a
//!   model reading rows as timesteps must remember when it saw it.
//! - `toy`: three well-separated clusters in 16 dimensions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::{DatasetContainer, PreprocessOptions};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Blobs,
    Patterns,
    Rows,
    Toy,
}

impl SynthKind {
    pub const ALL: [SynthKind; 4] = [SynthKind::Blobs, SynthKind::Patterns, SynthKind::Rows, SynthKind::Toy];
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Blobs => "blobs",
            SynthKind::Patterns => "patterns",
            SynthKind::Rows => "rows",
            SynthKind::Toy => "toy",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL.into_iter().find(|k| k.to_string() == s).ok_or_else(|| {
            Error::config(format!(
                "unknown synthetic set `{s}` (expected blobs, patterns, rows or toy)"
            ))
        })
    }
}

/// Raw rows before splitting and standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub features: Vec<f32>,
    pub labels: Vec<u8>,
    pub class_names: Vec<String>,
    pub side: usize,
}

/// Standard deviation of the blob centres around the origin. Centres end up
/// about `0.25·√(2·1024) ≈ 11` noise units apart.
const BLOB_SPREAD: f64 = 0.25;
const PIXEL_NOISE: f64 = 0.3;

/// Labels cycle through the classes so every class gets `samples / K` rows
/// (±1) before the split shuffles them.
pub fn generate(kind: SynthKind, samples: usize, seed: u64) -> Result<SynthData> {
    if samples == 0 {
        return Err(Error::config("synthetic set needs at least one sample"));
    }
    let mut rng = substream(seed, Stream::Synth);
    let (classes, side) = match kind {
        SynthKind::Blobs | SynthKind::Patterns | SynthKind::Rows => (4, 32),
        SynthKind::Toy => (3, 4),
    };
    let dim = side * side;
    let mut features = Vec::with_capacity(samples * dim);
    let labels: Vec<u8> = (0..samples).map(|i| (i % classes) as u8).collect();
    match kind {
        SynthKind::Blobs => {
            let spread = Normal::new(0.0, BLOB_SPREAD).expect("positive spread");
            let centres: Vec<Vec<f64>> = (0..classes)
                .map(|_| (0..dim).map(|_| spread.sample(&mut rng)).collect())
                .collect();
            for &l in &labels {
                for &c in &centres[usize::from(l)] {
                    features.push((c + gauss(&mut rng)) as f32);
                }
            }
        }
        SynthKind::Toy => {
            for &l in &labels {
                for j in 0..dim {
                    let centre = if j % classes == usize::from(l) { 3.0 } else { 0.0 };
                    features.push((centre + 0.5 * gauss(&mut rng)) as f32);
                }
            }
        }
        SynthKind::Patterns => {
            for &l in &labels {
                let period = rng.random_range(4..=8) as f64;
                let phase = rng.random_range(0.0..period);
                for y in 0..side {
                    for x in 0..side {
                        let (fy, fx) = (y as f64, x as f64);
                        let on = match l {
                            0 => stripe(fy + phase, period),
                            1 => stripe(fx + phase, period),
                            2 => stripe(fx + fy + phase, period),
                            _ => stripe(fx + phase, period) != stripe(fy + phase, period),
                        };
                        features.push((f64::from(u8::from(on)) + PIXEL_NOISE * gauss(&mut rng)) as f32);
                    }
                }
            }
        }
        SynthKind::Rows => {
            let quarter = side / classes;
            for &l in &labels {
                let width = rng.random_range(2..=quarter / 2);
                let top = usize::from(l) * quarter + rng.random_range(0..=quarter - width);
                for y in 0..side {
                    let on = (top..top + width).contains(&y);
                    for _ in 0..side {
                        features.push((f64::from(u8::from(on)) + PIXEL_NOISE * gauss(&mut rng)) as f32);
                    }
                }
            }
        }
    }
    Ok(SynthData {
        features,
        labels,
        class_names: (0..classes).map(|k| format!("{kind}{k}")).collect(),
        side,
    })
}

/// Generates, splits and standardizes in one go.
pub fn dataset(kind: SynthKind, samples: usize, seed: u64, opts: &PreprocessOptions) -> Result<DatasetContainer> {
    let d = generate(kind, samples, seed)?;
    let opts = PreprocessOptions {
        side: d.side,
        ..opts.clone()
    };
    DatasetContainer::from_raw(d.features, d.labels, d.class_names, &opts)
}

/// The convergence benchmark layout: 2560 samples split 2048 / 512.
pub fn benchmark(kind: SynthKind, seed: u64) -> Result<DatasetContainer> {
    let opts = PreprocessOptions {
        ratio: 0.8,
        batch: 256,
        seed,
        ..PreprocessOptions::default()
    };
    dataset(kind, 2560, seed, &opts)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn stripe(t: f64, period: f64) -> bool {
    t.rem_euclid(period) < period / 2.0
}
