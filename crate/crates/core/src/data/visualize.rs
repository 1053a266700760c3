//! Raw bytes → grayscale texture.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// An 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalwareImage {
    pub pixels: Vec<u8>,
    pub height: usize,
    pub width: usize,
    pub label: usize,
    pub source_id: String,
}

impl MalwareImage {
    pub fn new(
        pixels: Vec<u8>,
        height: usize,
        width: usize,
        label: usize,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::input(format!(
                "image of {} pixels does not fit {height}x{width}",
                pixels.len()
            )));
        }
        Ok(Self {
            pixels,
            height,
            width,
            label,
            source_id: source_id.into(),
        })
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }
}

/// Image width used when visualizing a binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Width {
    /// Pick from file size via [`auto_width`].
    #[default]
    Auto,
    Fixed(usize),
}

impl fmt::Display for Width {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Width::Auto => f.write_str("auto"),
            Width::Fixed(w) => write!(f, "{w}"),
        }
    }
}

impl FromStr for Width {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Width::Auto);
        }
        match s.parse::<usize>() {
            Ok(w) if w > 0 => Ok(Width::Fixed(w)),
            _ => Err(Error::config(format!(
                "width must be `auto` or a positive integer, got `{s}`"
            ))),
        }
    }
}

/// File-size → width table, in KiB upper bounds (exclusive).
pub const AUTO_WIDTH_TABLE: [(usize, usize); 7] = [
    (10, 32),
    (30, 64),
    (60, 128),
    (100, 256),
    (200, 384),
    (500, 512),
    (1000, 768),
];
pub const AUTO_WIDTH_MAX: usize = 1024;

pub fn auto_width(len_bytes: usize) -> usize {
    AUTO_WIDTH_TABLE
        .iter()
        .find(|&&(kib, _)| len_bytes < kib * 1024)
        .map_or(AUTO_WIDTH_MAX, |&(_, w)| w)
}

/// Lays bytes out row-major at the chosen width, dropping a trailing
/// partial row.
pub fn binary_to_image(bytes: &[u8], width: Width, label: usize, source_id: &str) -> Result<MalwareImage> {
    if bytes.is_empty() {
        return Err(Error::input(format!("`{source_id}` is empty")));
    }
    let width = match width {
        Width::Auto => auto_width(bytes.len()),
        Width::Fixed(w) => w,
    };
    let height = bytes.len() / width;
    if height == 0 {
        return Err(Error::input(format!(
            "`{source_id}` has {} bytes, fewer than one {width}-pixel row",
            bytes.len()
        )));
    }
    MalwareImage::new(bytes[..height * width].to_vec(), height, width, label, source_id)
}
