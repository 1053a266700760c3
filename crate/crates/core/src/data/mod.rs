//! From raw bytes to standardized training batches.

mod container;
pub(crate) mod header;
mod loader;
mod resize;
mod split;
mod standardize;
mod visualize;

use std::io::Write;
use std::path::Path;

pub use container::{stats_checksum, DatasetContainer, FitOn, PreprocessOptions, Subset};
pub use loader::{decode_grayscale, load_image_dir, LoadedImages};
pub use resize::{resize_bilinear, resize_square, resize_to_32};
pub use split::{eval_batches, split_indices, train_batches, SplitIndices};
pub use standardize::{Standardizer, SIGMA_FLOOR};
pub use visualize::{auto_width, binary_to_image, MalwareImage, Width, AUTO_WIDTH_MAX, AUTO_WIDTH_TABLE};

use crate::error::Result;

/// Writes to a sibling temp file and renames it into place, so readers never
/// see a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
