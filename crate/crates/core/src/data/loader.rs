//! Reads a class-per-subdirectory tree of grayscale images.

use std::fs;
use std::path::{Path, PathBuf};

use super::visualize::MalwareImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LoadedImages {
    pub images: Vec<MalwareImage>,
    /// Subdirectory names in sorted order; label `i` is `class_names[i]`.
    pub class_names: Vec<String>,
    /// Files that could not be decoded, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn is_hidden(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with('.'))
}

pub fn decode_grayscale(path: &Path, label: usize) -> Result<MalwareImage> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    MalwareImage::new(
        img.into_raw(),
        h as usize,
        w as usize,
        label,
        path.display().to_string(),
    )
}

/// Labels come from the index of each subdirectory in sorted name order.
/// Undecodable files are skipped with a warning rather than aborting.
pub fn load_image_dir(root: &Path) -> Result<LoadedImages> {
    if !root.is_dir() {
        return Err(Error::input(format!("`{}` is not a directory", root.display())));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir() && !is_hidden(p))
        .collect();
    if class_dirs.is_empty() {
        return Err(Error::input(format!(
            "`{}` has no class subdirectories",
            root.display()
        )));
    }
    if class_dirs.len() > usize::from(u8::MAX) + 1 {
        return Err(Error::input(format!(
            "{} classes exceed the 256-label limit",
            class_dirs.len()
        )));
    }
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    let mut class_names = Vec::with_capacity(class_dirs.len());
    for (label, dir) in class_dirs.iter().enumerate() {
        class_names.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        for file in sorted_entries(dir)? {
            if !file.is_file() || is_hidden(&file) {
                continue;
            }
            match decode_grayscale(&file, label) {
                Ok(img) => images.push(img),
                Err(e) => {
                    log::warn!("skipping {}: {e}", file.display());
                    skipped.push((file, e.to_string()));
                }
            }
        }
    }
    if images.is_empty() {
        return Err(Error::input(format!("no decodable images under `{}`", root.display())));
    }
    Ok(LoadedImages {
        images,
        class_names,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, w: u32, h: u32, fill: u8) {
        image::GrayImage::from_pixel(w, h, image::Luma([fill]))
            .save(path)
            .unwrap();
    }

    #[test]
    fn labels_follow_sorted_directory_names() {
        let tmp = tempfile::tempdir().unwrap();
        for (dir, fill) in [("Zeta", 9u8), ("Alpha", 1), ("Mid", 5)] {
            fs::create_dir(tmp.path().join(dir)).unwrap();
            write_png(&tmp.path().join(dir).join("a.png"), 4, 3, fill);
        }
        fs::write(tmp.path().join("Mid").join("broken.png"), b"not an image").unwrap();
        fs::write(tmp.path().join("stray.txt"), b"ignored").unwrap();

        let loaded = load_image_dir(tmp.path()).unwrap();
        assert_eq!(loaded.class_names, ["Alpha", "Mid", "Zeta"]);
        let labels: Vec<_> = loaded.images.iter().map(|i| (i.label, i.pixels[0])).collect();
        assert_eq!(labels, [(0, 1), (1, 5), (2, 9)]);
        assert_eq!((loaded.images[0].height, loaded.images[0].width), (3, 4));
        assert_eq!(loaded.skipped.len(), 1);
    }

    #[test]
    fn empty_root_is_an_input_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(load_image_dir(tmp.path()), Err(Error::Input(_))));
        fs::create_dir(tmp.path().join("only")).unwrap();
        assert!(matches!(load_image_dir(tmp.path()), Err(Error::Input(_))));
    }
}
