//! Bilinear resampling with corner-aligned sample positions.
//!
//! Output pixel `d` along an axis reads source coordinate
//! `s = d·(src − 1)/(dst − 1)` (or the source center when `dst == 1`) and
//! blends the two neighbours `floor(s)` and `floor(s) + 1` linearly. The
//! 2-D result is the product blend of the surrounding 2×2 block, so every
//! output is a convex combination of input pixels.

use super::visualize::MalwareImage;

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    (0..dst)
        .map(|d| {
            let s = if dst > 1 {
                (d * (src - 1)) as f64 / (dst - 1) as f64
            } else {
                (src - 1) as f64 / 2.0
            };
            let lo = (s.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                frac: s - lo as f64,
            }
        })
        .collect()
}

/// Resizes a row-major `src_h × src_w` grid to `dst_h × dst_w`.
pub fn resize_bilinear(src: &[f32], src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Vec<f32> {
    assert!(src_h > 0 && src_w > 0 && dst_h > 0 && dst_w > 0, "empty resize extent");
    assert_eq!(src.len(), src_h * src_w);
    let ys = taps(src_h, dst_h);
    let xs = taps(src_w, dst_w);
    let at = |y: usize, x: usize| f64::from(src[y * src_w + x]);
    let mut out = Vec::with_capacity(dst_h * dst_w);
    for ty in &ys {
        for tx in &xs {
            let top = at(ty.lo, tx.lo) * (1.0 - tx.frac) + at(ty.lo, tx.hi) * tx.frac;
            let bottom = at(ty.hi, tx.lo) * (1.0 - tx.frac) + at(ty.hi, tx.hi) * tx.frac;
            out.push((top * (1.0 - ty.frac) + bottom * ty.frac) as f32);
        }
    }
    out
}

/// Resizes to `side × side` float pixels in [0, 255].
pub fn resize_square(image: &MalwareImage, side: usize) -> Vec<f32> {
    let src: Vec<f32> = image.pixels.iter().map(|&p| f32::from(p)).collect();
    resize_bilinear(&src, image.height, image.width, side, side)
}

pub fn resize_to_32(image: &MalwareImage) -> Vec<f32> {
    resize_square(image, 32)
}
