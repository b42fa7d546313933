use std::fmt::Write as _;
use std::path::Path;

use super::ImageDataset;
use crate::error::{Error, Result};

/// Binary PGM (P5), 8-bit, values in `[0, 1]` scaled to `0..=255`.
pub fn pgm_bytes(height: usize, width: usize, pixels: &[f32]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(
        pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn write_pgm(path: impl AsRef<Path>, height: usize, width: usize, pixels: &[f32]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, pgm_bytes(height, width, pixels)).map_err(|e| Error::io(path, e))
}

/// Tiles equally sized images into a grid with a one-pixel gap.
pub fn write_grid(
    path: impl AsRef<Path>,
    height: usize,
    width: usize,
    images: &[&[f32]],
    cols: usize,
) -> Result<()> {
    let cols = cols.max(1).min(images.len().max(1));
    let rows = images.len().div_ceil(cols);
    let gh = rows * (height + 1) - 1;
    let gw = cols * (width + 1) - 1;
    let mut grid = vec![0.0f32; gh * gw];
    for (k, img) in images.iter().enumerate() {
        let (r, c) = (k / cols, k % cols);
        for y in 0..height {
            let dst = (r * (height + 1) + y) * gw + c * (width + 1);
            grid[dst..dst + width].copy_from_slice(&img[y * width..(y + 1) * width]);
        }
    }
    write_pgm(path, gh, gw, &grid)
}

/// One PGM per image plus `manifest.csv` with `index,class,file`.
pub fn export_dataset(ds: &ImageDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("index,class,file\n");
    for i in 0..ds.len() {
        let file = format!("{i:06}.pgm");
        write_pgm(dir.join(&file), ds.height, ds.width, ds.image(i))?;
        writeln!(manifest, "{i},{},{file}", ds.label(i)).unwrap();
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).map_err(|e| Error::io(path, e))
}
