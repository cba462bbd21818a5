//! 8-bit RGB PNG files. Alpha is composited onto white when reading.

use std::path::Path;

use augrpo_core::Image;

use crate::error::{CliError, CliResult};

pub fn read_png(path: &Path) -> CliResult<Image> {
    let decoded = image::open(path).map_err(|e| CliError::at(path, e))?.into_rgba8();
    let (w, h) = decoded.dimensions();
    let mut data = Vec::with_capacity(w as usize * h as usize * 3);
    for px in decoded.pixels() {
        let a = u32::from(px[3]);
        for &c in &px.0[..3] {
            data.push(((u32::from(c) * a + 255 * (255 - a) + 127) / 255) as u8);
        }
    }
    Image::new(w as usize, h as usize, data).map_err(|e| CliError::at(path, e))
}

pub fn write_png(path: &Path, img: &Image) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    image::save_buffer(path, img.as_raw(), img.width() as u32, img.height() as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| CliError::at(path, e))
}

/// Writes a boolean mask as black (unchanged) and white (changed) pixels.
pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> CliResult<()> {
    let data = mask.iter().flat_map(|&m| [if m { 255 } else { 0 }; 3]).collect();
    write_png(path, &Image::new(width, height, data)?)
}

pub fn read_mask(path: &Path) -> CliResult<(usize, usize, Vec<bool>)> {
    let img = read_png(path)?;
    let mask = img.as_raw().chunks_exact(3).map(|p| p[0] >= 128).collect();
    Ok((img.width(), img.height(), mask))
}
