//! PNG import/export for the fixed 64×64 canvas.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{GrayImage, ImageReader, RgbImage};
use tailor_core::grid::{Image as CanvasImage, CANVAS};

/// Write an image as 8-bit RGB PNG, clamping and rounding each channel.
pub fn save_png(image: &CanvasImage, path: &Path) -> Result<()> {
    let mut out = RgbImage::new(CANVAS as u32, CANVAS as u32);
    for y in 0..CANVAS {
        for x in 0..CANVAS {
            let px = image.get(y, x);
            let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            out.put_pixel(x as u32, y as u32, image::Rgb([quant(px[0]), quant(px[1]), quant(px[2])]));
        }
    }
    out.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Load a 64×64 PNG as a canvas image (alpha is dropped).
pub fn load_png(path: &Path) -> Result<CanvasImage> {
    let decoded = ImageReader::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .decode()
        .with_context(|| format!("decoding {}", path.display()))?
        .to_rgb8();
    if decoded.width() != CANVAS as u32 || decoded.height() != CANVAS as u32 {
        bail!(
            "{}: expected {CANVAS}x{CANVAS}, got {}x{}",
            path.display(),
            decoded.width(),
            decoded.height()
        );
    }
    let mut out = CanvasImage::white();
    for y in 0..CANVAS {
        for x in 0..CANVAS {
            let px = decoded.get_pixel(x as u32, y as u32);
            out.set(
                y,
                x,
                [px[0] as f64 / 255.0, px[1] as f64 / 255.0, px[2] as f64 / 255.0],
            );
        }
    }
    Ok(out)
}

/// Write a grayscale buffer (row-major, width × height) as PNG.
pub fn save_gray_png(pixels: &[u8], width: usize, height: usize, path: &Path) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, pixels.to_vec())
        .context("grayscale buffer size mismatch")?;
    img.save(path).with_context(|| format!("writing {}", path.display()))
}
