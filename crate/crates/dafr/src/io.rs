//! PNG loading and saving, and dataset-folder traversal.
//!
//! Grayscale PNGs map to single-plane images; everything else is decoded
//! to RGB. Values travel as f32 on the [0, 255] scale, planar layout.

use std::fs;
use std::path::{Path, PathBuf};

use dafr_core::imaging::{ColorSpace, Image};
use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{CliError, Result};

/// Decodes one image file. Gray stays gray; color becomes RGB.
pub fn load_image(path: &Path) -> Result<Image> {
    let dynimg = image::open(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    match dynimg {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) => {
            let gray = dynimg.to_luma8();
            let data = gray.pixels().map(|p| p.0[0] as f32).collect();
            Image::from_planes(w, h, ColorSpace::Gray, data)
                .map_err(|e| CliError::Data(e.to_string()))
        }
        _ => {
            let rgb = dynimg.to_rgb8();
            let mut data = vec![0.0f32; 3 * w * h];
            for (i, p) in rgb.pixels().enumerate() {
                data[i] = p.0[0] as f32;
                data[w * h + i] = p.0[1] as f32;
                data[2 * w * h + i] = p.0[2] as f32;
            }
            Image::from_planes(w, h, ColorSpace::Rgb, data)
                .map_err(|e| CliError::Data(e.to_string()))
        }
    }
}

/// Writes a gray or RGB image as 8-bit PNG (values rounded and clamped).
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let quantize = |v: f32| v.round().clamp(0.0, 255.0) as u8;
    let (w, h) = (img.width() as u32, img.height() as u32);
    let err = |e: image::ImageError| {
        CliError::Artifact(format!("cannot write {}: {e}", path.display()))
    };
    match img.colorspace() {
        ColorSpace::Gray => {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(w, h, |x, y| {
                Luma([quantize(img.at(0, y as usize, x as usize))])
            });
            buf.save(path).map_err(err)
        }
        ColorSpace::Rgb => {
            let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(w, h, |x, y| {
                Rgb([
                    quantize(img.at(0, y as usize, x as usize)),
                    quantize(img.at(1, y as usize, x as usize)),
                    quantize(img.at(2, y as usize, x as usize)),
                ])
            });
            buf.save(path).map_err(err)
        }
        ColorSpace::Ycbcr => Err(CliError::Artifact(
            "refusing to write YCbCr data as PNG; convert to RGB first".into(),
        )),
    }
}

/// All PNG files in `dir`, sorted by filename for deterministic order.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("cannot read dataset {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| x.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads a dataset folder. Unreadable files are skipped with a warning on
/// stderr; an empty result is a data error.
pub fn load_dataset(dir: &Path) -> Result<Vec<Image>> {
    let files = list_pngs(dir)?;
    let mut images = Vec::new();
    for f in &files {
        match load_image(f) {
            Ok(img) => images.push(img),
            Err(e) => eprintln!("warning: skipping {}: {e}", f.display()),
        }
    }
    if images.is_empty() {
        return Err(CliError::Data(format!(
            "no readable PNG images in {}",
            dir.display()
        )));
    }
    Ok(images)
}
