//! Image handling for the SR protocol: bicubic resampling, YCbCr
//! conversion, PSNR, and training-patch extraction.
//!
//! Images are planar float arrays in `[0, 255]`; every exported operation
//! clamps back into that range. The bicubic resampler is the evaluation
//! anchor: Keys kernel `a = -0.5`, half-pixel-centre alignment,
//! edge-replicate boundary, and — crucially for reproducing the standard
//! benchmark numbers — antialiasing when downscaling (the kernel is
//! stretched by the scale factor so it acts as a low-pass filter).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// Float supplies no_std math (floor/round/log10); builds that link std
// resolve the same calls through inherent methods and flag it as unused.
#[allow(unused_imports)]
use num_traits::Float;

use crate::model::NetworkConfig;
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ColorSpace {
    Gray,
    Rgb,
    Ycbcr,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Gray => 1,
            ColorSpace::Rgb | ColorSpace::Ycbcr => 3,
        }
    }
}

/// A planar image: `channels * height * width` floats in `[0, 255]`,
/// channel-major (all of plane 0, then plane 1, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    colorspace: ColorSpace,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, colorspace: ColorSpace) -> Self {
        Image {
            width,
            height,
            colorspace,
            data: vec![0.0; width * height * colorspace.channels()],
        }
    }

    /// Wraps planar data; values are clamped into `[0, 255]`.
    pub fn from_planes(
        width: usize,
        height: usize,
        colorspace: ColorSpace,
        mut data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != width * height * colorspace.channels() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{} {}-channel image",
                data.len(),
                width,
                height,
                colorspace.channels()
            )));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 255.0);
        }
        Ok(Image {
            width,
            height,
            colorspace,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.colorspace.channels()
    }

    #[inline]
    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    #[inline]
    pub fn plane(&self, ch: usize) -> &[f32] {
        let hw = self.width * self.height;
        &self.data[ch * hw..(ch + 1) * hw]
    }

    #[inline]
    pub fn at(&self, ch: usize, y: usize, x: usize) -> f32 {
        self.data[(ch * self.height + y) * self.width + x]
    }

    /// The luminance plane as a grayscale image (converting if RGB).
    pub fn luminance(&self) -> Image {
        match self.colorspace {
            ColorSpace::Gray => self.clone(),
            ColorSpace::Ycbcr => Image {
                width: self.width,
                height: self.height,
                colorspace: ColorSpace::Gray,
                data: self.plane(0).to_vec(),
            },
            ColorSpace::Rgb => rgb_to_ycbcr(self).expect("source is RGB").luminance(),
        }
    }

    /// Axis-aligned crop; the region must lie inside the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * self.channels());
        for ch in 0..self.channels() {
            let plane = self.plane(ch);
            for y in y0..y0 + h {
                data.extend_from_slice(&plane[y * self.width + x0..y * self.width + x0 + w]);
            }
        }
        Ok(Image {
            width: w,
            height: h,
            colorspace: self.colorspace,
            data,
        })
    }
}

/// Image -> `(1, channels, h, w)` tensor. No rescaling: values stay in
/// `[0, 255]`.
pub fn image_to_tensor(img: &Image) -> Tensor<f32> {
    Tensor::from_vec(
        Shape::new(1, img.channels(), img.height, img.width),
        img.data.clone(),
    )
    .expect("image buffer matches its dims")
}

/// Single-batch tensor -> image, clamping into `[0, 255]`.
pub fn tensor_to_image(t: &Tensor<f32>, colorspace: ColorSpace) -> Result<Image> {
    let s = t.shape();
    if s.n != 1 || s.c != colorspace.channels() {
        return Err(Error::ShapeMismatch(format!(
            "tensor {} does not describe a single {}-channel image",
            s,
            colorspace.channels()
        )));
    }
    Image::from_planes(s.w, s.h, colorspace, t.data().to_vec())
}

// ---------------------------------------------------------------------------
// Bicubic resampling

/// Keys cubic kernel with a = -0.5.
#[inline]
pub(crate) fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (1.5 * x - 2.5) * x * x + 1.0
    } else if x < 2.0 {
        ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    } else {
        0.0
    }
}

/// Per-output-pixel taps along one dimension: source indices (already
/// edge-clamped) and normalized weights.
fn resample_taps(in_len: usize, out_len: usize, factor: f64) -> Vec<(Vec<usize>, Vec<f64>)> {
    // When shrinking, stretch the kernel so it low-pass filters.
    let scale = factor.min(1.0);
    let support = 2.0 / scale;
    let taps = (2.0 * support).ceil() as i64 + 2;
    (0..out_len)
        .map(|i| {
            let u = (i as f64 + 0.5) / factor - 0.5;
            let lo = (u - support).floor() as i64;
            let mut idx = Vec::with_capacity(taps as usize);
            let mut w = Vec::with_capacity(taps as usize);
            for k in 0..taps {
                let j = lo + k;
                let weight = cubic((u - j as f64) * scale) * scale;
                if weight != 0.0 {
                    idx.push(j.clamp(0, in_len as i64 - 1) as usize);
                    w.push(weight);
                }
            }
            let sum: f64 = w.iter().sum();
            for weight in &mut w {
                *weight /= sum;
            }
            (idx, w)
        })
        .collect()
}

/// Separable bicubic resize by a single factor on both axes.
pub fn bicubic_resize(img: &Image, factor: f64) -> Result<Image> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "resize factor must be positive, got {factor}"
        )));
    }
    let out_w = (img.width as f64 * factor).round() as usize;
    let out_h = (img.height as f64 * factor).round() as usize;
    if out_w == 0 || out_h == 0 || img.width == 0 || img.height == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize of {}x{} by {factor} degenerates to {out_w}x{out_h}",
            img.width, img.height
        )));
    }
    let taps_y = resample_taps(img.height, out_h, factor);
    let taps_x = resample_taps(img.width, out_w, factor);

    let mut out = Image::new(out_w, out_h, img.colorspace);
    let mut column_pass = vec![0.0f64; out_h * img.width];
    for ch in 0..img.channels() {
        let plane = img.plane(ch);
        // Vertical pass into a f64 intermediate, then horizontal.
        for (oy, (idx, w)) in taps_y.iter().enumerate() {
            for x in 0..img.width {
                let mut acc = 0.0;
                for (&j, &wv) in idx.iter().zip(w) {
                    acc += wv * plane[j * img.width + x] as f64;
                }
                column_pass[oy * img.width + x] = acc;
            }
        }
        let hw = out_w * out_h;
        let out_plane = &mut out.data[ch * hw..(ch + 1) * hw];
        for oy in 0..out_h {
            let row = &column_pass[oy * img.width..(oy + 1) * img.width];
            for (ox, (idx, w)) in taps_x.iter().enumerate() {
                let mut acc = 0.0;
                for (&j, &wv) in idx.iter().zip(w) {
                    acc += wv * row[j];
                }
                out_plane[oy * out_w + ox] = acc.clamp(0.0, 255.0) as f32;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Color

// ITU-R BT.601 studio-swing: Y in [16, 235], Cb/Cr in [16, 240].
const YCBCR_FWD: [[f64; 3]; 3] = [
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
];

pub fn rgb_to_ycbcr(img: &Image) -> Result<Image> {
    if img.colorspace != ColorSpace::Rgb {
        return Err(Error::InvalidArgument(
            "rgb_to_ycbcr needs an RGB image".into(),
        ));
    }
    let hw = img.width * img.height;
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let mut data = vec![0.0f32; 3 * hw];
    for i in 0..hw {
        let (rv, gv, bv) = (r[i] as f64, g[i] as f64, b[i] as f64);
        for (ch, row) in YCBCR_FWD.iter().enumerate() {
            let offset = if ch == 0 { 16.0 } else { 128.0 };
            let v = offset + (row[0] * rv + row[1] * gv + row[2] * bv) / 255.0;
            data[ch * hw + i] = v.clamp(0.0, 255.0) as f32;
        }
    }
    Image::from_planes(img.width, img.height, ColorSpace::Ycbcr, data)
}

pub fn ycbcr_to_rgb(img: &Image) -> Result<Image> {
    if img.colorspace != ColorSpace::Ycbcr {
        return Err(Error::InvalidArgument(
            "ycbcr_to_rgb needs a YCbCr image".into(),
        ));
    }
    let hw = img.width * img.height;
    let (y, cb, cr) = (img.plane(0), img.plane(1), img.plane(2));
    let mut data = vec![0.0f32; 3 * hw];
    for i in 0..hw {
        let yv = 255.0 / 219.0 * (y[i] as f64 - 16.0);
        let cbv = cb[i] as f64 - 128.0;
        let crv = cr[i] as f64 - 128.0;
        let r = yv + 255.0 / 112.0 * 0.701 * crv;
        let g = yv
            - 255.0 / 112.0 * 0.886 * 0.114 / 0.587 * cbv
            - 255.0 / 112.0 * 0.701 * 0.299 / 0.587 * crv;
        let b = yv + 255.0 / 112.0 * 0.886 * cbv;
        data[i] = r.clamp(0.0, 255.0) as f32;
        data[hw + i] = g.clamp(0.0, 255.0) as f32;
        data[2 * hw + i] = b.clamp(0.0, 255.0) as f32;
    }
    Image::from_planes(img.width, img.height, ColorSpace::Rgb, data)
}

// ---------------------------------------------------------------------------
// Metrics

/// Y-channel PSNR in dB with a border of `shave` pixels removed on all
/// sides. Identical images yield `f64::INFINITY`.
pub fn psnr_y(a: &Image, b: &Image, shave: usize) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::ShapeMismatch(format!(
            "psnr over {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if 2 * shave >= a.width.min(a.height) {
        return Err(Error::InvalidArgument(format!(
            "shave {shave} swallows the whole {}x{} image",
            a.width, a.height
        )));
    }
    let ya = a.luminance();
    let yb = b.luminance();
    let (pa, pb) = (ya.plane(0), yb.plane(0));
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for y in shave..a.height - shave {
        for x in shave..a.width - shave {
            let d = pa[y * a.width + x] as f64 - pb[y * a.width + x] as f64;
            sum += d * d;
            count += 1;
        }
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

// ---------------------------------------------------------------------------
// Patches

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PatchMode {
    /// (LR `f_sub` patch, HR `S*f_sub` patch) pairs for the main network.
    Dafr,
    /// (interpolated-LR `f_sub_r` patch, HR `f_sub_r` patch) pairs, both
    /// HR-sized, for residual pretraining.
    Residual,
}

/// Spatially aligned training pairs, each `(input, target)` as
/// `(1, c, side, side)` tensors in `[0, 255]`.
pub struct PatchSet {
    pub pairs: Vec<(Tensor<f32>, Tensor<f32>)>,
    pub mode: PatchMode,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn patch_tensor(img: &Image, x0: usize, y0: usize, side: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(img.channels() * side * side);
    for ch in 0..img.channels() {
        let plane = img.plane(ch);
        for y in y0..y0 + side {
            data.extend_from_slice(&plane[y * img.width + x0..y * img.width + x0 + side]);
        }
    }
    Tensor::from_vec(Shape::new(1, img.channels(), side, side), data)
        .expect("patch buffer matches its dims")
}

/// Cuts grid-aligned training pairs out of an image pair; partial border
/// patches are discarded.
pub fn extract_patches(
    input: &Image,
    hr: &Image,
    cfg: &NetworkConfig,
    stride: usize,
    mode: PatchMode,
) -> Result<PatchSet> {
    if stride < 1 {
        return Err(Error::InvalidArgument("patch stride must be >= 1".into()));
    }
    if input.channels() != cfg.c || hr.channels() != cfg.c {
        return Err(Error::ShapeMismatch(format!(
            "patches for a {}-channel network from {}/{}-channel images",
            cfg.c,
            input.channels(),
            hr.channels()
        )));
    }
    let (side, hr_scale) = match mode {
        PatchMode::Dafr => (cfg.f_sub, cfg.s),
        PatchMode::Residual => (cfg.f_sub_r, 1),
    };
    if hr.width != hr_scale * input.width || hr.height != hr_scale * input.height {
        return Err(Error::ShapeMismatch(format!(
            "misaligned pair: input {}x{}, hr {}x{} (expected {}x that)",
            input.width, input.height, hr.width, hr.height, hr_scale
        )));
    }

    let mut pairs = Vec::new();
    if input.width >= side && input.height >= side {
        let mut y0 = 0;
        while y0 + side <= input.height {
            let mut x0 = 0;
            while x0 + side <= input.width {
                pairs.push((
                    patch_tensor(input, x0, y0, side),
                    patch_tensor(hr, hr_scale * x0, hr_scale * y0, hr_scale * side),
                ));
                x0 += stride;
            }
            y0 += stride;
        }
    }
    Ok(PatchSet { pairs, mode })
}

/// Crops bottom/right so both dimensions are divisible by `s`.
pub fn modcrop(img: &Image, s: usize) -> Image {
    debug_assert!(s >= 1);
    let w = img.width - img.width % s;
    let h = img.height - img.height % s;
    if w == img.width && h == img.height {
        return img.clone();
    }
    img.crop(0, 0, w, h).expect("crop within bounds")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_image(w: usize, h: usize, cs: ColorSpace, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * cs.channels())
            .map(|_| rng.gen_range(0.0f32..255.0))
            .collect();
        Image::from_planes(w, h, cs, data).unwrap()
    }

    /// Smooth synthetic content so resampling comparisons are meaningful.
    fn smooth_image(w: usize, h: usize, seed: u64) -> Image {
        let s = seed as f32;
        let data = (0..h)
            .flat_map(|y| {
                (0..w).map(move |x| {
                    let v = 128.0
                        + 60.0 * ((x as f32 * 0.19 + s) .sin())
                        + 50.0 * ((y as f32 * 0.13 - s * 0.5).cos());
                    v.clamp(0.0, 255.0)
                })
            })
            .collect();
        Image::from_planes(w, h, ColorSpace::Gray, data).unwrap()
    }

    #[test]
    fn constant_images_are_fixed_points_of_resize() {
        let img = Image::from_planes(9, 7, ColorSpace::Gray, vec![128.0; 63]).unwrap();
        for factor in [0.5, 2.0, 3.0, 1.0 / 3.0, 1.5] {
            let out = bicubic_resize(&img, factor).unwrap();
            for &v in out.plane(0) {
                assert!((v - 128.0).abs() < 1e-6, "factor {factor}: {v}");
            }
        }
    }

    #[test]
    fn factor_one_is_identity() {
        let img = noise_image(8, 6, ColorSpace::Gray, 1);
        let out = bicubic_resize(&img, 1.0).unwrap();
        for (a, b) in img.plane(0).iter().zip(out.plane(0)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn output_dims_round_and_degenerate_is_an_error() {
        let img = noise_image(10, 7, ColorSpace::Gray, 2);
        let half = bicubic_resize(&img, 0.5).unwrap();
        assert_eq!((half.width(), half.height()), (5, 4)); // round(3.5) = 4
        let third = bicubic_resize(&img, 1.0 / 3.0).unwrap();
        assert_eq!((third.width(), third.height()), (3, 2));
        assert!(bicubic_resize(&img, 0.01).is_err());
        assert!(bicubic_resize(&img, -2.0).is_err());
    }

    #[test]
    fn upscale_preserves_linear_ramps_in_the_interior() {
        let w = 16;
        let data: Vec<f32> = (0..8)
            .flat_map(|_| (0..w).map(|x| 10.0 + 10.0 * x as f32))
            .collect();
        let img = Image::from_planes(w, 8, ColorSpace::Gray, data).unwrap();
        let up = bicubic_resize(&img, 2.0).unwrap();
        // Interior of a ramp must stay a ramp: cubic interpolation
        // reproduces degree-1 polynomials exactly.
        for y in 4..up.height() - 4 {
            for x in 4..up.width() - 4 {
                let expect = 10.0 + 10.0 * ((x as f32 + 0.5) / 2.0 - 0.5);
                assert!(
                    (up.at(0, y, x) - expect).abs() < 1e-4,
                    "({x},{y}): {} vs {expect}",
                    up.at(0, y, x)
                );
            }
        }
    }

    #[test]
    fn resize_matches_independent_direct_reference() {
        let img = smooth_image(24, 18, 3);
        for factor in [2.0, 0.5, 3.0, 1.0 / 3.0] {
            let fast = bicubic_resize(&img, factor).unwrap();
            let slow = reference::bicubic_resize_direct(
                img.plane(0),
                img.width(),
                img.height(),
                factor,
            );
            assert_eq!(slow.len(), fast.width() * fast.height());
            for (i, (&a, &b)) in fast.plane(0).iter().zip(&slow).enumerate() {
                assert!(
                    (a as f64 - b.clamp(0.0, 255.0)).abs() < 1e-4,
                    "factor {factor}, pixel {i}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn down_up_roundtrip_is_close_on_smooth_content() {
        let img = smooth_image(32, 32, 5);
        let down = bicubic_resize(&img, 0.5).unwrap();
        let up = bicubic_resize(&down, 2.0).unwrap();
        let psnr = psnr_y(&img, &up, 2).unwrap();
        assert!(psnr.is_finite() && psnr > 30.0, "roundtrip PSNR {psnr}");
    }

    #[test]
    fn ycbcr_white_and_black_hit_studio_swing_range() {
        let white = Image::from_planes(1, 1, ColorSpace::Rgb, vec![255.0, 255.0, 255.0]).unwrap();
        let y = rgb_to_ycbcr(&white).unwrap();
        assert!((y.at(0, 0, 0) - 235.0).abs() < 0.5);
        assert!((y.at(1, 0, 0) - 128.0).abs() < 0.5);
        assert!((y.at(2, 0, 0) - 128.0).abs() < 0.5);
        let black = Image::from_planes(1, 1, ColorSpace::Rgb, vec![0.0, 0.0, 0.0]).unwrap();
        let y = rgb_to_ycbcr(&black).unwrap();
        assert!((y.at(0, 0, 0) - 16.0).abs() < 0.5);
    }

    #[test]
    fn ycbcr_roundtrip_is_close() {
        let img = noise_image(9, 5, ColorSpace::Rgb, 7);
        let back = ycbcr_to_rgb(&rgb_to_ycbcr(&img).unwrap()).unwrap();
        for ch in 0..3 {
            for (a, b) in img.plane(ch).iter().zip(back.plane(ch)) {
                assert!((a - b).abs() <= 1.0, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn colorspace_tags_are_enforced() {
        let gray = noise_image(4, 4, ColorSpace::Gray, 9);
        assert!(rgb_to_ycbcr(&gray).is_err());
        assert!(ycbcr_to_rgb(&gray).is_err());
    }

    #[test]
    fn psnr_identical_is_infinite_and_unit_error_is_closed_form() {
        let a = noise_image(12, 12, ColorSpace::Gray, 11);
        assert_eq!(psnr_y(&a, &a, 2).unwrap(), f64::INFINITY);
        let shifted = Image::from_planes(
            12,
            12,
            ColorSpace::Gray,
            a.plane(0).iter().map(|v| v - 1.0).collect(),
        )
        .unwrap();
        // MSE == 1 -> 10*log10(255^2) = 48.1308 dB. Use an offset image
        // whose values stay in range so the clamp is a no-op.
        let base =
            Image::from_planes(12, 12, ColorSpace::Gray, vec![100.0; 144]).unwrap();
        let off = Image::from_planes(12, 12, ColorSpace::Gray, vec![101.0; 144]).unwrap();
        let psnr = psnr_y(&base, &off, 0).unwrap();
        assert!((psnr - 48.1308).abs() < 1e-3);
        assert!(psnr_y(&a, &shifted, 2).unwrap().is_finite());
    }

    #[test]
    fn psnr_is_symmetric_and_shave_hides_border_damage() {
        let a = noise_image(16, 16, ColorSpace::Gray, 13);
        let b = noise_image(16, 16, ColorSpace::Gray, 14);
        assert_eq!(psnr_y(&a, &b, 3).unwrap(), psnr_y(&b, &a, 3).unwrap());

        // Damage only the outermost 2-pixel border.
        let mut damaged = a.plane(0).to_vec();
        for y in 0..16 {
            for x in 0..16 {
                if y < 2 || y >= 14 || x < 2 || x >= 14 {
                    damaged[y * 16 + x] = 255.0 - damaged[y * 16 + x];
                }
            }
        }
        let d = Image::from_planes(16, 16, ColorSpace::Gray, damaged).unwrap();
        assert!(psnr_y(&a, &d, 0).unwrap().is_finite());
        assert_eq!(psnr_y(&a, &d, 2).unwrap(), f64::INFINITY);

        let small = noise_image(8, 8, ColorSpace::Gray, 15);
        assert!(psnr_y(&small, &small, 4).is_err());
        assert!(psnr_y(&a, &small, 0).is_err());
    }

    fn patch_cfg(f_sub: usize, s: usize) -> NetworkConfig {
        NetworkConfig {
            n: 1,
            m: 1,
            c: 1,
            s,
            f_sub,
            f_sub_r: f_sub,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn exact_tiling_produces_the_grid_count() {
        let lr = noise_image(32, 32, ColorSpace::Gray, 17);
        let hr = noise_image(64, 64, ColorSpace::Gray, 18);
        let set = extract_patches(&lr, &hr, &patch_cfg(16, 2), 16, PatchMode::Dafr).unwrap();
        assert_eq!(set.len(), 4);
        for (x, y) in &set.pairs {
            assert_eq!(x.shape(), Shape::new(1, 1, 16, 16));
            assert_eq!(y.shape(), Shape::new(1, 1, 32, 32));
        }
    }

    #[test]
    fn patch_count_matches_grid_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let w = rng.gen_range(9..40);
            let h = rng.gen_range(9..40);
            let f = rng.gen_range(9..=12.min(w).min(h));
            let stride = rng.gen_range(1..8);
            let lr = noise_image(w, h, ColorSpace::Gray, 20);
            let hr = noise_image(2 * w, 2 * h, ColorSpace::Gray, 21);
            let set =
                extract_patches(&lr, &hr, &patch_cfg(f, 2), stride, PatchMode::Dafr).unwrap();
            let expect = ((h - f) / stride + 1) * ((w - f) / stride + 1);
            assert_eq!(set.len(), expect, "w={w} h={h} f={f} stride={stride}");
        }
    }

    #[test]
    fn patches_are_spatially_aligned_and_tile_back() {
        let lr = noise_image(20, 20, ColorSpace::Gray, 23);
        let hr = noise_image(40, 40, ColorSpace::Gray, 24);
        let cfg = patch_cfg(10, 2);
        let set = extract_patches(&lr, &hr, &cfg, 10, PatchMode::Dafr).unwrap();
        assert_eq!(set.len(), 4);
        // Reassemble the non-overlapping HR patches and compare.
        let mut rebuilt = vec![0.0f32; 40 * 40];
        for (i, (_, hrp)) in set.pairs.iter().enumerate() {
            let (by, bx) = (20 * (i / 2), 20 * (i % 2));
            for y in 0..20 {
                for x in 0..20 {
                    rebuilt[(by + y) * 40 + bx + x] = hrp.at(0, 0, y, x);
                }
            }
        }
        assert_eq!(&rebuilt[..], hr.plane(0));
        // And each LR patch covers exactly the matching source window.
        let (lrp, _) = &set.pairs[3];
        for y in 0..10 {
            for x in 0..10 {
                assert_eq!(lrp.at(0, 0, y, x), lr.at(0, 10 + y, 10 + x));
            }
        }
    }

    #[test]
    fn residual_mode_requires_equal_dims() {
        let a = noise_image(24, 24, ColorSpace::Gray, 25);
        let b = noise_image(24, 24, ColorSpace::Gray, 26);
        let set = extract_patches(&a, &b, &patch_cfg(12, 2), 12, PatchMode::Residual).unwrap();
        assert_eq!(set.len(), 4);
        let c = noise_image(48, 48, ColorSpace::Gray, 27);
        assert!(extract_patches(&a, &c, &patch_cfg(12, 2), 12, PatchMode::Residual).is_err());
        // Dafr mode with non-S-aligned dims is rejected.
        assert!(extract_patches(&a, &b, &patch_cfg(12, 2), 12, PatchMode::Dafr).is_err());
    }

    #[test]
    fn modcrop_cases() {
        let img = noise_image(101, 101, ColorSpace::Gray, 29);
        let out = modcrop(&img, 2);
        assert_eq!((out.width(), out.height()), (100, 100));
        let out = modcrop(&img, 1);
        assert_eq!((out.width(), out.height()), (101, 101));
        let img = noise_image(9, 7, ColorSpace::Gray, 30);
        let out = modcrop(&img, 4);
        assert_eq!((out.width(), out.height()), (8, 4));
        // Content is the top-left corner.
        assert_eq!(out.at(0, 0, 0), img.at(0, 0, 0));
        assert_eq!(out.at(0, 3, 7), img.at(0, 3, 7));
    }

    #[test]
    fn tensor_bridge_roundtrips_and_clamps() {
        let img = noise_image(5, 4, ColorSpace::Gray, 31);
        let t = image_to_tensor(&img);
        assert_eq!(t.shape(), Shape::new(1, 1, 4, 5));
        let back = tensor_to_image(&t, ColorSpace::Gray).unwrap();
        assert_eq!(back, img);

        let hot = Tensor::from_vec(
            Shape::new(1, 1, 1, 3),
            vec![-5.0, 300.0, 42.0],
        )
        .unwrap();
        let clamped = tensor_to_image(&hot, ColorSpace::Gray).unwrap();
        assert_eq!(clamped.plane(0), &[0.0, 255.0, 42.0]);
        assert!(tensor_to_image(&hot, ColorSpace::Rgb).is_err());
    }
}
