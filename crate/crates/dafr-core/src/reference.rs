//! Slow, obviously-correct reference implementations.
//!
//! These are the oracles the fast paths in [`crate::layers`] are tested
//! against. They favour the most literal possible transcription of each
//! definition — nested loops, f64 accumulation, no reuse of the code under
//! test — and are compiled only for tests (`feature = "reference"`).

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::tensor::{Scalar, Shape, Tensor};

/// Direct convolution: zero padding `(k-1)/2`, unit stride, so the output
/// spatial size equals the input's. Six nested loops straight from the
/// definition.
pub fn conv2d_naive<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &[T]) -> Tensor<T> {
    let xs = x.shape();
    let ws = w.shape(); // (c_out, c_in, k, k)
    assert_eq!(xs.c, ws.c, "input channels must match kernel");
    assert_eq!(ws.h, ws.w, "kernel must be square");
    assert_eq!(b.len(), ws.n, "one bias per output channel");
    let k = ws.h;
    let pad = (k - 1) / 2;

    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, xs.h, xs.w)).unwrap();
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..xs.h {
                for ox in 0..xs.w {
                    let mut acc = b[co].to_f64();
                    for ci in 0..xs.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy as isize + ky as isize - pad as isize;
                                let ix = ox as isize + kx as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                    continue; // zero padding
                                }
                                let xv = x.at(n, ci, iy as usize, ix as usize).to_f64();
                                let wv = w.at(co, ci, ky, kx).to_f64();
                                acc += xv * wv;
                            }
                        }
                    }
                    out.set(n, co, oy, ox, T::from_f64(acc));
                }
            }
        }
    }
    out
}

/// Transposed convolution by literal scatter: every input pixel stamps the
/// whole `k x k` kernel into a full canvas of size `s*(H-1)+k`, which is then
/// cropped by `floor((k-s)/2)` on the top/left down to exactly `(s*H, s*W)`.
/// Bias is added after the crop.
pub fn deconv2d_naive<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &[T], s: usize) -> Tensor<T> {
    let xs = x.shape();
    let ws = w.shape(); // (c_in, c_out, k, k)
    assert_eq!(xs.c, ws.n, "input channels must match kernel");
    assert_eq!(ws.h, ws.w, "kernel must be square");
    assert_eq!(b.len(), ws.c, "one bias per output channel");
    assert!(s >= 1 && ws.h >= s, "kernel must cover the stride");
    let k = ws.h;
    let (full_h, full_w) = (s * (xs.h - 1) + k, s * (xs.w - 1) + k);
    let off = (k - s) / 2;

    let mut out = Tensor::zeros(Shape::new(xs.n, ws.c, s * xs.h, s * xs.w)).unwrap();
    for n in 0..xs.n {
        for co in 0..ws.c {
            let mut full = vec![0.0f64; full_h * full_w];
            for ci in 0..xs.c {
                for iy in 0..xs.h {
                    for ix in 0..xs.w {
                        let xv = x.at(n, ci, iy, ix).to_f64();
                        for ky in 0..k {
                            for kx in 0..k {
                                let fy = s * iy + ky;
                                let fx = s * ix + kx;
                                full[fy * full_w + fx] += xv * w.at(ci, co, ky, kx).to_f64();
                            }
                        }
                    }
                }
            }
            for oy in 0..s * xs.h {
                for ox in 0..s * xs.w {
                    let v = full[(oy + off) * full_w + (ox + off)] + b[co].to_f64();
                    out.set(n, co, oy, ox, T::from_f64(v));
                }
            }
        }
    }
    out
}

/// Backward pass of [`conv2d_naive`] by literal adjoint loops: walks every
/// output position once and scatters its upstream gradient into the input,
/// kernel, and bias gradients. f64 canvases throughout, cast once at the end.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward_naive<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let xs = x.shape();
    let ws = w.shape();
    assert_eq!(grad_out.shape(), Shape::new(xs.n, ws.n, xs.h, xs.w));
    let k = ws.h;
    let pad = (k - 1) / 2;

    let mut gx = vec![0.0f64; xs.n * xs.c * xs.h * xs.w];
    let mut gw = vec![0.0f64; ws.n * ws.c * ws.h * ws.w];
    let mut gb = vec![0.0f64; ws.n];
    let xi = |n: usize, c: usize, y: usize, xq: usize| ((n * xs.c + c) * xs.h + y) * xs.w + xq;
    let wi = |co: usize, ci: usize, ky: usize, kx: usize| ((co * ws.c + ci) * k + ky) * k + kx;
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..xs.h {
                for ox in 0..xs.w {
                    let g = grad_out.at(n, co, oy, ox).to_f64();
                    gb[co] += g;
                    for ci in 0..xs.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy as isize + ky as isize - pad as isize;
                                let ix = ox as isize + kx as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                    continue;
                                }
                                let (iy, ix) = (iy as usize, ix as usize);
                                gw[wi(co, ci, ky, kx)] += g * x.at(n, ci, iy, ix).to_f64();
                                gx[xi(n, ci, iy, ix)] += g * w.at(co, ci, ky, kx).to_f64();
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(xs, gx.into_iter().map(T::from_f64).collect()).unwrap(),
        Tensor::from_vec(ws, gw.into_iter().map(T::from_f64).collect()).unwrap(),
        gb.into_iter().map(T::from_f64).collect(),
    )
}

/// Backward pass of [`deconv2d_naive`] by adjoint of the literal scatter:
/// the upstream gradient is embedded in the full (uncropped) canvas at the
/// crop offset — positions the crop discarded get zero — and each forward
/// stamp `full[s*i + k] += x * w` turns into the corresponding reads.
#[allow(clippy::type_complexity)]
pub fn deconv2d_backward_naive<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    s: usize,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let xs = x.shape();
    let ws = w.shape(); // (c_in, c_out, k, k)
    assert_eq!(grad_out.shape(), Shape::new(xs.n, ws.c, s * xs.h, s * xs.w));
    let k = ws.h;
    let (full_h, full_w) = (s * (xs.h - 1) + k, s * (xs.w - 1) + k);
    let off = (k - s) / 2;

    let mut gx = vec![0.0f64; xs.n * xs.c * xs.h * xs.w];
    let mut gw = vec![0.0f64; ws.n * ws.c * ws.h * ws.w];
    let mut gb = vec![0.0f64; ws.c];
    let xi = |n: usize, c: usize, y: usize, xq: usize| ((n * xs.c + c) * xs.h + y) * xs.w + xq;
    let wi = |ci: usize, co: usize, ky: usize, kx: usize| ((ci * ws.c + co) * k + ky) * k + kx;
    for n in 0..xs.n {
        for co in 0..ws.c {
            let mut gfull = vec![0.0f64; full_h * full_w];
            for oy in 0..s * xs.h {
                for ox in 0..s * xs.w {
                    let g = grad_out.at(n, co, oy, ox).to_f64();
                    gb[co] += g;
                    gfull[(oy + off) * full_w + (ox + off)] = g;
                }
            }
            for ci in 0..xs.c {
                for iy in 0..xs.h {
                    for ix in 0..xs.w {
                        for ky in 0..k {
                            for kx in 0..k {
                                let g = gfull[(s * iy + ky) * full_w + (s * ix + kx)];
                                gx[xi(n, ci, iy, ix)] += g * w.at(ci, co, ky, kx).to_f64();
                                gw[wi(ci, co, ky, kx)] += g * x.at(n, ci, iy, ix).to_f64();
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(xs, gx.into_iter().map(T::from_f64).collect()).unwrap(),
        Tensor::from_vec(ws, gw.into_iter().map(T::from_f64).collect()).unwrap(),
        gb.into_iter().map(T::from_f64).collect(),
    )
}

/// Plain separable bilinear interpolation of each channel plane, evaluated at
/// the source coordinate `t = (q + off - (k-1)/2) / s` that the cropped
/// 9-tap transposed convolution samples. Grid points outside the plane
/// contribute nothing (the scatter has no padding).
pub fn bilinear_upscale_direct<T: Scalar>(x: &Tensor<T>, s: usize, k: usize) -> Tensor<T> {
    let xs = x.shape();
    let off = (k - s) / 2;
    let center = (k - 1) / 2;
    let weight_at = |q: usize, len: usize| -> Vec<(usize, f64)> {
        let t = (q as f64 + off as f64 - center as f64) / s as f64;
        let i0 = t.floor() as isize;
        let mut taps = Vec::new();
        for i in [i0, i0 + 1] {
            let w = 1.0 - (t - i as f64).abs();
            if w > 0.0 && i >= 0 && (i as usize) < len {
                taps.push((i as usize, w));
            }
        }
        taps
    };

    let mut out = Tensor::zeros(Shape::new(xs.n, xs.c, s * xs.h, s * xs.w)).unwrap();
    for n in 0..xs.n {
        for c in 0..xs.c {
            for oy in 0..s * xs.h {
                let ty = weight_at(oy, xs.h);
                for ox in 0..s * xs.w {
                    let tx = weight_at(ox, xs.w);
                    let mut acc = 0.0f64;
                    for &(iy, wy) in &ty {
                        for &(ix, wx) in &tx {
                            acc += wy * wx * x.at(n, c, iy, ix).to_f64();
                        }
                    }
                    out.set(n, c, oy, ox, T::from_f64(acc));
                }
            }
        }
    }
    out
}

/// Central-difference gradient of `f` with respect to `params`.
pub fn numeric_grad<F>(params: &[f64], mut f: F, step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + step;
        let plus = f(&work);
        work[i] = orig - step;
        let minus = f(&work);
        work[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}

/// Relative error with the denominator floored so comparisons near zero
/// stay meaningful.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(a.abs() + b.abs(), 1e-6)
}

/// Largest pairwise [`rel_error`] between two gradient buffers.
pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_error(x, y))
        .fold(0.0, f64::max)
}

/// Non-separable bicubic resampler: for every output pixel, accumulates the
/// full 2-D neighborhood with product weights and normalizes in one step.
/// Mathematically identical to the separable production path (the 2-D
/// normalizer factors into the per-axis ones) but shares no code with it,
/// so it serves as an independent oracle. Returns unclamped row-major f64.
pub fn bicubic_resize_direct(plane: &[f32], w: usize, h: usize, factor: f64) -> Vec<f64> {
    let cubic = |x: f64| -> f64 {
        let x = x.abs();
        if x <= 1.0 {
            (1.5 * x - 2.5) * x * x + 1.0
        } else if x < 2.0 {
            ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
        } else {
            0.0
        }
    };
    let out_w = (w as f64 * factor).round() as usize;
    let out_h = (h as f64 * factor).round() as usize;
    let scale = factor.min(1.0);
    let support = 2.0 / scale;
    let mut out = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let uy = (oy as f64 + 0.5) / factor - 0.5;
        for ox in 0..out_w {
            let ux = (ox as f64 + 0.5) / factor - 0.5;
            let mut acc = 0.0;
            let mut wsum = 0.0;
            let ylo = (uy - support).floor() as i64;
            let xlo = (ux - support).floor() as i64;
            let taps = (2.0 * support).ceil() as i64 + 2;
            for jy in ylo..ylo + taps {
                let wy = cubic((uy - jy as f64) * scale) * scale;
                if wy == 0.0 {
                    continue;
                }
                let sy = jy.clamp(0, h as i64 - 1) as usize;
                for jx in xlo..xlo + taps {
                    let wx = cubic((ux - jx as f64) * scale) * scale;
                    if wx == 0.0 {
                        continue;
                    }
                    let sx = jx.clamp(0, w as i64 - 1) as usize;
                    acc += wy * wx * plane[sy * w + sx] as f64;
                    wsum += wy * wx;
                }
            }
            out.push(acc / wsum);
        }
    }
    out
}
