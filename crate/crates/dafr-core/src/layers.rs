//! The three layer types the network is built from, with forward and
//! hand-derived backward passes.
//!
//! Convolutions here are always "same" convolutions: odd square kernel,
//! zero padding `(k-1)/2`, unit stride. The transposed convolution is the
//! sub-pixel upsampler: scatter with stride `s`, then a centred crop of
//! `floor((k-s)/2)` rows/columns so the output is exactly `s` times the
//! input. Both implementations iterate kernel taps in the outer loops so
//! the innermost loop is a multiply-add over one contiguous row.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Scalar, Shape, Tensor};
use crate::{Error, Result};

/// Gradients produced by one backward call.
pub struct LayerGrads<T> {
    /// Gradient with respect to the layer input.
    pub x: Tensor<T>,
    /// Gradient with respect to the kernel, same shape as the kernel.
    pub w: Tensor<T>,
    /// Gradient with respect to the bias.
    pub b: Vec<T>,
}

/// Valid input range `ilo..ihi` for one kernel-tap offset `d` (`isize`,
/// relative to the padded origin) so `i + d` stays inside `0..len`.
#[inline]
fn shifted_range(len: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 {
        len.saturating_sub(d as usize)
    } else {
        len
    };
    (lo.min(hi), hi)
}

// ---------------------------------------------------------------------------
// Convolution

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    /// Kernel, `(c_out, c_in, k, k)`.
    pub weights: Tensor<T>,
    /// One bias per output channel.
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    /// Zero-initialised layer with an odd square `k x k` kernel.
    pub fn new(c_out: usize, c_in: usize, k: usize) -> Result<Self> {
        if k == 0 || k % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "convolution kernel size must be odd, got {k}"
            )));
        }
        Ok(ConvLayer {
            weights: Tensor::zeros(Shape::new(c_out, c_in, k, k))?,
            bias: vec![T::zero(); c_out],
        })
    }

    pub fn from_parts(weights: Tensor<T>, bias: Vec<T>) -> Result<Self> {
        let ws = weights.shape();
        if ws.h != ws.w || ws.h % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "convolution kernel must be square with odd size, got {ws}"
            )));
        }
        if bias.len() != ws.n {
            return Err(Error::ShapeMismatch(format!(
                "{} biases for {} output channels",
                bias.len(),
                ws.n
            )));
        }
        Ok(ConvLayer { weights, bias })
    }

    #[inline]
    pub fn c_out(&self) -> usize {
        self.weights.shape().n
    }

    #[inline]
    pub fn c_in(&self) -> usize {
        self.weights.shape().c
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.weights.shape().h
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().c != self.c_in() {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.c_in(),
                x.shape().c
            )));
        }
        Ok(())
    }

    /// Same-size convolution; output is `(n, c_out, h, w)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let xs = x.shape();
        let (k, pad) = (self.k(), (self.k() - 1) / 2);
        let (h, w) = (xs.h, xs.w);
        let mut out = Tensor::zeros(Shape::new(xs.n, self.c_out(), h, w))?;

        for n in 0..xs.n {
            for co in 0..self.c_out() {
                let plane = out.plane_mut(n, co);
                plane.fill(self.bias[co]);
                for ci in 0..xs.c {
                    let xp = x.plane(n, ci);
                    for ky in 0..k {
                        let dy = ky as isize - pad as isize;
                        let (ylo, yhi) = shifted_range(h, dy);
                        for kx in 0..k {
                            let wv = self.weights.at(co, ci, ky, kx);
                            let dx = kx as isize - pad as isize;
                            let (xlo, xhi) = shifted_range(w, dx);
                            if xlo >= xhi {
                                continue;
                            }
                            for oy in ylo..yhi {
                                let iy = (oy as isize + dy) as usize;
                                let orow = &mut plane[oy * w + xlo..oy * w + xhi];
                                let irow = &xp[(iy * w) as usize + (xlo as isize + dx) as usize
                                    ..iy * w + (xhi as isize + dx) as usize];
                                for (o, &xv) in orow.iter_mut().zip(irow) {
                                    *o += wv * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Backward pass; `x` must be the forward input and `grad_out` the
    /// gradient flowing in from above, shaped like the forward output.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LayerGrads<T>> {
        self.check_input(x)?;
        let xs = x.shape();
        let expected = Shape::new(xs.n, self.c_out(), xs.h, xs.w);
        if grad_out.shape() != expected {
            return Err(Error::ShapeMismatch(format!(
                "conv backward expects grad {expected}, got {}",
                grad_out.shape()
            )));
        }
        let (k, pad) = (self.k(), (self.k() - 1) / 2);
        let (h, w) = (xs.h, xs.w);

        let mut grad_b = vec![T::zero(); self.c_out()];
        for n in 0..xs.n {
            for co in 0..self.c_out() {
                let mut acc = T::zero();
                for &g in grad_out.plane(n, co) {
                    acc += g;
                }
                grad_b[co] += acc;
            }
        }

        // Adjoint of the forward scatter: every forward contribution
        // out[oy][ox] += w * x[oy+dy][ox+dx] turns into
        // gx[oy+dy][ox+dx] += w * gout[oy][ox].
        let mut grad_x = Tensor::zeros(xs)?;
        for n in 0..xs.n {
            for ci in 0..xs.c {
                let gx = grad_x.plane_mut(n, ci);
                for co in 0..self.c_out() {
                    let gout = grad_out.plane(n, co);
                    for ky in 0..k {
                        let dy = ky as isize - pad as isize;
                        let (ylo, yhi) = shifted_range(h, dy);
                        for kx in 0..k {
                            let wv = self.weights.at(co, ci, ky, kx);
                            let dx = kx as isize - pad as isize;
                            let (xlo, xhi) = shifted_range(w, dx);
                            if xlo >= xhi {
                                continue;
                            }
                            for oy in ylo..yhi {
                                let iy = (oy as isize + dy) as usize;
                                let grow = &gout[oy * w + xlo..oy * w + xhi];
                                let xrow = &mut gx[(iy * w) as usize
                                    + (xlo as isize + dx) as usize
                                    ..iy * w + (xhi as isize + dx) as usize];
                                for (o, &g) in xrow.iter_mut().zip(grow) {
                                    *o += wv * g;
                                }
                            }
                        }
                    }
                }
            }
        }

        let mut grad_w = Tensor::zeros(self.weights.shape())?;
        for co in 0..self.c_out() {
            for ci in 0..xs.c {
                for ky in 0..k {
                    let dy = ky as isize - pad as isize;
                    let (ylo, yhi) = shifted_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad as isize;
                        let (xlo, xhi) = shifted_range(w, dx);
                        if xlo >= xhi {
                            continue;
                        }
                        let mut acc = T::zero();
                        for n in 0..xs.n {
                            let gout = grad_out.plane(n, co);
                            let xp = x.plane(n, ci);
                            for oy in ylo..yhi {
                                let iy = (oy as isize + dy) as usize;
                                let grow = &gout[oy * w + xlo..oy * w + xhi];
                                let xrow = &xp[(iy * w) as usize + (xlo as isize + dx) as usize
                                    ..iy * w + (xhi as isize + dx) as usize];
                                for (&g, &xv) in grow.iter().zip(xrow) {
                                    acc += g * xv;
                                }
                            }
                        }
                        grad_w.set(co, ci, ky, kx, acc);
                    }
                }
            }
        }

        Ok(LayerGrads {
            x: grad_x,
            w: grad_w,
            b: grad_b,
        })
    }
}

// ---------------------------------------------------------------------------
// PReLU

/// Gradients of a PReLU backward call.
pub struct PReluGrads<T> {
    pub x: Tensor<T>,
    /// Per-channel coefficient gradient.
    pub a: Vec<T>,
}

/// Parametric ReLU with one learned slope per channel:
/// `y = max(x, 0) + a * min(x, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PReluLayer<T> {
    pub coeff: Vec<T>,
}

impl<T: Scalar> PReluLayer<T> {
    pub fn new(channels: usize, init: T) -> Self {
        PReluLayer {
            coeff: vec![init; channels],
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().c != self.coeff.len() {
            return Err(Error::ShapeMismatch(format!(
                "prelu has {} coefficients, input has {} channels",
                self.coeff.len(),
                x.shape().c
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut out = x.clone();
        for n in 0..x.shape().n {
            for c in 0..x.shape().c {
                let a = self.coeff[c];
                for v in out.plane_mut(n, c) {
                    if *v < T::zero() {
                        *v = a * *v;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<PReluGrads<T>> {
        self.check_input(x)?;
        if grad_out.shape() != x.shape() {
            return Err(Error::ShapeMismatch(format!(
                "prelu backward expects grad {}, got {}",
                x.shape(),
                grad_out.shape()
            )));
        }
        let mut grad_x = Tensor::zeros(x.shape())?;
        let mut grad_a = vec![T::zero(); self.coeff.len()];
        for n in 0..x.shape().n {
            for c in 0..x.shape().c {
                let a = self.coeff[c];
                let xp = x.plane(n, c);
                let gp = grad_out.plane(n, c);
                let out = grad_x.plane_mut(n, c);
                let mut acc = T::zero();
                for ((&xv, &g), o) in xp.iter().zip(gp).zip(out.iter_mut()) {
                    if xv > T::zero() {
                        *o = g;
                    } else {
                        *o = a * g;
                        acc += g * xv; // xv == min(xv, 0) here
                    }
                }
                grad_a[c] += acc;
            }
        }
        Ok(PReluGrads {
            x: grad_x,
            a: grad_a,
        })
    }
}

// ---------------------------------------------------------------------------
// Transposed convolution

#[derive(Clone, Debug, PartialEq)]
pub struct DeconvLayer<T> {
    /// Kernel, `(c_in, c_out, k, k)`.
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
    pub stride: usize,
}

impl<T: Scalar> DeconvLayer<T> {
    /// Zero-initialised transposed convolution. Requires `k >= s` so the
    /// centred crop can always reach a full `s * h` output.
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("deconv stride must be >= 1".into()));
        }
        if k < stride {
            return Err(Error::InvalidArgument(format!(
                "deconv kernel size {k} must cover stride {stride}"
            )));
        }
        Ok(DeconvLayer {
            weights: Tensor::zeros(Shape::new(c_in, c_out, k, k))?,
            bias: vec![T::zero(); c_out],
            stride,
        })
    }

    pub fn from_parts(weights: Tensor<T>, bias: Vec<T>, stride: usize) -> Result<Self> {
        let ws = weights.shape();
        if ws.h != ws.w {
            return Err(Error::InvalidArgument(format!(
                "deconv kernel must be square, got {ws}"
            )));
        }
        if stride == 0 || ws.h < stride {
            return Err(Error::InvalidArgument(format!(
                "deconv kernel size {} must cover stride {stride}",
                ws.h
            )));
        }
        if bias.len() != ws.c {
            return Err(Error::ShapeMismatch(format!(
                "{} biases for {} output channels",
                bias.len(),
                ws.c
            )));
        }
        Ok(DeconvLayer {
            weights,
            bias,
            stride,
        })
    }

    #[inline]
    pub fn c_in(&self) -> usize {
        self.weights.shape().n
    }

    #[inline]
    pub fn c_out(&self) -> usize {
        self.weights.shape().c
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.weights.shape().h
    }

    /// Top/left crop taken off the full scatter canvas.
    #[inline]
    pub fn crop_offset(&self) -> usize {
        (self.k() - self.stride) / 2
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().c != self.c_in() {
            return Err(Error::ShapeMismatch(format!(
                "deconv expects {} input channels, got {}",
                self.c_in(),
                x.shape().c
            )));
        }
        if x.shape().h == 0 || x.shape().w == 0 {
            return Err(Error::InvalidArgument("deconv input has zero extent".into()));
        }
        Ok(())
    }

    /// Valid input range `ilo..ihi` for tap offset `d` so the cropped output
    /// index `q = s*i + d - crop` lands inside `0..s*len`.
    #[inline]
    fn tap_range(&self, len: usize, d: usize) -> (usize, usize, isize) {
        let s = self.stride as isize;
        let e = d as isize - self.crop_offset() as isize;
        let lo = if e >= 0 { 0 } else { (-e + s - 1) / s };
        let hi = ((s * len as isize - 1 - e).div_euclid(s) + 1).clamp(0, len as isize);
        (lo as usize, hi.max(lo) as usize, e)
    }

    /// Upsampling forward pass; output is `(n, c_out, s*h, s*w)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let xs = x.shape();
        let s = self.stride;
        let (oh, ow) = (s * xs.h, s * xs.w);
        let mut out = Tensor::zeros(Shape::new(xs.n, self.c_out(), oh, ow))?;

        for n in 0..xs.n {
            for co in 0..self.c_out() {
                let plane = out.plane_mut(n, co);
                plane.fill(self.bias[co]);
                for ci in 0..self.c_in() {
                    let xp = x.plane(n, ci);
                    for dy in 0..self.k() {
                        let (ylo, yhi, ey) = self.tap_range(xs.h, dy);
                        for dx in 0..self.k() {
                            let wv = self.weights.at(ci, co, dy, dx);
                            let (xlo, xhi, ex) = self.tap_range(xs.w, dx);
                            if xlo >= xhi {
                                continue;
                            }
                            for iy in ylo..yhi {
                                let qy = (s as isize * iy as isize + ey) as usize;
                                let irow = &xp[iy * xs.w + xlo..iy * xs.w + xhi];
                                let obase = qy * ow;
                                for (j, &xv) in irow.iter().enumerate() {
                                    let qx = (s as isize * (xlo + j) as isize + ex) as usize;
                                    plane[obase + qx] += wv * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LayerGrads<T>> {
        self.check_input(x)?;
        let xs = x.shape();
        let s = self.stride;
        let expected = Shape::new(xs.n, self.c_out(), s * xs.h, s * xs.w);
        if grad_out.shape() != expected {
            return Err(Error::ShapeMismatch(format!(
                "deconv backward expects grad {expected}, got {}",
                grad_out.shape()
            )));
        }
        let ow = s * xs.w;

        let mut grad_b = vec![T::zero(); self.c_out()];
        for n in 0..xs.n {
            for co in 0..self.c_out() {
                let mut acc = T::zero();
                for &g in grad_out.plane(n, co) {
                    acc += g;
                }
                grad_b[co] += acc;
            }
        }

        // Adjoint of the scatter: gather the same strided positions back.
        let mut grad_x = Tensor::zeros(xs)?;
        for n in 0..xs.n {
            for ci in 0..self.c_in() {
                let gx = grad_x.plane_mut(n, ci);
                for co in 0..self.c_out() {
                    let gout = grad_out.plane(n, co);
                    for dy in 0..self.k() {
                        let (ylo, yhi, ey) = self.tap_range(xs.h, dy);
                        for dx in 0..self.k() {
                            let wv = self.weights.at(ci, co, dy, dx);
                            let (xlo, xhi, ex) = self.tap_range(xs.w, dx);
                            if xlo >= xhi {
                                continue;
                            }
                            for iy in ylo..yhi {
                                let qy = (s as isize * iy as isize + ey) as usize;
                                let xrow = &mut gx[iy * xs.w + xlo..iy * xs.w + xhi];
                                let obase = qy * ow;
                                for (j, o) in xrow.iter_mut().enumerate() {
                                    let qx = (s as isize * (xlo + j) as isize + ex) as usize;
                                    *o += wv * gout[obase + qx];
                                }
                            }
                        }
                    }
                }
            }
        }

        let mut grad_w = Tensor::zeros(self.weights.shape())?;
        for ci in 0..self.c_in() {
            for co in 0..self.c_out() {
                for dy in 0..self.k() {
                    let (ylo, yhi, ey) = self.tap_range(xs.h, dy);
                    for dx in 0..self.k() {
                        let (xlo, xhi, ex) = self.tap_range(xs.w, dx);
                        if xlo >= xhi {
                            continue;
                        }
                        let mut acc = T::zero();
                        for n in 0..xs.n {
                            let xp = x.plane(n, ci);
                            let gout = grad_out.plane(n, co);
                            for iy in ylo..yhi {
                                let qy = (s as isize * iy as isize + ey) as usize;
                                let xrow = &xp[iy * xs.w + xlo..iy * xs.w + xhi];
                                let obase = qy * ow;
                                for (j, &xv) in xrow.iter().enumerate() {
                                    let qx = (s as isize * (xlo + j) as isize + ex) as usize;
                                    acc += xv * gout[obase + qx];
                                }
                            }
                        }
                        grad_w.set(ci, co, dy, dx, acc);
                    }
                }
            }
        }

        Ok(LayerGrads {
            x: grad_x,
            w: grad_w,
            b: grad_b,
        })
    }
}

/// 1-D linear-interpolation kernel for stride `s`: `k` taps peaking at 1
/// on the centre tap `(k-1)/2` and falling to 0 over `s` steps.
pub fn bilinear_taps(k: usize, s: usize) -> Vec<f64> {
    let c = ((k - 1) / 2) as f64;
    (0..k)
        .map(|i| (1.0 - (i as f64 - c).abs() / s as f64).max(0.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let len = shape.checked_len().unwrap();
        Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rand_vec(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut layer = ConvLayer::<f64>::new(1, 1, 3).unwrap();
        layer.weights.set(0, 0, 1, 1, 1.0);
        layer.bias[0] = 0.5;
        let x = Tensor::from_vec(
            Shape::new(1, 1, 2, 2),
            alloc::vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.data(), &[1.5, 2.5, 3.5, 4.5]);
    }

    #[test]
    fn conv_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, ci, co, h, w, k) in &[
            (1usize, 1usize, 1usize, 4usize, 4usize, 3usize),
            (2, 3, 2, 6, 7, 3),
            (1, 2, 4, 5, 5, 5),
            (2, 4, 3, 8, 6, 5),
        ] {
            let x = rand_tensor(Shape::new(n, ci, h, w), &mut rng);
            let layer = ConvLayer::from_parts(
                rand_tensor(Shape::new(co, ci, k, k), &mut rng),
                rand_vec(co, &mut rng),
            )
            .unwrap();
            let fast = layer.forward(&x).unwrap();
            let naive = reference::conv2d_naive(&x, &layer.weights, &layer.bias);
            assert!(
                max_abs_diff(&fast, &naive) < 1e-12,
                "conv mismatch for case ({n},{ci},{co},{h},{w},k={k})"
            );
        }
    }

    #[test]
    fn conv_rejects_even_kernel_and_wrong_channels() {
        assert!(ConvLayer::<f32>::new(1, 1, 4).is_err());
        let layer = ConvLayer::<f32>::new(2, 3, 3).unwrap();
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4)).unwrap();
        assert!(matches!(layer.forward(&x), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = rand_tensor(Shape::new(2, 2, 4, 5), &mut rng);
        let layer = ConvLayer::from_parts(
            rand_tensor(Shape::new(3, 2, 3, 3), &mut rng),
            rand_vec(3, &mut rng),
        )
        .unwrap();
        // Scalar objective: weighted sum of outputs, so grad_out = coeffs.
        let coeffs = rand_tensor(Shape::new(2, 3, 4, 5), &mut rng);
        let grads = layer.backward(&x, &coeffs).unwrap();

        let loss_for_w = |wbuf: &[f64]| {
            let l = ConvLayer::from_parts(
                Tensor::from_vec(layer.weights.shape(), wbuf.to_vec()).unwrap(),
                layer.bias.clone(),
            )
            .unwrap();
            l.forward(&x)
                .unwrap()
                .mul(&coeffs)
                .unwrap()
                .data()
                .iter()
                .sum()
        };
        let num_w = reference::numeric_grad(layer.weights.data(), loss_for_w, 1e-5);
        assert!(reference::max_rel_error(grads.w.data(), &num_w) < 1e-7);

        let loss_for_x = |xbuf: &[f64]| {
            layer
                .forward(&Tensor::from_vec(x.shape(), xbuf.to_vec()).unwrap())
                .unwrap()
                .mul(&coeffs)
                .unwrap()
                .data()
                .iter()
                .sum()
        };
        let num_x = reference::numeric_grad(x.data(), loss_for_x, 1e-5);
        assert!(reference::max_rel_error(grads.x.data(), &num_x) < 1e-7);

        let loss_for_b = |bbuf: &[f64]| {
            let l = ConvLayer::from_parts(layer.weights.clone(), bbuf.to_vec()).unwrap();
            l.forward(&x)
                .unwrap()
                .mul(&coeffs)
                .unwrap()
                .data()
                .iter()
                .sum()
        };
        let num_b = reference::numeric_grad(&layer.bias, loss_for_b, 1e-5);
        assert!(reference::max_rel_error(&grads.b, &num_b) < 1e-7);
    }

    #[test]
    fn conv_forward_backward_are_adjoint() {
        // <conv0(x), y> == <x, backward(x, y).x> when bias is zero, for any y.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = rand_tensor(Shape::new(1, 2, 5, 6), &mut rng);
        let y = rand_tensor(Shape::new(1, 3, 5, 6), &mut rng);
        let layer = ConvLayer::from_parts(
            rand_tensor(Shape::new(3, 2, 5, 5), &mut rng),
            alloc::vec![0.0; 3],
        )
        .unwrap();
        let lhs: f64 = layer
            .forward(&x)
            .unwrap()
            .mul(&y)
            .unwrap()
            .data()
            .iter()
            .sum();
        let rhs: f64 = layer
            .backward(&x, &y)
            .unwrap()
            .x
            .mul(&x)
            .unwrap()
            .data()
            .iter()
            .sum();
        assert!(reference::rel_error(lhs, rhs) < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn prelu_forward_keeps_positive_and_scales_negative() {
        let layer = PReluLayer::new(2, 0.25);
        let x = Tensor::from_vec(
            Shape::new(1, 2, 1, 2),
            alloc::vec![2.0, -4.0, -1.0, 0.0],
        )
        .unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.data(), &[2.0, -1.0, -0.25, 0.0]);
    }

    #[test]
    fn prelu_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = rand_tensor(Shape::new(2, 3, 4, 4), &mut rng);
        let coeffs = rand_tensor(Shape::new(2, 3, 4, 4), &mut rng);
        let layer = PReluLayer {
            coeff: rand_vec(3, &mut rng),
        };
        let grads = layer.backward(&x, &coeffs).unwrap();

        let loss_for_a = |abuf: &[f64]| {
            let l = PReluLayer {
                coeff: abuf.to_vec(),
            };
            l.forward(&x)
                .unwrap()
                .mul(&coeffs)
                .unwrap()
                .data()
                .iter()
                .sum()
        };
        let num_a = reference::numeric_grad(&layer.coeff, loss_for_a, 1e-5);
        assert!(reference::max_rel_error(&grads.a, &num_a) < 1e-7);

        let loss_for_x = |xbuf: &[f64]| {
            layer
                .forward(&Tensor::from_vec(x.shape(), xbuf.to_vec()).unwrap())
                .unwrap()
                .mul(&coeffs)
                .unwrap()
                .data()
                .iter()
                .sum()
        };
        let num_x = reference::numeric_grad(x.data(), loss_for_x, 1e-5);
        assert!(reference::max_rel_error(grads.x.data(), &num_x) < 1e-7);
    }

    #[test]
    fn deconv_output_is_stride_times_input() {
        for &(h, w, s) in &[(1usize, 1usize, 2usize), (3, 4, 2), (5, 3, 3), (2, 2, 4)] {
            let layer = DeconvLayer::<f64>::new(2, 1, 9, s).unwrap();
            let x = Tensor::zeros(Shape::new(1, 2, h, w)).unwrap();
            let y = layer.forward(&x).unwrap();
            assert_eq!(y.shape(), Shape::new(1, 1, s * h, s * w));
        }
    }

    #[test]
    fn deconv_stride_one_impulse_is_identity() {
        let mut layer = DeconvLayer::<f64>::new(1, 1, 9, 1).unwrap();
        layer.weights.set(0, 0, 4, 4, 1.0); // centre tap; crop offset is 4
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let x = rand_tensor(Shape::new(1, 1, 5, 6), &mut rng);
        let y = layer.forward(&x).unwrap();
        assert!(max_abs_diff(&x, &y) < 1e-15);
    }

    #[test]
    fn deconv_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for &(n, ci, co, h, w, k, s) in &[
            (1usize, 2usize, 1usize, 3usize, 3usize, 9usize, 3usize),
            (2, 3, 2, 4, 5, 9, 2),
            (1, 1, 1, 6, 4, 9, 4),
            (1, 2, 2, 5, 5, 5, 2),
        ] {
            let x = rand_tensor(Shape::new(n, ci, h, w), &mut rng);
            let layer = DeconvLayer::from_parts(
                rand_tensor(Shape::new(ci, co, k, k), &mut rng),
                rand_vec(co, &mut rng),
                s,
            )
            .unwrap();
            let fast = layer.forward(&x).unwrap();
            let naive = reference::deconv2d_naive(&x, &layer.weights, &layer.bias, s);
            assert!(
                max_abs_diff(&fast, &naive) < 1e-12,
                "deconv mismatch for case ({n},{ci},{co},{h},{w},k={k},s={s})"
            );
        }
    }

    #[test]
    fn deconv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let x = rand_tensor(Shape::new(1, 2, 3, 4), &mut rng);
        let layer = DeconvLayer::from_parts(
            rand_tensor(Shape::new(2, 2, 5, 5), &mut rng),
            rand_vec(2, &mut rng),
            2,
        )
        .unwrap();
        let coeffs = rand_tensor(Shape::new(1, 2, 6, 8), &mut rng);
        let grads = layer.backward(&x, &coeffs).unwrap();

        let loss_for_w = |wbuf: &[f64]| {
            let l = DeconvLayer::from_parts(
                Tensor::from_vec(layer.weights.shape(), wbuf.to_vec()).unwrap(),
                layer.bias.clone(),
                2,
            )
            .unwrap();
            l.forward(&x)
                .unwrap()
                .mul(&coeffs)
                .unwrap()
                .data()
                .iter()
                .sum()
        };
        let num_w = reference::numeric_grad(layer.weights.data(), loss_for_w, 1e-5);
        assert!(reference::max_rel_error(grads.w.data(), &num_w) < 1e-7);

        let loss_for_x = |xbuf: &[f64]| {
            layer
                .forward(&Tensor::from_vec(x.shape(), xbuf.to_vec()).unwrap())
                .unwrap()
                .mul(&coeffs)
                .unwrap()
                .data()
                .iter()
                .sum()
        };
        let num_x = reference::numeric_grad(x.data(), loss_for_x, 1e-5);
        assert!(reference::max_rel_error(grads.x.data(), &num_x) < 1e-7);

        let loss_for_b = |bbuf: &[f64]| {
            let l =
                DeconvLayer::from_parts(layer.weights.clone(), bbuf.to_vec(), 2).unwrap();
            l.forward(&x)
                .unwrap()
                .mul(&coeffs)
                .unwrap()
                .data()
                .iter()
                .sum()
        };
        let num_b = reference::numeric_grad(&layer.bias, loss_for_b, 1e-5);
        assert!(reference::max_rel_error(&grads.b, &num_b) < 1e-7);
    }

    #[test]
    fn deconv_requires_kernel_covering_stride() {
        assert!(DeconvLayer::<f32>::new(1, 1, 3, 4).is_err());
        assert!(DeconvLayer::<f32>::new(1, 1, 9, 0).is_err());
    }

    #[test]
    fn bilinear_taps_hat_profile() {
        let t = bilinear_taps(9, 2);
        assert_eq!(t, alloc::vec![0.0, 0.0, 0.0, 0.5, 1.0, 0.5, 0.0, 0.0, 0.0]);
        let t3 = bilinear_taps(9, 3);
        let expect = [0.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0, 0.0];
        for (a, b) in t3.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
