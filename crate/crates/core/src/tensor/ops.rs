//! Forward and backward kernels on single images (batch norm works on batches).

use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use super::{lit, Element, ImageTensor, Tensor};
use crate::error::{Error, Result};

/// Running-statistics momentum: `running = m·running + (1 − m)·batch`.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

fn check_kernel<T: Element>(
    op: &'static str,
    input: &ImageTensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    k: usize,
) -> Result<usize> {
    let s = weights.shape();
    if s.len() != 4 || s[2] != k || s[3] != k {
        return Err(Error::shape(
            op,
            format!("weights must be [Cout, Cin, {k}, {k}], got {s:?}"),
        ));
    }
    if s[1] != input.channels() {
        return Err(Error::shape(
            op,
            format!("weights expect {} input channels, input has {}", s[1], input.channels()),
        ));
    }
    if bias.shape() != [s[0]] {
        return Err(Error::shape(
            op,
            format!("bias must be [{}], got {:?}", s[0], bias.shape()),
        ));
    }
    if input.height() == 0 || input.width() == 0 {
        return Err(Error::shape(op, "spatial dimensions must be at least 1"));
    }
    Ok(s[0])
}

/// Zero-padded 3×3 patch matrix, rows `ci·9 + ky·3 + kx`, columns `y·W + x`.
fn im2col3<T: Element>(input: &ImageTensor<T>) -> Vec<T> {
    let (cin, h, w) = input.shape();
    let hw = h * w;
    let mut cols = vec![T::zero(); cin * 9 * hw];
    for ci in 0..cin {
        let plane = input.plane(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                let x0 = 1usize.saturating_sub(kx);
                let x1 = (w + 1 - kx).min(w);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    let sx0 = x0 + kx - 1;
                    dst[x0..x1].copy_from_slice(&src[sx0..sx0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

fn col2im3<T: Element>(cols: &[T], cin: usize, h: usize, w: usize) -> ImageTensor<T> {
    let hw = h * w;
    let mut out = ImageTensor::zeros(cin, h, w);
    for ci in 0..cin {
        let plane = out.plane_mut(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                let x0 = 1usize.saturating_sub(kx);
                let x1 = (w + 1 - kx).min(w);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sx0 = x0 + kx - 1;
                    let dst = &mut plane[sy as usize * w + sx0..][..x1 - x0];
                    let src = &row[y * w + x0..][..x1 - x0];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
    out
}

fn add_bias<T: Element>(out: &mut [T], bias: &[T], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v = *v + b;
        }
    }
}

fn plane_sums<T: Element>(t: &ImageTensor<T>) -> Vec<T> {
    (0..t.channels())
        .map(|c| {
            let s: f64 = t.plane(c).iter().map(|v| v.to_f64().unwrap_or(0.0)).sum();
            lit(s)
        })
        .collect()
}

/// Same-size 3×3 convolution with zero padding of one pixel.
pub fn conv3x3<T: Element>(input: &ImageTensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<ImageTensor<T>> {
    let cout = check_kernel("conv3x3", input, weights, bias, 3)?;
    let (cin, h, w) = input.shape();
    let hw = h * w;
    let cols = im2col3(input);
    let mut out = vec![T::zero(); cout * hw];
    gemm_nn(cout, cin * 9, hw, weights.data(), &cols, T::zero(), &mut out);
    add_bias(&mut out, bias.data(), hw);
    ImageTensor::new(cout, h, w, out)
}

/// Gradients of [`conv3x3`]: `(d_input, d_weights, d_bias)`.
pub fn conv3x3_backward<T: Element>(
    input: &ImageTensor<T>,
    weights: &Tensor<T>,
    grad_out: &ImageTensor<T>,
) -> Result<(ImageTensor<T>, Tensor<T>, Tensor<T>)> {
    let (cin, h, w) = input.shape();
    let cout = weights.shape()[0];
    if grad_out.shape() != (cout, h, w) {
        return Err(Error::shape(
            "conv3x3_backward",
            format!("upstream gradient {:?} vs output ({cout}, {h}, {w})", grad_out.shape()),
        ));
    }
    let hw = h * w;
    let cols = im2col3(input);
    let mut gw = vec![T::zero(); cout * cin * 9];
    gemm_nt(cout, hw, cin * 9, grad_out.data(), &cols, T::zero(), &mut gw);
    let mut dcols = vec![T::zero(); cin * 9 * hw];
    gemm_tn(
        cin * 9,
        cout,
        hw,
        weights.data(),
        grad_out.data(),
        T::zero(),
        &mut dcols,
    );
    let gin = col2im3(&dcols, cin, h, w);
    let gb = plane_sums(grad_out);
    Ok((
        gin,
        Tensor::new(weights.shape().to_vec(), gw)?,
        Tensor::new(vec![cout], gb)?,
    ))
}

/// Per-pixel linear map across channels.
pub fn conv1x1<T: Element>(input: &ImageTensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<ImageTensor<T>> {
    let cout = check_kernel("conv1x1", input, weights, bias, 1)?;
    let (cin, h, w) = input.shape();
    let hw = h * w;
    let mut out = vec![T::zero(); cout * hw];
    gemm_nn(cout, cin, hw, weights.data(), input.data(), T::zero(), &mut out);
    add_bias(&mut out, bias.data(), hw);
    ImageTensor::new(cout, h, w, out)
}

pub fn conv1x1_backward<T: Element>(
    input: &ImageTensor<T>,
    weights: &Tensor<T>,
    grad_out: &ImageTensor<T>,
) -> Result<(ImageTensor<T>, Tensor<T>, Tensor<T>)> {
    let (cin, h, w) = input.shape();
    let cout = weights.shape()[0];
    if grad_out.shape() != (cout, h, w) {
        return Err(Error::shape(
            "conv1x1_backward",
            format!("upstream gradient {:?} vs output ({cout}, {h}, {w})", grad_out.shape()),
        ));
    }
    let hw = h * w;
    let mut gw = vec![T::zero(); cout * cin];
    gemm_nt(cout, hw, cin, grad_out.data(), input.data(), T::zero(), &mut gw);
    let mut gin = vec![T::zero(); cin * hw];
    gemm_tn(cin, cout, hw, weights.data(), grad_out.data(), T::zero(), &mut gin);
    Ok((
        ImageTensor::new(cin, h, w, gin)?,
        Tensor::new(weights.shape().to_vec(), gw)?,
        Tensor::new(vec![cout], plane_sums(grad_out))?,
    ))
}

/// 2×2 stride-2 transposed convolution; weights are `[Cin, Cout, 2, 2]`.
pub fn upsample_tconv2<T: Element>(
    input: &ImageTensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<ImageTensor<T>> {
    let s = weights.shape();
    if s.len() != 4 || s[2] != 2 || s[3] != 2 || s[0] != input.channels() {
        return Err(Error::shape(
            "upsample_tconv2",
            format!("weights must be [{}, Cout, 2, 2], got {s:?}", input.channels()),
        ));
    }
    let cout = s[1];
    if bias.shape() != [cout] {
        return Err(Error::shape(
            "upsample_tconv2",
            format!("bias must be [{cout}], got {:?}", bias.shape()),
        ));
    }
    let (cin, h, w) = input.shape();
    let hw = h * w;
    let mut cols = vec![T::zero(); cout * 4 * hw];
    gemm_tn(cout * 4, cin, hw, weights.data(), input.data(), T::zero(), &mut cols);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = ImageTensor::zeros(cout, oh, ow);
    for co in 0..cout {
        let b = bias.data()[co];
        let plane = out.plane_mut(co);
        for dy in 0..2 {
            for dx in 0..2 {
                let row = &cols[(co * 4 + dy * 2 + dx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut plane[(2 * y + dy) * ow..][..ow];
                    let src = &row[y * w..][..w];
                    for (x, &v) in src.iter().enumerate() {
                        dst[2 * x + dx] = v + b;
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn upsample_tconv2_backward<T: Element>(
    input: &ImageTensor<T>,
    weights: &Tensor<T>,
    grad_out: &ImageTensor<T>,
) -> Result<(ImageTensor<T>, Tensor<T>, Tensor<T>)> {
    let (cin, h, w) = input.shape();
    let cout = weights.shape()[1];
    if grad_out.shape() != (cout, 2 * h, 2 * w) {
        return Err(Error::shape(
            "upsample_tconv2_backward",
            format!(
                "upstream gradient {:?} vs output ({cout}, {}, {})",
                grad_out.shape(),
                2 * h,
                2 * w
            ),
        ));
    }
    let hw = h * w;
    let ow = 2 * w;
    let mut dcols = vec![T::zero(); cout * 4 * hw];
    for co in 0..cout {
        let plane = grad_out.plane(co);
        for dy in 0..2 {
            for dx in 0..2 {
                let row = &mut dcols[(co * 4 + dy * 2 + dx) * hw..][..hw];
                for y in 0..h {
                    let src = &plane[(2 * y + dy) * ow..][..ow];
                    for x in 0..w {
                        row[y * w + x] = src[2 * x + dx];
                    }
                }
            }
        }
    }
    let mut gw = vec![T::zero(); cin * cout * 4];
    gemm_nt(cin, hw, cout * 4, input.data(), &dcols, T::zero(), &mut gw);
    let mut gin = vec![T::zero(); cin * hw];
    gemm_nn(cin, cout * 4, hw, weights.data(), &dcols, T::zero(), &mut gin);
    Ok((
        ImageTensor::new(cin, h, w, gin)?,
        Tensor::new(weights.shape().to_vec(), gw)?,
        Tensor::new(vec![cout], plane_sums(grad_out))?,
    ))
}

pub fn relu<T: Element>(input: &ImageTensor<T>) -> ImageTensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Element>(input: &ImageTensor<T>, grad_out: &ImageTensor<T>) -> ImageTensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    let (c, h, w) = input.shape();
    ImageTensor::new(c, h, w, data).expect("same shape")
}

/// Logistic function, clamped so the result is strictly inside (0, 1).
pub fn sigmoid<T: Element>(input: &ImageTensor<T>) -> ImageTensor<T> {
    let lo = T::min_positive_value();
    let hi = T::one() - T::epsilon() / lit(2.0);
    input.map(|x| {
        let s = if x >= T::zero() {
            T::one() / (T::one() + (-x).exp())
        } else {
            let e = x.exp();
            e / (T::one() + e)
        };
        s.max(lo).min(hi)
    })
}

pub fn sigmoid_backward<T: Element>(output: &ImageTensor<T>, grad_out: &ImageTensor<T>) -> ImageTensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    let (c, h, w) = output.shape();
    ImageTensor::new(c, h, w, data).expect("same shape")
}

/// 2×2 max pooling. Also returns, per output pixel, the flat plane index of
/// the winning source pixel (first maximum in row-major window order).
pub fn maxpool2<T: Element>(input: &ImageTensor<T>) -> Result<(ImageTensor<T>, Vec<u32>)> {
    let (c, h, w) = input.shape();
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::shape(
            "maxpool2",
            format!("height and width must be even and nonzero, got {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = ImageTensor::zeros(c, oh, ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let src = input.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..oh {
            for x in 0..ow {
                let base = 2 * y * w + 2 * x;
                let candidates = [base, base + 1, base + w, base + w + 1];
                let mut best = candidates[0];
                for &idx in &candidates[1..] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                dst[y * ow + x] = src[best];
                argmax.push(best as u32);
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2_backward<T: Element>(
    input_shape: (usize, usize, usize),
    argmax: &[u32],
    grad_out: &ImageTensor<T>,
) -> ImageTensor<T> {
    let (c, h, w) = input_shape;
    let mut gin = ImageTensor::zeros(c, h, w);
    let per = grad_out.plane_len();
    for ch in 0..c {
        let g = grad_out.plane(ch);
        let am = &argmax[ch * per..(ch + 1) * per];
        let dst = gin.plane_mut(ch);
        for (&idx, &v) in am.iter().zip(g) {
            dst[idx as usize] = dst[idx as usize] + v;
        }
    }
    gin
}

/// Stack `a`'s channels followed by `b`'s.
pub fn concat_channels<T: Element>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape(
            "concat_channels",
            format!(
                "spatial dims differ: {}x{} vs {}x{}",
                a.height(),
                a.width(),
                b.height(),
                b.width()
            ),
        ));
    }
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    ImageTensor::new(a.channels() + b.channels(), a.height(), a.width(), data)
}

/// Inverse of [`concat_channels`]: the first `first` channels, then the rest.
pub fn split_channels<T: Element>(t: &ImageTensor<T>, first: usize) -> Result<(ImageTensor<T>, ImageTensor<T>)> {
    if first > t.channels() {
        return Err(Error::shape(
            "split_channels",
            format!("cannot take {first} of {} channels", t.channels()),
        ));
    }
    let cut = first * t.plane_len();
    let (h, w) = (t.height(), t.width());
    Ok((
        ImageTensor::new(first, h, w, t.data()[..cut].to_vec())?,
        ImageTensor::new(t.channels() - first, h, w, t.data()[cut..].to_vec())?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalise with batch statistics and produce updated running statistics.
    Train,
    /// Normalise with the stored running statistics.
    Infer,
}

#[derive(Clone, Copy, Debug)]
pub struct BatchNormParams<'a, T> {
    pub gamma: &'a [T],
    pub beta: &'a [T],
    pub running_mean: &'a [T],
    pub running_var: &'a [T],
    pub eps: T,
}

impl<T: Element> BatchNormParams<'_, T> {
    fn validate(&self, channels: usize) -> Result<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("running_mean", self.running_mean),
            ("running_var", self.running_var),
        ] {
            if v.len() != channels {
                return Err(Error::shape(
                    "batch_norm",
                    format!("{name} has {} entries for {channels} channels", v.len()),
                ));
            }
        }
        if let Some(i) = self.running_var.iter().position(|&v| !(v >= T::zero())) {
            return Err(Error::Invalid(format!(
                "batch_norm: running variance of channel {i} is negative"
            )));
        }
        if !(self.eps >= T::zero()) {
            return Err(Error::Invalid("batch_norm: eps must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormTrainOutput<T> {
    pub output: Vec<ImageTensor<T>>,
    /// `x̂`, reused by the backward pass.
    pub normalized: Vec<ImageTensor<T>>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

fn check_batch<T: Element>(batch: &[ImageTensor<T>]) -> Result<(usize, usize, usize)> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Empty("batch_norm needs at least one image".into()))?;
    let shape = first.shape();
    if batch.iter().any(|t| t.shape() != shape) {
        return Err(Error::shape("batch_norm", "images in a batch must share a shape"));
    }
    Ok(shape)
}

fn normalize_with<T: Element>(
    batch: &[ImageTensor<T>],
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> (Vec<ImageTensor<T>>, Vec<ImageTensor<T>>) {
    let mut outs = Vec::with_capacity(batch.len());
    let mut norms = Vec::with_capacity(batch.len());
    for img in batch {
        let mut xn = img.clone();
        let mut y = img.clone();
        for c in 0..img.channels() {
            let (m, s, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
            for (n, o) in xn.plane_mut(c).iter_mut().zip(y.plane_mut(c).iter_mut()) {
                let v = (*n - m) * s;
                *n = v;
                *o = g * v + b;
            }
        }
        outs.push(y);
        norms.push(xn);
    }
    (outs, norms)
}

/// Inference-mode batch normalisation with running statistics.
pub fn batch_norm_infer<T: Element>(input: &ImageTensor<T>, params: &BatchNormParams<'_, T>) -> Result<ImageTensor<T>> {
    params.validate(input.channels())?;
    let inv_std: Vec<T> = params
        .running_var
        .iter()
        .map(|&v| T::one() / (v + params.eps).sqrt())
        .collect();
    let (mut out, _) = normalize_with(
        std::slice::from_ref(input),
        params.running_mean,
        &inv_std,
        params.gamma,
        params.beta,
    );
    Ok(out.pop().expect("one image"))
}

/// Training-mode batch normalisation over a batch of images.
pub fn batch_norm_train<T: Element>(
    batch: &[ImageTensor<T>],
    params: &BatchNormParams<'_, T>,
    momentum: T,
) -> Result<BatchNormTrainOutput<T>> {
    let (c, h, w) = check_batch(batch)?;
    params.validate(c)?;
    let count = (batch.len() * h * w) as f64;
    let mut batch_mean = Vec::with_capacity(c);
    let mut batch_var = Vec::with_capacity(c);
    for ch in 0..c {
        let sum: f64 = batch
            .iter()
            .flat_map(|t| t.plane(ch))
            .map(|v| v.to_f64().unwrap_or(0.0))
            .sum();
        let mean = sum / count;
        let sq: f64 = batch
            .iter()
            .flat_map(|t| t.plane(ch))
            .map(|v| {
                let d = v.to_f64().unwrap_or(0.0) - mean;
                d * d
            })
            .sum();
        batch_mean.push(mean);
        batch_var.push(sq / count);
    }
    let eps = params.eps.to_f64().unwrap_or(0.0);
    let inv_std: Vec<T> = batch_var.iter().map(|&v| lit(1.0 / (v + eps).sqrt())).collect();
    let mean_t: Vec<T> = batch_mean.iter().map(|&m| lit(m)).collect();
    let (output, normalized) = normalize_with(batch, &mean_t, &inv_std, params.gamma, params.beta);

    let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
    let one_minus = T::one() - momentum;
    let running_mean = params
        .running_mean
        .iter()
        .zip(&mean_t)
        .map(|(&r, &b)| momentum * r + one_minus * b)
        .collect();
    let running_var = params
        .running_var
        .iter()
        .zip(&batch_var)
        .map(|(&r, &b)| momentum * r + one_minus * lit::<T>(b * unbias))
        .collect();
    Ok(BatchNormTrainOutput {
        output,
        normalized,
        inv_std,
        batch_mean: mean_t,
        batch_var: batch_var.iter().map(|&v| lit(v)).collect(),
        running_mean,
        running_var,
    })
}

/// Mode-dispatching batch norm; returns the outputs and, in training mode,
/// the updated `(running_mean, running_var)`.
#[allow(clippy::type_complexity)]
pub fn batch_norm<T: Element>(
    batch: &[ImageTensor<T>],
    params: &BatchNormParams<'_, T>,
    mode: BnMode,
) -> Result<(Vec<ImageTensor<T>>, Option<(Vec<T>, Vec<T>)>)> {
    match mode {
        BnMode::Infer => {
            check_batch(batch)?;
            let out = batch
                .iter()
                .map(|t| batch_norm_infer(t, params))
                .collect::<Result<Vec<_>>>()?;
            Ok((out, None))
        }
        BnMode::Train => {
            let o = batch_norm_train(batch, params, lit(BN_MOMENTUM))?;
            Ok((o.output, Some((o.running_mean, o.running_var))))
        }
    }
}

/// Gradients of batch norm: `(d_inputs, d_gamma, d_beta)`.
pub fn batch_norm_backward<T: Element>(
    grad_out: &[ImageTensor<T>],
    normalized: &[ImageTensor<T>],
    gamma: &[T],
    inv_std: &[T],
    mode: BnMode,
) -> (Vec<ImageTensor<T>>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for (g, xn) in grad_out.iter().zip(normalized) {
        for ch in 0..c {
            for (&gv, &xv) in g.plane(ch).iter().zip(xn.plane(ch)) {
                let gv = gv.to_f64().unwrap_or(0.0);
                dbeta[ch] += gv;
                dgamma[ch] += gv * xv.to_f64().unwrap_or(0.0);
            }
        }
    }
    let count = grad_out.iter().map(|t| t.plane_len()).sum::<usize>() as f64;
    let grads = grad_out
        .iter()
        .zip(normalized)
        .map(|(g, xn)| {
            let mut dx = g.clone();
            for ch in 0..c {
                let scale = gamma[ch] * inv_std[ch];
                match mode {
                    BnMode::Infer => {
                        for v in dx.plane_mut(ch) {
                            *v = *v * scale;
                        }
                    }
                    BnMode::Train => {
                        let mean_dy: T = lit(dbeta[ch] / count);
                        let mean_dyx: T = lit(dgamma[ch] / count);
                        for (v, &xv) in dx.plane_mut(ch).iter_mut().zip(xn.plane(ch)) {
                            *v = scale * (*v - mean_dy - xv * mean_dyx);
                        }
                    }
                }
            }
            dx
        })
        .collect();
    (
        grads,
        dgamma.into_iter().map(lit).collect(),
        dbeta.into_iter().map(lit).collect(),
    )
}
