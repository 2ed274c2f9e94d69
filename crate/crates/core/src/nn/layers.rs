use alloc::vec;
use alloc::vec::Vec;

use super::Tensor4;

/// Negative slope of the leaky ReLU used by both networks.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Square convolution geometry. Weights are stored `[k][k][in_c][out_c]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.kernel * self.kernel * self.in_c * self.out_c
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    #[inline]
    fn source(&self, o: usize, k: usize, len: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < len).then_some(i as usize)
    }
}

pub fn conv2d_forward(input: &Tensor4, weight: &[f64], bias: &[f64], spec: ConvSpec) -> Tensor4 {
    debug_assert_eq!(input.c, spec.in_c);
    debug_assert_eq!(weight.len(), spec.weight_len());
    let (oh, ow) = spec.out_size(input.h, input.w);
    let (ic, oc, k) = (spec.in_c, spec.out_c, spec.kernel);
    let mut out = Tensor4::zeros(input.n, oh, ow, oc);
    for n in 0..input.n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = out.index(n, oy, ox, 0);
                let out_px = &mut out.data[o..o + oc];
                out_px.copy_from_slice(bias);
                for ky in 0..k {
                    let Some(iy) = spec.source(oy, ky, input.h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = spec.source(ox, kx, input.w) else {
                            continue;
                        };
                        let in_px = input.pixel(n, iy, ix);
                        let wbase = (ky * k + kx) * ic * oc;
                        for (ci, &v) in in_px.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let wrow = &weight[wbase + ci * oc..wbase + (ci + 1) * oc];
                            for (acc, &wv) in out_px.iter_mut().zip(wrow) {
                                *acc += v * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates parameter gradients into `dweight`/`dbias` and, when asked,
/// returns the gradient with respect to the input.
pub fn conv2d_backward(
    input: &Tensor4,
    weight: &[f64],
    dout: &Tensor4,
    spec: ConvSpec,
    dweight: &mut [f64],
    dbias: &mut [f64],
    want_dinput: bool,
) -> Option<Tensor4> {
    let (ic, oc, k) = (spec.in_c, spec.out_c, spec.kernel);
    let mut dinput = want_dinput.then(|| Tensor4::zeros(input.n, input.h, input.w, ic));
    for n in 0..dout.n {
        for oy in 0..dout.h {
            for ox in 0..dout.w {
                let g = dout.pixel(n, oy, ox);
                for (db, &gv) in dbias.iter_mut().zip(g) {
                    *db += gv;
                }
                for ky in 0..k {
                    let Some(iy) = spec.source(oy, ky, input.h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = spec.source(ox, kx, input.w) else {
                            continue;
                        };
                        let in_px = input.pixel(n, iy, ix);
                        let wbase = (ky * k + kx) * ic * oc;
                        let din_base = dinput.as_ref().map(|d| d.index(n, iy, ix, 0));
                        for ci in 0..ic {
                            let v = in_px[ci];
                            let range = wbase + ci * oc..wbase + (ci + 1) * oc;
                            if v != 0.0 {
                                for (dw, &gv) in dweight[range.clone()].iter_mut().zip(g) {
                                    *dw += v * gv;
                                }
                            }
                            if let (Some(d), Some(base)) = (dinput.as_mut(), din_base) {
                                let acc: f64 =
                                    weight[range].iter().zip(g).map(|(&wv, &gv)| wv * gv).sum();
                                d.data[base + ci] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
    dinput
}

pub fn leaky_relu(x: &Tensor4) -> Tensor4 {
    let mut out = x.clone();
    for v in &mut out.data {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
    out
}

/// `pre` is the activation input; `grad` holds dL/d(output) and is
/// overwritten with dL/d(input).
pub fn leaky_relu_backward(pre: &Tensor4, grad: &mut Tensor4) {
    for (g, &z) in grad.data.iter_mut().zip(&pre.data) {
        if z < 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}

/// Per-axis interpolation taps for half-pixel-centred bilinear resampling.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(s) as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of every channel (half-pixel centres, edge clamped).
pub fn bilinear_resize(input: &Tensor4, out_h: usize, out_w: usize) -> Tensor4 {
    let ys = axis_taps(input.h, out_h);
    let xs = axis_taps(input.w, out_w);
    let c = input.c;
    let mut out = Tensor4::zeros(input.n, out_h, out_w, c);
    for n in 0..input.n {
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let o = out.index(n, oy, ox, 0);
                let p00 = input.pixel(n, y0, x0);
                let p01 = input.pixel(n, y0, x1);
                let p10 = input.pixel(n, y1, x0);
                let p11 = input.pixel(n, y1, x1);
                for ch in 0..c {
                    let top = p00[ch] + fx * (p01[ch] - p00[ch]);
                    let bot = p10[ch] + fx * (p11[ch] - p10[ch]);
                    out.data[o + ch] = top + fy * (bot - top);
                }
            }
        }
    }
    out
}

/// Adjoint of [`bilinear_resize`].
pub fn bilinear_resize_backward(dout: &Tensor4, in_h: usize, in_w: usize) -> Tensor4 {
    let ys = axis_taps(in_h, dout.h);
    let xs = axis_taps(in_w, dout.w);
    let c = dout.c;
    let mut din = Tensor4::zeros(dout.n, in_h, in_w, c);
    for n in 0..dout.n {
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let taps = [
                    (y0, x0, (1.0 - fy) * (1.0 - fx)),
                    (y0, x1, (1.0 - fy) * fx),
                    (y1, x0, fy * (1.0 - fx)),
                    (y1, x1, fy * fx),
                ];
                let g = dout.pixel(n, oy, ox);
                for (y, x, wt) in taps {
                    let i = din.index(n, y, x, 0);
                    for ch in 0..c {
                        din.data[i + ch] += wt * g[ch];
                    }
                }
            }
        }
    }
    din
}

pub fn softmax_channels(logits: &Tensor4) -> Tensor4 {
    let mut out = logits.clone();
    for px in out.data.chunks_exact_mut(logits.c) {
        let max = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in px.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in px.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// dL/dlogits from dL/dprobs for a per-pixel softmax.
pub fn softmax_channels_backward(probs: &Tensor4, dprobs: &Tensor4) -> Tensor4 {
    let c = probs.c;
    let mut out = Tensor4::zeros(probs.n, probs.h, probs.w, c);
    for ((o, p), g) in out
        .data
        .chunks_exact_mut(c)
        .zip(probs.data.chunks_exact(c))
        .zip(dprobs.data.chunks_exact(c))
    {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for ch in 0..c {
            o[ch] = p[ch] * (g[ch] - dot);
        }
    }
    out
}

/// Mean over the spatial axes; returns `n × c` features.
pub fn global_avg_pool(x: &Tensor4) -> Vec<f64> {
    let mut out = vec![0.0; x.n * x.c];
    let inv = 1.0 / (x.h * x.w) as f64;
    for n in 0..x.n {
        let feat = &mut out[n * x.c..(n + 1) * x.c];
        for px in x.sample(n).chunks_exact(x.c) {
            for (f, &v) in feat.iter_mut().zip(px) {
                *f += v;
            }
        }
        for f in feat.iter_mut() {
            *f *= inv;
        }
    }
    out
}

pub fn global_avg_pool_backward(dfeat: &[f64], n: usize, h: usize, w: usize, c: usize) -> Tensor4 {
    let mut out = Tensor4::zeros(n, h, w, c);
    let inv = 1.0 / (h * w) as f64;
    let len = out.sample_len();
    for b in 0..n {
        let g = &dfeat[b * c..(b + 1) * c];
        for px in out.data[b * len..(b + 1) * len].chunks_exact_mut(c) {
            for (o, &gv) in px.iter_mut().zip(g) {
                *o = gv * inv;
            }
        }
    }
    out
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, h: usize, w: usize, c: usize) -> Tensor4 {
        let data = (0..n * h * w * c).map(|i| ((i * 37 % 23) as f64 - 11.0) / 7.0).collect();
        Tensor4::from_vec(n, h, w, c, data).unwrap()
    }

    #[test]
    fn conv_output_sizes() {
        let spec = ConvSpec { in_c: 1, out_c: 2, kernel: 3, stride: 2, pad: 1 };
        assert_eq!(spec.out_size(64, 64), (32, 32));
        assert_eq!(spec.out_size(1, 1), (1, 1));
        assert_eq!(spec.out_size(5, 4), (3, 2));
    }

    #[test]
    fn identity_kernel_copies_input() {
        let x = ramp(1, 5, 4, 2);
        let spec = ConvSpec { in_c: 2, out_c: 2, kernel: 3, stride: 1, pad: 1 };
        let mut w = vec![0.0; spec.weight_len()];
        // centre tap, identity channel map
        let base = (3 + 1) * 2 * 2;
        w[base] = 1.0;
        w[base + 3] = 1.0;
        let y = conv2d_forward(&x, &w, &[0.0, 0.0], spec);
        assert_eq!(y, x);
    }

    #[test]
    fn resize_same_size_is_identity() {
        let x = ramp(2, 3, 5, 2);
        assert_eq!(bilinear_resize(&x, 3, 5), x);
    }

    #[test]
    fn resize_backward_is_adjoint() {
        // <R x, y> == <x, R^T y>
        let x = ramp(1, 3, 4, 2);
        let y = ramp(1, 7, 9, 2);
        let rx = bilinear_resize(&x, 7, 9);
        let rty = bilinear_resize_backward(&y, 3, 4);
        let lhs: f64 = rx.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&rty.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_channels(&ramp(2, 3, 3, 4));
        for px in p.data.chunks_exact(4) {
            assert!((px.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
