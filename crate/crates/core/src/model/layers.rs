//! Single-image building blocks with explicit backward passes. Activations
//! are channel-planar `[channels][height * width]` slices.

/// `c[m x n] = a[m x k] * b[k x n] + beta * c`, with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices whose extents cover the strided m x k,
    // k x n and m x n views; `c` is row-major m x n.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Square convolution, stride 1, zero padding `kernel / 2`. Parameters live
/// in a flat vector owned by the model; this struct records offsets only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl Conv {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, offset: &mut usize) -> Self {
        assert!(kernel % 2 == 1, "odd kernels only");
        let weight_offset = *offset;
        *offset += out_channels * in_channels * kernel * kernel;
        let bias_offset = *offset;
        *offset += out_channels;
        Conv {
            in_channels,
            out_channels,
            kernel,
            weight_offset,
            bias_offset,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * (self.fan_in() + 1)
    }

    fn weights<'p>(&self, params: &'p [f32]) -> &'p [f32] {
        &params[self.weight_offset..self.weight_offset + self.out_channels * self.fan_in()]
    }

    fn bias<'p>(&self, params: &'p [f32]) -> &'p [f32] {
        &params[self.bias_offset..self.bias_offset + self.out_channels]
    }

    /// Unfolds the input into `[in * k * k][h * w]`. For 1x1 kernels this is
    /// the input itself.
    pub fn im2col(&self, input: &[f32], h: usize, w: usize) -> Vec<f32> {
        let k = self.kernel;
        if k == 1 {
            return input.to_vec();
        }
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut cols = vec![0.0f32; self.in_channels * k * k * hw];
        for ci in 0..self.in_channels {
            let plane = &input[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                            continue;
                        }
                        let src = sy as usize * w;
                        let dst = &mut row[y * w + x_lo..y * w + x_hi];
                        let s0 = (src as isize + x_lo as isize + dx) as usize;
                        dst.copy_from_slice(&plane[s0..s0 + (x_hi - x_lo)]);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize) -> Vec<f32> {
        let k = self.kernel;
        if k == 1 {
            return cols.to_vec();
        }
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut out = vec![0.0f32; self.in_channels * hw];
        for ci in 0..self.in_channels {
            let plane = &mut out[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                            continue;
                        }
                        let s0 = (sy * w as isize + x_lo as isize + dx) as usize;
                        let src = &row[y * w + x_lo..y * w + x_hi];
                        for (d, s) in plane[s0..s0 + src.len()].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
        out
    }

    /// Output `[out][h * w]` from precomputed columns.
    pub fn forward_cols(&self, params: &[f32], cols: &[f32], hw: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; self.out_channels * hw];
        for (o, b) in self.bias(params).iter().enumerate() {
            out[o * hw..(o + 1) * hw].fill(*b);
        }
        let kk = self.fan_in();
        gemm(
            self.out_channels,
            kk,
            hw,
            self.weights(params),
            kk as isize,
            1,
            cols,
            hw as isize,
            1,
            1.0,
            &mut out,
        );
        out
    }

    pub fn forward(&self, params: &[f32], input: &[f32], h: usize, w: usize) -> Vec<f32> {
        let cols = self.im2col(input, h, w);
        self.forward_cols(params, &cols, h * w)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input.
    pub fn backward(
        &self,
        params: &[f32],
        cols: &[f32],
        grad_out: &[f32],
        h: usize,
        w: usize,
        grads: &mut [f32],
        need_input_grad: bool,
    ) -> Option<Vec<f32>> {
        let hw = h * w;
        let kk = self.fan_in();
        {
            let gw = &mut grads[self.weight_offset..self.weight_offset + self.out_channels * kk];
            gemm(
                self.out_channels,
                hw,
                kk,
                grad_out,
                hw as isize,
                1,
                cols,
                1,
                hw as isize,
                1.0,
                gw,
            );
        }
        for o in 0..self.out_channels {
            let s: f32 = grad_out[o * hw..(o + 1) * hw].iter().sum();
            grads[self.bias_offset + o] += s;
        }
        if !need_input_grad {
            return None;
        }
        let mut dcols = vec![0.0f32; kk * hw];
        gemm(
            kk,
            self.out_channels,
            hw,
            self.weights(params),
            1,
            kk as isize,
            grad_out,
            hw as isize,
            1,
            0.0,
            &mut dcols,
        );
        Some(self.col2im(&dcols, h, w))
    }
}

pub fn relu_in_place(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes the gradient wherever the forward activation was clipped.
pub fn relu_backward(activation: &[f32], grad: &mut [f32]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 max pooling, stride 2. Returns the pooled map and, per output cell,
/// the flat input index of the maximum (first one on ties).
pub fn max_pool2(input: &[f32], channels: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; channels * oh * ow];
    let mut arg = vec![0u32; channels * oh * ow];
    for c in 0..channels {
        let base = c * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let i0 = base + 2 * y * w + 2 * x;
                let mut best = i0;
                for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                    if input[cand] > input[best] {
                        best = cand;
                    }
                }
                let o = c * oh * ow + y * ow + x;
                out[o] = input[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward(grad_out: &[f32], arg: &[u32], input_len: usize) -> Vec<f32> {
    let mut g = vec![0.0f32; input_len];
    for (go, &i) in grad_out.iter().zip(arg) {
        g[i as usize] += go;
    }
    g
}

/// Nearest-neighbour 2x upsampling of `[channels][h][w]`.
pub fn upsample2(input: &[f32], channels: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0f32; channels * oh * ow];
    for c in 0..channels {
        for y in 0..oh {
            let src = &input[c * h * w + (y / 2) * w..][..w];
            let dst = &mut out[c * oh * ow + y * ow..][..ow];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = src[x / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2x2 block. `h`, `w` are the small size.
pub fn upsample2_backward(grad_out: &[f32], channels: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut g = vec![0.0f32; channels * h * w];
    for c in 0..channels {
        for y in 0..oh {
            let src = &grad_out[c * oh * ow + y * ow..][..ow];
            let dst = &mut g[c * h * w + (y / 2) * w..][..w];
            for (x, s) in src.iter().enumerate() {
                dst[x / 2] += s;
            }
        }
    }
    g
}
