use rand::Rng;

use super::{
    join, relu, relu_backward, xavier_uniform, BatchNorm, BnCache, BnLayout, Mode, Module, NeuralError, Param, Real,
    Result, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    /// Cross-correlation; output `⌊(in + 2·pad − k)/stride⌋ + 1`.
    Standard,
    /// Transposed convolution; output `(in − 1)·stride − 2·pad + k`.
    Transposed,
}

/// 2D or 3D convolution over channel-major tensors `(C, H, W)` or
/// `(C, D, H, W)`. The weight is `(out, in, k_d, k_h, k_w)`; 2D layers have
/// `k_d = 1`.
///
/// Both kinds reduce to a list of `(input cell, output cell, tap)` triples,
/// so forward and backward share one kernel.
#[derive(Clone, Debug)]
pub struct Conv<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub kind: ConvKind,
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    /// Skip input gradients for all-zero input cells. Exact when the input
    /// comes out of a ReLU or a zero-filled scatter, where such cells have no
    /// upstream gradient anyway.
    pub sparse_input_grad: bool,
    three_d: bool,
    table: Option<([usize; 3], Vec<Tap>)>,
}

#[derive(Clone, Copy, Debug)]
struct Tap {
    input: u32,
    output: u32,
    tap: u32,
}

#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    /// Input in cell-major layout `(cells, in)`.
    x: Vec<T>,
    in_dims: [usize; 3],
    out_dims: [usize; 3],
}

impl<T: Real> Conv<T> {
    pub fn new_2d<R: Rng + ?Sized>(
        rng: &mut R,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        kind: ConvKind,
    ) -> Self {
        Self::build(rng, input, output, [1, kernel, kernel], [1, stride, stride], [0, pad, pad], kind, false)
    }

    pub fn new_3d<R: Rng + ?Sized>(
        rng: &mut R,
        input: usize,
        output: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Self {
        Self::build(rng, input, output, kernel, stride, pad, ConvKind::Standard, true)
    }

    #[allow(clippy::too_many_arguments)]
    fn build<R: Rng + ?Sized>(
        rng: &mut R,
        input: usize,
        output: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
        kind: ConvKind,
        three_d: bool,
    ) -> Self {
        assert!(stride.iter().all(|s| *s >= 1), "stride must be at least 1");
        let taps: usize = kernel.iter().product();
        let shape = [output, input, kernel[0], kernel[1], kernel[2]];
        Self {
            weight: Param::new(xavier_uniform(rng, &shape, input * taps, output * taps)),
            bias: None,
            kind,
            stride,
            pad,
            sparse_input_grad: false,
            three_d,
            table: None,
        }
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = Some(Param::new(Tensor::zeros(&[self.output_channels()])));
        self
    }

    pub fn input_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn output_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> [usize; 3] {
        let s = self.weight.value.shape();
        [s[2], s[3], s[4]]
    }

    /// Output spatial dims for input spatial dims `[d, h, w]`.
    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let k = self.kernel();
        let mut out = [0; 3];
        for a in 0..3 {
            let (n, k, s, p) = (input[a], k[a], self.stride[a], self.pad[a]);
            out[a] = match self.kind {
                ConvKind::Standard => {
                    if n + 2 * p < k {
                        return Err(NeuralError::ShapeMismatch(format!(
                            "axis {a}: extent {n} with pad {p} is smaller than kernel {k}"
                        )));
                    }
                    (n + 2 * p - k) / s + 1
                }
                ConvKind::Transposed => {
                    let full = (n.max(1) - 1) * s + k;
                    if n == 0 || full <= 2 * p {
                        return Err(NeuralError::ShapeMismatch(format!(
                            "axis {a}: transposed output of extent {n} is empty"
                        )));
                    }
                    full - 2 * p
                }
            };
        }
        Ok(out)
    }

    fn spatial_dims(&self, x: &Tensor<T>) -> Result<[usize; 3]> {
        let s = x.shape();
        let dims = match (self.three_d, s.len()) {
            (false, 3) => [1, s[1], s[2]],
            (true, 4) => [s[1], s[2], s[3]],
            _ => {
                return Err(NeuralError::ShapeMismatch(format!(
                    "{} convolution got input of shape {s:?}",
                    if self.three_d { "3D" } else { "2D" }
                )))
            }
        };
        if s[0] != self.input_channels() {
            return Err(NeuralError::ShapeMismatch(format!(
                "convolution expects {} input channels, got {}",
                self.input_channels(),
                s[0]
            )));
        }
        Ok(dims)
    }

    fn taps(&mut self, in_dims: [usize; 3]) -> Result<Vec<Tap>> {
        if let Some((dims, table)) = &self.table {
            if *dims == in_dims {
                return Ok(table.clone());
            }
        }
        let out_dims = self.output_dims(in_dims)?;
        let k = self.kernel();
        let mut table = Vec::new();
        let cell = |p: [usize; 3], d: [usize; 3]| ((p[0] * d[1] + p[1]) * d[2] + p[2]) as u32;
        // A standard conv reads `i = o·s − p + t`; a transposed conv writes
        // `o = i·s − p + t`. Either way the pair is linked through tap t.
        let (src_dims, dst_dims) = match self.kind {
            ConvKind::Standard => (out_dims, in_dims),
            ConvKind::Transposed => (in_dims, out_dims),
        };
        for a0 in 0..src_dims[0] {
            for a1 in 0..src_dims[1] {
                for a2 in 0..src_dims[2] {
                    let src = [a0, a1, a2];
                    for t0 in 0..k[0] {
                        for t1 in 0..k[1] {
                            'tap: for t2 in 0..k[2] {
                                let t = [t0, t1, t2];
                                let mut dst = [0; 3];
                                for a in 0..3 {
                                    let v = (src[a] * self.stride[a] + t[a]) as isize - self.pad[a] as isize;
                                    if v < 0 || v as usize >= dst_dims[a] {
                                        continue 'tap;
                                    }
                                    dst[a] = v as usize;
                                }
                                let tap = ((t0 * k[1] + t1) * k[2] + t2) as u32;
                                let (input, output) = match self.kind {
                                    ConvKind::Standard => (cell(dst, in_dims), cell(src, out_dims)),
                                    ConvKind::Transposed => (cell(src, in_dims), cell(dst, out_dims)),
                                };
                                table.push(Tap { input, output, tap });
                            }
                        }
                    }
                }
            }
        }
        self.table = Some((in_dims, table.clone()));
        Ok(table)
    }

    /// Weights rearranged to `(tap, out, in)`.
    /// Weights laid out as `(tap, in, out)`.
    fn tap_weights_by_input(&self) -> Vec<T> {
        let (co, ci) = (self.output_channels(), self.input_channels());
        let taps: usize = self.kernel().iter().product();
        let w = &self.weight.value.data;
        let mut out = vec![T::zero(); taps * co * ci];
        for o in 0..co {
            for i in 0..ci {
                for t in 0..taps {
                    out[(t * ci + i) * co + o] = w[(o * ci + i) * taps + t];
                }
            }
        }
        out
    }

    /// Weights laid out as `(tap, out, in)`.
    fn tap_weights(&self) -> Vec<T> {
        let (co, ci) = (self.output_channels(), self.input_channels());
        let taps: usize = self.kernel().iter().product();
        let w = &self.weight.value.data;
        let mut out = vec![T::zero(); taps * co * ci];
        for o in 0..co {
            for i in 0..ci {
                for t in 0..taps {
                    out[(t * co + o) * ci + i] = w[(o * ci + i) * taps + t];
                }
            }
        }
        out
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let in_dims = self.spatial_dims(x)?;
        let out_dims = self.output_dims(in_dims)?;
        let table = self.taps(in_dims)?;
        let (co, ci) = (self.output_channels(), self.input_channels());
        let xc = to_cell_major(&x.data, ci);
        let nonzero: Vec<bool> = xc.chunks(ci).map(|r| r.iter().any(|v| *v != T::zero())).collect();
        let w = self.tap_weights_by_input();
        let out_cells: usize = out_dims.iter().product();
        let mut y = vec![T::zero(); out_cells * co];
        for e in &table {
            let ip = e.input as usize;
            if !nonzero[ip] {
                continue;
            }
            let xr = &xc[ip * ci..(ip + 1) * ci];
            let wt = &w[e.tap as usize * co * ci..(e.tap as usize + 1) * co * ci];
            let yr = &mut y[e.output as usize * co..(e.output as usize + 1) * co];
            for (i, xv) in xr.iter().enumerate() {
                if *xv == T::zero() {
                    continue;
                }
                for (yv, wv) in yr.iter_mut().zip(&wt[i * co..(i + 1) * co]) {
                    *yv += *xv * *wv;
                }
            }
        }
        if let Some(b) = &self.bias {
            for row in y.chunks_mut(co) {
                for (v, bv) in row.iter_mut().zip(&b.value.data) {
                    *v += *bv;
                }
            }
        }
        let mut shape = vec![co];
        if self.three_d {
            shape.push(out_dims[0]);
        }
        shape.extend_from_slice(&out_dims[1..]);
        Ok((
            Tensor::from_vec(&shape, to_channel_major(&y, co)),
            ConvCache {
                x: xc,
                in_dims,
                out_dims,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ConvCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (co, ci) = (self.output_channels(), self.input_channels());
        let taps: usize = self.kernel().iter().product();
        let table = self.taps(cache.in_dims).expect("shape checked in forward");
        let dyc = to_cell_major(&dy.data, co);
        debug_assert_eq!(dyc.len(), cache.out_dims.iter().product::<usize>() * co);
        let w = self.tap_weights();
        let in_cells: usize = cache.in_dims.iter().product();
        let nonzero: Vec<bool> = cache.x.chunks(ci).map(|r| r.iter().any(|v| *v != T::zero())).collect();
        let mut dx = vec![T::zero(); in_cells * ci];
        let mut dw = vec![T::zero(); taps * co * ci];
        let live: Vec<bool> = dyc.chunks(co).map(|r| r.iter().any(|v| *v != T::zero())).collect();
        for e in &table {
            let (ip, op, t) = (e.input as usize, e.output as usize, e.tap as usize);
            if !live[op] {
                continue;
            }
            let g = &dyc[op * co..(op + 1) * co];
            if nonzero[ip] {
                let xr = &cache.x[ip * ci..(ip + 1) * ci];
                let dwt = &mut dw[t * co * ci..(t + 1) * co * ci];
                for (o, gv) in g.iter().enumerate() {
                    for (d, xv) in dwt[o * ci..(o + 1) * ci].iter_mut().zip(xr) {
                        *d += *gv * *xv;
                    }
                }
            } else if self.sparse_input_grad {
                continue;
            }
            let wt = &w[t * co * ci..(t + 1) * co * ci];
            let dxr = &mut dx[ip * ci..(ip + 1) * ci];
            for (o, gv) in g.iter().enumerate() {
                for (d, wv) in dxr.iter_mut().zip(&wt[o * ci..(o + 1) * ci]) {
                    *d += *gv * *wv;
                }
            }
        }
        let gw = &mut self.weight.grad.data;
        for o in 0..co {
            for i in 0..ci {
                for t in 0..taps {
                    gw[(o * ci + i) * taps + t] += dw[(t * co + o) * ci + i];
                }
            }
        }
        if let Some(b) = &mut self.bias {
            for row in dyc.chunks(co) {
                for (g, v) in b.grad.data.iter_mut().zip(row) {
                    *g += *v;
                }
            }
        }
        let mut shape = vec![ci];
        if self.three_d {
            shape.push(cache.in_dims[0]);
        }
        shape.extend_from_slice(&cache.in_dims[1..]);
        Tensor::from_vec(&shape, to_channel_major(&dx, ci))
    }
}

impl<T: Real> Module<T> for Conv<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(join(prefix, "bias"), b);
        }
    }
}

fn to_cell_major<T: Real>(x: &[T], channels: usize) -> Vec<T> {
    let cells = x.len() / channels.max(1);
    let mut out = vec![T::zero(); x.len()];
    for c in 0..channels {
        for p in 0..cells {
            out[p * channels + c] = x[c * cells + p];
        }
    }
    out
}

fn to_channel_major<T: Real>(x: &[T], channels: usize) -> Vec<T> {
    let cells = x.len() / channels.max(1);
    let mut out = vec![T::zero(); x.len()];
    for p in 0..cells {
        for c in 0..channels {
            out[c * cells + p] = x[p * channels + c];
        }
    }
    out
}

/// Convolution → batch norm (per channel) → ReLU. The convolution carries
/// no bias, as in [`super::FcnLayer`].
#[derive(Clone, Debug)]
pub struct ConvBnRelu<T> {
    pub conv: Conv<T>,
    pub bn: BatchNorm<T>,
}

#[derive(Clone, Debug)]
pub struct ConvBnReluCache<T> {
    conv: ConvCache<T>,
    bn: BnCache<T>,
    pre: Tensor<T>,
}

impl<T: Real> ConvBnReluCache<T> {
    /// Appends one 0/1 flag per ReLU unit, 1 where it is active.
    pub fn activation_pattern(&self, out: &mut Vec<usize>) {
        out.extend(self.pre.data.iter().map(|v| usize::from(*v > T::zero())));
    }
}

impl<T: Real> ConvBnRelu<T> {
    pub fn new(conv: Conv<T>) -> Self {
        let bn = BatchNorm::new(conv.output_channels());
        Self { conv, bn }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ConvBnReluCache<T>)> {
        let (z, conv) = self.conv.forward(x)?;
        let (pre, bn) = self.bn.forward(&z, BnLayout::ChannelMajor, mode)?;
        Ok((relu(&pre), ConvBnReluCache { conv, bn, pre }))
    }

    pub fn backward(&mut self, cache: &ConvBnReluCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let dpre = relu_backward(&cache.pre, dy);
        let dz = self.bn.backward(&cache.bn, &dpre, BnLayout::ChannelMajor);
        self.conv.backward(&cache.conv, &dz)
    }
}

impl<T: Real> Module<T> for ConvBnRelu<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.bn.visit_buffers(&join(prefix, "bn"), f);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::neural::{flat_grads, flat_params, gradient_check, set_flat_params, zero_grads};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    /// Direct cross-correlation on `(C, D, H, W)`, written independently of
    /// the tap table.
    fn naive_conv3d(x: &[f64], dims: [usize; 4], w: &[f64], wshape: [usize; 5], s: [usize; 3], p: [usize; 3]) -> Vec<f64> {
        let [ci, d, h, wd] = dims;
        let [co, _, kd, kh, kw] = wshape;
        let od = (d + 2 * p[0] - kd) / s[0] + 1;
        let oh = (h + 2 * p[1] - kh) / s[1] + 1;
        let ow = (wd + 2 * p[2] - kw) / s[2] + 1;
        let mut y = vec![0.0; co * od * oh * ow];
        for o in 0..co {
            for z in 0..od {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = 0.0;
                        for i in 0..ci {
                            for a in 0..kd {
                                for b in 0..kh {
                                    for e in 0..kw {
                                        let zz = (z * s[0] + a) as isize - p[0] as isize;
                                        let rr = (r * s[1] + b) as isize - p[1] as isize;
                                        let cc = (c * s[2] + e) as isize - p[2] as isize;
                                        if zz < 0 || rr < 0 || cc < 0 || zz >= d as isize || rr >= h as isize || cc >= wd as isize {
                                            continue;
                                        }
                                        let xi = ((i * d + zz as usize) * h + rr as usize) * wd + cc as usize;
                                        let wi = (((o * ci + i) * kd + a) * kh + b) * kw + e;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        y[((o * od + z) * oh + r) * ow + c] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn ones_kernel_sums_window() {
        let mut conv = Conv::<f64>::new_2d(&mut rng(), 1, 1, 3, 1, 0, ConvKind::Standard);
        conv.weight.value.fill(1.0);
        let mut x = Tensor::zeros(&[1, 3, 3]);
        x.fill(1.0);
        let (y, _) = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data, vec![9.0]);
    }

    #[test]
    fn output_sizes() {
        let conv = Conv::<f64>::new_2d(&mut rng(), 1, 1, 3, 2, 1, ConvKind::Standard);
        assert_eq!(conv.output_dims([1, 8, 8]).unwrap(), [1, 4, 4]);
        let deconv = Conv::<f64>::new_2d(&mut rng(), 1, 1, 2, 2, 0, ConvKind::Transposed);
        assert_eq!(deconv.output_dims([1, 4, 4]).unwrap(), [1, 8, 8]);
    }

    #[test]
    fn transposed_delta_copies_kernel() {
        let mut deconv = Conv::<f64>::new_2d(&mut rng(), 1, 1, 2, 2, 0, ConvKind::Transposed);
        deconv.weight.value.fill(1.0);
        let mut x = Tensor::zeros(&[1, 4, 4]);
        x.data[4 + 2] = 1.0; // row 1, col 2
        let (y, _) = deconv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 8, 8]);
        for r in 0..8 {
            for c in 0..8 {
                let expect = if (2..4).contains(&r) && (4..6).contains(&c) { 1.0 } else { 0.0 };
                assert_eq!(y.data[r * 8 + c], expect, "({r}, {c})");
            }
        }
    }

    #[test]
    fn mismatched_channels_rejected() {
        let mut conv = Conv::<f64>::new_2d(&mut rng(), 2, 1, 3, 1, 1, ConvKind::Standard);
        assert!(matches!(conv.forward(&Tensor::zeros(&[3, 4, 4])), Err(NeuralError::ShapeMismatch(_))));
        assert!(matches!(conv.forward(&Tensor::zeros(&[2, 4, 4, 4])), Err(NeuralError::ShapeMismatch(_))));
        let mut small = Conv::<f64>::new_2d(&mut rng(), 1, 1, 5, 1, 0, ConvKind::Standard);
        assert!(small.forward(&Tensor::zeros(&[1, 3, 3])).is_err());
    }

    #[test]
    fn matches_direct_3d_convolution() {
        let mut r = rng();
        let mut conv = Conv::<f64>::new_3d(&mut r, 2, 3, [3, 3, 3], [2, 1, 2], [1, 1, 0]);
        let dims = [2, 5, 4, 6];
        let x: Vec<f64> = (0..dims.iter().product::<usize>()).map(|_| r.random_range(-1.0..1.0)).collect();
        let (y, _) = conv.forward(&Tensor::from_f64(&dims, &x)).unwrap();
        let expect = naive_conv3d(&x, dims, &conv.weight.value.data, [3, 2, 3, 3, 3], [2, 1, 2], [1, 1, 0]);
        assert_eq!(y.shape(), &[3, 3, 4, 2]);
        for (a, b) in y.data.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn check<F: FnMut(&mut Conv<f64>)>(mut conv: Conv<f64>, in_shape: &[usize], mut tweak: F) {
        let mut r = ChaCha8Rng::seed_from_u64(99);
        tweak(&mut conv);
        let n: usize = in_shape.iter().product();
        let x0: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let out_len = conv.forward(&Tensor::from_f64(in_shape, &x0)).unwrap().0.len();
        let wy: Vec<f64> = (0..out_len).map(|_| r.random_range(-1.0..1.0)).collect();
        // Parameters and input are checked together.
        let np = flat_params(&mut conv).len();
        let mut p0 = flat_params(&mut conv);
        p0.extend_from_slice(&x0);
        let report = gradient_check(
            |p| {
                set_flat_params(&mut conv, &p[..np]);
                zero_grads(&mut conv);
                let x = Tensor::from_f64(in_shape, &p[np..]);
                let (y, cache) = conv.forward(&x).unwrap();
                let loss = y.data.iter().zip(&wy).map(|(a, b)| a * b).sum();
                let dy = Tensor::from_f64(y.shape(), &wy);
                let dx = conv.backward(&cache, &dy);
                let mut g = flat_grads(&mut conv);
                g.extend_from_slice(&dx.data);
                (loss, g)
            },
            &p0,
            1e-5,
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn gradients_2d_strided() {
        let conv = Conv::new_2d(&mut rng(), 3, 4, 3, 2, 1, ConvKind::Standard).with_bias();
        check(conv, &[3, 7, 6], |_| {});
    }

    #[test]
    fn gradients_3d() {
        let conv = Conv::new_3d(&mut rng(), 2, 3, [3, 3, 3], [2, 1, 1], [1, 1, 1]);
        check(conv, &[2, 4, 5, 5], |_| {});
    }

    #[test]
    fn gradients_transposed() {
        let conv = Conv::new_2d(&mut rng(), 3, 2, 3, 2, 1, ConvKind::Transposed).with_bias();
        check(conv, &[3, 4, 5], |_| {});
        let conv = Conv::new_2d(&mut rng(), 2, 2, 2, 2, 0, ConvKind::Transposed);
        check(conv, &[2, 3, 3], |_| {});
    }

    #[test]
    fn conv_bn_relu_gradients() {
        let mut r = rng();
        let mut layer = ConvBnRelu::new(Conv::<f64>::new_2d(&mut r, 2, 3, 3, 1, 1, ConvKind::Standard));
        let x = Tensor::from_f64(&[2, 5, 5], &(0..50).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let wy: Vec<f64> = (0..75).map(|_| r.random_range(-1.0..1.0)).collect();
        let p0 = flat_params(&mut layer);
        let report = gradient_check(
            |p| {
                set_flat_params(&mut layer, p);
                zero_grads(&mut layer);
                let (y, cache) = layer.forward(&x, Mode::Train).unwrap();
                let loss = y.data.iter().zip(&wy).map(|(a, b)| a * b).sum();
                layer.backward(&cache, &Tensor::from_f64(y.shape(), &wy));
                (loss, flat_grads(&mut layer))
            },
            &p0,
            1e-5,
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn sparse_input_grad_only_drops_zero_cells() {
        let mut r = rng();
        let mut conv = Conv::<f64>::new_2d(&mut r, 2, 2, 3, 1, 1, ConvKind::Standard);
        let mut x = Tensor::from_f64(&[2, 4, 4], &(0..32).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<_>>());
        for c in 0..2 {
            x.data[c * 16 + 5] = 0.0;
        }
        let dy = Tensor::from_f64(&[2, 4, 4], &(0..32).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let (_, cache) = conv.forward(&x).unwrap();
        let dense = conv.backward(&cache, &dy);
        let gw_dense = conv.weight.grad.clone();
        zero_grads(&mut conv);
        conv.sparse_input_grad = true;
        let sparse = conv.backward(&cache, &dy);
        assert_eq!(conv.weight.grad, gw_dense);
        for (i, (a, b)) in dense.data.iter().zip(&sparse.data).enumerate() {
            if i % 16 == 5 {
                assert_eq!(*b, 0.0);
            } else {
                assert_eq!(a, b);
            }
        }
    }
}
