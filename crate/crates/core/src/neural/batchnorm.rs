use super::{cast, join, Mode, Module, NeuralError, Param, Real, Result, Tensor};

/// Where the channels live in a flat buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnLayout {
    /// `(N, C)` rows, normalized per column.
    Rows,
    /// `(C, ...)` channel-major, normalized over everything after the
    /// channel axis.
    ChannelMajor,
}

/// Batch normalization with learnable scale and shift.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Weight of the old running value in each update.
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct BnCache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

impl<T: Real> BatchNorm<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.99;

    pub fn new(channels: usize) -> Self {
        let mut gamma = Tensor::zeros(&[channels]);
        gamma.fill(T::one());
        let mut running_var = Tensor::zeros(&[channels]);
        running_var.fill(T::one());
        Self {
            gamma: Param::new(gamma),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var,
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    /// `(count per channel, channel stride, element stride)`.
    fn geometry(&self, x: &Tensor<T>, layout: BnLayout) -> Result<(usize, usize, usize)> {
        let c = self.channels();
        let shape = x.shape();
        let ok = match layout {
            BnLayout::Rows => shape.len() == 2 && shape[1] == c,
            BnLayout::ChannelMajor => !shape.is_empty() && shape[0] == c,
        };
        if !ok {
            return Err(NeuralError::ShapeMismatch(format!(
                "batch norm over {c} channels got {shape:?}"
            )));
        }
        let n = x.len() / c.max(1);
        Ok(match layout {
            BnLayout::Rows => (n, 1, c),
            BnLayout::ChannelMajor => (n, n, 1),
        })
    }

    pub fn forward(&mut self, x: &Tensor<T>, layout: BnLayout, mode: Mode) -> Result<(Tensor<T>, BnCache<T>)> {
        let (n, cs, es) = self.geometry(x, layout)?;
        let c = self.channels();
        if mode == Mode::Train && n < 2 {
            return Err(NeuralError::BatchTooSmall(n));
        }
        let eps: T = cast(self.eps);
        let mut y = Tensor::zeros(x.shape());
        let mut x_hat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); c];
        let nf: T = cast(n as f64);
        for ch in 0..c {
            let idx = |i: usize| ch * cs + i * es;
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = (0..n).map(|i| x.data[idx(i)]).sum::<T>() / nf;
                    let var = (0..n)
                        .map(|i| {
                            let d = x.data[idx(i)] - mean;
                            d * d
                        })
                        .sum::<T>()
                        / nf;
                    let m: T = cast(self.momentum);
                    let unbiased = var * nf / cast((n - 1) as f64);
                    self.running_mean.data[ch] = m * self.running_mean.data[ch] + (T::one() - m) * mean;
                    self.running_var.data[ch] = m * self.running_var.data[ch] + (T::one() - m) * unbiased;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean.data[ch], self.running_var.data[ch]),
            };
            let s = T::one() / (var + eps).sqrt();
            inv_std[ch] = s;
            let (g, b) = (self.gamma.value.data[ch], self.beta.value.data[ch]);
            for i in 0..n {
                let k = idx(i);
                let h = (x.data[k] - mean) * s;
                x_hat[k] = h;
                y.data[k] = g * h + b;
            }
        }
        Ok((y, BnCache { x_hat, inv_std, mode }))
    }

    pub fn backward(&mut self, cache: &BnCache<T>, dy: &Tensor<T>, layout: BnLayout) -> Tensor<T> {
        let (n, cs, es) = self.geometry(dy, layout).expect("shape checked in forward");
        let nf: T = cast(n as f64);
        let mut dx = Tensor::zeros(dy.shape());
        for ch in 0..self.channels() {
            let idx = |i: usize| ch * cs + i * es;
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for i in 0..n {
                let k = idx(i);
                sum_dy += dy.data[k];
                sum_dy_xhat += dy.data[k] * cache.x_hat[k];
            }
            self.beta.grad.data[ch] += sum_dy;
            self.gamma.grad.data[ch] += sum_dy_xhat;
            let g = self.gamma.value.data[ch];
            let s = cache.inv_std[ch];
            match cache.mode {
                Mode::Train => {
                    let scale = g * s / nf;
                    for i in 0..n {
                        let k = idx(i);
                        dx.data[k] = scale * (nf * dy.data[k] - sum_dy - cache.x_hat[k] * sum_dy_xhat);
                    }
                }
                Mode::Eval => {
                    for i in 0..n {
                        let k = idx(i);
                        dx.data[k] = dy.data[k] * g * s;
                    }
                }
            }
        }
        dx
    }
}

impl<T: Real> Module<T> for BatchNorm<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "running_mean"), &mut self.running_mean);
        f(join(prefix, "running_var"), &mut self.running_var);
    }
}
