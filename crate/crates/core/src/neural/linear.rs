use rand::Rng;

use super::{join, xavier_uniform, Module, NeuralError, Param, Real, Result, Tensor};

/// `y = x Wᵀ + b` on rows. `weight` is `(out, in)`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize, bias: bool) -> Self {
        Self {
            weight: Param::new(xavier_uniform(rng, &[output, input], input, output)),
            bias: bias.then(|| Param::new(Tensor::zeros(&[output]))),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (input, output) = (self.input_dim(), self.output_dim());
        if x.shape().len() != 2 || x.shape()[1] != input {
            return Err(NeuralError::ShapeMismatch(format!(
                "linear expects (N, {input}), got {:?}",
                x.shape()
            )));
        }
        let n = x.shape()[0];
        let w = &self.weight.value.data;
        let mut y = Tensor::zeros(&[n, output]);
        for i in 0..n {
            let xi = x.row(i);
            let yi = y.row_mut(i);
            for (o, out) in yi.iter_mut().enumerate() {
                let wo = &w[o * input..(o + 1) * input];
                *out = wo.iter().zip(xi).map(|(a, b)| *a * *b).sum();
            }
            if let Some(b) = &self.bias {
                for (out, bv) in yi.iter_mut().zip(&b.value.data) {
                    *out += *bv;
                }
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let input = self.input_dim();
        let n = x.shape()[0];
        let mut dx = Tensor::zeros(&[n, input]);
        let w = &self.weight.value.data;
        let dw = &mut self.weight.grad.data;
        for i in 0..n {
            let xi = x.row(i);
            let dyi = dy.row(i);
            let dxi = &mut dx.data[i * input..(i + 1) * input];
            for (o, &g) in dyi.iter().enumerate() {
                if g == T::zero() {
                    continue;
                }
                let wo = &w[o * input..(o + 1) * input];
                let dwo = &mut dw[o * input..(o + 1) * input];
                for k in 0..input {
                    dwo[k] += g * xi[k];
                    dxi[k] += g * wo[k];
                }
            }
        }
        if let Some(b) = &mut self.bias {
            for i in 0..n {
                for (db, g) in b.grad.data.iter_mut().zip(dy.row(i)) {
                    *db += *g;
                }
            }
        }
        dx
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(join(prefix, "bias"), b);
        }
    }
}
