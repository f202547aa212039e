use rand::Rng;

use super::{join, BatchNorm, BnCache, BnLayout, Linear, Mode, Module, Param, Real, Result, Tensor};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
    y
}

/// Gradient through ReLU given its input; the derivative at 0 is 0.
pub fn relu_backward<T: Real>(pre: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, p) in dx.data.iter_mut().zip(&pre.data) {
        if *p <= T::zero() {
            *g = T::zero();
        }
    }
    dx
}

/// Linear → batch norm → ReLU on rows.
///
/// The linear part has no bias: batch norm subtracts the per-feature mean,
/// so a bias would be cancelled exactly and `beta` plays its role.
#[derive(Clone, Debug)]
pub struct FcnLayer<T> {
    pub linear: Linear<T>,
    pub bn: BatchNorm<T>,
}

#[derive(Clone, Debug)]
pub struct FcnCache<T> {
    x: Tensor<T>,
    bn: BnCache<T>,
    pre: Tensor<T>,
}

impl<T: Real> FcnLayer<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize) -> Self {
        Self {
            linear: Linear::new(rng, input, output, false),
            bn: BatchNorm::new(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.linear.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.linear.output_dim()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, FcnCache<T>)> {
        let z = self.linear.forward(x)?;
        let (pre, bn) = self.bn.forward(&z, BnLayout::Rows, mode)?;
        let y = relu(&pre);
        Ok((
            y,
            FcnCache {
                x: x.clone(),
                bn,
                pre,
            },
        ))
    }

    pub fn backward(&mut self, cache: &FcnCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let dpre = relu_backward(&cache.pre, dy);
        let dz = self.bn.backward(&cache.bn, &dpre, BnLayout::Rows);
        self.linear.backward(&cache.x, &dz)
    }
}

impl<T: Real> Module<T> for FcnLayer<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.linear.visit_params(&join(prefix, "linear"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.bn.visit_buffers(&join(prefix, "bn"), f);
    }
}

/// A chain of [`FcnLayer`]s applied row-wise.
#[derive(Clone, Debug)]
pub struct FeatureStack<T> {
    pub layers: Vec<FcnLayer<T>>,
}

pub type FeatureStackCache<T> = Vec<FcnCache<T>>;

impl<T: Real> FcnCache<T> {
    /// Appends one 0/1 flag per ReLU unit, 1 where it is active.
    pub fn activation_pattern(&self, out: &mut Vec<usize>) {
        out.extend(self.pre.data.iter().map(|v| usize::from(*v > T::zero())));
    }
}

impl<T: Real> FeatureStack<T> {
    /// `dims = [in, hidden.., out]`.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, dims: &[usize]) -> Self {
        Self {
            layers: dims.windows(2).map(|w| FcnLayer::new(rng, w[0], w[1])).collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].input_dim()];
        d.extend(self.layers.iter().map(|l| l.output_dim()));
        d
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.output_dim()).unwrap_or(0)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, FeatureStackCache<T>)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (y, c) = layer.forward(&h, mode)?;
            caches.push(c);
            h = y;
        }
        Ok((h, caches))
    }

    pub fn backward(&mut self, caches: &FeatureStackCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let mut g = dy.clone();
        for (layer, cache) in self.layers.iter_mut().zip(caches).rev() {
            g = layer.backward(cache, &g);
        }
        g
    }
}

impl<T: Real> Module<T> for FeatureStack<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_buffers(&join(prefix, &i.to_string()), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::neural::{flat_grads, flat_params, gradient_check, set_flat_params, zero_grads, NeuralError};

    fn identity_layer() -> FcnLayer<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = FcnLayer::<f64>::new(&mut rng, 2, 2);
        layer.linear.weight.value = Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        layer.bn.eps = 0.0;
        layer
    }

    #[test]
    fn eval_identity_clamps_negatives() {
        let mut layer = identity_layer();
        let x = Tensor::from_f64(&[1, 2], &[-1.0, 2.0]);
        let (y, _) = layer.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data, vec![0.0, 2.0]);
    }

    #[test]
    fn train_needs_two_rows() {
        let mut layer = identity_layer();
        let x = Tensor::from_f64(&[1, 2], &[-1.0, 2.0]);
        assert!(matches!(layer.forward(&x, Mode::Train), Err(NeuralError::BatchTooSmall(1))));
    }

    #[test]
    fn train_normalizes_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut layer = FcnLayer::<f64>::new(&mut rng, 3, 4);
        let x: Vec<f64> = (0..3 * 50).map(|_| rng.random_range(-30.0..30.0)).collect();
        let x = Tensor::from_f64(&[50, 3], &x);
        let (_, cache) = layer.forward(&x, Mode::Train).unwrap();
        for c in 0..4 {
            let col: Vec<f64> = (0..50).map(|i| cache.pre.data[i * 4 + c]).collect();
            let mean = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let mut layer = identity_layer();
        let x = Tensor::from_f64(&[2, 2], &[1.0, 3.0, 3.0, 5.0]);
        layer.forward(&x, Mode::Train).unwrap();
        assert!((layer.bn.running_mean.data[0] - 0.02).abs() < 1e-12);
        // unbiased batch variance is 2
        assert!((layer.bn.running_var.data[1] - (0.99 + 0.01 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn eval_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = FcnLayer::<f32>::new(&mut rng, 5, 7);
        let x = Tensor::from_f64(&[9, 5], &(0..45).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>());
        let a = layer.forward(&x, Mode::Eval).unwrap().0;
        let b = layer.forward(&x, Mode::Eval).unwrap().0;
        assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    fn check_stack(mode: Mode) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut stack = FeatureStack::<f64>::new(&mut rng, &[6, 5, 4]);
        let x: Vec<f64> = (0..8 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_f64(&[8, 6], &x);
        let weights: Vec<f64> = (0..8 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        if mode == Mode::Eval {
            for l in &mut stack.layers {
                l.bn.running_mean.data.iter_mut().for_each(|v| *v = 0.1);
                l.bn.running_var.data.iter_mut().for_each(|v| *v = 0.8);
            }
        }
        let p0 = flat_params(&mut stack);
        let report = gradient_check(
            |p| {
                set_flat_params(&mut stack, p);
                zero_grads(&mut stack);
                let (y, caches) = stack.forward(&x, mode).unwrap();
                let loss: f64 = y.data.iter().zip(&weights).map(|(a, b)| a * b).sum();
                let dy = Tensor::from_f64(&[8, 4], &weights);
                stack.backward(&caches, &dy);
                (loss, flat_grads(&mut stack))
            },
            &p0,
            1e-5,
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn stack_gradients_train_mode() {
        check_stack(Mode::Train);
    }

    #[test]
    fn stack_gradients_eval_mode() {
        check_stack(Mode::Eval);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut layer = FcnLayer::<f64>::new(&mut rng, 4, 3);
        let x0: Vec<f64> = (0..6 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..6 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let report = gradient_check(
            |xv| {
                let x = Tensor::from_f64(&[6, 4], xv);
                let (y, cache) = layer.forward(&x, Mode::Train).unwrap();
                let loss: f64 = y.data.iter().zip(&w).map(|(a, b)| a * b).sum();
                let dx = layer.backward(&cache, &Tensor::from_f64(&[6, 3], &w));
                (loss, dx.data)
            },
            &x0,
            1e-5,
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
