use super::{Module, NeuralError, Real, Result, Tensor};

/// SGD with heavy-ball momentum: `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Clone, Debug)]
pub struct SgdState<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    velocities: Vec<Tensor<T>>,
}

impl<T: Real> SgdState<T> {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocities: Vec::new(),
        }
    }

    pub fn velocities(&self) -> &[Tensor<T>] {
        &self.velocities
    }
}

/// Applies one update to every parameter of `model` using its accumulated
/// gradients. Velocity buffers are created on the first call.
pub fn sgd_step<T: Real, M: Module<T> + ?Sized>(state: &mut SgdState<T>, model: &mut M) -> Result<()> {
    let lr = T::from_f64(state.learning_rate).expect("finite learning rate");
    let mu = T::from_f64(state.momentum).expect("finite momentum");
    let fresh = state.velocities.is_empty();
    let mut k = 0;
    let mut err = None;
    model.visit_params("", &mut |name, p| {
        if err.is_some() {
            return;
        }
        if fresh {
            state.velocities.push(Tensor::zeros(p.value.shape()));
        }
        let Some(v) = state.velocities.get_mut(k) else {
            err = Some(NeuralError::ShapeMismatch(format!("no velocity buffer for {name}")));
            return;
        };
        k += 1;
        if v.shape() != p.value.shape() || p.grad.shape() != p.value.shape() {
            err = Some(NeuralError::ShapeMismatch(format!(
                "{name}: parameter {:?}, gradient {:?}, velocity {:?}",
                p.value.shape(),
                p.grad.shape(),
                v.shape()
            )));
            return;
        }
        for ((pv, g), vv) in p.value.data.iter_mut().zip(&p.grad.data).zip(v.data.iter_mut()) {
            *vv = mu * *vv + *g;
            *pv -= lr * *vv;
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if k != state.velocities.len() {
        return Err(NeuralError::ShapeMismatch(format!(
            "{} velocity buffers for {k} parameters",
            state.velocities.len()
        )));
    }
    Ok(())
}
