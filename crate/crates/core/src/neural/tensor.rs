use super::{cast, to_f64, Real};

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Self {
        Self::from_vec(shape, data.iter().map(|v| cast(*v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len(), "reshape size mismatch");
        self.shape = shape.to_vec();
        self
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.shape[1];
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| to_f64(*v)).collect()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| cast(to_f64(*v))).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates two rank-2 tensors along columns.
    pub fn hcat(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        assert_eq!(a.shape[0], b.shape[0], "hcat row mismatch");
        let (n, ca, cb) = (a.shape[0], a.shape[1], b.shape[1]);
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(a.row(i));
            data.extend_from_slice(b.row(i));
        }
        Tensor::from_vec(&[n, ca + cb], data)
    }

    /// Splits a rank-2 tensor after column `at`.
    pub fn hsplit(&self, at: usize) -> (Tensor<T>, Tensor<T>) {
        let (n, c) = (self.shape[0], self.shape[1]);
        let mut a = Vec::with_capacity(n * at);
        let mut b = Vec::with_capacity(n * (c - at));
        for i in 0..n {
            let r = self.row(i);
            a.extend_from_slice(&r[..at]);
            b.extend_from_slice(&r[at..]);
        }
        (Tensor::from_vec(&[n, at], a), Tensor::from_vec(&[n, c - at], b))
    }
}
