//! A small neural toolkit with hand-written backward passes.
//!
//! Layers are generic over [`Real`]: training runs in `f32`, gradient checks
//! in `f64`. Every layer owns its parameters as [`Param`]s (value plus
//! accumulated gradient) and exposes them through [`Module`], which is what
//! the optimizer, the checkpoint code and the gradient checker walk.

mod batchnorm;
mod checkpoint;
mod conv;
mod fcn;
mod gradcheck;
mod init;
mod linear;
mod sgd;
mod tensor;
mod vfe;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

pub use batchnorm::{BatchNorm, BnCache, BnLayout};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use conv::{Conv, ConvBnRelu, ConvCache, ConvBnReluCache, ConvKind};
pub use fcn::{relu, relu_backward, FcnCache, FcnLayer, FeatureStack, FeatureStackCache};
pub use gradcheck::{
    flat_grads, flat_params, gradient_check, gradient_check_piecewise, relative_error, set_flat_params, zero_grads, GradCheck, GRADIENT_FLOOR,
};
pub use init::xavier_uniform;
pub use linear::Linear;
pub use sgd::{sgd_step, SgdState};
pub use tensor::Tensor;
pub use vfe::{group_max, group_max_backward, vfe_forward_masked, PointGroups, VfeCache, VfeLayer};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn to_npy(values: &[Self]) -> crate::kitti_io::NpyData;
}

impl Real for f32 {
    fn to_npy(values: &[Self]) -> crate::kitti_io::NpyData {
        crate::kitti_io::NpyData::F32(values.to_vec())
    }
}

impl Real for f64 {
    fn to_npy(values: &[Self]) -> crate::kitti_io::NpyData {
        crate::kitti_io::NpyData::F64(values.to_vec())
    }
}

#[inline]
pub fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("representable")
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("representable")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("batch normalization in training mode needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("voxel {0} has no unmasked points")]
    EmptyVoxelRow(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] crate::kitti_io::KittiError),
}

pub type Result<T, E = NeuralError> = std::result::Result<T, E>;

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }
}

/// Visitor access to the trainable parameters and persistent buffers of a
/// layer stack. Names are dotted paths, stable across runs.
pub trait Module<T: Real> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>));

    fn visit_buffers(&mut self, _prefix: &str, _f: &mut dyn FnMut(String, &mut Tensor<T>)) {}
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
