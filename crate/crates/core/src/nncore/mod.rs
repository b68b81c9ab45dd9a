//! Minimal deterministic neural-network core.
//!
//! Tensors, the LSTM cell, dense layers, 2-D convolution and pooling,
//! losses, optimizers, a finite-difference gradient checker and the shared
//! checkpoint container. Every layer has a hand-written backward pass; there
//! is no general autodiff graph.
//!
//! Layers are generic over [`Real`] so the same code trains in `f32` and is
//! gradient-checked in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod loss;
pub mod lstm;
pub mod optim;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use conv::{
    conv2d, conv2d_backward, crop_to_multiple, maxpool2d, maxpool2d_argmax, maxpool2d_backward,
    uncrop,
};
pub use dense::{dense_forward, Activation, DenseParams, Mlp};
pub use gradcheck::{grad_check, GradCheckReport, FD_EPS, GRAD_TOL};
pub use loss::{bce_logit_grad, bce_loss, cosine_sim, cosine_sim_backward, sigmoid};
pub use lstm::{lstm_encode, lstm_step, LstmParams, LstmTrace};
pub use optim::{adam_step, AdamConfig, AdamState, Optimizer, OptimizerKind};
pub use tensor::Tensor;

/// Floating-point element type used by every layer.
pub trait Real:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// A model or layer whose trainable tensors can be enumerated by name.
///
/// The enumeration order is fixed; optimizers, gradient checks and
/// checkpoints all rely on it. Gradients are stored in a value of the same
/// type with every tensor zero-initialized (see [`Parameterized::zeros_like`]).
pub trait Parameterized<T: Real> {
    fn params(&self) -> Vec<(String, &Tensor<T>)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.zero();
        z
    }

    fn zero(&mut self) {
        for (_, t) in self.params_mut() {
            t.fill(T::zero());
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|(_, t)| t.all_finite())
    }

    /// Elementwise `self += other`, matched by enumeration order.
    fn accumulate(&mut self, other: &Self) {
        let src = other.params();
        for ((_, dst), (_, s)) in self.params_mut().into_iter().zip(src) {
            for (a, &b) in dst.data_mut().iter_mut().zip(s.data()) {
                *a += b;
            }
        }
    }

    fn scale_all(&mut self, factor: T) {
        for (_, t) in self.params_mut() {
            t.scale(factor);
        }
    }
}

/// An ad-hoc ordered list of named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamList<T> {
    pub entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> ParamList<T> {
    pub fn new(entries: Vec<(String, Tensor<T>)>) -> Self {
        ParamList { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

impl<T: Real> Parameterized<T> for ParamList<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.clone(), t)).collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.clone(), t)).collect()
    }
}

/// Global L2 norm of all gradient tensors.
pub fn grad_norm<T: Real, P: Parameterized<T>>(grads: &P) -> T {
    grads
        .params()
        .iter()
        .map(|(_, t)| t.sum_sq())
        .sum::<T>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real, P: Parameterized<T>>(grads: &mut P, max_norm: T) -> T {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > T::zero() {
        grads.scale_all(max_norm / norm);
    }
    norm
}

/// Copies every tensor of `src` into `dst`, converting the element type.
pub fn cast_params<A: Real, B: Real>(
    src: &impl Parameterized<A>,
    dst: &mut impl Parameterized<B>,
) {
    let from = src.params();
    for ((_, d), (_, s)) in dst.params_mut().into_iter().zip(from) {
        *d = s.cast();
    }
}
