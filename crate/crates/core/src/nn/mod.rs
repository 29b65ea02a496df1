//! Minimal differentiable building blocks.
//!
//! Layers keep no hidden state between calls: a forward pass that will be
//! differentiated returns a tape, and the matching backward pass consumes it
//! and accumulates into each [`Param`]'s gradient buffer. Everything is generic
//! over [`Scalar`] so the training path can run in `f32` while gradient checks
//! run in `f64`.

mod layers;
mod optim;

use std::fmt::{Debug, Display};

use ndarray::{ArrayD, IxDyn, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::distr::uniform::SampleUniform;
use rand::Rng;
use sha2::{Digest, Sha256};

pub use layers::{relu_inplace, Activation, Conv2d, Linear, Mlp, MlpTape};
pub use optim::{Optimizer, OptimizerKind};

/// Floating point element type usable by every layer.
pub trait Scalar:
    LinalgScalar
    + Float
    + FromPrimitive
    + NumAssign
    + ScalarOperand
    + SampleUniform
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// A trainable array together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    name: String,
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            value: ArrayD::zeros(IxDyn(shape)),
            grad: ArrayD::zeros(IxDyn(shape)),
        }
    }

    /// Uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
    pub fn fan_in_uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(name, shape);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let (lo, hi) = (T::from_f64_lossy(-bound), T::from_f64_lossy(bound));
        p.value.mapv_inplace(|_| rng.random_range(lo..hi));
        p
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Anything that owns an ordered list of parameters.
///
/// The order returned by `params` and `params_mut` must agree; optimizers and
/// checkpoints rely on it.
pub trait Parameters<T: Scalar> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// SHA-256 over parameter names and little-endian values.
    fn param_hash(&self) -> String {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        for p in self.params() {
            hasher.update(p.name().as_bytes());
            buf.clear();
            for &v in p.value.iter() {
                v.write_le(&mut buf);
            }
            hasher.update(&buf);
        }
        hex::encode(hasher.finalize())
    }

    fn all_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    fn copy_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.value.assign(&src.value);
        }
    }
}

/// Polyak averaging: `target = tau * online + (1 - tau) * target` per element.
pub fn soft_update<T: Scalar, M: Parameters<T>>(target: &mut M, online: &M, tau: T) {
    let keep = T::one() - tau;
    for (dst, src) in target.params_mut().into_iter().zip(online.params()) {
        ndarray::Zip::from(&mut dst.value)
            .and(&src.value)
            .for_each(|t, &o| *t = tau * o + keep * *t);
    }
}

macro_rules! impl_parameters_for_fields {
    ($ty:ident { $($field:ident),+ $(,)? }) => {
        impl<T: $crate::nn::Scalar> $crate::nn::Parameters<T> for $ty<T> {
            fn params(&self) -> Vec<&$crate::nn::Param<T>> {
                let mut out = Vec::new();
                $(out.extend($crate::nn::Parameters::params(&self.$field));)+
                out
            }

            fn params_mut(&mut self) -> Vec<&mut $crate::nn::Param<T>> {
                let mut out = Vec::new();
                $(out.extend($crate::nn::Parameters::params_mut(&mut self.$field));)+
                out
            }
        }
    };
}
pub(crate) use impl_parameters_for_fields;
