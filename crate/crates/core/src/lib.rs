//! Tensor evolution: closed forms for tensor values that evolve across the
//! iterations of a loop.

#![allow(clippy::should_implement_trait)]

pub mod analysis;
pub mod codegen;
pub mod cr;
pub mod interp;
pub mod ir;
pub mod tensor;
pub mod tev;
pub mod verify;

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Element type of a tensor.
pub trait Scalar:
    Float + FromPrimitive + Debug + Display + Default + Send + Sync + Serialize + DeserializeOwned + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub use cr::{ChainOp, ScalarChain};
pub use tensor::{BinaryOp, Shape, SliceSpec, TensorError, TensorOf, UnaryOp};

/// The runtime value domain: 64-bit float tensors.
pub type Tensor = TensorOf<f64>;
pub type Tensor32 = TensorOf<f32>;
/// Scalar chains with exact integer operands.
pub type ExactChain = ScalarChain<i128>;
/// Scalar chains with exact rational operands.
pub type RationalChain = ScalarChain<num_rational::Ratio<i128>>;
