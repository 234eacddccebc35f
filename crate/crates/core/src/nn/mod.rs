//! Miniature Vision Transformer with hand-derived backward passes.
//!
//! Activations for a batch of `B` sequences of `L` tokens are stored as a
//! single `(B·L) × d` matrix so every linear layer is one matrix product.

mod attention;
mod block;
mod layers;
mod param;
pub mod rows;
mod vit;

pub use attention::{softmax_rows, Attention, AttentionCache};
pub use block::{Block, BlockCache};
pub use layers::{gelu, gelu_grad, LayerNorm, LayerNormCache, Linear, LN_EPS};
pub use param::{init_rng, stream_rng, truncated_normal, Module, Param};
pub use vit::{
    count_parameters, EncoderCache, EncoderOutput, EncoderTrace, Head, HeadCache, ModelConfig,
    PromptInput, VitEncoder, patches_to_matrix,
};
pub(crate) use vit::{head_parameters, scatter_class_grad};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of model tensors: `f64` for gradient checks,
/// `f32` for training.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}
