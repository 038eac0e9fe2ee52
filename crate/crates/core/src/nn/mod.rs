//! Differentiable building blocks with hand-written backward passes.
//!
//! Activations travel as [`FeatureMap`] batches laid out `[batch, channel,
//! z, y, x]`; 2D maps use a depth of 1 and dense vectors use `1×1×1`
//! spatial extent. Every layer caches what its backward pass needs and
//! accumulates parameter gradients into the [`Param::grad`] slot.

mod conv;
mod gemm;
mod linear;
mod loss;
mod norm;
mod optim;
mod param;
mod sparsemax;

pub use conv::{Conv, ConvCache, ConvGeom, ConvTranspose, ConvTransposeCache};
pub use gemm::gemm;
pub use linear::{Linear, LinearCache};
pub use loss::{bce_loss, bce_loss_grad, bce_with_logits, sigmoid, PROB_EPS};
pub use norm::{CondBatchNorm, NormCache, NormMode, BN_EPS};
pub use optim::{optimizer_step, Optimizer, OptimizerConfig, OptimizerKind, SlotState};
pub use param::{FeatureMap, Param};
pub use sparsemax::{sparsemax, sparsemax_vjp};

/// In-place ReLU; returns the activation mask for the backward pass.
pub fn relu_forward(x: &mut FeatureMap) -> Vec<bool> {
    x.data
        .iter_mut()
        .map(|v| {
            let on = *v > 0.0;
            if !on {
                *v = 0.0;
            }
            on
        })
        .collect()
}

pub fn relu_backward(mask: &[bool], dy: &mut FeatureMap) {
    for (g, &on) in dy.data.iter_mut().zip(mask) {
        if !on {
            *g = 0.0;
        }
    }
}
