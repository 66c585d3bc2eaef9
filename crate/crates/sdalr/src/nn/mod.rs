//! Minimal deterministic neural-network core: 1-D convolution, batch
//! normalization, linear and weight-normalized linear layers, dropout and
//! SGD with momentum. Everything is f64, single-threaded and backed by
//! hand-written backward passes so gradients can be checked against finite
//! differences exactly.

pub mod conv;
pub mod init;
pub mod linear;
pub mod norm;
pub mod ops;
pub mod sgd;

pub use conv::Conv1d;
pub use linear::{Linear, WnLinear};
pub use norm::BatchNorm1d;
pub use ops::{Dropout, GlobalAvgPool, Relu};
pub use sgd::SgdMomentum;

/// A single parameter (or non-trainable buffer) exposed during visitation.
pub struct ParamSlot<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    /// Buffers such as batch-norm running statistics are visited with
    /// `trainable = false`: checkpointed but never updated by the optimizer.
    pub trainable: bool,
    pub value: &'a mut [f64],
    pub grad: Option<&'a mut [f64]>,
}

/// Visitation order is the layer's field declaration order and must stay
/// stable: optimizer state and checkpoints are keyed by it.
pub trait Visit {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamSlot<'_>));

    fn zero_grads(&mut self) {
        self.visit_params("", &mut |slot| {
            if let Some(g) = slot.grad {
                g.fill(0.0);
            }
        });
    }
}

pub(crate) fn join_name(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
