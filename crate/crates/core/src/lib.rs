//! Generalized spatial propagation: a 2D line-scan linear recurrence whose
//! per-step operators are input-dependent, row-stochastic and tridiagonal.
//!
//! - [`tensor`]: dense `B × C × H × W` storage and the GSPN-T file format.
//! - [`propagation`]: gate normalization, the four-direction scan and its
//!   analytic backward pass.
//! - [`oracle`]: dense-matrix ground truth and stochasticity / stability
//!   checkers.
//! - [`block`]: the full module (parameter projections, 4-direction scan,
//!   learnable merge) with gradients, checkpoints and a toy trainer.
//! - [`attention`]: softmax and causal linear attention baselines.

pub mod attention;
pub mod block;
pub mod error;
pub mod oracle;
pub mod propagation;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use propagation::{
    normalize_gates, scan_all_directions, scan_backward, scan_forward, Direction, FirstLine,
    GateField, ScanConfig, ScanGradients, ScanOutput,
};
pub use tensor::{AnyTensor, DType, Dims, Scalar, Tensor4, TensorError};
