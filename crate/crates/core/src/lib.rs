//! Recurrent Highway Networks and baselines with exact gradients, spectral
//! analysis of their temporal Jacobians, and a small training stack.

pub mod cells;
pub mod data;
pub mod error;
pub mod grad;
pub mod loss;
pub mod model;
pub mod numerics;
pub mod spectral;
pub mod train;

pub use cells::{Cell, CellSpec, Family, InitScheme};
pub use error::{Error, Result};
pub use model::{Batch, DropoutMasks, InputKind, LossKind, Network, NetworkSpec, StepData};
