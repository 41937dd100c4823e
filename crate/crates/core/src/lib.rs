//! A small CNN framework for four-class white blood cell classification:
//! tensor kernels, layers with hand-written backward passes, Adam, an image
//! pipeline, best-weight training, checkpoints, evaluation metrics and the
//! `wbcnet` command line.

pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod par;
pub mod real;
pub mod tensor;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{BinaryOp, Tensor};
