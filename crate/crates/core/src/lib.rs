//! A small deep-learning engine for binary semantic segmentation with
//! attention-gated U-nets and fully connected GAN discriminators.

pub mod arch;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autodiff::{DiffOp, Graph, Var};
pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
