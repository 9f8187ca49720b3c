//! Differentiable layers used to assemble generators and discriminators.

mod kernels;
mod layers;
mod params;

pub use kernels::{
    conv_out_size, conv_out_size_rounded, Conv2dOp, ConvTranspose2x2Op, LinearOp, MaxPool2Op, Rounding, ScaleChannelsOp,
    UpsampleNearestOp,
};
pub use layers::{Conv2d, ConvTranspose2d, DoubleConv, Init, Linear, Upsample, UpsampleMode};
pub use params::{Bound, Param, ParamId, ParamStore};

/// Dropout rate used by discriminator foreparts unless configured otherwise.
pub const DEFAULT_DROPOUT: f64 = 0.5;
