use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, Init, ParamStore};
use crate::tensor::Element;

/// Additive attention gate.
///
/// `g` is the same-level skip tensor and `x_l` the data arriving from the
/// level below. Both are projected by 1x1 convolutions to a shared width,
/// `x_l` is resampled onto the grid of `g`, and a 1x1 convolution to one
/// channel followed by a sigmoid gives the coefficient map
/// `alpha = sigmoid(psi(relu(W_g g + W_x x_l)))`. The output is `g * alpha`,
/// with `alpha` broadcast over the channels of `g`.
#[derive(Debug, Clone)]
pub struct AttentionGate {
    pub w_g: Conv2d,
    pub w_x: Conv2d,
    pub psi: Conv2d,
    pub g_channels: usize,
    pub x_channels: usize,
    pub inter_channels: usize,
}

/// Result of one gate application.
#[derive(Debug, Clone, Copy)]
pub struct GateOutput {
    pub gated: Var,
    pub alpha: Var,
}

impl AttentionGate {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        g_channels: usize,
        x_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let inter_channels = (g_channels.min(x_channels) / 2).max(1);
        Self {
            w_g: Conv2d::pointwise(store, &format!("{name}.w_g"), g_channels, inter_channels, Init::HeNormal, rng),
            w_x: Conv2d::pointwise(store, &format!("{name}.w_x"), x_channels, inter_channels, Init::HeNormal, rng),
            psi: Conv2d::pointwise(store, &format!("{name}.psi"), inter_channels, 1, Init::XavierUniform, rng),
            g_channels,
            x_channels,
            inter_channels,
        }
    }

    pub fn forward<T: Element>(&self, gr: &mut Graph<T>, p: &Bound, g: Var, x_l: Var) -> Result<GateOutput> {
        let g_shape = gr.value(g).shape().to_vec();
        let x_shape = gr.value(x_l).shape().to_vec();
        let factor = alignment_factor(&g_shape, &x_shape)?;
        let a = self.w_g.forward(gr, p, g)?;
        let b = self.w_x.forward(gr, p, x_l)?;
        let b = gr.upsample_nearest(b, factor)?;
        let s = gr.add(a, b)?;
        let s = gr.relu(s)?;
        let s = self.psi.forward(gr, p, s)?;
        let alpha = gr.sigmoid(s)?;
        let gated = gr.scale_channels(g, alpha)?;
        Ok(GateOutput { gated, alpha })
    }
}

/// Integer factor by which `x` must be upsampled to land on the grid of `g`.
fn alignment_factor(g: &[usize], x: &[usize]) -> Result<usize> {
    let unalignable = || Error::mismatch("attention_gate", g, x);
    let (&[_, gh, gw], &[_, xh, xw]) = (g, x) else {
        return Err(unalignable());
    };
    if xh > gh || gh % xh != 0 || gw % xw != 0 || gh / xh != gw / xw {
        return Err(unalignable());
    }
    Ok(gh / xh)
}
