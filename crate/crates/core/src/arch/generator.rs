//! The four U-net generator topologies.
//!
//! All share the same skeleton: four encoder levels (double conv, with a
//! 2x2 max-pool in front of every level below the top), a bottom double conv,
//! and four decoder levels that upsample, merge with skip data and apply a
//! double conv. A final 1x1 conv produces one logit per pixel. They differ in
//! what the decoder merges at each level:
//!
//! * `unet`: `[skip, up]`
//! * `attention_unet`: `[gate(skip, up), up]`
//! * `advanced_attention_unet`: every encoder output above and at the level is
//!   routed down through stride-2 convs, the gathered tensors are
//!   concatenated into `g`, then `[gate(g, up), up]`
//! * `full_attention_unet`: below the top level, each encoder level is gated
//!   against the next level down; gate outputs from higher levels are routed
//!   down and merged as `[routed gates.., gate, up]`

use std::fmt;
use std::str::FromStr;

use crate::arch::gate::AttentionGate;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, DoubleConv, Init, ParamStore, Upsample, UpsampleMode};
use crate::rng::{stream, Stream};
use crate::tensor::{Element, Tensor};

/// Encoder levels above the bottom block.
pub const DEPTH: usize = 4;

/// Spatial sizes must be divisible by this.
pub const SIZE_MULTIPLE: usize = 1 << DEPTH;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    Unet,
    AttentionUnet,
    AdvancedAttentionUnet,
    FullAttentionUnet,
}

impl Topology {
    pub const ALL: [Topology; 4] = [
        Topology::Unet,
        Topology::AttentionUnet,
        Topology::AdvancedAttentionUnet,
        Topology::FullAttentionUnet,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Topology::Unet => "unet",
            Topology::AttentionUnet => "attention_unet",
            Topology::AdvancedAttentionUnet => "advanced_attention_unet",
            Topology::FullAttentionUnet => "full_attention_unet",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Topology::Unet => "U-net",
            Topology::AttentionUnet => "Attn. U-net",
            Topology::AdvancedAttentionUnet => "Adv. attn. U-net",
            Topology::FullAttentionUnet => "Full attn. U-net",
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Topology::ALL
            .into_iter()
            .find(|t| t.tag() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = Topology::ALL.iter().map(|t| t.tag()).collect();
                Error::Config(format!(
                    "unknown architecture `{s}`; valid tags: {}",
                    valid.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub topology: Topology,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub upsample: UpsampleMode,
}

impl GeneratorSpec {
    pub fn new(topology: Topology, base_channels: usize) -> Self {
        Self {
            topology,
            base_channels,
            in_channels: 1,
            out_channels: 1,
            upsample: UpsampleMode::Transposed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Channels at encoder level `level` (0 = top); level `DEPTH` is the bottom.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

/// Checks that an input of spatial size `h x w` fits the 4-level pyramid.
pub fn check_input_size(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(SIZE_MULTIPLE) || !w.is_multiple_of(SIZE_MULTIPLE) {
        return Err(Error::InvalidShape {
            shape: vec![h, w],
            reason: format!("height and width must be positive multiples of {SIZE_MULTIPLE}"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Generator<T: Element = f32> {
    spec: GeneratorSpec,
    params: ParamStore<T>,
    encoders: Vec<DoubleConv>,
    bottom: DoubleConv,
    ups: Vec<Upsample>,
    decoders: Vec<DoubleConv>,
    gates: Vec<Option<AttentionGate>>,
    /// `routes[src]` carries data from level `src` one level further down per conv.
    routes: Vec<Vec<Conv2d>>,
    head: Conv2d,
}

/// Logits plus the attention maps produced on the way.
#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    pub logits: Var,
    pub alphas: Vec<Var>,
}

impl<T: Element> Generator<T> {
    /// Builds the network with weights drawn from `seed`.
    pub fn build(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream(seed, Stream::GeneratorInit);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let ch = |l: usize| spec.channels(l);

        let encoders = (0..DEPTH)
            .map(|l| {
                let cin = if l == 0 { spec.in_channels } else { ch(l - 1) };
                DoubleConv::new(&mut store, &format!("enc{l}"), cin, ch(l), rng)
            })
            .collect();
        let bottom = DoubleConv::new(&mut store, "bottom", ch(DEPTH - 1), ch(DEPTH), rng);

        let mut ups = vec![Upsample::Nearest; DEPTH];
        let mut up_channels = [0; DEPTH];
        for l in (0..DEPTH).rev() {
            ups[l] = Upsample::new(spec.upsample, &mut store, &format!("up{l}"), ch(l + 1), ch(l), rng);
            up_channels[l] = ups[l].out_channels(ch(l + 1));
        }

        let mut gates: Vec<Option<AttentionGate>> = vec![None; DEPTH];
        let mut routes: Vec<Vec<Conv2d>> = vec![Vec::new(); DEPTH];
        match spec.topology {
            Topology::Unet => {}
            Topology::AttentionUnet => {
                for l in 0..DEPTH {
                    gates[l] = Some(AttentionGate::new(&mut store, &format!("gate{l}"), ch(l), up_channels[l], rng));
                }
            }
            Topology::AdvancedAttentionUnet => {
                for (src, chain) in routes.iter_mut().enumerate().take(DEPTH - 1) {
                    *chain = (src..DEPTH - 1)
                        .map(|m| Conv2d::downsample3x3(&mut store, &format!("route{src}.{m}"), ch(m), ch(m + 1), rng))
                        .collect();
                }
                for l in 0..DEPTH {
                    let g_channels = (l + 1) * ch(l);
                    gates[l] = Some(AttentionGate::new(&mut store, &format!("gate{l}"), g_channels, up_channels[l], rng));
                }
            }
            Topology::FullAttentionUnet => {
                for l in 1..DEPTH {
                    gates[l] = Some(AttentionGate::new(&mut store, &format!("gate{l}"), ch(l), ch(l + 1), rng));
                }
                for (src, chain) in routes.iter_mut().enumerate().take(DEPTH - 1).skip(1) {
                    *chain = (src..DEPTH - 1)
                        .map(|m| Conv2d::downsample3x3(&mut store, &format!("route{src}.{m}"), ch(m), ch(m + 1), rng))
                        .collect();
                }
            }
        }

        let mut decoders = vec![None; DEPTH];
        for l in (0..DEPTH).rev() {
            let merged = match spec.topology {
                Topology::Unet | Topology::AttentionUnet => ch(l) + up_channels[l],
                Topology::AdvancedAttentionUnet => (l + 1) * ch(l) + up_channels[l],
                Topology::FullAttentionUnet => l.max(1) * ch(l) + up_channels[l],
            };
            decoders[l] = Some(DoubleConv::new(&mut store, &format!("dec{l}"), merged, ch(l), rng));
        }
        let decoders = decoders.into_iter().map(|d| d.expect("every level built")).collect();
        let head = Conv2d::pointwise(&mut store, "head", ch(0), spec.out_channels, Init::XavierUniform, rng);

        Ok(Self {
            spec,
            params: store,
            encoders,
            bottom,
            ups,
            decoders,
            gates,
            routes,
            head,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn gate_count(&self) -> usize {
        self.gates.iter().flatten().count()
    }

    pub fn gates(&self) -> impl Iterator<Item = (usize, &AttentionGate)> {
        self.gates.iter().enumerate().filter_map(|(l, g)| g.as_ref().map(|g| (l, g)))
    }

    /// Stride-2 convolutions that carry data to lower levels.
    pub fn routing_conv_count(&self) -> usize {
        self.routes.iter().map(Vec::len).sum()
    }

    /// Forward pass on one `(C, H, W)` image.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<GeneratorOutput> {
        let shape = g.value(x).shape().to_vec();
        match shape[..] {
            [c, h, w] if c == self.spec.in_channels => check_input_size(h, w)?,
            _ => {
                return Err(Error::InvalidShape {
                    shape,
                    reason: format!("generator expects ({}, H, W) input", self.spec.in_channels),
                })
            }
        }

        let mut skips = Vec::with_capacity(DEPTH);
        let mut h = x;
        for (l, enc) in self.encoders.iter().enumerate() {
            if l > 0 {
                h = g.max_pool2(h)?;
            }
            h = enc.forward(g, p, h)?;
            skips.push(h);
        }
        let pooled = g.max_pool2(h)?;
        let bottom = self.bottom.forward(g, p, pooled)?;

        let mut alphas = Vec::new();
        // routed[src][k]: data from level `src` after k+1 routing convs
        let route = |g: &mut Graph<T>, chain: &[Conv2d], start: Var| -> Result<Vec<Var>> {
            let mut out = Vec::with_capacity(chain.len());
            let mut cur = start;
            for conv in chain {
                let y = conv.forward(g, p, cur)?;
                cur = g.relu(y)?;
                out.push(cur);
            }
            Ok(out)
        };

        let mut full_gated: Vec<Option<Var>> = vec![None; DEPTH];
        let mut routed: Vec<Vec<Var>> = vec![Vec::new(); DEPTH];
        match self.spec.topology {
            Topology::AdvancedAttentionUnet => {
                for src in 0..DEPTH - 1 {
                    routed[src] = route(g, &self.routes[src], skips[src])?;
                }
            }
            Topology::FullAttentionUnet => {
                for l in 1..DEPTH {
                    let below = if l + 1 < DEPTH { skips[l + 1] } else { bottom };
                    let gate = self.gates[l].as_ref().expect("full attention gate");
                    let out = gate.forward(g, p, skips[l], below)?;
                    alphas.push(out.alpha);
                    full_gated[l] = Some(out.gated);
                }
                for src in 1..DEPTH - 1 {
                    let start = full_gated[src].expect("gated above");
                    routed[src] = route(g, &self.routes[src], start)?;
                }
            }
            _ => {}
        }

        let mut d = bottom;
        for l in (0..DEPTH).rev() {
            let up = self.ups[l].forward(g, p, d)?;
            let mut parts = Vec::new();
            match self.spec.topology {
                Topology::Unet => parts.push(skips[l]),
                Topology::AttentionUnet => {
                    let gate = self.gates[l].as_ref().expect("gate per level");
                    let out = gate.forward(g, p, skips[l], up)?;
                    alphas.push(out.alpha);
                    parts.push(out.gated);
                }
                Topology::AdvancedAttentionUnet => {
                    let mut gathered: Vec<Var> = (0..l).map(|src| routed[src][l - src - 1]).collect();
                    gathered.push(skips[l]);
                    let gin = g.concat(&gathered, 0)?;
                    let gate = self.gates[l].as_ref().expect("gate per level");
                    let out = gate.forward(g, p, gin, up)?;
                    alphas.push(out.alpha);
                    parts.push(out.gated);
                }
                Topology::FullAttentionUnet => {
                    if l == 0 {
                        parts.push(skips[0]);
                    } else {
                        parts.extend((1..l).map(|src| routed[src][l - src - 1]));
                        parts.push(full_gated[l].expect("gated level"));
                    }
                }
            }
            parts.push(up);
            let merged = g.concat(&parts, 0)?;
            d = self.decoders[l].forward(g, p, merged)?;
        }
        let logits = self.head.forward(g, p, d)?;
        Ok(GeneratorOutput { logits, alphas })
    }

    /// Logits for one image, without recording gradients.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(image.clone());
        let out = self.forward(&mut g, &p, x)?;
        Ok(g.value(out.logits).clone())
    }
}
