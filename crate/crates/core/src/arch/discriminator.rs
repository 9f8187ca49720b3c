//! Fully connected discriminators scoring a flattened (ground truth, candidate) pair.
//!
//! Each forepart layer is `linear -> ReLU [-> same-width linear -> ReLU]* -> dropout`;
//! the rear layer is `linear -> sigmoid` down to one output.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Init, Linear, ParamStore, DEFAULT_DROPOUT};
use crate::rng::{stream, Stream};
use crate::tensor::{sigmoid, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiscriminatorDesign {
    D4,
    D6,
    D4V,
    D5V,
}

impl DiscriminatorDesign {
    pub const ALL: [DiscriminatorDesign; 4] = [
        DiscriminatorDesign::D4,
        DiscriminatorDesign::D6,
        DiscriminatorDesign::D4V,
        DiscriminatorDesign::D5V,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            DiscriminatorDesign::D4 => "d4",
            DiscriminatorDesign::D6 => "d6",
            DiscriminatorDesign::D4V => "d4v",
            DiscriminatorDesign::D5V => "d5v",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            DiscriminatorDesign::D4 => "D-4",
            DiscriminatorDesign::D6 => "D-6",
            DiscriminatorDesign::D4V => "D-4V",
            DiscriminatorDesign::D5V => "D-5V",
        }
    }

    /// Forepart widths and, per forepart layer, how many same-width
    /// linear+ReLU stages follow the width-changing one.
    pub fn layout(self) -> (&'static [usize], &'static [usize]) {
        match self {
            DiscriminatorDesign::D4 => (&[512, 1024, 256, 64], &[0, 0, 0, 0]),
            DiscriminatorDesign::D6 => (&[512, 1024, 512, 256, 128, 64], &[0, 0, 0, 0, 0, 0]),
            DiscriminatorDesign::D4V => (&[512, 1024, 256, 64], &[1, 1, 1, 1]),
            DiscriminatorDesign::D5V => (&[512, 1024, 256, 64, 64], &[1, 2, 2, 1, 1]),
        }
    }
}

impl fmt::Display for DiscriminatorDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for DiscriminatorDesign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace('-', "");
        DiscriminatorDesign::ALL
            .into_iter()
            .find(|d| d.tag() == lower)
            .ok_or_else(|| {
                let valid: Vec<_> = DiscriminatorDesign::ALL.iter().map(|d| d.tag()).collect();
                Error::Config(format!(
                    "unknown discriminator `{s}`; valid tags: {}",
                    valid.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorSpec {
    pub design: DiscriminatorDesign,
    pub input_width: usize,
    pub dropout: f64,
}

impl DiscriminatorSpec {
    pub fn new(design: DiscriminatorDesign, input_width: usize) -> Self {
        Self {
            design,
            input_width,
            dropout: DEFAULT_DROPOUT,
        }
    }
}

#[derive(Debug, Clone)]
struct ForepartLayer {
    main: Linear,
    same_width: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct Discriminator<T: Element = f32> {
    spec: DiscriminatorSpec,
    params: ParamStore<T>,
    forepart: Vec<ForepartLayer>,
    rear: Linear,
}

impl<T: Element> Discriminator<T> {
    pub fn build(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        if spec.input_width == 0 {
            return Err(Error::Config("discriminator input width must be at least 1".into()));
        }
        crate::autodiff::check_dropout_rate(spec.dropout)?;
        let mut rng = stream(seed, Stream::DiscriminatorInit);
        let mut store = ParamStore::new();
        let (widths, repeats) = spec.design.layout();
        let mut width = spec.input_width;
        let mut forepart = Vec::with_capacity(widths.len());
        for (i, (&w, &r)) in widths.iter().zip(repeats).enumerate() {
            let main = Linear::new(&mut store, &format!("fc{i}"), width, w, Init::HeNormal, &mut rng);
            let same_width = (0..r)
                .map(|j| Linear::new(&mut store, &format!("fc{i}.same{j}"), w, w, Init::HeNormal, &mut rng))
                .collect();
            forepart.push(ForepartLayer { main, same_width });
            width = w;
        }
        let rear = Linear::new(&mut store, "rear", width, 1, Init::XavierUniform, &mut rng);
        Ok(Self {
            spec,
            params: store,
            forepart,
            rear,
        })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Forepart layers plus the rear layer.
    pub fn layer_count(&self) -> usize {
        self.forepart.len() + 1
    }

    /// Every linear transformation, same-width stages included.
    pub fn linear_count(&self) -> usize {
        self.forepart.iter().map(|l| 1 + l.same_width.len()).sum::<usize>() + 1
    }

    /// Width sequence of the chain, input first.
    pub fn widths(&self) -> Vec<usize> {
        let mut out = vec![self.spec.input_width];
        out.extend(self.forepart.iter().map(|l| l.main.out_features));
        out.push(1);
        out
    }

    /// Pre-sigmoid score of a flat input. `D(x)` is the sigmoid of this.
    pub fn forward_logit(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        rng: &mut impl Rng,
        training: bool,
    ) -> Result<Var> {
        let len = g.value(x).len();
        if g.value(x).rank() != 1 || len != self.spec.input_width {
            return Err(Error::mismatch(
                "discriminator",
                g.value(x).shape(),
                &[self.spec.input_width],
            ));
        }
        let mut h = x;
        for layer in &self.forepart {
            h = layer.main.forward(g, p, h)?;
            h = g.relu(h)?;
            for stage in &layer.same_width {
                h = stage.forward(g, p, h)?;
                h = g.relu(h)?;
            }
            h = g.dropout(h, self.spec.dropout, rng, training)?;
        }
        self.rear.forward(g, p, h)
    }

    /// `D(x)` in inference mode.
    pub fn probability(&self, x: &Tensor<T>) -> Result<T> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(x.flatten());
        let logit = self.forward_logit(&mut g, &p, x, &mut crate::rng::seeded(0), false)?;
        Ok(sigmoid(g.value(logit).item()?))
    }
}
