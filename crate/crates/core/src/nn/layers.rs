use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::kernels::Rounding;
use super::params::{Bound, ParamId, ParamStore};
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// Weight initialisation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// N(0, 2 / fan_in), for layers feeding a ReLU.
    HeNormal,
    /// U(-a, a) with a = sqrt(6 / (fan_in + fan_out)), for final layers.
    XavierUniform,
    Zeros,
}

impl Init {
    pub fn sample<T: Element>(
        self,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match self {
            Init::HeNormal => {
                let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::XavierUniform => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-a, a);
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::Zeros => vec![0.0; n],
        };
        Tensor::from_f64s(shape, &data).expect("init shape is valid")
    }
}

/// Square-kernel convolution layer.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub rounding: Rounding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let fan_out = out_channels * kernel * kernel;
        let shape = [out_channels, in_channels, kernel, kernel];
        let weight = store.register(format!("{name}.weight"), init.sample(&shape, fan_in, fan_out, rng));
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[out_channels]).expect("valid"));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            rounding: Rounding::Exact,
        }
    }

    /// 3x3, stride 2, padding 1 with floor rounding: halves even H and W.
    pub fn downsample3x3<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut conv = Self::new(store, name, in_channels, out_channels, 3, 2, 1, Init::HeNormal, rng);
        conv.rounding = Rounding::Floor;
        conv
    }

    /// 3x3, stride 1, padding 1: keeps H and W.
    pub fn same3x3<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self::new(store, name, in_channels, out_channels, 3, 1, 1, Init::HeNormal, rng)
    }

    pub fn pointwise<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        Self::new(store, name, in_channels, out_channels, 1, 1, 0, init, rng)
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d_rounded(
            x,
            p.var(self.weight),
            p.var(self.bias),
            self.stride,
            self.padding,
            self.rounding,
        )
    }
}

/// 2x2 stride-2 transposed convolution.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvTranspose2d {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let shape = [in_channels, out_channels, 2, 2];
        let weight = store.register(
            format!("{name}.weight"),
            Init::HeNormal.sample(&shape, in_channels * 4, out_channels * 4, rng),
        );
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[out_channels]).expect("valid"));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.conv_transpose2x2(x, p.var(self.weight), p.var(self.bias))
    }
}

/// Doubling upsampler: learned transposed conv, or parameter-free nearest.
#[derive(Debug, Clone)]
pub enum Upsample {
    Nearest,
    Transposed(ConvTranspose2d),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    Transposed,
}

impl Upsample {
    /// Transposed mode maps `in_channels` to `out_channels`; nearest mode
    /// keeps the channel count.
    pub fn new<T: Element>(
        mode: UpsampleMode,
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        match mode {
            UpsampleMode::Nearest => Upsample::Nearest,
            UpsampleMode::Transposed => {
                Upsample::Transposed(ConvTranspose2d::new(store, name, in_channels, out_channels, rng))
            }
        }
    }

    pub fn out_channels(&self, in_channels: usize) -> usize {
        match self {
            Upsample::Nearest => in_channels,
            Upsample::Transposed(t) => t.out_channels,
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        match self {
            Upsample::Nearest => g.upsample_nearest(x, 2),
            Upsample::Transposed(t) => t.forward(g, p, x),
        }
    }
}

/// Fully connected layer on a vector.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.register(
            format!("{name}.weight"),
            init.sample(&[out_features, in_features], in_features, out_features, rng),
        );
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[out_features]).expect("valid"));
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p.var(self.weight), p.var(self.bias))
    }
}

/// conv -> ReLU -> conv -> ReLU. The first conv sets the channel count,
/// the second keeps it.
#[derive(Debug, Clone)]
pub struct DoubleConv {
    pub first: Conv2d,
    pub second: Conv2d,
}

impl DoubleConv {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            first: Conv2d::same3x3(store, &format!("{name}.conv1"), in_channels, out_channels, rng),
            second: Conv2d::same3x3(store, &format!("{name}.conv2"), out_channels, out_channels, rng),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.second.out_channels
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.first.forward(g, p, x)?;
        let y = g.relu(y)?;
        let y = self.second.forward(g, p, y)?;
        g.relu(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn double_conv_shape_and_zero_weights() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = seeded(3);
        let block = DoubleConv::new(&mut store, "b", 1, 8, &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::full(&[1, 32, 32], 0.5).unwrap());
        let y = block.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.value(y).shape(), &[8, 32, 32]);

        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.value(id).shape().to_vec();
            store.set_value(id, Tensor::zeros(&shape).unwrap()).unwrap();
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::full(&[1, 32, 32], 0.5).unwrap());
        let y = block.forward(&mut g, &p, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_seeded() {
        let a: Tensor<f32> = Init::HeNormal.sample(&[4, 4], 4, 4, &mut seeded(1));
        let b: Tensor<f32> = Init::HeNormal.sample(&[4, 4], 4, 4, &mut seeded(1));
        assert_eq!(a, b);
        let x: Tensor<f64> = Init::XavierUniform.sample(&[100], 10, 10, &mut seeded(2));
        let bound = (6.0f64 / 20.0).sqrt();
        assert!(x.data().iter().all(|v| v.abs() <= bound));
    }
}
