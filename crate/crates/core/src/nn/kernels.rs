//! Convolution, pooling, resampling and dense kernels as differentiable ops.
//!
//! All image tensors are `(C, H, W)`. Convolution is cross-correlation
//! lowered to a single gemm over an im2col buffer.

use crate::autodiff::{DiffOp, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Element, Tensor, Trans};

type Grads<T> = Result<Vec<Option<Tensor<T>>>>;

fn chw(op: &'static str, t: &Tensor<impl Element>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::InvalidShape {
            shape: t.shape().to_vec(),
            reason: format!("{op} expects a (C, H, W) tensor"),
        }),
    }
}

/// How a convolution treats a trailing window that does not fit exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    /// `(H + 2p - k)` must be divisible by the stride.
    #[default]
    Exact,
    /// Incomplete trailing windows are dropped.
    Floor,
}

/// Output extent of a convolution along one axis.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    conv_out_size_rounded(input, kernel, stride, pad, Rounding::Exact)
}

pub fn conv_out_size_rounded(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    rounding: Rounding,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::domain("conv2d", "stride must be at least 1"));
    }
    let span = input + 2 * pad;
    if span < kernel {
        return Err(Error::domain(
            "conv2d",
            format!("kernel {kernel} larger than padded input {span}"),
        ));
    }
    if rounding == Rounding::Exact && !(span - kernel).is_multiple_of(stride) {
        return Err(Error::domain(
            "conv2d",
            format!("non-integral output size: ({input} + 2*{pad} - {kernel}) / {stride}"),
        ));
    }
    Ok((span - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input offset read by `(row, col)` of the im2col matrix, if inside the
    /// unpadded image.
    #[inline]
    fn source(&self, c: usize, ki: usize, kj: usize, oy: usize, ox: usize) -> Option<usize> {
        let y = (oy * self.stride + ki) as isize - self.pad as isize;
        let x = (ox * self.stride + kj) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some((c * self.h + y as usize) * self.w + x as usize)
        }
    }
}

fn im2col<T: Element>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * g.cols()..(row + 1) * g.cols()];
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        if let Some(src) = g.source(c, ki, kj, oy, ox) {
                            dst[oy * g.ow + ox] = x[src];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Element>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let mut x = vec![T::zero(); g.c * g.h * g.w];
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * g.cols()..(row + 1) * g.cols()];
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        if let Some(dst) = g.source(c, ki, kj, oy, ox) {
                            x[dst] = x[dst] + src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// 2-D cross-correlation with square kernels. Inputs: `[x, weight, bias]`
/// with weight `(C_out, C_in, k, k)` and bias `(C_out)`.
pub struct Conv2dOp<T: Element> {
    pub stride: usize,
    pub pad: usize,
    pub rounding: Rounding,
    geom: Option<ConvGeom>,
    cols: Vec<T>,
}

impl<T: Element> Conv2dOp<T> {
    pub fn new(stride: usize, pad: usize) -> Self {
        Self::with_rounding(stride, pad, Rounding::Exact)
    }

    pub fn with_rounding(stride: usize, pad: usize, rounding: Rounding) -> Self {
        Self {
            stride,
            pad,
            rounding,
            geom: None,
            cols: Vec::new(),
        }
    }
}

impl<T: Element> DiffOp<T> for Conv2dOp<T> {
    fn name(&self) -> &str {
        "conv2d"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
        let (c, h, wd) = chw("conv2d", x)?;
        let (cout, k) = match *w.shape() {
            [co, ci, k1, k2] if ci == c && k1 == k2 => (co, k1),
            _ => return Err(Error::mismatch("conv2d", x.shape(), w.shape())),
        };
        if b.shape() != [cout] {
            return Err(Error::mismatch("conv2d", w.shape(), b.shape()));
        }
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            k,
            stride: self.stride,
            pad: self.pad,
            oh: conv_out_size_rounded(h, k, self.stride, self.pad, self.rounding)?,
            ow: conv_out_size_rounded(wd, k, self.stride, self.pad, self.rounding)?,
        };
        let cols = im2col(x.data(), &geom);
        let n = geom.cols();
        let mut out = vec![T::zero(); cout * n];
        for (co, row) in out.chunks_mut(n).enumerate() {
            row.fill(b.data()[co]);
        }
        gemm(cout, geom.rows(), n, w.data(), Trans::No, &cols, Trans::No, &mut out, true);
        self.geom = Some(geom);
        self.cols = cols;
        Ok(Tensor::from_parts_unchecked(vec![cout, geom.oh, geom.ow], out))
    }

    fn backward(&self, g: &Tensor<T>, inputs: &[&Tensor<T>], _out: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let geom = self.geom.expect("forward ran before backward");
        let w = inputs[1];
        let cout = w.shape()[0];
        let (rows, n) = (geom.rows(), geom.cols());
        let gx = needs[0].then(|| {
            let mut dcols = vec![T::zero(); rows * n];
            gemm(rows, cout, n, w.data(), Trans::Yes, g.data(), Trans::No, &mut dcols, false);
            Tensor::from_parts_unchecked(vec![geom.c, geom.h, geom.w], col2im(&dcols, &geom))
        });
        let gw = needs[1].then(|| {
            let mut dw = vec![T::zero(); cout * rows];
            gemm(cout, n, rows, g.data(), Trans::No, &self.cols, Trans::Yes, &mut dw, false);
            Tensor::from_parts_unchecked(w.shape().to_vec(), dw)
        });
        let gb = needs[2].then(|| {
            let db = g.data().chunks(n).map(|r| r.iter().copied().sum()).collect();
            Tensor::from_parts_unchecked(vec![cout], db)
        });
        Ok(vec![gx, gw, gb])
    }
}

/// Transposed convolution with a 2x2 kernel and stride 2, doubling H and W.
/// Inputs: `[x, weight (C_in, C_out, 2, 2), bias (C_out)]`.
pub struct ConvTranspose2x2Op;

impl<T: Element> DiffOp<T> for ConvTranspose2x2Op {
    fn name(&self) -> &str {
        "conv_transpose2x2"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
        let (cin, h, wd) = chw("conv_transpose2x2", x)?;
        let cout = match *w.shape() {
            [ci, co, 2, 2] if ci == cin => co,
            _ => return Err(Error::mismatch("conv_transpose2x2", x.shape(), w.shape())),
        };
        if b.shape() != [cout] {
            return Err(Error::mismatch("conv_transpose2x2", w.shape(), b.shape()));
        }
        let hw = h * wd;
        let mut y4 = vec![T::zero(); cout * 4 * hw];
        gemm(cout * 4, cin, hw, w.data(), Trans::Yes, x.data(), Trans::No, &mut y4, false);
        let (oh, ow) = (2 * h, 2 * wd);
        let mut out = vec![T::zero(); cout * oh * ow];
        for co in 0..cout {
            let bias = b.data()[co];
            for a in 0..2 {
                for bb in 0..2 {
                    let src = &y4[(co * 4 + a * 2 + bb) * hw..][..hw];
                    for i in 0..h {
                        for j in 0..wd {
                            out[(co * oh + 2 * i + a) * ow + 2 * j + bb] = src[i * wd + j] + bias;
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_parts_unchecked(vec![cout, oh, ow], out))
    }

    fn backward(&self, g: &Tensor<T>, inputs: &[&Tensor<T>], _out: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let (x, w) = (inputs[0], inputs[1]);
        let (cin, h, wd) = chw("conv_transpose2x2", x)?;
        let cout = w.shape()[1];
        let hw = h * wd;
        let (oh, ow) = (2 * h, 2 * wd);
        let mut g4 = vec![T::zero(); cout * 4 * hw];
        for co in 0..cout {
            for a in 0..2 {
                for bb in 0..2 {
                    let dst = &mut g4[(co * 4 + a * 2 + bb) * hw..][..hw];
                    for i in 0..h {
                        for j in 0..wd {
                            dst[i * wd + j] = g.data()[(co * oh + 2 * i + a) * ow + 2 * j + bb];
                        }
                    }
                }
            }
        }
        let gx = needs[0].then(|| {
            let mut dx = vec![T::zero(); cin * hw];
            gemm(cin, cout * 4, hw, w.data(), Trans::No, &g4, Trans::No, &mut dx, false);
            Tensor::from_parts_unchecked(x.shape().to_vec(), dx)
        });
        let gw = needs[1].then(|| {
            let mut dw = vec![T::zero(); cin * cout * 4];
            gemm(cin, hw, cout * 4, x.data(), Trans::No, &g4, Trans::Yes, &mut dw, false);
            Tensor::from_parts_unchecked(w.shape().to_vec(), dw)
        });
        let gb = needs[2].then(|| {
            let db = g.data().chunks(oh * ow).map(|r| r.iter().copied().sum()).collect();
            Tensor::from_parts_unchecked(vec![cout], db)
        });
        Ok(vec![gx, gw, gb])
    }
}

/// 2x2 max pooling with stride 2. Ties go to the first element of the window
/// in row-major order.
#[derive(Default)]
pub struct MaxPool2Op {
    argmax: Vec<usize>,
}

impl<T: Element> DiffOp<T> for MaxPool2Op {
    fn name(&self) -> &str {
        "max_pool2d"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        let (c, h, w) = chw("max_pool2d", x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::domain("max_pool2d", format!("odd spatial dims {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let d = x.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        self.argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let base = (ch * h + 2 * i) * w + 2 * j;
                    let mut best = base;
                    for idx in [base + 1, base + w, base + w + 1] {
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                    out.push(d[best]);
                    self.argmax.push(best);
                }
            }
        }
        Ok(Tensor::from_parts_unchecked(vec![c, oh, ow], out))
    }

    fn backward(&self, g: &Tensor<T>, inputs: &[&Tensor<T>], _out: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        let mut dx = vec![T::zero(); inputs[0].len()];
        for (&src, &gv) in self.argmax.iter().zip(g.data()) {
            dx[src] = dx[src] + gv;
        }
        Ok(vec![Some(Tensor::from_parts_unchecked(inputs[0].shape().to_vec(), dx))])
    }
}

/// Nearest-neighbour upsampling by an integer factor.
pub struct UpsampleNearestOp {
    pub factor: usize,
}

impl<T: Element> DiffOp<T> for UpsampleNearestOp {
    fn name(&self) -> &str {
        "upsample_nearest"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        let (c, h, w) = chw("upsample_nearest", x)?;
        let f = self.factor;
        if f == 0 {
            return Err(Error::domain("upsample_nearest", "factor must be at least 1"));
        }
        let (oh, ow) = (h * f, w * f);
        let d = x.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                let row = &d[(ch * h + y / f) * w..][..w];
                out.extend((0..ow).map(|xx| row[xx / f]));
            }
        }
        Ok(Tensor::from_parts_unchecked(vec![c, oh, ow], out))
    }

    fn backward(&self, g: &Tensor<T>, inputs: &[&Tensor<T>], _out: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        let (c, h, w) = chw("upsample_nearest", inputs[0])?;
        let f = self.factor;
        let (oh, ow) = (h * f, w * f);
        let mut dx = vec![T::zero(); c * h * w];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let dst = (ch * h + y / f) * w + xx / f;
                    dx[dst] = dx[dst] + g.data()[(ch * oh + y) * ow + xx];
                }
            }
        }
        Ok(vec![Some(Tensor::from_parts_unchecked(vec![c, h, w], dx))])
    }
}

/// Multiplies every channel of `x (C, H, W)` by a single map `a (1, H, W)`.
pub struct ScaleChannelsOp;

impl<T: Element> DiffOp<T> for ScaleChannelsOp {
    fn name(&self) -> &str {
        "scale_channels"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (x, a) = (inputs[0], inputs[1]);
        let (c, h, w) = chw("scale_channels", x)?;
        if a.shape() != [1, h, w] {
            return Err(Error::mismatch("scale_channels", x.shape(), a.shape()));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(c * hw);
        for ch in 0..c {
            let src = &x.data()[ch * hw..][..hw];
            out.extend(src.iter().zip(a.data()).map(|(&xv, &av)| xv * av));
        }
        Ok(Tensor::from_parts_unchecked(x.shape().to_vec(), out))
    }

    fn backward(&self, g: &Tensor<T>, inputs: &[&Tensor<T>], _out: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let (x, a) = (inputs[0], inputs[1]);
        let hw = a.len();
        let gx = needs[0].then(|| {
            let data = g
                .data()
                .chunks(hw)
                .flat_map(|gc| gc.iter().zip(a.data()).map(|(&gv, &av)| gv * av))
                .collect();
            Tensor::from_parts_unchecked(x.shape().to_vec(), data)
        });
        let ga = needs[1].then(|| {
            let mut da = vec![T::zero(); hw];
            for (gc, xc) in g.data().chunks(hw).zip(x.data().chunks(hw)) {
                for ((d, &gv), &xv) in da.iter_mut().zip(gc).zip(xc) {
                    *d = *d + gv * xv;
                }
            }
            Tensor::from_parts_unchecked(a.shape().to_vec(), da)
        });
        Ok(vec![gx, ga])
    }
}

/// Dense layer `W x + b` on a vector. Inputs: `[x (n_in), W (n_out, n_in), b (n_out)]`.
pub struct LinearOp;

impl<T: Element> DiffOp<T> for LinearOp {
    fn name(&self) -> &str {
        "linear"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
        let (nout, nin) = match *w.shape() {
            [o, i] => (o, i),
            _ => return Err(Error::mismatch("linear", x.shape(), w.shape())),
        };
        if x.rank() != 1 || x.len() != nin {
            return Err(Error::mismatch("linear", x.shape(), w.shape()));
        }
        if b.shape() != [nout] {
            return Err(Error::mismatch("linear", w.shape(), b.shape()));
        }
        let mut out = b.data().to_vec();
        gemm(nout, nin, 1, w.data(), Trans::No, x.data(), Trans::No, &mut out, true);
        Ok(Tensor::from_parts_unchecked(vec![nout], out))
    }

    fn backward(&self, g: &Tensor<T>, inputs: &[&Tensor<T>], _out: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let (x, w) = (inputs[0], inputs[1]);
        let (nout, nin) = (w.shape()[0], w.shape()[1]);
        let gx = needs[0].then(|| {
            let mut dx = vec![T::zero(); nin];
            gemm(nin, nout, 1, w.data(), Trans::Yes, g.data(), Trans::No, &mut dx, false);
            Tensor::from_parts_unchecked(vec![nin], dx)
        });
        let gw = needs[1].then(|| {
            let mut dw = vec![T::zero(); nout * nin];
            gemm(nout, 1, nin, g.data(), Trans::No, x.data(), Trans::No, &mut dw, false);
            Tensor::from_parts_unchecked(vec![nout, nin], dw)
        });
        Ok(vec![gx, gw, needs[2].then(|| g.clone())])
    }
}

impl<T: Element> Graph<T> {
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        self.apply(Conv2dOp::new(stride, pad), &[x, w, b])
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d_rounded(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        rounding: Rounding,
    ) -> Result<Var> {
        self.apply(Conv2dOp::with_rounding(stride, pad, rounding), &[x, w, b])
    }

    pub fn conv_transpose2x2(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.apply(ConvTranspose2x2Op, &[x, w, b])
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        self.apply(MaxPool2Op::default(), &[x])
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 1 {
            return Ok(x);
        }
        self.apply(UpsampleNearestOp { factor }, &[x])
    }

    pub fn scale_channels(&mut self, x: Var, a: Var) -> Result<Var> {
        self.apply(ScaleChannelsOp, &[x, a])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.apply(LinearOp, &[x, w, b])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run<T: Element>(op: impl DiffOp<T> + 'static, inputs: Vec<Tensor<T>>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars: Vec<_> = inputs.into_iter().map(|t| g.constant(t)).collect();
        let out = g.apply(op, &vars)?;
        Ok(g.value(out).clone())
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::<f64>::from_f64s(&[1, 2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let w = Tensor::ones(&[1, 1, 1, 1]).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        assert_eq!(run(Conv2dOp::new(1, 0), vec![x.clone(), w, b]).unwrap(), x);
    }

    #[test]
    fn conv_all_ones() {
        let x = Tensor::<f64>::ones(&[1, 3, 3]).unwrap();
        let w = Tensor::ones(&[1, 1, 3, 3]).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        let y = run(Conv2dOp::new(1, 0), vec![x, w, b]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.]);
    }

    #[test]
    fn conv_same_padding_shape() {
        let x = Tensor::<f32>::zeros(&[3, 64, 64]).unwrap();
        let w = Tensor::zeros(&[64, 3, 3, 3]).unwrap();
        let b = Tensor::zeros(&[64]).unwrap();
        assert_eq!(run(Conv2dOp::new(1, 1), vec![x, w, b]).unwrap().shape(), &[64, 64, 64]);
    }

    #[test]
    fn conv_errors() {
        let x = Tensor::<f32>::zeros(&[2, 5, 5]).unwrap();
        let w = Tensor::zeros(&[1, 3, 3, 3]).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        assert!(run(Conv2dOp::new(1, 1), vec![x.clone(), w, b.clone()]).is_err());
        let w = Tensor::zeros(&[1, 2, 2, 2]).unwrap();
        assert!(matches!(
            run(Conv2dOp::new(2, 0), vec![x.clone(), w.clone(), b.clone()]),
            Err(Error::Domain { .. })
        ));
        let y = run(Conv2dOp::with_rounding(2, 0, Rounding::Floor), vec![x, w, b]).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
    }

    #[test]
    fn pool_examples() {
        let x = Tensor::<f64>::from_f64s(&[1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        assert_eq!(run(MaxPool2Op::default(), vec![x]).unwrap().data(), &[4.]);
        let x = Tensor::<f32>::zeros(&[8, 16, 16]).unwrap();
        assert_eq!(run(MaxPool2Op::default(), vec![x]).unwrap().shape(), &[8, 8, 8]);
        let odd = Tensor::<f32>::zeros(&[1, 3, 4]).unwrap();
        assert!(run(MaxPool2Op::default(), vec![odd]).is_err());
    }

    #[test]
    fn pool_tie_routes_to_first() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::full(&[1, 2, 4], 7.0).unwrap());
        let p = g.max_pool2(x).unwrap();
        assert_eq!(g.value(p).data(), &[7., 7.]);
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1., 0., 1., 0., 0., 0., 0., 0.]);
    }

    #[test]
    fn upsample_examples() {
        let x = Tensor::<f64>::from_f64s(&[1, 1, 1], &[1.]).unwrap();
        let y = run(UpsampleNearestOp { factor: 2 }, vec![x]).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[1., 1., 1., 1.]);
        let x = Tensor::<f64>::from_f64s(&[2, 2, 2], &[1., -2., 3., 4., 0.5, 6., 7., 8.]).unwrap();
        let s = x.reduce_all(crate::tensor::ReduceOp::Sum);
        let y = run(UpsampleNearestOp { factor: 2 }, vec![x]).unwrap();
        assert_eq!(y.reduce_all(crate::tensor::ReduceOp::Sum), 4.0 * s);
    }

    #[test]
    fn transposed_conv_shape() {
        let x = Tensor::<f32>::zeros(&[64, 8, 8]).unwrap();
        let w = Tensor::zeros(&[64, 32, 2, 2]).unwrap();
        let b = Tensor::zeros(&[32]).unwrap();
        assert_eq!(run(ConvTranspose2x2Op, vec![x, w, b]).unwrap().shape(), &[32, 16, 16]);
    }

    #[test]
    fn transposed_conv_places_kernel() {
        // one input pixel, one channel: output is the kernel itself
        let x = Tensor::<f64>::from_f64s(&[1, 1, 1], &[2.]).unwrap();
        let w = Tensor::from_f64s(&[1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        let b = Tensor::from_f64s(&[1], &[0.5]).unwrap();
        let y = run(ConvTranspose2x2Op, vec![x, w, b]).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 6.5, 8.5]);
    }

    #[test]
    fn linear_examples() {
        let x = Tensor::<f64>::from_f64s(&[2], &[2., 3.]).unwrap();
        let w = Tensor::from_f64s(&[1, 2], &[1., 1.]).unwrap();
        let b = Tensor::from_f64s(&[1], &[1.]).unwrap();
        assert_eq!(run(LinearOp, vec![x.clone(), w, b]).unwrap().data(), &[6.]);
        let id = Tensor::from_f64s(&[2, 2], &[1., 0., 0., 1.]).unwrap();
        let zb = Tensor::zeros(&[2]).unwrap();
        assert_eq!(run(LinearOp, vec![x.clone(), id, zb.clone()]).unwrap(), x);
        let bad = Tensor::zeros(&[2, 3]).unwrap();
        assert!(run(LinearOp, vec![x, bad, zb]).is_err());
    }
}
