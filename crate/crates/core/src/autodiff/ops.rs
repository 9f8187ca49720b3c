//! Differentiable elementwise, linear-algebra, shape and loss operations.

use rand::Rng;

use super::{DiffOp, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, sigmoid, BinaryOp, Element, Operand, ReduceOp, Tensor, Trans, UnaryOp};

type Grads<T> = Result<Vec<Option<Tensor<T>>>>;

fn zip3<T: Element>(a: &Tensor<T>, b: &Tensor<T>, c: &Tensor<T>, f: impl Fn(T, T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .zip(c.data())
        .map(|((&x, &y), &z)| f(x, y, z))
        .collect();
    Tensor::from_parts_unchecked(a.shape().to_vec(), data)
}

/// Tensor-tensor elementwise op.
pub struct Binary(pub BinaryOp);

impl<T: Element> DiffOp<T> for Binary {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        inputs[0].binary(self.0, Operand::Tensor(inputs[1]))
    }

    fn backward(&self, g: &Tensor<T>, inputs: &[&Tensor<T>], _out: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let (a, b) = (inputs[0], inputs[1]);
        let zero = T::zero();
        let (ga, gb) = match self.0 {
            BinaryOp::Add => (g.clone(), g.clone()),
            BinaryOp::Sub => (g.clone(), g.map(|v| -v)),
            BinaryOp::Mul => (g.mul(b)?, g.mul(a)?),
            BinaryOp::Div => (
                g.zip_map(b, "div", |gv, bv| gv / bv)?,
                zip3(g, a, b, |gv, av, bv| -gv * av / (bv * bv)),
            ),
            BinaryOp::Max => (
                zip3(g, a, b, |gv, av, bv| if av >= bv { gv } else { zero }),
                zip3(g, a, b, |gv, av, bv| if av >= bv { zero } else { gv }),
            ),
        };
        Ok(vec![needs[0].then_some(ga), needs[1].then_some(gb)])
    }
}

/// Tensor-scalar elementwise op.
pub struct ScalarBinary<T>(pub BinaryOp, pub T);

impl<T: Element> DiffOp<T> for ScalarBinary<T> {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        inputs[0].binary(self.0, Operand::Scalar(self.1))
    }

    fn backward(&self, g: &Tensor<T>, inputs: &[&Tensor<T>], _out: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        let s = self.1;
        let ga = match self.0 {
            BinaryOp::Add | BinaryOp::Sub => g.clone(),
            BinaryOp::Mul => g.scale(s),
            BinaryOp::Div => g.map(|v| v / s),
            BinaryOp::Max => g.zip_map(inputs[0], "max", |gv, x| if x >= s { gv } else { T::zero() })?,
        };
        Ok(vec![Some(ga)])
    }
}

pub struct Unary(pub UnaryOp);

impl<T: Element> DiffOp<T> for Unary {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        inputs[0].unary(self.0)
    }

    fn backward(&self, g: &Tensor<T>, inputs: &[&Tensor<T>], out: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        let x = inputs[0];
        let gx = match self.0 {
            UnaryOp::Exp => g.mul(out)?,
            UnaryOp::Log => g.zip_map(x, "log", |gv, xv| gv / xv)?,
            UnaryOp::Neg => g.map(|v| -v),
            // subgradient 0 at exactly 0
            UnaryOp::Relu => g.zip_map(x, "relu", |gv, xv| if xv > T::zero() { gv } else { T::zero() })?,
            UnaryOp::Sigmoid => g.zip_map(out, "sigmoid", |gv, y| gv * y * (T::one() - y))?,
        };
        Ok(vec![Some(gx)])
    }
}

pub struct Matmul;

impl<T: Element> DiffOp<T> for Matmul {
    fn name(&self) -> &str {
        "matmul"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        inputs[0].matmul(inputs[1])
    }

    fn backward(&self, g: &Tensor<T>, inputs: &[&Tensor<T>], _out: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let (a, b) = (inputs[0], inputs[1]);
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let ga = needs[0].then(|| {
            let mut buf = vec![T::zero(); m * k];
            gemm(m, n, k, g.data(), Trans::No, b.data(), Trans::Yes, &mut buf, false);
            Tensor::from_parts_unchecked(vec![m, k], buf)
        });
        let gb = needs[1].then(|| {
            let mut buf = vec![T::zero(); k * n];
            gemm(k, m, n, a.data(), Trans::Yes, g.data(), Trans::No, &mut buf, false);
            Tensor::from_parts_unchecked(vec![k, n], buf)
        });
        Ok(vec![ga, gb])
    }
}

pub struct Concat {
    pub axis: usize,
}

impl<T: Element> DiffOp<T> for Concat {
    fn name(&self) -> &str {
        "concat"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Tensor::concat(inputs, self.axis)
    }

    fn backward(&self, g: &Tensor<T>, inputs: &[&Tensor<T>], _out: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let mut start = 0;
        let mut grads = Vec::with_capacity(inputs.len());
        for (t, &need) in inputs.iter().zip(needs) {
            let len = t.shape()[self.axis];
            grads.push(if need { Some(g.slice(self.axis, start, len)?) } else { None });
            start += len;
        }
        Ok(grads)
    }
}

pub struct Slice {
    pub axis: usize,
    pub start: usize,
    pub len: usize,
}

impl<T: Element> DiffOp<T> for Slice {
    fn name(&self) -> &str {
        "slice"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        inputs[0].slice(self.axis, self.start, self.len)
    }

    fn backward(&self, g: &Tensor<T>, inputs: &[&Tensor<T>], _out: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        let shape = inputs[0].shape();
        let outer: usize = shape[..self.axis].iter().product();
        let inner: usize = shape[self.axis + 1..].iter().product();
        let ax = shape[self.axis];
        let mut buf = vec![T::zero(); inputs[0].len()];
        let block = self.len * inner;
        for o in 0..outer {
            let dst = o * ax * inner + self.start * inner;
            buf[dst..dst + block].copy_from_slice(&g.data()[o * block..(o + 1) * block]);
        }
        Ok(vec![Some(Tensor::from_parts_unchecked(shape.to_vec(), buf))])
    }
}

pub struct Reshape {
    pub shape: Vec<usize>,
}

impl<T: Element> DiffOp<T> for Reshape {
    fn name(&self) -> &str {
        "reshape"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        inputs[0].reshape(&self.shape)
    }

    fn backward(&self, g: &Tensor<T>, inputs: &[&Tensor<T>], _out: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        Ok(vec![Some(g.reshape(inputs[0].shape())?)])
    }
}

/// Reduction over one axis, or over everything when `axis` is `None`.
pub struct Reduce {
    pub op: ReduceOp,
    pub axis: Option<usize>,
}

impl<T: Element> DiffOp<T> for Reduce {
    fn name(&self) -> &str {
        match self.op {
            ReduceOp::Sum => "sum",
            ReduceOp::Mean => "mean",
            ReduceOp::Max => "reduce_max",
        }
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        match self.axis {
            None => Ok(Tensor::scalar(inputs[0].reduce_all(self.op))),
            Some(axis) => inputs[0].reduce_axis(self.op, axis),
        }
    }

    fn backward(&self, g: &Tensor<T>, inputs: &[&Tensor<T>], out: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        let x = inputs[0];
        let shape = x.shape();
        let (outer, ax, inner) = match self.axis {
            None => (1, x.len(), 1),
            Some(a) => (
                shape[..a].iter().product(),
                shape[a],
                shape[a + 1..].iter().product(),
            ),
        };
        let mut buf = vec![T::zero(); x.len()];
        let n = T::of(ax as f64);
        for o in 0..outer {
            for i in 0..inner {
                let gv = g.data()[o * inner + i];
                match self.op {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let v = if self.op == ReduceOp::Mean { gv / n } else { gv };
                        for a in 0..ax {
                            buf[(o * ax + a) * inner + i] = v;
                        }
                    }
                    ReduceOp::Max => {
                        let target = out.data()[o * inner + i];
                        // first occurrence of the maximum takes the gradient
                        if let Some(a) = (0..ax).find(|&a| x.data()[(o * ax + a) * inner + i] == target) {
                            buf[(o * ax + a) * inner + i] = gv;
                        }
                    }
                }
            }
        }
        Ok(vec![Some(Tensor::from_parts_unchecked(shape.to_vec(), buf))])
    }
}

/// Shifted softmax along one axis.
pub struct Softmax {
    pub axis: usize,
}

impl Softmax {
    fn dims(&self, shape: &[usize]) -> Result<(usize, usize, usize)> {
        if self.axis >= shape.len() {
            return Err(Error::AxisOutOfRange {
                op: "softmax",
                axis: self.axis,
                rank: shape.len(),
            });
        }
        Ok((
            shape[..self.axis].iter().product(),
            shape[self.axis],
            shape[self.axis + 1..].iter().product(),
        ))
    }
}

impl<T: Element> DiffOp<T> for Softmax {
    fn name(&self) -> &str {
        "softmax"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        let (outer, ax, inner) = self.dims(x.shape())?;
        let d = x.data();
        let mut buf = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * ax + a) * inner + i;
                let m = (0..ax).map(|a| d[idx(a)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for a in 0..ax {
                    let e = (d[idx(a)] - m).exp();
                    buf[idx(a)] = e;
                    total = total + e;
                }
                for a in 0..ax {
                    buf[idx(a)] = buf[idx(a)] / total;
                }
            }
        }
        Ok(Tensor::from_parts_unchecked(x.shape().to_vec(), buf))
    }

    fn backward(&self, g: &Tensor<T>, _inputs: &[&Tensor<T>], out: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        let (outer, ax, inner) = self.dims(out.shape())?;
        let (y, gd) = (out.data(), g.data());
        let mut buf = vec![T::zero(); out.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * ax + a) * inner + i;
                let dot = (0..ax).map(|a| gd[idx(a)] * y[idx(a)]).fold(T::zero(), |s, v| s + v);
                for a in 0..ax {
                    buf[idx(a)] = y[idx(a)] * (gd[idx(a)] - dot);
                }
            }
        }
        Ok(vec![Some(Tensor::from_parts_unchecked(out.shape().to_vec(), buf))])
    }
}

/// Inverted dropout with a mask fixed at construction, so backward reuses
/// exactly the mask the forward pass applied.
pub struct Dropout<T: Element> {
    mask: Tensor<T>,
}

impl<T: Element> Dropout<T> {
    /// Samples a mask of `shape`: each entry is 0 with probability `rate`,
    /// otherwise `1 / (1 - rate)`.
    pub fn sample(shape: &[usize], rate: f64, rng: &mut impl Rng) -> Result<Self> {
        check_dropout_rate(rate)?;
        let keep = T::of(1.0 / (1.0 - rate));
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        Ok(Self {
            mask: Tensor::from_vec(shape, data)?,
        })
    }

    pub fn mask(&self) -> &Tensor<T> {
        &self.mask
    }
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::domain("dropout", format!("rate {rate} outside [0, 1)")));
    }
    Ok(())
}

impl<T: Element> DiffOp<T> for Dropout<T> {
    fn name(&self) -> &str {
        "dropout"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        inputs[0].mul(&self.mask)
    }

    fn backward(&self, g: &Tensor<T>, _inputs: &[&Tensor<T>], _out: &Tensor<T>, _needs: &[bool]) -> Grads<T> {
        Ok(vec![Some(g.mul(&self.mask)?)])
    }
}

/// Mean binary cross-entropy on logits, in the overflow-free form
/// `max(x, 0) - x t + ln(1 + e^{-|x|})`. Inputs: `[logits, targets]`.
pub struct BceWithLogits<T: Element> {
    pub weight: Option<Tensor<T>>,
}

pub(crate) fn bce_term<T: Element>(x: T, t: T) -> T {
    let zero = T::zero();
    x.max(zero) - x * t + (-x.abs()).exp().ln_1p()
}

impl<T: Element> DiffOp<T> for BceWithLogits<T> {
    fn name(&self) -> &str {
        "bce_with_logits"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (x, t) = (inputs[0], inputs[1]);
        if x.shape() != t.shape() {
            return Err(Error::mismatch("bce_with_logits", x.shape(), t.shape()));
        }
        if let Some(w) = &self.weight {
            if w.shape() != x.shape() {
                return Err(Error::mismatch("bce_with_logits", x.shape(), w.shape()));
            }
        }
        let mut total = T::zero();
        for i in 0..x.len() {
            let w = self.weight.as_ref().map_or(T::one(), |w| w.data()[i]);
            total = total + w * bce_term(x.data()[i], t.data()[i]);
        }
        Ok(Tensor::scalar(total / T::of(x.len() as f64)))
    }

    fn backward(&self, g: &Tensor<T>, inputs: &[&Tensor<T>], _out: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let (x, t) = (inputs[0], inputs[1]);
        let scale = g.data()[0] / T::of(x.len() as f64);
        let w = |i: usize| self.weight.as_ref().map_or(T::one(), |w| w.data()[i]);
        let gx = needs[0].then(|| {
            let data = (0..x.len())
                .map(|i| scale * w(i) * (sigmoid(x.data()[i]) - t.data()[i]))
                .collect();
            Tensor::from_parts_unchecked(x.shape().to_vec(), data)
        });
        let gt = needs[1].then(|| {
            let data = (0..x.len()).map(|i| -scale * w(i) * x.data()[i]).collect();
            Tensor::from_parts_unchecked(x.shape().to_vec(), data)
        });
        Ok(vec![gx, gt])
    }
}

impl<T: Element> Graph<T> {
    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        self.apply(Binary(op), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Max, a, b)
    }

    pub fn scalar_op(&mut self, op: BinaryOp, a: Var, s: T) -> Result<Var> {
        self.apply(ScalarBinary(op, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        self.scalar_op(BinaryOp::Add, a, s)
    }

    pub fn mul_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        self.scalar_op(BinaryOp::Mul, a, s)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        self.apply(Unary(op), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Softmax { axis }, &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Matmul, &[a, b])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.apply(Concat { axis }, parts)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.apply(Slice { axis, start, len }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Reshape { shape: shape.to_vec() }, &[a])
    }

    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        self.reshape(a, &[n])
    }

    pub fn reduce(&mut self, a: Var, op: ReduceOp, axis: Option<usize>) -> Result<Var> {
        self.apply(Reduce { op, axis }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(a, ReduceOp::Sum, None)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(a, ReduceOp::Mean, None)
    }

    /// Inverted dropout. Outside training, or at rate 0, returns `a` itself.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut impl Rng, training: bool) -> Result<Var> {
        check_dropout_rate(rate)?;
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let op = Dropout::sample(self.value(a).shape(), rate, rng)?;
        self.apply(op, &[a])
    }

    pub fn bce_with_logits(&mut self, logits: Var, targets: Var, weight: Option<Tensor<T>>) -> Result<Var> {
        self.apply(BceWithLogits { weight }, &[logits, targets])
    }
}
