//! Reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every differentiable operation applied to nodes that
//! require gradients is appended in execution order, so walking the tape
//! backwards visits each node after all of its consumers. Gradients
//! accumulate across calls to [`Graph::backward`] until cleared with
//! [`Graph::zero_grads`].

mod ops;

pub use ops::{
    check_dropout_rate, Binary, BceWithLogits, Concat, Dropout, Matmul, Reduce, Reshape, ScalarBinary, Slice,
    Softmax, Unary,
};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// A differentiable operation with its local backward rule.
///
/// `forward` may stash whatever the backward rule needs (im2col buffers,
/// argmax indices, dropout masks); the op is kept on the tape afterwards.
pub trait DiffOp<T: Element> {
    fn name(&self) -> &str;

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    /// Gradients with respect to each input, given the gradient of the
    /// output. Entries whose `needs` flag is false may be `None`.
    fn backward(
        &self,
        grad_out: &Tensor<T>,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node<T: Element> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    parents: Vec<usize>,
    op: Option<Box<dyn DiffOp<T>>>,
    requires_grad: bool,
}

pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    tape: Vec<usize>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            tape: Vec::new(),
        }
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Leaf node whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf node that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Node {
            value,
            grad: None,
            parents: Vec::new(),
            op: None,
            requires_grad,
        })
    }

    /// Runs `op` forward on `inputs` and records it on the tape.
    ///
    /// When no input requires a gradient the result is a constant with no
    /// parents and nothing is recorded.
    pub fn apply(&mut self, mut op: impl DiffOp<T> + 'static, inputs: &[Var]) -> Result<Var> {
        let value = {
            let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            op.forward(&vals)?
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        if !requires_grad {
            return Ok(self.constant(value));
        }
        let var = self.push(Node {
            value,
            grad: None,
            parents: inputs.iter().map(|v| v.0).collect(),
            op: Some(Box::new(op)),
            requires_grad: true,
        });
        self.tape.push(var.0);
        Ok(var)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn parents(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].parents.iter().map(|&p| Var(p)).collect()
    }

    pub fn op_name(&self, v: Var) -> Option<&str> {
        self.nodes[v.0].op.as_ref().map(|op| op.name())
    }

    /// Number of recorded differentiable operations.
    pub fn tape_len(&self) -> usize {
        self.tape.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Propagates gradients from a scalar `root` to every reachable node
    /// that requires them, adding into any gradient already present.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_shape = self.nodes[root.0].value.shape().to_vec();
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::NonScalarRoot(root_shape));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut pass: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        pass[root.0] = Some(Tensor::ones(&root_shape)?);

        for &idx in self.tape.iter().rev() {
            if idx > root.0 {
                continue;
            }
            let Some(grad_out) = pass[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let op = node.op.as_ref().expect("taped node carries an op");
            let inputs: Vec<&Tensor<T>> =
                node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| self.nodes[p].requires_grad)
                .collect();
            let grads = op.backward(&grad_out, &inputs, &node.value, &needs)?;
            for ((&parent, grad), need) in node.parents.iter().zip(grads).zip(needs) {
                let Some(grad) = grad.filter(|_| need) else {
                    continue;
                };
                debug_assert_eq!(grad.shape(), self.nodes[parent].value.shape(), "{}", op.name());
                accumulate(&mut pass[parent], grad);
            }
            pass[idx] = Some(grad_out);
        }

        for (node, g) in self.nodes.iter_mut().zip(pass) {
            if let (true, Some(g)) = (node.requires_grad, g) {
                accumulate(&mut node.grad, g);
            }
        }
        Ok(())
    }

    /// Sets the gradient of each listed node to zero.
    pub fn zero_grads(&mut self, vars: &[Var]) {
        for v in vars {
            let node = &mut self.nodes[v.0];
            if node.requires_grad {
                node.grad = Some(
                    Tensor::zeros(node.value.shape()).expect("node shapes are always valid"),
                );
            }
        }
    }
}

fn accumulate<T: Element>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ReduceOp;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64s(&[v.len()], v).unwrap()
    }

    #[test]
    fn record_mul_has_parents() {
        let mut g = Graph::<f64>::new();
        let a = g.variable(t(&[2.]));
        let b = g.variable(t(&[3.]));
        let c = g.mul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[6.]);
        assert_eq!(g.parents(c), vec![a, b]);
    }

    #[test]
    fn constants_record_nothing() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2.]));
        let b = g.constant(t(&[3.]));
        let c = g.mul(a, b).unwrap();
        assert!(g.parents(c).is_empty());
        assert!(!g.requires_grad(c));
        assert_eq!(g.tape_len(), 0);
    }

    #[test]
    fn relu_sum_chain_tape_length() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(t(&[-1., 2.]));
        let r = g.relu(x).unwrap();
        let s = g.sum(r).unwrap();
        assert_eq!(g.tape_len(), 2);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0., 1.]);
    }

    #[test]
    fn square_sum_gradient_and_accumulation() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(t(&[1., 2., 3.]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2., 4., 6.]);
        assert_eq!(g.grad(loss).unwrap().data(), &[1.]);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[4., 8., 12.]);
        g.zero_grads(&[x]);
        assert_eq!(g.grad(x).unwrap().data(), &[0., 0., 0.]);
        g.zero_grads(&[x]);
        assert_eq!(g.grad(x).unwrap().data(), &[0., 0., 0.]);
        g.zero_grads(&[]);
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(t(&[0.]));
        let r = g.relu(x).unwrap();
        let s = g.sum(r).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(t(&[1., 2.]));
        let y = g.relu(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn backward_leaves_values_untouched() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(t(&[0.3, -0.7, 1.1]));
        let s = g.sigmoid(x).unwrap();
        let e = g.exp(s).unwrap();
        let loss = g.reduce(e, ReduceOp::Mean, None).unwrap();
        let before: Vec<_> = (0..g.node_count()).map(|i| g.value(Var(i)).clone()).collect();
        g.backward(loss).unwrap();
        for (i, v) in before.iter().enumerate() {
            assert_eq!(g.value(Var(i)), v);
        }
    }

    #[test]
    fn gradient_is_linear_in_loss_scale() {
        let grad_for = |scale: f32| {
            let mut g = Graph::<f32>::new();
            let x = g.variable(Tensor::from_f64s(&[3], &[0.4, -1.2, 2.5]).unwrap());
            let s = g.sigmoid(x).unwrap();
            let p = g.mul(s, x).unwrap();
            let l = g.sum(p).unwrap();
            let l = g.mul_scalar(l, scale).unwrap();
            g.backward(l).unwrap();
            g.grad(x).unwrap().clone()
        };
        let base = grad_for(1.0);
        let scaled = grad_for(3.5);
        for (a, b) in base.data().iter().zip(scaled.data()) {
            assert!((a * 3.5 - b).abs() <= 1e-6 * b.abs().max(1e-6));
        }
    }
}
