//! Finite-difference verification of every backward rule.
//!
//! Each check builds a scalar loss `sum(out * R)` with a fixed random `R`,
//! runs reverse mode once, and compares selected input coordinates against
//! central differences in f64.

use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::Rng;

use crate::arch::{AttentionGate, Discriminator, DiscriminatorDesign, DiscriminatorSpec, Generator, GeneratorSpec, Topology};
use crate::autodiff::{DiffOp, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, ParamStore, Rounding};
use crate::rng::seeded;
use crate::tensor::{ReduceOp, Tensor};

pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_STEP: f64 = 1e-6;
/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const SCALE_FLOOR: f64 = 1e-3;

/// Central-difference estimate of the gradient of a scalar function.
pub fn finite_difference_grad(
    mut f: impl FnMut(&Tensor<f64>) -> Result<f64>,
    x: &Tensor<f64>,
    h: f64,
) -> Result<Tensor<f64>> {
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        grad.push(central_difference(&mut f, x, i, h)?);
    }
    Tensor::from_vec(x.shape(), grad)
}

fn central_difference(
    f: &mut impl FnMut(&Tensor<f64>) -> Result<f64>,
    x: &Tensor<f64>,
    i: usize,
    h: f64,
) -> Result<f64> {
    let mut probe = |delta: f64| -> Result<f64> {
        let mut data = x.data().to_vec();
        data[i] += delta;
        let v = f(&Tensor::from_vec(x.shape(), data)?)?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("function value {v} at coordinate {i}")));
        }
        Ok(v)
    };
    let plus = probe(h)?;
    let minus = probe(-h)?;
    Ok((plus - minus) / (2.0 * h))
}

/// Discrepancy between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

/// Builds the checked output from the graph leaves of a case's inputs.
pub type CaseFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

type ModelFn = Box<dyn Fn(&mut Graph<f64>, &Bound, Var) -> Result<Var>>;

/// A differentiable function of several tensors plus which coordinates to probe.
pub struct Case {
    pub inputs: Vec<Tensor<f64>>,
    /// Per input: `None` probes every coordinate, `Some(k)` a random `k` of them.
    pub budgets: Vec<Option<usize>>,
    pub f: CaseFn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub component: String,
    pub seed: u64,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Compares reverse mode against central differences for one case.
pub fn check_case(component: &str, case: &Case, seed: u64, h: f64, tol: f64) -> Result<CheckReport> {
    let mut rng = seeded(seed ^ 0x9e37_79b9);
    let mut g = Graph::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = (case.f)(&mut g, &vars)?;
    let weights: Vec<f64> = (0..g.value(out).len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let weights = Tensor::from_vec(g.value(out).shape(), weights)?;

    let loss_of = |g: &mut Graph<f64>, out: Var| -> Result<Var> {
        let r = g.constant(weights.clone());
        let prod = g.mul(out, r)?;
        g.sum(prod)
    };
    let loss = loss_of(&mut g, out)?;
    g.backward(loss)?;

    let mut coordinates = 0;
    let mut worst = 0.0f64;
    for (k, input) in case.inputs.iter().enumerate() {
        let analytic = match g.grad(vars[k]) {
            Some(t) => t.clone(),
            None => Tensor::zeros(input.shape())?,
        };
        let picks: Vec<usize> = match case.budgets[k] {
            None => (0..input.len()).collect(),
            Some(n) => sample(&mut rng, input.len(), n.min(input.len())).into_vec(),
        };
        let mut f = |probe: &Tensor<f64>| -> Result<f64> {
            let mut fg = Graph::new();
            let vs: Vec<Var> = case
                .inputs
                .iter()
                .enumerate()
                .map(|(j, t)| fg.constant(if j == k { probe.clone() } else { t.clone() }))
                .collect();
            let out = (case.f)(&mut fg, &vs)?;
            let l = loss_of(&mut fg, out)?;
            fg.value(l).item()
        };
        for i in picks {
            let a = analytic.data()[i];
            let mut err = relative_error(a, central_difference(&mut f, input, i, h)?);
            // A probe straddling a ReLU kink or a pooling switch is not a
            // backward error; retry with other steps before reporting.
            for step in [h / 10.0, h * 10.0] {
                if err <= tol {
                    break;
                }
                err = err.min(relative_error(a, central_difference(&mut f, input, i, step)?));
            }
            worst = worst.max(err);
            coordinates += 1;
        }
    }
    Ok(CheckReport {
        component: component.to_string(),
        seed,
        coordinates,
        max_rel_error: worst,
        passed: worst < tol,
    })
}

fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("valid shape")
}

type Body = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn op_case(inputs: Vec<Tensor<f64>>, f: Body) -> Case {
    Case {
        budgets: vec![None; inputs.len()],
        inputs,
        f: Box::new(f),
    }
}

/// Freshly initialised biases are exactly zero, so any unit whose inputs are
/// all zero sits on its ReLU kink. Biases are redrawn to move the check to a
/// generic point where the loss is differentiable.
fn model_case(
    x: Tensor<f64>,
    params: &ParamStore<f64>,
    per_param: usize,
    rng: &mut impl Rng,
    f: ModelFn,
) -> Case {
    let mut inputs = vec![x];
    let mut budgets = vec![None];
    for p in params.iter() {
        inputs.push(if p.value.rank() == 1 {
            uniform(rng, p.value.shape(), -0.1, 0.1)
        } else {
            p.value.clone()
        });
        budgets.push(Some(per_param));
    }
    Case {
        inputs,
        budgets,
        f: Box::new(move |g, vars| {
            let bound = Bound::from_vars(vars[1..].to_vec());
            f(g, &bound, vars[0])
        }),
    }
}

/// Names of every component covered by [`run_suite`], in report order.
pub fn components() -> Vec<String> {
    let ops = [
        "add", "sub", "mul", "div", "maximum", "add_scalar", "mul_scalar", "exp", "log", "neg", "relu", "sigmoid",
        "softmax", "matmul", "concat", "slice", "reshape", "sum", "mean", "reduce_max", "dropout", "bce_with_logits",
        "conv2d", "conv2d_stride2", "conv_transpose2x2", "max_pool2", "upsample_nearest", "scale_channels", "linear",
        "attention_gate",
    ];
    let mut out: Vec<String> = ops.iter().map(|s| s.to_string()).collect();
    out.extend(Topology::ALL.iter().map(|t| format!("generator:{t}")));
    out.extend(DiscriminatorDesign::ALL.iter().map(|d| format!("discriminator:{d}")));
    out
}

/// Builds the check case for one component.
pub fn build_case(component: &str, seed: u64) -> Result<Case> {
    let mut rng = seeded(seed);
    let r = &mut rng;
    let m = |r: &mut _| uniform(r, &[3, 4], -1.0, 1.0);
    let case = match component {
        "add" => op_case(vec![m(r), m(r)], |g, v| g.add(v[0], v[1])),
        "sub" => op_case(vec![m(r), m(r)], |g, v| g.sub(v[0], v[1])),
        "mul" => op_case(vec![m(r), m(r)], |g, v| g.mul(v[0], v[1])),
        "div" => op_case(vec![m(r), uniform(r, &[3, 4], 0.5, 2.0)], |g, v| g.div(v[0], v[1])),
        "maximum" => op_case(vec![m(r), m(r)], |g, v| g.maximum(v[0], v[1])),
        "add_scalar" => op_case(vec![m(r)], |g, v| g.add_scalar(v[0], 0.7)),
        "mul_scalar" => op_case(vec![m(r)], |g, v| g.mul_scalar(v[0], -1.3)),
        "exp" => op_case(vec![m(r)], |g, v| g.exp(v[0])),
        "log" => op_case(vec![uniform(r, &[3, 4], 0.2, 3.0)], |g, v| g.log(v[0])),
        "neg" => op_case(vec![m(r)], |g, v| g.neg(v[0])),
        "relu" => op_case(vec![m(r)], |g, v| g.relu(v[0])),
        "sigmoid" => op_case(vec![uniform(r, &[3, 4], -4.0, 4.0)], |g, v| g.sigmoid(v[0])),
        "softmax" => op_case(vec![uniform(r, &[3, 4], -3.0, 3.0)], |g, v| g.softmax(v[0], 1)),
        "matmul" => op_case(vec![m(r), uniform(r, &[4, 5], -1.0, 1.0)], |g, v| g.matmul(v[0], v[1])),
        "concat" => op_case(vec![m(r), uniform(r, &[3, 2], -1.0, 1.0)], |g, v| g.concat(&[v[0], v[1]], 1)),
        "slice" => op_case(vec![m(r)], |g, v| g.slice(v[0], 1, 1, 2)),
        "reshape" => op_case(vec![m(r)], |g, v| g.reshape(v[0], &[2, 6])),
        "sum" => op_case(vec![m(r)], |g, v| g.reduce(v[0], ReduceOp::Sum, Some(0))),
        "mean" => op_case(vec![m(r)], |g, v| g.reduce(v[0], ReduceOp::Mean, Some(1))),
        "reduce_max" => op_case(vec![m(r)], |g, v| g.reduce(v[0], ReduceOp::Max, Some(1))),
        "dropout" => op_case(vec![m(r)], |g, v| g.dropout(v[0], 0.3, &mut seeded(11), true)),
        "bce_with_logits" => {
            let targets = uniform(r, &[3, 4], 0.0, 1.0);
            let weight = uniform(r, &[3, 4], 0.5, 2.0);
            Case {
                inputs: vec![uniform(r, &[3, 4], -4.0, 4.0)],
                budgets: vec![None],
                f: Box::new(move |g, v| {
                    let t = g.constant(targets.clone());
                    g.bce_with_logits(v[0], t, Some(weight.clone()))
                }),
            }
        }
        "conv2d" => op_case(
            vec![
                uniform(r, &[2, 5, 6], -1.0, 1.0),
                uniform(r, &[3, 2, 3, 3], -0.5, 0.5),
                uniform(r, &[3], -0.1, 0.1),
            ],
            |g, v| g.conv2d(v[0], v[1], v[2], 1, 1),
        ),
        "conv2d_stride2" => op_case(
            vec![
                uniform(r, &[2, 8, 8], -1.0, 1.0),
                uniform(r, &[3, 2, 3, 3], -0.5, 0.5),
                uniform(r, &[3], -0.1, 0.1),
            ],
            |g, v| g.conv2d_rounded(v[0], v[1], v[2], 2, 1, Rounding::Floor),
        ),
        "conv_transpose2x2" => op_case(
            vec![
                uniform(r, &[3, 3, 4], -1.0, 1.0),
                uniform(r, &[3, 2, 2, 2], -0.5, 0.5),
                uniform(r, &[2], -0.1, 0.1),
            ],
            |g, v| g.conv_transpose2x2(v[0], v[1], v[2]),
        ),
        "max_pool2" => op_case(vec![uniform(r, &[2, 4, 6], -1.0, 1.0)], |g, v| g.max_pool2(v[0])),
        "upsample_nearest" => op_case(vec![uniform(r, &[2, 3, 3], -1.0, 1.0)], |g, v| g.upsample_nearest(v[0], 2)),
        "scale_channels" => op_case(
            vec![uniform(r, &[3, 4, 4], -1.0, 1.0), uniform(r, &[1, 4, 4], 0.0, 1.0)],
            |g, v| g.scale_channels(v[0], v[1]),
        ),
        "linear" => op_case(
            vec![uniform(r, &[6], -1.0, 1.0), uniform(r, &[4, 6], -0.5, 0.5), uniform(r, &[4], -0.1, 0.1)],
            |g, v| g.linear(v[0], v[1], v[2]),
        ),
        "attention_gate" => {
            let mut store = ParamStore::new();
            let gate = AttentionGate::new(&mut store, "gate", 4, 6, r);
            let x = uniform(r, &[6, 4, 4], -1.0, 1.0);
            let mut inputs = vec![uniform(r, &[4, 8, 8], -1.0, 1.0), x];
            let mut budgets = vec![None, None];
            for p in store.iter() {
                inputs.push(p.value.clone());
                budgets.push(None);
            }
            Case {
                inputs,
                budgets,
                f: Box::new(move |g, v| {
                    let bound = Bound::from_vars(v[2..].to_vec());
                    Ok(gate.forward(g, &bound, v[0], v[1])?.gated)
                }),
            }
        }
        other => {
            if let Some(tag) = other.strip_prefix("generator:") {
                let topology: Topology = tag.parse()?;
                let model = Generator::<f64>::build(GeneratorSpec::new(topology, 2), seed)?;
                let x = uniform(r, &[1, 16, 16], 0.0, 1.0);
                let params = model.params().clone();
                model_case(x, &params, 4, r, Box::new(move |g, p, x| Ok(model.forward(g, p, x)?.logits)))
            } else if let Some(tag) = other.strip_prefix("discriminator:") {
                let design: DiscriminatorDesign = tag.parse()?;
                let model = Discriminator::<f64>::build(DiscriminatorSpec::new(design, 128), seed)?;
                let x = uniform(r, &[128], 0.0, 1.0);
                let params = model.params().clone();
                // Reseeding per evaluation keeps the dropout masks fixed.
                model_case(
                    x,
                    &params,
                    4,
                    r,
                    Box::new(move |g, p, x| model.forward_logit(g, p, x, &mut seeded(seed ^ 0xd5), true)),
                )
            } else {
                return Err(Error::Config(format!("unknown gradcheck component `{other}`")));
            }
        }
    };
    Ok(case)
}

/// `x^2` with a deliberately wrong backward rule (`3x` instead of `2x`).
#[derive(Debug, Clone, Default)]
pub struct CorruptedSquare;

impl DiffOp<f64> for CorruptedSquare {
    fn name(&self) -> &str {
        "corrupted_square"
    }

    fn forward(&mut self, inputs: &[&Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(inputs[0].map(|v| v * v))
    }

    fn backward(
        &self,
        grad_out: &Tensor<f64>,
        inputs: &[&Tensor<f64>],
        _output: &Tensor<f64>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<f64>>>> {
        Ok(vec![Some(grad_out.zip_map(inputs[0], "corrupted_square", |g, x| 3.0 * x * g)?)])
    }
}

/// Runs the checker on [`CorruptedSquare`]; a working checker reports failure.
pub fn sentinel(seed: u64) -> Result<CheckReport> {
    let mut rng = seeded(seed);
    let case = Case {
        inputs: vec![uniform(&mut rng, &[3, 4], -1.0, 1.0)],
        budgets: vec![None],
        f: Box::new(|g, v| g.apply(CorruptedSquare, &[v[0]])),
    };
    check_case("sentinel:corrupted_square", &case, seed, DEFAULT_STEP, TOLERANCE)
}

/// Worst result per component across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSummary {
    pub component: String,
    pub seeds: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub components: Vec<ComponentSummary>,
    pub sentinel: CheckReport,
    pub elapsed: Duration,
}

impl SuiteReport {
    /// All components pass and the corrupted rule was caught.
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.passed) && !self.sentinel.passed
    }

    pub fn max_rel_error(&self) -> f64 {
        self.components.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .components
            .iter()
            .map(|c| {
                format!(
                    "{} {:<28} seeds={} coords={:<5} max_rel_err={:.3e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.component,
                    c.seeds,
                    c.coordinates,
                    c.max_rel_error
                )
            })
            .collect();
        out.push(format!(
            "{} {:<28} max_rel_err={:.3e} (corrupted backward must be flagged)",
            if self.sentinel.passed { "FAIL" } else { "PASS" },
            self.sentinel.component,
            self.sentinel.max_rel_error
        ));
        out
    }
}

/// Checks `components` (all of them when empty) over the given seeds.
pub fn run_suite(components_filter: &[String], seeds: &[u64]) -> Result<SuiteReport> {
    let start = Instant::now();
    let names = if components_filter.is_empty() {
        components()
    } else {
        components_filter.to_vec()
    };
    let mut summaries = Vec::with_capacity(names.len());
    for name in &names {
        let mut summary = ComponentSummary {
            component: name.clone(),
            seeds: seeds.len(),
            coordinates: 0,
            max_rel_error: 0.0,
            passed: true,
        };
        for &seed in seeds {
            let case = build_case(name, seed)?;
            let report = check_case(name, &case, seed, DEFAULT_STEP, TOLERANCE)?;
            summary.coordinates += report.coordinates;
            summary.max_rel_error = summary.max_rel_error.max(report.max_rel_error);
            summary.passed &= report.passed;
        }
        summaries.push(summary);
    }
    Ok(SuiteReport {
        components: summaries,
        sentinel: sentinel(seeds.first().copied().unwrap_or(0))?,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_difference_examples() {
        let x = Tensor::from_f64s(&[1], &[3.0]).unwrap();
        let d = finite_difference_grad(|t| Ok(t.data()[0] * t.data()[0]), &x, 1e-5).unwrap();
        assert!((d.data()[0] - 6.0).abs() < 1e-6);
        let z = Tensor::from_f64s(&[1], &[0.0]).unwrap();
        let d = finite_difference_grad(|t| Ok(crate::tensor::sigmoid(t.data()[0])), &z, 1e-5).unwrap();
        assert!((d.data()[0] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn non_finite_function_rejected() {
        let x = Tensor::from_f64s(&[1], &[0.0]).unwrap();
        assert!(finite_difference_grad(|_| Ok(f64::NAN), &x, 1e-5).is_err());
    }

    #[test]
    fn sentinel_is_caught() {
        let report = sentinel(0).unwrap();
        assert!(!report.passed);
        assert!(report.max_rel_error > 0.1);
    }

    #[test]
    fn elementary_ops_pass() {
        let ops: Vec<String> = components().into_iter().filter(|c| !c.contains(':')).collect();
        let report = run_suite(&ops, &[1, 2]).unwrap();
        for line in report.lines() {
            assert!(line.starts_with("PASS"), "{line}");
        }
    }

    #[test]
    fn unknown_component_rejected() {
        assert!(build_case("nope", 0).is_err());
    }
}
