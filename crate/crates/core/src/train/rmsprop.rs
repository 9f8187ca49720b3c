use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Element, Tensor};

/// Which update rule to run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum RmspropVariant {
    /// `s <- b2 s + (1 - b2) g^2`, `w <- w - lr g / sqrt(s + eps)`.
    #[default]
    Standard,
    /// The literal published formulas: minus-signed moving averages and an
    /// update multiplied by both the momentum buffer and the gradient. Kept
    /// only to demonstrate that it diverges; never used for training.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmspropConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub variant: RmspropVariant,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            variant: RmspropVariant::Standard,
        }
    }
}

/// Per-parameter moving averages for one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct RmspropState<T: Element = f32> {
    pub config: RmspropConfig,
    nu: Vec<Tensor<T>>,
    s: Vec<Tensor<T>>,
    steps: u64,
}

impl<T: Element> RmspropState<T> {
    pub fn new(config: RmspropConfig, store: &ParamStore<T>) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()).expect("valid shape"))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            nu: zeros(),
            s: zeros(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Momentum buffer of parameter `i` (registration order).
    pub fn nu(&self, i: usize) -> &Tensor<T> {
        &self.nu[i]
    }

    /// Squared-gradient average of parameter `i`.
    pub fn s(&self, i: usize) -> &Tensor<T> {
        &self.s[i]
    }

    /// Applies one update from the gradients accumulated in `store`.
    /// Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.s.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} parameters, store has {}",
                self.s.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        let grads: Vec<Tensor<T>> = ids.iter().map(|&id| store.grad_or_zero(id)).collect();
        for (&id, g) in ids.iter().zip(&grads) {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: store.get(id).name.clone(),
                    step: self.steps + 1,
                });
            }
        }
        let c = self.config;
        let sign = match c.variant {
            RmspropVariant::Standard => 1.0,
            RmspropVariant::AsPrinted => -1.0,
        };
        for (i, (&id, g)) in ids.iter().zip(&grads).enumerate() {
            let nu = self.nu[i].data_mut();
            let s = self.s[i].data_mut();
            let w = store.value_mut(id).data_mut();
            for j in 0..g.len() {
                let gj = g.data()[j].as_f64();
                let n = c.beta1 * nu[j].as_f64() + sign * (1.0 - c.beta1) * gj;
                let sq = c.beta2 * s[j].as_f64() + sign * (1.0 - c.beta2) * gj * gj;
                let step = match c.variant {
                    RmspropVariant::Standard => gj,
                    RmspropVariant::AsPrinted => n * gj,
                };
                nu[j] = T::of(n);
                s[j] = T::of(sq);
                w[j] = T::of(w[j].as_f64() - c.learning_rate * step / (sq + c.epsilon).sqrt());
            }
        }
        self.steps += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64, g: f64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        store.register("w", Tensor::scalar(w));
        set_grad(&mut store, g);
        store
    }

    fn set_grad(store: &mut ParamStore<f64>, g: f64) {
        let mut graph = crate::autodiff::Graph::new();
        let p = store.bind(&mut graph, true);
        let y = graph.mul_scalar(p.vars()[0], g).unwrap();
        store.zero_grads();
        graph.backward(y).unwrap();
        store.accumulate_grads(&graph, &p);
    }

    fn config(lr: f64, beta2: f64) -> RmspropConfig {
        RmspropConfig {
            learning_rate: lr,
            beta2,
            ..Default::default()
        }
    }

    #[test]
    fn hand_computed_step() {
        let mut store = scalar_store(1.0, 1.0);
        let mut opt = RmspropState::new(config(0.1, 0.9), &store);
        opt.step(&mut store).unwrap();
        let w = store.by_name("w").unwrap().value.item().unwrap();
        assert!((opt.s(0).item().unwrap() - 0.1).abs() < 1e-15);
        assert!((w - 0.683772).abs() < 1e-6, "{w}");
        assert!((opt.nu(0).item().unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut store = scalar_store(2.5, 0.0);
        let mut opt = RmspropState::new(config(0.1, 0.9), &store);
        opt.step(&mut store).unwrap();
        assert_eq!(store.by_name("w").unwrap().value.item().unwrap(), 2.5);
        assert_eq!(opt.s(0).item().unwrap(), 0.0);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut store = scalar_store(1.0, f64::NAN);
        let mut opt = RmspropState::new(RmspropConfig::default(), &store);
        match opt.step(&mut store) {
            Err(Error::NonFiniteGradient { param, step }) => assert_eq!((param.as_str(), step), ("w", 1)),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(store.by_name("w").unwrap().value.item().unwrap(), 1.0);
    }

    #[test]
    fn sign_opposes_gradient() {
        for g in [-3.0, -1e-3, 1e-3, 5.0] {
            let mut store = scalar_store(0.0, g);
            let mut opt = RmspropState::new(config(0.01, 0.9), &store);
            opt.step(&mut store).unwrap();
            let w = store.by_name("w").unwrap().value.item().unwrap();
            assert_eq!(w.signum(), -g.signum());
        }
    }

    /// Minimising w^2 / 2: the standard rule settles near 0, the literal
    /// formulas leave the domain of the square root.
    #[test]
    fn literal_formulas_diverge() {
        let run = |variant| {
            let mut store = scalar_store(1.0, 1.0);
            let mut opt = RmspropState::new(
                RmspropConfig {
                    learning_rate: 0.01,
                    variant,
                    ..Default::default()
                },
                &store,
            );
            for _ in 0..500 {
                let w = store.by_name("w").unwrap().value.item().unwrap();
                set_grad(&mut store, w);
                if opt.step(&mut store).is_err() {
                    return f64::NAN;
                }
            }
            store.by_name("w").unwrap().value.item().unwrap()
        };
        assert!(run(RmspropVariant::Standard).abs() < 0.05);
        assert!(!run(RmspropVariant::AsPrinted).is_finite());
    }

    #[test]
    fn repeatable() {
        let run = || {
            let mut store = scalar_store(1.0, 0.3);
            let mut opt = RmspropState::new(config(0.05, 0.99), &store);
            for _ in 0..10 {
                opt.step(&mut store).unwrap();
            }
            store.checksum()
        };
        assert_eq!(run(), run());
    }
}
