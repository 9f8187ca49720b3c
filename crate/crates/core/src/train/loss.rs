use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Element, Tensor};

/// Mean binary cross-entropy of `sigmoid(x)` against `t`, computed in the
/// fused form `max(x, 0) - x t + ln(1 + e^-|x|)` so large logits never overflow.
pub fn bce_with_logits<T: Element>(x: &Tensor<T>, t: &Tensor<T>, w: Option<&Tensor<T>>) -> Result<T> {
    if t.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::domain("bce_with_logits", "targets must lie in [0, 1]"));
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let tv = g.constant(t.clone());
    let loss = g.bce_with_logits(xv, tv, w.cloned())?;
    g.value(loss).item()
}

/// Two-step reference: sigmoid, then cross-entropy. Overflows for large |x|.
pub fn bce_naive(x: f64, t: f64) -> f64 {
    let p = sigmoid(x);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn bce(x: f64, t: f64) -> f64 {
        bce_with_logits(&Tensor::scalar(x), &Tensor::scalar(t), None).unwrap()
    }

    #[test]
    fn closed_form_values() {
        assert!((bce(0.0, 0.5) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce(30.0, 1.0) < 1e-9);
        assert!((bce(-30.0, 1.0) - 30.0).abs() < 1e-9);
        for x in [-100.0, 100.0] {
            for t in [0.0, 0.5, 1.0] {
                assert!(bce(x, t).is_finite());
            }
        }
    }

    #[test]
    fn matches_naive_form() {
        let mut rng = crate::rng::seeded(3);
        for _ in 0..10_000 {
            let x = rng.gen_range(-20.0..20.0);
            let t = rng.gen_range(0.0..=1.0);
            let (s, n) = (bce(x, t), bce_naive(x, t));
            assert!(s >= 0.0);
            if n.is_finite() {
                assert!((s - n).abs() < 1e-6, "{x} {t}: {s} vs {n}");
            }
        }
    }

    #[test]
    fn weighting_and_errors() {
        let x = Tensor::<f64>::from_f64s(&[2], &[0.0, 0.0]).unwrap();
        let t = Tensor::from_f64s(&[2], &[0.5, 0.5]).unwrap();
        let w = Tensor::from_f64s(&[2], &[2.0, 0.0]).unwrap();
        let l = bce_with_logits(&x, &t, Some(&w)).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_with_logits(&x, &Tensor::zeros(&[3]).unwrap(), None).is_err());
        let bad = Tensor::from_f64s(&[2], &[1.5, 0.0]).unwrap();
        assert!(bce_with_logits(&x, &bad, None).is_err());
    }
}
