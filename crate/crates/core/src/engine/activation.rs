use serde::{Deserialize, Serialize};

use crate::engine::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Softmax,
}

/// Applies `kind` to `x`. Softmax normalises over the last (class) axis.
pub fn activations<T: Real>(x: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    x.check_finite("activation input")?;
    match kind {
        Activation::Relu => Ok(relu(x)),
        Activation::Softmax => softmax(x),
    }
}

pub(crate) fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    // NaN passes through so that divergence is not masked.
    x.map(|v| if v < T::zero() { T::zero() } else { v })
}

/// ReLU backward, keyed on the forward output (zero where the unit was off).
pub(crate) fn relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if y.shape() != dy.shape() {
        return Err(Error::dim("relu backward", format!("{:?} vs {:?}", y.shape(), dy.shape())));
    }
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&o, &g)| if o.is_nan() || o > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(y.shape().to_vec(), data)
}

pub(crate) fn softmax<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let k = *x
        .shape()
        .last()
        .ok_or_else(|| Error::dim("softmax", "scalar input has no class axis"))?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// Softmax backward from its output `p`: `dz = p ⊙ (dp − ⟨dp, p⟩)` per row.
pub(crate) fn softmax_backward<T: Real>(p: &Tensor<T>, dp: &Tensor<T>) -> Result<Tensor<T>> {
    if p.shape() != dp.shape() {
        return Err(Error::dim("softmax backward", format!("{:?} vs {:?}", p.shape(), dp.shape())));
    }
    let k = *p.shape().last().expect("class axis");
    let mut out = Vec::with_capacity(p.len());
    for (pr, gr) in p.data().chunks(k).zip(dp.data().chunks(k)) {
        let dot = pr.iter().zip(gr).fold(T::zero(), |a, (&x, &g)| a + x * g);
        out.extend(pr.iter().zip(gr).map(|(&x, &g)| x * (g - dot)));
    }
    Tensor::new(p.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetric_and_stable() {
        let s = activations(&Tensor::new(vec![2], vec![0.0f64, 0.0]).unwrap(), Activation::Softmax).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = activations(&Tensor::new(vec![2], vec![1000.0f64, 1000.0]).unwrap(), Activation::Softmax).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn relu_definition() {
        let r = activations(&Tensor::new(vec![2], vec![-1.0f64, 2.0]).unwrap(), Activation::Relu).unwrap();
        assert_eq!(r.data(), &[0.0, 2.0]);
    }

    #[test]
    fn softmax_rows_are_independent() {
        let x = Tensor::new(vec![2, 3], vec![1.0f64, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap();
        let p = softmax(&x).unwrap();
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let x = Tensor::new(vec![2], vec![f64::INFINITY, 0.0]).unwrap();
        assert!(matches!(activations(&x, Activation::Softmax), Err(Error::NonFinite { .. })));
    }
}
