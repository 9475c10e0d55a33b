use crate::engine::activation::softmax;
use crate::engine::{Real, Tensor};
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

fn as_rows<T: Real>(probs: &Tensor<T>, n_labels: usize) -> Result<usize> {
    let k = *probs
        .shape()
        .last()
        .ok_or_else(|| Error::dim("cross entropy", "empty probability tensor"))?;
    let rows = probs.len() / k;
    if rows != n_labels {
        return Err(Error::dim(
            "cross entropy",
            format!("{rows} probability rows for {n_labels} labels"),
        ));
    }
    Ok(k)
}

/// Clamp to `[eps, 1]`, keeping NaN.
fn clamp<T: Real>(p: T, eps: T) -> T {
    if p.is_nan() {
        p
    } else {
        p.max(eps).min(T::one())
    }
}

/// Mean of `−log(max(p[label], ε))` over rows of `probs` (`[K]` or `[B, K]`).
pub fn cross_entropy_loss<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let k = as_rows(probs, labels.len())?;
    let eps = T::from_f64_lossy(LOG_CLAMP);
    let mut total = T::zero();
    for (row, &label) in probs.data().chunks(k).zip(labels) {
        if label >= k {
            return Err(Error::Index {
                what: "class label",
                index: label,
                limit: k,
            });
        }
        total = total - clamp(row[label], eps).ln();
    }
    Ok(total / T::from_usize(labels.len()).expect("batch size"))
}

/// Loss together with its gradient with respect to `probs`.
pub fn cross_entropy_with_grad<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let loss = cross_entropy_loss(probs, labels)?;
    let k = *probs.shape().last().expect("checked");
    let eps = T::from_f64_lossy(LOG_CLAMP);
    let scale = T::one() / T::from_usize(labels.len()).expect("batch size");
    let mut grad = Tensor::zeros(probs.shape().to_vec());
    for (i, &label) in labels.iter().enumerate() {
        let p = probs.data()[i * k + label];
        grad.data_mut()[i * k + label] = -scale / clamp(p, eps);
    }
    Ok((loss, grad))
}

/// Gradient of `cross_entropy(softmax(logits))` with respect to the logits,
/// in closed form: `softmax(logits) − onehot(label)`.
pub fn softmax_cross_entropy_logit_grad<T: Real>(logits: &Tensor<T>, label: usize) -> Result<Tensor<T>> {
    let mut p = softmax(logits)?;
    let k = p.len();
    if label >= k {
        return Err(Error::Index {
            what: "class label",
            index: label,
            limit: k,
        });
    }
    p.data_mut()[label] = p.data()[label] - T::one();
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_costs_nothing() {
        let p = Tensor::new(vec![3], vec![1.0f64, 0.0, 0.0]).unwrap();
        assert_eq!(cross_entropy_loss(&p, &[0]).unwrap(), 0.0);
    }

    #[test]
    fn coin_flip_is_ln2() {
        let p = Tensor::new(vec![2], vec![0.5f64, 0.5]).unwrap();
        let l = cross_entropy_loss(&p, &[1]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((l - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let p = Tensor::new(vec![2], vec![1.0f64, 0.0]).unwrap();
        let l = cross_entropy_loss(&p, &[1]).unwrap();
        assert!((l - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        let p = Tensor::new(vec![2], vec![0.5f64, 0.5]).unwrap();
        assert!(matches!(cross_entropy_loss(&p, &[2]), Err(Error::Index { .. })));
    }

    #[test]
    fn batch_loss_is_mean() {
        let p = Tensor::new(vec![2, 2], vec![0.5f64, 0.5, 1.0, 0.0]).unwrap();
        let l = cross_entropy_loss(&p, &[0, 0]).unwrap();
        assert!((l - std::f64::consts::LN_2 / 2.0).abs() < 1e-15);
    }
}
