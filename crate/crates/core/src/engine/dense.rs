use crate::engine::real::{gemm, Trans};
use crate::engine::{Real, Tensor};
use crate::error::{Error, Result};

/// `out = weights · input + bias` for every row of a `[batch, fan_in]` input.
pub(crate) fn forward_batch<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (fan_out, fan_in) = (weight.shape()[0], weight.shape()[1]);
    let batch = x.shape()[0];
    if x.row_len() != fan_in {
        return Err(Error::dim(
            "dense",
            format!("input has {} features, layer fan-in is {fan_in}", x.row_len()),
        ));
    }
    let mut out = vec![T::zero(); batch * fan_out];
    for row in out.chunks_mut(fan_out) {
        row.copy_from_slice(bias.data());
    }
    gemm(batch, fan_in, fan_out, T::one(), x.data(), Trans::No, weight.data(), Trans::Yes, T::one(), &mut out);
    Tensor::new(vec![batch, fan_out], out)
}

pub(crate) fn backward_batch<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    dweight: &mut Tensor<T>,
    dbias: &mut Tensor<T>,
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    let (fan_out, fan_in) = (weight.shape()[0], weight.shape()[1]);
    let batch = x.shape()[0];
    if dy.shape() != [batch, fan_out] {
        return Err(Error::dim(
            "dense backward",
            format!("output gradient {:?}, expected [{batch}, {fan_out}]", dy.shape()),
        ));
    }
    gemm(fan_out, batch, fan_in, T::one(), dy.data(), Trans::Yes, x.data(), Trans::No, T::one(), dweight.data_mut());
    for row in dy.data().chunks(fan_out) {
        for (b, &g) in dbias.data_mut().iter_mut().zip(row) {
            *b = *b + g;
        }
    }
    if !need_input {
        return Ok(None);
    }
    let mut dx = vec![T::zero(); batch * fan_in];
    gemm(batch, fan_out, fan_in, T::one(), dy.data(), Trans::No, weight.data(), Trans::No, T::zero(), &mut dx);
    Tensor::new(x.shape().to_vec(), dx).map(Some)
}

/// Gradients of a dense layer.
#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

fn validate<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    if weights.rank() != 2 {
        return Err(Error::dim("dense", format!("weights must be [fan_out, fan_in], got {:?}", weights.shape())));
    }
    if bias.shape() != [weights.shape()[0]] {
        return Err(Error::dim(
            "dense",
            format!("bias {:?} does not match fan-out {}", bias.shape(), weights.shape()[0]),
        ));
    }
    if input.len() != weights.shape()[1] {
        return Err(Error::dim(
            "dense",
            format!(
                "flattened input length {} does not match fan-in {}",
                input.len(),
                weights.shape()[1]
            ),
        ));
    }
    input.clone().reshape(vec![1, input.len()])
}

/// Single-sample dense layer over the flattened `input`.
pub fn dense_forward<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    input.check_finite("dense input")?;
    let x = validate(input, weights, bias)?;
    let y = forward_batch(&x, weights, bias)?;
    y.reshape(vec![weights.shape()[0]])
}

pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let x = validate(input, weights, bias)?;
    let dy = dy.clone().reshape(vec![1, weights.shape()[0]])?;
    let mut dw = Tensor::zeros(weights.shape().to_vec());
    let mut db = Tensor::zeros(bias.shape().to_vec());
    let dx = backward_batch(&x, weights, &dy, &mut dw, &mut db, true)?.expect("requested");
    Ok(DenseGrads {
        input: dx.reshape(input.shape().to_vec())?,
        weights: dw,
        bias: db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_through() {
        let n = 4;
        let w = Tensor::<f64>::from_fn(vec![n, n], |i| if i / n == i % n { 1.0 } else { 0.0 });
        let b = Tensor::zeros(vec![n]);
        let x = Tensor::new(vec![n], vec![0.3, -1.0, 2.0, 5.5]).unwrap();
        assert_eq!(dense_forward(&x, &w, &b).unwrap().data(), x.data());
    }

    #[test]
    fn fan_in_mismatch() {
        let w = Tensor::<f64>::zeros(vec![5, 10]);
        let b = Tensor::zeros(vec![5]);
        let x = Tensor::zeros(vec![9]);
        assert!(matches!(dense_forward(&x, &w, &b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn one_layer_chain_rule() {
        // L = sum(dy ⊙ (Wx + b)) ⇒ dW = dy xᵀ, db = dy, dx = Wᵀ dy
        let w = Tensor::new(vec![2, 3], vec![1.0f64, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
        let b = Tensor::new(vec![2], vec![0.1, 0.2]).unwrap();
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let dy = Tensor::new(vec![2], vec![0.7, -0.3]).unwrap();
        let g = dense_backward(&x, &w, &b, &dy).unwrap();
        assert_eq!(g.weights.data(), &[0.7, -1.4, 0.35, -0.3, 0.6, -0.15]);
        assert_eq!(g.bias.data(), &[0.7, -0.3]);
        let want_dx = [
            1.0 * 0.7 + -1.0 * -0.3,
            2.0 * 0.7 + 0.5 * -0.3,
            3.0 * 0.7 + 4.0 * -0.3,
        ];
        for (a, b) in g.input.data().iter().zip(want_dx) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
