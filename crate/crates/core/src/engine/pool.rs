use crate::engine::conv::{axis_name, pad3};
use crate::engine::{Real, Tensor};
use crate::error::{Error, Result};

/// Output of a max-pooling pass with the routing needed for backward.
#[derive(Debug, Clone)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    /// Flat input index of the winning cell for every output value.
    pub argmax: Vec<usize>,
}

/// Pooled extent along one axis. Windows that run past the edge behave as
/// if padded with −∞, so the extent is `ceil(input / window)`.
pub fn pooled_extent(input: usize, window: usize) -> usize {
    input.div_ceil(window)
}

fn check_window(spatial: &[usize], window: &[usize]) -> Result<()> {
    if spatial.len() != window.len() {
        return Err(Error::dim(
            "maxpool",
            format!(
                "window {window:?} does not match {} spatial axes",
                spatial.len()
            ),
        ));
    }
    for (axis, (&e, &w)) in spatial.iter().zip(window).enumerate() {
        if w == 0 || w > e {
            return Err(Error::dim(
                "maxpool",
                format!(
                    "axis {}: window {w} larger than input extent {e}",
                    axis_name(axis, spatial.len())
                ),
            ));
        }
    }
    Ok(())
}

/// Batched max-pooling over `[batch, channels, spatial...]` with stride = window.
pub(crate) fn forward_batch<T: Real>(x: &Tensor<T>, window: &[usize]) -> Result<Pooled<T>> {
    let shape = x.shape();
    if shape.len() < 4 {
        return Err(Error::dim("maxpool", format!("input {shape:?} has no spatial axes")));
    }
    let spatial = &shape[2..];
    check_window(spatial, window)?;
    let out_spatial: Vec<usize> = spatial
        .iter()
        .zip(window)
        .map(|(&e, &w)| pooled_extent(e, w))
        .collect();
    let [i0, i1, i2] = pad3(spatial, 1);
    let [o0, o1, o2] = pad3(&out_spatial, 1);
    let [w0, w1, w2] = pad3(window, 1);
    let planes = shape[0] * shape[1];
    let in_plane = i0 * i1 * i2;
    let out_plane = o0 * o1 * o2;
    let mut out = Vec::with_capacity(planes * out_plane);
    let mut argmax = Vec::with_capacity(planes * out_plane);
    let data = x.data();
    for plane in 0..planes {
        let base = plane * in_plane;
        for y0 in 0..o0 {
            for y1 in 0..o1 {
                for y2 in 0..o2 {
                    let mut best = T::neg_infinity();
                    let mut best_at = usize::MAX;
                    for a in y0 * w0..((y0 + 1) * w0).min(i0) {
                        for b in y1 * w1..((y1 + 1) * w1).min(i1) {
                            for c in y2 * w2..((y2 + 1) * w2).min(i2) {
                                let idx = base + (a * i1 + b) * i2 + c;
                                let v = data[idx];
                                if best_at == usize::MAX || v > best {
                                    best = v;
                                    best_at = idx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_at);
                }
            }
        }
    }
    let mut out_shape = shape[..2].to_vec();
    out_shape.extend_from_slice(&out_spatial);
    Ok(Pooled {
        output: Tensor::new(out_shape, out)?,
        argmax,
    })
}

pub(crate) fn backward_batch<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    if dy.len() != argmax.len() {
        return Err(Error::dim(
            "maxpool backward",
            format!("{} gradients for {} pooled cells", dy.len(), argmax.len()),
        ));
    }
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        d[idx] = d[idx] + g;
    }
    Ok(dx)
}

/// Max-pooling of `[C, spatial...]` (or batched) input with stride equal to the window.
pub fn maxpool_forward<T: Real>(input: &Tensor<T>, window: &[usize]) -> Result<Pooled<T>> {
    input.check_finite("maxpool input")?;
    let batched = input.rank() == window.len() + 2;
    if !batched && input.rank() != window.len() + 1 {
        return Err(Error::dim(
            "maxpool",
            format!("input {:?} does not match window {window:?}", input.shape()),
        ));
    }
    if batched {
        return forward_batch(input, window);
    }
    let mut s = vec![1];
    s.extend_from_slice(input.shape());
    let pooled = forward_batch(&input.clone().reshape(s)?, window)?;
    let out_shape = pooled.output.shape()[1..].to_vec();
    Ok(Pooled {
        output: pooled.output.reshape(out_shape)?,
        argmax: pooled.argmax,
    })
}

/// Routes `dy` to the recorded argmax cells.
pub fn maxpool_backward<T: Real>(
    input_shape: &[usize],
    pooled: &Pooled<T>,
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    backward_batch(input_shape, &pooled.argmax, dy)
}

/// Mean over all spatial axes: `[batch, channels, spatial...]` → `[batch, channels]`.
pub(crate) fn global_avg_forward<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() < 3 {
        return Err(Error::dim("global average", format!("input {shape:?} has no spatial axes")));
    }
    let plane: usize = shape[2..].iter().product();
    let scale = T::one() / T::from_usize(plane).expect("plane size");
    let out: Vec<T> = x
        .data()
        .chunks(plane)
        .map(|c| c.iter().fold(T::zero(), |a, &v| a + v) * scale)
        .collect();
    Tensor::new(vec![shape[0], shape[1]], out)
}

pub(crate) fn global_avg_backward<T: Real>(input_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let plane: usize = input_shape[2..].iter().product();
    let scale = T::one() / T::from_usize(plane).expect("plane size");
    let mut dx = Vec::with_capacity(dy.len() * plane);
    for &g in dy.data() {
        dx.extend(std::iter::repeat_n(g * scale, plane));
    }
    Tensor::new(input_shape.to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_of_four() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let p = maxpool_forward(&x, &[2, 2]).unwrap();
        assert_eq!(p.output.shape(), &[1, 1, 1]);
        assert_eq!(p.output.data(), &[4.0]);
        assert_eq!(p.argmax, vec![3]);
    }

    #[test]
    fn constant_input_stays_constant() {
        let x = Tensor::<f64>::full(vec![2, 4, 6], 1.5);
        let p = maxpool_forward(&x, &[2, 2]).unwrap();
        assert_eq!(p.output.shape(), &[2, 2, 3]);
        assert!(p.output.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn odd_extent_uses_partial_window() {
        let x = Tensor::new(vec![1, 3, 1], vec![1.0f64, 2.0, 7.0]).unwrap();
        let p = maxpool_forward(&x, &[2, 1]).unwrap();
        assert_eq!(p.output.data(), &[2.0, 7.0]);
    }

    #[test]
    fn window_larger_than_input_is_rejected() {
        let x = Tensor::<f64>::zeros(vec![1, 1, 4]);
        assert!(matches!(
            maxpool_forward(&x, &[2, 2]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn backward_routes_to_argmax() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0f64, 5.0, 3.0, 4.0]).unwrap();
        let p = maxpool_forward(&x, &[2, 2]).unwrap();
        let dy = Tensor::new(vec![1, 1, 1], vec![2.5]).unwrap();
        let dx = maxpool_backward(x.shape(), &p, &dy).unwrap();
        assert_eq!(dx.data(), &[0.0, 2.5, 0.0, 0.0]);
    }
}
