//! N-dimensional (2D or 3D) convolution lowered to matrix products.
//!
//! Activations are laid out `[batch, channels, spatial...]`. A 2D problem is
//! computed as 3D with a trailing spatial extent of one, which leaves the
//! memory layout unchanged.

use serde::{Deserialize, Serialize};

use crate::engine::real::{gemm, Trans};
use crate::engine::{Real, Tensor};
use crate::error::{Error, Result};

/// Values gathered per chunk of im2col columns.
const COLS_BUDGET: usize = 1 << 22;

/// Static shape description of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Number of spatial axes actually in use (2 or 3).
    pub spatial_rank: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: &[usize],
        stride: &[usize],
        padding: &[usize],
    ) -> Result<Self> {
        let rank = kernel.len();
        if !(2..=3).contains(&rank) || stride.len() != rank || padding.len() != rank {
            return Err(Error::dim(
                "conv geometry",
                format!(
                    "kernel {kernel:?}, stride {stride:?}, padding {padding:?} must all have 2 or 3 spatial axes"
                ),
            ));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::dim("conv geometry", "channel counts must be positive"));
        }
        if kernel.contains(&0) || stride.contains(&0) {
            return Err(Error::dim("conv geometry", "kernel extents and strides must be positive"));
        }
        Ok(ConvGeometry {
            in_channels,
            out_channels,
            spatial_rank: rank,
            kernel: pad3(kernel, 1),
            stride: pad3(stride, 1),
            padding: pad3(padding, 0),
        })
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels];
        s.extend_from_slice(&self.kernel[..self.spatial_rank]);
        s
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.patch_len() + self.out_channels
    }

    /// Output spatial extents for the given input spatial extents.
    pub fn output_extents(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != self.spatial_rank {
            return Err(Error::dim(
                "conv",
                format!(
                    "input has {} spatial axes, kernel has {}",
                    input.len(),
                    self.spatial_rank
                ),
            ));
        }
        let mut out = Vec::with_capacity(input.len());
        for (axis, &extent) in input.iter().enumerate() {
            let padded = extent + 2 * self.padding[axis];
            if self.kernel[axis] > padded {
                return Err(Error::dim(
                    "conv",
                    format!(
                        "axis {}: kernel extent {} exceeds padded input extent {}",
                        axis_name(axis, self.spatial_rank),
                        self.kernel[axis],
                        padded
                    ),
                ));
            }
            out.push((padded - self.kernel[axis]) / self.stride[axis] + 1);
        }
        Ok(out)
    }
}

pub(crate) fn pad3(v: &[usize], fill: usize) -> [usize; 3] {
    let mut out = [fill; 3];
    out[..v.len()].copy_from_slice(v);
    out
}

pub(crate) fn axis_name(axis: usize, rank: usize) -> &'static str {
    match (rank, axis) {
        (_, 0) => "height",
        (_, 1) => "width",
        (3, 2) => "depth",
        _ => "spatial",
    }
}

struct Plan {
    batch: usize,
    in_sp: [usize; 3],
    out_sp: [usize; 3],
    out_shape: Vec<usize>,
}

fn plan(geom: &ConvGeometry, input_shape: &[usize]) -> Result<Plan> {
    if input_shape.len() != geom.spatial_rank + 2 {
        return Err(Error::dim(
            "conv",
            format!(
                "expected [batch, channels, {} spatial axes], got {input_shape:?}",
                geom.spatial_rank
            ),
        ));
    }
    if input_shape[1] != geom.in_channels {
        return Err(Error::dim(
            "conv",
            format!(
                "channel axis: input has {} channels, kernel expects {}",
                input_shape[1], geom.in_channels
            ),
        ));
    }
    let spatial = &input_shape[2..];
    let out = geom.output_extents(spatial)?;
    let mut out_shape = vec![input_shape[0], geom.out_channels];
    out_shape.extend_from_slice(&out);
    Ok(Plan {
        batch: input_shape[0],
        in_sp: pad3(spatial, 1),
        out_sp: pad3(&out, 1),
        out_shape,
    })
}

/// Fill `cols[patch_len, n_samples * positions]` for samples `first..first+n`.
fn im2col<T: Real>(
    geom: &ConvGeometry,
    p: &Plan,
    x: &[T],
    first: usize,
    n: usize,
    cols: &mut Vec<T>,
) {
    let [i0, i1, i2] = p.in_sp;
    let [o0, o1, o2] = p.out_sp;
    let [k0, k1, k2] = geom.kernel;
    let [s0, s1, s2] = geom.stride;
    let [p0, p1, p2] = geom.padding;
    let positions = o0 * o1 * o2;
    let width = n * positions;
    let sample_len = geom.in_channels * i0 * i1 * i2;
    cols.clear();
    cols.resize(geom.patch_len() * width, T::zero());
    for c in 0..geom.in_channels {
        for a in 0..k0 {
            for b in 0..k1 {
                for e in 0..k2 {
                    let row = ((c * k0 + a) * k1 + b) * k2 + e;
                    let row_base = row * width;
                    for s in 0..n {
                        let xs = &x[(first + s) * sample_len + c * i0 * i1 * i2..];
                        let out_base = row_base + s * positions;
                        for y0 in 0..o0 {
                            let q0 = (y0 * s0 + a) as isize - p0 as isize;
                            if q0 < 0 || q0 >= i0 as isize {
                                continue;
                            }
                            for y1 in 0..o1 {
                                let q1 = (y1 * s1 + b) as isize - p1 as isize;
                                if q1 < 0 || q1 >= i1 as isize {
                                    continue;
                                }
                                let src = (q0 as usize * i1 + q1 as usize) * i2;
                                let dst = out_base + (y0 * o1 + y1) * o2;
                                for y2 in 0..o2 {
                                    let q2 = (y2 * s2 + e) as isize - p2 as isize;
                                    if q2 >= 0 && q2 < i2 as isize {
                                        cols[dst + y2] = xs[src + q2 as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add `cols` back into `dx` (inverse layout of [`im2col`]).
fn col2im<T: Real>(
    geom: &ConvGeometry,
    p: &Plan,
    cols: &[T],
    first: usize,
    n: usize,
    dx: &mut [T],
) {
    let [i0, i1, i2] = p.in_sp;
    let [o0, o1, o2] = p.out_sp;
    let [k0, k1, k2] = geom.kernel;
    let [s0, s1, s2] = geom.stride;
    let [p0, p1, p2] = geom.padding;
    let positions = o0 * o1 * o2;
    let width = n * positions;
    let sample_len = geom.in_channels * i0 * i1 * i2;
    for c in 0..geom.in_channels {
        for a in 0..k0 {
            for b in 0..k1 {
                for e in 0..k2 {
                    let row = ((c * k0 + a) * k1 + b) * k2 + e;
                    let row_base = row * width;
                    for s in 0..n {
                        let base = (first + s) * sample_len + c * i0 * i1 * i2;
                        let src_base = row_base + s * positions;
                        for y0 in 0..o0 {
                            let q0 = (y0 * s0 + a) as isize - p0 as isize;
                            if q0 < 0 || q0 >= i0 as isize {
                                continue;
                            }
                            for y1 in 0..o1 {
                                let q1 = (y1 * s1 + b) as isize - p1 as isize;
                                if q1 < 0 || q1 >= i1 as isize {
                                    continue;
                                }
                                let dst = base + (q0 as usize * i1 + q1 as usize) * i2;
                                let src = src_base + (y0 * o1 + y1) * o2;
                                for y2 in 0..o2 {
                                    let q2 = (y2 * s2 + e) as isize - p2 as isize;
                                    if q2 >= 0 && q2 < i2 as isize {
                                        let d = &mut dx[dst + q2 as usize];
                                        *d = *d + cols[src + y2];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn chunk_len(geom: &ConvGeometry, positions: usize) -> usize {
    (COLS_BUDGET / (geom.patch_len() * positions).max(1)).max(1)
}

/// Batched forward: `x` is `[batch, in_channels, spatial...]`.
pub(crate) fn forward_batch<T: Real>(
    geom: &ConvGeometry,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let p = plan(geom, x.shape())?;
    let positions: usize = p.out_sp.iter().product();
    let oc = geom.out_channels;
    let kk = geom.patch_len();
    let mut out = vec![T::zero(); p.batch * oc * positions];
    let chunk = chunk_len(geom, positions);
    let mut cols = Vec::new();
    let mut prod = Vec::new();
    let mut first = 0;
    while first < p.batch {
        let n = chunk.min(p.batch - first);
        let width = n * positions;
        im2col(geom, &p, x.data(), first, n, &mut cols);
        prod.clear();
        prod.resize(oc * width, T::zero());
        gemm(oc, kk, width, T::one(), weight.data(), Trans::No, &cols, Trans::No, T::zero(), &mut prod);
        for s in 0..n {
            for o in 0..oc {
                let b = bias.data()[o];
                let src = &prod[o * width + s * positions..o * width + (s + 1) * positions];
                let dst_base = ((first + s) * oc + o) * positions;
                for (d, &v) in out[dst_base..dst_base + positions].iter_mut().zip(src) {
                    *d = v + b;
                }
            }
        }
        first += n;
    }
    Tensor::new(p.out_shape, out)
}

/// Batched backward. Accumulates into `dweight`/`dbias`; returns the input
/// gradient when `need_input` is set.
pub(crate) fn backward_batch<T: Real>(
    geom: &ConvGeometry,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    dweight: &mut Tensor<T>,
    dbias: &mut Tensor<T>,
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    let p = plan(geom, x.shape())?;
    if dy.shape() != p.out_shape.as_slice() {
        return Err(Error::dim(
            "conv backward",
            format!("output gradient {:?} vs output {:?}", dy.shape(), p.out_shape),
        ));
    }
    let positions: usize = p.out_sp.iter().product();
    let oc = geom.out_channels;
    let kk = geom.patch_len();
    let mut dx = if need_input {
        Some(vec![T::zero(); x.len()])
    } else {
        None
    };
    let chunk = chunk_len(geom, positions);
    let mut cols = Vec::new();
    let mut dyc = Vec::new();
    let mut dcols = Vec::new();
    let mut first = 0;
    while first < p.batch {
        let n = chunk.min(p.batch - first);
        let width = n * positions;
        im2col(geom, &p, x.data(), first, n, &mut cols);
        dyc.clear();
        dyc.resize(oc * width, T::zero());
        for s in 0..n {
            for o in 0..oc {
                let src = ((first + s) * oc + o) * positions;
                dyc[o * width + s * positions..o * width + (s + 1) * positions]
                    .copy_from_slice(&dy.data()[src..src + positions]);
            }
        }
        for o in 0..oc {
            let row = &dyc[o * width..(o + 1) * width];
            let mut acc = dbias.data()[o];
            for &v in row {
                acc = acc + v;
            }
            dbias.data_mut()[o] = acc;
        }
        gemm(oc, width, kk, T::one(), &dyc, Trans::No, &cols, Trans::Yes, T::one(), dweight.data_mut());
        if let Some(dx) = dx.as_mut() {
            dcols.clear();
            dcols.resize(kk * width, T::zero());
            gemm(kk, oc, width, T::one(), weight.data(), Trans::Yes, &dyc, Trans::No, T::zero(), &mut dcols);
            col2im(geom, &p, &dcols, first, n, dx);
        }
        first += n;
    }
    dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()
}

/// Gradients of a convolution with respect to all of its operands.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

fn geometry_for<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: &[usize],
    padding: &[usize],
) -> Result<(ConvGeometry, bool)> {
    let ks = kernels.shape();
    if ks.len() < 4 || ks.len() > 5 {
        return Err(Error::dim(
            "conv",
            format!("kernels must be [out, in, k...] with 2 or 3 spatial axes, got {ks:?}"),
        ));
    }
    let geom = ConvGeometry::new(ks[1], ks[0], &ks[2..], stride, padding)?;
    if bias.shape() != [geom.out_channels] {
        return Err(Error::dim(
            "conv",
            format!("bias shape {:?}, expected [{}]", bias.shape(), geom.out_channels),
        ));
    }
    let batched = match input.rank() {
        r if r == geom.spatial_rank + 1 => false,
        r if r == geom.spatial_rank + 2 => true,
        _ => {
            return Err(Error::dim(
                "conv",
                format!(
                    "input {:?} is neither [channels, spatial...] nor [batch, channels, spatial...]",
                    input.shape()
                ),
            ))
        }
    };
    Ok((geom, batched))
}

fn as_batch<T: Real>(input: &Tensor<T>, batched: bool) -> Result<Tensor<T>> {
    if batched {
        Ok(input.clone())
    } else {
        let mut s = vec![1];
        s.extend_from_slice(input.shape());
        input.clone().reshape(s)
    }
}

/// Convolution of `input` (`[C, spatial...]` or `[B, C, spatial...]`) with
/// `kernels` (`[out, C, k...]`).
///
/// Output extent per axis is `floor((in + 2·pad − k) / stride) + 1`.
pub fn conv_forward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: &[usize],
    padding: &[usize],
) -> Result<Tensor<T>> {
    input.check_finite("conv input")?;
    let (geom, batched) = geometry_for(input, kernels, bias, stride, padding)?;
    let out = forward_batch(&geom, &as_batch(input, batched)?, kernels, bias)?;
    if batched {
        Ok(out)
    } else {
        let s = out.shape()[1..].to_vec();
        out.reshape(s)
    }
}

/// Reverse-mode companion of [`conv_forward`] for an output gradient `dy`.
pub fn conv_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: &[usize],
    padding: &[usize],
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (geom, batched) = geometry_for(input, kernels, bias, stride, padding)?;
    let x = as_batch(input, batched)?;
    let dy = as_batch(dy, batched)?;
    let mut dk = Tensor::zeros(kernels.shape().to_vec());
    let mut db = Tensor::zeros(bias.shape().to_vec());
    let dx = backward_batch(&geom, &x, kernels, &dy, &mut dk, &mut db, true)?
        .expect("input gradient requested");
    let dx = if batched {
        dx
    } else {
        dx.reshape(input.shape().to_vec())?
    };
    Ok(ConvGrads {
        input: dx,
        kernels: dk,
        bias: db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_kernel_multiplies() {
        let x = Tensor::new(vec![1, 1, 1], vec![2.0f64]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        let b = Tensor::zeros(vec![1]);
        let y = conv_forward(&x, &k, &b, &[1, 1], &[0, 0]).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn output_extent_formula() {
        let g = ConvGeometry::new(1, 1, &[3, 3], &[2, 2], &[1, 1]).unwrap();
        assert_eq!(g.output_extents(&[7, 8]).unwrap(), vec![4, 4]);
        let g3 = ConvGeometry::new(1, 1, &[3, 3, 3], &[1, 1, 1], &[0, 0, 0]).unwrap();
        assert_eq!(g3.output_extents(&[5, 4, 3]).unwrap(), vec![3, 2, 1]);
        assert!(g3.output_extents(&[5, 4, 2]).is_err());
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = Tensor::<f64>::zeros(vec![2, 4, 4]);
        let k = Tensor::<f64>::zeros(vec![1, 3, 3, 3]);
        let b = Tensor::<f64>::zeros(vec![1]);
        let err = conv_forward(&x, &k, &b, &[1, 1], &[1, 1]).unwrap_err();
        assert!(err.to_string().contains("channel"), "{err}");
    }

    #[test]
    fn bias_added_per_channel() {
        let x = Tensor::<f64>::zeros(vec![1, 2, 2]);
        let k = Tensor::<f64>::zeros(vec![2, 1, 1, 1]);
        let b = Tensor::new(vec![2], vec![0.5, -1.0]).unwrap();
        let y = conv_forward(&x, &k, &b, &[1, 1], &[0, 0]).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5, -1.0, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn direct_sum_matches_lowered_3d() {
        // naive 3D reference for one sample
        let (c, o, h, w, d) = (2usize, 3usize, 4usize, 3usize, 5usize);
        let x = Tensor::<f64>::from_fn(vec![c, h, w, d], |i| ((i * 37 % 11) as f64) - 5.0);
        let k = Tensor::<f64>::from_fn(vec![o, c, 3, 3, 3], |i| ((i * 13 % 7) as f64) * 0.25 - 0.7);
        let b = Tensor::new(vec![o], vec![0.1, -0.2, 0.3]).unwrap();
        let y = conv_forward(&x, &k, &b, &[1, 1, 1], &[1, 1, 1]).unwrap();
        for oc in 0..o {
            for a in 0..h {
                for bb in 0..w {
                    for e in 0..d {
                        let mut acc = b.data()[oc];
                        for ic in 0..c {
                            for u in 0..3 {
                                for v in 0..3 {
                                    for t in 0..3 {
                                        let (p, q, r) = (a + u, bb + v, e + t);
                                        if p < 1 || q < 1 || r < 1 || p > h || q > w || r > d {
                                            continue;
                                        }
                                        let xi = ((ic * h + p - 1) * w + q - 1) * d + r - 1;
                                        let ki = (((oc * c + ic) * 3 + u) * 3 + v) * 3 + t;
                                        acc += x.data()[xi] * k.data()[ki];
                                    }
                                }
                            }
                        }
                        let yi = ((oc * h + a) * w + bb) * d + e;
                        assert!((y.data()[yi] - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
