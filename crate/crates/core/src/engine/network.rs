//! Layer graphs: an ordered list of layers, each reading the previous
//! activation, plus additive skip junctions that read an earlier one.
//!
//! Activations are addressed by *slot*: slot 0 is the network input and slot
//! `i + 1` is the output of layer `i`.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::activation::{relu, relu_backward, softmax, softmax_backward};
use crate::engine::conv::{self, ConvGeometry};
use crate::engine::loss::cross_entropy_with_grad;
use crate::engine::{dense, pool, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv(ConvGeometry),
    MaxPool { window: Vec<usize> },
    Dense { fan_in: usize, fan_out: usize },
    Relu,
    Softmax,
    Flatten,
    GlobalAvgPool,
    /// `out = in + P(slot[source])` where `P` is the identity or a 1×1 projection.
    AddSkip {
        source: usize,
        projection: Option<ConvGeometry>,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv(g) if g.spatial_rank == 3 => "conv3d",
            LayerSpec::Conv(_) => "conv2d",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Flatten => "flatten",
            LayerSpec::GlobalAvgPool => "global-avg",
            LayerSpec::AddSkip { .. } => "add-skip",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// Indices into the network's parameter list.
    pub params: Vec<usize>,
    /// Per-sample output shape.
    pub output_shape: Vec<usize>,
}

/// Something with an ordered list of named trainable tensors that can be
/// trained with cross-entropy.
pub trait Model<T: Real>: Send + Sync {
    fn architecture(&self) -> String;
    fn input_shape(&self) -> &[usize];
    fn classes(&self) -> usize;
    /// Ordered `(name, shape)` pairs; the order is construction order.
    fn manifest(&self) -> Vec<(String, Vec<usize>)>;
    fn param_tensors(&self) -> Vec<&Tensor<T>>;
    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<T>>;
    /// Class distributions `[batch, K]` for a `[batch, ...input_shape]` input.
    fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>>;
    /// Mean cross-entropy over the batch and its gradient for every parameter.
    fn loss_and_grads(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<(T, Vec<Tensor<T>>)>;

    fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }
}

/// Recorded forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    pub slots: Vec<Tensor<T>>,
    argmax: Vec<Vec<usize>>,
}

impl<T: Real> Tape<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.slots.last().expect("tape has at least the input slot")
    }

    pub fn into_output(mut self) -> Tensor<T> {
        self.slots.pop().expect("tape has at least the input slot")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    architecture: String,
    input_shape: Vec<usize>,
    classes: usize,
    layers: Vec<Layer>,
    params: Vec<Param<T>>,
}

fn batched(shape: &[usize], batch: usize) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len() + 1);
    s.push(batch);
    s.extend_from_slice(shape);
    s
}

impl<T: Real> Network<T> {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    /// Number of additive skip junctions in the graph.
    pub fn skip_junctions(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l.spec, LayerSpec::AddSkip { .. }))
            .count()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        if x.rank() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::dim(
                format!("{} input", self.architecture),
                format!(
                    "expected [batch, {}], got {:?}",
                    self.input_shape
                        .iter()
                        .map(|e| e.to_string())
                        .collect::<Vec<_>>()
                        .join(", "),
                    x.shape()
                ),
            ));
        }
        Ok(x.shape()[0])
    }

    /// Forward pass over a batch, keeping every activation for backward.
    pub fn forward_tape(&self, x: &Tensor<T>) -> Result<Tape<T>> {
        let batch = self.check_input(x)?;
        x.check_finite("network input")?;
        let mut slots = Vec::with_capacity(self.layers.len() + 1);
        let mut argmax = vec![Vec::new(); self.layers.len()];
        slots.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = &slots[i];
            let out = match &layer.spec {
                LayerSpec::Conv(g) => conv::forward_batch(
                    g,
                    input,
                    &self.params[layer.params[0]].value,
                    &self.params[layer.params[1]].value,
                )?,
                LayerSpec::MaxPool { window } => {
                    let pooled = pool::forward_batch(input, window)?;
                    argmax[i] = pooled.argmax;
                    pooled.output
                }
                LayerSpec::Dense { .. } => dense::forward_batch(
                    input,
                    &self.params[layer.params[0]].value,
                    &self.params[layer.params[1]].value,
                )?,
                LayerSpec::Relu => relu(input),
                LayerSpec::Softmax => softmax(input)?,
                LayerSpec::Flatten => {
                    let n = input.row_len();
                    input.clone().reshape(vec![batch, n])?
                }
                LayerSpec::GlobalAvgPool => pool::global_avg_forward(input)?,
                LayerSpec::AddSkip { source, projection } => {
                    let skip = match projection {
                        Some(g) => conv::forward_batch(
                            g,
                            &slots[*source],
                            &self.params[layer.params[0]].value,
                            &self.params[layer.params[1]].value,
                        )?,
                        None => slots[*source].clone(),
                    };
                    let mut out = input.clone();
                    out.add_assign(&skip)?;
                    out
                }
            };
            debug_assert_eq!(out.shape(), batched(&layer.output_shape, batch).as_slice());
            slots.push(out);
        }
        let tape = Tape { slots, argmax };
        tape.output().check_finite(&format!("{} output", self.architecture))?;
        Ok(tape)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_tape(x)?.into_output())
    }

    /// Forward pass for one unbatched sample.
    pub fn forward_one(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let xb = x.clone().reshape(batched(x.shape(), 1))?;
        let y = self.forward(&xb)?;
        let k = y.len();
        y.reshape(vec![k])
    }

    /// Reverse pass from `grad_output` (gradient w.r.t. the final slot).
    /// Parameter gradients are accumulated into `grads`, which must follow
    /// parameter order. Returns the input gradient when `need_input` is set.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        grad_output: &Tensor<T>,
        grads: &mut [Tensor<T>],
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        if grads.len() != self.params.len() {
            return Err(Error::dim(
                "backward",
                format!("{} gradient buffers for {} parameters", grads.len(), self.params.len()),
            ));
        }
        if grad_output.shape() != tape.output().shape() {
            return Err(Error::dim(
                "backward",
                format!("output gradient {:?} vs output {:?}", grad_output.shape(), tape.output().shape()),
            ));
        }
        let n = self.layers.len();
        let mut slot_grads: Vec<Option<Tensor<T>>> = vec![None; n + 1];
        slot_grads[n] = Some(grad_output.clone());
        for i in (0..n).rev() {
            let Some(dy) = slot_grads[i + 1].take() else {
                continue;
            };
            let layer = &self.layers[i];
            let input = &tape.slots[i];
            let want_dx = i > 0 || need_input;
            let dx: Option<Tensor<T>> = match &layer.spec {
                LayerSpec::Conv(g) => {
                    let (wi, bi) = (layer.params[0], layer.params[1]);
                    let (dw, db) = two_mut(grads, wi, bi);
                    conv::backward_batch(g, input, &self.params[wi].value, &dy, dw, db, want_dx)?
                }
                LayerSpec::MaxPool { .. } => {
                    Some(pool::backward_batch(input.shape(), &tape.argmax[i], &dy)?)
                }
                LayerSpec::Dense { .. } => {
                    let (wi, bi) = (layer.params[0], layer.params[1]);
                    let (dw, db) = two_mut(grads, wi, bi);
                    dense::backward_batch(input, &self.params[wi].value, &dy, dw, db, want_dx)?
                }
                LayerSpec::Relu => Some(relu_backward(&tape.slots[i + 1], &dy)?),
                LayerSpec::Softmax => Some(softmax_backward(&tape.slots[i + 1], &dy)?),
                LayerSpec::Flatten => Some(dy.reshape(input.shape().to_vec())?),
                LayerSpec::GlobalAvgPool => Some(pool::global_avg_backward(input.shape(), &dy)?),
                LayerSpec::AddSkip { source, projection } => {
                    let want_src = *source > 0 || need_input;
                    let dsrc = match projection {
                        Some(g) => {
                            let (wi, bi) = (layer.params[0], layer.params[1]);
                            let (dw, db) = two_mut(grads, wi, bi);
                            conv::backward_batch(
                                g,
                                &tape.slots[*source],
                                &self.params[wi].value,
                                &dy,
                                dw,
                                db,
                                want_src,
                            )?
                        }
                        None => Some(dy.clone()),
                    };
                    if let Some(d) = dsrc {
                        accumulate(&mut slot_grads[*source], d)?;
                    }
                    Some(dy)
                }
            };
            if let Some(dx) = dx {
                if want_dx {
                    accumulate(&mut slot_grads[i], dx)?;
                }
            }
        }
        for (g, p) in grads.iter().zip(&self.params) {
            g.check_finite(&format!("gradient of {}", p.name))?;
        }
        Ok(if need_input { slot_grads[0].take() } else { None })
    }

    pub fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape().to_vec()))
            .collect()
    }

    /// Overwrite parameter values from another network with an identical manifest.
    pub fn copy_params_from(&mut self, other: &Network<T>) -> Result<()> {
        check_manifest(&self.manifest(), &other.manifest())?;
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

/// First mismatch between two manifests, reported as a transplant error.
pub(crate) fn check_manifest(target: &[(String, Vec<usize>)], source: &[(String, Vec<usize>)]) -> Result<()> {
    for (i, (t, s)) in target.iter().zip(source).enumerate() {
        if t != s {
            return Err(Error::Transplant {
                param: t.0.clone(),
                detail: format!("entry {i}: target {:?} {:?}, source {:?} {:?}", t.0, t.1, s.0, s.1),
            });
        }
    }
    if target.len() != source.len() {
        let i = target.len().min(source.len());
        let name = target
            .get(i)
            .or_else(|| source.get(i))
            .map(|e| e.0.clone())
            .unwrap_or_default();
        return Err(Error::Transplant {
            param: name,
            detail: format!("target has {} parameters, source has {}", target.len(), source.len()),
        });
    }
    Ok(())
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn two_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert!(a < b, "weight precedes bias");
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

impl<T: Real> Model<T> for Network<T> {
    fn architecture(&self) -> String {
        self.architecture.clone()
    }

    fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec()))
            .collect()
    }

    fn param_tensors(&self) -> Vec<&Tensor<T>> {
        self.params.iter().map(|p| &p.value).collect()
    }

    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.params.iter_mut().map(|p| &mut p.value).collect()
    }

    fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(batch)
    }

    fn loss_and_grads(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<(T, Vec<Tensor<T>>)> {
        let tape = self.forward_tape(batch)?;
        let (loss, dp) = cross_entropy_with_grad(tape.output(), labels)?;
        let mut grads = self.zero_grads();
        self.backward(&tape, &dp, &mut grads, false)?;
        Ok((loss, grads))
    }
}

/// Weight initialisation family for a parameterised layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    HeUniform,
    GlorotUniform,
}

/// Incremental network construction with shape inference.
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    architecture: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// `(name, shape, fan_in, fan_out, owning layer)` for every parameter tensor.
    pending: Vec<(String, Vec<usize>, usize, usize, usize)>,
    shapes: Vec<Vec<usize>>,
}

impl NetworkBuilder {
    pub fn new(architecture: impl Into<String>, input_shape: &[usize]) -> Self {
        NetworkBuilder {
            architecture: architecture.into(),
            input_shape: input_shape.to_vec(),
            layers: Vec::new(),
            pending: Vec::new(),
            shapes: vec![input_shape.to_vec()],
        }
    }

    /// Slot index of the most recent activation.
    pub fn current_slot(&self) -> usize {
        self.shapes.len() - 1
    }

    pub fn current_shape(&self) -> &[usize] {
        self.shapes.last().expect("input slot")
    }

    fn push(&mut self, spec: LayerSpec, output_shape: Vec<usize>, params: Vec<(String, Vec<usize>, usize, usize)>) {
        let layer_idx = self.layers.len();
        let start = self.pending.len();
        let mut ids = Vec::new();
        for (k, (name, shape, fi, fo)) in params.into_iter().enumerate() {
            ids.push(start + k);
            self.pending
                .push((format!("l{layer_idx:02}.{name}"), shape, fi, fo, layer_idx));
        }
        self.layers.push(Layer {
            spec,
            params: ids,
            output_shape: output_shape.clone(),
        });
        self.shapes.push(output_shape);
    }

    fn conv_params(g: &ConvGeometry, prefix: &str) -> Vec<(String, Vec<usize>, usize, usize)> {
        let k: usize = g.kernel.iter().product();
        vec![
            (format!("{prefix}.weight"), g.weight_shape(), g.in_channels * k, g.out_channels * k),
            (format!("{prefix}.bias"), vec![g.out_channels], 0, 0),
        ]
    }

    pub fn conv(mut self, out_channels: usize, kernel: &[usize], stride: &[usize], padding: &[usize]) -> Result<Self> {
        let shape = self.current_shape().to_vec();
        if shape.len() < 3 {
            return Err(Error::Construction(format!(
                "conv after a flattened activation {shape:?}"
            )));
        }
        let g = ConvGeometry::new(shape[0], out_channels, kernel, stride, padding)?;
        let mut out = vec![out_channels];
        out.extend(g.output_extents(&shape[1..])?);
        let params = Self::conv_params(&g, "conv");
        self.push(LayerSpec::Conv(g), out, params);
        Ok(self)
    }

    /// 3-per-axis kernel, stride 1, "same" padding.
    pub fn conv3_same(self, out_channels: usize) -> Result<Self> {
        let rank = self.current_shape().len().saturating_sub(1);
        let k = vec![3; rank];
        let s = vec![1; rank];
        let p = vec![1; rank];
        self.conv(out_channels, &k, &s, &p)
    }

    pub fn relu(mut self) -> Self {
        let s = self.current_shape().to_vec();
        self.push(LayerSpec::Relu, s, vec![]);
        self
    }

    pub fn softmax(mut self) -> Self {
        let s = self.current_shape().to_vec();
        self.push(LayerSpec::Softmax, s, vec![]);
        self
    }

    pub fn maxpool(mut self, window: &[usize]) -> Result<Self> {
        let shape = self.current_shape().to_vec();
        if shape.len() != window.len() + 1 {
            return Err(Error::Construction(format!(
                "pool window {window:?} does not fit activation {shape:?}"
            )));
        }
        let mut out = vec![shape[0]];
        for (axis, (&e, &w)) in shape[1..].iter().zip(window).enumerate() {
            if w > e {
                return Err(Error::Construction(format!(
                    "pool window {w} exceeds extent {e} on spatial axis {axis}"
                )));
            }
            out.push(pool::pooled_extent(e, w));
        }
        self.push(
            LayerSpec::MaxPool {
                window: window.to_vec(),
            },
            out,
            vec![],
        );
        Ok(self)
    }

    pub fn flatten(mut self) -> Self {
        let n = self.current_shape().iter().product();
        self.push(LayerSpec::Flatten, vec![n], vec![]);
        self
    }

    pub fn global_avg_pool(mut self) -> Result<Self> {
        let shape = self.current_shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::Construction("global average over a flat activation".into()));
        }
        self.push(LayerSpec::GlobalAvgPool, vec![shape[0]], vec![]);
        Ok(self)
    }

    pub fn dense(mut self, fan_out: usize) -> Result<Self> {
        let shape = self.current_shape().to_vec();
        if shape.len() != 1 {
            return Err(Error::Construction(format!(
                "dense layer needs a flat input, got {shape:?}"
            )));
        }
        let fan_in = shape[0];
        let params = vec![
            ("dense.weight".to_string(), vec![fan_out, fan_in], fan_in, fan_out),
            ("dense.bias".to_string(), vec![fan_out], 0, 0),
        ];
        self.push(LayerSpec::Dense { fan_in, fan_out }, vec![fan_out], params);
        Ok(self)
    }

    /// Adds the activation in `source` to the current one, inserting a 1×1
    /// projection (strided when extents differ) if the shapes disagree.
    pub fn add_skip(mut self, source: usize) -> Result<Self> {
        let current = self.current_slot();
        if source >= current {
            return Err(Error::Construction(format!(
                "skip from slot {source} into slot {current} would form a cycle; skips must read an earlier activation"
            )));
        }
        let src = self.shapes[source].clone();
        let dst = self.current_shape().to_vec();
        if src.len() != dst.len() || src.len() < 3 {
            return Err(Error::Construction(format!(
                "skip between incompatible activations {src:?} and {dst:?}"
            )));
        }
        let (spec, params) = if src == dst {
            (
                LayerSpec::AddSkip {
                    source,
                    projection: None,
                },
                vec![],
            )
        } else {
            let rank = src.len() - 1;
            let mut stride = Vec::with_capacity(rank);
            for (&s, &d) in src[1..].iter().zip(&dst[1..]) {
                let st = s.div_ceil(d);
                if s.div_ceil(st) != d {
                    return Err(Error::Construction(format!(
                        "no integer stride maps skip extents {src:?} onto {dst:?}"
                    )));
                }
                stride.push(st);
            }
            let g = ConvGeometry::new(src[0], dst[0], &vec![1; rank], &stride, &vec![0; rank])?;
            (
                LayerSpec::AddSkip {
                    source,
                    projection: Some(g),
                },
                Self::conv_params(&g, "proj"),
            )
        };
        self.push(spec, dst, params);
        Ok(self)
    }

    /// Finalise and initialise parameters from `seed`.
    ///
    /// Weights of a layer whose output reaches the softmax without passing a
    /// ReLU are Glorot-uniform; all others He-uniform. Biases start at zero.
    pub fn build<T: Real>(self, classes: usize, seed: u64) -> Result<Network<T>> {
        match self.layers.last() {
            Some(l) if l.spec == LayerSpec::Softmax => {}
            _ => return Err(Error::Construction("network must end in softmax".into())),
        }
        if self.current_shape() != [classes] {
            return Err(Error::Construction(format!(
                "output shape {:?} is not a {classes}-class distribution",
                self.current_shape()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(self.pending.len());
        for (name, shape, fan_in, fan_out, layer) in &self.pending {
            let len: usize = shape.iter().product();
            let value = if name.ends_with(".bias") {
                Tensor::zeros(shape.clone())
            } else {
                let init = self.init_for(*layer);
                let limit = match init {
                    Init::HeUniform => (6.0 / *fan_in as f64).sqrt(),
                    Init::GlorotUniform => (6.0 / (*fan_in + *fan_out) as f64).sqrt(),
                };
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                let data = (0..len).map(|_| T::from_f64_lossy(dist.sample(&mut rng))).collect();
                Tensor::new(shape.clone(), data)?
            };
            params.push(Param {
                name: name.clone(),
                value,
            });
        }
        Ok(Network {
            architecture: self.architecture,
            input_shape: self.input_shape,
            classes,
            layers: self.layers,
            params,
        })
    }

    fn init_for(&self, layer: usize) -> Init {
        for next in &self.layers[layer + 1..] {
            match next.spec {
                LayerSpec::Relu => return Init::HeUniform,
                LayerSpec::Softmax => return Init::GlorotUniform,
                LayerSpec::Conv(_) | LayerSpec::Dense { .. } => return Init::HeUniform,
                _ => {}
            }
        }
        Init::HeUniform
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Network<f64> {
        NetworkBuilder::new("tiny", &[1, 4, 4])
            .conv3_same(2)
            .unwrap()
            .relu()
            .maxpool(&[2, 2])
            .unwrap()
            .flatten()
            .dense(3)
            .unwrap()
            .softmax()
            .build(3, 1)
            .unwrap()
    }

    #[test]
    fn builds_with_shape_inference() {
        let net = tiny();
        assert_eq!(net.layers().last().unwrap().output_shape, vec![3]);
        assert_eq!(net.param_count(), 2 * 9 + 2 + 8 * 3 + 3);
        let names: Vec<_> = net.manifest().into_iter().map(|m| m.0).collect();
        assert_eq!(names, ["l00.conv.weight", "l00.conv.bias", "l04.dense.weight", "l04.dense.bias"]);
    }

    #[test]
    fn forward_is_distribution() {
        let net = tiny();
        let x = Tensor::from_fn(vec![2, 1, 4, 4], |i| (i as f64 * 0.37).sin());
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        for row in y.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let net = tiny();
        let x = Tensor::<f64>::zeros(vec![1, 1, 5, 4]);
        assert!(matches!(net.forward(&x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn forward_skip_is_a_cycle() {
        let b = NetworkBuilder::new("cyc", &[1, 4, 4]).conv3_same(1).unwrap();
        let slot = b.current_slot();
        assert!(matches!(b.add_skip(slot), Err(Error::Construction(_))));
    }

    #[test]
    fn must_end_in_softmax() {
        let r = NetworkBuilder::new("x", &[4]).dense(2).unwrap().build::<f64>(2, 0);
        assert!(matches!(r, Err(Error::Construction(_))));
    }

    #[test]
    fn zero_image_gives_zero_first_layer_weight_grads() {
        let net = tiny();
        let x = Tensor::<f64>::zeros(vec![1, 1, 4, 4]);
        let (_, grads) = net.loss_and_grads(&x, &[1]).unwrap();
        assert!(grads[0].data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn projection_inserted_for_shape_change() {
        let b = NetworkBuilder::new("p", &[2, 8, 8]);
        let src = b.current_slot();
        let net = b
            .conv3_same(4)
            .unwrap()
            .maxpool(&[2, 2])
            .unwrap()
            .add_skip(src)
            .unwrap()
            .global_avg_pool()
            .unwrap()
            .dense(2)
            .unwrap()
            .softmax()
            .build::<f64>(2, 3)
            .unwrap();
        match &net.layers()[2].spec {
            LayerSpec::AddSkip {
                projection: Some(g), ..
            } => {
                assert_eq!(g.stride[..2], [2, 2]);
                assert_eq!((g.in_channels, g.out_channels), (2, 4));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(net.skip_junctions(), 1);
    }
}
