use crate::decomp::GridDecomposition;
use crate::engine::{cross_entropy_with_grad, Model, Network, Real, Tensor};
use crate::error::{Error, Result};
use crate::models::{build_aggregator_dnn, build_local_cnns, derive_seed, ArchitectureId};

/// Local networks and the aggregator joined into one differentiable model.
///
/// The full image is split by `grid`; local `i` sees cell `i`; the aggregator
/// sees the concatenation of all local class distributions in (cell, class)
/// order.
#[derive(Clone, Debug)]
pub struct CoherentNet<T> {
    grid: GridDecomposition,
    input_shape: Vec<usize>,
    classes: usize,
    pub locals: Vec<Network<T>>,
    pub aggregator: Network<T>,
}

/// Row-wise concatenation of `[B, K]` blocks into `[B, N·K]`.
pub fn concat_probabilities<T: Real>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::dim("concat_probabilities", "no local outputs"))?;
    let (b, k) = (first.shape()[0], first.row_len());
    if let Some(p) = parts.iter().find(|p| p.shape() != first.shape()) {
        return Err(Error::dim(
            "concat_probabilities",
            format!("local output {:?} differs from {:?}", p.shape(), first.shape()),
        ));
    }
    let n = parts.len();
    let mut out = Tensor::zeros(vec![b, n * k]);
    for (i, p) in parts.iter().enumerate() {
        for r in 0..b {
            out.row_mut(r)[i * k..(i + 1) * k].copy_from_slice(p.row(r));
        }
    }
    Ok(out)
}

fn split_columns<T: Real>(t: &Tensor<T>, n: usize, k: usize) -> Vec<Tensor<T>> {
    let b = t.shape()[0];
    (0..n)
        .map(|i| {
            let mut part = Tensor::zeros(vec![b, k]);
            for r in 0..b {
                part.row_mut(r).copy_from_slice(&t.row(r)[i * k..(i + 1) * k]);
            }
            part
        })
        .collect()
}

impl<T: Real> CoherentNet<T> {
    pub fn new(
        grid: GridDecomposition,
        channels: usize,
        locals: Vec<Network<T>>,
        aggregator: Network<T>,
    ) -> Result<Self> {
        if locals.len() != grid.len() {
            return Err(Error::Construction(format!(
                "{} local networks for a {}-cell grid",
                locals.len(),
                grid.len()
            )));
        }
        let classes = aggregator.classes();
        for (i, l) in locals.iter().enumerate() {
            let mut want = vec![channels];
            want.extend(grid.cell_extents(i));
            if l.input_shape() != want.as_slice() || l.classes() != classes {
                return Err(Error::Construction(format!(
                    "local {i} takes {:?} -> {} classes, cell needs {want:?} -> {classes}",
                    l.input_shape(),
                    l.classes()
                )));
            }
        }
        if aggregator.input_shape() != [grid.len() * classes] {
            return Err(Error::Construction(format!(
                "aggregator input {:?} does not match {} cells x {classes} classes",
                aggregator.input_shape(),
                grid.len()
            )));
        }
        let mut input_shape = vec![channels];
        input_shape.extend_from_slice(grid.extents());
        Ok(CoherentNet {
            grid,
            input_shape,
            classes,
            locals,
            aggregator,
        })
    }

    pub fn grid(&self) -> &GridDecomposition {
        &self.grid
    }

    /// Concatenated local distributions `[B, N·K]`.
    pub fn local_probabilities(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let cells = self.grid.extract_batch(batch)?;
        let probs = self
            .locals
            .iter()
            .zip(&cells)
            .map(|(net, x)| net.forward(x))
            .collect::<Result<Vec<_>>>()?;
        concat_probabilities(&probs)
    }
}

impl<T: Real> Model<T> for CoherentNet<T> {
    fn architecture(&self) -> String {
        format!(
            "coherent/{}/{}/{}",
            self.grid.spec(),
            self.locals[0].architecture(),
            self.aggregator.architecture()
        )
    }

    fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, l) in self.locals.iter().enumerate() {
            out.extend(l.manifest().into_iter().map(|(n, s)| (format!("local{i}/{n}"), s)));
        }
        out.extend(
            self.aggregator
                .manifest()
                .into_iter()
                .map(|(n, s)| (format!("dnn/{n}"), s)),
        );
        out
    }

    fn param_tensors(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = self.locals.iter().flat_map(|l| l.param_tensors()).collect();
        out.extend(self.aggregator.param_tensors());
        out
    }

    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = self
            .locals
            .iter_mut()
            .flat_map(|l| l.param_tensors_mut())
            .collect();
        out.extend(self.aggregator.param_tensors_mut());
        out
    }

    fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.aggregator.forward(&self.local_probabilities(batch)?)
    }

    /// Gradients flow from the aggregator loss back through every local network.
    fn loss_and_grads(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<(T, Vec<Tensor<T>>)> {
        let cells = self.grid.extract_batch(batch)?;
        let tapes = self
            .locals
            .iter()
            .zip(&cells)
            .map(|(net, x)| net.forward_tape(x))
            .collect::<Result<Vec<_>>>()?;
        let outputs: Vec<Tensor<T>> = tapes.iter().map(|t| t.output().clone()).collect();
        let agg_tape = self.aggregator.forward_tape(&concat_probabilities(&outputs)?)?;
        let (loss, dp) = cross_entropy_with_grad(agg_tape.output(), labels)?;

        let mut agg_grads = self.aggregator.zero_grads();
        let d_concat = self
            .aggregator
            .backward(&agg_tape, &dp, &mut agg_grads, true)?
            .expect("input gradient requested");
        let d_locals = split_columns(&d_concat, self.locals.len(), self.classes);

        let mut grads = Vec::new();
        for ((net, tape), dy) in self.locals.iter().zip(&tapes).zip(&d_locals) {
            let mut g = net.zero_grads();
            net.backward(tape, dy, &mut g, false)?;
            grads.extend(g);
        }
        grads.extend(agg_grads);
        Ok((loss, grads))
    }
}

/// Locals and aggregator for `global` on `grid`, wired into one model.
pub fn build_coherent<T: Real>(
    global: &ArchitectureId,
    grid: &GridDecomposition,
    channels: usize,
    classes: usize,
    seed: u64,
) -> Result<CoherentNet<T>> {
    let locals = build_local_cnns(global, grid, channels, classes, seed)?;
    let aggregator = build_aggregator_dnn(grid.len(), classes, derive_seed(seed, 2, 0))?;
    CoherentNet::new(grid.clone(), channels, locals, aggregator)
}

/// Copy pretrained local parameters into `coherent` and reinitialise its
/// aggregator from `dnn_seed`. Fails on the first parameter whose name or
/// shape disagrees; `coherent` is untouched on failure.
pub fn transplant_weights<T: Real>(
    pretrained: &[Network<T>],
    coherent: &mut CoherentNet<T>,
    dnn_seed: u64,
) -> Result<()> {
    for (i, target) in coherent.locals.iter().enumerate() {
        let prefix = |e: Error| match e {
            Error::Transplant { param, detail } => Error::Transplant {
                param: format!("local{i}/{param}"),
                detail,
            },
            other => other,
        };
        let Some(source) = pretrained.get(i) else {
            let first = target.manifest().first().map(|e| e.0.clone()).unwrap_or_default();
            return Err(Error::Transplant {
                param: format!("local{i}/{first}"),
                detail: format!("{} pretrained networks for {} subdomains", pretrained.len(), coherent.locals.len()),
            });
        };
        crate::engine::network::check_manifest(&target.manifest(), &source.manifest()).map_err(prefix)?;
    }
    if pretrained.len() > coherent.locals.len() {
        return Err(Error::Transplant {
            param: format!("local{}", coherent.locals.len()),
            detail: format!("{} pretrained networks for {} subdomains", pretrained.len(), coherent.locals.len()),
        });
    }
    for (target, source) in coherent.locals.iter_mut().zip(pretrained) {
        target.copy_params_from(source)?;
    }
    let fresh = build_aggregator_dnn(coherent.locals.len(), coherent.classes, dnn_seed)?;
    coherent.aggregator = fresh;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::make_grid;

    fn small() -> ArchitectureId {
        ArchitectureId::vgg9(2).with_widths(4, 8)
    }

    #[test]
    fn manifest_prefixes() {
        let grid = make_grid(&[8, 8], &[2, 2]).unwrap();
        let c: CoherentNet<f64> = build_coherent(&small(), &grid, 1, 3, 0).unwrap();
        let m = c.manifest();
        assert!(m[0].0.starts_with("local0/"));
        assert!(m.last().unwrap().0.starts_with("dnn/"));
        assert_eq!(m.len(), c.param_tensors().len());
    }

    #[test]
    fn concat_order_is_cell_then_class() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let c = concat_probabilities::<f64>(&[a, b]).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn transplant_rejects_other_grid() {
        let arch = small();
        let g2 = make_grid(&[16, 16], &[2, 2]).unwrap();
        let g4 = make_grid(&[16, 16], &[4, 4]).unwrap();
        let pre: Vec<Network<f64>> = build_local_cnns(&arch, &g2, 1, 3, 0).unwrap();
        let mut c: CoherentNet<f64> = build_coherent(&arch, &g4, 1, 3, 0).unwrap();
        let before = c.param_tensors().into_iter().cloned().collect::<Vec<_>>();
        match transplant_weights(&pre, &mut c, 9) {
            Err(Error::Transplant { param, .. }) => assert!(param.starts_with("local0/"), "{param}"),
            other => panic!("expected transplant error, got {other:?}"),
        }
        let after = c.param_tensors().into_iter().cloned().collect::<Vec<_>>();
        assert_eq!(before, after);
    }
}
