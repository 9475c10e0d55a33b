use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::decomp::{extract_subimages, GridDecomposition};
use crate::engine::{Network, Real, Tensor};
use crate::error::{Error, Result};
use crate::models::concat_probabilities;
use crate::strategies::{evaluate, fit_dataset, Metrics, ProbabilityMatrix, TrainConfig, EVAL_CHUNK};

/// Trained local networks with their individual metrics.
#[derive(Clone, Debug)]
pub struct LocalTraining<T> {
    pub locals: Vec<Network<T>>,
    /// Standalone metrics of each local on its own subimages.
    pub metrics: Vec<Metrics>,
    pub wall_seconds: f64,
    /// Messages exchanged between local tasks while training. Tasks share
    /// only read-only data, so this stays 0.
    pub communication_events: usize,
}

impl<T> LocalTraining<T> {
    /// Mean accuracies and loss curve over locals, summed sample count, and
    /// the wall-clock of the whole parallel phase.
    pub fn summary(&self) -> Metrics {
        let n = self.metrics.len().max(1) as f64;
        let epochs = self.metrics.iter().map(|m| m.loss_curve.len()).max().unwrap_or(0);
        let loss_curve = (0..epochs)
            .map(|e| self.metrics.iter().filter_map(|m| m.loss_curve.get(e)).sum::<f64>() / n)
            .collect();
        Metrics {
            train_acc: self.metrics.iter().map(|m| m.train_acc).sum::<f64>() / n,
            val_acc: self.metrics.iter().map(|m| m.val_acc).sum::<f64>() / n,
            loss_curve,
            wall_seconds: self.wall_seconds,
            samples_seen: self.metrics.iter().map(|m| m.samples_seen).sum(),
        }
    }
}

/// One dataset per grid cell, each carrying the global labels.
pub fn subimage_datasets<T: Real>(grid: &GridDecomposition, data: &Dataset<T>) -> Result<Vec<Dataset<T>>> {
    grid.extract_batch(&data.images)?
        .into_iter()
        .map(|images| {
            Ok(Dataset {
                images,
                labels: data.labels.clone(),
                classes: data.classes,
                split: data.split,
                stats: data.stats.clone(),
            })
        })
        .collect()
}

fn train_one<T: Real>(
    net: &mut Network<T>,
    train: &Dataset<T>,
    val: &Dataset<T>,
    config: &TrainConfig,
    seed: u64,
) -> Result<Metrics> {
    let fitted = fit_dataset(net, train, config, seed)?;
    Ok(Metrics {
        train_acc: evaluate(&*net, train)?,
        val_acc: evaluate(&*net, val)?,
        loss_curve: fitted.loss_curve,
        wall_seconds: fitted.wall_seconds,
        samples_seen: fitted.samples_seen,
    })
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "worker panicked".into())
}

/// Train local `i` on `(subimage_i, label)` pairs, independently and in
/// parallel over `config.workers` threads.
///
/// Local `i` shuffles with seed `config.seed + i`, so the result does not
/// depend on the worker count. A failing or panicking task surfaces as a
/// pipeline error carrying its subdomain index.
pub fn train_local_cnns<T: Real>(
    mut locals: Vec<Network<T>>,
    grid: &GridDecomposition,
    train: &Dataset<T>,
    val: &Dataset<T>,
    config: &TrainConfig,
) -> Result<LocalTraining<T>> {
    if locals.len() != grid.len() {
        return Err(Error::Construction(format!(
            "{} local networks for a {}-cell grid",
            locals.len(),
            grid.len()
        )));
    }
    let start = Instant::now();
    let train_parts = subimage_datasets(grid, train)?;
    let val_parts = subimage_datasets(grid, val)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| Error::Construction(format!("worker pool: {e}")))?;

    let results: Vec<Result<Metrics>> = pool.install(|| {
        locals
            .par_iter_mut()
            .enumerate()
            .map(|(i, net)| {
                let seed = config.seed.wrapping_add(i as u64);
                let (tr, va) = (&train_parts[i], &val_parts[i]);
                catch_unwind(AssertUnwindSafe(|| train_one(net, tr, va, config, seed)))
                    .unwrap_or_else(|p| Err(Error::Pipeline { index: i, detail: panic_message(p) }))
                    .map_err(|e| match e {
                        e @ Error::Pipeline { .. } => e,
                        other => Error::Pipeline {
                            index: i,
                            detail: other.to_string(),
                        },
                    })
            })
            .collect()
    });
    let metrics = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(LocalTraining {
        locals,
        metrics,
        wall_seconds: start.elapsed().as_secs_f64(),
        communication_events: 0,
    })
}

/// Row `i` is the output of local `i` on subimage `i` of `image` (`[C, spatial...]`).
pub fn local_probabilities<T: Real>(
    locals: &[Network<T>],
    image: &Tensor<T>,
    grid: &GridDecomposition,
) -> Result<ProbabilityMatrix<T>> {
    if locals.len() != grid.len() {
        return Err(Error::dim(
            "local_probabilities",
            format!("{} locals for {} cells", locals.len(), grid.len()),
        ));
    }
    let cells = extract_subimages(image, grid)?;
    let mut data = Vec::new();
    let mut classes = 0;
    for (net, cell) in locals.iter().zip(&cells) {
        let p = net.forward_one(cell)?;
        classes = p.len();
        data.extend_from_slice(p.data());
    }
    ProbabilityMatrix::new(locals.len(), classes, data)
}

/// Flattened probability matrices `[B, N·K]` for a batch `[B, C, spatial...]`.
pub fn probability_batch<T: Real>(
    locals: &[Network<T>],
    grid: &GridDecomposition,
    images: &Tensor<T>,
) -> Result<Tensor<T>> {
    if locals.len() != grid.len() {
        return Err(Error::dim(
            "probability_batch",
            format!("{} locals for {} cells", locals.len(), grid.len()),
        ));
    }
    let b = images.shape()[0];
    let mut data = Vec::new();
    let mut width = 0;
    let rows: Vec<usize> = (0..b).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let x = images.select_rows(chunk)?;
        let cells = grid.extract_batch(&x)?;
        let probs = locals
            .iter()
            .zip(&cells)
            .map(|(net, c)| net.forward(c))
            .collect::<Result<Vec<_>>>()?;
        let joined = concat_probabilities(&probs)?;
        width = joined.row_len();
        data.extend(joined.into_data());
    }
    Tensor::new(vec![b, width], data)
}
