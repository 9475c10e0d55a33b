use crate::data::Dataset;
use crate::decomp::GridDecomposition;
use crate::engine::{Network, Real, Tensor};
use crate::error::Result;
use crate::models::{build_coherent, build_global, build_local_cnns, derive_seed, transplant_weights, ArchitectureId, CoherentNet};
use crate::strategies::{
    aggregate_average, aggregate_majority, argmax, evaluate, fit, fit_dataset, local_probabilities,
    probability_batch, train_local_cnns, Metrics, Predictor, ProbabilityMatrix, TrainConfig,
};

fn metrics_for<T: Real, P: Predictor<T>>(
    predictor: &P,
    train: &Dataset<T>,
    val: &Dataset<T>,
    loss_curve: Vec<f64>,
    wall_seconds: f64,
    samples_seen: usize,
) -> Result<Metrics> {
    Ok(Metrics {
        train_acc: evaluate(predictor, train)?,
        val_acc: evaluate(predictor, val)?,
        loss_curve,
        wall_seconds,
        samples_seen,
    })
}

/// The undecomposed baseline: one full-size network on whole images.
pub fn train_global<T: Real>(
    arch: &ArchitectureId,
    train: &Dataset<T>,
    val: &Dataset<T>,
    config: &TrainConfig,
) -> Result<(Network<T>, Metrics)> {
    let mut net = build_global(arch, train.sample_shape(), train.classes, derive_seed(config.seed, 10, 0))?;
    let fitted = fit_dataset(&mut net, train, config, derive_seed(config.seed, 10, 1))?;
    let m = metrics_for(&net, train, val, fitted.loss_curve, fitted.wall_seconds, fitted.samples_seen)?;
    Ok((net, m))
}

/// Locals followed by the aggregator.
#[derive(Clone, Copy, Debug)]
pub struct CnnDnn<'a, T> {
    pub locals: &'a [Network<T>],
    pub dnn: &'a Network<T>,
    pub grid: &'a GridDecomposition,
}

impl<T: Real> CnnDnn<'_, T> {
    /// Final class distributions `[B, K]`.
    pub fn distributions(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.dnn.forward(&probability_batch(self.locals, self.grid, images)?)
    }
}

impl<T: Real> Predictor<T> for CnnDnn<'_, T> {
    fn predict_labels(&self, images: &Tensor<T>) -> Result<Vec<usize>> {
        let p = self.distributions(images)?;
        Ok((0..p.shape()[0]).map(|r| argmax(p.row(r))).collect())
    }
}

/// Highest mean local probability.
#[derive(Clone, Copy, Debug)]
pub struct AverageProbability<'a, T> {
    pub locals: &'a [Network<T>],
    pub grid: &'a GridDecomposition,
}

impl<T: Real> Predictor<T> for AverageProbability<'_, T> {
    fn predict_labels(&self, images: &Tensor<T>) -> Result<Vec<usize>> {
        let flat = probability_batch(self.locals, self.grid, images)?;
        let k = flat.row_len() / self.locals.len();
        (0..flat.shape()[0])
            .map(|r| Ok(aggregate_average(&ProbabilityMatrix::from_flat(flat.row(r), k)?)?.0))
            .collect()
    }
}

/// Plurality of local decisions.
#[derive(Clone, Copy, Debug)]
pub struct MajorityVote<'a, T> {
    pub locals: &'a [Network<T>],
    pub grid: &'a GridDecomposition,
}

impl<T: Real> Predictor<T> for MajorityVote<'_, T> {
    fn predict_labels(&self, images: &Tensor<T>) -> Result<Vec<usize>> {
        let flat = probability_batch(self.locals, self.grid, images)?;
        let k = flat.row_len() / self.locals.len();
        (0..flat.shape()[0])
            .map(|r| aggregate_majority(&ProbabilityMatrix::from_flat(flat.row(r), k)?))
            .collect()
    }
}

/// Train `dnn` on cached local outputs. The locals are only read.
pub fn train_aggregator<T: Real>(
    dnn: &mut Network<T>,
    locals: &[Network<T>],
    grid: &GridDecomposition,
    train: &Dataset<T>,
    val: &Dataset<T>,
    config: &TrainConfig,
) -> Result<Metrics> {
    let inputs = probability_batch(locals, grid, &train.images)?;
    let fitted = fit(dnn, &inputs, &train.labels, config, config.epochs, derive_seed(config.seed, 3, 0))?;
    let predictor = CnnDnn { locals, dnn: &*dnn, grid };
    metrics_for(&predictor, train, val, fitted.loss_curve, fitted.wall_seconds, fitted.samples_seen)
}

/// Class and distribution of one image `[C, spatial...]`; ties go to the lowest class.
pub fn predict_cnn_dnn<T: Real>(
    locals: &[Network<T>],
    dnn: &Network<T>,
    image: &Tensor<T>,
    grid: &GridDecomposition,
) -> Result<(usize, Vec<T>)> {
    let pm = local_probabilities(locals, image, grid)?;
    let flat = Tensor::new(vec![pm.rows() * pm.classes()], pm.flattened().to_vec())?;
    let p = dnn.forward_one(&flat)?.into_data();
    Ok((argmax(&p), p))
}

/// End-to-end training of locals and aggregator together.
pub fn train_coherent<T: Real>(
    coherent: &mut CoherentNet<T>,
    train: &Dataset<T>,
    val: &Dataset<T>,
    config: &TrainConfig,
) -> Result<Metrics> {
    let fitted = fit(coherent, &train.images, &train.labels, config, config.epochs, derive_seed(config.seed, 4, 0))?;
    metrics_for(&*coherent, train, val, fitted.loss_curve, fitted.wall_seconds, fitted.samples_seen)
}

#[derive(Clone, Debug)]
pub struct TransferOutcome<T> {
    pub model: CoherentNet<T>,
    /// Per-local pretraining metrics.
    pub local_metrics: Vec<Metrics>,
    /// Pretraining phase summary, including its own wall-clock.
    pub pretrain: Metrics,
    /// End-to-end phase of the assembled model.
    pub finetune: Metrics,
}

/// Pretrain locals for `config.pretrain_epochs`, transplant them into a fresh
/// coherent model, then train it end to end for `config.epochs` (may be 0).
pub fn transfer_pipeline<T: Real>(
    arch: &ArchitectureId,
    grid: &GridDecomposition,
    train: &Dataset<T>,
    val: &Dataset<T>,
    config: &TrainConfig,
) -> Result<TransferOutcome<T>> {
    let (channels, classes) = (train.channels(), train.classes);
    let locals = build_local_cnns(arch, grid, channels, classes, config.seed)?;
    let mut pre_config = config.clone();
    pre_config.epochs = config.pretrain_epochs;
    let pre = train_local_cnns(locals, grid, train, val, &pre_config)?;

    let mut model = build_coherent(arch, grid, channels, classes, config.seed)?;
    transplant_weights(&pre.locals, &mut model, derive_seed(config.seed, 2, 1))?;
    let fitted = fit(&mut model, &train.images, &train.labels, config, config.epochs, derive_seed(config.seed, 4, 0))?;
    let finetune = metrics_for(&model, train, val, fitted.loss_curve, fitted.wall_seconds, fitted.samples_seen)?;
    Ok(TransferOutcome {
        pretrain: pre.summary(),
        local_metrics: pre.metrics,
        model,
        finetune,
    })
}
