//! Training pipelines, combination rules and evaluation.

mod aggregate;
mod fit;
mod local;
mod pipeline;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate_average, aggregate_majority, argmax, ProbabilityMatrix};
pub use fit::{fit, fit_dataset, FitOutcome};
pub use local::{local_probabilities, probability_batch, subimage_datasets, train_local_cnns, LocalTraining};
pub use pipeline::{
    predict_cnn_dnn, train_aggregator, train_coherent, train_global, transfer_pipeline, AverageProbability,
    CnnDnn, MajorityVote, TransferOutcome,
};

use crate::data::Dataset;
use crate::engine::{AdamConfig, Model, Network, Real, Tensor};
use crate::models::CoherentNet;
use crate::error::{Error, Result};

/// Rows per forward call when evaluating or caching local outputs.
pub const EVAL_CHUNK: usize = 256;

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    20
}
fn default_pretrain() -> usize {
    150
}
fn default_workers() -> usize {
    1
}
fn default_true() -> bool {
    true
}

/// Optimisation settings shared by every training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Local pretraining epochs of the transfer pipeline.
    #[serde(default = "default_pretrain")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Recorded in run manifests. Every reduction in this crate already runs
    /// in a fixed order, so results do not depend on it.
    #[serde(default = "default_true")]
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: default_epochs(),
            pretrain_epochs: default_pretrain(),
            batch_size: default_batch(),
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            seed: 0,
            workers: default_workers(),
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::config("train.workers", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", format!("{} is not a positive finite rate", self.lr)));
        }
        for (name, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, format!("{b} is outside [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("train.epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// Outcome of one training phase or strategy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub train_acc: f64,
    pub val_acc: f64,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    pub wall_seconds: f64,
    pub samples_seen: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "global")]
    Global,
    #[serde(rename = "cnn-dnn")]
    CnnDnn,
    #[serde(rename = "avg-prob")]
    AvgProb,
    #[serde(rename = "maj-vot")]
    MajVot,
    #[serde(rename = "coherent")]
    Coherent,
    #[serde(rename = "transfer")]
    Transfer,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Global,
        Strategy::CnnDnn,
        Strategy::AvgProb,
        Strategy::MajVot,
        Strategy::Coherent,
        Strategy::Transfer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Global => "global",
            Strategy::CnnDnn => "cnn-dnn",
            Strategy::AvgProb => "avg-prob",
            Strategy::MajVot => "maj-vot",
            Strategy::Coherent => "coherent",
            Strategy::Transfer => "transfer",
        }
    }

    /// Whether the strategy needs trained local networks.
    pub fn uses_locals(self) -> bool {
        matches!(self, Strategy::CnnDnn | Strategy::AvgProb | Strategy::MajVot)
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config("strategies", format!("unknown strategy `{s}`")))
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Anything that assigns a class to each image of a batch.
pub trait Predictor<T: Real>: Sync {
    fn predict_labels(&self, images: &Tensor<T>) -> Result<Vec<usize>>;
}

fn model_labels<T: Real, M: Model<T>>(model: &M, images: &Tensor<T>) -> Result<Vec<usize>> {
    let p = model.predict(images)?;
    Ok((0..p.shape()[0]).map(|r| argmax(p.row(r))).collect())
}

impl<T: Real> Predictor<T> for Network<T> {
    fn predict_labels(&self, images: &Tensor<T>) -> Result<Vec<usize>> {
        model_labels(self, images)
    }
}

impl<T: Real> Predictor<T> for CoherentNet<T> {
    fn predict_labels(&self, images: &Tensor<T>) -> Result<Vec<usize>> {
        model_labels(self, images)
    }
}

/// Per-sample predictions over a split, computed in chunks.
pub fn predictions<T: Real, P: Predictor<T> + ?Sized>(predictor: &P, data: &Dataset<T>) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, _) = data.batch(chunk)?;
        out.extend(predictor.predict_labels(&x)?);
    }
    Ok(out)
}

/// Fraction of correctly classified samples. No parameters change.
pub fn evaluate<T: Real, P: Predictor<T> + ?Sized>(predictor: &P, data: &Dataset<T>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty split".into()));
    }
    let pred = predictions(predictor, data)?;
    let correct = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    struct Constant(usize);

    impl Predictor<f64> for Constant {
        fn predict_labels(&self, images: &Tensor<f64>) -> Result<Vec<usize>> {
            Ok(vec![self.0; images.shape()[0]])
        }
    }

    #[test]
    fn constant_predictor_on_balanced_split() {
        let x = Tensor::zeros(vec![300, 1, 2, 2]);
        let d = Dataset::new(x, (0..300).map(|i| i % 3).collect(), 3, Split::Val).unwrap();
        let acc = evaluate(&Constant(1), &d).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_split_rejected() {
        let d = Dataset::<f64> {
            images: Tensor::zeros(vec![1, 1, 2, 2]),
            labels: vec![],
            classes: 2,
            split: Split::Val,
            stats: None,
        };
        assert!(matches!(evaluate(&Constant(0), &d), Err(Error::Input(_))));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("avg".parse::<Strategy>().is_err());
    }

    #[test]
    fn config_validation_names_field() {
        let bad = TrainConfig::default().with_workers(0);
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "train.workers"));
    }
}
