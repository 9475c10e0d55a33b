use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::engine::{AdamState, Model, Real, Tensor};
use crate::error::{Error, Result};
use crate::strategies::TrainConfig;

/// What a training loop did, before any evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitOutcome {
    pub loss_curve: Vec<f64>,
    pub samples_seen: usize,
    pub wall_seconds: f64,
}

/// Minibatch Adam on `(inputs, labels)` for `epochs` epochs.
///
/// The sample order is reshuffled every epoch from a generator seeded with
/// `seed`. A non-finite loss or gradient aborts with an error naming the
/// optimiser step.
pub fn fit<T: Real, M: Model<T> + ?Sized>(
    model: &mut M,
    inputs: &Tensor<T>,
    labels: &[usize],
    config: &TrainConfig,
    epochs: usize,
    seed: u64,
) -> Result<FitOutcome> {
    let n = labels.len();
    if inputs.shape()[0] != n {
        return Err(Error::dim("fit", format!("{} inputs for {n} labels", inputs.shape()[0])));
    }
    if n == 0 {
        return Err(Error::Input("cannot train on an empty set".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::config("train.batch_size", "must be at least 1"));
    }
    let start = Instant::now();
    let mut adam = AdamState::new(config.adam(), model.param_tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut out = FitOutcome::default();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x = inputs.select_rows(chunk)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = model.loss_and_grads(&x, &y)?;
            let step = adam.steps() as usize;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("training loss at step {step}"),
                    index: 0,
                });
            }
            for g in &grads {
                g.check_finite(&format!("gradient at step {step}"))?;
            }
            let mut params = model.param_tensors_mut();
            adam.step(&mut params, &grads)?;
            total += loss.to_f64_lossy() * chunk.len() as f64;
            out.samples_seen += chunk.len();
        }
        out.loss_curve.push(total / n as f64);
    }
    out.wall_seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

/// [`fit`] over a dataset with `config.epochs` epochs.
pub fn fit_dataset<T: Real, M: Model<T> + ?Sized>(
    model: &mut M,
    data: &Dataset<T>,
    config: &TrainConfig,
    seed: u64,
) -> Result<FitOutcome> {
    fit(model, &data.images, &data.labels, config, config.epochs, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Network, NetworkBuilder};

    fn separable() -> (Tensor<f64>, Vec<usize>) {
        let x = Tensor::from_fn(vec![40, 2], |i| {
            let (r, c) = (i / 2, i % 2);
            let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
            sign * (1.0 + (r * 7 + c * 3) as f64 % 5.0 * 0.1)
        });
        (x, (0..40).map(|r| r % 2).collect())
    }

    fn net() -> Network<f64> {
        NetworkBuilder::new("mlp", &[2])
            .dense(8)
            .unwrap()
            .relu()
            .dense(2)
            .unwrap()
            .softmax()
            .build(2, 3)
            .unwrap()
    }

    #[test]
    fn loss_goes_down() {
        let (x, y) = separable();
        let mut m = net();
        let cfg = TrainConfig::default().with_lr(1e-2).with_batch_size(8);
        let out = fit(&mut m, &x, &y, &cfg, 10, 0).unwrap();
        assert!(out.loss_curve[9] < out.loss_curve[0]);
        assert_eq!(out.samples_seen, 400);
    }

    #[test]
    fn nan_weights_are_a_hard_error() {
        let (x, y) = separable();
        let mut m = net();
        m.params_mut()[0].value.data_mut()[0] = f64::NAN;
        let cfg = TrainConfig::default();
        assert!(matches!(fit(&mut m, &x, &y, &cfg, 1, 0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn zero_epochs_leave_parameters() {
        let (x, y) = separable();
        let mut m = net();
        let before = m.params().to_vec();
        fit(&mut m, &x, &y, &TrainConfig::default(), 0, 0).unwrap();
        assert_eq!(m.params(), &before[..]);
    }
}
