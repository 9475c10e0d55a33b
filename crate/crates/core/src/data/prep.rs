use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::engine::Real;
use crate::error::{Error, Result};

/// Standard deviations below this are treated as this.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel statistics of the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Stratified seeded split. The train size is `round(fraction · N)`, shared
/// among classes by largest remainder, so each class lands within one sample
/// of its exact share.
pub fn split<T: Real>(dataset: &Dataset<T>, train_fraction: f64, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(
            "train_fraction",
            format!("{train_fraction} is outside the open interval (0, 1)"),
        ));
    }
    let counts = dataset.class_counts();
    let n = dataset.len();
    let target = (train_fraction * n as f64).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&c| c as f64 * train_fraction).collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut missing = target.saturating_sub(take.iter().sum());
    for &c in order.iter().cycle().take(counts.len() * 2) {
        if missing == 0 {
            break;
        }
        if take[c] < counts[c] {
            take[c] += 1;
            missing -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::with_capacity(target);
    let mut val_idx = Vec::with_capacity(n - target);
    for (class, &k) in take.iter().enumerate() {
        let mut members: Vec<usize> = (0..n).filter(|&i| dataset.labels[i] == class).collect();
        members.shuffle(&mut rng);
        train_idx.extend_from_slice(&members[..k]);
        val_idx.extend_from_slice(&members[k..]);
    }
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::config(
            "train_fraction",
            format!("{train_fraction} of {n} samples leaves an empty split"),
        ));
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((dataset.subset(&train_idx, Split::Train)?, dataset.subset(&val_idx, Split::Val)?))
}

fn channel_stats<T: Real>(d: &Dataset<T>) -> NormStats {
    let c = d.channels();
    let plane = d.spatial_extents().iter().product::<usize>();
    let mut mean = vec![0.0; c];
    let mut sq = vec![0.0; c];
    for i in 0..d.len() {
        for (ch, values) in d.images.row(i).chunks_exact(plane).enumerate() {
            for v in values {
                let v = v.to_f64_lossy();
                mean[ch] += v;
                sq[ch] += v * v;
            }
        }
    }
    let count = (d.len() * plane) as f64;
    let std = mean
        .iter_mut()
        .zip(&sq)
        .map(|(m, s)| {
            *m /= count;
            (s / count - *m * *m).max(0.0).sqrt().max(STD_FLOOR)
        })
        .collect();
    NormStats { mean, std }
}

fn apply<T: Real>(d: &mut Dataset<T>, stats: &NormStats) {
    let plane = d.spatial_extents().iter().product::<usize>();
    let c = d.channels();
    for (j, v) in d.images.data_mut().iter_mut().enumerate() {
        let ch = (j / plane) % c;
        *v = T::from_f64_lossy((v.to_f64_lossy() - stats.mean[ch]) / stats.std[ch]);
    }
    d.stats = Some(stats.clone());
}

/// Standardise both splits per channel with statistics of `train` only.
pub fn normalize<T: Real>(
    mut train: Dataset<T>,
    mut val: Dataset<T>,
) -> Result<(Dataset<T>, Dataset<T>, NormStats)> {
    if train.is_empty() {
        return Err(Error::Input("cannot normalise with an empty training split".into()));
    }
    if train.sample_shape() != val.sample_shape() {
        return Err(Error::dim(
            "normalize",
            format!("train samples {:?} vs val samples {:?}", train.sample_shape(), val.sample_shape()),
        ));
    }
    let stats = channel_stats(&train);
    apply(&mut train, &stats);
    apply(&mut val, &stats);
    Ok((train, val, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Tensor;

    fn toy(n: usize, classes: usize) -> Dataset<f64> {
        let x = Tensor::from_fn(vec![n, 2, 2, 2], |i| (i % 7) as f64);
        Dataset::new(x, (0..n).map(|i| i % classes).collect(), classes, Split::Train).unwrap()
    }

    #[test]
    fn sizes_and_strata() {
        let d = toy(3670, 5);
        let (tr, va) = split(&d, 0.8, 1).unwrap();
        assert_eq!((tr.len(), va.len()), (2936, 734));
        for (c, &n) in d.class_counts().iter().enumerate() {
            let got = tr.class_counts()[c] as f64;
            assert!((got - 0.8 * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn fraction_bounds() {
        let d = toy(10, 2);
        assert!(split(&d, 1.0, 0).is_err());
        assert!(split(&d, 0.0, 0).is_err());
    }

    #[test]
    fn seeded_membership() {
        let d = toy(50, 3);
        let a = split(&d, 0.7, 9).unwrap();
        let b = split(&d, 0.7, 9).unwrap();
        assert_eq!(a.0, b.0);
        let c = split(&d, 0.7, 10).unwrap();
        assert_ne!(a.0.images, c.0.images);
    }

    #[test]
    fn constant_channel_stays_finite() {
        let x = Tensor::full(vec![4, 1, 2, 2], 3.0);
        let d = Dataset::new(x, vec![0, 1, 0, 1], 2, Split::Train).unwrap();
        let (tr, _, stats) = normalize(d.clone(), d).unwrap();
        assert_eq!(stats.std[0], STD_FLOOR);
        assert!(tr.images.check_finite("normalised").is_ok());
    }
}
