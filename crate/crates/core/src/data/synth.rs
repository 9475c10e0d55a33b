use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{split, Dataset, Split};
use crate::decomp::{make_grid, GridDecomposition};
use crate::engine::conv::pad3;
use crate::engine::{Real, Tensor};
use crate::error::{Error, Result};

/// Which quadrants (octants in 3D) of a class carry a blob, and how bright.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternRow {
    /// Region indices in grid order (row-major, depth slowest).
    pub regions: Vec<usize>,
    #[serde(default = "one")]
    pub intensity: f64,
}

fn one() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    0.1
}

fn default_samples() -> usize {
    100
}

fn default_channels() -> usize {
    1
}

fn default_blob() -> f64 {
    0.5
}

fn default_fraction() -> f64 {
    0.8
}

/// Generative model of a synthetic dataset.
///
/// Each image is Gaussian noise plus, for every region flagged in its class's
/// pattern row, a constant-intensity square (cube) blob centred in that
/// region, optionally shifted by up to `jitter` pixels per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub extents: Vec<usize>,
    pub classes: usize,
    /// `None` selects [`default_patterns`].
    #[serde(default)]
    pub patterns: Option<Vec<PatternRow>>,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default = "default_samples")]
    pub samples_per_class: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default)]
    pub jitter: usize,
    /// Blob side as a fraction of the region side.
    #[serde(default = "default_blob")]
    pub blob_fraction: f64,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
}

impl SynthSpec {
    pub fn new(extents: &[usize], classes: usize) -> Self {
        SynthSpec {
            extents: extents.to_vec(),
            classes,
            patterns: None,
            noise_std: default_noise(),
            samples_per_class: default_samples(),
            seed: 0,
            channels: 1,
            jitter: 0,
            blob_fraction: default_blob(),
            train_fraction: default_fraction(),
        }
    }

    pub fn with_noise(mut self, std: f64) -> Self {
        self.noise_std = std;
        self
    }

    pub fn with_samples(mut self, per_class: usize) -> Self {
        self.samples_per_class = per_class;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_jitter(mut self, jitter: usize) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn with_patterns(mut self, patterns: Vec<PatternRow>) -> Self {
        self.patterns = Some(patterns);
        self
    }

    fn regions(&self) -> Result<GridDecomposition> {
        make_grid(&self.extents, &vec![2; self.extents.len()])
    }

    /// The pattern table in effect.
    pub fn pattern_table(&self) -> Result<Vec<PatternRow>> {
        match &self.patterns {
            Some(p) => Ok(p.clone()),
            None => default_patterns(self.classes, 1 << self.extents.len()),
        }
    }

    pub fn validate(&self, rank: usize) -> Result<()> {
        if self.extents.len() != rank {
            return Err(Error::config(
                "extents",
                format!("{:?} does not have {rank} axes", self.extents),
            ));
        }
        if let Some(&e) = self.extents.iter().find(|&&e| e < 8) {
            return Err(Error::config("extents", format!("extent {e} is below the minimum of 8")));
        }
        let regions = 1usize << rank;
        if self.classes < 2 || self.classes > 1 << regions {
            return Err(Error::config(
                "classes",
                format!("{} classes cannot be coded over {regions} regions", self.classes),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std", format!("{} is not a finite value >= 0", self.noise_std)));
        }
        if self.samples_per_class == 0 {
            return Err(Error::config("samples_per_class", "must be positive"));
        }
        if self.channels == 0 {
            return Err(Error::config("channels", "must be positive"));
        }
        if !(self.blob_fraction > 0.0 && self.blob_fraction <= 1.0) {
            return Err(Error::config("blob_fraction", format!("{} is outside (0, 1]", self.blob_fraction)));
        }
        let table = self.pattern_table()?;
        if table.len() != self.classes {
            return Err(Error::config(
                "patterns",
                format!("{} rows for {} classes", table.len(), self.classes),
            ));
        }
        let mut keys = Vec::with_capacity(table.len());
        for (k, row) in table.iter().enumerate() {
            if let Some(&r) = row.regions.iter().find(|&&r| r >= regions) {
                return Err(Error::config("patterns", format!("row {k} names region {r} of {regions}")));
            }
            if !row.intensity.is_finite() {
                return Err(Error::config("patterns", format!("row {k} has a non-finite intensity")));
            }
            let mut mask = row.regions.clone();
            mask.sort_unstable();
            mask.dedup();
            keys.push((mask, row.intensity.to_bits()));
        }
        for k in 1..keys.len() {
            if let Some(j) = keys[..k].iter().position(|x| *x == keys[k]) {
                return Err(Error::config("patterns", format!("rows {j} and {k} are identical")));
            }
        }
        Ok(())
    }

    /// Per-axis `(start, side)` of the unshifted blob in `region`, and the
    /// admissible start range after jitter.
    fn blob_axes(&self, grid: &GridDecomposition, region: usize) -> Vec<BlobAxis> {
        grid.cell(region)
            .into_iter()
            .map(|(start, len)| {
                let side = ((len as f64 * self.blob_fraction).round() as usize).clamp(1, len);
                let centred = start + (len - side) / 2;
                BlobAxis {
                    centred,
                    side,
                    lo: start,
                    hi: start + len - side,
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
struct BlobAxis {
    centred: usize,
    side: usize,
    lo: usize,
    hi: usize,
}

impl BlobAxis {
    fn start(&self, shift: i64) -> usize {
        (self.centred as i64 + shift).clamp(self.lo as i64, self.hi as i64) as usize
    }
}

/// Default pattern table: region masks ordered by popcount then value, with the
/// empty mask last. For `K <= regions` class `k` lights region `k` only.
pub fn default_patterns(classes: usize, regions: usize) -> Result<Vec<PatternRow>> {
    if classes > 1 << regions {
        return Err(Error::config(
            "classes",
            format!("{classes} classes cannot be coded over {regions} regions"),
        ));
    }
    let mut masks: Vec<u32> = (1..1u32 << regions).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    masks.push(0);
    Ok(masks[..classes]
        .iter()
        .map(|m| PatternRow {
            regions: (0..regions).filter(|r| m >> r & 1 == 1).collect(),
            intensity: 1.0,
        })
        .collect())
}

/// Visit every voxel offset (flat index over spatial extents) inside a box.
fn for_box(extents: &[usize], starts: &[usize], sides: &[usize], mut f: impl FnMut(usize)) {
    let e = pad3(extents, 1);
    let s = pad3(starts, 0);
    let n = pad3(sides, 1);
    for a in s[0]..s[0] + n[0] {
        for b in s[1]..s[1] + n[1] {
            for c in s[2]..s[2] + n[2] {
                f((a * e[1] + b) * e[2] + c);
            }
        }
    }
}

fn generate<T: Real>(spec: &SynthSpec, rank: usize) -> Result<Dataset<T>> {
    spec.validate(rank)?;
    let grid = spec.regions()?;
    let table = spec.pattern_table()?;
    let plane: usize = spec.extents.iter().product();
    let per_image = plane * spec.channels;
    let n = spec.classes * spec.samples_per_class;
    let noise = (spec.noise_std > 0.0).then(|| Normal::new(0.0, spec.noise_std).expect("validated std"));
    let j = spec.jitter as i64;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = vec![0.0f64; n * per_image];
    let mut labels = Vec::with_capacity(n);
    for (k, row) in table.iter().enumerate() {
        for s in 0..spec.samples_per_class {
            let img = &mut data[(k * spec.samples_per_class + s) * per_image..][..per_image];
            let mut blob = vec![false; plane];
            for &r in &row.regions {
                let axes = spec.blob_axes(&grid, r);
                let starts: Vec<usize> = axes
                    .iter()
                    .map(|a| a.start(if j > 0 { rng.random_range(-j..=j) } else { 0 }))
                    .collect();
                let sides: Vec<usize> = axes.iter().map(|a| a.side).collect();
                for_box(&spec.extents, &starts, &sides, |p| blob[p] = true);
            }
            for ch in 0..spec.channels {
                for (p, v) in img[ch * plane..(ch + 1) * plane].iter_mut().enumerate() {
                    *v = if blob[p] { row.intensity } else { 0.0 };
                    if let Some(d) = &noise {
                        *v += d.sample(&mut rng);
                    }
                }
            }
            labels.push(k);
        }
    }
    let mut shape = vec![n, spec.channels];
    shape.extend_from_slice(&spec.extents);
    let images = Tensor::new(shape, data.into_iter().map(T::from_f64_lossy).collect())?;
    Dataset::new(images, labels, spec.classes, Split::Train)
}

fn generate_split<T: Real>(spec: &SynthSpec, rank: usize) -> Result<(Dataset<T>, Dataset<T>)> {
    let all = generate(spec, rank)?;
    split(&all, spec.train_fraction, spec.seed.wrapping_add(1))
}

/// 2D quadrant dataset, split `(train, val)`.
pub fn synth2d<T: Real>(spec: &SynthSpec) -> Result<(Dataset<T>, Dataset<T>)> {
    generate_split(spec, 2)
}

/// 3D octant dataset, split `(train, val)`.
pub fn synth3d<T: Real>(spec: &SynthSpec) -> Result<(Dataset<T>, Dataset<T>)> {
    generate_split(spec, 3)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Maximum-likelihood class of an un-normalised image `[C, spatial...]` under
/// the generative model of `spec`, with uniform class priors.
///
/// Regions are disjoint and blobs never leave their region, so the
/// log-likelihood is a sum over regions; inside a lit region it marginalises
/// over the `(2·jitter + 1)^rank` equally likely shifts. The noise std is
/// floored at 1e-6. Ties go to the lowest class.
pub fn bayes_predict<T: Real>(spec: &SynthSpec, image: &Tensor<T>) -> Result<usize> {
    let rank = spec.extents.len();
    spec.validate(rank)?;
    let mut want = vec![spec.channels];
    want.extend_from_slice(&spec.extents);
    if image.shape() != want.as_slice() {
        return Err(Error::dim("bayes_predict", format!("image {:?}, expected {want:?}", image.shape())));
    }
    let grid = spec.regions()?;
    let table = spec.pattern_table()?;
    let plane: usize = spec.extents.iter().product();
    let var2 = 2.0 * spec.noise_std.max(1e-6).powi(2);
    // Channel-summed pixel values and squared norms per region.
    let x: Vec<f64> = image.data().iter().map(|v| v.to_f64_lossy()).collect();
    let mut col = vec![0.0; plane];
    for ch in 0..spec.channels {
        for (p, c) in col.iter_mut().enumerate() {
            *c += x[ch * plane + p];
        }
    }

    let shifts: Vec<i64> = (-(spec.jitter as i64)..=spec.jitter as i64).collect();
    let mut best = (f64::NEG_INFINITY, 0);
    for (k, row) in table.iter().enumerate() {
        let mut ll = 0.0;
        let mut lit: Vec<usize> = row.regions.clone();
        lit.sort_unstable();
        lit.dedup();
        for &r in &lit {
            let axes = spec.blob_axes(&grid, r);
            let sides: Vec<usize> = axes.iter().map(|a| a.side).collect();
            let volume: usize = sides.iter().product();
            // Relative to the all-background hypothesis:
            // -(||x - μ||² - ||x||²) / 2σ² = (2·I·Σ_blob x - C·V·I²) / 2σ²
            let mut terms = Vec::with_capacity(shifts.len().pow(rank as u32));
            let mut idx = vec![0usize; rank];
            loop {
                let starts: Vec<usize> = axes.iter().zip(&idx).map(|(a, &i)| a.start(shifts[i])).collect();
                let mut sum = 0.0;
                for_box(&spec.extents, &starts, &sides, |p| sum += col[p]);
                let i = row.intensity;
                terms.push((2.0 * i * sum - (spec.channels * volume) as f64 * i * i) / var2);
                let mut a = 0;
                while a < rank {
                    idx[a] += 1;
                    if idx[a] < shifts.len() {
                        break;
                    }
                    idx[a] = 0;
                    a += 1;
                }
                if a == rank {
                    break;
                }
            }
            ll += log_sum_exp(&terms) - (terms.len() as f64).ln();
        }
        if ll > best.0 {
            best = (ll, k);
        }
    }
    Ok(best.1)
}

/// Accuracy of [`bayes_predict`] on `data`, which must be un-normalised.
pub fn bayes_accuracy<T: Real>(spec: &SynthSpec, data: &Dataset<T>) -> Result<f64> {
    if data.stats.is_some() {
        return Err(Error::Input("the oracle needs un-normalised images".into()));
    }
    let mut correct = 0;
    for i in 0..data.len() {
        if bayes_predict(spec, &data.image(i))? == data.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_is_one_hot_for_small_k() {
        let t = default_patterns(4, 4).unwrap();
        for (k, row) in t.iter().enumerate() {
            assert_eq!(row.regions, vec![k]);
        }
        let all = default_patterns(16, 4).unwrap();
        assert!(all[15].regions.is_empty());
        assert!(default_patterns(17, 4).is_err());
    }

    #[test]
    fn duplicate_rows_rejected() {
        let row = PatternRow {
            regions: vec![0],
            intensity: 1.0,
        };
        let spec = SynthSpec::new(&[8, 8], 2).with_patterns(vec![row.clone(), row]);
        assert!(matches!(synth2d::<f64>(&spec), Err(Error::Config { field, .. }) if field == "patterns"));
    }

    #[test]
    fn zero_noise_images_identical_within_class() {
        let spec = SynthSpec::new(&[8, 8], 4).with_noise(0.0).with_samples(5);
        let all = generate::<f64>(&spec, 2).unwrap();
        for k in 0..4 {
            let first = all.images.row(k * 5);
            for s in 1..5 {
                assert_eq!(all.images.row(k * 5 + s), first);
            }
        }
    }

    #[test]
    fn blob_geometry() {
        let spec = SynthSpec::new(&[8, 8], 4).with_noise(0.0).with_samples(1);
        let all = generate::<f64>(&spec, 2).unwrap();
        // Class 1 lights region 1 (top right): rows 1..3, cols 5..7.
        let img = all.images.row(1);
        let lit: Vec<usize> = (0..64).filter(|&p| img[p] == 1.0).collect();
        assert_eq!(lit, vec![13, 14, 21, 22]);
    }

    #[test]
    fn oracle_exact_on_noiseless_jittered_data() {
        let spec = SynthSpec::new(&[8, 8], 4).with_noise(0.0).with_samples(10).with_jitter(1);
        let all = generate::<f64>(&spec, 2).unwrap();
        assert_eq!(bayes_accuracy(&spec, &all).unwrap(), 1.0);
    }

    #[test]
    fn volumetric_octants() {
        let spec = SynthSpec::new(&[8, 8, 8], 2).with_samples(3);
        let (tr, va) = synth3d::<f32>(&spec).unwrap();
        assert_eq!(tr.sample_shape(), &[1, 8, 8, 8]);
        assert_eq!(tr.len() + va.len(), 6);
    }
}
