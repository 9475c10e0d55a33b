//! Self-checks behind `gridnet gradcheck` and `gridnet check`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decomp::{extract_subimages, make_grid, reassemble};
use crate::engine::{cross_entropy_loss, Model, Network, NetworkBuilder, Tensor};
use crate::error::Result;
use crate::models::{build_coherent, build_global, build_local_cnns, ArchitectureId, CoherentNet};
use crate::strategies::{aggregate_average, aggregate_majority, argmax, predict_cnn_dnn, ProbabilityMatrix};

/// Finite-difference step of the fourth-order central stencil.
pub const FD_STEP: f64 = 1e-5;
/// Largest acceptable relative gradient error.
pub const FD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Largest share of probes that may be skipped as straddling a kink.
pub const MAX_KINK_FRACTION: f64 = 0.01;

/// Worst error over probed entries plus how many probes were skipped.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FdReport {
    pub worst: f64,
    pub probes: usize,
    pub kinks: usize,
}

impl FdReport {
    fn merge(&mut self, other: FdReport) {
        self.worst = self.worst.max(other.worst);
        self.probes += other.probes;
        self.kinks += other.kinks;
    }

    fn record(&mut self, analytic: f64, numeric: Option<f64>) {
        self.probes += 1;
        match numeric {
            Some(n) => self.worst = self.worst.max(relative_error(analytic, n)),
            None => self.kinks += 1,
        }
    }

    pub fn passed(&self) -> bool {
        self.worst < FD_TOLERANCE && (self.kinks as f64) <= MAX_KINK_FRACTION * self.probes as f64
    }
}

/// Fourth-order estimate `(8(f(h) − f(−h)) − (f(2h) − f(−2h))) / 12h`, where
/// `f(d)` is the loss after shifting one entry by `d`.
///
/// ReLU and max-pooling make the loss piecewise smooth. A kink inside the
/// stencil makes the central differences at `h` and `2h` disagree; a kink at
/// the probe point itself (exact ties) makes the second differences at `h`
/// and `2h` disagree by a factor of two. Either way `None` is returned.
fn stencil(mut f: impl FnMut(f64) -> Result<f64>) -> Result<Option<f64>> {
    let h = FD_STEP;
    let f0 = f(0.0)?;
    let (p1, m1, p2, m2) = (f(h)?, f(-h)?, f(2.0 * h)?, f(-2.0 * h)?);
    let (c1, c2) = ((p1 - m1) / (2.0 * h), (p2 - m2) / (4.0 * h));
    if (c1 - c2).abs() > 1e-8 + 1e-3 * c1.abs().max(c2.abs()) {
        return Ok(None);
    }
    let (s1, s2) = ((p1 - 2.0 * f0 + m1) / (h * h), (p2 - 2.0 * f0 + m2) / (4.0 * h * h));
    if (s1 - s2).abs() > 1e-4 + 1e-3 * s1.abs().max(s2.abs()) {
        return Ok(None);
    }
    Ok(Some((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)))
}

/// Entries probed in a tensor of `len` values; all of them unless capped.
fn probes(len: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c < len => (0..c).map(|i| i * len / c).collect(),
        _ => (0..len).collect(),
    }
}

/// Compare analytic and finite-difference gradients of the mean
/// cross-entropy over parameters and input entries, probing at most `cap`
/// entries per tensor.
pub fn fd_network(net: &mut Network<f64>, x: &Tensor<f64>, labels: &[usize], cap: Option<usize>) -> Result<FdReport> {
    let tape = net.forward_tape(x)?;
    let (_, dp) = crate::engine::cross_entropy_with_grad(tape.output(), labels)?;
    let mut grads = net.zero_grads();
    let dx = net.backward(&tape, &dp, &mut grads, true)?.expect("input gradient requested");

    let mut report = fd_params(net, labels, x, &grads, cap)?;
    let mut probe = x.clone();
    for j in probes(x.len(), cap) {
        let orig = probe.data()[j];
        let numeric = stencil(|d| {
            probe.data_mut()[j] = orig + d;
            let l = cross_entropy_loss(&net.forward(&probe)?, labels);
            probe.data_mut()[j] = orig;
            l
        })?;
        report.record(dx.data()[j], numeric);
    }
    Ok(report)
}

fn fd_params<M: Model<f64>>(
    model: &mut M,
    labels: &[usize],
    x: &Tensor<f64>,
    grads: &[Tensor<f64>],
    cap: Option<usize>,
) -> Result<FdReport> {
    let mut report = FdReport::default();
    for (t, g) in grads.iter().enumerate() {
        for j in probes(g.len(), cap) {
            let orig = model.param_tensors()[t].data()[j];
            let numeric = stencil(|d| {
                model.param_tensors_mut()[t].data_mut()[j] = orig + d;
                let l = cross_entropy_loss(&model.predict(x)?, labels);
                model.param_tensors_mut()[t].data_mut()[j] = orig;
                l
            })?;
            report.record(g.data()[j], numeric);
        }
    }
    Ok(report)
}

/// [`fd_network`] for any model, parameters only.
pub fn fd_model<M: Model<f64>>(
    model: &mut M,
    x: &Tensor<f64>,
    labels: &[usize],
    cap: Option<usize>,
) -> Result<FdReport> {
    let (_, grads) = model.loss_and_grads(x, labels)?;
    fd_params(model, labels, x, &grads, cap)
}

type Case = (&'static str, fn(u64) -> Result<Network<f64>>, Option<usize>);

fn head(b: NetworkBuilder, seed: u64) -> Result<Network<f64>> {
    b.flatten().dense(3)?.softmax().build(3, seed)
}

/// One tiny network per layer type, each ending in dense + softmax.
pub fn layer_cases() -> Vec<Case> {
    vec![
        ("conv2d", |s| head(NetworkBuilder::new("t", &[2, 5, 5]).conv(3, &[3, 3], &[1, 1], &[1, 1])?, s), None),
        (
            "conv2d-strided",
            |s| head(NetworkBuilder::new("t", &[2, 6, 5]).conv(2, &[3, 2], &[2, 1], &[1, 0])?, s),
            None,
        ),
        (
            "conv3d",
            |s| head(NetworkBuilder::new("t", &[2, 4, 3, 3]).conv(2, &[3, 3, 3], &[1, 1, 1], &[1, 1, 1])?, s),
            None,
        ),
        ("maxpool2d", |s| head(NetworkBuilder::new("t", &[2, 5, 5]).maxpool(&[2, 2])?, s), None),
        ("maxpool3d", |s| head(NetworkBuilder::new("t", &[1, 4, 3, 4]).maxpool(&[2, 2, 2])?, s), None),
        ("dense-relu", |s| head(NetworkBuilder::new("t", &[6]).dense(5)?.relu(), s), None),
        (
            "softmax-cross-entropy",
            |s| NetworkBuilder::new("t", &[4]).dense(3)?.softmax().build(3, s),
            None,
        ),
        (
            "global-avg-pool",
            |s| {
                NetworkBuilder::new("t", &[2, 4, 4])
                    .conv3_same(3)?
                    .relu()
                    .global_avg_pool()?
                    .dense(3)?
                    .softmax()
                    .build(3, s)
            },
            None,
        ),
        (
            "skip-identity",
            |s| head(NetworkBuilder::new("t", &[2, 4, 4]).conv3_same(2)?.relu().add_skip(0)?, s),
            None,
        ),
        (
            "skip-projection",
            |s| {
                let b = NetworkBuilder::new("t", &[2, 5, 5]).conv3_same(3)?.relu();
                let src = b.current_slot();
                head(b.maxpool(&[2, 2])?.conv3_same(4)?.relu().add_skip(src)?, s)
            },
            None,
        ),
        (
            "vgg9-local",
            |s| crate::models::build_adaptive(&ArchitectureId::vgg9(2).with_widths(2, 4), &[1, 8, 8], 3, s),
            Some(12),
        ),
        (
            "resnet20",
            resnet_case,
            Some(6),
        ),
    ]
}

/// Deep unnormalised residual stacks saturate the softmax at init, so the head
/// is shrunk to keep the loss away from the log clamp.
fn resnet_case(seed: u64) -> Result<Network<f64>> {
    let mut net = build_global(&ArchitectureId::resnet20(2).with_widths(2, 0), &[1, 8, 8], 3, seed)?;
    if let Some(head) = net.params_mut().iter_mut().rev().find(|p| p.name.ends_with("weight")) {
        head.value.data_mut().iter_mut().for_each(|w| *w *= 1e-3);
    }
    Ok(net)
}

fn fd_result(name: String, r: FdReport, seeds: u64) -> CheckResult {
    CheckResult::new(
        name,
        r.passed(),
        format!(
            "max relative error {:.3e} over {seeds} seeds; {} of {} probes skipped at kinks",
            r.worst, r.kinks, r.probes
        ),
    )
}

/// Tiny end-to-end model: 8×8 input, 2×2 grid, 3 classes.
pub fn tiny_coherent(seed: u64) -> Result<CoherentNet<f64>> {
    let grid = make_grid(&[8, 8], &[2, 2])?;
    build_coherent(&ArchitectureId::vgg9(2).with_widths(4, 8), &grid, 1, 3, seed)
}

/// Central-difference checks of every layer type and the tiny coherent model
/// over `seeds` seeds, in f64.
pub fn gradient_checks(seeds: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (name, build, cap) in layer_cases() {
        let mut report = FdReport::default();
        for seed in 0..seeds {
            let mut net = build(seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
            let mut shape = vec![2];
            shape.extend_from_slice(net.input_shape());
            let x = random_tensor(&mut rng, shape);
            let labels = [rng.random_range(0..3), rng.random_range(0..3)];
            report.merge(fd_network(&mut net, &x, &labels, cap)?);
        }
        out.push(fd_result(format!("gradient {name}"), report, seeds));
    }
    let mut report = FdReport::default();
    for seed in 0..seeds {
        let mut model = tiny_coherent(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0);
        let x = random_tensor(&mut rng, vec![2, 1, 8, 8]);
        let labels = [rng.random_range(0..3), rng.random_range(0..3)];
        report.merge(fd_model(&mut model, &x, &labels, Some(24))?);
    }
    out.push(fd_result("gradient coherent 8x8 2x2 K=3".into(), report, seeds));
    Ok(out)
}

fn brute_average(rows: &[Vec<f64>]) -> usize {
    let k = rows[0].len();
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for c in 0..k {
        let mut s = 0.0;
        for r in rows {
            s += r[c];
        }
        let v = s / rows.len() as f64;
        if v > best_val {
            best_val = v;
            best = c;
        }
    }
    best
}

fn brute_majority(rows: &[Vec<f64>]) -> usize {
    let k = rows[0].len();
    let votes: Vec<usize> = rows.iter().map(|r| argmax(r)).collect();
    let count = |c: usize| votes.iter().filter(|&&v| v == c).count();
    let top = (0..k).map(count).max().unwrap_or(0);
    let strength = |c: usize| {
        rows.iter()
            .zip(&votes)
            .filter(|(_, &v)| v == c)
            .map(|(r, _)| r[c])
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let tied: Vec<usize> = (0..k).filter(|&c| count(c) == top).collect();
    let best = tied.iter().map(|&c| strength(c)).fold(f64::NEG_INFINITY, f64::max);
    *tied.iter().find(|&&c| strength(c) == best).expect("nonempty")
}

/// Decomposition round trips, aggregation oracles, structural equivalence and
/// the parameter audit at small sizes.
pub fn invariant_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut failures = 0;
    let cases = 200;
    for _ in 0..cases {
        let rank = rng.random_range(2..=3);
        let extents: Vec<usize> = (0..rank).map(|_| rng.random_range(1..=12)).collect();
        let counts: Vec<usize> = extents.iter().map(|&e| rng.random_range(1..=e.min(4))).collect();
        let grid = make_grid(&extents, &counts)?;
        let mut shape = vec![rng.random_range(1..=3)];
        shape.extend_from_slice(&extents);
        let img = random_tensor(&mut rng, shape);
        if reassemble(&extract_subimages(&img, &grid)?, &grid)? != img {
            failures += 1;
        }
    }
    out.push(CheckResult::new(
        "decomposition round trip",
        failures == 0,
        format!("{failures} of {cases} cases differ"),
    ));

    let mut failures = 0;
    let cases = 10_000;
    for i in 0..cases {
        let n = rng.random_range(1..=6);
        let k = rng.random_range(2..=5);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                // Coarse values make vote and probability ties common.
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(1..=4) as f64).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let pm = ProbabilityMatrix::new(n, k, rows.concat())?;
        if aggregate_average(&pm)?.0 != brute_average(&rows) || aggregate_majority(&pm)? != brute_majority(&rows) {
            failures += 1;
            if failures == 1 {
                out.push(CheckResult::new("aggregation first mismatch", false, format!("case {i}: {rows:?}")));
            }
        }
    }
    out.push(CheckResult::new(
        "aggregation oracles",
        failures == 0,
        format!("{failures} of {cases} matrices disagree"),
    ));

    let grid = make_grid(&[16, 16], &[2, 2])?;
    let arch = ArchitectureId::vgg9(2).with_widths(4, 8);
    let coherent: CoherentNet<f64> = build_coherent(&arch, &grid, 1, 3, seed)?;
    let mut locals: Vec<Network<f64>> = build_local_cnns(&arch, &grid, 1, 3, seed + 1)?;
    let mut dnn = crate::models::build_aggregator_dnn::<f64>(4, 3, seed + 2)?;
    for (l, src) in locals.iter_mut().zip(&coherent.locals) {
        l.copy_params_from(src)?;
    }
    dnn.copy_params_from(&coherent.aggregator)?;
    let x = random_tensor(&mut rng, vec![10, 1, 16, 16]);
    let batch = coherent.predict(&x)?;
    let mut equal = true;
    for i in 0..10 {
        let img = Tensor::new(vec![1, 16, 16], x.row(i).to_vec())?;
        let (_, p) = predict_cnn_dnn(&locals, &dnn, &img, &grid)?;
        equal &= p.as_slice() == batch.row(i);
    }
    out.push(CheckResult::new(
        "cnn-dnn equals coherent after copy",
        equal,
        "10 random 16x16 inputs, 2x2 grid",
    ));

    let mut ratios = Vec::new();
    for arch in [ArchitectureId::vgg9(2), ArchitectureId::resnet20(2)] {
        let global: Network<f32> = build_global(&arch, &[3, 32, 32], 10, 0)?;
        for counts in [[2, 2], [4, 4]] {
            let grid = make_grid(&[32, 32], &counts)?;
            let locals: Vec<Network<f32>> = build_local_cnns(&arch, &grid, 3, 10, 0)?;
            let total: usize = locals.iter().map(|l| l.param_count()).sum();
            ratios.push(total as f64 / global.param_count() as f64);
        }
    }
    out.push(CheckResult::new(
        "parameter audit",
        ratios.iter().all(|r| (0.5..=2.0).contains(r)),
        format!("local/global ratios {ratios:.3?}"),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_majority_tie_rule() {
        let rows = vec![vec![0.6, 0.4], vec![0.9, 0.1], vec![0.3, 0.7], vec![0.35, 0.65]];
        assert_eq!(brute_majority(&rows), 0);
    }

    #[test]
    fn every_layer_passes_one_seed() {
        for r in gradient_checks(3).unwrap() {
            println!("{}: {}", r.name, r.detail);
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
