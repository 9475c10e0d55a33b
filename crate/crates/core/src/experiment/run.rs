use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::data::{bayes_accuracy, load_cifar10, normalize, synth2d, synth3d, Dataset};
use crate::decomp::{make_grid, GridDecomposition};
use crate::engine::checkpoint::save;
use crate::engine::{Model, Network, Precision, Real};
use crate::error::{Error, Result};
use crate::experiment::{DatasetKind, ExperimentConfig};
use crate::models::{build_aggregator_dnn, build_coherent, build_local_cnns, derive_seed, ArchitectureId};
use crate::strategies::{
    evaluate, train_aggregator, train_coherent, train_global, train_local_cnns, transfer_pipeline,
    AverageProbability, LocalTraining, MajorityVote, Metrics, Strategy,
};

pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// One strategy's deterministic outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub arch: String,
    pub grid: String,
    pub strategy: String,
    pub val_acc: f64,
    pub train_acc: f64,
    pub seed: u64,
    pub loss_curve: Vec<f64>,
    pub samples_seen: usize,
}

/// Sub-phase of a multi-phase strategy (local pretraining, aggregator, fine-tuning).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub strategy: String,
    pub phase: String,
    pub train_acc: f64,
    pub val_acc: f64,
    pub loss_curve: Vec<f64>,
}

/// Everything a rerun with the same config and seed reproduces bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub seed: u64,
    pub precision: u32,
    /// `"ok"` or `"failed"`.
    pub status: String,
    pub failure: Option<String>,
    /// Likelihood oracle on the raw validation split (synthetic data only).
    pub bayes_val_acc: Option<f64>,
    pub rows: Vec<ResultRow>,
    pub phases: Vec<PhaseRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub strategy: String,
    pub phase: String,
    pub wall_s: f64,
}

/// Run provenance, including everything that varies between reruns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub precision: u32,
    pub workers: usize,
    pub deterministic: bool,
    pub started_unix: u64,
    pub total_wall_s: f64,
    /// Wall-clock per strategy, including shared phases it depends on.
    pub strategy_wall_s: BTreeMap<String, f64>,
    pub timings: Vec<Timing>,
    pub version: String,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub report: Report,
    pub manifest: Manifest,
}

/// Label of an architecture in report tables.
pub fn arch_label(arch: &ArchitectureId) -> String {
    let mut s = format!("{}-c{}", arch.family, arch.base_width);
    if arch.family == crate::models::Family::Vgg9 {
        s += &format!("-d{}", arch.dense_width);
    }
    if arch.scale != 1.0 {
        s += &format!("-s{}", arch.scale);
    }
    s
}

/// First unused directory among `<out>/<hash>-s<seed>`, `...-r2`, `...-r3`, ...
fn fresh_run_dir(out: &Path, hash: &str, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let base = format!("{hash}-s{seed}");
    for n in 1.. {
        let name = if n == 1 { base.clone() } else { format!("{base}-r{n}") };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!()
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Recorder {
    dataset: String,
    arch: String,
    grid: String,
    seed: u64,
    bayes: Option<f64>,
    rows: Vec<ResultRow>,
    phases: Vec<PhaseRecord>,
    timings: Vec<Timing>,
    strategy_wall: BTreeMap<String, f64>,
}

impl Recorder {
    fn row(&mut self, strategy: Strategy, m: &Metrics, wall: f64) {
        self.rows.push(ResultRow {
            dataset: self.dataset.clone(),
            arch: self.arch.clone(),
            grid: self.grid.clone(),
            strategy: strategy.name().into(),
            val_acc: m.val_acc,
            train_acc: m.train_acc,
            seed: self.seed,
            loss_curve: m.loss_curve.clone(),
            samples_seen: m.samples_seen,
        });
        self.strategy_wall.insert(strategy.name().into(), wall);
    }

    fn phase(&mut self, strategy: Strategy, phase: &str, m: &Metrics) {
        self.phases.push(PhaseRecord {
            strategy: strategy.name().into(),
            phase: phase.into(),
            train_acc: m.train_acc,
            val_acc: m.val_acc,
            loss_curve: m.loss_curve.clone(),
        });
        self.timings.push(Timing {
            strategy: strategy.name().into(),
            phase: phase.into(),
            wall_s: m.wall_seconds,
        });
    }
}

fn load_data<T: Real>(config: &ExperimentConfig) -> Result<(Dataset<T>, Dataset<T>, Option<f64>)> {
    let (train, val, bayes) = match config.dataset.kind {
        DatasetKind::Cifar10 => {
            let (tr, va) = load_cifar10(&config.cifar_dir(), config.dataset.limit)?;
            (tr, va, None)
        }
        kind => {
            let spec = config.synth()?;
            let (tr, va) = if kind == DatasetKind::Synth3d {
                synth3d(spec)?
            } else {
                synth2d(spec)?
            };
            let oracle = bayes_accuracy(spec, &va)?;
            (tr, va, Some(oracle))
        }
    };
    if config.dataset.normalize {
        let (tr, va, _) = normalize(train, val)?;
        Ok((tr, va, bayes))
    } else {
        Ok((train, val, bayes))
    }
}

struct Ctx<'a, T> {
    config: &'a ExperimentConfig,
    arch: ArchitectureId,
    grid: GridDecomposition,
    train: Dataset<T>,
    val: Dataset<T>,
    checkpoints: Option<PathBuf>,
}

impl<T: Real> Ctx<'_, T> {
    fn save<M: Model<T> + ?Sized>(&self, strategy: Strategy, name: &str, model: &M) -> Result<()> {
        if let Some(root) = &self.checkpoints {
            let dir = root.join(strategy.name());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            save(model, dir.join(format!("{name}.gdn")))?;
        }
        Ok(())
    }

    fn save_locals(&self, strategy: Strategy, locals: &[Network<T>]) -> Result<()> {
        for (i, l) in locals.iter().enumerate() {
            self.save(strategy, &format!("local{i}"), l)?;
        }
        Ok(())
    }

    fn locals(&self) -> Result<LocalTraining<T>> {
        let cfg = &self.config.train;
        let locals = build_local_cnns(&self.arch, &self.grid, self.train.channels(), self.train.classes, cfg.seed)?;
        train_local_cnns(locals, &self.grid, &self.train, &self.val, cfg)
    }
}

fn execute<T: Real>(ctx: &Ctx<'_, T>, strategies: &[Strategy], rec: &mut Recorder) -> Result<()> {
    let cfg = &ctx.config.train;
    let mut shared: Option<LocalTraining<T>> = None;
    for &s in strategies {
        match s {
            Strategy::Global => {
                let (net, m) = train_global(&ctx.arch, &ctx.train, &ctx.val, cfg)?;
                ctx.save(s, "global", &net)?;
                rec.phase(s, "train", &m);
                rec.row(s, &m, m.wall_seconds);
            }
            Strategy::CnnDnn | Strategy::AvgProb | Strategy::MajVot => {
                if shared.is_none() {
                    let lt = ctx.locals()?;
                    ctx.save_locals(s, &lt.locals)?;
                    shared = Some(lt);
                }
                let lt = shared.as_ref().expect("trained above");
                let local_summary = lt.summary();
                rec.phase(s, "locals", &local_summary);
                let base = Metrics {
                    loss_curve: local_summary.loss_curve.clone(),
                    samples_seen: local_summary.samples_seen,
                    ..Metrics::default()
                };
                match s {
                    Strategy::CnnDnn => {
                        let k = ctx.train.classes;
                        let mut dnn = build_aggregator_dnn(ctx.grid.len(), k, derive_seed(cfg.seed, 2, 0))?;
                        let m = train_aggregator(&mut dnn, &lt.locals, &ctx.grid, &ctx.train, &ctx.val, cfg)?;
                        ctx.save(s, "dnn", &dnn)?;
                        rec.phase(s, "aggregator", &m);
                        let wall = lt.wall_seconds + m.wall_seconds;
                        rec.row(s, &m, wall);
                    }
                    Strategy::AvgProb => {
                        let start = Instant::now();
                        let p = AverageProbability { locals: &lt.locals, grid: &ctx.grid };
                        let m = Metrics {
                            train_acc: evaluate(&p, &ctx.train)?,
                            val_acc: evaluate(&p, &ctx.val)?,
                            ..base
                        };
                        rec.row(s, &m, lt.wall_seconds + start.elapsed().as_secs_f64());
                    }
                    _ => {
                        let start = Instant::now();
                        let p = MajorityVote { locals: &lt.locals, grid: &ctx.grid };
                        let m = Metrics {
                            train_acc: evaluate(&p, &ctx.train)?,
                            val_acc: evaluate(&p, &ctx.val)?,
                            ..base
                        };
                        rec.row(s, &m, lt.wall_seconds + start.elapsed().as_secs_f64());
                    }
                }
            }
            Strategy::Coherent => {
                let mut model = build_coherent(&ctx.arch, &ctx.grid, ctx.train.channels(), ctx.train.classes, cfg.seed)?;
                let m = train_coherent(&mut model, &ctx.train, &ctx.val, cfg)?;
                ctx.save(s, "coherent", &model)?;
                rec.phase(s, "train", &m);
                rec.row(s, &m, m.wall_seconds);
            }
            Strategy::Transfer => {
                let out = transfer_pipeline(&ctx.arch, &ctx.grid, &ctx.train, &ctx.val, cfg)?;
                ctx.save(s, "coherent", &out.model)?;
                rec.phase(s, "pretrain", &out.pretrain);
                rec.phase(s, "finetune", &out.finetune);
                let mut m = out.finetune.clone();
                m.samples_seen += out.pretrain.samples_seen;
                rec.row(s, &m, out.pretrain.wall_seconds + out.finetune.wall_seconds);
            }
        }
    }
    Ok(())
}

fn run_typed<T: Real>(config: &ExperimentConfig) -> Result<RunOutcome> {
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let strategies = config.strategy_list()?;
    let arch = config.architecture();
    let hash = config.hash();
    let seed = config.train.seed;
    let dir = fresh_run_dir(&config.output.dir, &hash, seed)?;
    fs::write(dir.join("config.toml"), config.to_toml_string()).map_err(|e| Error::io(&dir, e))?;

    let mut rec = Recorder {
        dataset: config.dataset.kind.name().into(),
        arch: arch_label(&arch),
        grid: config.model.grid.to_string(),
        seed,
        bayes: None,
        rows: vec![],
        phases: vec![],
        timings: vec![],
        strategy_wall: BTreeMap::new(),
    };
    let result = load_data::<T>(config).and_then(|(train, val, bayes)| {
        rec.bayes = bayes;
        let ctx = Ctx {
            config,
            arch,
            grid: make_grid(train.spatial_extents(), config.model.grid.counts())?,
            train,
            val,
            checkpoints: config.output.checkpoints.then(|| dir.join("checkpoints")),
        };
        execute(&ctx, &strategies, &mut rec)
    });

    let report = Report {
        config_hash: hash.clone(),
        seed,
        precision: T::PRECISION.bits(),
        status: if result.is_ok() { "ok" } else { "failed" }.into(),
        failure: result.as_ref().err().map(|e| e.to_string()),
        bayes_val_acc: rec.bayes,
        rows: rec.rows,
        phases: rec.phases,
    };
    let manifest = Manifest {
        config_hash: hash,
        seed,
        precision: T::PRECISION.bits(),
        workers: config.train.workers,
        deterministic: config.train.deterministic,
        started_unix,
        total_wall_s: started.elapsed().as_secs_f64(),
        strategy_wall_s: rec.strategy_wall,
        timings: rec.timings,
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
    };
    write_json(&dir.join(REPORT_FILE), &report)?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    result?;
    Ok(RunOutcome { dir, report, manifest })
}

/// Validate, train every requested strategy, and write `report.json`,
/// `manifest.json`, `config.toml` and checkpoints into a fresh run directory.
///
/// Invalid configs fail before anything is written. A failure during training
/// still flushes the rows finished so far, marked `"failed"`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    match config.precision()? {
        Precision::F32 => run_typed::<f32>(config),
        Precision::F64 => run_typed::<f64>(config),
    }
}
