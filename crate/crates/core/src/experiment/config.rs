use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{cifar_root, SynthSpec};
use crate::decomp::{make_grid, GridSpec};
use crate::engine::Precision;
use crate::error::{Error, Result};
use crate::models::{adaptive_pools, local_arch, ArchitectureId, Family};
use crate::strategies::{Strategy, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Cifar10,
    Synth2d,
    Synth3d,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Synth2d => "synth2d",
            DatasetKind::Synth3d => "synth3d",
        }
    }

    pub fn spatial_rank(self) -> usize {
        match self {
            DatasetKind::Synth3d => 3,
            _ => 2,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Per-channel standardisation with training statistics.
    #[serde(default = "yes")]
    pub normalize: bool,
    /// CIFAR-10 batch directory; defaults to the `GRIDNET_DATA` root.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Records taken from each CIFAR-10 file.
    #[serde(default)]
    pub limit: Option<usize>,
    /// Generator settings for the synthetic kinds.
    #[serde(default)]
    pub synth: Option<SynthSpec>,
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Family,
    pub grid: GridSpec,
    /// First-stage channels; 32 for vgg9 and 16 for resnet20 when absent.
    #[serde(default)]
    pub base_width: Option<usize>,
    /// Hidden dense width of vgg9; 128 when absent.
    #[serde(default)]
    pub dense_width: Option<usize>,
    /// Width multiplier of the global network; locals get `scale/√N`.
    #[serde(default = "unit")]
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategiesConfig {
    pub run: Vec<String>,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_precision() -> u8 {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    /// Floating-point width, 32 or 64.
    #[serde(default = "default_precision")]
    pub precision: u8,
    #[serde(default = "yes")]
    pub checkpoints: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_out(),
            precision: default_precision(),
            checkpoints: true,
        }
    }
}

/// A declarative experiment: one dataset, one architecture and grid, several strategies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub strategies: StrategiesConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Name of the field a toml/serde message complains about, if any.
fn field_in_message(msg: &str) -> Option<String> {
    for marker in ["unknown field `", "missing field `", "config field `"] {
        if let Some(start) = msg.find(marker) {
            let rest = &msg[start + marker.len()..];
            return rest.find('`').map(|end| rest[..end].to_string());
        }
    }
    None
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            Error::config(field_in_message(&msg).unwrap_or_else(|| "config".into()), msg)
        })?;
        Ok(config)
    }

    /// Read and parse; unreadable files count as invalid configuration.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn precision(&self) -> Result<Precision> {
        Precision::from_bits(self.output.precision as u32)
            .ok_or_else(|| Error::config("output.precision", format!("{} is not 32 or 64", self.output.precision)))
    }

    pub fn architecture(&self) -> ArchitectureId {
        let rank = self.dataset.kind.spatial_rank();
        let base = match self.model.arch {
            Family::Vgg9 => ArchitectureId::vgg9(rank),
            Family::Resnet20 => ArchitectureId::resnet20(rank),
        };
        base.with_widths(
            self.model.base_width.unwrap_or(base.base_width),
            self.model.dense_width.unwrap_or(base.dense_width),
        )
        .with_scale(self.model.scale)
    }

    /// Requested strategies in canonical order, without repeats.
    pub fn strategy_list(&self) -> Result<Vec<Strategy>> {
        if self.strategies.run.is_empty() {
            return Err(Error::config("strategies.run", "at least one strategy is required"));
        }
        let mut out = self
            .strategies
            .run
            .iter()
            .map(|s| {
                s.parse::<Strategy>()
                    .map_err(|_| Error::config("strategies.run", format!("unknown strategy `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }

    /// Spatial extents implied by the dataset section.
    pub fn extents(&self) -> Result<Vec<usize>> {
        match self.dataset.kind {
            DatasetKind::Cifar10 => Ok(vec![32, 32]),
            _ => Ok(self.synth()?.extents.clone()),
        }
    }

    pub(crate) fn synth(&self) -> Result<&SynthSpec> {
        self.dataset
            .synth
            .as_ref()
            .ok_or_else(|| Error::config("dataset.synth", format!("required for kind {}", self.dataset.kind.name())))
    }

    pub fn cifar_dir(&self) -> PathBuf {
        cifar_root(self.dataset.path.as_deref())
    }

    /// Total check; nothing is trained or written until this passes.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.precision()?;
        let strategies = self.strategy_list()?;
        let rank = self.dataset.kind.spatial_rank();
        match self.dataset.kind {
            DatasetKind::Cifar10 => {
                if self.dataset.synth.is_some() {
                    return Err(Error::config("dataset.synth", "only valid for synthetic kinds"));
                }
                if self.dataset.limit == Some(0) {
                    return Err(Error::config("dataset.limit", "must be positive"));
                }
            }
            _ => {
                if self.dataset.path.is_some() {
                    return Err(Error::config("dataset.path", "only valid for kind cifar10"));
                }
                if self.dataset.limit.is_some() {
                    return Err(Error::config("dataset.limit", "only valid for kind cifar10"));
                }
                self.synth()?
                    .validate(rank)
                    .map_err(|e| match e {
                        Error::Config { field, detail } => Error::config(format!("dataset.synth.{field}"), detail),
                        other => other,
                    })?;
            }
        }

        let arch = self.architecture();
        arch.validate().map_err(|e| match e {
            Error::Config { field, detail } => Error::config(format!("model.{field}"), detail),
            other => other,
        })?;
        let counts = self.model.grid.counts();
        if counts.len() != rank {
            return Err(Error::config(
                "model.grid",
                format!("{} has {} axes but {} data is {rank}-dimensional", self.model.grid, counts.len(), self.dataset.kind.name()),
            ));
        }
        let extents = self.extents()?;
        let grid = make_grid(&extents, counts).map_err(|e| Error::config("model.grid", e.to_string()))?;
        if strategies.iter().any(|s| *s != Strategy::Global) {
            let local = local_arch(&arch, grid.len());
            for i in 0..grid.len() {
                adaptive_pools(local.family, &grid.cell_extents(i))
                    .map_err(|e| Error::config("model.grid", e.to_string()))?;
            }
        }
        if strategies.contains(&Strategy::Global) {
            let need = match arch.family {
                Family::Vgg9 => 16,
                Family::Resnet20 => 8,
            };
            if let Some(e) = extents.iter().find(|&&e| e < need) {
                return Err(Error::config(
                    "dataset.synth.extents",
                    format!("global {} needs extents >= {need}, got {e}", arch.family),
                ));
            }
        }
        Ok(())
    }

    /// Short content hash of everything except the output location.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output.dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serialises");
        hex::encode(&Sha256::digest(&bytes)[..6])
    }
}
