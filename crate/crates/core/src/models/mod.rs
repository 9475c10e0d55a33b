//! Network families and the composite decomposed model.

mod aggregator;
mod coherent;
mod local;
mod resnet;
mod vgg;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use aggregator::{aggregator_hidden_width, build_aggregator_dnn, AGGREGATOR_HIDDEN_LAYERS};
pub use coherent::{build_coherent, concat_probabilities, transplant_weights, CoherentNet};
pub use local::{build_local_cnns, local_arch, local_scale};
pub use resnet::{build_resnet20, resnet20_with_pools, RESNET_BLOCKS, RESNET_STAGE_WIDTHS};
pub use vgg::{build_vgg9, vgg9_stage_widths, vgg9_with_pools};

use crate::engine::{Model, Network, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Vgg9,
    Resnet20,
}

impl Family {
    /// Pooling stages of the full-size network.
    pub fn max_pools(self) -> usize {
        match self {
            Family::Vgg9 => 4,
            Family::Resnet20 => 2,
        }
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vgg9" => Ok(Family::Vgg9),
            "resnet20" => Ok(Family::Resnet20),
            other => Err(Error::config("family", format!("unknown architecture `{other}`"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Vgg9 => "vgg9",
            Family::Resnet20 => "resnet20",
        })
    }
}

/// Architecture family plus width parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureId {
    pub family: Family,
    /// 2 for images, 3 for volumes.
    pub spatial_rank: usize,
    /// Channels of the first stage before scaling.
    pub base_width: usize,
    /// Hidden dense width before scaling (VGG only).
    pub dense_width: usize,
    /// Width multiplier in (0, 1].
    pub scale: f64,
}

impl ArchitectureId {
    pub fn vgg9(spatial_rank: usize) -> Self {
        ArchitectureId {
            family: Family::Vgg9,
            spatial_rank,
            base_width: 32,
            dense_width: 128,
            scale: 1.0,
        }
    }

    pub fn resnet20(spatial_rank: usize) -> Self {
        ArchitectureId {
            family: Family::Resnet20,
            spatial_rank,
            base_width: 16,
            dense_width: 0,
            scale: 1.0,
        }
    }

    pub fn with_widths(mut self, base_width: usize, dense_width: usize) -> Self {
        self.base_width = base_width;
        self.dense_width = dense_width;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// `max(1, round(scale · width))`.
    pub fn scaled(&self, width: usize) -> usize {
        ((self.scale * width as f64).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::config("scale", format!("{} is outside (0, 1]", self.scale)));
        }
        if !(2..=3).contains(&self.spatial_rank) {
            return Err(Error::config(
                "spatial_rank",
                format!("{} is not 2 or 3", self.spatial_rank),
            ));
        }
        if self.base_width == 0 {
            return Err(Error::config("base_width", "must be positive"));
        }
        if self.family == Family::Vgg9 && self.dense_width == 0 {
            return Err(Error::config("dense_width", "must be positive for vgg9"));
        }
        Ok(())
    }

    pub(crate) fn label(&self, pools: usize) -> String {
        format!(
            "{}/{}d/c{}/d{}/s{:.6}/p{}",
            self.family, self.spatial_rank, self.base_width, self.dense_width, self.scale, pools
        )
    }
}

/// Number of trainable scalars.
pub fn param_count<T: Real, M: Model<T> + ?Sized>(model: &M) -> usize {
    model.param_count()
}

/// Pools a network of `family` can afford on `extents` without any pooled
/// extent dropping below 2. Errors when a cell cannot hold one kernel.
pub fn adaptive_pools(family: Family, extents: &[usize]) -> Result<usize> {
    if let Some(&e) = extents.iter().find(|&&e| e < 3) {
        return Err(Error::InfeasibleGrid(format!(
            "cell extent {e} in {extents:?} is smaller than a 3-wide kernel"
        )));
    }
    let mut pools = 0;
    while pools < family.max_pools() && extents.iter().all(|&e| e.div_ceil(1 << (pools + 1)) >= 2) {
        pools += 1;
    }
    Ok(pools)
}

/// Builds the full-size network of `arch` on `input_shape` (`[C, spatial...]`).
pub fn build_global<T: Real>(
    arch: &ArchitectureId,
    input_shape: &[usize],
    classes: usize,
    seed: u64,
) -> Result<Network<T>> {
    match arch.family {
        Family::Vgg9 => build_vgg9(input_shape, classes, arch, seed),
        Family::Resnet20 => build_resnet20(input_shape, classes, arch, seed),
    }
}

/// Same as [`build_global`] but with the pooling depth reduced to fit small inputs.
pub fn build_adaptive<T: Real>(
    arch: &ArchitectureId,
    input_shape: &[usize],
    classes: usize,
    seed: u64,
) -> Result<Network<T>> {
    let pools = adaptive_pools(arch.family, &input_shape[1..])?;
    match arch.family {
        Family::Vgg9 => vgg9_with_pools(input_shape, classes, arch, pools, seed),
        Family::Resnet20 => resnet20_with_pools(input_shape, classes, arch, pools, seed),
    }
}

pub(crate) fn check_input(arch: &ArchitectureId, input_shape: &[usize], classes: usize) -> Result<()> {
    arch.validate()?;
    if input_shape.len() != arch.spatial_rank + 1 {
        return Err(Error::Construction(format!(
            "input shape {input_shape:?} is not [channels, {} spatial axes]",
            arch.spatial_rank
        )));
    }
    if input_shape.contains(&0) {
        return Err(Error::Construction(format!("input shape {input_shape:?} has a zero extent")));
    }
    if classes == 0 {
        return Err(Error::Construction("class count must be positive".into()));
    }
    Ok(())
}

/// Splitmix-style seed derivation so that distinct components never share a stream.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_rule() {
        let a = ArchitectureId::vgg9(2).with_scale(0.5);
        assert_eq!(a.scaled(32), 16);
        assert_eq!(a.scaled(1), 1);
        let q = ArchitectureId::vgg9(2).with_scale(0.25);
        assert_eq!((q.scaled(32), q.scaled(128)), (8, 32));
    }

    #[test]
    fn scale_outside_unit_interval_rejected() {
        assert!(ArchitectureId::vgg9(2).with_scale(0.0).validate().is_err());
        assert!(ArchitectureId::vgg9(2).with_scale(1.5).validate().is_err());
    }

    #[test]
    fn adaptive_pool_depth() {
        assert_eq!(adaptive_pools(Family::Vgg9, &[32, 32]).unwrap(), 4);
        assert_eq!(adaptive_pools(Family::Vgg9, &[16, 16]).unwrap(), 3);
        assert_eq!(adaptive_pools(Family::Vgg9, &[8, 8]).unwrap(), 2);
        assert_eq!(adaptive_pools(Family::Vgg9, &[4, 4]).unwrap(), 1);
        assert_eq!(adaptive_pools(Family::Vgg9, &[16, 16, 16]).unwrap(), 3);
        assert_eq!(adaptive_pools(Family::Resnet20, &[16, 16]).unwrap(), 2);
        assert!(adaptive_pools(Family::Vgg9, &[2, 8]).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, 0, 0);
        let b = derive_seed(1, 0, 1);
        let c = derive_seed(1, 1, 0);
        assert!(a != b && a != c && b != c);
        assert_eq!(a, derive_seed(1, 0, 0));
    }
}
