use crate::engine::{Network, NetworkBuilder, Real};
use crate::error::{Error, Result};
use crate::models::{check_input, ArchitectureId, Family};

/// Residual conv blocks after the stem.
pub const RESNET_BLOCKS: usize = 20;

/// Width multipliers of the three stages (blocks 1-7, 8-14, 15-20).
pub const RESNET_STAGE_WIDTHS: [usize; 3] = [1, 2, 4];

fn stage_of(block: usize) -> usize {
    match block {
        1..=7 => 0,
        8..=14 => 1,
        _ => 2,
    }
}

/// ResNet20: a stem conv followed by 20 conv blocks in three stages.
///
/// Block `j >= 4` adds the input of block `j - 3` to its own output, with a
/// strided 1×1 projection across stage boundaries. The head is global average
/// pooling, one dense layer and softmax. Every spatial extent must be at least 8.
pub fn build_resnet20<T: Real>(
    input_shape: &[usize],
    classes: usize,
    arch: &ArchitectureId,
    seed: u64,
) -> Result<Network<T>> {
    check_input(arch, input_shape, classes)?;
    if let Some(&e) = input_shape[1..].iter().find(|&&e| e < 8) {
        return Err(Error::Construction(format!(
            "resnet20 needs every spatial extent >= 8 for two downsampling stages, got {e} in {input_shape:?}"
        )));
    }
    resnet20_with_pools(input_shape, classes, arch, 2, seed)
}

/// ResNet20 downsampling only at the first `pools` stage boundaries.
pub fn resnet20_with_pools<T: Real>(
    input_shape: &[usize],
    classes: usize,
    arch: &ArchitectureId,
    pools: usize,
    seed: u64,
) -> Result<Network<T>> {
    check_input(arch, input_shape, classes)?;
    if arch.family != Family::Resnet20 {
        return Err(Error::Construction(format!("{} is not a resnet20 id", arch.family)));
    }
    let window = vec![2; arch.spatial_rank];
    let width = |block: usize| arch.scaled(RESNET_STAGE_WIDTHS[stage_of(block)] * arch.base_width);

    let mut b = NetworkBuilder::new(arch.label(pools), input_shape)
        .conv3_same(width(1))?
        .relu();
    let mut block_inputs = vec![0; RESNET_BLOCKS + 1];
    for j in 1..=RESNET_BLOCKS {
        if (j == 8 && pools >= 1) || (j == 15 && pools >= 2) {
            b = b.maxpool(&window)?;
        }
        block_inputs[j] = b.current_slot();
        b = b.conv3_same(width(j))?.relu();
        if j >= 4 {
            b = b.add_skip(block_inputs[j - 3])?;
        }
    }
    b.global_avg_pool()?.dense(classes)?.softmax().build(classes, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{LayerSpec, Model, Tensor};

    fn small() -> ArchitectureId {
        ArchitectureId::resnet20(2).with_widths(4, 0)
    }

    #[test]
    fn block_layout() {
        let net: Network<f64> = build_resnet20(&[3, 32, 32], 10, &ArchitectureId::resnet20(2), 0).unwrap();
        let convs: Vec<usize> = net
            .layers()
            .iter()
            .filter_map(|l| match &l.spec {
                LayerSpec::Conv(g) => Some(g.out_channels),
                _ => None,
            })
            .collect();
        assert_eq!(convs.len(), 21);
        assert_eq!(&convs[1..8], &[16; 7]);
        assert_eq!(&convs[8..15], &[32; 7]);
        assert_eq!(&convs[15..], &[64; 6]);
        assert_eq!(net.skip_junctions(), 17);
    }

    #[test]
    fn rejects_tiny_input() {
        assert!(build_resnet20::<f64>(&[1, 4, 16], 2, &small(), 0).is_err());
    }

    #[test]
    fn output_is_distribution() {
        let net: Network<f64> = build_resnet20(&[1, 8, 8], 3, &small(), 1).unwrap();
        let x = Tensor::from_fn(&[2, 1, 8, 8], |i| (i as f64 * 0.1).sin());
        let p = net.predict(&x).unwrap();
        for r in 0..2 {
            let s: f64 = p.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
