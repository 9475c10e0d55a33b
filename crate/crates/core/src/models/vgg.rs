use crate::engine::{Network, NetworkBuilder, Real};
use crate::error::{Error, Result};
use crate::models::{check_input, ArchitectureId, Family};

/// Unscaled conv widths per stage: `[c, c | 2c, 2c | 4c, 4c | 8c, 8c, 8c]`.
pub fn vgg9_stage_widths(base: usize) -> [Vec<usize>; 4] {
    [vec![base; 2], vec![2 * base; 2], vec![4 * base; 2], vec![8 * base; 3]]
}

/// VGG9 with the full four pooling stages; every pooled axis must be at least 16.
pub fn build_vgg9<T: Real>(
    input_shape: &[usize],
    classes: usize,
    arch: &ArchitectureId,
    seed: u64,
) -> Result<Network<T>> {
    check_input(arch, input_shape, classes)?;
    if let Some(&e) = input_shape[1..].iter().find(|&&e| e < 16) {
        return Err(Error::Construction(format!(
            "vgg9 needs every spatial extent >= 16 for four pooling stages, got {e} in {input_shape:?}"
        )));
    }
    vgg9_with_pools(input_shape, classes, arch, 4, seed)
}

/// VGG9 with pooling after only the first `pools` stages.
pub fn vgg9_with_pools<T: Real>(
    input_shape: &[usize],
    classes: usize,
    arch: &ArchitectureId,
    pools: usize,
    seed: u64,
) -> Result<Network<T>> {
    check_input(arch, input_shape, classes)?;
    if arch.family != Family::Vgg9 {
        return Err(Error::Construction(format!("{} is not a vgg9 id", arch.family)));
    }
    let rank = arch.spatial_rank;
    let window = vec![2; rank];
    let mut b = NetworkBuilder::new(arch.label(pools), input_shape);
    for (stage, widths) in vgg9_stage_widths(arch.base_width).iter().enumerate() {
        for &width in widths {
            b = b.conv3_same(arch.scaled(width))?.relu();
        }
        if stage < pools {
            b = b.maxpool(&window)?;
        }
    }
    b.flatten()
        .dense(arch.scaled(arch.dense_width))?
        .relu()
        .dense(classes)?
        .softmax()
        .build(classes, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{LayerSpec, Model};

    #[test]
    fn nine_convs_four_pools() {
        let net: Network<f64> = build_vgg9(&[3, 32, 32], 10, &ArchitectureId::vgg9(2), 0).unwrap();
        let convs: Vec<usize> = net
            .layers()
            .iter()
            .filter_map(|l| match &l.spec {
                LayerSpec::Conv(g) => Some(g.out_channels),
                _ => None,
            })
            .collect();
        assert_eq!(convs, [32, 32, 64, 64, 128, 128, 256, 256, 256]);
        let pools = net.layers().iter().filter(|l| l.spec.kind() == "maxpool").count();
        assert_eq!(pools, 4);
        assert_eq!(net.classes(), 10);
    }

    #[test]
    fn too_small_for_four_pools() {
        let r = build_vgg9::<f64>(&[3, 8, 32], 10, &ArchitectureId::vgg9(2), 0);
        assert!(matches!(r, Err(Error::Construction(_))));
    }

    #[test]
    fn conv3d_kernels_for_volumes() {
        let a = ArchitectureId::vgg9(3).with_widths(4, 8);
        let net: Network<f64> = build_vgg9(&[1, 16, 16, 16], 2, &a, 0).unwrap();
        assert_eq!(net.layers()[0].spec.kind(), "conv3d");
        assert_eq!(net.params()[0].value.shape(), &[4, 1, 3, 3, 3]);
    }
}
