use crate::decomp::GridDecomposition;
use crate::engine::{Network, Real};
use crate::error::Result;
use crate::models::{build_adaptive, derive_seed, ArchitectureId};

/// Width multiplier for each of `n` local networks: `1/√n`.
pub fn local_scale(n: usize) -> f64 {
    1.0 / (n as f64).sqrt()
}

/// Architecture of one local network when `global` is split into `n` cells.
pub fn local_arch(global: &ArchitectureId, n: usize) -> ArchitectureId {
    global.with_scale(global.scale * local_scale(n))
}

/// One network per grid cell, shaped to the cell and scaled by `1/√N`.
/// Local `i` is initialised from a seed derived from `seed` and `i`.
pub fn build_local_cnns<T: Real>(
    global: &ArchitectureId,
    grid: &GridDecomposition,
    channels: usize,
    classes: usize,
    seed: u64,
) -> Result<Vec<Network<T>>> {
    let arch = local_arch(global, grid.len());
    (0..grid.len())
        .map(|i| {
            let mut shape = vec![channels];
            shape.extend(grid.cell_extents(i));
            build_adaptive(&arch, &shape, classes, derive_seed(seed, 1, i as u64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::make_grid;
    use crate::engine::Model;
    use crate::models::build_global;

    #[test]
    fn parameter_budget_roughly_preserved() {
        let arch = ArchitectureId::vgg9(2);
        let global: Network<f32> = build_global(&arch, &[3, 32, 32], 10, 0).unwrap();
        let g = global.param_count() as f64;
        for counts in [[2, 2], [4, 4]] {
            let grid = make_grid(&[32, 32], &counts).unwrap();
            let locals: Vec<Network<f32>> = build_local_cnns(&arch, &grid, 3, 10, 0).unwrap();
            let total: usize = locals.iter().map(|n| n.param_count()).sum();
            let ratio = total as f64 / g;
            assert!((0.5..=2.0).contains(&ratio), "{counts:?}: ratio {ratio}");
        }
    }

    #[test]
    fn cells_get_their_own_shape() {
        let arch = ArchitectureId::vgg9(2).with_widths(4, 8);
        let grid = make_grid(&[10, 9], &[2, 2]).unwrap();
        let locals: Vec<Network<f64>> = build_local_cnns(&arch, &grid, 1, 3, 0).unwrap();
        assert_eq!(locals[0].input_shape(), &[1, 5, 5]);
        assert_eq!(locals[3].input_shape(), &[1, 5, 4]);
        assert_ne!(locals[0].params()[0].value, locals[1].params()[0].value);
    }
}
