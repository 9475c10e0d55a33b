//! Cut an image into a 2x2 grid of subimages and put it back together.

use gridnet::decomp::{extract_subimages, make_grid, reassemble};
use gridnet::engine::Tensor;

fn main() -> gridnet::Result<()> {
    let image = Tensor::<f32>::from_fn(vec![3, 32, 32], |i| (i % 251) as f32 / 251.0);
    for counts in [[2, 2], [4, 4], [3, 5]] {
        let grid = make_grid(&[32, 32], &counts)?;
        let parts = extract_subimages(&image, &grid)?;
        let shapes: Vec<_> = parts.iter().map(|p| p.shape().to_vec()).collect();
        println!("{}x{} grid: {} cells, shapes {:?}", counts[0], counts[1], grid.len(), shapes);
        assert_eq!(reassemble(&parts, &grid)?, image);
    }

    // Uneven extents get the remainder on the leading cells.
    let grid = make_grid(&[180, 180, 64], &[4, 4, 2])?;
    println!("180x180x64 on 4x4x2: first cell {:?}, last cell {:?}", grid.cell_extents(0), grid.cell_extents(grid.len() - 1));
    Ok(())
}
