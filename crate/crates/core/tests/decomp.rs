use gridnet::decomp::{extract_subimages, make_grid, reassemble, GridDecomposition, GridSpec};
use gridnet::engine::Tensor;
use gridnet::Error;
use proptest::prelude::*;

/// Counts how often each pixel is covered by some cell.
fn coverage(grid: &GridDecomposition) -> Vec<usize> {
    let ext = grid.extents();
    let total: usize = ext.iter().product();
    let mut hits = vec![0; total];
    for i in 0..grid.len() {
        let ranges = grid.cell(i);
        let mut idx = vec![0; ext.len()];
        'outer: loop {
            let flat = idx
                .iter()
                .zip(&ranges)
                .zip(ext)
                .fold(0, |acc, ((&o, &(start, _)), &e)| acc * e + start + o);
            hits[flat] += 1;
            for a in (0..ext.len()).rev() {
                idx[a] += 1;
                if idx[a] < ranges[a].1 {
                    continue 'outer;
                }
                idx[a] = 0;
            }
            break;
        }
    }
    hits
}

#[test]
fn grid_shapes_from_the_reference_experiments() {
    let cases: [(&[usize], &[usize], usize, &[usize]); 3] = [
        (&[32, 32], &[2, 2], 4, &[16, 16]),
        (&[128, 128, 64], &[4, 4, 2], 32, &[32, 32, 32]),
        (&[180, 180], &[4, 4], 16, &[45, 45]),
    ];
    for (extents, counts, n, cell) in cases {
        let grid = make_grid(extents, counts).unwrap();
        assert_eq!(grid.len(), n);
        assert_eq!(grid.overlap(), 0);
        for i in 0..n {
            assert_eq!(grid.cell_extents(i), cell);
        }
        assert!(coverage(&grid).iter().all(|&h| h == 1));
    }
}

#[test]
fn volumetric_grid_keeps_depth_whole() {
    let grid = make_grid(&[32, 32, 16], &[2, 2, 1]).unwrap();
    assert_eq!(grid.len(), 4);
    assert_eq!(grid.cell_extents(3), [16, 16, 16]);
}

#[test]
fn grid_strings() {
    let g: GridSpec = "4x4x2".parse().unwrap();
    assert_eq!(g.counts(), [4, 4, 2]);
    assert_eq!(g.cells(), 32);
    assert_eq!(g.to_string(), "4x4x2");
    assert!("4x0".parse::<GridSpec>().is_err());
    assert!("banana".parse::<GridSpec>().is_err());
}

#[test]
fn constant_image_gives_constant_cells() {
    let grid = make_grid(&[9, 7], &[3, 2]).unwrap();
    let img = Tensor::full(vec![2, 9, 7], 0.25f32);
    for cell in extract_subimages(&img, &grid).unwrap() {
        assert!(cell.data().iter().all(|&v| v == 0.25));
    }
}

#[test]
fn ordering_is_row_major_and_stable() {
    let grid = make_grid(&[4, 6], &[2, 3]).unwrap();
    let img = Tensor::<f64>::from_fn(vec![1, 4, 6], |i| i as f64);
    let a = extract_subimages(&img, &grid).unwrap();
    let b = extract_subimages(&img, &grid).unwrap();
    assert_eq!(a, b);
    let firsts: Vec<f64> = a.iter().map(|c| c.data()[0]).collect();
    assert_eq!(firsts, [0.0, 2.0, 4.0, 12.0, 14.0, 16.0]);
}

#[test]
fn mismatched_image_or_parts_rejected() {
    let grid = make_grid(&[8, 8], &[2, 2]).unwrap();
    let img = Tensor::<f32>::zeros(vec![1, 8, 6]);
    assert!(matches!(extract_subimages(&img, &grid), Err(Error::Dimension { .. })));
    let ok = Tensor::<f32>::zeros(vec![1, 8, 8]);
    let mut parts = extract_subimages(&ok, &grid).unwrap();
    parts.pop();
    assert!(reassemble(&parts, &grid).is_err());
    assert!(matches!(make_grid(&[3, 8], &[4, 2]), Err(Error::InfeasibleGrid(_))));
}

fn case() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, usize, u64)> {
    (2usize..=3)
        .prop_flat_map(|rank| (prop::collection::vec(1usize..=24, rank), Just(rank)))
        .prop_flat_map(|(extents, _)| {
            let counts: Vec<_> = extents.iter().map(|&e| 1..=e.min(6)).collect();
            (Just(extents), counts, 1usize..=3, any::<u64>())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn round_trip_is_bit_exact((extents, counts, channels, seed) in case()) {
        let grid = make_grid(&extents, &counts).unwrap();
        prop_assert!(coverage(&grid).iter().all(|&h| h == 1));
        for axis in 0..extents.len() {
            let sum: usize = grid.axis_cells(axis).iter().map(|c| c.1).sum();
            prop_assert_eq!(sum, extents[axis]);
        }
        let mut shape = vec![channels];
        shape.extend_from_slice(&extents);
        let mut state = seed;
        let img = Tensor::<f32>::from_fn(shape, |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            f32::from_bits((state >> 33) as u32 & 0x3fff_ffff)
        });
        let parts = extract_subimages(&img, &grid).unwrap();
        prop_assert_eq!(parts.len(), grid.len());
        prop_assert_eq!(reassemble(&parts, &grid).unwrap(), img);
    }
}
