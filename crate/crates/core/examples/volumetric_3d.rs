//! Voxel data: 3D VGG9 locals on a 2x2x1 grid.

use gridnet::data::{normalize, synth3d, SynthSpec};
use gridnet::decomp::make_grid;
use gridnet::models::{build_aggregator_dnn, build_local_cnns, ArchitectureId};
use gridnet::strategies::{evaluate, train_aggregator, train_local_cnns, CnnDnn, TrainConfig};

fn main() -> gridnet::Result<()> {
    let spec = SynthSpec::new(&[16, 16, 8], 2).with_samples(100);
    let (train, val) = synth3d::<f32>(&spec)?;
    let (train, val, _) = normalize(train, val)?;
    println!("{} training volumes of shape {:?}", train.len(), train.sample_shape());

    let arch = ArchitectureId::vgg9(3).with_widths(4, 16);
    let grid = make_grid(&[16, 16, 8], &[2, 2, 1])?;
    println!("cell extents {:?}", grid.cell_extents(0));
    let config = TrainConfig::default().with_epochs(15);

    let trained = train_local_cnns(build_local_cnns(&arch, &grid, 1, 2, 0)?, &grid, &train, &val, &config)?;
    let mut dnn = build_aggregator_dnn(grid.len(), 2, 1)?;
    train_aggregator(&mut dnn, &trained.locals, &grid, &train, &val, &config)?;
    let acc = evaluate(&CnnDnn { locals: &trained.locals, dnn: &dnn, grid: &grid }, &val)?;
    println!("3D cnn-dnn val accuracy {acc:.3}");
    Ok(())
}
