//! Train the locals and aggregator as a single model, end to end.

use gridnet::data::{normalize, synth2d, SynthSpec};
use gridnet::decomp::make_grid;
use gridnet::engine::Model;
use gridnet::models::{build_coherent, ArchitectureId};
use gridnet::strategies::{train_coherent, TrainConfig};

fn main() -> gridnet::Result<()> {
    let (train, val) = synth2d::<f32>(&SynthSpec::new(&[32, 32], 4).with_seed(2))?;
    let (train, val, _) = normalize(train, val)?;
    let arch = ArchitectureId::vgg9(2).with_widths(8, 32);
    let grid = make_grid(&[32, 32], &[2, 2])?;

    let mut model = build_coherent::<f32>(&arch, &grid, 1, 4, 0)?;
    println!("{} parameters in {} tensors", model.param_count(), model.manifest().len());
    let m = train_coherent(&mut model, &train, &val, &TrainConfig::default().with_epochs(5))?;
    println!("loss {:.4?}", m.loss_curve);
    println!("train {:.3}  val {:.3}  ({:.1}s)", m.train_acc, m.val_acc, m.wall_seconds);
    Ok(())
}
