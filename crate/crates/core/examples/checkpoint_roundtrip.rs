//! Save a network, read it back, and confirm the weights and digest match.

use gridnet::engine::checkpoint::{digest, save};
use gridnet::engine::{Checkpoint, Model};
use gridnet::models::{build_global, ArchitectureId};

fn main() -> gridnet::Result<()> {
    let arch = ArchitectureId::resnet20(2).with_widths(4, 0);
    let net = build_global::<f32>(&arch, &[3, 32, 32], 10, 7)?;
    let path = std::env::temp_dir().join("gridnet-resnet20.gdn");
    save(&net, &path)?;

    let ckpt = Checkpoint::read(&path)?;
    let mut fresh = build_global::<f32>(&arch, &[3, 32, 32], 10, 99)?;
    ckpt.load_into(&mut fresh)?;
    println!("{} parameters, {} junctions", fresh.param_count(), fresh.skip_junctions());
    println!("digest before {}", digest(&net)?);
    println!("digest after  {}", digest(&fresh)?);
    assert_eq!(net.param_tensors(), fresh.param_tensors());
    Ok(())
}
