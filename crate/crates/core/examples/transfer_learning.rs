//! Pretrain locals on their subimages, transplant them into the coherent
//! model, and fine-tune end to end.

use gridnet::data::{normalize, synth2d, SynthSpec};
use gridnet::decomp::make_grid;
use gridnet::models::ArchitectureId;
use gridnet::strategies::{transfer_pipeline, TrainConfig};

fn main() -> gridnet::Result<()> {
    let (train, val) = synth2d::<f32>(&SynthSpec::new(&[32, 32], 4).with_seed(4))?;
    let (train, val, _) = normalize(train, val)?;
    let arch = ArchitectureId::resnet20(2).with_widths(8, 0);
    let grid = make_grid(&[32, 32], &[2, 2])?;

    let mut config = TrainConfig::default().with_epochs(3);
    config.pretrain_epochs = 3;
    let out = transfer_pipeline(&arch, &grid, &train, &val, &config)?;
    for (i, m) in out.local_metrics.iter().enumerate() {
        println!("pretrained local {i}: val {:.3}", m.val_acc);
    }
    println!("after pretraining + transplant: val {:.3}", out.pretrain.val_acc);
    println!("after fine-tuning:              val {:.3}", out.finetune.val_acc);
    Ok(())
}
