//! Train four local CNNs on the quadrants of a synthetic dataset, then an
//! aggregator DNN on their frozen outputs.

use gridnet::data::{normalize, synth2d, SynthSpec};
use gridnet::decomp::make_grid;
use gridnet::models::{build_aggregator_dnn, build_local_cnns, ArchitectureId};
use gridnet::strategies::{evaluate, predict_cnn_dnn, train_aggregator, train_local_cnns, CnnDnn, TrainConfig};

fn main() -> gridnet::Result<()> {
    let spec = SynthSpec::new(&[32, 32], 4).with_noise(0.1).with_seed(1);
    let (train, val) = synth2d::<f32>(&spec)?;
    let (train, val, _) = normalize(train, val)?;

    let arch = ArchitectureId::vgg9(2).with_widths(8, 32);
    let grid = make_grid(&[32, 32], &[2, 2])?;
    let config = TrainConfig::default().with_epochs(5).with_seed(3);

    let locals = build_local_cnns(&arch, &grid, 1, 4, config.seed)?;
    let trained = train_local_cnns(locals, &grid, &train, &val, &config)?;
    for (i, m) in trained.metrics.iter().enumerate() {
        println!("local {i}: val {:.3} on its own cell", m.val_acc);
    }

    let mut dnn = build_aggregator_dnn(grid.len(), 4, config.seed)?;
    let agg = train_aggregator(&mut dnn, &trained.locals, &grid, &train, &val, &config)?;
    println!("aggregator loss per epoch {:?}", agg.loss_curve);

    let predictor = CnnDnn { locals: &trained.locals, dnn: &dnn, grid: &grid };
    println!("cnn-dnn val accuracy {:.3}", evaluate(&predictor, &val)?);

    let (class, dist) = predict_cnn_dnn(&trained.locals, &dnn, &val.image(0), &grid)?;
    println!("first val image: predicted {class} (label {}), distribution {dist:.3?}", val.labels[0]);
    Ok(())
}
