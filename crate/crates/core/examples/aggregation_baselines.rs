//! The communication-free combination rules on a hand-made probability matrix,
//! then on trained locals.

use gridnet::data::{normalize, synth2d, SynthSpec};
use gridnet::decomp::make_grid;
use gridnet::models::{build_local_cnns, ArchitectureId};
use gridnet::strategies::{
    aggregate_average, aggregate_majority, evaluate, train_local_cnns, AverageProbability, MajorityVote,
    ProbabilityMatrix, TrainConfig,
};

fn main() -> gridnet::Result<()> {
    // Classes 0 and 2 each get two votes; class 2 holds the single highest probability.
    let pm = ProbabilityMatrix::new(
        4,
        3,
        vec![0.5, 0.3, 0.2, 0.6, 0.1, 0.3, 0.1, 0.1, 0.8, 0.2, 0.2, 0.6],
    )?;
    let (avg, mean) = aggregate_average(&pm)?;
    println!("average probability -> class {avg}, mean {mean:.3?}");
    println!("majority vote       -> class {}", aggregate_majority(&pm)?);

    let (train, val) = synth2d::<f32>(&SynthSpec::new(&[32, 32], 4).with_seed(5))?;
    let (train, val, _) = normalize(train, val)?;
    let arch = ArchitectureId::vgg9(2).with_widths(8, 32);
    let grid = make_grid(&[32, 32], &[2, 2])?;
    let config = TrainConfig::default().with_epochs(3);
    let trained = train_local_cnns(build_local_cnns(&arch, &grid, 1, 4, 0)?, &grid, &train, &val, &config)?;

    let avg = AverageProbability { locals: &trained.locals, grid: &grid };
    let maj = MajorityVote { locals: &trained.locals, grid: &grid };
    println!("avg-prob val {:.3}", evaluate(&avg, &val)?);
    println!("maj-vot  val {:.3}", evaluate(&maj, &val)?);
    Ok(())
}
