//! Trains the default desk model on synthetic data and prints the curves.

use aggronet::datapipe::synth_dataset;
use aggronet::model::{build, HybridSpec};
use aggronet::train::{evaluate, split, train_loop, Partition, SplitCounts, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = 42;
    let data = synth_dataset(75, 8, 32, seed)?.prepare([32, 32])?;
    let splits = split(
        data.len(),
        SplitCounts {
            train: 400,
            val: 100,
            test: 100,
        },
        seed,
    )?;
    let mut model = build(&HybridSpec::desk(8), seed)?;
    let config = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let t = std::time::Instant::now();
    let history = train_loop(&mut model, &data, &splits, &config)?;
    print!("{}", history.to_csv());
    let test = evaluate(&model, &data, &splits.indices(Partition::Test))?;
    println!("test accuracy {:.4} ({:.1?})", test.accuracy, t.elapsed());
    Ok(())
}
