//! Trains on the synthetic corpus across pruning thresholds for the dual,
//! single and adjusted single channel settings, reporting dev F1 and
//! gold recall of the pools.
//!
//! cargo run --release --example prune_sweep -- [epochs]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use span_aste::data::{make_fixture, VocabSpec};
use span_aste::eval::{prune_sweep, sweep_table, SweepSetting};
use span_aste::model::{build_vocabulary, ModelConfig};
use span_aste::training::TrainConfig;

fn main() -> span_aste::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(15);
    let spec = VocabSpec::default();
    let train = make_fixture(&mut ChaCha8Rng::seed_from_u64(1), 40, &spec)?.sentences;
    let dev = make_fixture(&mut ChaCha8Rng::seed_from_u64(2), 12, &spec)?.sentences;
    let vocab = build_vocabulary(&train, &[&dev], None);
    let train_cfg = TrainConfig {
        epochs,
        seeds: vec![7],
        ..TrainConfig::default()
    };
    let rows = prune_sweep(
        &ModelConfig::test_scale(),
        &train_cfg,
        &vocab,
        None,
        &train,
        &dev,
        &[0.1, 0.3, 0.5],
        &SweepSetting::ALL,
    )?;
    print!("{}", sweep_table(&rows));
    Ok(())
}
