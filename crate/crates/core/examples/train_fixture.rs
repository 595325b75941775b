//! Memorizes a small synthetic corpus and reports training-set F1 per epoch.
//!
//! cargo run --release --example train_fixture -- [epochs] [seed]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use span_aste::autodiff::{AdamW, AdamWConfig};
use span_aste::data::{make_fixture, VocabSpec};
use span_aste::eval::{triplet_prf, EvalMode};
use span_aste::model::{build_vocabulary, ModelConfig, SpanAste};
use span_aste::training::train_epoch;

fn main() -> span_aste::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(300);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);

    let fixture = make_fixture(&mut ChaCha8Rng::seed_from_u64(seed), 20, &VocabSpec::default())?;
    let data = fixture.sentences;
    let vocab = build_vocabulary(&data, &[], None);
    let mut model = SpanAste::new(ModelConfig::test_scale(), vocab, seed, None)?;
    let mut optimizer = AdamW::new(AdamWConfig::default(), model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for epoch in 1..=epochs {
        let stats = train_epoch(&mut model, &data, &mut optimizer, &mut rng)?;
        let f1 = triplet_prf(&data, &model.predict_corpus(&data)?, EvalMode::All)?.f1;
        println!("epoch {epoch:>3}  loss {:>9.4}  train F1 {f1:.4}", stats.mean_loss);
        if f1 == 1.0 {
            println!("memorized after {epoch} epochs");
            break;
        }
    }
    Ok(())
}
