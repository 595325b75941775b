//! Checks the full training loss gradient of a small random model against
//! central finite differences.
//!
//! cargo run --release --example gradcheck -- [seed]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use span_aste::autodiff::gradcheck::{check_gradients, GradCheckConfig};
use span_aste::data::{make_fixture, VocabSpec};
use span_aste::model::{build_vocabulary, ModelConfig, SpanAste};
use span_aste::training::{compute_loss, gold_assignment};

fn main() -> span_aste::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1);
    let data = make_fixture(&mut ChaCha8Rng::seed_from_u64(seed), 4, &VocabSpec::default())?.sentences;

    let mut cfg = ModelConfig::test_scale();
    cfg.encoder.embedding_dim = 4;
    cfg.encoder.lstm_hidden = 3;
    cfg.encoder.width_embedding_dim = 2;
    cfg.distance_embedding_dim = 2;
    cfg.ffnn_hidden = 5;

    let mut model = SpanAste::new(cfg, build_vocabulary(&data, &[], None), seed, None)?;
    let frozen = model.clone();
    for (i, s) in data.iter().enumerate() {
        let report = check_gradients(model.params_mut(), GradCheckConfig::default(), |g, store| {
            let out = frozen.forward_with(g, store, &s.tokens)?;
            let gold = gold_assignment(&s.triplets, &out);
            Ok(compute_loss(g, &out, &gold)?.total)
        })?;
        println!(
            "sentence {i}: {} coordinates, {} one-sided, {} skipped, max rel error {:.2e} -> {}",
            report.checked,
            report.one_sided,
            report.skipped,
            report.max_rel_error,
            if report.passed() { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
