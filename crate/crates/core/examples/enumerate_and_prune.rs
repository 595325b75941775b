//! Enumerates candidate spans for one sentence, scores them with an
//! untrained model and shows which survive pruning in each channel mode.
//!
//! cargo run --example enumerate_and_prune -- [z]

use span_aste::autodiff::Graph;
use span_aste::encoder::enumerate_spans;
use span_aste::encoder::Vocabulary;
use span_aste::mention::{pool_size, ChannelMode};
use span_aste::model::{ModelConfig, SpanAste};

fn main() -> span_aste::Result<()> {
    let z: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0.5);
    let tokens: Vec<String> = "the battery life is not long enough"
        .split(' ')
        .map(String::from)
        .collect();
    let n = tokens.len();

    let mut cfg = ModelConfig::test_scale();
    let spans = enumerate_spans(n, cfg.encoder.max_span_width);
    println!(
        "{n} tokens, {} candidate spans (max width {})",
        spans.len(),
        cfg.encoder.max_span_width
    );
    println!("pool size k = {} at z = {z}\n", pool_size(n, z, spans.len()));

    for mode in [ChannelMode::Dual, ChannelMode::Single] {
        cfg.prune.z = z;
        cfg.prune.channel_mode = mode;
        let model = SpanAste::new(cfg.clone(), Vocabulary::from_tokens(&tokens), 3, None)?;
        let out = model.forward(&mut Graph::new(), &tokens)?;
        let show = |pool: Vec<span_aste::encoder::Span>| {
            pool.iter()
                .map(|s| tokens[s.start..=s.end].join(" "))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        println!("{mode}:");
        println!("  target pool:  {}", show(out.target_pool()));
        println!("  opinion pool: {}", show(out.opinion_pool()));
        println!("  pairs scored: {}\n", out.pairs.len());
    }
    Ok(())
}
