//! Prints span and pair representation sizes for the span-representation
//! and feature-embedding ablations, at full and test scale.
//!
//! cargo run --example ablation_dims

use span_aste::encoder::SpanMode;
use span_aste::model::ModelConfig;

fn main() {
    for (scale, base) in [("full", ModelConfig::default()), ("test", ModelConfig::test_scale())] {
        println!("{scale} scale");
        for mode in [SpanMode::Boundary, SpanMode::MaxPool, SpanMode::MeanPool] {
            for features in [true, false] {
                let mut cfg = base.clone();
                cfg.encoder.span_mode = mode;
                cfg.encoder.feature_embeddings = features;
                println!(
                    "  {:<9} features={:<5}  span {:>5}  pair {:>5}",
                    mode.to_string(),
                    features,
                    cfg.span_dim(),
                    cfg.pair_dim()
                );
            }
        }
    }
}
