//! Scores hand-written predictions against gold triplets in every
//! evaluation mode.
//!
//! cargo run --example evaluate -- [gold file] [prediction file]

use std::path::Path;

use span_aste::data::{parse_corpus, read_corpus};
use span_aste::eval::{evaluate_predictions, EvalMode};

const GOLD: &str = "\
The fish tacos were great but the service was slow .####[([1, 2], [4], 'POS'), ([7], [9], 'NEG')]
Nice ambience .####[([1], [0], 'POS')]
";

const PRED: &str = "\
The fish tacos were great but the service was slow .####[([2], [4], 'POS'), ([7], [9], 'NEG')]
Nice ambience .####[([1], [0], 'NEU')]
";

fn main() -> span_aste::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (gold, pred) = match args.as_slice() {
        [g, p] => (read_corpus(Path::new(g))?, read_corpus(Path::new(p))?),
        _ => (parse_corpus(GOLD)?, parse_corpus(PRED)?),
    };
    let report = evaluate_predictions(&gold, &pred, &EvalMode::ALL)?;
    print!("{}", report.to_text());
    Ok(())
}
