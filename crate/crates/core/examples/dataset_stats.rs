//! Prints corpus statistics. With no arguments, writes a synthetic
//! train/dev/test split to `fixture-data/` first and summarizes that.
//!
//! cargo run --example dataset_stats -- [corpus files...]

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use span_aste::data::{dataset_stats, make_fixture, read_corpus, write_corpus, DatasetStats, VocabSpec};

fn main() -> span_aste::Result<()> {
    let mut paths: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    if paths.is_empty() {
        let dir = PathBuf::from("fixture-data");
        std::fs::create_dir_all(&dir)?;
        for (name, size, seed) in [("train", 40, 1), ("dev", 12, 2), ("test", 12, 3)] {
            let fixture = make_fixture(&mut ChaCha8Rng::seed_from_u64(seed), size, &VocabSpec::default())?;
            let path = dir.join(format!("{name}.txt"));
            write_corpus(&path, &fixture.sentences)?;
            paths.push(path);
        }
        println!("wrote synthetic splits to {}\n", dir.display());
    }

    let mut rows = Vec::new();
    for path in &paths {
        let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        rows.push((name, dataset_stats(&read_corpus(path)?)));
    }
    print!("{}", DatasetStats::table(&rows));
    Ok(())
}
