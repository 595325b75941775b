//! Command-line front end: `train`, `eval`, `predict`, `stats` and
//! `prune-sweep`.
//!
//! Every command starts from a [`RunConfig`] (a JSON file given with
//! `--config`, or the defaults), applies flag overrides on top, and writes
//! the merged configuration into the output directory before doing any
//! work, so the echoed file alone reproduces the run.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{dataset_stats, read_corpus, write_corpus, DatasetStats, Sentence};
use crate::encoder::{Embeddings, SpanMode};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, prune_sweep, sweep_table, EvalMode, SweepSetting};
use crate::io::write_atomic_str;
use crate::mention::ChannelMode;
use crate::model::{build_vocabulary, ModelConfig, SpanAste};
use crate::training::{run_experiment, Splits, TrainConfig};

pub const CONFIG_ECHO: &str = "run_config.json";

/// Everything a command needs, serializable as the config file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Model directory read by `eval` and `predict`.
    pub checkpoint: Option<PathBuf>,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub modes: Vec<EvalMode>,
    pub z_values: Vec<f64>,
    pub sweep_settings: Vec<SweepSetting>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: None,
            dev: None,
            test: None,
            embeddings: None,
            out: None,
            checkpoint: None,
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            modes: EvalMode::ALL.to_vec(),
            z_values: vec![0.5],
            sweep_settings: SweepSetting::ALL.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn require<'a>(field: &str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
        value.as_deref().ok_or_else(|| {
            Error::Config(format!(
                "missing `{field}` path (set --{field} or `{field}` in the config file)"
            ))
        })
    }

    /// Writes this configuration as `run_config.json` under `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_atomic_str(&dir.join(CONFIG_ECHO), &serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full-size dimensions (300-d embeddings and LSTM states).
    Full,
    /// Small dimensions for quick runs.
    TestScale,
}

#[derive(Debug, Parser)]
#[command(
    name = "span-aste",
    version,
    about = "Span-level aspect sentiment triplet extraction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per seed, select epochs on dev F1, report test metrics.
    Train(CommonArgs),
    /// Evaluate a saved model on a corpus.
    Eval {
        /// Model directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Gold corpus (defaults to --test).
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write predicted triplets in the corpus line format.
    Predict {
        /// Model directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sentences to tag; any triplets already present are ignored.
        #[arg(long)]
        corpus: PathBuf,
        /// Also write per-sentence pruning records (JSON lines) here.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        /// Output file for predictions.
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus statistics.
    Stats {
        /// Corpus files; --train/--dev/--test are added when given.
        corpora: Vec<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train across pruning thresholds and channel settings.
    PruneSweep {
        /// Settings to run (default: all three).
        #[arg(long, value_delimiter = ',')]
        settings: Vec<SweepSetting>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training corpus.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Development corpus, used for epoch selection.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Test corpus.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Word vectors, one token and its values per line.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace model dimensions with a preset (pruning settings are kept).
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Random seeds, comma-separated; one model is trained per seed.
    #[arg(long = "seed", alias = "seeds", value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// boundary, max_pool or mean_pool.
    #[arg(long)]
    pub span_mode: Option<SpanMode>,
    /// Pruning threshold; a comma-separated list for `prune-sweep`.
    #[arg(long, value_delimiter = ',')]
    pub z: Vec<f64>,
    /// dual or single.
    #[arg(long)]
    pub channel_mode: Option<ChannelMode>,
    /// Largest end - start of a candidate span.
    #[arg(long)]
    pub max_span_width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Evaluation modes, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub modes: Vec<EvalMode>,
    /// Turn off width and distance embeddings.
    #[arg(long)]
    pub no_feature_embeddings: bool,
}

impl CommonArgs {
    /// The config file (or defaults) with these flags applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = self.preset {
            let prune = c.model.prune;
            c.model = match p {
                Preset::Full => ModelConfig::default(),
                Preset::TestScale => ModelConfig::test_scale(),
            };
            c.model.prune = prune;
        }
        let paths = [
            (&self.train, &mut c.train),
            (&self.dev, &mut c.dev),
            (&self.test, &mut c.test),
            (&self.embeddings, &mut c.embeddings),
            (&self.out, &mut c.out),
        ];
        for (flag, field) in paths {
            if flag.is_some() {
                field.clone_from(flag);
            }
        }
        if !self.seeds.is_empty() {
            c.training.seeds = self.seeds.clone();
        }
        if let Some(m) = self.span_mode {
            c.model.encoder.span_mode = m;
        }
        if let Some(z) = self.z.iter().find(|z| !(**z > 0.0 && **z <= 1.0)) {
            return Err(Error::Config(format!("--z values must lie in (0, 1], got {z}")));
        }
        if !self.z.is_empty() {
            c.z_values = self.z.clone();
            c.model.prune.z = self.z[0];
        }
        if let Some(m) = self.channel_mode {
            c.model.prune.channel_mode = m;
        }
        if let Some(l) = self.max_span_width {
            c.model.encoder.max_span_width = l;
        }
        if let Some(e) = self.epochs {
            c.training.epochs = e;
        }
        if !self.modes.is_empty() {
            c.modes = self.modes.clone();
        }
        if self.no_feature_embeddings {
            c.model.encoder.feature_embeddings = false;
        }
        c.model.validate()?;
        c.training.validate()?;
        Ok(c)
    }
}

fn load_corpus(path: &Path) -> Result<Vec<Sentence>> {
    read_corpus(path).map_err(|e| e.in_file(path))
}

fn load_embeddings(c: &RunConfig) -> Result<Option<Embeddings>> {
    c.embeddings
        .as_deref()
        .map(|p| Embeddings::load(p, c.model.encoder.embedding_dim).map_err(|e| e.in_file(p)))
        .transpose()
}

fn load_model(dir: &Path) -> Result<SpanAste> {
    SpanAste::load(dir).map_err(|e| e.in_file(dir))
}

fn write_reports(dir: &Path, stem: &str, text: &str, json: &impl Serialize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic_str(&dir.join(format!("{stem}.txt")), text)?;
    write_atomic_str(&dir.join(format!("{stem}.json")), &serde_json::to_string_pretty(json)?)
}

fn cmd_train(args: &CommonArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let c = args.resolve()?;
    let train = RunConfig::require("train", &c.train)?;
    let dev = RunConfig::require("dev", &c.dev)?;
    let test = RunConfig::require("test", &c.test)?;
    let dir = RunConfig::require("out", &c.out)?;
    if c.z_values.len() > 1 {
        return Err(Error::Config("train takes a single --z value".into()));
    }
    c.echo(dir)?;
    let splits = Splits {
        train: load_corpus(train)?,
        dev: load_corpus(dev)?,
        test: load_corpus(test)?,
    };
    let pretrained = load_embeddings(&c)?;
    let vocab = build_vocabulary(&splits.train, &[&splits.dev, &splits.test], pretrained.as_ref());
    let report = run_experiment(&c.model, &c.training, &splits, &vocab, pretrained.as_ref(), Some(dir))?;
    let text = report.to_text();
    write_reports(dir, "report", &text, &report)?;
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_eval(checkpoint: &Path, corpus: Option<&Path>, args: &CommonArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let mut c = args.resolve()?;
    if let Some(p) = corpus {
        c.test = Some(p.to_path_buf());
    }
    c.checkpoint = Some(checkpoint.to_path_buf());
    let corpus = RunConfig::require("test", &c.test)?;
    if let Some(dir) = &c.out {
        c.echo(dir)?;
    }
    let model = load_model(checkpoint)?;
    let gold = load_corpus(corpus)?;
    let report = evaluate_model(&model, &gold, &c.modes)?;
    let text = report.to_text();
    if let Some(dir) = &c.out {
        write_reports(dir, "eval_report", &text, &report)?;
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_predict(checkpoint: &Path, corpus: &Path, diagnostics: Option<&Path>, target: &Path) -> Result<()> {
    let model = load_model(checkpoint)?;
    let sentences = load_corpus(corpus)?;
    let pred = model.predict_corpus(&sentences)?;
    if let Some(dir) = target.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let echo = RunConfig {
        test: Some(corpus.to_path_buf()),
        out: Some(target.to_path_buf()),
        checkpoint: Some(checkpoint.to_path_buf()),
        model: model.config().clone(),
        ..RunConfig::default()
    };
    let mut name = target.as_os_str().to_owned();
    name.push(".config.json");
    write_atomic_str(Path::new(&name), &serde_json::to_string_pretty(&echo)?)?;
    write_corpus(target, &pred)?;
    if let Some(path) = diagnostics {
        let mut lines = String::new();
        for s in &sentences {
            lines.push_str(&model.prune_diagnostics(s)?.to_json_line());
            lines.push('\n');
        }
        write_atomic_str(path, &lines)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct StatsRow<'a> {
    split: &'a str,
    #[serde(flatten)]
    stats: DatasetStats,
}

fn cmd_stats(corpora: &[PathBuf], args: &CommonArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let c = args.resolve()?;
    let mut paths: Vec<PathBuf> = corpora.to_vec();
    paths.extend([&c.train, &c.dev, &c.test].into_iter().flatten().cloned());
    if paths.is_empty() {
        return Err(Error::Config("no corpus files given".into()));
    }
    if let Some(dir) = &c.out {
        c.echo(dir)?;
    }
    let mut rows = Vec::new();
    for p in &paths {
        let name = p
            .file_stem()
            .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        rows.push((name, dataset_stats(&load_corpus(p)?)));
    }
    let text = DatasetStats::table(&rows);
    if let Some(dir) = &c.out {
        let json: Vec<StatsRow> = rows.iter().map(|(n, s)| StatsRow { split: n, stats: *s }).collect();
        write_reports(dir, "stats", &text, &json)?;
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_prune_sweep(settings: &[SweepSetting], args: &CommonArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let mut c = args.resolve()?;
    if !settings.is_empty() {
        c.sweep_settings = settings.to_vec();
    }
    if c.z_values.is_empty() {
        return Err(Error::Config("z list is empty".into()));
    }
    let train = RunConfig::require("train", &c.train)?;
    let dev = RunConfig::require("dev", &c.dev)?;
    let dir = RunConfig::require("out", &c.out)?;
    c.echo(dir)?;
    let train = load_corpus(train)?;
    let dev = load_corpus(dev)?;
    let pretrained = load_embeddings(&c)?;
    let vocab = build_vocabulary(&train, &[&dev], pretrained.as_ref());
    let rows = prune_sweep(
        &c.model,
        &c.training,
        &vocab,
        pretrained.as_ref(),
        &train,
        &dev,
        &c.z_values,
        &c.sweep_settings,
    )?;
    let text = sweep_table(&rows);
    write_reports(dir, "sweep", &text, &rows)?;
    out.write_all(text.as_bytes())?;
    Ok(())
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn std::io::Write) -> Result<()> {
    match &cli.command {
        Command::Train(args) => cmd_train(args, out),
        Command::Eval {
            checkpoint,
            corpus,
            common,
        } => cmd_eval(checkpoint, corpus.as_deref(), common, out),
        Command::Predict {
            checkpoint,
            corpus,
            diagnostics,
            out: target,
        } => cmd_predict(checkpoint, corpus, diagnostics.as_deref(), target),
        Command::Stats { corpora, common } => cmd_stats(corpora, common, out),
        Command::PruneSweep { settings, common } => cmd_prune_sweep(settings, common, out),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
