//! Token embedding, BiLSTM contextualization and span representations.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{init, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::BiLstm;

/// Inclusive token span `start..=end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(Error::Input(format!("span start {start} after end {end}")));
        }
        Ok(Span { start, end })
    }

    /// Number of tokens covered (`end - start + 1`).
    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_single_word(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.start, self.end)
    }
}

/// Every span with `0 <= i <= j < n` and `j - i <= max_span_width`, ordered
/// by `(start, end)`.
pub fn enumerate_spans(n: usize, max_span_width: usize) -> Vec<Span> {
    let mut spans = Vec::new();
    for start in 0..n {
        let last = (start + max_span_width).min(n - 1);
        spans.extend((start..=last).map(|end| Span { start, end }));
    }
    spans
}

pub const NUM_BUCKETS: usize = 10;

/// Buckets a width or distance: 0, 1, 2, 3, 4, 5-7, 8-15, 16-31, 32-63, 64+.
pub fn bucket_width(value: i64) -> Result<usize> {
    if value < 0 {
        return Err(Error::Input(format!("cannot bucket negative value {value}")));
    }
    Ok(match value {
        0..=4 => value as usize,
        5..=7 => 5,
        8..=15 => 6,
        16..=31 => 7,
        32..=63 => 8,
        _ => 9,
    })
}

/// How token states are aggregated into a span vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanMode {
    /// Start and end token states.
    #[default]
    Boundary,
    MaxPool,
    MeanPool,
}

impl FromStr for SpanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "boundary" => Ok(SpanMode::Boundary),
            "max_pool" | "max" => Ok(SpanMode::MaxPool),
            "mean_pool" | "mean" => Ok(SpanMode::MeanPool),
            other => Err(Error::Config(format!("unknown span mode `{other}`"))),
        }
    }
}

impl fmt::Display for SpanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpanMode::Boundary => "boundary",
            SpanMode::MaxPool => "max_pool",
            SpanMode::MeanPool => "mean_pool",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub embedding_dim: usize,
    /// Hidden size of each LSTM direction.
    pub lstm_hidden: usize,
    pub lstm_dropout: f64,
    /// Largest admissible `end - start`; the widest span has this many
    /// tokens plus one.
    pub max_span_width: usize,
    pub width_embedding_dim: usize,
    pub span_mode: SpanMode,
    /// Width (and pair distance) features; off for the ablation without them.
    pub feature_embeddings: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embedding_dim: 300,
            lstm_hidden: 300,
            lstm_dropout: 0.5,
            max_span_width: 8,
            width_embedding_dim: 20,
            span_mode: SpanMode::Boundary,
            feature_embeddings: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.lstm_hidden == 0 || self.width_embedding_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.lstm_dropout) {
            return Err(Error::Config(format!(
                "lstm_dropout {} outside [0, 1)",
                self.lstm_dropout
            )));
        }
        Ok(())
    }

    /// Width of a contextualized token vector.
    pub fn token_dim(&self) -> usize {
        2 * self.lstm_hidden
    }

    pub fn span_dim(&self) -> usize {
        let tokens = match self.span_mode {
            SpanMode::Boundary => 2 * self.token_dim(),
            SpanMode::MaxPool | SpanMode::MeanPool => self.token_dim(),
        };
        tokens
            + if self.feature_embeddings {
                self.width_embedding_dim
            } else {
                0
            }
    }
}

pub const UNK: &str = "<unk>";

/// Lowercased token to dense index map; index 0 is the shared unknown token.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(UNK);
        v
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        let key = normalize(token);
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(key.clone());
        self.index.insert(key, i);
        i
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(&normalize(token)).copied()
    }

    /// Index of `token`, or the unknown index.
    pub fn index_of(&self, token: &str) -> usize {
        self.get(token).unwrap_or(self.unk_index())
    }

    pub fn unk_index(&self) -> usize {
        0
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// One token per line, in index order.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(UNK) {
            return Err(Error::Input(format!("vocabulary must start with {UNK}")));
        }
        let mut v = Self::new();
        for (i, line) in lines.enumerate() {
            if v.insert(line) != i + 1 {
                return Err(Error::Input(format!("duplicate vocabulary entry `{line}`")));
            }
        }
        Ok(v)
    }
}

fn normalize(token: &str) -> String {
    token.to_lowercase()
}

/// Pretrained word vectors keyed by lowercased token.
#[derive(Clone, Debug, Default)]
pub struct Embeddings {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl Embeddings {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(&normalize(token)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Reads `token v1 ... v_dim` lines. The first occurrence of a
    /// (lowercased) token wins.
    pub fn read<R: BufRead>(reader: R, dim: usize) -> Result<Self> {
        let mut vectors = HashMap::new();
        for (no, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("non-empty line");
            let mut values = Vec::with_capacity(dim);
            for field in fields {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line: no + 1,
                    column: field.as_ptr() as usize - line.as_ptr() as usize + 1,
                    message: format!("`{field}` is not a number"),
                })?;
                values.push(v);
            }
            if values.len() != dim {
                return Err(Error::Parse {
                    line: no + 1,
                    column: 1,
                    message: format!("expected {dim} values after `{token}`, found {}", values.len()),
                });
            }
            vectors.entry(normalize(token)).or_insert(values);
        }
        Ok(Embeddings { dim, vectors })
    }

    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file), dim)
    }
}

/// Initial word table: pretrained rows where available, N(0, 1) otherwise.
pub fn embedding_table<R: Rng + ?Sized>(
    vocab: &Vocabulary,
    dim: usize,
    pretrained: Option<&Embeddings>,
    rng: &mut R,
) -> Result<Tensor> {
    if let Some(p) = pretrained {
        if p.dim() != dim {
            return Err(Error::Config(format!(
                "embedding file has {} dims, model expects {dim}",
                p.dim()
            )));
        }
    }
    let mut table = init::normal(&[vocab.len(), dim], 1.0, rng)?;
    if let Some(p) = pretrained {
        for (i, token) in vocab.tokens.iter().enumerate() {
            if let Some(v) = p.get(token) {
                table.values_mut()[i * dim..(i + 1) * dim].copy_from_slice(v);
            }
        }
    }
    Ok(table)
}

/// Looks up one table row per token (`[n × dim]`).
pub fn embed_tokens(
    g: &mut Graph,
    store: &ParamStore,
    vocab: &Vocabulary,
    table: ParamId,
    tokens: &[String],
) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::Input("cannot embed an empty sentence".into()));
    }
    let rows: Vec<usize> = tokens.iter().map(|t| vocab.index_of(t)).collect();
    g.gather_param(store, table, &rows)
}

/// A span and its vector, a `[1 × span_dim]` graph node.
#[derive(Clone, Copy, Debug)]
pub struct SpanRepresentation {
    pub span: Span,
    pub vector: Var,
}

/// Representations of many spans at once: `[spans × span_dim]`.
///
/// `h` holds one contextualized row per token. `width_table` is the width
/// embedding (`[NUM_BUCKETS × d]`), or `None` to leave the feature out.
pub fn span_representations(
    g: &mut Graph,
    store: &ParamStore,
    h: Var,
    spans: &[Span],
    mode: SpanMode,
    width_table: Option<ParamId>,
) -> Result<Var> {
    let n = g.shape(h).first().copied().unwrap_or(0);
    if let Some(bad) = spans.iter().find(|s| s.start > s.end || s.end >= n) {
        return Err(Error::Index {
            what: "span end",
            index: bad.end,
            len: n,
        });
    }
    let mut parts = match mode {
        SpanMode::Boundary => {
            let starts: Vec<usize> = spans.iter().map(|s| s.start).collect();
            let ends: Vec<usize> = spans.iter().map(|s| s.end).collect();
            vec![g.rows(h, &starts)?, g.rows(h, &ends)?]
        }
        SpanMode::MaxPool | SpanMode::MeanPool => {
            let ranges: Vec<(usize, usize)> = spans.iter().map(|s| (s.start, s.end)).collect();
            let pooled = if mode == SpanMode::MaxPool {
                g.max_pool(h, &ranges)?
            } else {
                g.mean_pool(h, &ranges)?
            };
            vec![pooled]
        }
    };
    if let Some(table) = width_table {
        let buckets = spans
            .iter()
            .map(|s| bucket_width(s.width() as i64))
            .collect::<Result<Vec<_>>>()?;
        parts.push(g.gather_param(store, table, &buckets)?);
    }
    g.concat(&parts, 1)
}

pub fn span_representation(
    g: &mut Graph,
    store: &ParamStore,
    h: Var,
    span: Span,
    mode: SpanMode,
    width_table: Option<ParamId>,
) -> Result<SpanRepresentation> {
    let vector = span_representations(g, store, h, &[span], mode, width_table)?;
    Ok(SpanRepresentation { span, vector })
}

/// Embedding table, BiLSTM and width embedding.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub embedding: ParamId,
    pub lstm: BiLstm,
    pub width: Option<ParamId>,
    config: EncoderConfig,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        vocab: &Vocabulary,
        config: &EncoderConfig,
        pretrained: Option<&Embeddings>,
    ) -> Result<Self> {
        config.validate()?;
        let table = embedding_table(vocab, config.embedding_dim, pretrained, rng)?;
        let embedding = store.add("encoder.embedding", ParamGroup::Other, table)?;
        let lstm = BiLstm::new(store, rng, "encoder.lstm", config.embedding_dim, config.lstm_hidden)?;
        let width = if config.feature_embeddings {
            Some(store.add(
                "encoder.width_embedding",
                ParamGroup::Other,
                init::normal(&[NUM_BUCKETS, config.width_embedding_dim], 1.0, rng)?,
            )?)
        } else {
            None
        };
        Ok(Encoder {
            embedding,
            lstm,
            width,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Contextualized token states `[n × 2·lstm_hidden]`, with dropout on
    /// the embeddings and on the BiLSTM output.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, vocab: &Vocabulary, tokens: &[String]) -> Result<Var> {
        let e = embed_tokens(g, store, vocab, self.embedding, tokens)?;
        let e = g.dropout(e, self.config.lstm_dropout)?;
        let h = self.lstm.run(g, store, e)?;
        g.dropout(h, self.config.lstm_dropout)
    }

    pub fn span_representations(&self, g: &mut Graph, store: &ParamStore, h: Var, spans: &[Span]) -> Result<Var> {
        span_representations(g, store, h, spans, self.config.span_mode, self.width)
    }
}
