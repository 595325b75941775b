//! Corpus line format, dataset statistics and synthetic fixtures.
//!
//! One sentence per line: the whitespace-tokenized text, `####`, then a
//! list of `(target indices, opinion indices, 'TAG')` tuples, e.g.
//! `It is great .####[([0], [2], 'POS')]`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Span;
use crate::error::{Error, Result};
use crate::triplet::{Sentiment, Triplet};

pub const SEPARATOR: &str = "####";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: usize,
    pub tokens: Vec<String>,
    pub triplets: Vec<Triplet>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Distinct gold target spans.
    pub fn target_spans(&self) -> BTreeSet<Span> {
        self.triplets.iter().map(|t| t.target).collect()
    }

    /// Distinct gold opinion spans.
    pub fn opinion_spans(&self) -> BTreeSet<Span> {
        self.triplets.iter().map(|t| t.opinion).collect()
    }
}

struct Cursor {
    chars: Vec<char>,
    pos: usize,
    /// Column of `chars[0]` in the original line, 1-based.
    base: usize,
    line: usize,
}

impl Cursor {
    fn new(src: &str, base: usize, line: usize) -> Self {
        Cursor {
            chars: src.chars().collect(),
            pos: 0,
            base,
            line,
        }
    }

    fn column(&self) -> usize {
        self.base + self.pos
    }

    fn err_at(&self, column: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        self.err_at(self.column(), message)
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn expect(&mut self, want: char) -> Result<()> {
        match self.peek() {
            Some(c) if c == want => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(self.err(format!("expected `{want}`, found `{c}`"))),
            None => Err(self.err(format!("expected `{want}`, found end of line"))),
        }
    }

    fn eat(&mut self, want: char) -> bool {
        if self.peek() == Some(want) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn integer(&mut self) -> Result<(usize, usize)> {
        self.skip_ws();
        let start = self.pos;
        while self.chars.get(self.pos).is_some_and(char::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a token index"));
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        let value = text
            .parse()
            .map_err(|_| self.err_at(self.base + start, format!("index `{text}` is too large")))?;
        Ok((value, self.base + start))
    }

    /// `[i, j, ...]` as a contiguous span over `n` tokens.
    fn span(&mut self, n: usize) -> Result<Span> {
        let column = self.column();
        self.expect('[')?;
        let mut indices = Vec::new();
        if self.peek() != Some(']') {
            loop {
                let (value, col) = self.integer()?;
                if value >= n {
                    return Err(self.err_at(col, format!("index {value} out of range for {n} tokens")));
                }
                indices.push(value);
                if !self.eat(',') {
                    break;
                }
            }
        }
        self.expect(']')?;
        if indices.is_empty() {
            return Err(self.err_at(column, "empty index list"));
        }
        indices.sort_unstable();
        let (first, last) = (indices[0], indices[indices.len() - 1]);
        if last - first + 1 != indices.len() {
            return Err(self.err_at(column, format!("index list {indices:?} is not a contiguous run")));
        }
        Span::new(first, last)
    }

    fn tag(&mut self) -> Result<Sentiment> {
        let column = self.column();
        let quote = match self.peek() {
            Some(q @ ('\'' | '"')) => q,
            _ => return Err(self.err("expected a quoted sentiment tag")),
        };
        self.pos += 1;
        let start = self.pos;
        while self.chars.get(self.pos).is_some_and(|&c| c != quote) {
            self.pos += 1;
        }
        if self.pos >= self.chars.len() {
            return Err(self.err_at(column, "unterminated sentiment tag"));
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        self.pos += 1;
        Sentiment::from_tag(&text).ok_or_else(|| self.err_at(column, format!("unknown sentiment tag `{text}`")))
    }

    fn triplet(&mut self, n: usize) -> Result<Triplet> {
        self.expect('(')?;
        let target = self.span(n)?;
        self.expect(',')?;
        let opinion = self.span(n)?;
        self.expect(',')?;
        let sentiment = self.tag()?;
        self.expect(')')?;
        Ok(Triplet {
            target,
            opinion,
            sentiment,
        })
    }

    fn triplets(&mut self, n: usize) -> Result<Vec<Triplet>> {
        self.expect('[')?;
        let mut out = Vec::new();
        while self.peek() == Some('(') {
            out.push(self.triplet(n)?);
            if !self.eat(',') {
                break;
            }
        }
        self.expect(']')?;
        if let Some(c) = self.peek() {
            return Err(self.err(format!("unexpected `{c}` after triplet list")));
        }
        Ok(out)
    }
}

fn parse_line(line: &str, id: usize, line_no: usize) -> Result<Sentence> {
    let line = line.trim_end_matches(['\r', '\n']);
    let Some(at) = line.find(SEPARATOR) else {
        return Err(Error::Parse {
            line: line_no,
            column: line.chars().count() + 1,
            message: format!("missing `{SEPARATOR}` separator"),
        });
    };
    let text = &line[..at];
    let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err(Error::Parse {
            line: line_no,
            column: 1,
            message: "sentence has no tokens".into(),
        });
    }
    let rest = &line[at + SEPARATOR.len()..];
    let base = line[..at].chars().count() + SEPARATOR.len() + 1;
    let triplets = Cursor::new(rest, base, line_no).triplets(tokens.len())?;
    Ok(Sentence { id, tokens, triplets })
}

/// Parses one corpus line; `id` is the sentence ordinal, and errors report
/// line `id + 1`.
pub fn parse_dataset_line(line: &str, id: usize) -> Result<Sentence> {
    parse_line(line, id, id + 1)
}

/// Parses a whole corpus. Blank lines are skipped; sentence ids count the
/// remaining lines from zero.
pub fn parse_corpus(text: &str) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(line, out.len(), no + 1)?);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Sentence>> {
    parse_corpus(&std::fs::read_to_string(path)?)
}

fn write_indices(out: &mut String, span: Span) {
    out.push('[');
    for i in span.start..=span.end {
        if i > span.start {
            out.push_str(", ");
        }
        let _ = write!(out, "{i}");
    }
    out.push(']');
}

/// Canonical line for `s`, without a trailing newline.
pub fn serialize_sentence(s: &Sentence) -> String {
    let mut out = s.tokens.join(" ");
    out.push_str(SEPARATOR);
    out.push('[');
    for (k, t) in s.triplets.iter().enumerate() {
        if k > 0 {
            out.push_str(", ");
        }
        out.push('(');
        write_indices(&mut out, t.target);
        out.push_str(", ");
        write_indices(&mut out, t.opinion);
        let _ = write!(out, ", '{}')", t.sentiment.tag());
    }
    out.push(']');
    out
}

pub fn serialize_corpus(sentences: &[Sentence]) -> String {
    sentences.iter().map(|s| serialize_sentence(s) + "\n").collect()
}

pub fn write_corpus(path: &Path, sentences: &[Sentence]) -> Result<()> {
    crate::io::write_atomic_str(path, &serialize_corpus(sentences))
}

/// Corpus statistics. `targets`/`opinions` count distinct spans per
/// sentence; the `_raw` variants count every occurrence in a triplet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sentences: usize,
    pub triplets: usize,
    pub positive: usize,
    pub neutral: usize,
    pub negative: usize,
    pub single_word: usize,
    pub multi_word: usize,
    pub targets: usize,
    pub opinions: usize,
    pub targets_raw: usize,
    pub opinions_raw: usize,
}

impl DatasetStats {
    fn add_triplet(&mut self, t: &Triplet) {
        self.triplets += 1;
        match t.sentiment {
            Sentiment::Positive => self.positive += 1,
            Sentiment::Neutral => self.neutral += 1,
            Sentiment::Negative => self.negative += 1,
        }
        if t.is_single_word() {
            self.single_word += 1;
        } else {
            self.multi_word += 1;
        }
        self.targets_raw += 1;
        self.opinions_raw += 1;
    }

    /// Aligned plain-text table with one row per named split.
    pub fn table(rows: &[(String, DatasetStats)]) -> String {
        let header = [
            "split",
            "#S",
            "POS",
            "NEU",
            "NEG",
            "SW",
            "MW",
            "#Target",
            "#Opinion",
            "#Target(raw)",
            "#Opinion(raw)",
        ];
        let cells: Vec<Vec<String>> = rows
            .iter()
            .map(|(name, s)| {
                let mut r = vec![name.clone()];
                r.extend(
                    [
                        s.sentences,
                        s.positive,
                        s.neutral,
                        s.negative,
                        s.single_word,
                        s.multi_word,
                        s.targets,
                        s.opinions,
                        s.targets_raw,
                        s.opinions_raw,
                    ]
                    .iter()
                    .map(usize::to_string),
                );
                r
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                cells
                    .iter()
                    .map(|r| r[c].len())
                    .chain([header[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let mut emit = |row: &[&str]| {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    if c == 0 {
                        format!("{v:<w$}", w = widths[c])
                    } else {
                        format!("{v:>w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        };
        emit(&header);
        for r in &cells {
            emit(&r.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out
    }
}

pub fn dataset_stats(sentences: &[Sentence]) -> DatasetStats {
    let mut s = DatasetStats {
        sentences: sentences.len(),
        ..Default::default()
    };
    for sentence in sentences {
        for t in &sentence.triplets {
            s.add_triplet(t);
        }
        s.targets += sentence.target_spans().len();
        s.opinions += sentence.opinion_spans().len();
    }
    s
}

/// Word lists for the synthetic fixture. Every opinion phrase carries one
/// fixed sentiment, so the corpus is consistent and learnable.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VocabSpec {
    pub single_targets: Vec<String>,
    pub multi_targets: Vec<Vec<String>>,
    pub single_opinions: Vec<(String, Sentiment)>,
    pub multi_opinions: Vec<(Vec<String>, Sentiment)>,
    pub fillers: Vec<String>,
}

fn words(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for VocabSpec {
    fn default() -> Self {
        VocabSpec {
            single_targets: words(&[
                "pizza", "service", "staff", "battery", "screen", "price", "menu", "keyboard",
            ]),
            multi_targets: vec![
                words(&["sushi", "rolls"]),
                words(&["wine", "list"]),
                words(&["battery", "life"]),
                words(&["hard", "drive"]),
            ],
            single_opinions: vec![
                ("great".into(), Sentiment::Positive),
                ("delicious".into(), Sentiment::Positive),
                ("terrible".into(), Sentiment::Negative),
                ("rude".into(), Sentiment::Negative),
                ("okay".into(), Sentiment::Neutral),
            ],
            multi_opinions: vec![
                (words(&["really", "good"]), Sentiment::Positive),
                (words(&["not", "worth"]), Sentiment::Negative),
                (words(&["just", "average"]), Sentiment::Neutral),
            ],
            fillers: words(&["we", "went", "there", "today", "again", "yesterday"]),
        }
    }
}

/// The shape planted in one fixture sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixtureKind {
    SingleWord,
    MultiWord,
    SharedOpinion,
    Empty,
}

#[derive(Clone, Debug)]
pub struct Fixture {
    pub sentences: Vec<Sentence>,
    pub kinds: Vec<FixtureKind>,
    /// Counts tallied while planting, independent of `dataset_stats`.
    pub planned: DatasetStats,
}

struct Builder {
    tokens: Vec<String>,
}

impl Builder {
    fn push(&mut self, w: &[String]) -> Span {
        let start = self.tokens.len();
        self.tokens.extend_from_slice(w);
        Span {
            start,
            end: self.tokens.len() - 1,
        }
    }

    fn word(&mut self, w: &str) {
        self.tokens.push(w.to_string());
    }
}

/// Synthetic corpus cycling through single-word, multi-word,
/// shared-opinion and triplet-free sentences.
pub fn make_fixture<R: Rng + ?Sized>(rng: &mut R, size: usize, spec: &VocabSpec) -> Result<Fixture> {
    if size == 0 {
        return Err(Error::Input("fixture size must be at least 1".into()));
    }
    if spec.single_targets.len() < 2
        || spec.multi_targets.is_empty()
        || spec.single_opinions.is_empty()
        || spec.multi_opinions.is_empty()
        || spec.fillers.is_empty()
    {
        return Err(Error::Config(
            "fixture vocabulary needs two single-word targets and every other list non-empty".into(),
        ));
    }
    let kinds_cycle = [
        FixtureKind::SingleWord,
        FixtureKind::MultiWord,
        FixtureKind::SharedOpinion,
        FixtureKind::Empty,
    ];
    let mut sentences = Vec::with_capacity(size);
    let mut kinds = Vec::with_capacity(size);
    let mut planned = DatasetStats {
        sentences: size,
        ..Default::default()
    };
    for id in 0..size {
        let kind = kinds_cycle[id % kinds_cycle.len()];
        let mut b = Builder { tokens: Vec::new() };
        if rng.random_bool(0.5) {
            b.word(spec.fillers.choose(rng).expect("non-empty"));
        }
        let mut triplets = Vec::new();
        match kind {
            FixtureKind::SingleWord => {
                b.word("the");
                let t = b.push(std::slice::from_ref(
                    spec.single_targets.choose(rng).expect("non-empty"),
                ));
                b.word("was");
                let (o, s) = spec.single_opinions.choose(rng).expect("non-empty");
                let o = b.push(std::slice::from_ref(o));
                triplets.push(Triplet {
                    target: t,
                    opinion: o,
                    sentiment: *s,
                });
                planned.single_word += 1;
            }
            FixtureKind::MultiWord => {
                b.word("the");
                let (t, (o, s)) = if (id / kinds_cycle.len()).is_multiple_of(2) {
                    let t = b.push(spec.multi_targets.choose(rng).expect("non-empty"));
                    b.word("is");
                    let (o, s) = spec.single_opinions.choose(rng).expect("non-empty");
                    (t, (b.push(std::slice::from_ref(o)), *s))
                } else {
                    let t = b.push(std::slice::from_ref(
                        spec.single_targets.choose(rng).expect("non-empty"),
                    ));
                    b.word("is");
                    let (o, s) = spec.multi_opinions.choose(rng).expect("non-empty");
                    (t, (b.push(o), *s))
                };
                triplets.push(Triplet {
                    target: t,
                    opinion: o,
                    sentiment: s,
                });
                planned.multi_word += 1;
            }
            FixtureKind::SharedOpinion => {
                let picked: Vec<&String> = spec.single_targets.choose_multiple(rng, 2).collect();
                b.word("the");
                let t1 = b.push(std::slice::from_ref(picked[0]));
                b.word("and");
                b.word("the");
                let t2 = b.push(std::slice::from_ref(picked[1]));
                b.word("were");
                let (o, s) = spec.single_opinions.choose(rng).expect("non-empty");
                let o = b.push(std::slice::from_ref(o));
                for t in [t1, t2] {
                    triplets.push(Triplet {
                        target: t,
                        opinion: o,
                        sentiment: *s,
                    });
                }
                planned.single_word += 2;
                planned.targets += 1;
                planned.targets_raw += 1;
                planned.opinions_raw += 1;
            }
            FixtureKind::Empty => {
                for _ in 0..3 {
                    b.word(spec.fillers.choose(rng).expect("non-empty"));
                }
            }
        }
        b.word(".");
        if kind != FixtureKind::Empty {
            planned.targets += 1;
            planned.opinions += 1;
            planned.targets_raw += 1;
            planned.opinions_raw += 1;
        }
        for t in &triplets {
            planned.triplets += 1;
            match t.sentiment {
                Sentiment::Positive => planned.positive += 1,
                Sentiment::Neutral => planned.neutral += 1,
                Sentiment::Negative => planned.negative += 1,
            }
        }
        sentences.push(Sentence {
            id,
            tokens: b.tokens,
            triplets,
        });
        kinds.push(kind);
    }
    Ok(Fixture {
        sentences,
        kinds,
        planned,
    })
}
