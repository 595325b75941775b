//! Target-opinion pair representation, relation classification and triplet
//! decoding.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, Graph, ParamId, ParamStore, Var};
use crate::encoder::{bucket_width, Span, SpanRepresentation};
use crate::error::{Error, Result};
use crate::nn::Ffnn;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sentiment {
    Positive,
    Negative,
    Neutral,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Positive, Sentiment::Negative, Sentiment::Neutral];

    /// Dataset tag: `POS`, `NEG` or `NEU`.
    pub fn tag(self) -> &'static str {
        match self {
            Sentiment::Positive => "POS",
            Sentiment::Negative => "NEG",
            Sentiment::Neutral => "NEU",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "POS" => Some(Sentiment::Positive),
            "NEG" => Some(Sentiment::Negative),
            "NEU" => Some(Sentiment::Neutral),
            _ => None,
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Relation classes; the index order doubles as the argmax tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationLabel {
    Positive,
    Negative,
    Neutral,
    Invalid,
}

pub const NUM_RELATIONS: usize = 4;

impl RelationLabel {
    pub const ALL: [RelationLabel; NUM_RELATIONS] = [
        RelationLabel::Positive,
        RelationLabel::Negative,
        RelationLabel::Neutral,
        RelationLabel::Invalid,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn sentiment(self) -> Option<Sentiment> {
        match self {
            RelationLabel::Positive => Some(Sentiment::Positive),
            RelationLabel::Negative => Some(Sentiment::Negative),
            RelationLabel::Neutral => Some(Sentiment::Neutral),
            RelationLabel::Invalid => None,
        }
    }
}

impl From<Sentiment> for RelationLabel {
    fn from(s: Sentiment) -> Self {
        match s {
            Sentiment::Positive => RelationLabel::Positive,
            Sentiment::Negative => RelationLabel::Negative,
            Sentiment::Neutral => RelationLabel::Neutral,
        }
    }
}

/// A (target, opinion, sentiment) triplet, gold or predicted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub target: Span,
    pub opinion: Span,
    pub sentiment: Sentiment,
}

impl Triplet {
    /// Both terms are single tokens.
    pub fn is_single_word(&self) -> bool {
        self.target.is_single_word() && self.opinion.is_single_word()
    }
}

/// Token distance between two spans: `min(|b - c|, |a - d|)` for target
/// `(a, b)` and opinion `(c, d)`.
pub fn span_distance(target: Span, opinion: Span) -> usize {
    let (a, b, c, d) = (target.start, target.end, opinion.start, opinion.end);
    b.abs_diff(c).min(a.abs_diff(d))
}

#[derive(Clone, Copy, Debug)]
pub struct PairRepresentation {
    pub target: Span,
    pub opinion: Span,
    pub vector: Var,
}

/// Pair vectors for many pairs at once: `[pairs × pair_dim]`.
///
/// `span_reps` holds one row per candidate span; `pairs` index into it and
/// `spans` gives the span of each row.
pub fn pair_representations(
    g: &mut Graph,
    store: &ParamStore,
    span_reps: Var,
    spans: &[Span],
    pairs: &[(usize, usize)],
    distance_table: Option<ParamId>,
) -> Result<Var> {
    let targets: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let opinions: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let mut parts = vec![g.rows(span_reps, &targets)?, g.rows(span_reps, &opinions)?];
    if let Some(table) = distance_table {
        let buckets = pairs
            .iter()
            .map(|&(t, o)| bucket_width(span_distance(spans[t], spans[o]) as i64))
            .collect::<Result<Vec<_>>>()?;
        parts.push(g.gather_param(store, table, &buckets)?);
    }
    g.concat(&parts, 1)
}

pub fn pair_representation(
    g: &mut Graph,
    store: &ParamStore,
    target: &SpanRepresentation,
    opinion: &SpanRepresentation,
    distance_table: Option<ParamId>,
) -> Result<PairRepresentation> {
    let mut parts = vec![target.vector, opinion.vector];
    if let Some(table) = distance_table {
        let bucket = bucket_width(span_distance(target.span, opinion.span) as i64)?;
        parts.push(g.gather_param(store, table, &[bucket])?);
    }
    let vector = g.concat(&parts, 1)?;
    Ok(PairRepresentation {
        target: target.span,
        opinion: opinion.span,
        vector,
    })
}

/// Relation distribution for one pair.
pub fn relation_scores(
    g: &mut Graph,
    store: &ParamStore,
    ffnn: &Ffnn,
    pair: &PairRepresentation,
) -> Result<[f64; NUM_RELATIONS]> {
    if ffnn.output_dim() != NUM_RELATIONS {
        return Err(Error::dim("relation_scores", &[ffnn.output_dim()], &[NUM_RELATIONS]));
    }
    let logits = ffnn.forward(g, store, pair.vector)?;
    let p = softmax(g.value(logits).values());
    Ok([p[0], p[1], p[2], p[3]])
}

/// A candidate pair with its relation distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredPair {
    pub target: Span,
    pub opinion: Span,
    pub probs: [f64; NUM_RELATIONS],
}

/// Highest-probability class; ties go to the earlier class in
/// Positive, Negative, Neutral, Invalid order.
pub fn argmax_relation(probs: &[f64; NUM_RELATIONS]) -> RelationLabel {
    let mut best = 0;
    for i in 1..NUM_RELATIONS {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    RelationLabel::ALL[best]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletPrediction {
    pub target: Span,
    pub opinion: Span,
    pub sentiment: Sentiment,
    pub probability: f64,
}

impl TripletPrediction {
    pub fn triplet(&self) -> Triplet {
        Triplet {
            target: self.target,
            opinion: self.opinion,
            sentiment: self.sentiment,
        }
    }
}

/// Keeps every pair whose argmax is a sentiment. Duplicate (target,
/// opinion) pairs keep the more probable one. Output is sorted by target
/// then opinion position.
pub fn decode_triplets(pairs: &[ScoredPair]) -> Vec<TripletPrediction> {
    let mut best: BTreeMap<(Span, Span), TripletPrediction> = BTreeMap::new();
    for pair in pairs {
        let label = argmax_relation(&pair.probs);
        let Some(sentiment) = label.sentiment() else {
            continue;
        };
        let candidate = TripletPrediction {
            target: pair.target,
            opinion: pair.opinion,
            sentiment,
            probability: pair.probs[label.index()],
        };
        best.entry((pair.target, pair.opinion))
            .and_modify(|existing| {
                if candidate.probability > existing.probability {
                    *existing = candidate;
                }
            })
            .or_insert(candidate);
    }
    best.into_values().collect()
}
