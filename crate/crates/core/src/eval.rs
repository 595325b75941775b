//! Exact-match metrics: triplets under the word-count breakdowns, direct
//! and triplet-derived target/opinion extraction, and the pruning sweep.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::Sentence;
use crate::encoder::{Embeddings, Span, Vocabulary};
use crate::error::{Error, Result};
use crate::mention::{prune, ChannelMode, PruneConfig};
use crate::model::{ModelConfig, SpanAste};
use crate::training::{train_and_select, TrainConfig};
use crate::triplet::Triplet;

/// Micro-averaged precision, recall and F1 with the underlying counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }

    /// Metrics over the summed counts.
    pub fn merge(&self, other: &Prf) -> Prf {
        Prf::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    All,
    SingleWord,
    MultiWord,
    MultiWordTarget,
    MultiWordOpinion,
}

impl EvalMode {
    pub const ALL: [EvalMode; 5] = [
        EvalMode::All,
        EvalMode::SingleWord,
        EvalMode::MultiWord,
        EvalMode::MultiWordTarget,
        EvalMode::MultiWordOpinion,
    ];

    pub fn accepts(self, t: &Triplet) -> bool {
        match self {
            EvalMode::All => true,
            EvalMode::SingleWord => t.is_single_word(),
            EvalMode::MultiWord => !t.is_single_word(),
            EvalMode::MultiWordTarget => !t.target.is_single_word(),
            EvalMode::MultiWordOpinion => !t.opinion.is_single_word(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::All => "all",
            EvalMode::SingleWord => "single_word",
            EvalMode::MultiWord => "multi_word",
            EvalMode::MultiWordTarget => "multi_word_target",
            EvalMode::MultiWordOpinion => "multi_word_opinion",
        }
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EvalMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown evaluation mode `{s}`")))
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which side a mode filter applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterSide {
    Both,
    GoldOnly,
}

fn align<'a>(gold: &'a [Sentence], pred: &'a [Sentence]) -> Result<Vec<(&'a Sentence, Option<&'a Sentence>)>> {
    let by_id: BTreeMap<usize, &Sentence> = pred.iter().map(|s| (s.id, s)).collect();
    let gold_ids: BTreeSet<usize> = gold.iter().map(|s| s.id).collect();
    if let Some(bad) = pred.iter().find(|s| !gold_ids.contains(&s.id)) {
        return Err(Error::Input(format!("prediction for unknown sentence id {}", bad.id)));
    }
    Ok(gold.iter().map(|g| (g, by_id.get(&g.id).copied())).collect())
}

fn count<T: Ord>(gold: &BTreeSet<T>, pred: &BTreeSet<T>) -> (usize, usize, usize) {
    let tp = gold.intersection(pred).count();
    (tp, pred.len() - tp, gold.len() - tp)
}

/// Triplet metrics with `mode` filtering applied to both sides.
pub fn triplet_prf(gold: &[Sentence], pred: &[Sentence], mode: EvalMode) -> Result<Prf> {
    triplet_prf_with(gold, pred, mode, FilterSide::Both)
}

/// Triplet metrics; a prediction counts only when target, opinion and
/// sentiment all match a gold triplet exactly.
pub fn triplet_prf_with(gold: &[Sentence], pred: &[Sentence], mode: EvalMode, side: FilterSide) -> Result<Prf> {
    let pairs = align(gold, pred)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (g, p) in pairs {
        let gs: BTreeSet<Triplet> = g.triplets.iter().copied().filter(|t| mode.accepts(t)).collect();
        let ps: BTreeSet<Triplet> = p
            .map(|p| {
                p.triplets
                    .iter()
                    .copied()
                    .filter(|t| side == FilterSide::GoldOnly || mode.accepts(t))
                    .collect()
            })
            .unwrap_or_default();
        let c = count(&gs, &ps);
        tp += c.0;
        fp += c.1;
        fn_ += c.2;
    }
    Ok(Prf::from_counts(tp, fp, fn_))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MentionTask {
    /// Target (aspect) term extraction.
    Ate,
    /// Opinion term extraction.
    Ote,
}

impl MentionTask {
    fn gold(self, s: &Sentence) -> BTreeSet<Span> {
        match self {
            MentionTask::Ate => s.target_spans(),
            MentionTask::Ote => s.opinion_spans(),
        }
    }
}

/// Span metrics for predicted span sets keyed by sentence id.
pub fn span_prf(gold: &[Sentence], pred: &BTreeMap<usize, BTreeSet<Span>>, task: MentionTask) -> Result<Prf> {
    let gold_ids: BTreeSet<usize> = gold.iter().map(|s| s.id).collect();
    if let Some(bad) = pred.keys().find(|id| !gold_ids.contains(id)) {
        return Err(Error::Input(format!("prediction for unknown sentence id {bad}")));
    }
    let empty = BTreeSet::new();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for g in gold {
        let c = count(&task.gold(g), pred.get(&g.id).unwrap_or(&empty));
        tp += c.0;
        fp += c.1;
        fn_ += c.2;
    }
    Ok(Prf::from_counts(tp, fp, fn_))
}

/// Direct extraction: every enumerated span whose mention argmax is the
/// task's class.
pub fn mention_prf(model: &SpanAste, gold: &[Sentence], task: MentionTask) -> Result<Prf> {
    if model.config().prune.channel_mode != ChannelMode::Dual {
        return Err(Error::Config(
            "direct term extraction needs a dual-channel model".into(),
        ));
    }
    let pred = gold
        .par_iter()
        .map(|s| {
            let p = model.predict(&s.tokens)?;
            let spans = match task {
                MentionTask::Ate => p.targets,
                MentionTask::Ote => p.opinions,
            };
            Ok((s.id, spans.into_iter().collect()))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    span_prf(gold, &pred, task)
}

/// Extraction read off predicted triplets: the distinct target (or
/// opinion) spans of each sentence's triplets.
pub fn mention_prf_from_triplets(gold: &[Sentence], pred: &[Sentence], task: MentionTask) -> Result<Prf> {
    let spans = pred
        .iter()
        .map(|s| {
            let set = s
                .triplets
                .iter()
                .map(|t| match task {
                    MentionTask::Ate => t.target,
                    MentionTask::Ote => t.opinion,
                })
                .collect();
            (s.id, set)
        })
        .collect();
    span_prf(gold, &spans, task)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeRow {
    pub mode: EvalMode,
    /// Filter on gold and predictions (headline).
    pub both: Prf,
    /// Filter on gold only.
    pub gold_only: Prf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub triplets: Vec<ModeRow>,
    pub ate: Option<Prf>,
    pub ote: Option<Prf>,
    pub ate_from_triplets: Prf,
    pub ote_from_triplets: Prf,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<28} {:>7} {:>7} {:>7} {:>6} {:>6} {:>6}   {:>7} {:>7} {:>7}\n",
            "task", "P", "R", "F1", "tp", "fp", "fn", "P(gold)", "R(gold)", "F1(gold)"
        );
        let row = |name: &str, p: &Prf| {
            format!(
                "{:<28} {:>7.4} {:>7.4} {:>7.4} {:>6} {:>6} {:>6}",
                name, p.precision, p.recall, p.f1, p.tp, p.fp, p.fn_
            )
        };
        for r in &self.triplets {
            out.push_str(&row(&format!("triplet/{}", r.mode), &r.both));
            out.push_str(&format!(
                "   {:>7.4} {:>7.4} {:>7.4}\n",
                r.gold_only.precision, r.gold_only.recall, r.gold_only.f1
            ));
        }
        let mut extra = |name: &str, p: Option<&Prf>| {
            if let Some(p) = p {
                out.push_str(&row(name, p));
                out.push('\n');
            }
        };
        extra("ate/direct", self.ate.as_ref());
        extra("ote/direct", self.ote.as_ref());
        extra("ate/from_triplets", Some(&self.ate_from_triplets));
        extra("ote/from_triplets", Some(&self.ote_from_triplets));
        out
    }
}

/// Report for already-decoded predictions (no direct term extraction).
pub fn evaluate_predictions(gold: &[Sentence], pred: &[Sentence], modes: &[EvalMode]) -> Result<EvalReport> {
    let triplets = modes
        .iter()
        .map(|&mode| {
            Ok(ModeRow {
                mode,
                both: triplet_prf_with(gold, pred, mode, FilterSide::Both)?,
                gold_only: triplet_prf_with(gold, pred, mode, FilterSide::GoldOnly)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        triplets,
        ate: None,
        ote: None,
        ate_from_triplets: mention_prf_from_triplets(gold, pred, MentionTask::Ate)?,
        ote_from_triplets: mention_prf_from_triplets(gold, pred, MentionTask::Ote)?,
    })
}

/// Full report for a model on a gold corpus.
pub fn evaluate_model(model: &SpanAste, gold: &[Sentence], modes: &[EvalMode]) -> Result<EvalReport> {
    let pred = model.predict_corpus(gold)?;
    let mut report = evaluate_predictions(gold, &pred, modes)?;
    if model.config().prune.channel_mode == ChannelMode::Dual {
        report.ate = Some(mention_prf(model, gold, MentionTask::Ate)?);
        report.ote = Some(mention_prf(model, gold, MentionTask::Ote)?);
    }
    Ok(report)
}

/// Pool sizes and gold recall of a model's pruning over a corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolStats {
    pub sentences: usize,
    pub candidates: usize,
    /// Sum of per-sentence pool sizes (one pool).
    pub pool_size: usize,
    pub pairs: usize,
    /// Distinct spans in the target and opinion pools, summed per sentence.
    pub distinct_spans: usize,
    pub gold_targets: usize,
    pub gold_targets_kept: usize,
    pub gold_opinions: usize,
    pub gold_opinions_kept: usize,
}

impl PoolStats {
    pub fn target_recall(&self) -> f64 {
        ratio(self.gold_targets_kept, self.gold_targets)
    }

    pub fn opinion_recall(&self) -> f64 {
        ratio(self.gold_opinions_kept, self.gold_opinions)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Prunes `model`'s mention scores with `config` (which may differ from
/// the model's own) and tallies the pools.
pub fn pool_stats(model: &SpanAste, sentences: &[Sentence], config: &PruneConfig) -> Result<PoolStats> {
    if config.channel_mode != model.config().prune.channel_mode {
        return Err(Error::Config("pruning channel mode must match the model".into()));
    }
    let per_sentence = sentences
        .par_iter()
        .map(|s| {
            let mut g = Graph::new();
            let out = model.forward(&mut g, &s.tokens)?;
            let pools = prune(&out.candidates, out.n, config)?;
            let spans = |idx: &[usize]| idx.iter().map(|&i| out.spans[i]).collect::<Vec<_>>();
            let (t, o) = (spans(&pools.targets), spans(&pools.opinions));
            let distinct: BTreeSet<Span> = t.iter().chain(&o).copied().collect();
            let (gt, go) = (s.target_spans(), s.opinion_spans());
            let kept = |pool: &[Span], gold: &BTreeSet<Span>| gold.iter().filter(|s| pool.contains(s)).count();
            Ok(PoolStats {
                sentences: 1,
                candidates: out.candidates.len(),
                pool_size: t.len(),
                pairs: t.len() * o.len(),
                distinct_spans: distinct.len(),
                gold_targets: gt.len(),
                gold_targets_kept: kept(&t, &gt),
                gold_opinions: go.len(),
                gold_opinions_kept: kept(&o, &go),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_sentence.into_iter().fold(PoolStats::default(), |a, b| PoolStats {
        sentences: a.sentences + b.sentences,
        candidates: a.candidates + b.candidates,
        pool_size: a.pool_size + b.pool_size,
        pairs: a.pairs + b.pairs,
        distinct_spans: a.distinct_spans + b.distinct_spans,
        gold_targets: a.gold_targets + b.gold_targets,
        gold_targets_kept: a.gold_targets_kept + b.gold_targets_kept,
        gold_opinions: a.gold_opinions + b.gold_opinions,
        gold_opinions_kept: a.gold_opinions_kept + b.gold_opinions_kept,
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepSetting {
    Dual,
    Single,
    /// Single channel at twice the nominal threshold.
    SingleAdjusted,
}

impl SweepSetting {
    pub const ALL: [SweepSetting; 3] = [SweepSetting::Dual, SweepSetting::Single, SweepSetting::SingleAdjusted];

    pub fn name(self) -> &'static str {
        match self {
            SweepSetting::Dual => "dual",
            SweepSetting::Single => "single",
            SweepSetting::SingleAdjusted => "single_adjusted",
        }
    }

    pub fn prune_config(self, z: f64) -> PruneConfig {
        match self {
            SweepSetting::Dual => PruneConfig {
                z,
                channel_mode: ChannelMode::Dual,
            },
            SweepSetting::Single => PruneConfig {
                z,
                channel_mode: ChannelMode::Single,
            },
            SweepSetting::SingleAdjusted => PruneConfig {
                z: 2.0 * z,
                channel_mode: ChannelMode::Single,
            },
        }
    }
}

impl FromStr for SweepSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepSetting::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep setting `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: SweepSetting,
    /// Nominal threshold; the adjusted setting trains at twice this.
    pub z: f64,
    pub effective_z: f64,
    pub selected_epoch: usize,
    pub dev: Prf,
    pub pools: PoolStats,
}

/// Trains one model per (z, setting) with the first configured seed and
/// reports development F1 and pool statistics.
#[allow(clippy::too_many_arguments)]
pub fn prune_sweep(
    base: &ModelConfig,
    train_config: &TrainConfig,
    vocab: &Vocabulary,
    pretrained: Option<&Embeddings>,
    train: &[Sentence],
    dev: &[Sentence],
    zs: &[f64],
    settings: &[SweepSetting],
) -> Result<Vec<SweepRow>> {
    if zs.is_empty() {
        return Err(Error::Config("z list is empty".into()));
    }
    if settings.is_empty() {
        return Err(Error::Config("no sweep settings".into()));
    }
    train_config.validate()?;
    let seed = train_config.seeds[0];
    let mut rows = Vec::new();
    for &z in zs {
        for &setting in settings {
            let mut cfg = base.clone();
            cfg.prune = setting.prune_config(z);
            let selected = train_and_select(&cfg, train_config, seed, vocab, pretrained, train, dev)?;
            let dev_prf = triplet_prf(dev, &selected.model.predict_corpus(dev)?, EvalMode::All)?;
            rows.push(SweepRow {
                setting,
                z,
                effective_z: cfg.prune.z,
                selected_epoch: selected.selected_epoch,
                dev: dev_prf,
                pools: pool_stats(&selected.model, dev, &cfg.prune)?,
            });
        }
    }
    Ok(rows)
}

/// Aligned table; the columns after the setting name are plot-ready.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:<16} {:>6} {:>6} {:>8} {:>10} {:>8} {:>8} {:>8} {:>8}\n",
        "setting", "z", "z_eff", "pool", "pairs", "spans", "rec_t", "rec_o", "dev_f1"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:>6.3} {:>6.3} {:>8} {:>10} {:>8} {:>8.4} {:>8.4} {:>8.4}\n",
            r.setting.name(),
            r.z,
            r.effective_z,
            r.pools.pool_size,
            r.pools.pairs,
            r.pools.distinct_spans,
            r.pools.target_recall(),
            r.pools.opinion_recall(),
            r.dev.f1
        ));
    }
    out
}
