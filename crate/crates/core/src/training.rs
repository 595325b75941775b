//! Gold label assignment, the joint loss, the per-sentence training loop
//! and multi-seed experiments with development-set model selection.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamW, AdamWConfig, Graph, ParamStore, Var};
use crate::data::Sentence;
use crate::encoder::{Embeddings, Span, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{triplet_prf, EvalMode, Prf};
use crate::mention::{ChannelMode, MentionLabel};
use crate::model::{ForwardOutput, ModelConfig, SpanAste};
use crate::triplet::{RelationLabel, Triplet};

/// Gold labels for one forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GoldAssignment {
    pub mention: BTreeMap<Span, MentionLabel>,
    pub relation: BTreeMap<(Span, Span), RelationLabel>,
}

/// Labels every enumerated span: Target on an exact gold target match,
/// else Opinion on an exact gold opinion match, else Invalid.
pub fn assign_mention_labels(triplets: &[Triplet], spans: &[Span]) -> BTreeMap<Span, MentionLabel> {
    let targets: BTreeSet<Span> = triplets.iter().map(|t| t.target).collect();
    let opinions: BTreeSet<Span> = triplets.iter().map(|t| t.opinion).collect();
    let enumerated: BTreeSet<&Span> = spans.iter().collect();
    for gold in targets.iter().chain(&opinions) {
        if !enumerated.contains(gold) {
            log::warn!(
                "gold span {gold} (width {}) is not enumerable and gets no mention supervision",
                gold.width()
            );
        }
    }
    spans
        .iter()
        .map(|s| {
            let label = if targets.contains(s) {
                MentionLabel::Target
            } else if opinions.contains(s) {
                MentionLabel::Opinion
            } else {
                MentionLabel::Invalid
            };
            (*s, label)
        })
        .collect()
}

/// Labels every pruned pair with the gold sentiment of an exactly matching
/// gold triplet, else Invalid. When the gold data lists one pair twice, the
/// first sentiment wins.
pub fn assign_relation_labels(
    triplets: &[Triplet],
    targets: &[Span],
    opinions: &[Span],
) -> BTreeMap<(Span, Span), RelationLabel> {
    let mut gold: BTreeMap<(Span, Span), RelationLabel> = BTreeMap::new();
    for t in triplets {
        gold.entry((t.target, t.opinion)).or_insert(t.sentiment.into());
    }
    let mut out = BTreeMap::new();
    for &t in targets {
        for &o in opinions {
            out.insert((t, o), gold.get(&(t, o)).copied().unwrap_or(RelationLabel::Invalid));
        }
    }
    out
}

pub fn gold_assignment(triplets: &[Triplet], out: &ForwardOutput) -> GoldAssignment {
    GoldAssignment {
        mention: assign_mention_labels(triplets, &out.spans),
        relation: assign_relation_labels(triplets, &out.target_pool(), &out.opinion_pool()),
    }
}

/// The joint objective and its two terms.
#[derive(Clone, Copy, Debug)]
pub struct Loss {
    pub total: Var,
    pub mention: Var,
    pub relation: Var,
}

impl Loss {
    pub fn values(&self, g: &Graph) -> (f64, f64, f64) {
        (
            g.value(self.total).item(),
            g.value(self.mention).item(),
            g.value(self.relation).item(),
        )
    }
}

/// Summed negative log-likelihood of the gold mention label of every
/// enumerated span plus that of the gold relation label of every pair.
pub fn compute_loss(g: &mut Graph, out: &ForwardOutput, gold: &GoldAssignment) -> Result<Loss> {
    let mode = if g.shape(out.mention_logits).last() == Some(&2) {
        ChannelMode::Single
    } else {
        ChannelMode::Dual
    };
    let mention_gold = out
        .spans
        .iter()
        .map(|s| {
            gold.mention
                .get(s)
                .map(|l| l.class_index(mode))
                .ok_or_else(|| Error::TrainingState(format!("no mention label for span {s}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let relation_gold = out
        .pairs
        .iter()
        .map(|&(t, o)| {
            let key = (out.spans[t], out.spans[o]);
            gold.relation
                .get(&key)
                .map(|l| l.index())
                .ok_or_else(|| Error::TrainingState(format!("no relation label for pair {} {}", key.0, key.1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mention = g.softmax_nll(out.mention_logits, &mention_gold)?;
    let relation = g.softmax_nll(out.relation_logits, &relation_gold)?;
    let total = g.add(mention, relation)?;
    Ok(Loss {
        total,
        mention,
        relation,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            seeds: vec![11, 22, 33, 44, 55],
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub sentences: usize,
    pub mean_loss: f64,
    pub mean_mention_loss: f64,
    pub mean_relation_loss: f64,
    pub seconds: f64,
}

/// One optimizer step on one sentence. Returns (total, mention, relation).
pub fn train_step(
    model: &mut SpanAste,
    sentence: &Sentence,
    optimizer: &mut AdamW,
    dropout_seed: u64,
) -> Result<(f64, f64, f64)> {
    let mut g = Graph::training(dropout_seed);
    let out = model.forward(&mut g, &sentence.tokens)?;
    let gold = gold_assignment(&sentence.triplets, &out);
    let loss = compute_loss(&mut g, &out, &gold)?;
    let values = loss.values(&g);
    if !values.0.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss on sentence {} ({} tokens): mention {}, relation {}, {} spans, {} pairs",
            sentence.id,
            sentence.tokens.len(),
            values.1,
            values.2,
            out.spans.len(),
            out.pairs.len()
        )));
    }
    model.params_mut().zero_grad();
    g.backward(loss.total, model.params_mut())?;
    optimizer.step(model.params_mut())?;
    Ok(values)
}

/// One pass over `dataset` in an order shuffled by `rng`, one update per
/// sentence. Dropout masks are also drawn from `rng`.
pub fn train_epoch<R: Rng + ?Sized>(
    model: &mut SpanAste,
    dataset: &[Sentence],
    optimizer: &mut AdamW,
    rng: &mut R,
) -> Result<EpochStats> {
    if dataset.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let start = Instant::now();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    let mut sums = (0.0, 0.0, 0.0);
    for i in order {
        let (t, m, r) = train_step(model, &dataset[i], optimizer, rng.random())?;
        sums.0 += t;
        sums.1 += m;
        sums.2 += r;
    }
    let n = dataset.len() as f64;
    Ok(EpochStats {
        sentences: dataset.len(),
        mean_loss: sums.0 / n,
        mean_mention_loss: sums.1 / n,
        mean_relation_loss: sums.2 / n,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Train, development and test corpora.
#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_mention_loss: f64,
    pub mean_relation_loss: f64,
    pub dev: Prf,
}

/// A trained model with the epoch chosen on the development set.
#[derive(Clone, Debug)]
pub struct SelectedModel {
    pub model: SpanAste,
    pub selected_epoch: usize,
    pub curve: Vec<EpochRecord>,
}

/// Trains for `config.epochs` epochs and keeps the weights of the epoch
/// with the best development F1 (earliest on ties).
pub fn train_and_select(
    model_config: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
    vocab: &Vocabulary,
    pretrained: Option<&Embeddings>,
    train: &[Sentence],
    dev: &[Sentence],
) -> Result<SelectedModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Input("missing training split".into()));
    }
    if dev.is_empty() {
        return Err(Error::Input("missing development split".into()));
    }
    let mut model = SpanAste::new(model_config.clone(), vocab.clone(), seed, pretrained)?;
    let mut optimizer = AdamW::new(config.optimizer, model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let stats = train_epoch(&mut model, train, &mut optimizer, &mut rng)?;
        let dev_prf = triplet_prf(dev, &model.predict_corpus(dev)?, EvalMode::All)?;
        log::info!(
            "seed {seed} epoch {epoch}: loss {:.4} dev F1 {:.4} ({:.1}s)",
            stats.mean_loss,
            dev_prf.f1,
            stats.seconds
        );
        if best.as_ref().is_none_or(|b| dev_prf.f1 > b.0) {
            best = Some((dev_prf.f1, epoch, model.params().clone()));
        }
        curve.push(EpochRecord {
            epoch,
            mean_loss: stats.mean_loss,
            mean_mention_loss: stats.mean_mention_loss,
            mean_relation_loss: stats.mean_relation_loss,
            dev: dev_prf,
        });
    }
    let (_, selected_epoch, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    model.params_mut().clear_grad();
    Ok(SelectedModel {
        model,
        selected_epoch,
        curve,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub selected_epoch: usize,
    pub curve: Vec<EpochRecord>,
    pub checkpoint: Option<PathBuf>,
    pub test: Prf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: Vec<SeedReport>,
    /// Mean over seeds of each seed's precision, recall and F1.
    pub mean: MeanPrf,
    /// Metrics over the summed counts of all seeds.
    pub pooled: Prf,
}

impl ExperimentReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "config: span_mode={} z={} channel={} L={} epochs={} seeds={:?}\n",
            self.model.encoder.span_mode,
            self.model.prune.z,
            self.model.prune.channel_mode,
            self.model.encoder.max_span_width,
            self.train.epochs,
            self.train.seeds
        ));
        for s in &self.seeds {
            out.push_str(&format!("seed {}\n", s.seed));
            for e in &s.curve {
                let mark = if e.epoch == s.selected_epoch { " *" } else { "" };
                out.push_str(&format!(
                    "  epoch {:>3}  loss {:>10.4}  dev P {:.4} R {:.4} F1 {:.4}{mark}\n",
                    e.epoch, e.mean_loss, e.dev.precision, e.dev.recall, e.dev.f1
                ));
            }
            if let Some(path) = &s.checkpoint {
                out.push_str(&format!("  checkpoint {}\n", path.display()));
            }
            out.push_str(&format!(
                "  test P {:.4} R {:.4} F1 {:.4} (tp {} fp {} fn {})\n",
                s.test.precision, s.test.recall, s.test.f1, s.test.tp, s.test.fp, s.test.fn_
            ));
        }
        out.push_str(&format!(
            "mean   P {:.4} R {:.4} F1 {:.4} (std {:.4})\n",
            self.mean.precision, self.mean.recall, self.mean.f1, self.mean.f1_std
        ));
        out.push_str(&format!(
            "pooled P {:.4} R {:.4} F1 {:.4}\n",
            self.pooled.precision, self.pooled.recall, self.pooled.f1
        ));
        out
    }
}

pub fn mean_prf(rows: &[Prf]) -> MeanPrf {
    if rows.is_empty() {
        return MeanPrf::default();
    }
    let n = rows.len() as f64;
    let f1 = rows.iter().map(|r| r.f1).sum::<f64>() / n;
    MeanPrf {
        precision: rows.iter().map(|r| r.precision).sum::<f64>() / n,
        recall: rows.iter().map(|r| r.recall).sum::<f64>() / n,
        f1,
        f1_std: (rows.iter().map(|r| (r.f1 - f1).powi(2)).sum::<f64>() / n).sqrt(),
    }
}

/// Runs every seed: train, select on development F1, evaluate on test.
/// With `out_dir`, the selected model of each seed is saved under
/// `seed-<seed>/`.
pub fn run_experiment(
    model_config: &ModelConfig,
    config: &TrainConfig,
    splits: &Splits,
    vocab: &Vocabulary,
    pretrained: Option<&Embeddings>,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    config.validate()?;
    if splits.test.is_empty() {
        return Err(Error::Input("missing test split".into()));
    }
    let mut seeds = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let selected = train_and_select(
            model_config,
            config,
            seed,
            vocab,
            pretrained,
            &splits.train,
            &splits.dev,
        )?;
        let test = triplet_prf(
            &splits.test,
            &selected.model.predict_corpus(&splits.test)?,
            EvalMode::All,
        )?;
        let checkpoint = match out_dir {
            Some(dir) => {
                let path = dir.join(format!("seed-{seed}"));
                selected.model.save(&path)?;
                Some(path)
            }
            None => None,
        };
        seeds.push(SeedReport {
            seed,
            selected_epoch: selected.selected_epoch,
            curve: selected.curve,
            checkpoint,
            test,
        });
    }
    let tests: Vec<Prf> = seeds.iter().map(|s| s.test).collect();
    let pooled = tests.iter().fold(Prf::default(), |acc, p| acc.merge(p));
    Ok(ExperimentReport {
        model: model_config.clone(),
        train: config.clone(),
        mean: mean_prf(&tests),
        pooled,
        seeds,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::LN_2;

    use proptest::prelude::*;

    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, GradCheckConfig};
    use crate::data::{make_fixture, VocabSpec};
    use crate::encoder::enumerate_spans;
    use crate::triplet::Sentiment;

    fn sp(a: usize, b: usize) -> Span {
        Span::new(a, b).unwrap()
    }

    fn trip(t: Span, o: Span, s: Sentiment) -> Triplet {
        Triplet {
            target: t,
            opinion: o,
            sentiment: s,
        }
    }

    #[test]
    fn mention_labels_by_exact_match() {
        let spans = enumerate_spans(8, 8);
        let gold = [trip(sp(5, 6), sp(1, 2), Sentiment::Positive)];
        let labels = assign_mention_labels(&gold, &spans);
        assert_eq!(labels.len(), spans.len());
        assert_eq!(labels[&sp(5, 6)], MentionLabel::Target);
        assert_eq!(labels[&sp(1, 2)], MentionLabel::Opinion);
        assert_eq!(labels[&sp(5, 5)], MentionLabel::Invalid);
        assert_eq!(
            labels.values().filter(|l| **l == MentionLabel::Invalid).count(),
            spans.len() - 2
        );

        assert!(assign_mention_labels(&[], &spans)
            .values()
            .all(|l| *l == MentionLabel::Invalid));

        let both = [
            trip(sp(0, 0), sp(1, 1), Sentiment::Positive),
            trip(sp(2, 2), sp(0, 0), Sentiment::Negative),
        ];
        assert_eq!(assign_mention_labels(&both, &spans)[&sp(0, 0)], MentionLabel::Target);
    }

    #[test]
    fn relation_labels_for_hits_and_misses() {
        let gold = [trip(sp(0, 0), sp(2, 2), Sentiment::Negative)];
        let hit = assign_relation_labels(&gold, &[sp(0, 0), sp(1, 1)], &[sp(2, 2)]);
        assert_eq!(hit.len(), 2);
        assert_eq!(hit[&(sp(0, 0), sp(2, 2))], RelationLabel::Negative);
        assert_eq!(hit[&(sp(1, 1), sp(2, 2))], RelationLabel::Invalid);

        let miss = assign_relation_labels(&gold, &[sp(1, 1)], &[sp(2, 2)]);
        assert!(miss.values().all(|l| *l == RelationLabel::Invalid));
    }

    proptest! {
        #[test]
        fn relation_labels_match_brute_force(
            gold in prop::collection::vec((0usize..4, 0usize..4, 0usize..3), 0..5),
            targets in prop::collection::btree_set(0usize..4, 1..4),
            opinions in prop::collection::btree_set(0usize..4, 1..4),
        ) {
            let gold: Vec<Triplet> = gold.iter().map(|&(t, o, s)| trip(sp(t, t), sp(o, o), Sentiment::ALL[s])).collect();
            let ts: Vec<Span> = targets.iter().map(|&i| sp(i, i)).collect();
            let os: Vec<Span> = opinions.iter().map(|&i| sp(i, i)).collect();
            let got = assign_relation_labels(&gold, &ts, &os);
            prop_assert_eq!(got.len(), ts.len() * os.len());
            for t in &ts {
                for o in &os {
                    let expected = gold
                        .iter()
                        .find(|g| g.target == *t && g.opinion == *o)
                        .map(|g| RelationLabel::from(g.sentiment))
                        .unwrap_or(RelationLabel::Invalid);
                    prop_assert_eq!(got[&(*t, *o)], expected);
                }
            }
        }
    }

    fn tiny_model(seed: u64) -> (SpanAste, Vec<Sentence>) {
        let fixture = make_fixture(&mut ChaCha8Rng::seed_from_u64(seed), 4, &VocabSpec::default()).unwrap();
        let vocab = crate::model::build_vocabulary(&fixture.sentences, &[], None);
        let mut cfg = ModelConfig::test_scale();
        cfg.encoder.embedding_dim = 3;
        cfg.encoder.lstm_hidden = 3;
        cfg.encoder.width_embedding_dim = 2;
        cfg.distance_embedding_dim = 2;
        cfg.ffnn_hidden = 4;
        (SpanAste::new(cfg, vocab, seed, None).unwrap(), fixture.sentences)
    }

    #[test]
    fn uniform_outputs_give_closed_form_loss() {
        let (mut model, data) = tiny_model(1);
        let ids: Vec<_> = model
            .mention_ffnn()
            .param_ids()
            .into_iter()
            .chain(model.relation_ffnn().param_ids())
            .collect();
        for id in ids {
            model
                .params_mut()
                .get_mut(id)
                .value_mut()
                .values_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let s = &data[0];
        let mut g = Graph::new();
        let out = model.forward(&mut g, &s.tokens).unwrap();
        let gold = gold_assignment(&s.triplets, &out);
        let loss = compute_loss(&mut g, &out, &gold).unwrap();
        let (total, m, r) = loss.values(&g);
        let k = out.pools.targets.len() as f64;
        let expected = out.spans.len() as f64 * 3f64.ln() + k * k * 2.0 * LN_2;
        assert!((total - expected).abs() < 1e-9, "{total} vs {expected}");
        assert_eq!(total, m + r);
    }

    #[test]
    fn incomplete_labels_are_a_training_state_error() {
        let (model, data) = tiny_model(2);
        let mut g = Graph::new();
        let out = model.forward(&mut g, &data[0].tokens).unwrap();
        let mut gold = gold_assignment(&data[0].triplets, &out);
        gold.mention.pop_first();
        assert!(matches!(
            compute_loss(&mut g, &out, &gold),
            Err(Error::TrainingState(_))
        ));
    }

    #[test]
    fn total_loss_gradients_match_finite_differences() {
        let (mut model, data) = tiny_model(3);
        let s = data[1].clone();
        let frozen = model.clone();
        let report = check_gradients(model.params_mut(), GradCheckConfig::default(), |g, store| {
            let out = frozen.forward_with(g, store, &s.tokens)?;
            let gold = gold_assignment(&s.triplets, &out);
            Ok(compute_loss(g, &out, &gold)?.total)
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.checked > 100);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (mut model, _) = tiny_model(4);
        let mut opt = AdamW::new(AdamWConfig::default(), model.params());
        let err = train_epoch(&mut model, &[], &mut opt, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn epoch_is_bitwise_reproducible() {
        let run = || {
            let (mut model, data) = tiny_model(5);
            let mut opt = AdamW::new(AdamWConfig::default(), model.params());
            train_epoch(&mut model, &data, &mut opt, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            model
        };
        assert!(run().params().bitwise_eq(run().params()));
    }

    #[test]
    fn nan_weights_abort_with_numerical_error() {
        let (mut model, data) = tiny_model(6);
        let id = model.relation_ffnn().layers().last().unwrap().bias;
        model.params_mut().get_mut(id).value_mut().values_mut()[0] = f64::NAN;
        let mut opt = AdamW::new(AdamWConfig::default(), model.params());
        let err = train_epoch(&mut model, &data, &mut opt, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::Numerical(_))), "{err:?}");
    }

    #[test]
    fn experiment_report_arithmetic() {
        let (model, data) = tiny_model(7);
        let splits = Splits {
            train: data.clone(),
            dev: data.clone(),
            test: data.clone(),
        };
        let mut cfg = model.config().clone();
        cfg.encoder.lstm_dropout = 0.0;
        let tc = TrainConfig {
            epochs: 2,
            seeds: vec![3, 3],
            ..Default::default()
        };
        let r = run_experiment(&cfg, &tc, &splits, model.vocab(), None, None).unwrap();
        assert_eq!(r.seeds[0], r.seeds[1]);
        let f1s: Vec<f64> = r.seeds.iter().map(|s| s.test.f1).collect();
        assert!((r.mean.f1 - f1s.iter().sum::<f64>() / 2.0).abs() < 1e-15);
        assert_eq!(r.pooled.tp, 2 * r.seeds[0].test.tp);
        assert!(r.to_text().contains("pooled"));

        let one = TrainConfig {
            epochs: 1,
            seeds: vec![3],
            ..Default::default()
        };
        let r1 = run_experiment(&cfg, &one, &splits, model.vocab(), None, None).unwrap();
        assert_eq!(r1.mean.f1, r1.seeds[0].test.f1);
        assert_eq!(r1.pooled, r1.seeds[0].test);

        let missing = Splits { test: vec![], ..splits };
        assert!(matches!(
            run_experiment(&cfg, &one, &missing, model.vocab(), None, None),
            Err(Error::Input(_))
        ));
    }
}
