//! The full span-level triplet model: encoder, mention classifier with
//! pruning, and pair relation classifier.

use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{checkpoint, init, softmax, Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::data::Sentence;
use crate::encoder::{enumerate_spans, Embeddings, Encoder, EncoderConfig, Span, Vocabulary, NUM_BUCKETS};
use crate::error::{Error, Result};
use crate::mention::{predict_mentions, prune, ChannelMode, Pools, PruneConfig, SpanCandidate};
use crate::nn::Ffnn;
use crate::triplet::{decode_triplets, pair_representations, ScoredPair, TripletPrediction, NUM_RELATIONS};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CONFIG_FILE: &str = "model_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub distance_embedding_dim: usize,
    pub ffnn_hidden: usize,
    pub ffnn_layers: usize,
    pub ffnn_dropout: f64,
    pub prune: PruneConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            distance_embedding_dim: 128,
            ffnn_hidden: 150,
            ffnn_layers: 2,
            ffnn_dropout: 0.4,
            prune: PruneConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Small dimensions for fast tests and fixtures; everything else keeps
    /// the defaults.
    pub fn test_scale() -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                embedding_dim: 32,
                lstm_hidden: 32,
                width_embedding_dim: 8,
                ..EncoderConfig::default()
            },
            distance_embedding_dim: 8,
            ffnn_hidden: 64,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.prune.validate()?;
        if self.ffnn_hidden == 0 || self.distance_embedding_dim == 0 {
            return Err(Error::Config(
                "ffnn_hidden and distance_embedding_dim must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.ffnn_dropout) {
            return Err(Error::Config(format!(
                "ffnn_dropout {} outside [0, 1)",
                self.ffnn_dropout
            )));
        }
        Ok(())
    }

    pub fn span_dim(&self) -> usize {
        self.encoder.span_dim()
    }

    pub fn pair_dim(&self) -> usize {
        2 * self.span_dim()
            + if self.encoder.feature_embeddings {
                self.distance_embedding_dim
            } else {
                0
            }
    }
}

/// Vocabulary over the training tokens plus any development or test token
/// that has a pretrained vector.
pub fn build_vocabulary(train: &[Sentence], others: &[&[Sentence]], pretrained: Option<&Embeddings>) -> Vocabulary {
    let mut vocab = Vocabulary::new();
    for s in train {
        for t in &s.tokens {
            vocab.insert(t);
        }
    }
    if let Some(p) = pretrained {
        for s in others.iter().flat_map(|c| c.iter()) {
            for t in &s.tokens {
                if p.get(t).is_some() {
                    vocab.insert(t);
                }
            }
        }
    }
    vocab
}

/// Everything one forward pass produces for a sentence.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub n: usize,
    pub spans: Vec<Span>,
    /// `[spans × span_dim]`
    pub span_reps: Var,
    /// `[spans × classes]`
    pub mention_logits: Var,
    pub candidates: Vec<SpanCandidate>,
    pub pools: Pools,
    /// (target, opinion) indices into `spans`, target-major.
    pub pairs: Vec<(usize, usize)>,
    /// `[pairs × NUM_RELATIONS]`
    pub relation_logits: Var,
    pub relation_probs: Vec<[f64; NUM_RELATIONS]>,
}

impl ForwardOutput {
    pub fn target_pool(&self) -> Vec<Span> {
        self.pools.targets.iter().map(|&i| self.spans[i]).collect()
    }

    pub fn opinion_pool(&self) -> Vec<Span> {
        self.pools.opinions.iter().map(|&i| self.spans[i]).collect()
    }

    pub fn scored_pairs(&self) -> Vec<ScoredPair> {
        self.pairs
            .iter()
            .zip(&self.relation_probs)
            .map(|(&(t, o), probs)| ScoredPair {
                target: self.spans[t],
                opinion: self.spans[o],
                probs: *probs,
            })
            .collect()
    }

    pub fn triplets(&self) -> Vec<TripletPrediction> {
        decode_triplets(&self.scored_pairs())
    }
}

/// Output of inference on one sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub triplets: Vec<TripletPrediction>,
    /// Per-span mention argmax over all enumerated spans (empty for a
    /// single-channel model).
    pub targets: Vec<Span>,
    pub opinions: Vec<Span>,
    pub target_pool: Vec<Span>,
    pub opinion_pool: Vec<Span>,
    pub candidates: usize,
}

#[derive(Clone, Debug)]
pub struct SpanAste {
    config: ModelConfig,
    vocab: Vocabulary,
    params: ParamStore,
    encoder: Encoder,
    mention: Ffnn,
    relation: Ffnn,
    distance: Option<ParamId>,
}

impl SpanAste {
    /// A freshly initialized model; `seed` fixes every initial weight.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64, pretrained: Option<&Embeddings>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, &mut rng, &vocab, &config.encoder, pretrained)?;
        let hidden = vec![config.ffnn_hidden; config.ffnn_layers];
        let mention = Ffnn::new(
            &mut params,
            &mut rng,
            "mention",
            config.span_dim(),
            &hidden,
            config.prune.channel_mode.num_classes(),
            config.ffnn_dropout,
        )?;
        let distance = if config.encoder.feature_embeddings {
            Some(params.add(
                "pair.distance_embedding",
                ParamGroup::Other,
                init::normal(&[NUM_BUCKETS, config.distance_embedding_dim], 1.0, &mut rng)?,
            )?)
        } else {
            None
        };
        let relation = Ffnn::new(
            &mut params,
            &mut rng,
            "relation",
            config.pair_dim(),
            &hidden,
            NUM_RELATIONS,
            config.ffnn_dropout,
        )?;
        Ok(SpanAste {
            config,
            vocab,
            params,
            encoder,
            mention,
            relation,
            distance,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn mention_ffnn(&self) -> &Ffnn {
        &self.mention
    }

    pub fn relation_ffnn(&self) -> &Ffnn {
        &self.relation
    }

    pub fn distance_table(&self) -> Option<ParamId> {
        self.distance
    }

    pub fn forward(&self, g: &mut Graph, tokens: &[String]) -> Result<ForwardOutput> {
        self.forward_with(g, &self.params, tokens)
    }

    /// Forward pass reading weights from `store`, which must share this
    /// model's layout (used by gradient checking).
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, tokens: &[String]) -> Result<ForwardOutput> {
        let n = tokens.len();
        let h = self.encoder.encode(g, store, &self.vocab, tokens)?;
        let spans = enumerate_spans(n, self.config.encoder.max_span_width);
        let span_reps = self.encoder.span_representations(g, store, h, &spans)?;
        let mention_logits = self.mention.forward(g, store, span_reps)?;
        let classes = self.mention.output_dim();
        let candidates: Vec<SpanCandidate> = spans
            .iter()
            .zip(g.value(mention_logits).values().chunks(classes))
            .map(|(&span, logits)| SpanCandidate {
                span,
                probs: softmax(logits),
            })
            .collect();
        let pools = prune(&candidates, n, &self.config.prune)?;
        g.note_branch(
            pools
                .targets
                .iter()
                .chain([&usize::MAX])
                .chain(&pools.opinions)
                .map(|&i| i as u64),
        );
        let pairs = pools.pairs();
        let pair_reps = pair_representations(g, store, span_reps, &spans, &pairs, self.distance)?;
        let relation_logits = self.relation.forward(g, store, pair_reps)?;
        let relation_probs = g
            .value(relation_logits)
            .values()
            .chunks(NUM_RELATIONS)
            .map(|l| {
                let p = softmax(l);
                [p[0], p[1], p[2], p[3]]
            })
            .collect();
        Ok(ForwardOutput {
            n,
            spans,
            span_reps,
            mention_logits,
            candidates,
            pools,
            pairs,
            relation_logits,
            relation_probs,
        })
    }

    /// Inference without dropout.
    pub fn predict(&self, tokens: &[String]) -> Result<Prediction> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, tokens)?;
        let (targets, opinions) = match self.config.prune.channel_mode {
            ChannelMode::Dual => predict_mentions(&out.candidates)?,
            ChannelMode::Single => (Vec::new(), Vec::new()),
        };
        Ok(Prediction {
            triplets: out.triplets(),
            targets,
            opinions,
            target_pool: out.target_pool(),
            opinion_pool: out.opinion_pool(),
            candidates: out.candidates.len(),
        })
    }

    /// Predicted triplets for each sentence, as sentences with the same ids
    /// and tokens. Runs in parallel; the model is read-only.
    pub fn predict_corpus(&self, sentences: &[Sentence]) -> Result<Vec<Sentence>> {
        use rayon::prelude::*;
        sentences
            .par_iter()
            .map(|s| {
                let p = self.predict(&s.tokens)?;
                Ok(Sentence {
                    id: s.id,
                    tokens: s.tokens.clone(),
                    triplets: p.triplets.iter().map(TripletPrediction::triplet).collect(),
                })
            })
            .collect()
    }

    /// Writes weights, vocabulary and configuration into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        checkpoint::save(&self.params, &dir.join(CHECKPOINT_FILE))?;
        crate::io::write_atomic_str(&dir.join(VOCAB_FILE), &self.vocab.to_text())?;
        crate::io::write_atomic_str(&dir.join(CONFIG_FILE), &serde_json::to_string_pretty(&self.config)?)
    }

    /// Reads a model written by [`SpanAste::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(&std::fs::read_to_string(dir.join(CONFIG_FILE))?)?;
        let vocab = Vocabulary::from_text(&std::fs::read_to_string(dir.join(VOCAB_FILE))?)?;
        let mut model = SpanAste::new(config, vocab, 0, None)?;
        checkpoint::load(&mut model.params, &dir.join(CHECKPOINT_FILE))?;
        Ok(model)
    }

    /// Gold spans of `sentence` present in this model's pools, for the
    /// pruning diagnostics stream.
    pub fn prune_diagnostics(&self, sentence: &Sentence) -> Result<crate::mention::PruneDiagnostics> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, &sentence.tokens)?;
        let gold_t: BTreeSet<Span> = sentence.target_spans();
        let gold_o: BTreeSet<Span> = sentence.opinion_spans();
        Ok(crate::mention::PruneDiagnostics::new(
            sentence.id,
            out.n,
            &out.candidates,
            &out.pools,
            &gold_t,
            &gold_o,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::SpanMode;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(["the", "pizza", "was", "great", "."])
    }

    #[test]
    fn full_scale_dimensions() {
        let c = ModelConfig::default();
        assert_eq!(c.span_dim(), 1220);
        assert_eq!(c.pair_dim(), 2 * 1220 + 128);
    }

    #[test]
    fn forward_shapes_and_pool_sizes() {
        let model = SpanAste::new(ModelConfig::test_scale(), vocab(), 1, None).unwrap();
        let mut g = Graph::new();
        let out = model.forward(&mut g, &toks("the pizza was great .")).unwrap();
        assert_eq!(out.spans.len(), 15);
        assert_eq!(g.shape(out.span_reps), &[15, model.config().span_dim()]);
        assert_eq!(g.shape(out.mention_logits), &[15, 3]);
        assert_eq!(out.pools.targets.len(), 3);
        assert_eq!(out.pairs.len(), 9);
        assert_eq!(g.shape(out.relation_logits), &[9, 4]);
        for p in &out.relation_probs {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_channel_uses_two_classes_and_one_pool() {
        let mut cfg = ModelConfig::test_scale();
        cfg.prune.channel_mode = ChannelMode::Single;
        let model = SpanAste::new(cfg, vocab(), 1, None).unwrap();
        let mut g = Graph::new();
        let out = model.forward(&mut g, &toks("the pizza was great")).unwrap();
        assert_eq!(g.shape(out.mention_logits), &[10, 2]);
        assert_eq!(out.pools.targets, out.pools.opinions);
        assert_eq!(out.pairs.len(), 4);
    }

    #[test]
    fn ablation_changes_dimensions() {
        let mut cfg = ModelConfig::test_scale();
        let boundary = cfg.span_dim();
        cfg.encoder.span_mode = SpanMode::MaxPool;
        assert_eq!(cfg.span_dim(), boundary - 64);
        cfg.encoder.feature_embeddings = false;
        let model = SpanAste::new(cfg.clone(), vocab(), 2, None).unwrap();
        assert!(model.distance_table().is_none());
        assert!(model.params().id("encoder.width_embedding").is_none());
        let mut g = Graph::new();
        let out = model.forward(&mut g, &toks("the pizza")).unwrap();
        assert_eq!(g.shape(out.span_reps), &[3, 64]);
    }

    #[test]
    fn empty_sentence_is_rejected() {
        let model = SpanAste::new(ModelConfig::test_scale(), vocab(), 1, None).unwrap();
        assert!(matches!(model.predict(&[]), Err(Error::Input(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let model = SpanAste::new(ModelConfig::test_scale(), vocab(), 5, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = SpanAste::load(dir.path()).unwrap();
        assert!(back.params().bitwise_eq(model.params()));
        let s = toks("the pizza was great .");
        assert_eq!(back.predict(&s).unwrap(), model.predict(&s).unwrap());
    }

    #[test]
    fn loading_into_other_shape_names_parameter() {
        let model = SpanAste::new(ModelConfig::test_scale(), vocab(), 5, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let mut cfg = ModelConfig::test_scale();
        cfg.ffnn_hidden = 9;
        crate::io::write_atomic_str(&dir.path().join(CONFIG_FILE), &serde_json::to_string(&cfg).unwrap()).unwrap();
        match SpanAste::load(dir.path()) {
            Err(Error::Checkpoint { param, .. }) => assert!(param.starts_with("mention.")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn vocabulary_keeps_pretrained_dev_words_only() {
        let train = crate::data::parse_corpus("The pizza####[]\n").unwrap();
        let dev = crate::data::parse_corpus("the soup tasty####[]\n").unwrap();
        let emb = Embeddings::read("soup 1 2\n".as_bytes(), 2).unwrap();
        let v = build_vocabulary(&train, &[&dev], Some(&emb));
        assert!(v.get("soup").is_some());
        assert!(v.get("tasty").is_none());
        assert!(v.get("the").is_some());
        assert_eq!(v.len(), 4);
    }
}
