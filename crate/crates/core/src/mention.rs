//! Mention scoring and top-k span pruning.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, Graph, ParamStore};
use crate::encoder::{Span, SpanRepresentation};
use crate::error::{Error, Result};
use crate::nn::Ffnn;

/// Gold mention classes. With a single channel, Target and Opinion both map
/// to the Valid class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MentionLabel {
    Target,
    Opinion,
    Invalid,
}

impl MentionLabel {
    pub fn class_index(self, mode: ChannelMode) -> usize {
        match (mode, self) {
            (ChannelMode::Dual, label) => label as usize,
            (ChannelMode::Single, MentionLabel::Invalid) => 1,
            (ChannelMode::Single, _) => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    #[default]
    Dual,
    Single,
}

impl ChannelMode {
    /// Width of the mention classifier output.
    pub fn num_classes(self) -> usize {
        match self {
            ChannelMode::Dual => 3,
            ChannelMode::Single => 2,
        }
    }
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(ChannelMode::Dual),
            "single" => Ok(ChannelMode::Single),
            other => Err(Error::Config(format!(
                "unknown channel mode `{other}` (expected dual or single)"
            ))),
        }
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelMode::Dual => "dual",
            ChannelMode::Single => "single",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    /// Pool size as a fraction of sentence length.
    pub z: f64,
    pub channel_mode: ChannelMode,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            z: 0.5,
            channel_mode: ChannelMode::Dual,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.z.is_finite() && self.z > 0.0) {
            return Err(Error::Config(format!(
                "pruning ratio z must be positive, got {}",
                self.z
            )));
        }
        Ok(())
    }
}

/// An enumerated span with its mention distribution: three entries
/// (target, opinion, invalid) for dual channel, two (valid, invalid) for
/// single channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanCandidate {
    pub span: Span,
    pub probs: Vec<f64>,
}

/// Mention distribution for one span representation.
pub fn mention_scores(g: &mut Graph, store: &ParamStore, ffnn: &Ffnn, rep: &SpanRepresentation) -> Result<Vec<f64>> {
    let logits = ffnn.forward(g, store, rep.vector)?;
    Ok(softmax(g.value(logits).values()))
}

/// `min(ceil(n * z), candidates)`, at least one.
pub fn pool_size(n: usize, z: f64, candidates: usize) -> usize {
    let k = (n as f64 * z - 1e-9).ceil().max(1.0) as usize;
    k.min(candidates).max(1)
}

fn top_k(candidates: &[SpanCandidate], k: usize, class: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&candidates[a], &candidates[b]);
        cb.probs[class]
            .total_cmp(&ca.probs[class])
            .then_with(|| ca.span.cmp(&cb.span))
    });
    order.truncate(k);
    order
}

fn check_candidates(candidates: &[SpanCandidate], mode: ChannelMode) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::Input("no candidate spans to prune".into()));
    }
    let want = mode.num_classes();
    if let Some(c) = candidates.iter().find(|c| c.probs.len() != want) {
        return Err(Error::Config(format!(
            "{mode}-channel pruning needs {want}-class mention scores, span {} has {}",
            c.span,
            c.probs.len()
        )));
    }
    Ok(())
}

/// Indices into the candidate list, best first.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pools {
    pub targets: Vec<usize>,
    pub opinions: Vec<usize>,
}

impl Pools {
    /// Every (target, opinion) index pair, target-major.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.targets
            .iter()
            .flat_map(|&t| self.opinions.iter().map(move |&o| (t, o)))
            .collect()
    }
}

/// Keeps the `k` most target-like and the `k` most opinion-like spans.
/// Ties in score are broken by span position.
pub fn prune_dual_channel(candidates: &[SpanCandidate], n: usize, z: f64) -> Result<Pools> {
    check_candidates(candidates, ChannelMode::Dual)?;
    let k = pool_size(n, z, candidates.len());
    Ok(Pools {
        targets: top_k(candidates, k, MentionLabel::Target as usize),
        opinions: top_k(candidates, k, MentionLabel::Opinion as usize),
    })
}

/// Keeps the `k` spans most likely to be any valid mention; they serve as
/// both targets and opinions.
pub fn prune_single_channel(candidates: &[SpanCandidate], n: usize, z: f64) -> Result<Vec<usize>> {
    check_candidates(candidates, ChannelMode::Single)?;
    let k = pool_size(n, z, candidates.len());
    Ok(top_k(candidates, k, 0))
}

pub fn prune(candidates: &[SpanCandidate], n: usize, config: &PruneConfig) -> Result<Pools> {
    match config.channel_mode {
        ChannelMode::Dual => prune_dual_channel(candidates, n, config.z),
        ChannelMode::Single => {
            let pool = prune_single_channel(candidates, n, config.z)?;
            Ok(Pools {
                targets: pool.clone(),
                opinions: pool,
            })
        }
    }
}

/// Per-span argmax decoding of the mention classifier (dual channel only).
/// Ties go to Target, then Opinion.
pub fn predict_mentions(candidates: &[SpanCandidate]) -> Result<(Vec<Span>, Vec<Span>)> {
    let (mut targets, mut opinions) = (Vec::new(), Vec::new());
    for c in candidates {
        if c.probs.len() != 3 {
            return Err(Error::Config("mention argmax needs the dual-channel classifier".into()));
        }
        let (t, o, i) = (c.probs[0], c.probs[1], c.probs[2]);
        if t >= o && t >= i {
            targets.push(c.span);
        } else if o >= i {
            opinions.push(c.span);
        }
    }
    Ok((targets, opinions))
}

/// Fraction of gold spans present in `pool`, `None` without gold spans.
pub fn pool_recall(pool: &[Span], gold: &BTreeSet<Span>) -> Option<f64> {
    if gold.is_empty() {
        return None;
    }
    let pool: BTreeSet<&Span> = pool.iter().collect();
    let hit = gold.iter().filter(|s| pool.contains(s)).count();
    Some(hit as f64 / gold.len() as f64)
}

/// One record of the pruning diagnostics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneDiagnostics {
    pub sentence: usize,
    pub n: usize,
    pub k: usize,
    pub candidates: usize,
    pub targets: Vec<Span>,
    pub opinions: Vec<Span>,
    pub target_recall: Option<f64>,
    pub opinion_recall: Option<f64>,
}

impl PruneDiagnostics {
    pub fn new(
        sentence: usize,
        n: usize,
        candidates: &[SpanCandidate],
        pools: &Pools,
        gold_targets: &BTreeSet<Span>,
        gold_opinions: &BTreeSet<Span>,
    ) -> Self {
        let targets: Vec<Span> = pools.targets.iter().map(|&i| candidates[i].span).collect();
        let opinions: Vec<Span> = pools.opinions.iter().map(|&i| candidates[i].span).collect();
        PruneDiagnostics {
            sentence,
            n,
            k: pools.targets.len(),
            candidates: candidates.len(),
            target_recall: pool_recall(&targets, gold_targets),
            opinion_recall: pool_recall(&opinions, gold_opinions),
            targets,
            opinions,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("diagnostics serialize")
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::encoder::enumerate_spans;

    fn cand(a: usize, b: usize, probs: &[f64]) -> SpanCandidate {
        SpanCandidate {
            span: Span::new(a, b).unwrap(),
            probs: probs.to_vec(),
        }
    }

    #[test]
    fn pool_sizes() {
        assert_eq!(pool_size(4, 0.5, 100), 2);
        assert_eq!(pool_size(5, 0.5, 100), 3);
        assert_eq!(pool_size(1, 0.5, 100), 1);
        assert_eq!(pool_size(10, 1.0, 3), 3);
        assert_eq!(pool_size(10, 0.3, 100), 3);
        assert_eq!(pool_size(1, 0.01, 100), 1);
    }

    #[test]
    fn dual_pools_with_ties_by_position() {
        let c = vec![
            cand(0, 0, &[0.5, 0.1, 0.4]),
            cand(0, 1, &[0.5, 0.2, 0.3]),
            cand(1, 1, &[0.1, 0.8, 0.1]),
            cand(2, 2, &[0.6, 0.3, 0.1]),
        ];
        let pools = prune_dual_channel(&c, 4, 0.5).unwrap();
        assert_eq!(pools.targets, vec![3, 0]);
        assert_eq!(pools.opinions, vec![2, 3]);
        assert_eq!(pools.pairs(), vec![(3, 2), (3, 3), (0, 2), (0, 3)]);
    }

    #[test]
    fn single_pool_is_shared() {
        let c = vec![
            cand(0, 0, &[0.9, 0.1]),
            cand(1, 1, &[0.2, 0.8]),
            cand(2, 2, &[0.7, 0.3]),
        ];
        let cfg = PruneConfig {
            z: 0.5,
            channel_mode: ChannelMode::Single,
        };
        let pools = prune(&c, 4, &cfg).unwrap();
        assert_eq!(pools.targets, vec![0, 2]);
        assert_eq!(pools.targets, pools.opinions);
        assert_eq!(pools.pairs().len(), 4);
    }

    #[test]
    fn misconfigured_inputs_are_rejected() {
        assert!(matches!(prune_dual_channel(&[], 3, 0.5), Err(Error::Input(_))));
        let two = vec![cand(0, 0, &[0.5, 0.5])];
        assert!(matches!(prune_dual_channel(&two, 1, 0.5), Err(Error::Config(_))));
        let three = vec![cand(0, 0, &[0.3, 0.3, 0.4])];
        assert!(matches!(prune_single_channel(&three, 1, 0.5), Err(Error::Config(_))));
        assert!("both".parse::<ChannelMode>().is_err());
    }

    #[test]
    fn class_indices() {
        assert_eq!(MentionLabel::Opinion.class_index(ChannelMode::Dual), 1);
        assert_eq!(MentionLabel::Opinion.class_index(ChannelMode::Single), 0);
        assert_eq!(MentionLabel::Invalid.class_index(ChannelMode::Single), 1);
    }

    #[test]
    fn argmax_mentions() {
        let c = vec![
            cand(0, 0, &[0.4, 0.4, 0.2]),
            cand(1, 1, &[0.2, 0.5, 0.3]),
            cand(2, 2, &[0.1, 0.1, 0.8]),
        ];
        let (t, o) = predict_mentions(&c).unwrap();
        assert_eq!(t, vec![Span::new(0, 0).unwrap()]);
        assert_eq!(o, vec![Span::new(1, 1).unwrap()]);
    }

    #[test]
    fn diagnostics_line() {
        let c = vec![cand(0, 0, &[0.9, 0.05, 0.05]), cand(1, 1, &[0.1, 0.8, 0.1])];
        let pools = prune_dual_channel(&c, 2, 0.5).unwrap();
        let gold_t: BTreeSet<Span> = [Span::new(0, 0).unwrap()].into();
        let gold_o: BTreeSet<Span> = [Span::new(0, 1).unwrap(), Span::new(1, 1).unwrap()].into();
        let d = PruneDiagnostics::new(7, 2, &c, &pools, &gold_t, &gold_o);
        assert_eq!(d.k, 1);
        assert_eq!(d.target_recall, Some(1.0));
        assert_eq!(d.opinion_recall, Some(0.5));
        let line = d.to_json_line();
        assert!(!line.contains('\n'));
        let back: PruneDiagnostics = serde_json::from_str(&line).unwrap();
        assert_eq!(back, d);
        assert_eq!(pool_recall(&[], &BTreeSet::new()), None);
    }

    /// Brute-force oracle: sort the full list by the total key.
    fn oracle(c: &[SpanCandidate], k: usize, class: usize) -> Vec<Span> {
        let mut v: Vec<&SpanCandidate> = c.iter().collect();
        v.sort_by(|a, b| {
            b.probs[class]
                .partial_cmp(&a.probs[class])
                .unwrap()
                .then(a.span.start.cmp(&b.span.start))
                .then(a.span.end.cmp(&b.span.end))
        });
        v.into_iter().take(k).map(|c| c.span).collect()
    }

    fn arb_candidates() -> impl Strategy<Value = (usize, Vec<SpanCandidate>, f64)> {
        (
            1usize..12,
            1usize..5,
            prop::sample::select(vec![0.1, 0.25, 0.5, 0.75, 1.0, 1.5]),
        )
            .prop_flat_map(|(n, l, z)| {
                let spans = enumerate_spans(n, l);
                let m = spans.len();
                // coarse scores so ties occur often
                prop::collection::vec(prop::array::uniform3(0u8..4), m).prop_map(move |raw| {
                    let c = spans
                        .iter()
                        .zip(raw)
                        .map(|(s, r)| {
                            let w: Vec<f64> = r.iter().map(|&x| x as f64 + 1.0).collect();
                            let sum: f64 = w.iter().sum();
                            SpanCandidate {
                                span: *s,
                                probs: w.iter().map(|x| x / sum).collect(),
                            }
                        })
                        .collect();
                    (n, c, z)
                })
            })
    }

    proptest! {
        #[test]
        fn dual_pruning_matches_brute_force((n, c, z) in arb_candidates()) {
            let pools = prune_dual_channel(&c, n, z).unwrap();
            let k = ((n as f64 * z).ceil() as usize).max(1).min(c.len());
            prop_assert_eq!(pools.targets.len(), k);
            prop_assert_eq!(pools.opinions.len(), k);
            let t: Vec<Span> = pools.targets.iter().map(|&i| c[i].span).collect();
            let o: Vec<Span> = pools.opinions.iter().map(|&i| c[i].span).collect();
            prop_assert_eq!(t, oracle(&c, k, 0));
            prop_assert_eq!(o, oracle(&c, k, 1));
            prop_assert_eq!(pools.pairs().len(), k * k);
            let uniq: BTreeSet<_> = pools.targets.iter().collect();
            prop_assert_eq!(uniq.len(), k);
        }

        #[test]
        fn pruning_ignores_candidate_order((n, c, z) in arb_candidates(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = c.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = prune_dual_channel(&c, n, z).unwrap();
            let b = prune_dual_channel(&shuffled, n, z).unwrap();
            let spans = |p: &[usize], c: &[SpanCandidate]| p.iter().map(|&i| c[i].span).collect::<Vec<_>>();
            prop_assert_eq!(spans(&a.targets, &c), spans(&b.targets, &shuffled));
            prop_assert_eq!(spans(&a.opinions, &c), spans(&b.opinions, &shuffled));
        }
    }
}
