//! Planted-partition graphs whose node texts are drawn from per-community
//! topic vocabularies. Used as a desk-scale stand-in for citation and
//! co-purchase datasets.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeRecord, TextAttributedGraph};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n: usize,
    pub communities: usize,
    pub intra_p: f64,
    pub inter_p: f64,
    pub vocab_per_community: usize,
    /// Inclusive range of sentences per node text.
    pub sentences_per_node: (usize, usize),
    /// Inclusive range of words per sentence.
    pub words_per_sentence: (usize, usize),
    /// Probability that a word is drawn from the community vocabulary
    /// rather than the shared filler list.
    pub topic_word_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 400,
            communities: 5,
            intra_p: 0.08,
            inter_p: 0.004,
            vocab_per_community: 40,
            sentences_per_node: (4, 8),
            words_per_sentence: (6, 10),
            topic_word_rate: 0.6,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.communities < 2 {
            return fail(format!("synthetic.communities must be >= 2, got {}", self.communities));
        }
        if self.n < self.communities {
            return fail(format!(
                "synthetic.n ({}) must be at least the community count ({})",
                self.n, self.communities
            ));
        }
        for (name, p) in [("intra_p", self.intra_p), ("inter_p", self.inter_p)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("synthetic.{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.intra_p <= self.inter_p {
            return fail(format!(
                "synthetic.intra_p ({}) must exceed inter_p ({})",
                self.intra_p, self.inter_p
            ));
        }
        if self.vocab_per_community == 0 {
            return fail("synthetic.vocab_per_community must be >= 1".into());
        }
        let ranges = [
            ("sentences_per_node", self.sentences_per_node),
            ("words_per_sentence", self.words_per_sentence),
        ];
        for (name, (lo, hi)) in ranges {
            if lo == 0 || lo > hi {
                return fail(format!("synthetic.{name} must be a range [lo, hi] with 1 <= lo <= hi"));
            }
        }
        if !(0.0..=1.0).contains(&self.topic_word_rate) {
            return fail("synthetic.topic_word_rate must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTag {
    pub graph: TextAttributedGraph,
    pub community: Vec<usize>,
    pub vocabularies: Vec<Vec<String>>,
}

const FILLER: &[&str] = &[
    "the", "a", "of", "and", "in", "we", "this", "that", "with", "for", "on", "is", "are",
    "study", "results", "method", "approach", "show", "new", "based", "using", "analysis",
    "present", "model", "data", "paper", "work", "also", "which", "these", "our", "its",
];

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "cl",
    "dr", "gr", "pl", "st", "tr", "sh", "th",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ae", "io", "ou"];

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(VOWELS.choose(rng).unwrap());
    }
    if rng.gen_bool(0.5) {
        w.push_str(["n", "r", "s", "x", "l"].choose(rng).unwrap());
    }
    w
}

fn vocabularies<R: Rng>(cfg: &SyntheticConfig, rng: &mut R) -> Vec<Vec<String>> {
    let mut seen: std::collections::BTreeSet<String> =
        FILLER.iter().map(|s| s.to_string()).collect();
    (0..cfg.communities)
        .map(|_| {
            let mut words = Vec::with_capacity(cfg.vocab_per_community);
            while words.len() < cfg.vocab_per_community {
                let w = pseudo_word(rng);
                if seen.insert(w.clone()) {
                    words.push(w);
                }
            }
            words
        })
        .collect()
}

fn sentence<R: Rng>(cfg: &SyntheticConfig, vocab: &[String], lead_topic: bool, rng: &mut R) -> String {
    let len = rng.gen_range(cfg.words_per_sentence.0..=cfg.words_per_sentence.1);
    let mut words: Vec<String> = (0..len)
        .map(|i| {
            if (i == 0 && lead_topic) || rng.gen_bool(cfg.topic_word_rate) {
                vocab.choose(rng).unwrap().clone()
            } else {
                FILLER.choose(rng).unwrap().to_string()
            }
        })
        .collect();
    let first = &mut words[0];
    if let Some(c) = first.get(..1) {
        *first = c.to_uppercase() + &first[1..];
    }
    words.join(" ") + "."
}

/// Samples a planted-partition graph. Deterministic in `cfg.seed`.
pub fn generate_synthetic_tag(cfg: &SyntheticConfig) -> Result<SyntheticTag> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed, "synth", &[]);
    let vocabs = vocabularies(cfg, &mut rng);
    let mut community: Vec<usize> = (0..cfg.n).map(|v| v % cfg.communities).collect();
    community.shuffle(&mut rng);

    let nodes = (0..cfg.n)
        .map(|id| {
            let vocab = &vocabs[community[id]];
            let k = rng.gen_range(cfg.sentences_per_node.0..=cfg.sentences_per_node.1);
            let text = (0..k)
                .map(|i| sentence(cfg, vocab, i == 0, &mut rng))
                .collect::<Vec<_>>()
                .join(" ");
            let title = format!(
                "On {} and {}",
                vocab.choose(&mut rng).unwrap(),
                vocab.choose(&mut rng).unwrap()
            );
            NodeRecord {
                id,
                title: Some(title),
                text,
            }
        })
        .collect();

    let mut edges = Vec::new();
    for u in 0..cfg.n {
        for v in u + 1..cfg.n {
            let p = if community[u] == community[v] {
                cfg.intra_p
            } else {
                cfg.inter_p
            };
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    if edges.is_empty() {
        return Err(Error::InvalidConfig(
            "synthetic parameters produced a graph with no edges".into(),
        ));
    }
    let (graph, _) = TextAttributedGraph::from_edges(nodes, edges)?;
    Ok(SyntheticTag {
        graph,
        community,
        vocabularies: vocabs,
    })
}
