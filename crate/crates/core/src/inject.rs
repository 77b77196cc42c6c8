//! Anomaly injection: two contextual strategies (sentence insertion and
//! replacement from a dissimilar donor) and two structural ones (planted
//! cliques and degree-sampled random edges). Each strategy labels exactly
//! `m` previously unlabeled nodes.

use std::collections::BTreeSet;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{cosine_similarity, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::graph::{GroundTruth, Label, NodeId, TextAttributedGraph};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InjectionConfig {
    /// Anomalies per strategy.
    pub m: usize,
    /// Candidate-set size for the donor search.
    pub k: usize,
    /// Clique size.
    pub q: usize,
    /// Clique count; `p * q` must equal `m`.
    pub p: usize,
    pub insert_fraction: f64,
    pub replace_fraction: f64,
    pub seed: u64,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        InjectionConfig {
            m: 5,
            k: 50,
            q: 5,
            p: 1,
            insert_fraction: 0.3,
            replace_fraction: 0.34,
            seed: 0,
        }
    }
}

impl InjectionConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m == 0 {
            return fail("injection.m must be >= 1".into());
        }
        if 8 * self.m > n {
            return fail(format!(
                "injection.m = {} needs 4m <= n/2, but n = {n}",
                self.m
            ));
        }
        if self.k < 2 {
            return fail(format!("injection.k must be >= 2, got {}", self.k));
        }
        if self.q < 2 {
            return fail(format!("injection.q must be >= 2, got {}", self.q));
        }
        if self.p * self.q != self.m {
            return fail(format!(
                "injection.p * injection.q must equal m ({} * {} != {})",
                self.p, self.q, self.m
            ));
        }
        for (name, f) in [
            ("insert_fraction", self.insert_fraction),
            ("replace_fraction", self.replace_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return fail(format!("injection.{name} must lie in (0, 1], got {f}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextualStrategy {
    Insertion,
    Replacement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPerturbation {
    pub target: NodeId,
    pub donor: NodeId,
    pub strategy: ContextualStrategy,
    pub sentences: usize,
}

/// Machine-readable account of one or more injection runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub m: usize,
    pub edges_added: usize,
    pub warnings: Vec<String>,
    /// Every edge created by a structural strategy, as `(u, v)` with `u < v`.
    pub injected_edges: Vec<(NodeId, NodeId)>,
    pub perturbations: Vec<TextPerturbation>,
}

impl InjectionReport {
    fn absorb(&mut self, other: InjectionReport) {
        self.edges_added += other.edges_added;
        self.warnings.extend(other.warnings);
        self.injected_edges.extend(other.injected_edges);
        self.perturbations.extend(other.perturbations);
    }

    pub fn injected_edge_set(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.injected_edges.iter().copied().collect()
    }
}

#[derive(Debug, Clone)]
pub struct Injection {
    pub graph: TextAttributedGraph,
    /// Labels assigned by this run only.
    pub labels: GroundTruth,
    pub report: InjectionReport,
}

/// Splits on `.`, `!` or `?` followed by whitespace or end of text. Each
/// sentence keeps its terminator; a trailing unterminated fragment counts
/// as a sentence.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_break = match chars.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if at_break {
                let end = i + c.len_utf8();
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

fn ceil_fraction(fraction: f64, count: usize) -> usize {
    // Guard against products such as 0.3 * 10 landing a hair above 3.
    ((fraction * count as f64) - 1e-9).ceil().max(0.0) as usize
}

fn unlabeled(n: usize, labeled: &GroundTruth) -> Vec<NodeId> {
    (0..n).filter(|&v| !labeled.is_labeled(v)).collect()
}

fn take_targets(
    pool: &[NodeId],
    count: usize,
    rng: &mut ChaCha8Rng,
    what: &str,
) -> Result<Vec<NodeId>> {
    if pool.len() < count {
        return Err(Error::Injection(format!(
            "{what}: need {count} unlabeled nodes, only {} available",
            pool.len()
        )));
    }
    Ok(pool.choose_multiple(rng, count).copied().collect())
}

/// Picks the candidate least similar to `target`. Ties resolve to the
/// lower node id.
pub fn least_similar(
    embeddings: &EmbeddingMatrix,
    target: NodeId,
    candidates: &[NodeId],
) -> Result<NodeId> {
    let mut best: Option<(f64, NodeId)> = None;
    for &c in candidates {
        let sim = cosine_similarity(embeddings.row(target), embeddings.row(c))?;
        let better = match best {
            None => true,
            Some((s, id)) => sim < s || (sim == s && c < id),
        };
        if better {
            best = Some((sim, c));
        }
    }
    best.map(|(_, id)| id)
        .ok_or_else(|| Error::Injection(format!("no donor candidates for node {target}")))
}

pub fn inject_contextual(
    graph: &TextAttributedGraph,
    embeddings: &EmbeddingMatrix,
    cfg: &InjectionConfig,
    strategy: ContextualStrategy,
    labeled: &GroundTruth,
) -> Result<Injection> {
    if embeddings.n() != graph.n() {
        return Err(Error::DimensionMismatch {
            expected: graph.n(),
            got: embeddings.n(),
        });
    }
    let label = match strategy {
        ContextualStrategy::Insertion => "inject/insertion",
        ContextualStrategy::Replacement => "inject/replacement",
    };
    let mut rng = seed::rng(cfg.seed, label, &[]);
    let pool = unlabeled(graph.n(), labeled);
    let targets = take_targets(&pool, cfg.m, &mut rng, label)?;
    let mut builder = graph.to_builder();
    let mut delta = GroundTruth::new();
    let mut report = InjectionReport::default();
    for &target in &targets {
        if labeled.is_labeled(target) || delta.is_labeled(target) {
            return Err(Error::Injection(format!("target {target} is already labeled")));
        }
        let eligible: Vec<NodeId> = pool.iter().copied().filter(|&v| v != target).collect();
        if eligible.len() < cfg.k {
            report.warnings.push(format!(
                "node {target}: only {} donor candidates available (k = {})",
                eligible.len(),
                cfg.k
            ));
        }
        let candidates: Vec<NodeId> = eligible
            .choose_multiple(&mut rng, cfg.k.min(eligible.len()))
            .copied()
            .collect();
        let donor = least_similar(embeddings, target, &candidates)?;
        let donor_sents: Vec<String> = split_sentences(graph.text(donor))
            .into_iter()
            .map(str::to_owned)
            .collect();
        if donor_sents.is_empty() {
            return Err(Error::Injection(format!("donor {donor} has no sentences")));
        }
        let mut sents: Vec<String> = split_sentences(builder.text(target))
            .into_iter()
            .map(str::to_owned)
            .collect();
        let moved = match strategy {
            ContextualStrategy::Insertion => {
                let run = ceil_fraction(cfg.insert_fraction, donor_sents.len()).max(1);
                let start = rng.gen_range(0..=donor_sents.len() - run);
                let at = rng.gen_range(0..=sents.len());
                sents.splice(at..at, donor_sents[start..start + run].iter().cloned());
                run
            }
            ContextualStrategy::Replacement => {
                if sents.is_empty() {
                    return Err(Error::Injection(format!("target {target} has no sentences")));
                }
                let r = ceil_fraction(cfg.replace_fraction, sents.len())
                    .max(1)
                    .min(donor_sents.len());
                let mut slots = rand::seq::index::sample(&mut rng, sents.len(), r).into_vec();
                slots.sort_unstable();
                let picks = rand::seq::index::sample(&mut rng, donor_sents.len(), r).into_vec();
                for (slot, pick) in slots.into_iter().zip(picks) {
                    sents[slot] = donor_sents[pick].clone();
                }
                r
            }
        };
        builder.set_text(target, sents.join(" "));
        delta.set(target, Label::Contextual);
        report.perturbations.push(TextPerturbation {
            target,
            donor,
            strategy,
            sentences: moved,
        });
    }
    report.m = cfg.m;
    Ok(Injection {
        graph: builder.build(),
        labels: delta,
        report,
    })
}

pub fn inject_structural_clique(
    graph: &TextAttributedGraph,
    cfg: &InjectionConfig,
    labeled: &GroundTruth,
) -> Result<Injection> {
    let mut rng = seed::rng(cfg.seed, "inject/clique", &[]);
    let mut pool = unlabeled(graph.n(), labeled);
    if pool.len() < cfg.p * cfg.q {
        return Err(Error::Injection(format!(
            "clique injection needs {} unlabeled nodes, only {} available",
            cfg.p * cfg.q,
            pool.len()
        )));
    }
    let mut builder = graph.to_builder();
    let mut delta = GroundTruth::new();
    let mut report = InjectionReport::default();
    for _ in 0..cfg.p {
        let members = take_targets(&pool, cfg.q, &mut rng, "inject/clique")?;
        for (i, &u) in members.iter().enumerate() {
            for &v in &members[i + 1..] {
                if builder.add_edge(u, v)? {
                    report.edges_added += 1;
                    report.injected_edges.push((u.min(v), u.max(v)));
                }
            }
            delta.set(u, Label::StructuralClique);
        }
        pool.retain(|v| !members.contains(v));
    }
    report.m = cfg.m;
    Ok(Injection {
        graph: builder.build(),
        labels: delta,
        report,
    })
}

/// Edge injection with the degree distribution of `graph` itself.
pub fn inject_structural_edges(
    graph: &TextAttributedGraph,
    cfg: &InjectionConfig,
    labeled: &GroundTruth,
) -> Result<Injection> {
    let degrees: Vec<usize> = (0..graph.n()).map(|v| graph.degree(v)).collect();
    inject_structural_edges_with(graph, cfg, labeled, &degrees)
}

/// Edge injection drawing each target's new-edge count from the empirical
/// `degrees` sample (with replacement).
pub fn inject_structural_edges_with(
    graph: &TextAttributedGraph,
    cfg: &InjectionConfig,
    labeled: &GroundTruth,
    degrees: &[usize],
) -> Result<Injection> {
    if degrees.is_empty() {
        return Err(Error::Injection("empty degree sample".into()));
    }
    let mut rng = seed::rng(cfg.seed, "inject/edges", &[]);
    let pool = unlabeled(graph.n(), labeled);
    let targets = take_targets(&pool, cfg.m, &mut rng, "inject/edges")?;
    let mut builder = graph.to_builder();
    let mut delta = GroundTruth::new();
    let mut report = InjectionReport::default();
    for &target in &targets {
        let k = *degrees.choose(&mut rng).unwrap();
        let open: Vec<NodeId> = (0..graph.n())
            .filter(|&v| v != target && !builder.has_edge(target, v))
            .collect();
        if k > open.len() {
            report.warnings.push(format!(
                "node {target}: sampled {k} new edges but only {} non-neighbors exist",
                open.len()
            ));
        }
        let picks: Vec<NodeId> = open.into_iter().choose_multiple(&mut rng, k);
        for v in picks {
            builder.add_edge(target, v)?;
            report.edges_added += 1;
            report.injected_edges.push((target.min(v), target.max(v)));
        }
        delta.set(target, Label::StructuralEdge);
    }
    report.m = cfg.m;
    Ok(Injection {
        graph: builder.build(),
        labels: delta,
        report,
    })
}

/// Runs insertion, replacement, clique and edge injection in that order,
/// `m` targets each, with disjoint label sets. The edge strategy samples
/// degrees from the graph as it was before any injection.
pub fn inject_all(
    graph: &TextAttributedGraph,
    embeddings: &EmbeddingMatrix,
    cfg: &InjectionConfig,
) -> Result<Injection> {
    cfg.validate(graph.n())?;
    let degrees: Vec<usize> = (0..graph.n()).map(|v| graph.degree(v)).collect();
    let mut labels = GroundTruth::new();
    let mut report = InjectionReport {
        m: cfg.m,
        ..Default::default()
    };

    let step = inject_contextual(graph, embeddings, cfg, ContextualStrategy::Insertion, &labels)?;
    labels.merge(&step.labels)?;
    report.absorb(step.report);
    let mut current = step.graph;

    let step = inject_contextual(&current, embeddings, cfg, ContextualStrategy::Replacement, &labels)?;
    labels.merge(&step.labels)?;
    report.absorb(step.report);
    current = step.graph;

    let step = inject_structural_clique(&current, cfg, &labels)?;
    labels.merge(&step.labels)?;
    report.absorb(step.report);
    current = step.graph;

    let step = inject_structural_edges_with(&current, cfg, &labels, &degrees)?;
    labels.merge(&step.labels)?;
    report.absorb(step.report);

    Ok(Injection {
        graph: step.graph,
        labels,
        report,
    })
}
