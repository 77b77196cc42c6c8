use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::backend::{CallKind, CompletionRequest, LlmBackend, Route};
use super::parse::{parse_judge_output, parse_prosecutor_output};
use super::prompts::{
    build_combined_prompt, build_contextual_prompt, build_judge_prompt, build_structural_prompt,
    PromptMessages,
};
use super::store::EvidenceStore;
use super::{CourtConfig, CourtMode, EvidenceKind, EvidenceRecord, Prediction, Verdict};
use crate::error::{Error, Result};
use crate::graph::{NodeId, TextAttributedGraph};
use crate::seed;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CourtSummary {
    pub nodes: usize,
    pub verdicts: usize,
    pub backend_calls: u64,
    pub unparseable: u64,
    pub failed: Vec<NodeId>,
}

/// `k` neighbors of `v` drawn uniformly with replacement; empty when `v`
/// is isolated.
pub fn sample_neighbors(graph: &TextAttributedGraph, v: NodeId, k: usize, seed: u64) -> Result<Vec<NodeId>> {
    let nbrs = graph.neighbors(v)?;
    if nbrs.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = seed::rng(seed, "court/neighbors", &[v as u64]);
    Ok((0..k).map(|_| nbrs[rng.gen_range(0..nbrs.len())]).collect())
}

struct Court<'a> {
    graph: &'a TextAttributedGraph,
    cfg: &'a CourtConfig,
    backend: &'a dyn LlmBackend,
    store: &'a EvidenceStore,
    calls: AtomicU64,
    unparseable: AtomicU64,
}

struct Answer {
    evidence: String,
    prediction: Prediction,
    prompt_tokens: u64,
    output_tokens: u64,
    model: String,
    unparseable: bool,
}

/// Errors that abort the whole run rather than a single node.
fn is_fatal(e: &Error) -> bool {
    matches!(e, Error::Io { .. } | Error::Json(_) | Error::Malformed { .. })
}

impl Court<'_> {
    fn ask(&self, prompt: PromptMessages, route: Route, model: &str) -> Result<Answer> {
        let prompt = route.attach(prompt);
        let vocabulary = match route.kind {
            CallKind::Structural => EvidenceKind::Structural.vocabulary(),
            _ => EvidenceKind::Contextual.vocabulary(),
        };
        let (mut prompt_tokens, mut output_tokens) = (0, 0);
        let mut last_model = model.to_string();
        for attempt in 0..=self.cfg.max_parse_retries {
            let request = CompletionRequest {
                prompt: &prompt,
                model,
                temperature: self.cfg.temperature,
                max_tokens: self.cfg.max_tokens,
                seed: seed::derive(
                    self.cfg.seed,
                    "court/request",
                    &[route.node as u64, route.sample as u64, attempt as u64],
                ),
            };
            self.calls.fetch_add(1, Ordering::Relaxed);
            let c = self.backend.complete(&request)?;
            prompt_tokens += c.prompt_tokens;
            output_tokens += c.output_tokens;
            last_model = c.model;
            let parsed = match route.kind {
                CallKind::Judge => parse_judge_output(&c.text),
                _ => parse_prosecutor_output(&c.text, vocabulary),
            };
            match parsed {
                Ok((evidence, prediction)) => {
                    return Ok(Answer {
                        evidence,
                        prediction,
                        prompt_tokens,
                        output_tokens,
                        model: last_model,
                        unparseable: false,
                    })
                }
                Err(Error::NoVerdictFound) => {
                    log::debug!("node {} {:?} sample {}: no verdict word, attempt {attempt}", route.node, route.kind, route.sample);
                }
                Err(e) => return Err(e),
            }
        }
        log::warn!(
            "node {} {:?} sample {}: unparseable after {} retries, recording {}",
            route.node,
            route.kind,
            route.sample,
            self.cfg.max_parse_retries,
            vocabulary.benign
        );
        self.unparseable.fetch_add(1, Ordering::Relaxed);
        Ok(Answer {
            evidence: String::new(),
            prediction: vocabulary.benign,
            prompt_tokens,
            output_tokens,
            model: last_model,
            unparseable: true,
        })
    }

    fn evidence(
        &self,
        node: NodeId,
        kind: EvidenceKind,
        sample: usize,
        neighbor: Option<NodeId>,
    ) -> Result<EvidenceRecord> {
        if let Some(rec) = self.store.evidence_record(node, kind, sample) {
            if rec.neighbor_id == neighbor {
                return Ok(rec);
            }
        }
        let profile = self.cfg.dataset_profile;
        let center = self.graph.node(node);
        let (prompt, call) = match kind {
            EvidenceKind::Contextual => (build_contextual_prompt(profile, center)?, CallKind::Contextual),
            EvidenceKind::Structural => {
                let nb = neighbor.ok_or_else(|| Error::Prompt("structural call without a neighbor".into()))?;
                (build_structural_prompt(profile, center, self.graph.node(nb))?, CallKind::Structural)
            }
            EvidenceKind::Combined => (
                build_combined_prompt(profile, center, neighbor.map(|nb| self.graph.node(nb)))?,
                CallKind::Combined,
            ),
        };
        let route = Route {
            node,
            kind: call,
            sample,
            neighbor,
        };
        let a = self.ask(prompt, route, &self.cfg.prosecutor_model)?;
        let rec = EvidenceRecord {
            node_id: node,
            kind,
            sample_idx: sample,
            neighbor_id: neighbor,
            evidence_text: a.evidence,
            prediction: a.prediction,
            prompt_tokens: a.prompt_tokens,
            output_tokens: a.output_tokens,
            model: a.model,
            unparseable: a.unparseable,
        };
        self.store.append_evidence(rec.clone())?;
        Ok(rec)
    }

    fn node(&self, v: NodeId) -> Result<()> {
        if self.store.verdict(v).is_some() {
            return Ok(());
        }
        let cfg = self.cfg;
        let neighbors = sample_neighbors(self.graph, v, cfg.n_structural.max(cfg.n_contextual), cfg.seed)?;
        let verdict = match cfg.court_mode {
            CourtMode::OneProsecutor => {
                let recs = (0..cfg.n_contextual)
                    .map(|s| self.evidence(v, EvidenceKind::Combined, s, neighbors.get(s).copied()))
                    .collect::<Result<Vec<_>>>()?;
                let votes = recs.iter().filter(|r| r.prediction.is_accusation()).count();
                aggregate(v, votes * 2 > recs.len(), format!(
                    "(Evidence) {votes} of {} combined prosecutor samples answered abnormal.",
                    recs.len()
                ))
            }
            CourtMode::TwoProsecutors | CourtMode::FullCourt => {
                let ctx = (0..cfg.n_contextual)
                    .map(|s| self.evidence(v, EvidenceKind::Contextual, s, None))
                    .collect::<Result<Vec<_>>>()?;
                let st = neighbors
                    .iter()
                    .take(cfg.n_structural)
                    .enumerate()
                    .map(|(s, &nb)| self.evidence(v, EvidenceKind::Structural, s, Some(nb)))
                    .collect::<Result<Vec<_>>>()?;
                if cfg.court_mode == CourtMode::TwoProsecutors {
                    let c = ctx.iter().filter(|r| r.prediction.is_accusation()).count();
                    let s = st.iter().filter(|r| r.prediction.is_accusation()).count();
                    aggregate(
                        v,
                        c * 2 > ctx.len() || (!st.is_empty() && s * 2 > st.len()),
                        format!(
                            "(Evidence) {c} of {} contextual prosecutors answered abnormal; {s} of {} structural prosecutors answered unrelated.",
                            ctx.len(),
                            st.len()
                        ),
                    )
                } else {
                    self.judge(v, &ctx, &st)?
                }
            }
        };
        self.store.append_verdict(verdict)
    }

    fn judge(&self, v: NodeId, ctx: &[EvidenceRecord], st: &[EvidenceRecord]) -> Result<Verdict> {
        let ctx_refs: Vec<&EvidenceRecord> = ctx.iter().collect();
        let st_refs: Vec<_> = st
            .iter()
            .map(|r| (r, self.graph.node(r.neighbor_id.expect("structural record has a neighbor"))))
            .collect();
        let prompt = build_judge_prompt(
            self.cfg.dataset_profile,
            self.graph.node(v),
            &ctx_refs,
            &st_refs,
            self.cfg.n_contextual,
            self.cfg.n_structural,
        )?;
        let route = Route {
            node: v,
            kind: CallKind::Judge,
            sample: 0,
            neighbor: None,
        };
        let a = self.ask(prompt, route, &self.cfg.judge_model)?;
        Ok(Verdict {
            node_id: v,
            evidence_text: a.evidence,
            judgment: a.prediction,
            prompt_tokens: a.prompt_tokens,
            output_tokens: a.output_tokens,
            model: a.model,
            unparseable: a.unparseable,
        })
    }
}

fn aggregate(v: NodeId, abnormal: bool, evidence: String) -> Verdict {
    Verdict {
        node_id: v,
        evidence_text: evidence,
        judgment: if abnormal { Prediction::Abnormal } else { Prediction::Normal },
        prompt_tokens: 0,
        output_tokens: 0,
        model: "majority-vote".into(),
        unparseable: false,
    }
}

/// Runs Stage I over every node without a stored verdict. Backend failures
/// mark the node failed and the run continues; store failures abort.
pub fn run_court(
    graph: &TextAttributedGraph,
    cfg: &CourtConfig,
    backend: &dyn LlmBackend,
    store: &EvidenceStore,
) -> Result<CourtSummary> {
    cfg.validate()?;
    let court = Court {
        graph,
        cfg,
        backend,
        store,
        calls: AtomicU64::new(0),
        unparseable: AtomicU64::new(0),
    };
    let next = AtomicUsize::new(0);
    let failed = Mutex::new(Vec::new());
    let fatal = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..cfg.parallelism.min(graph.n().max(1)) {
            scope.spawn(|| loop {
                let v = next.fetch_add(1, Ordering::Relaxed);
                if v >= graph.n() || fatal.lock().unwrap().is_some() {
                    break;
                }
                match court.node(v) {
                    Ok(()) => {}
                    Err(e) if is_fatal(&e) => {
                        fatal.lock().unwrap().get_or_insert(e);
                        break;
                    }
                    Err(e) => {
                        log::error!("node {v} failed: {e}");
                        failed.lock().unwrap().push(v);
                    }
                }
            });
        }
    });
    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e);
    }
    store.compact()?;
    let mut failed = failed.into_inner().unwrap();
    failed.sort_unstable();
    Ok(CourtSummary {
        nodes: graph.n(),
        verdicts: store.verdicts().len(),
        backend_calls: court.calls.load(Ordering::Relaxed),
        unparseable: court.unparseable.load(Ordering::Relaxed),
        failed,
    })
}
