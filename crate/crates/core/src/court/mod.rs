//! Stage I: LLM prosecutors gather evidence about each node and a judge
//! turns it into a verdict.
//!
//! For every node, contextual prosecutors read the node text alone and
//! answer `normal`/`abnormal`; structural prosecutors read the node together
//! with one sampled neighbor and answer `related`/`unrelated`. The judge sees
//! every opinion and answers `normal`/`abnormal`. All outputs are persisted
//! in a keyed store so interrupted runs resume without repeating calls.

mod backend;
mod cost;
mod parse;
mod prompts;
mod run;
mod store;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use backend::{
    CallKind, Completion, CompletionRequest, HttpBackend, HttpBackendConfig, LlmBackend, OracleBackend,
    Route,
};
pub use cost::{estimate_cost_time, tallies_from_store, CostModel, CostReport, ModelPricing, ModelTally};
pub use parse::{parse_judge_output, parse_prosecutor_output, Vocabulary};
pub use prompts::{
    build_combined_prompt, build_contextual_prompt, build_judge_prompt, build_structural_prompt,
    Message, Profile, PromptMessages, Role,
};
pub use run::{run_court, sample_neighbors, CourtSummary};
pub use store::EvidenceStore;

use crate::error::{Error, Result};
use crate::graph::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    Contextual,
    Structural,
    /// Single-prosecutor ablation: one prompt covering both perspectives.
    Combined,
}

impl EvidenceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EvidenceKind::Contextual => "contextual",
            EvidenceKind::Structural => "structural",
            EvidenceKind::Combined => "combined",
        }
    }

    pub fn vocabulary(self) -> Vocabulary {
        match self {
            EvidenceKind::Structural => Vocabulary::RELATEDNESS,
            _ => Vocabulary::NORMALITY,
        }
    }
}

impl fmt::Display for EvidenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The single word a prosecutor or judge concludes with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Normal,
    Abnormal,
    Related,
    Unrelated,
}

impl Prediction {
    pub fn as_str(self) -> &'static str {
        match self {
            Prediction::Normal => "normal",
            Prediction::Abnormal => "abnormal",
            Prediction::Related => "related",
            Prediction::Unrelated => "unrelated",
        }
    }

    /// True for the accusatory word of either vocabulary.
    pub fn is_accusation(self) -> bool {
        matches!(self, Prediction::Abnormal | Prediction::Unrelated)
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub node_id: NodeId,
    pub kind: EvidenceKind,
    pub sample_idx: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor_id: Option<NodeId>,
    pub evidence_text: String,
    pub prediction: Prediction,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub model: String,
    /// Set when no verdict word could be parsed and the non-accusatory
    /// default was recorded instead.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unparseable: bool,
}

impl EvidenceRecord {
    pub fn key(&self) -> (NodeId, EvidenceKind, usize) {
        (self.node_id, self.kind, self.sample_idx)
    }

    pub fn validate(&self) -> Result<()> {
        let neighbor_ok = match self.kind {
            EvidenceKind::Contextual => self.neighbor_id.is_none(),
            EvidenceKind::Structural => self.neighbor_id.is_some(),
            EvidenceKind::Combined => true,
        };
        if !neighbor_ok {
            return Err(Error::Response(format!(
                "{} record for node {} has inconsistent neighbor_id",
                self.kind, self.node_id
            )));
        }
        if !self.kind.vocabulary().contains(self.prediction) {
            return Err(Error::Response(format!(
                "{} record for node {} has prediction {}",
                self.kind, self.node_id, self.prediction
            )));
        }
        Ok(())
    }

    /// The record as the prosecutor's answer: evidence then the verdict line.
    pub fn opinion(&self) -> String {
        let word_line = format!("(Prediction) {}", self.prediction);
        if self.evidence_text.trim().is_empty() {
            word_line
        } else {
            format!("{}\n{word_line}", self.evidence_text.trim_end())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub node_id: NodeId,
    pub evidence_text: String,
    pub judgment: Prediction,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub model: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unparseable: bool,
}

/// Which parts of a verdict are embedded as the node's verdict feature.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictText {
    #[default]
    EvidenceAndJudgment,
    JudgmentOnly,
    EvidenceOnly,
}

impl Verdict {
    pub fn text(&self, mode: VerdictText) -> String {
        let evidence = self.evidence_text.trim();
        let evidence = if evidence.is_empty() || evidence.starts_with("(Evidence)") {
            evidence.to_string()
        } else {
            format!("(Evidence) {evidence}")
        };
        let judgment = format!("(Judgment) {}", self.judgment);
        match mode {
            VerdictText::EvidenceAndJudgment if evidence.is_empty() => judgment,
            VerdictText::EvidenceAndJudgment => format!("{evidence} {judgment}"),
            VerdictText::JudgmentOnly => judgment,
            VerdictText::EvidenceOnly => evidence,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CourtMode {
    /// One combined prosecutor, majority vote over its samples.
    OneProsecutor,
    /// Contextual and structural prosecutors, majority vote per kind.
    TwoProsecutors,
    /// Both prosecutors plus the judge.
    #[default]
    FullCourt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CourtConfig {
    /// Filled from the pipeline's top-level profile.
    #[serde(skip)]
    pub dataset_profile: Profile,
    pub n_contextual: usize,
    pub n_structural: usize,
    pub court_mode: CourtMode,
    pub parallelism: usize,
    pub max_parse_retries: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    pub prosecutor_model: String,
    pub judge_model: String,
    pub seed: u64,
}

impl Default for CourtConfig {
    fn default() -> Self {
        CourtConfig {
            dataset_profile: Profile::Synthetic,
            n_contextual: 5,
            n_structural: 5,
            court_mode: CourtMode::FullCourt,
            parallelism: 4,
            max_parse_retries: 2,
            temperature: 0.7,
            max_tokens: 512,
            prosecutor_model: "llama-3.1-8b".into(),
            judge_model: "llama-3.1-70b".into(),
            seed: 0,
        }
    }
}

impl CourtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_contextual == 0 || self.n_structural == 0 {
            return Err(Error::InvalidConfig(
                "court.n_contextual and court.n_structural must be >= 1".into(),
            ));
        }
        if self.parallelism == 0 {
            return Err(Error::InvalidConfig("court.parallelism must be >= 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::InvalidConfig(format!(
                "court.temperature must lie in [0, 2], got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}
