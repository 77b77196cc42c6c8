use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompts::{PromptMessages, Role};
use crate::error::{Error, Result};
use crate::graph::{GroundTruth, Label, NodeId};
use crate::http::{JsonClient, RetryPolicy};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub model: String,
}

/// One chat completion call.
#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a PromptMessages,
    pub model: &'a str,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallKind {
    Contextual,
    Structural,
    Combined,
    Judge,
}

impl CallKind {
    fn as_str(self) -> &'static str {
        match self {
            CallKind::Contextual => "contextual",
            CallKind::Structural => "structural",
            CallKind::Combined => "combined",
            CallKind::Judge => "judge",
        }
    }

    fn code(self) -> u64 {
        match self {
            CallKind::Contextual => 0,
            CallKind::Structural => 1,
            CallKind::Combined => 2,
            CallKind::Judge => 3,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [CallKind::Contextual, CallKind::Structural, CallKind::Combined, CallKind::Judge]
            .into_iter()
            .find(|k| k.as_str() == s)
    }
}

/// Routing metadata carried in a hidden first line of the system message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub node: NodeId,
    pub kind: CallKind,
    pub sample: usize,
    pub neighbor: Option<NodeId>,
}

const ROUTE_PREFIX: &str = "#route ";

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{ROUTE_PREFIX}node={} kind={} sample={}",
            self.node,
            self.kind.as_str(),
            self.sample
        )?;
        if let Some(nb) = self.neighbor {
            write!(f, " neighbor={nb}")?;
        }
        Ok(())
    }
}

impl Route {
    pub fn attach(&self, mut prompt: PromptMessages) -> PromptMessages {
        let first = prompt.first_mut();
        first.content = format!("{self}\n{}", first.content);
        prompt
    }

    pub fn parse(line: &str) -> Option<Route> {
        let rest = line.trim().strip_prefix(ROUTE_PREFIX)?;
        let (mut node, mut kind, mut sample, mut neighbor) = (None, None, None, None);
        for field in rest.split_whitespace() {
            let (k, v) = field.split_once('=')?;
            match k {
                "node" => node = v.parse().ok(),
                "kind" => kind = CallKind::parse(v),
                "sample" => sample = v.parse().ok(),
                "neighbor" => neighbor = Some(v.parse().ok()?),
                _ => return None,
            }
        }
        Some(Route {
            node: node?,
            kind: kind?,
            sample: sample?,
            neighbor,
        })
    }

    pub fn of(prompt: &PromptMessages) -> Option<Route> {
        let first = prompt.messages().first()?;
        Route::parse(first.content.lines().next()?)
    }
}

/// Messages with the routing line removed, as sent to a real service.
pub fn strip_route(prompt: &PromptMessages) -> Vec<(Role, String)> {
    prompt
        .messages()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let content = match m.content.split_once('\n') {
                Some((head, rest)) if i == 0 && head.starts_with(ROUTE_PREFIX) => rest.to_string(),
                None if i == 0 && m.content.starts_with(ROUTE_PREFIX) => String::new(),
                _ => m.content.clone(),
            };
            (m.role, content)
        })
        .collect()
}

fn count_words(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

/// Deterministic stand-in for a language model: answers from ground truth,
/// flipping the word with probability `1 - accuracy`.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    truth: GroundTruth,
    injected_edges: BTreeSet<(NodeId, NodeId)>,
    accuracy: f64,
    seed: u64,
}

impl OracleBackend {
    pub fn new(
        truth: GroundTruth,
        injected_edges: BTreeSet<(NodeId, NodeId)>,
        accuracy: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::InvalidConfig(format!(
                "oracle accuracy must lie in [0, 1], got {accuracy}"
            )));
        }
        Ok(OracleBackend {
            truth,
            injected_edges,
            accuracy,
            seed,
        })
    }

    fn injected_pair(&self, u: NodeId, v: NodeId) -> bool {
        let structural = self.truth.label(u).is_structural() || self.truth.label(v).is_structural();
        structural && self.injected_edges.contains(&(u.min(v), u.max(v)))
    }

    /// Whether the ground truth calls for the accusatory word.
    fn accuse(&self, route: &Route) -> bool {
        let contextual = self.truth.label(route.node) == Label::Contextual;
        match route.kind {
            CallKind::Contextual => contextual,
            CallKind::Structural => route
                .neighbor
                .is_some_and(|nb| self.injected_pair(route.node, nb)),
            CallKind::Combined => {
                contextual || route.neighbor.is_some_and(|nb| self.injected_pair(route.node, nb))
            }
            CallKind::Judge => self.truth.label(route.node).is_anomalous(),
        }
    }

    pub fn respond(&self, prompt: &PromptMessages) -> Result<String> {
        let route = Route::of(prompt)
            .ok_or_else(|| Error::Prompt("oracle backend needs a #route header".into()))?;
        let coords = [
            route.node as u64,
            route.kind.code(),
            route.sample as u64,
            route.neighbor.map_or(u64::MAX, |n| n as u64),
        ];
        let correct = seed::unit(self.seed, "oracle", &coords) < self.accuracy;
        let accuse = self.accuse(&route) == correct;
        Ok(oracle_text(route.kind, accuse))
    }
}

fn oracle_text(kind: CallKind, accuse: bool) -> String {
    let (evidence, word) = match (kind, accuse) {
        (CallKind::Contextual, false) => ("The text stays on a single coherent topic throughout.", "normal"),
        (CallKind::Contextual, true) => (
            "Part of the text drifts to an unrelated subject and breaks its coherence.",
            "abnormal",
        ),
        (CallKind::Structural, false) => ("The two texts share their subject matter.", "related"),
        (CallKind::Structural, true) => ("The two texts have nothing in common.", "unrelated"),
        (CallKind::Combined, false) => (
            "The text is coherent and consistent with its neighborhood.",
            "normal",
        ),
        (CallKind::Combined, true) => (
            "The text or its links deviate from what its context suggests.",
            "abnormal",
        ),
        (CallKind::Judge, false) => (
            "The prosecutors agree the node is coherent and consistent with its neighborhood.",
            "normal",
        ),
        (CallKind::Judge, true) => (
            "The prosecutors show the node deviates from its context: its text drifts off topic or its links join unrelated neighbors.",
            "abnormal",
        ),
    };
    let tag = if kind == CallKind::Judge { "Judgment" } else { "Prediction" };
    format!("(Evidence) {evidence}\n({tag}) {word}")
}

impl LlmBackend for OracleBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion> {
        let text = self.respond(request.prompt)?;
        Ok(Completion {
            prompt_tokens: count_words(&request.prompt.full_text()),
            output_tokens: count_words(&text),
            text,
            model: request.model.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
}

/// OpenAI-style chat-completions client.
pub struct HttpBackend {
    endpoint: String,
    client: JsonClient,
}

impl HttpBackend {
    pub fn new(cfg: &HttpBackendConfig) -> Result<Self> {
        let api_key = cfg.api_key_env.as_deref().and_then(|k| std::env::var(k).ok());
        Ok(HttpBackend {
            endpoint: cfg.endpoint.clone(),
            client: JsonClient::new(cfg.retry, api_key)?,
        })
    }
}

pub fn request_body(request: &CompletionRequest<'_>) -> Value {
    let messages: Vec<Value> = strip_route(request.prompt)
        .into_iter()
        .map(|(role, content)| json!({ "role": role, "content": content }))
        .collect();
    json!({
        "model": request.model,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
        "seed": request.seed,
    })
}

pub fn parse_completion(body: &Value, model: &str) -> Result<Completion> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Response("missing choices[0].message.content".into()))?;
    let usage = |field: &str| {
        body.pointer(&format!("/usage/{field}"))
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Response(format!("missing usage.{field}")))
    };
    Ok(Completion {
        text: text.to_string(),
        prompt_tokens: usage("prompt_tokens")?,
        output_tokens: usage("completion_tokens")?,
        model: body
            .get("model")
            .and_then(Value::as_str)
            .unwrap_or(model)
            .to_string(),
    })
}

impl LlmBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion> {
        let reply = self.client.post(&self.endpoint, &request_body(request))?;
        parse_completion(&reply.body, request.model)
    }
}
