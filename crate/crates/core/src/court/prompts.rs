use serde::{Deserialize, Serialize};

use super::EvidenceRecord;
use crate::error::{Error, Result};
use crate::graph::NodeRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// Ordered chat messages; never empty and always opening with a system
/// message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptMessages {
    messages: Vec<Message>,
}

impl PromptMessages {
    pub fn new(messages: Vec<Message>) -> Result<Self> {
        match messages.first() {
            None => Err(Error::Prompt("prompt has no messages".into())),
            Some(m) if m.role != Role::System => {
                Err(Error::Prompt("first prompt message must be a system message".into()))
            }
            Some(_) => Ok(PromptMessages { messages }),
        }
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn into_messages(self) -> Vec<Message> {
        self.messages
    }

    /// Concatenated content of all messages.
    pub fn full_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub(crate) fn first_mut(&mut self) -> &mut Message {
        &mut self.messages[0]
    }
}

/// Dataset framing for the prompt templates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Cora,
    Pubmed,
    History,
    Arxiv,
    #[default]
    Synthetic,
}

struct Templates {
    contextual: &'static str,
    structural: &'static str,
    judge: &'static str,
}

macro_rules! templates {
    ($dir:literal) => {
        Templates {
            contextual: include_str!(concat!("../../templates/", $dir, "/contextual.txt")),
            structural: include_str!(concat!("../../templates/", $dir, "/structural.txt")),
            judge: include_str!(concat!("../../templates/", $dir, "/judge.txt")),
        }
    };
}

impl Profile {
    fn templates(self) -> Templates {
        match self {
            Profile::Cora => templates!("cora"),
            Profile::Pubmed => templates!("pubmed"),
            Profile::History => templates!("history"),
            Profile::Arxiv => templates!("arxiv"),
            Profile::Synthetic => templates!("synthetic"),
        }
    }
}

pub const TEXT: &str = "<text attribute>";
pub const NEIGHBOR: &str = "<neighbor text>";
pub const OPINION: &str = "<prosecutor opinion>";
pub const CORRESPONDING: &str = "<corresponding text>";
const PLACEHOLDERS: [&str; 4] = [TEXT, NEIGHBOR, OPINION, CORRESPONDING];

const OPINION_BLOCK: &str = "for <corresponding text> prosecutor: <prosecutor opinion>";
const OPINION_COUNT: &str = "opinions from 10 prosecutors";
const NO_NEIGHBOR_RULE: &str = "If the central node has no neighbors, conclude that there is no structural anomaly.";

/// Splits a `<SYS> … <USER> … <SYS> …` template into messages.
fn split_template(template: &str) -> Vec<Message> {
    let mut out: Vec<Message> = Vec::new();
    let mut rest = template;
    loop {
        let next = [("<SYS>", Role::System), ("<USER>", Role::User)]
            .into_iter()
            .filter_map(|(tag, role)| rest.find(tag).map(|i| (i, tag, role)))
            .min_by_key(|(i, _, _)| *i);
        let Some((i, tag, role)) = next else {
            if let Some(last) = out.last_mut() {
                last.content.push_str(rest);
            }
            break;
        };
        if let Some(last) = out.last_mut() {
            last.content.push_str(&rest[..i]);
        }
        out.push(Message {
            role,
            content: String::new(),
        });
        rest = &rest[i + tag.len()..];
    }
    for m in &mut out {
        m.content = m.content.trim().to_string();
    }
    out
}

fn finish(messages: Vec<Message>) -> Result<PromptMessages> {
    for m in &messages {
        if let Some(p) = PLACEHOLDERS.iter().find(|p| m.content.contains(*p)) {
            return Err(Error::Prompt(format!("unfilled placeholder {p}")));
        }
    }
    PromptMessages::new(messages)
}

/// Node text with its title when one is present.
pub fn render_node(node: &NodeRecord) -> String {
    match node.title.as_deref().map(str::trim) {
        Some(t) if !t.is_empty() => format!("Title: {t}. Content: {}", node.text.trim()),
        _ => node.text.trim().to_string(),
    }
}

fn substitute(messages: &mut [Message], placeholder: &str, value: &str) {
    for m in messages {
        m.content = m.content.replace(placeholder, value);
    }
}

pub fn build_contextual_prompt(profile: Profile, node: &NodeRecord) -> Result<PromptMessages> {
    let mut messages = split_template(profile.templates().contextual);
    substitute(&mut messages, TEXT, &render_node(node));
    finish(messages)
}

pub fn build_structural_prompt(
    profile: Profile,
    center: &NodeRecord,
    neighbor: &NodeRecord,
) -> Result<PromptMessages> {
    for n in [center, neighbor] {
        if n.text.trim().is_empty() {
            return Err(Error::Prompt(format!("node {} has empty text", n.id)));
        }
    }
    let mut messages = split_template(profile.templates().structural);
    // Neighbor first so a center text containing the literal placeholder
    // is not rewritten.
    substitute(&mut messages, NEIGHBOR, &render_node(neighbor));
    substitute(&mut messages, TEXT, &render_node(center));
    finish(messages)
}

/// Single-prosecutor prompt: the contextual and structural instructions
/// concatenated, with at most one sampled neighbor.
pub fn build_combined_prompt(
    profile: Profile,
    node: &NodeRecord,
    neighbor: Option<&NodeRecord>,
) -> Result<PromptMessages> {
    let t = profile.templates();
    let ctx = split_template(t.contextual);
    let st = split_template(t.structural);
    let mut system = format!("{}\n{}", ctx[0].content, st[0].content);
    let mut user = ctx
        .iter()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.replace(TEXT, &render_node(node)))
        .unwrap_or_default();
    match neighbor {
        Some(nb) => user.push_str(&format!(" And this is a neighboring text: {}", render_node(nb))),
        None => system.push_str(&format!(" {NO_NEIGHBOR_RULE}")),
    }
    let closing = "Assess both whether the text itself stays on one coherent topic and whether it is related to the neighboring text, if one is given. Provide a concise explanation. Then, on a new line, conclude with only one word: \"normal\" if no anomaly is found, otherwise \"abnormal\".";
    finish(vec![
        Message {
            role: Role::System,
            content: system,
        },
        Message {
            role: Role::User,
            content: user,
        },
        Message {
            role: Role::System,
            content: closing.to_string(),
        },
    ])
}

/// Judge prompt listing every opinion as
/// `for <corresponding text> prosecutor: <prosecutor opinion>`, contextual
/// opinions first.
pub fn build_judge_prompt(
    profile: Profile,
    node: &NodeRecord,
    contextual: &[&EvidenceRecord],
    structural: &[(&EvidenceRecord, &NodeRecord)],
    n_contextual: usize,
    n_structural: usize,
) -> Result<PromptMessages> {
    if contextual.len() != n_contextual {
        return Err(Error::Prompt(format!(
            "judge needs {n_contextual} contextual opinions, got {}",
            contextual.len()
        )));
    }
    if structural.len() > n_structural {
        return Err(Error::Prompt(format!(
            "judge accepts at most {n_structural} structural opinions, got {}",
            structural.len()
        )));
    }
    let mut blocks = Vec::with_capacity(contextual.len() + structural.len());
    for (i, rec) in contextual.iter().enumerate() {
        blocks.push(format!(
            "for the central text (contextual sample {}) prosecutor: {}",
            i + 1,
            rec.opinion()
        ));
    }
    for (i, (rec, nb)) in structural.iter().enumerate() {
        blocks.push(format!(
            "for the neighbor text \"{}\" (structural sample {}) prosecutor: {}",
            render_node(nb),
            i + 1,
            rec.opinion()
        ));
    }
    let mut messages = split_template(profile.templates().judge);
    for m in &mut messages {
        if m.content.contains(OPINION_BLOCK) {
            m.content = m.content.replace(OPINION_BLOCK, &blocks.join("\n"));
            m.content = m.content.replace(
                OPINION_COUNT,
                &format!("opinions from {} prosecutors", blocks.len()),
            );
        }
    }
    substitute(&mut messages, TEXT, &render_node(node));
    if structural.is_empty() {
        if let Some(user) = messages.iter_mut().find(|m| m.role == Role::User) {
            user.content.push_str(&format!(
                "\nThe central node has no neighbors, so there are no structural opinions. {NO_NEIGHBOR_RULE}"
            ));
        }
    }
    finish(messages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::court::{EvidenceKind, Prediction};

    fn node(id: usize, title: Option<&str>, text: &str) -> NodeRecord {
        NodeRecord {
            id,
            title: title.map(String::from),
            text: text.into(),
        }
    }

    fn record(kind: EvidenceKind, i: usize, neighbor: Option<usize>) -> EvidenceRecord {
        EvidenceRecord {
            node_id: 0,
            kind,
            sample_idx: i,
            neighbor_id: neighbor,
            evidence_text: format!("(Evidence) point {i}"),
            prediction: if kind == EvidenceKind::Structural { Prediction::Related } else { Prediction::Normal },
            prompt_tokens: 0,
            output_tokens: 0,
            model: "m".into(),
            unparseable: false,
        }
    }

    #[test]
    fn every_profile_template_has_system_user_system() {
        for p in [Profile::Cora, Profile::Pubmed, Profile::History, Profile::Arxiv, Profile::Synthetic] {
            let t = p.templates();
            for tpl in [t.contextual, t.structural, t.judge] {
                let roles: Vec<Role> = split_template(tpl).iter().map(|m| m.role).collect();
                assert_eq!(roles, vec![Role::System, Role::User, Role::System], "{p:?}");
            }
            assert!(t.judge.contains(OPINION_BLOCK), "{p:?}");
            assert!(t.judge.contains(OPINION_COUNT), "{p:?}");
        }
    }

    #[test]
    fn contextual_history_framing() {
        let text = "A chronicle of the Hundred Years War.";
        let p = build_contextual_prompt(Profile::History, &node(0, None, text)).unwrap();
        let full = p.full_text();
        assert!(full.contains("a piece of text about a historical book"));
        assert!(full.contains(text));
        assert!(full.contains("\"normal\" or \"abnormal\""));
        assert_eq!(p.messages()[0].role, Role::System);
    }

    #[test]
    fn title_is_rendered_or_omitted() {
        let with = build_contextual_prompt(Profile::Cora, &node(0, Some("Deep nets"), "Body.")).unwrap();
        assert!(with.full_text().contains("Title: Deep nets. Content: Body."));
        let without = build_contextual_prompt(Profile::Cora, &node(0, None, "Body.")).unwrap();
        let full = without.full_text();
        assert!(!full.contains("Title:"));
        assert!(full.contains("Here is the text: Body."));
    }

    #[test]
    fn synthetic_profile_keeps_grammar() {
        let p = build_contextual_prompt(Profile::Synthetic, &node(0, None, "Text.")).unwrap();
        assert!(p.full_text().contains("\"normal\" or \"abnormal\""));
        let s = build_structural_prompt(Profile::Synthetic, &node(0, None, "a."), &node(1, None, "b.")).unwrap();
        assert!(s.full_text().contains("\"related\" or \"unrelated\""));
    }

    #[test]
    fn structural_prompts() {
        let p = build_structural_prompt(Profile::Arxiv, &node(0, None, "Center."), &node(1, None, "Other.")).unwrap();
        let full = p.full_text();
        assert!(full.contains("determine whether there should be a citation relationship"));
        assert!(full.contains("central text: Center. And this is another text Other."));
        let same = build_structural_prompt(Profile::Arxiv, &node(0, None, "Same."), &node(1, None, "Same."));
        assert!(same.is_ok());
        assert!(build_structural_prompt(Profile::Arxiv, &node(0, None, "x"), &node(1, None, " ")).is_err());
    }

    #[test]
    fn judge_prompt_blocks() {
        let center = node(0, None, "Center text.");
        let nb = node(1, None, "Neighbor text.");
        let ctx: Vec<EvidenceRecord> = (0..5).map(|i| record(EvidenceKind::Contextual, i, None)).collect();
        let st: Vec<EvidenceRecord> = (0..5).map(|i| record(EvidenceKind::Structural, i, Some(1))).collect();
        let ctx_refs: Vec<&EvidenceRecord> = ctx.iter().collect();
        let st_refs: Vec<(&EvidenceRecord, &NodeRecord)> = st.iter().map(|r| (r, &nb)).collect();
        let p = build_judge_prompt(Profile::Arxiv, &center, &ctx_refs, &st_refs, 5, 5).unwrap();
        let full = p.full_text();
        assert_eq!(full.matches(") prosecutor: ").count(), 10);
        assert!(full.contains("opinions from 10 prosecutors"));
        let first_st = full.find("structural sample 1").unwrap();
        let last_ctx = full.find("contextual sample 5").unwrap();
        assert!(last_ctx < first_st);

        let iso = build_judge_prompt(Profile::Pubmed, &center, &ctx_refs, &[], 5, 5).unwrap();
        let full = iso.full_text();
        assert_eq!(full.matches(") prosecutor: ").count(), 5);
        assert!(full.contains("no neighbors, conclude that there is no structural anomaly"));
        assert!(full.contains("opinions from 5 prosecutors"));

        assert!(build_judge_prompt(Profile::Arxiv, &center, &ctx_refs[..4], &st_refs, 5, 5).is_err());
        let six: Vec<_> = st_refs.iter().chain(st_refs.iter().take(1)).copied().collect();
        assert!(build_judge_prompt(Profile::Arxiv, &center, &ctx_refs, &six, 5, 5).is_err());
    }

    #[test]
    fn combined_prompt() {
        let p = build_combined_prompt(Profile::Cora, &node(0, None, "A."), Some(&node(1, None, "B."))).unwrap();
        let full = p.full_text();
        assert!(full.contains("neighboring text: B."));
        assert!(full.contains("\"normal\""));
        let iso = build_combined_prompt(Profile::Cora, &node(0, None, "A."), None).unwrap();
        assert!(iso.full_text().contains("no structural anomaly"));
    }

    #[test]
    fn prompt_invariants() {
        assert!(PromptMessages::new(vec![]).is_err());
        assert!(PromptMessages::new(vec![Message { role: Role::User, content: "x".into() }]).is_err());
        let leftover = finish(vec![Message { role: Role::System, content: "keep <neighbor text>".into() }]);
        assert!(matches!(leftover, Err(Error::Prompt(_))));
    }
}
