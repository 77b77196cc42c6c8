use super::Prediction;
use crate::error::{Error, Result};

/// A two-word answer vocabulary: the non-accusatory word first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    pub benign: Prediction,
    pub accusing: Prediction,
}

impl Vocabulary {
    pub const NORMALITY: Vocabulary = Vocabulary {
        benign: Prediction::Normal,
        accusing: Prediction::Abnormal,
    };
    pub const RELATEDNESS: Vocabulary = Vocabulary {
        benign: Prediction::Related,
        accusing: Prediction::Unrelated,
    };

    pub fn contains(&self, p: Prediction) -> bool {
        p == self.benign || p == self.accusing
    }

    fn lookup(&self, word: &str) -> Option<Prediction> {
        [self.benign, self.accusing]
            .into_iter()
            .find(|p| p.as_str() == word)
    }
}

const LABELS: &[&str] = &[
    "final judgment",
    "final judgement",
    "final answer",
    "final verdict",
    "prediction",
    "judgment",
    "judgement",
    "verdict",
    "answer",
    "conclusion",
];

fn drop_bracketed(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut depth = 0usize;
    for c in s.chars() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' if depth > 0 => depth -= 1,
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}

/// Lowercased alphabetic content of a line with bracketed tags and a
/// leading `label:` removed.
fn normalize(line: &str) -> String {
    let mut s = drop_bracketed(&line.to_lowercase());
    let trimmed = s.trim_start_matches(|c: char| !c.is_alphabetic()).to_string();
    for label in LABELS {
        if let Some(rest) = trimmed.strip_prefix(label) {
            let rest = rest.trim_start_matches(|c: char| c == '*' || c.is_whitespace());
            if let Some(rest) = rest.strip_prefix(':') {
                s = rest.to_string();
                break;
            }
        }
    }
    s.chars()
        .filter(|c| c.is_alphabetic() || c.is_whitespace())
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Finds the last line whose normalized content is exactly one vocabulary
/// word. Returns the text before that line and the word.
pub fn parse_prosecutor_output(text: &str, vocabulary: Vocabulary) -> Result<(String, Prediction)> {
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate().rev() {
        if let Some(p) = vocabulary.lookup(&normalize(line)) {
            let evidence = lines[..i].join("\n").trim().to_string();
            return Ok((evidence, p));
        }
    }
    Err(Error::NoVerdictFound)
}

pub fn parse_judge_output(text: &str) -> Result<(String, Prediction)> {
    parse_prosecutor_output(text, Vocabulary::NORMALITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prosecutor_examples() {
        let (ev, p) = parse_prosecutor_output(
            "(Evidence) X is off-topic.\n(Prediction) abnormal",
            Vocabulary::NORMALITY,
        )
        .unwrap();
        assert_eq!(ev, "(Evidence) X is off-topic.");
        assert_eq!(p, Prediction::Abnormal);

        let (_, p) = parse_prosecutor_output(
            "Both texts discuss optics.\nRelated.",
            Vocabulary::RELATEDNESS,
        )
        .unwrap();
        assert_eq!(p, Prediction::Related);

        assert!(matches!(
            parse_prosecutor_output("I cannot decide.", Vocabulary::NORMALITY),
            Err(Error::NoVerdictFound)
        ));
    }

    #[test]
    fn judge_examples() {
        let (ev, p) =
            parse_judge_output("(Evidence) Prosecutor 3 is convincing.\n(Judgment) Abnormal").unwrap();
        assert_eq!(ev, "(Evidence) Prosecutor 3 is convincing.");
        assert_eq!(p, Prediction::Abnormal);
        assert_eq!(parse_judge_output("Normal").unwrap(), (String::new(), Prediction::Normal));
        assert!(parse_judge_output("the weather is lovely\nqwerty").is_err());
    }

    #[test]
    fn markup_and_labels() {
        for line in ["**Abnormal**", "Final judgment: Abnormal", "\"abnormal\"", "- ABNORMAL!", "Judgment: **abnormal**"] {
            let (_, p) = parse_judge_output(&format!("reasoning\n{line}")).unwrap();
            assert_eq!(p, Prediction::Abnormal, "{line}");
        }
        // A sentence merely containing the word is not a verdict line.
        assert!(parse_judge_output("The text is abnormal in places.").is_err());
        // Words outside the vocabulary are ignored.
        assert!(parse_prosecutor_output("Normal", Vocabulary::RELATEDNESS).is_err());
        // The last matching line wins.
        let (ev, p) = parse_judge_output("Normal\nOn reflection:\nAbnormal").unwrap();
        assert_eq!((ev.as_str(), p), ("Normal\nOn reflection:", Prediction::Abnormal));
    }

    proptest! {
        #[test]
        fn rendered_opinions_parse_back(evidence in "[A-Za-z ,]{0,60}", accuse in any::<bool>(), structural in any::<bool>()) {
            let vocab = if structural { Vocabulary::RELATEDNESS } else { Vocabulary::NORMALITY };
            let word = if accuse { vocab.accusing } else { vocab.benign };
            let text = format!("(Evidence) {evidence}\n(Prediction) {word}");
            let (ev, p) = parse_prosecutor_output(&text, vocab).unwrap();
            prop_assert_eq!(p, word);
            prop_assert_eq!(ev, format!("(Evidence) {evidence}").trim().to_string());
        }
    }
}
