//! Keyword-based content classification.

use super::{IngestError, MessageFlags};
use regex::Regex;
use serde::{Deserialize, Serialize};

/// Keyword lists driving [`classify_content`]. Matching is case-insensitive
/// and anchored on word boundaries, so "thanks!" matches but "nothanks"
/// does not. Entries may be multi-word phrases.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct KeywordLists {
    pub question_words: Vec<String>,
    pub thanks: Vec<String>,
    pub praise: Vec<String>,
}

impl Default for KeywordLists {
    fn default() -> Self {
        let list = |items: &[&str]| items.iter().map(|s| s.to_string()).collect();
        Self {
            question_words: list(&["how", "why", "what", "when", "where", "who"]),
            thanks: list(&["thanks", "thank you", "thankyou"]),
            praise: list(&["well done", "congrats", "congratulations", "great work"]),
        }
    }
}

impl KeywordLists {
    pub fn compile(&self) -> Result<CompiledKeywords, IngestError> {
        let compile_set = |words: &[String]| -> Result<Vec<Regex>, IngestError> {
            words
                .iter()
                .map(|w| {
                    let trimmed = w.trim();
                    if trimmed.is_empty() {
                        return Err(IngestError::BadKeywords("empty keyword".into()));
                    }
                    Regex::new(&format!(r"(?i)\b{}\b", regex::escape(trimmed)))
                        .map_err(|e| IngestError::BadKeywords(e.to_string()))
                })
                .collect()
        };
        Ok(CompiledKeywords {
            question_words: compile_set(&self.question_words)?,
            thanks: compile_set(&self.thanks)?,
            praise: compile_set(&self.praise)?,
        })
    }
}

/// Precompiled matchers for one keyword configuration.
#[derive(Clone, Debug)]
pub struct CompiledKeywords {
    question_words: Vec<Regex>,
    thanks: Vec<Regex>,
    praise: Vec<Regex>,
}

impl CompiledKeywords {
    pub fn classify(&self, text: &str) -> MessageFlags {
        let any = |set: &[Regex]| set.iter().any(|re| re.is_match(text));
        MessageFlags {
            question_word: any(&self.question_words),
            question_mark: text.contains('?'),
            thanks: any(&self.thanks),
            praise: any(&self.praise),
        }
    }
}

/// Derives content flags for a message body. Used only when the log does
/// not carry precomputed flag columns.
pub fn classify_content(text: &str, keywords: &KeywordLists) -> Result<MessageFlags, IngestError> {
    Ok(keywords.compile()?.classify(text))
}
