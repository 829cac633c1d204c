//! Query parsing: stop-word removal plus a fixed action-verb lexicon.
//!
//! The lexicon and stop-word list are versioned data files compiled into the
//! crate, so parsing is fully deterministic and needs no model in the loop.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const ACTION_VERBS_V1: &str = include_str!("../../data/action_verbs.txt");
const STOPWORDS_V1: &str = include_str!("../../data/stopwords.txt");

fn word_set(raw: &'static str) -> BTreeSet<&'static str> {
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

fn action_verbs() -> &'static BTreeSet<&'static str> {
    static SET: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| word_set(ACTION_VERBS_V1))
}

fn stopwords() -> &'static BTreeSet<&'static str> {
    static SET: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| word_set(STOPWORDS_V1))
}

/// The parsed core intent of a retrieval query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryIntent {
    pub raw_query: String,
    /// Content nouns and other non-verb tokens, lowercased, deduplicated,
    /// in first-occurrence order.
    pub objects: Vec<String>,
    /// Tokens found in the action-verb lexicon, same normalization.
    pub actions: Vec<String>,
}

impl QueryIntent {
    /// Objects then actions, the order relevance questions are asked in.
    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.objects
            .iter()
            .map(String::as_str)
            .chain(self.actions.iter().map(String::as_str))
    }

    pub fn term_count(&self) -> usize {
        self.objects.len() + self.actions.len()
    }
}

/// Which mechanism extracts objects/actions from the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryParser {
    /// Built-in stop-word list plus action-verb lexicon; no model involved.
    #[default]
    Lexicon,
    /// Delegate extraction to the caption provider.
    Provider,
}

fn tokenize(raw: &str) -> Vec<String> {
    raw.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Split a query into objects and actions.
///
/// Tokens are lowercased alphanumeric runs; stop-words are dropped, tokens in
/// the action lexicon become actions, and everything else becomes an object.
pub fn parse_query(raw: &str) -> Result<QueryIntent> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let mut objects = Vec::new();
    let mut actions = Vec::new();
    let mut seen = BTreeSet::new();
    for token in tokenize(trimmed) {
        if stopwords().contains(token.as_str()) || !seen.insert(token.clone()) {
            continue;
        }
        if action_verbs().contains(token.as_str()) {
            actions.push(token);
        } else {
            objects.push(token);
        }
    }
    Ok(QueryIntent {
        raw_query: trimmed.to_string(),
        objects,
        actions,
    })
}

/// Comma-separated provider answer -> normalized term list.
pub(crate) fn split_term_list(answer: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for part in answer.split(',') {
        for token in tokenize(part) {
            if !stopwords().contains(token.as_str()) && seen.insert(token.clone()) {
                out.push(token);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_objects_and_actions() {
        // Walked by hand against the shipped lexicon: "a" and "the" are
        // stop-words, "holding" is in the verb list, "man"/"child" are not.
        let intent = parse_query("a man holding a child").unwrap();
        assert_eq!(intent.objects, vec!["man", "child"]);
        assert_eq!(intent.actions, vec!["holding"]);
    }

    #[test]
    fn single_noun_has_no_actions() {
        let intent = parse_query("dog").unwrap();
        assert_eq!(intent.objects, vec!["dog"]);
        assert!(intent.actions.is_empty());
    }

    #[test]
    fn empty_query_is_an_error() {
        assert!(matches!(parse_query(""), Err(Error::EmptyQuery)));
        assert!(matches!(parse_query("   \t"), Err(Error::EmptyQuery)));
    }

    #[test]
    fn tokens_are_lowercased_and_deduplicated() {
        let intent = parse_query("Dog chases the dog, DOG!").unwrap();
        assert_eq!(intent.objects, vec!["dog", "chases"]);
        assert!(intent.actions.is_empty());
    }

    #[test]
    fn punctuation_does_not_leak_into_tokens() {
        // "take" sits in the verb lexicon; "off", "a", "the", "of", "s",
        // "before" are stop-words.
        let intent = parse_query("a lady's video before the take-off of a plane").unwrap();
        assert_eq!(intent.objects, vec!["lady", "video", "plane"]);
        assert_eq!(intent.actions, vec!["take"]);
    }

    #[test]
    fn term_order_is_objects_then_actions() {
        let intent = parse_query("woman riding bicycle").unwrap();
        let terms: Vec<&str> = intent.terms().collect();
        assert_eq!(terms, vec!["woman", "bicycle", "riding"]);
    }
}
