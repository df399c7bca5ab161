//! RAKE keyword extraction.
//!
//! Candidate phrases are maximal runs of non-stopword words between
//! stopwords/punctuation; each word scores degree/frequency over the phrase
//! co-occurrence graph and a phrase scores the sum of its word scores.
//! Output is unique phrases in descending score order, ties broken by first
//! occurrence.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::transcript::normalize_token;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RakeKeyword {
    pub phrase: String,
    pub score: f64,
}

fn is_sentence_split(c: char) -> bool {
    matches!(c, '.' | ',' | '!' | '?' | ';' | ':' | '\n' | '\r' | '\t' | '(' | ')' | '"')
}

fn candidate_phrases(text: &str, stoplist: &HashSet<String>) -> Vec<Vec<String>> {
    let mut phrases = Vec::new();
    for sentence in text.split(is_sentence_split) {
        let mut current: Vec<String> = Vec::new();
        for raw in sentence.split_whitespace() {
            let word = normalize_token(raw);
            if word.is_empty() || stoplist.contains(&word) {
                if !current.is_empty() {
                    phrases.push(std::mem::take(&mut current));
                }
            } else {
                current.push(word);
            }
        }
        if !current.is_empty() {
            phrases.push(current);
        }
    }
    phrases
}

pub fn rake_keywords(text: &str, stoplist: &HashSet<String>) -> Vec<RakeKeyword> {
    let phrases = candidate_phrases(text, stoplist);
    let mut freq: HashMap<&str, f64> = HashMap::new();
    let mut degree: HashMap<&str, f64> = HashMap::new();
    for phrase in &phrases {
        for word in phrase {
            *freq.entry(word).or_insert(0.0) += 1.0;
            // degree counts co-occurring words including the word itself
            *degree.entry(word).or_insert(0.0) += phrase.len() as f64;
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for phrase in &phrases {
        let joined = phrase.join(" ");
        if !seen.insert(joined.clone()) {
            continue;
        }
        let score = phrase
            .iter()
            .map(|w| degree[w.as_str()] / freq[w.as_str()])
            .sum();
        out.push(RakeKeyword { phrase: joined, score });
    }
    // stable sort keeps first-occurrence order among equal scores
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out
}
