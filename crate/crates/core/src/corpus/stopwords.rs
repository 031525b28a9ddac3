//! The stopword list shipped with the artifact.
//!
//! A fixed set of English function words (plus their common contractions,
//! which the tokenizer keeps as single tokens). Content-word pipelines drop
//! a token when either its surface form or its stem is in this set.

use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "cannot", "could", "did", "do", "does", "doing", "down", "during", "each",
    "few", "for", "from", "further", "had", "has", "have", "having", "he", "her", "here",
    "hers", "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it",
    "its", "itself", "just", "me", "more", "most", "my", "myself", "no", "nor", "not", "now",
    "of", "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves", "out",
    "over", "own", "same", "she", "should", "so", "some", "such", "than", "that", "the",
    "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this",
    "those", "through", "to", "too", "under", "until", "up", "very", "was", "we", "were",
    "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would",
    "you", "your", "yours", "yourself", "yourselves",
    // contractions the tokenizer preserves
    "aren't", "can't", "couldn't", "didn't", "doesn't", "don't", "hadn't", "hasn't",
    "haven't", "he'd", "he'll", "he's", "here's", "how's", "i'd", "i'll", "i'm", "i've",
    "isn't", "it's", "let's", "mustn't", "shan't", "she'd", "she'll", "she's", "shouldn't",
    "that's", "there's", "they'd", "they'll", "they're", "they've", "wasn't", "we'd",
    "we'll", "we're", "we've", "weren't", "what's", "when's", "where's", "who's", "why's",
    "won't", "wouldn't", "you'd", "you'll", "you're", "you've",
];

/// The built-in list as a set.
pub fn builtin() -> HashSet<String> {
    STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// Load a stopword file: one token per line, UTF-8, blank lines ignored.
pub fn load(path: &Path) -> Result<HashSet<String>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut set = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let tok = line.trim();
        if !tok.is_empty() {
            set.insert(tok.to_lowercase());
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_is_lowercase_and_unique() {
        let set = builtin();
        assert_eq!(set.len(), STOPWORDS.len(), "duplicate stopword entries");
        for w in STOPWORDS {
            assert_eq!(*w, w.to_lowercase());
        }
    }

    #[test]
    fn roughly_150_entries() {
        assert!(STOPWORDS.len() >= 140 && STOPWORDS.len() <= 200, "len {}", STOPWORDS.len());
    }
}
