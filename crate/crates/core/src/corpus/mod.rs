//! Corpus ingestion: tokenization, vocabularies, bag-of-words views,
//! word embeddings, and the JSONL dataset loader.

pub mod embed;
pub mod stem;
pub mod stopwords;

pub use embed::{load_embeddings, mean_embedding, EmbeddingTable};
pub use stem::stem;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Characters split off the end of a whitespace-delimited piece, each
/// becoming its own token.
const TERMINAL_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':'];

/// Lowercase, split on whitespace, peel terminal punctuation into separate
/// tokens. Apostrophes stay inside their token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in text.split_whitespace() {
        let lower = piece.to_lowercase();
        let mut base = lower.as_str();
        let mut puncts: Vec<char> = Vec::new();
        while let Some(last) = base.chars().last() {
            if TERMINAL_PUNCT.contains(&last) {
                puncts.push(last);
                base = &base[..base.len() - last.len_utf8()];
            } else {
                break;
            }
        }
        if !base.is_empty() {
            out.push(base.to_string());
        }
        for p in puncts.into_iter().rev() {
            out.push(p.to_string());
        }
    }
    out
}

/// Sentence spans derived from terminal sentence punctuation (`.` `!` `?`);
/// a trailing fragment without one forms the final sentence.
pub fn sentence_bounds(tokens: &[String]) -> Vec<(usize, usize)> {
    let mut bounds = Vec::new();
    let mut start = 0;
    for (i, tok) in tokens.iter().enumerate() {
        if tok == "." || tok == "!" || tok == "?" {
            bounds.push((start, i + 1));
            start = i + 1;
        }
    }
    if start < tokens.len() {
        bounds.push((start, tokens.len()));
    }
    bounds
}

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;
pub const UNK: usize = 4;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const SEP_TOKEN: &str = "<sep>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabKind {
    /// Stemmed content words, no stopwords. Used by the topic model and the
    /// skeleton sampler.
    Topic,
    /// Surface forms with specials at indices 0-4. Used by the story
    /// generator and the fluency scorer.
    Generation,
}

/// Token <-> id bijection.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    kind: VocabKind,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(kind: VocabKind, tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("empty vocabulary".into()));
        }
        if kind == VocabKind::Generation {
            let specials = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, SEP_TOKEN, UNK_TOKEN];
            for (i, s) in specials.iter().enumerate() {
                if tokens.get(i).map(String::as_str) != Some(*s) {
                    return Err(Error::data(format!(
                        "generation vocabulary must start with {specials:?}, found {:?} at {i}",
                        tokens.get(i)
                    )));
                }
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { kind, tokens, index })
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Map a surface token to a generation-vocabulary id, falling back to UNK.
    pub fn id_or_unk(&self, token: &str) -> usize {
        debug_assert_eq!(self.kind, VocabKind::Generation);
        self.get(token).unwrap_or(UNK)
    }
}

/// Sparse term counts for the topic-model view of one document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BowDocument {
    pub counts: BTreeMap<usize, u32>,
    pub token_total: u32,
}

impl BowDocument {
    pub fn is_empty(&self) -> bool {
        self.token_total == 0
    }

    /// Dense count vector of length `d`.
    pub fn dense(&self, d: usize) -> Vec<f64> {
        let mut x = vec![0.0; d];
        for (&w, &c) in &self.counts {
            assert!(w < d, "term id {w} out of range {d}");
            x[w] = c as f64;
        }
        x
    }

    /// Counts normalized by token_total, the inference-network input.
    pub fn normalized_dense(&self, d: usize) -> Vec<f64> {
        let mut x = self.dense(d);
        if self.token_total > 0 {
            let inv = 1.0 / self.token_total as f64;
            for v in &mut x {
                *v *= inv;
            }
        }
        x
    }
}

/// One training example: short input text plus its story.
#[derive(Debug, Clone)]
pub struct StoryPair {
    pub input_tokens: Vec<String>,
    pub story_tokens: Vec<String>,
    pub sentence_bounds: Vec<(usize, usize)>,
}

/// The shared content-word pipeline: drop tokens without any alphabetic
/// character (punctuation, numbers), drop stopwords by surface form, stem,
/// drop stems that are themselves stopwords.
pub fn content_stems(tokens: &[String], stopwords: &HashSet<String>) -> Vec<String> {
    let mut out = Vec::new();
    for tok in tokens {
        if !tok.chars().any(|c| c.is_alphabetic()) {
            continue;
        }
        if stopwords.contains(tok.as_str()) {
            continue;
        }
        let s = stem(tok);
        if stopwords.contains(s.as_str()) {
            continue;
        }
        out.push(s);
    }
    out
}

/// Most frequent content stems, ties broken by lexicographic order.
pub fn build_topic_vocabulary(
    docs: &[Vec<String>],
    max_size: usize,
    stopwords: &HashSet<String>,
) -> Result<Vocabulary> {
    assert!(max_size >= 1, "max_size must be >= 1");
    let mut counts: HashMap<String, u64> = HashMap::new();
    for doc in docs {
        for s in content_stems(doc, stopwords) {
            *counts.entry(s).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyInput(
            "empty topic vocabulary: no content tokens survive stopword filtering".into(),
        ));
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size);
    Vocabulary::new(VocabKind::Topic, ranked.into_iter().map(|(t, _)| t).collect())
}

/// Most frequent surface tokens behind the five specials; `max_size` caps
/// the total size including specials.
pub fn build_generation_vocabulary(docs: &[Vec<String>], max_size: usize) -> Result<Vocabulary> {
    assert!(max_size > 5, "generation vocabulary needs room beyond specials");
    let mut counts: HashMap<String, u64> = HashMap::new();
    for doc in docs {
        for tok in doc {
            *counts.entry(tok.clone()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - 5);
    let mut tokens = vec![
        PAD_TOKEN.to_string(),
        BOS_TOKEN.to_string(),
        EOS_TOKEN.to_string(),
        SEP_TOKEN.to_string(),
        UNK_TOKEN.to_string(),
    ];
    tokens.extend(ranked.into_iter().map(|(t, _)| t));
    Vocabulary::new(VocabKind::Generation, tokens)
}

/// Bag-of-words over the topic vocabulary. Out-of-vocabulary content is
/// dropped; an all-OOV document yields an empty bag.
pub fn to_bow(tokens: &[String], vocab: &Vocabulary, stopwords: &HashSet<String>) -> BowDocument {
    assert_eq!(vocab.kind(), VocabKind::Topic, "to_bow requires a topic vocabulary");
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    let mut total = 0u32;
    for s in content_stems(tokens, stopwords) {
        if let Some(id) = vocab.get(&s) {
            *counts.entry(id).or_insert(0) += 1;
            total += 1;
        }
    }
    BowDocument { counts, token_total: total }
}

/// Load a JSONL dataset: one object per line with `title` (or `summary`)
/// and `story` string fields.
pub fn load_story_pairs(path: &Path) -> Result<Vec<StoryPair>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| {
            Error::data(format!("{}:{}: invalid JSON: {e}", path.display(), lineno + 1))
        })?;
        let input_text = value
            .get("title")
            .or_else(|| value.get("summary"))
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                Error::data(format!(
                    "{}:{}: missing string field `title` or `summary`",
                    path.display(),
                    lineno + 1
                ))
            })?;
        let story_text = value.get("story").and_then(|v| v.as_str()).ok_or_else(|| {
            Error::data(format!("{}:{}: missing string field `story`", path.display(), lineno + 1))
        })?;
        let input_tokens = tokenize(input_text);
        let story_tokens = tokenize(story_text);
        if input_tokens.is_empty() {
            return Err(Error::data(format!(
                "{}:{}: empty input text",
                path.display(),
                lineno + 1
            )));
        }
        if story_tokens.is_empty() {
            return Err(Error::data(format!("{}:{}: empty story", path.display(), lineno + 1)));
        }
        let bounds = sentence_bounds(&story_tokens);
        pairs.push(StoryPair { input_tokens, story_tokens, sentence_bounds: bounds });
    }
    if pairs.is_empty() {
        return Err(Error::data(format!("{}: no records", path.display())));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_hand_cases() {
        assert_eq!(tokenize("Sunflower seeds!"), toks(&["sunflower", "seeds", "!"]));
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("Don't stop."), toks(&["don't", "stop", "."]));
    }

    #[test]
    fn tokenize_peels_stacked_punctuation_in_order() {
        assert_eq!(tokenize("wait!?"), toks(&["wait", "!", "?"]));
        assert_eq!(tokenize(", ."), toks(&[",", "."]));
    }

    #[test]
    fn tokenize_is_idempotent_on_its_own_output() {
        let cases = ["Hello, world! Don't panic...", "a,b c;d:", "?!"];
        for c in cases {
            let once = tokenize(c);
            let again = tokenize(&once.join(" "));
            assert_eq!(once, again, "case {c:?}");
        }
    }

    #[test]
    fn vocabulary_roundtrip_bijection() {
        let v = Vocabulary::new(VocabKind::Topic, toks(&["cat", "dog", "fish"])).unwrap();
        for i in 0..v.len() {
            assert_eq!(v.get(v.token(i)).unwrap(), i);
        }
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        assert!(Vocabulary::new(VocabKind::Topic, toks(&["cat", "cat"])).is_err());
    }

    #[test]
    fn generation_vocab_has_specials_at_fixed_indices() {
        let docs = vec![toks(&["the", "dog", "ran", "."])];
        let v = build_generation_vocabulary(&docs, 100).unwrap();
        assert_eq!(v.token(PAD), PAD_TOKEN);
        assert_eq!(v.token(BOS), BOS_TOKEN);
        assert_eq!(v.token(EOS), EOS_TOKEN);
        assert_eq!(v.token(SEP), SEP_TOKEN);
        assert_eq!(v.token(UNK), UNK_TOKEN);
        assert_eq!(v.id_or_unk("zebra"), UNK);
        assert!(v.get("the").is_some());
        assert!(v.get(".").is_some());
    }

    #[test]
    fn topic_vocab_hand_cases() {
        let empty = HashSet::new();
        let v = build_topic_vocabulary(&[toks(&["dog", "dog", "cat"])], 1, &empty).unwrap();
        assert_eq!(v.tokens(), &["dog".to_string()]);

        let stop: HashSet<String> = ["the".to_string()].into_iter().collect();
        assert!(build_topic_vocabulary(&[toks(&["the", "the"])], 10, &stop).is_err());

        let v = build_topic_vocabulary(&[toks(&["dog", "cat"])], 2, &empty).unwrap();
        assert_eq!(v.tokens(), &["cat".to_string(), "dog".to_string()]);
    }

    #[test]
    fn topic_vocab_stems_and_drops_punctuation() {
        let empty = HashSet::new();
        let v =
            build_topic_vocabulary(&[toks(&["spilling", "spill", "!", "1942"])], 10, &empty).unwrap();
        assert_eq!(v.tokens(), &["spill".to_string()]);
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn to_bow_hand_cases() {
        let empty = HashSet::new();
        let vocab = Vocabulary::new(VocabKind::Topic, toks(&["dog"])).unwrap();

        let bow = to_bow(&toks(&["dog", "dog", "xyz"]), &vocab, &empty);
        assert_eq!(bow.counts.get(&0), Some(&2));
        assert_eq!(bow.token_total, 2);

        let bow = to_bow(&[], &vocab, &empty);
        assert!(bow.counts.is_empty());
        assert_eq!(bow.token_total, 0);

        let bow = to_bow(&toks(&["cat"]), &vocab, &empty);
        assert!(bow.counts.is_empty());
        assert_eq!(bow.token_total, 0);
    }

    #[test]
    fn to_bow_total_matches_surviving_tokens() {
        let stop = stopwords::builtin();
        let vocab = build_topic_vocabulary(
            &[toks(&["dogs", "dog", "running", "the", "cat"])],
            10,
            &stop,
        )
        .unwrap();
        let tokens = toks(&["the", "dogs", "running", ",", "cat", "unknownword"]);
        let bow = to_bow(&tokens, &vocab, &stop);
        let survivors = content_stems(&tokens, &stop)
            .into_iter()
            .filter(|s| vocab.get(s).is_some())
            .count();
        assert_eq!(bow.token_total as usize, survivors);
    }

    #[test]
    fn sentence_bounds_partition() {
        let t = tokenize("One two. Three! Four");
        let b = sentence_bounds(&t);
        assert_eq!(b, vec![(0, 3), (3, 5), (5, 6)]);
        // spans partition the tokens in order
        let mut prev = 0;
        for (s, e) in b {
            assert_eq!(s, prev);
            assert!(e > s);
            prev = e;
        }
        assert_eq!(prev, t.len());
    }

    #[test]
    fn dataset_loader_reports_offending_line() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "{{\"title\": \"ok\", \"story\": \"A story.\"}}").unwrap();
        writeln!(f, "{{\"title\": \"no story\"}}").unwrap();
        let err = load_story_pairs(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn dataset_loader_accepts_summary_field() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ok.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "{{\"summary\": \"a summary\", \"story\": \"Body. More!\"}}").unwrap();
        let pairs = load_story_pairs(&path).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].input_tokens, toks(&["a", "summary"]));
        assert_eq!(pairs[0].sentence_bounds.len(), 2);
    }
}
