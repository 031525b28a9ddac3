//! Evaluation suite: n-gram diversity (Dist-n, Ent-n), trigram repetition
//! across and within stories, ROUGE-1/L relevance, and language-model
//! perplexity of generated text through a pluggable scorer.

use std::collections::{BTreeMap, HashSet};

use crate::corpus::{sentence_bounds, Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::sampler::LmParams;

/// One evaluated story: its token stream plus half-open sentence spans
/// that partition the stream.
#[derive(Debug, Clone)]
pub struct Story {
    pub tokens: Vec<String>,
    pub bounds: Vec<(usize, usize)>,
}

impl Story {
    /// Derives sentence bounds from terminal punctuation.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let bounds = sentence_bounds(&tokens);
        Story { tokens, bounds }
    }
}

#[derive(Debug, Clone)]
pub struct StorySet {
    stories: Vec<Story>,
}

impl StorySet {
    pub fn new(stories: Vec<Story>) -> Result<Self> {
        if stories.is_empty() {
            return Err(Error::EmptyInput("story set must be nonempty".into()));
        }
        for (i, s) in stories.iter().enumerate() {
            let mut pos = 0;
            for &(a, b) in &s.bounds {
                if a != pos || b <= a {
                    return Err(Error::data(format!(
                        "story {i}: sentence bounds do not partition the tokens"
                    )));
                }
                pos = b;
            }
            if pos != s.tokens.len() {
                return Err(Error::data(format!(
                    "story {i}: sentence bounds do not partition the tokens"
                )));
            }
        }
        Ok(StorySet { stories })
    }

    pub fn stories(&self) -> &[Story] {
        &self.stories
    }

    pub fn len(&self) -> usize {
        self.stories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stories.is_empty()
    }
}

fn ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

/// Unique n-grams over total n-gram occurrences, pooled across stories.
pub fn dist_n(set: &StorySet, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::config("dist_n needs n >= 1"));
    }
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut total = 0usize;
    for s in &set.stories {
        for g in ngrams(&s.tokens, n) {
            seen.insert(g);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Degenerate(format!("no story has at least {n} tokens")));
    }
    Ok(seen.len() as f64 / total as f64)
}

/// Shannon entropy (natural log) of the pooled n-gram frequencies.
/// Counts live in a BTreeMap so the floating-point accumulation order — and
/// therefore the result — is identical across runs.
pub fn ent_n(set: &StorySet, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::config("ent_n needs n >= 1"));
    }
    let mut counts: BTreeMap<Vec<String>, u64> = BTreeMap::new();
    let mut total = 0u64;
    for s in &set.stories {
        for g in ngrams(&s.tokens, n) {
            *counts.entry(g).or_insert(0) += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Degenerate(format!("no story has at least {n} tokens")));
    }
    let t = total as f64;
    Ok(counts
        .values()
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.ln()
        })
        .sum())
}

/// For each story, the fraction of its trigram occurrences that also occur
/// in at least one other story; averaged over stories that have trigrams.
pub fn inter_story_repetition(set: &StorySet) -> Result<f64> {
    if set.len() < 2 {
        return Err(Error::data("inter-story repetition needs at least 2 stories"));
    }
    let occ: Vec<Vec<Vec<String>>> =
        set.stories.iter().map(|s| ngrams(&s.tokens, 3)).collect();
    let sets: Vec<HashSet<&Vec<String>>> =
        occ.iter().map(|o| o.iter().collect()).collect();
    let mut story_scores = Vec::new();
    for (i, grams) in occ.iter().enumerate() {
        if grams.is_empty() {
            continue;
        }
        let shared = grams
            .iter()
            .filter(|g| sets.iter().enumerate().any(|(j, s)| j != i && s.contains(g)))
            .count();
        story_scores.push(shared as f64 / grams.len() as f64);
    }
    if story_scores.is_empty() {
        return Err(Error::Degenerate("no story has at least 3 tokens".into()));
    }
    Ok(story_scores.iter().sum::<f64>() / story_scores.len() as f64)
}

fn intra_story_score(story: &Story) -> Option<f64> {
    let sentences: Vec<&[String]> =
        story.bounds.iter().map(|&(a, b)| &story.tokens[a..b]).collect();
    let mut prior: HashSet<Vec<String>> = HashSet::new();
    for g in ngrams(sentences[0], 3) {
        prior.insert(g);
    }
    let mut scores = Vec::new();
    for sent in &sentences[1..] {
        let grams = ngrams(sent, 3);
        if !grams.is_empty() {
            let hits = grams.iter().filter(|g| prior.contains(*g)).count();
            scores.push(hits as f64 / grams.len() as f64);
        }
        for g in grams {
            prior.insert(g);
        }
    }
    if scores.is_empty() {
        None
    } else {
        Some(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

/// Per sentence i ≥ 2, the fraction of its trigrams already present in
/// sentences 1..i−1 of the same story; averaged within each story, then
/// across stories. Errors when any story has fewer than two sentences.
pub fn intra_story_repetition(set: &StorySet) -> Result<f64> {
    for (i, s) in set.stories.iter().enumerate() {
        if s.bounds.len() < 2 {
            return Err(Error::data(format!(
                "story {i} has fewer than 2 sentences; use the lenient mode to skip it"
            )));
        }
    }
    let scores: Vec<f64> = set.stories.iter().filter_map(intra_story_score).collect();
    if scores.is_empty() {
        return Err(Error::Degenerate(
            "no sentence beyond the first has any trigram".into(),
        ));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Skip-and-count variant: stories with fewer than two sentences are
/// excluded, and the number skipped is reported alongside the average.
pub fn intra_story_repetition_lenient(set: &StorySet) -> Result<(f64, usize)> {
    let mut skipped = 0usize;
    let mut scores = Vec::new();
    for s in &set.stories {
        if s.bounds.len() < 2 {
            skipped += 1;
            continue;
        }
        if let Some(v) = intra_story_score(s) {
            scores.push(v);
        }
    }
    if scores.is_empty() {
        return Err(Error::Degenerate(
            "no story has two sentences with trigrams".into(),
        ));
    }
    Ok((scores.iter().sum::<f64>() / scores.len() as f64, skipped))
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Unigram-multiset F1 between a candidate and a reference.
pub fn rouge_1(candidate: &[String], reference: &[String]) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::EmptyInput("rouge_1 on empty text".into()));
    }
    let mut counts: BTreeMap<&String, i64> = BTreeMap::new();
    for w in reference {
        *counts.entry(w).or_insert(0) += 1;
    }
    let mut overlap = 0i64;
    for w in candidate {
        if let Some(c) = counts.get_mut(w) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    let p = overlap as f64 / candidate.len() as f64;
    let r = overlap as f64 / reference.len() as f64;
    Ok(f1(p, r))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence F1 between a candidate and a reference.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::EmptyInput("rouge_l on empty text".into()));
    }
    let l = lcs_len(candidate, reference) as f64;
    Ok(f1(l / candidate.len() as f64, l / reference.len() as f64))
}

/// Scores a token-id sequence: total log-probability of every position
/// after the first, plus the number of positions scored.
pub trait SequenceScorer {
    fn sequence_logprob(&self, ids: &[usize]) -> (f64, usize);
}

impl SequenceScorer for LmParams {
    fn sequence_logprob(&self, ids: &[usize]) -> (f64, usize) {
        crate::sampler::sequence_logprob(self, ids)
    }
}

/// exp(−mean log-likelihood) over all stories. Each story is framed as
/// [BOS] tokens [EOS] (unknowns mapped to UNK), so every story token plus
/// the closing EOS is predicted.
pub fn text_perplexity<S: SequenceScorer>(
    set: &StorySet,
    vocab: &Vocabulary,
    scorer: &S,
) -> Result<f64> {
    let mut logp = 0.0;
    let mut preds = 0usize;
    for s in &set.stories {
        let mut ids = Vec::with_capacity(s.tokens.len() + 2);
        ids.push(BOS);
        ids.extend(s.tokens.iter().map(|t| vocab.id_or_unk(t)));
        ids.push(EOS);
        let (lp, n) = scorer.sequence_logprob(&ids);
        logp += lp;
        preds += n;
    }
    if preds == 0 {
        return Err(Error::Degenerate("no token to score".into()));
    }
    Ok((-logp / preds as f64).exp())
}
