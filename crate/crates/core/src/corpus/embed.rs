//! Pretrained word embeddings in the plain-text `word v1 v2 ...` format.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Word -> dense vector table with a fixed dimensionality.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1);
        EmbeddingTable { dim, vectors: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, word: &str, v: Vec<f64>) {
        assert_eq!(v.len(), self.dim);
        self.vectors.insert(word.to_string(), v);
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }

    /// Vector for `word`; absent words map to the zero vector.
    pub fn lookup(&self, word: &str) -> Vec<f64> {
        self.vectors.get(word).cloned().unwrap_or_else(|| vec![0.0; self.dim])
    }
}

/// Parse an embedding file. Lines that do not parse as a word followed by
/// floats are skipped and counted; a line that parses cleanly but has the
/// wrong number of components is a hard error.
pub fn load_embeddings(path: &Path, expected_dim: usize) -> Result<(EmbeddingTable, usize)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = EmbeddingTable::new(expected_dim);
    let mut skipped = 0usize;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = match parts.next() {
            Some(w) => w,
            None => continue,
        };
        let mut vals = Vec::new();
        let mut parse_failed = false;
        for p in parts {
            match p.parse::<f64>() {
                Ok(v) if v.is_finite() => vals.push(v),
                _ => {
                    parse_failed = true;
                    break;
                }
            }
        }
        if parse_failed || vals.is_empty() {
            skipped += 1;
            continue;
        }
        if vals.len() != expected_dim {
            return Err(Error::data(format!(
                "{}:{}: embedding for {word:?} has {} components, expected {expected_dim}",
                path.display(),
                lineno + 1,
                vals.len()
            )));
        }
        table.insert(word, vals);
    }
    if table.is_empty() {
        return Err(Error::data(format!(
            "{}: no embeddings parsed (dim {expected_dim})",
            path.display()
        )));
    }
    Ok((table, skipped))
}

/// Mean of the embeddings of `tokens`; absent tokens contribute zero
/// vectors but still count in the denominator.
pub fn mean_embedding(tokens: &[String], table: &EmbeddingTable) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("mean_embedding on empty token list".into()));
    }
    let mut acc = vec![0.0; table.dim()];
    for tok in tokens {
        if let Some(v) = table.vectors.get(tok.as_str()) {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
    }
    let inv = 1.0 / tokens.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn two_word_table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(2);
        t.insert("a", vec![2.0, 0.0]);
        t.insert("b", vec![0.0, 2.0]);
        t
    }

    #[test]
    fn mean_embedding_hand_cases() {
        let t = two_word_table();
        let m = mean_embedding(&toks(&["a", "b"]), &t).unwrap();
        assert_abs_diff_eq!(m[0], 1.0);
        assert_abs_diff_eq!(m[1], 1.0);

        let m = mean_embedding(&toks(&["a", "unknown"]), &t).unwrap();
        assert_abs_diff_eq!(m[0], 1.0);
        assert_abs_diff_eq!(m[1], 0.0);

        assert!(mean_embedding(&[], &t).is_err());
    }

    #[test]
    fn loader_skips_malformed_and_counts() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "cat 1.0 2.0").unwrap();
        writeln!(f, "dog 0.5 notanumber").unwrap();
        writeln!(f, "loneword").unwrap();
        writeln!(f, "fish -1.5 3.25").unwrap();
        let (table, skipped) = load_embeddings(&path, 2).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(skipped, 2);
        assert_abs_diff_eq!(table.lookup("fish")[1], 3.25);
        assert_eq!(table.lookup("absent"), vec![0.0, 0.0]);
    }

    #[test]
    fn loader_rejects_clean_wrong_dimension() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "cat 1.0 2.0 3.0").unwrap();
        assert!(load_embeddings(&path, 2).is_err());
    }

    #[test]
    fn loader_rejects_empty_table() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "junk x y").unwrap();
        assert!(load_embeddings(&path, 2).is_err());
    }
}
