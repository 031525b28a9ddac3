//! Collapsed-Gibbs LDA baseline. Documents are expanded to token
//! occurrences in ascending term-id order, topic assignments are resampled
//! with the standard collapsed conditional, and the topic-word distribution
//! φ is read off the smoothed counts.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::BowDocument;
use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone)]
pub struct LdaState {
    /// Token ids per document, in the deterministic expansion order.
    pub docs: Vec<Vec<usize>>,
    /// Topic assignment per token occurrence, same shape as `docs`.
    pub z: Vec<Vec<usize>>,
    /// Document-topic counts, docs × K.
    pub n_dk: Vec<Vec<u32>>,
    /// Topic-word counts, K × D.
    pub n_kw: Vec<Vec<u32>>,
    /// Tokens per topic, K.
    pub n_k: Vec<u32>,
    pub alpha: f64,
    pub eta: f64,
    pub topics: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

/// Expand a bag of words into token occurrences, ascending term id.
fn expand(doc: &BowDocument) -> Vec<usize> {
    let mut out = Vec::with_capacity(doc.token_total as usize);
    for (&w, &c) in &doc.counts {
        for _ in 0..c {
            out.push(w);
        }
    }
    out
}

impl LdaState {
    fn init(
        corpus: &[BowDocument],
        topics: usize,
        vocab_size: usize,
        alpha: f64,
        eta: f64,
        seed: u64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let docs: Vec<Vec<usize>> = corpus.iter().map(expand).collect();
        let mut n_dk = vec![vec![0u32; topics]; docs.len()];
        let mut n_kw = vec![vec![0u32; vocab_size]; topics];
        let mut n_k = vec![0u32; topics];
        let mut z = Vec::with_capacity(docs.len());
        for (d, doc) in docs.iter().enumerate() {
            let mut zd = Vec::with_capacity(doc.len());
            for &w in doc {
                let k = rng.random_range(0..topics);
                zd.push(k);
                n_dk[d][k] += 1;
                n_kw[k][w] += 1;
                n_k[k] += 1;
            }
            z.push(zd);
        }
        LdaState { docs, z, n_dk, n_kw, n_k, alpha, eta, topics, vocab_size, seed }
    }

    /// Recount all statistics from `z` (test audit helper).
    pub fn recount(&self) -> (Vec<Vec<u32>>, Vec<Vec<u32>>, Vec<u32>) {
        let mut n_dk = vec![vec![0u32; self.topics]; self.docs.len()];
        let mut n_kw = vec![vec![0u32; self.vocab_size]; self.topics];
        let mut n_k = vec![0u32; self.topics];
        for (d, doc) in self.docs.iter().enumerate() {
            for (pos, &w) in doc.iter().enumerate() {
                let k = self.z[d][pos];
                n_dk[d][k] += 1;
                n_kw[k][w] += 1;
                n_k[k] += 1;
            }
        }
        (n_dk, n_kw, n_k)
    }
}

/// Resample the topic of token (d, pos) by inverse-CDF on `rng_draw`,
/// assuming the caller already removed the old assignment from the counts.
/// Increments the counts for the sampled topic and returns it.
pub fn gibbs_step(state: &mut LdaState, d: usize, pos: usize, rng_draw: f64) -> usize {
    let w = state.docs[d][pos];
    let dv = state.vocab_size as f64 * state.eta;
    let mut total = 0.0;
    let mut weights = vec![0.0; state.topics];
    for k in 0..state.topics {
        let wgt = (state.n_dk[d][k] as f64 + state.alpha)
            * (state.n_kw[k][w] as f64 + state.eta)
            / (state.n_k[k] as f64 + dv);
        weights[k] = wgt;
        total += wgt;
    }
    let target = rng_draw * total;
    let mut cum = 0.0;
    let mut chosen = state.topics - 1;
    for (k, &wgt) in weights.iter().enumerate() {
        cum += wgt;
        if cum > target {
            chosen = k;
            break;
        }
    }
    state.n_dk[d][chosen] += 1;
    state.n_kw[chosen][w] += 1;
    state.n_k[chosen] += 1;
    chosen
}

fn remove_assignment(state: &mut LdaState, d: usize, pos: usize) {
    let w = state.docs[d][pos];
    let k = state.z[d][pos];
    state.n_dk[d][k] -= 1;
    state.n_kw[k][w] -= 1;
    state.n_k[k] -= 1;
}

fn sweep(state: &mut LdaState, rng: &mut ChaCha8Rng) {
    for d in 0..state.docs.len() {
        for pos in 0..state.docs[d].len() {
            remove_assignment(state, d, pos);
            let draw = rng.random::<f64>();
            let k = gibbs_step(state, d, pos, draw);
            state.z[d][pos] = k;
        }
    }
}

/// φ[k][w] = (n_kw + η) / (n_k + D·η); rows are valid distributions for
/// any counts.
pub fn compute_phi(state: &LdaState) -> Mat {
    let mut phi = Mat::zeros(state.topics, state.vocab_size);
    let dv = state.vocab_size as f64 * state.eta;
    for k in 0..state.topics {
        let denom = state.n_k[k] as f64 + dv;
        let row = phi.row_mut(k);
        for w in 0..state.vocab_size {
            row[w] = (state.n_kw[k][w] as f64 + state.eta) / denom;
        }
    }
    phi
}

/// `iters` full Gibbs sweeps over a corpus. Deterministic given `seed`.
pub fn train_lda(
    corpus: &[BowDocument],
    vocab_size: usize,
    topics: usize,
    alpha: f64,
    eta: f64,
    iters: usize,
    seed: u64,
) -> Result<(LdaState, Mat)> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("train_lda on empty corpus".into()));
    }
    if topics == 0 || vocab_size == 0 {
        return Err(Error::config("lda needs topics >= 1 and vocab_size >= 1"));
    }
    if iters == 0 {
        return Err(Error::config("lda iters must be >= 1"));
    }
    if alpha <= 0.0 || eta <= 0.0 {
        return Err(Error::config("lda alpha and eta must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = LdaState::init(corpus, topics, vocab_size, alpha, eta, seed, &mut rng);
    for _ in 0..iters {
        sweep(&mut state, &mut rng);
    }
    let phi = compute_phi(&state);
    Ok((state, phi))
}

/// Fold-in Gibbs for unseen text: topic–word probabilities stay frozen at
/// `phi` while per-document assignments are resampled, yielding the
/// smoothed document–topic estimate θ_k = (m_k + α)/(n + Kα).
pub fn fold_in_theta(
    phi: &Mat,
    tokens: &[usize],
    alpha: f64,
    fold_iters: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let k_total = phi.rows;
    let mut m_k = vec![0u32; k_total];
    let mut z: Vec<usize> = Vec::with_capacity(tokens.len());
    for _ in tokens {
        let k = rng.random_range(0..k_total);
        z.push(k);
    }
    for &k in &z {
        m_k[k] += 1;
    }
    for _ in 0..fold_iters {
        for (pos, &w) in tokens.iter().enumerate() {
            m_k[z[pos]] -= 1;
            let mut weights = vec![0.0; k_total];
            let mut total = 0.0;
            for k in 0..k_total {
                let wgt = (m_k[k] as f64 + alpha) * phi.at(k, w);
                weights[k] = wgt;
                total += wgt;
            }
            let target = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut chosen = k_total - 1;
            for (k, &wgt) in weights.iter().enumerate() {
                cum += wgt;
                if cum > target {
                    chosen = k;
                    break;
                }
            }
            z[pos] = chosen;
            m_k[chosen] += 1;
        }
    }
    let denom = tokens.len() as f64 + k_total as f64 * alpha;
    m_k.iter().map(|&c| (c as f64 + alpha) / denom).collect()
}

/// Document-completion perplexity: fold-in Gibbs on the first
/// ⌈n/2⌉ tokens of each held-out document with φ fixed, then evaluate the
/// remaining tokens under Σ_k θ_dk·φ_kw.
pub fn lda_perplexity(
    state: &LdaState,
    phi: &Mat,
    heldout: &[BowDocument],
    fold_iters: usize,
) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::EmptyInput("lda_perplexity on empty held-out set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(state.seed.wrapping_add(0x0f01d));
    let k_total = state.topics;
    let alpha = state.alpha;
    let mut log_prob = 0.0;
    let mut eval_tokens = 0u64;
    for (di, doc) in heldout.iter().enumerate() {
        let tokens = expand(doc);
        if tokens.len() < 2 {
            return Err(Error::data(format!(
                "held-out document {di} has {} tokens; document completion needs >= 2",
                tokens.len()
            )));
        }
        let split = tokens.len().div_ceil(2);
        let (fold, eval) = tokens.split_at(split);
        let theta = fold_in_theta(phi, fold, alpha, fold_iters, &mut rng);

        for &w in eval {
            let mut p = 0.0;
            for k in 0..k_total {
                p += theta[k] * phi.at(k, w);
            }
            log_prob += p.ln();
            eval_tokens += 1;
        }
    }
    Ok((-log_prob / eval_tokens as f64).exp())
}
