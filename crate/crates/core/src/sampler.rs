//! Skeleton word sampler. A predicted topic mixture θ̂ is decoded into a
//! story-level word distribution p = softmax(βᵀθ̂) over the topic
//! vocabulary, and a forward stacked-GRU language model over content words
//! emits an N-word skeleton auto-regressively, restricted at every step to
//! the top-N′ words of p that have not been emitted yet.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{content_stems, Vocabulary};
use crate::error::{Error, Result};
use crate::linalg::{add_scaled, log_sum_exp, sigmoid, softmax, Mat};
use crate::ntm::TopicDistribution;
use crate::optim::Adadelta;

#[derive(Debug, Clone)]
pub struct LmConfig {
    /// Vocabulary size the model predicts over.
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// GRU state width per layer.
    pub state: usize,
    pub layers: usize,
    pub lr: f64,
    pub batch: usize,
    /// Drop probability applied between stacked layers at train time.
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            vocab_size: 0,
            embed_dim: 300,
            state: 512,
            layers: 3,
            lr: 0.001,
            batch: 20,
            dropout: 0.15,
            epochs: 10,
            seed: 0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.state == 0 {
            return Err(Error::config("lm dims must be >= 1"));
        }
        if self.layers == 0 {
            return Err(Error::config("lm.layers must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("lm.dropout must lie in [0, 1)"));
        }
        if self.batch == 0 {
            return Err(Error::config("lm.batch must be >= 1"));
        }
        Ok(())
    }
}

/// One GRU layer in the packed gate layout: rows [0,S) reset, [S,2S)
/// update, [2S,3S) candidate.
#[derive(Debug, Clone)]
pub struct GruLayer {
    /// 3S × input width.
    pub w_ih: Mat,
    /// 3S × S.
    pub w_hh: Mat,
    pub b_ih: Vec<f64>,
    pub b_hh: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LmParams {
    /// D_t × E token embeddings.
    pub embedding: Mat,
    pub layers: Vec<GruLayer>,
    /// D_t × S output head.
    pub out_w: Mat,
    pub out_b: Vec<f64>,
    pub dropout: f64,
}

impl LmParams {
    pub fn init(cfg: &LmConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut in_dim = cfg.embed_dim;
        for _ in 0..cfg.layers {
            layers.push(GruLayer {
                w_ih: Mat::xavier(&mut rng, 3 * cfg.state, in_dim),
                w_hh: Mat::xavier(&mut rng, 3 * cfg.state, cfg.state),
                b_ih: vec![0.0; 3 * cfg.state],
                b_hh: vec![0.0; 3 * cfg.state],
            });
            in_dim = cfg.state;
        }
        Ok(LmParams {
            embedding: Mat::uniform(&mut rng, cfg.vocab_size, cfg.embed_dim, 0.1),
            layers,
            out_w: Mat::xavier(&mut rng, cfg.vocab_size, cfg.state),
            out_b: vec![0.0; cfg.vocab_size],
            dropout: cfg.dropout,
        })
    }

    pub fn zeros(cfg: &LmConfig) -> Self {
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut in_dim = cfg.embed_dim;
        for _ in 0..cfg.layers {
            layers.push(GruLayer {
                w_ih: Mat::zeros(3 * cfg.state, in_dim),
                w_hh: Mat::zeros(3 * cfg.state, cfg.state),
                b_ih: vec![0.0; 3 * cfg.state],
                b_hh: vec![0.0; 3 * cfg.state],
            });
            in_dim = cfg.state;
        }
        LmParams {
            embedding: Mat::zeros(cfg.vocab_size, cfg.embed_dim),
            layers,
            out_w: Mat::zeros(cfg.vocab_size, cfg.state),
            out_b: vec![0.0; cfg.vocab_size],
            dropout: cfg.dropout,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows
    }

    pub fn state_width(&self) -> usize {
        self.layers[0].w_hh.cols
    }

    /// Fresh all-zero recurrent state, one vector per layer.
    pub fn zero_state(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| vec![0.0; l.w_hh.cols]).collect()
    }

    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = vec![(
            "embedding".into(),
            vec![self.embedding.rows, self.embedding.cols],
            &self.embedding.data,
        )];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("gru.{i}.w_ih"), vec![l.w_ih.rows, l.w_ih.cols], &l.w_ih.data));
            out.push((format!("gru.{i}.w_hh"), vec![l.w_hh.rows, l.w_hh.cols], &l.w_hh.data));
            out.push((format!("gru.{i}.b_ih"), vec![l.b_ih.len()], &l.b_ih));
            out.push((format!("gru.{i}.b_hh"), vec![l.b_hh.len()], &l.b_hh));
        }
        out.push(("out.w".into(), vec![self.out_w.rows, self.out_w.cols], &self.out_w.data));
        out.push(("out.b".into(), vec![self.out_b.len()], &self.out_b));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out: Vec<(String, &mut Vec<f64>)> =
            vec![("embedding".into(), &mut self.embedding.data)];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("gru.{i}.w_ih"), &mut l.w_ih.data));
            out.push((format!("gru.{i}.w_hh"), &mut l.w_hh.data));
            out.push((format!("gru.{i}.b_ih"), &mut l.b_ih));
            out.push((format!("gru.{i}.b_hh"), &mut l.b_hh));
        }
        out.push(("out.w".into(), &mut self.out_w.data));
        out.push(("out.b".into(), &mut self.out_b));
        out
    }
}

/// Gate activations of one layer at one timestep, kept for backward.
#[derive(Debug, Clone)]
struct GateCache {
    /// Layer input after inter-layer dropout.
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// W_hn·h + b_hn, needed for the reset-gate gradient.
    gh_n: Vec<f64>,
}

/// One GRU cell update; returns the new state and the cache.
fn cell_forward(layer: &GruLayer, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, GateCache) {
    let s = layer.w_hh.cols;
    let mut gi = layer.w_ih.matvec(x);
    add_scaled(&mut gi, 1.0, &layer.b_ih);
    let mut gh = layer.w_hh.matvec(h_prev);
    add_scaled(&mut gh, 1.0, &layer.b_hh);
    let mut r = vec![0.0; s];
    let mut z = vec![0.0; s];
    let mut n = vec![0.0; s];
    let mut gh_n = vec![0.0; s];
    let mut h = vec![0.0; s];
    for i in 0..s {
        r[i] = sigmoid(gi[i] + gh[i]);
        z[i] = sigmoid(gi[s + i] + gh[s + i]);
        gh_n[i] = gh[2 * s + i];
        n[i] = (gi[2 * s + i] + r[i] * gh_n[i]).tanh();
        h[i] = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
    }
    let cache =
        GateCache { x: x.to_vec(), h_prev: h_prev.to_vec(), r, z, n, gh_n };
    (h, cache)
}

/// Output-head logits from the current top-layer state. With a fresh zero
/// state this degenerates to the output bias — the cold-start fallback.
pub fn logits_from_state(state: &[Vec<f64>], params: &LmParams) -> Vec<f64> {
    let top = state.last().expect("at least one layer");
    let mut logits = params.out_w.matvec(top);
    add_scaled(&mut logits, 1.0, &params.out_b);
    logits
}

/// Advance the stacked GRU by one input embedding; returns the next-token
/// logits and the updated per-layer state.
pub fn gru_step(
    x_emb: &[f64],
    state: &[Vec<f64>],
    params: &LmParams,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if x_emb.len() != params.embedding.cols {
        return Err(Error::Shape(format!(
            "gru_step input width {} != embedding dim {}",
            x_emb.len(),
            params.embedding.cols
        )));
    }
    if state.len() != params.layers.len() {
        return Err(Error::Shape(format!(
            "gru_step state has {} layers, model has {}",
            state.len(),
            params.layers.len()
        )));
    }
    let mut next = Vec::with_capacity(state.len());
    let mut input: Vec<f64> = x_emb.to_vec();
    for (layer, h_prev) in params.layers.iter().zip(state) {
        if h_prev.len() != layer.w_hh.cols {
            return Err(Error::Shape(format!(
                "gru_step state width {} != layer width {}",
                h_prev.len(),
                layer.w_hh.cols
            )));
        }
        let (h, _) = cell_forward(layer, &input, h_prev);
        input = h.clone();
        next.push(h);
    }
    Ok((logits_from_state(&next, params), next))
}

/// Decode θ̂ into a word distribution: softmax over D_t of βᵀθ̂.
pub fn decode_word_distribution(theta_hat: &TopicDistribution, beta: &Mat) -> Vec<f64> {
    assert_eq!(theta_hat.theta.len(), beta.rows, "theta/beta topic mismatch");
    let d = beta.cols;
    let mut mix = vec![0.0; d];
    for k in 0..beta.rows {
        add_scaled(&mut mix, theta_hat.theta[k], beta.row(k));
    }
    softmax(&mix)
}

#[derive(Debug, Clone)]
struct LmGrads {
    embedding: Mat,
    layers: Vec<GruLayer>,
    out_w: Mat,
    out_b: Vec<f64>,
}

impl LmGrads {
    fn zeros_like(params: &LmParams) -> Self {
        LmGrads {
            embedding: Mat::zeros(params.embedding.rows, params.embedding.cols),
            layers: params
                .layers
                .iter()
                .map(|l| GruLayer {
                    w_ih: Mat::zeros(l.w_ih.rows, l.w_ih.cols),
                    w_hh: Mat::zeros(l.w_hh.rows, l.w_hh.cols),
                    b_ih: vec![0.0; l.b_ih.len()],
                    b_hh: vec![0.0; l.b_hh.len()],
                })
                .collect(),
            out_w: Mat::zeros(params.out_w.rows, params.out_w.cols),
            out_b: vec![0.0; params.out_b.len()],
        }
    }

    fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![("embedding".into(), &self.embedding.data)];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("gru.{i}.w_ih"), &l.w_ih.data));
            out.push((format!("gru.{i}.w_hh"), &l.w_hh.data));
            out.push((format!("gru.{i}.b_ih"), &l.b_ih));
            out.push((format!("gru.{i}.b_hh"), &l.b_hh));
        }
        out.push(("out.w".into(), &self.out_w.data));
        out.push(("out.b".into(), &self.out_b));
        out
    }
}

/// GRU cell backward. `dh` is the gradient on the cell output; returns the
/// gradients on the previous state and the layer input while accumulating
/// weight gradients.
fn cell_backward(
    layer: &GruLayer,
    grads: &mut GruLayer,
    cache: &GateCache,
    dh: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let s = layer.w_hh.cols;
    let mut dgi = vec![0.0; 3 * s];
    let mut dgh = vec![0.0; 3 * s];
    let mut dh_prev = vec![0.0; s];
    for i in 0..s {
        let dz = dh[i] * (cache.h_prev[i] - cache.n[i]);
        let dn = dh[i] * (1.0 - cache.z[i]);
        dh_prev[i] += dh[i] * cache.z[i];

        let dn_pre = dn * (1.0 - cache.n[i] * cache.n[i]);
        let dr = dn_pre * cache.gh_n[i];
        let dz_pre = dz * cache.z[i] * (1.0 - cache.z[i]);
        let dr_pre = dr * cache.r[i] * (1.0 - cache.r[i]);

        dgi[i] = dr_pre;
        dgi[s + i] = dz_pre;
        dgi[2 * s + i] = dn_pre;
        dgh[i] = dr_pre;
        dgh[s + i] = dz_pre;
        dgh[2 * s + i] = dn_pre * cache.r[i];
    }
    grads.w_ih.add_outer(1.0, &dgi, &cache.x);
    add_scaled(&mut grads.b_ih, 1.0, &dgi);
    grads.w_hh.add_outer(1.0, &dgh, &cache.h_prev);
    add_scaled(&mut grads.b_hh, 1.0, &dgh);
    let dx = layer.w_ih.tmatvec(&dgi);
    add_scaled(&mut dh_prev, 1.0, &layer.w_hh.tmatvec(&dgh));
    (dh_prev, dx)
}

/// Teacher-forced forward+backward over one id sequence. `masks`, when
/// present, holds one scaled dropout mask per stacked-layer boundary,
/// resampled per timestep. Returns (summed CE loss, #predictions).
fn sequence_backward(
    ids: &[usize],
    params: &LmParams,
    grads: &mut LmGrads,
    masks: Option<&[Vec<Vec<f64>>]>,
) -> (f64, usize) {
    let steps = ids.len() - 1;
    let n_layers = params.layers.len();
    let mut state = params.zero_state();
    let mut caches: Vec<Vec<GateCache>> = Vec::with_capacity(steps);
    let mut tops: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut dlogits_all: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut loss = 0.0;

    for t in 0..steps {
        let mut input: Vec<f64> = params.embedding.row(ids[t]).to_vec();
        let mut step_caches = Vec::with_capacity(n_layers);
        for (l, layer) in params.layers.iter().enumerate() {
            if l > 0 {
                if let Some(ms) = masks {
                    for (v, &m) in input.iter_mut().zip(&ms[t][l - 1]) {
                        *v *= m;
                    }
                }
            }
            let (h, cache) = cell_forward(layer, &input, &state[l]);
            state[l] = h.clone();
            input = h;
            step_caches.push(cache);
        }
        let logits = logits_from_state(&state, params);
        let lse = log_sum_exp(&logits);
        let target = ids[t + 1];
        loss += lse - logits[target];
        let mut dl: Vec<f64> = logits.iter().map(|&v| (v - lse).exp()).collect();
        dl[target] -= 1.0;
        dlogits_all.push(dl);
        tops.push(state[n_layers - 1].clone());
        caches.push(step_caches);
    }

    // backward through time
    let mut dh_next: Vec<Vec<f64>> =
        params.layers.iter().map(|l| vec![0.0; l.w_hh.cols]).collect();
    for t in (0..steps).rev() {
        let dl = &dlogits_all[t];
        grads.out_w.add_outer(1.0, dl, &tops[t]);
        add_scaled(&mut grads.out_b, 1.0, dl);
        let mut dh_from_above = params.out_w.tmatvec(dl);
        for l in (0..n_layers).rev() {
            let mut dh = dh_next[l].clone();
            add_scaled(&mut dh, 1.0, &dh_from_above);
            let (dh_prev, mut dx) =
                cell_backward(&params.layers[l], &mut grads.layers[l], &caches[t][l], &dh);
            dh_next[l] = dh_prev;
            if l > 0 {
                if let Some(ms) = masks {
                    for (v, &m) in dx.iter_mut().zip(&ms[t][l - 1]) {
                        *v *= m;
                    }
                }
                dh_from_above = dx;
            } else {
                add_scaled(grads.embedding.row_mut(ids[t]), 1.0, &dx);
            }
        }
    }
    (loss, steps)
}

/// Total log-probability of `ids` under teacher forcing, with the number
/// of predicted positions. The first id conditions, the rest are scored.
pub fn sequence_logprob(params: &LmParams, ids: &[usize]) -> (f64, usize) {
    if ids.len() < 2 {
        return (0.0, 0);
    }
    let mut state = params.zero_state();
    let mut logp = 0.0;
    for t in 0..ids.len() - 1 {
        let emb = params.embedding.row(ids[t]).to_vec();
        let (logits, next) = gru_step(&emb, &state, params).expect("consistent shapes");
        state = next;
        logp += logits[ids[t + 1]] - log_sum_exp(&logits);
    }
    (logp, ids.len() - 1)
}

#[derive(Debug, Clone)]
pub struct LmTraining {
    pub params: LmParams,
    pub epoch_loss: Vec<f64>,
}

/// Next-token cross-entropy training with Adadelta. Sequences shorter than
/// two ids contribute nothing. Deterministic per seed.
pub fn train_lm(sequences: &[Vec<usize>], cfg: &LmConfig) -> Result<LmTraining> {
    cfg.validate()?;
    if sequences.is_empty() {
        return Err(Error::EmptyInput("train_lm on empty corpus".into()));
    }
    let usable: Vec<&Vec<usize>> = sequences.iter().filter(|s| s.len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::EmptyInput(
            "train_lm: no sequence has at least two tokens".into(),
        ));
    }
    for seq in &usable {
        if let Some(&bad) = seq.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::data(format!(
                "train_lm: token id {bad} out of range {}",
                cfg.vocab_size
            )));
        }
    }

    let mut params = LmParams::init(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut opts: Vec<(String, Adadelta)> = params
        .named_tensors()
        .iter()
        .map(|(name, _, data)| (name.clone(), Adadelta::new(cfg.lr, data.len())))
        .collect();
    let keep = 1.0 - cfg.dropout;

    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut total_loss = 0.0;
        let mut total_preds = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let mut grads = LmGrads::zeros_like(&params);
            let mut chunk_preds = 0usize;
            for &si in chunk {
                let seq = usable[si];
                let masks: Option<Vec<Vec<Vec<f64>>>> =
                    if cfg.dropout > 0.0 && cfg.layers > 1 {
                        Some(
                            (0..seq.len() - 1)
                                .map(|_| {
                                    (0..cfg.layers - 1)
                                        .map(|_| {
                                            (0..cfg.state)
                                                .map(|_| {
                                                    if rng.random::<f64>() < keep {
                                                        1.0 / keep
                                                    } else {
                                                        0.0
                                                    }
                                                })
                                                .collect()
                                        })
                                        .collect()
                                })
                                .collect(),
                        )
                    } else {
                        None
                    };
                let (loss, preds) =
                    sequence_backward(seq, &params, &mut grads, masks.as_deref());
                total_loss += loss;
                chunk_preds += preds;
            }
            total_preds += chunk_preds;
            // mean gradient per predicted token
            let scale = 1.0 / chunk_preds as f64;
            let grad_vecs: Vec<Vec<f64>> = grads
                .named_tensors()
                .into_iter()
                .map(|(_, g)| g.iter().map(|&v| v * scale).collect())
                .collect();
            for (slot, (_, param)) in params.named_tensors_mut().into_iter().enumerate() {
                opts[slot].1.step(param, &grad_vecs[slot]);
            }
        }
        epoch_loss.push(total_loss / total_preds as f64);
    }
    Ok(LmTraining { params, epoch_loss })
}

/// An emitted skeleton: exactly `n` distinct topic-vocabulary words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    words: Vec<String>,
}

impl Skeleton {
    /// Validates every invariant: exact length, vocabulary membership,
    /// no stopwords, no duplicates.
    pub fn new(
        words: Vec<String>,
        n: usize,
        vocab: &Vocabulary,
        stopwords: &HashSet<String>,
    ) -> Result<Self> {
        if words.len() != n {
            return Err(Error::data(format!(
                "skeleton has {} words, expected exactly {n}",
                words.len()
            )));
        }
        let mut seen = HashSet::new();
        for w in &words {
            if vocab.get(w).is_none() {
                return Err(Error::data(format!("skeleton word {w:?} not in topic vocabulary")));
            }
            if stopwords.contains(w.as_str()) {
                return Err(Error::data(format!("skeleton word {w:?} is a stopword")));
            }
            if !seen.insert(w.clone()) {
                return Err(Error::data(format!("skeleton word {w:?} duplicated")));
            }
        }
        Ok(Skeleton { words })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Greedy,
    Stochastic,
}

impl std::str::FromStr for SampleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(SampleMode::Greedy),
            "stochastic" => Ok(SampleMode::Stochastic),
            other => Err(Error::config(format!(
                "unknown sampling mode {other:?} (expected greedy or stochastic)"
            ))),
        }
    }
}

/// Indices of the top `n_prime` entries of `p`, probability descending,
/// ties broken by ascending index.
pub fn top_n_prime(p: &[f64], n_prime: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then_with(|| a.cmp(&b)));
    idx.truncate(n_prime);
    idx
}

/// Auto-regressive skeleton sampling under the hard constraints: the LM
/// state is warmed on the content stems of `s_tokens`, and each of the N
/// emissions is drawn from the LM softmax restricted to the top-N′ words
/// of `p` minus everything already emitted.
#[allow(clippy::too_many_arguments)]
pub fn sample_skeleton(
    s_tokens: &[String],
    p: &[f64],
    lm: &LmParams,
    vocab: &Vocabulary,
    stopwords: &HashSet<String>,
    n: usize,
    n_prime: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<Skeleton> {
    if s_tokens.is_empty() {
        return Err(Error::EmptyInput("sample_skeleton with empty input text".into()));
    }
    if n == 0 {
        return Err(Error::config("skeleton length N must be >= 1"));
    }
    if n >= n_prime || n_prime > p.len() {
        return Err(Error::config(format!(
            "need N < N' <= D_t, got N={n}, N'={n_prime}, D_t={}",
            p.len()
        )));
    }
    if p.len() != vocab.len() || p.len() != lm.vocab_size() {
        return Err(Error::Shape(format!(
            "distribution ({}), vocabulary ({}), and LM ({}) sizes differ",
            p.len(),
            vocab.len(),
            lm.vocab_size()
        )));
    }

    let mut state = lm.zero_state();
    for stem in content_stems(s_tokens, stopwords) {
        if let Some(id) = vocab.get(&stem) {
            let emb = lm.embedding.row(id).to_vec();
            let (_, next) = gru_step(&emb, &state, lm)?;
            state = next;
        }
    }

    let ranked = top_n_prime(p, n_prime);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut emitted_ids: Vec<usize> = Vec::with_capacity(n);
    let mut emitted_set: HashSet<usize> = HashSet::with_capacity(n);
    for _ in 0..n {
        let allowed: Vec<usize> =
            ranked.iter().copied().filter(|id| !emitted_set.contains(id)).collect();
        assert!(!allowed.is_empty(), "allowed set empty despite N < N' precondition");
        let logits = logits_from_state(&state, lm);
        let restricted: Vec<f64> = allowed.iter().map(|&id| logits[id]).collect();
        let lse = log_sum_exp(&restricted);
        let probs: Vec<f64> = restricted.iter().map(|&v| (v - lse).exp()).collect();
        let pick = match mode {
            SampleMode::Greedy => {
                let mut best = 0;
                for i in 1..probs.len() {
                    if probs[i] > probs[best] {
                        best = i;
                    }
                }
                best
            }
            SampleMode::Stochastic => {
                let draw = rng.random::<f64>();
                let mut cum = 0.0;
                let mut chosen = probs.len() - 1;
                for (i, &q) in probs.iter().enumerate() {
                    cum += q;
                    if cum > draw {
                        chosen = i;
                        break;
                    }
                }
                chosen
            }
        };
        let id = allowed[pick];
        emitted_ids.push(id);
        emitted_set.insert(id);
        let emb = lm.embedding.row(id).to_vec();
        let (_, next) = gru_step(&emb, &state, lm)?;
        state = next;
    }
    let words: Vec<String> = emitted_ids.iter().map(|&id| vocab.token(id).to_string()).collect();
    Skeleton::new(words, n, vocab, stopwords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::VocabKind;
    use crate::gradcheck::{central_diff, max_rel_err, FD_FLOOR, FD_STEP};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tiny_cfg(d: usize, e: usize, s: usize, layers: usize) -> LmConfig {
        LmConfig {
            vocab_size: d,
            embed_dim: e,
            state: s,
            layers,
            lr: 1.0,
            batch: 4,
            dropout: 0.0,
            epochs: 1,
            seed: 21,
        }
    }

    fn vocab_of(tokens: &[&str]) -> Vocabulary {
        Vocabulary::new(VocabKind::Topic, tokens.iter().map(|s| s.to_string()).collect())
            .unwrap()
    }

    #[test]
    fn decode_hand_cases() {
        // one-hot θ̂ collapses to softmax of the chosen row
        let beta = Mat::from_vec(2, 3, vec![0.5, 0.3, 0.2, 0.1, 0.1, 0.8]);
        let th = TopicDistribution { theta: vec![0.0, 1.0] };
        let p = decode_word_distribution(&th, &beta);
        let expect = softmax(&[0.1, 0.1, 0.8]);
        for (a, b) in p.iter().zip(&expect) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }

        // K=1, β = (0.75, 0.25)
        let beta = Mat::from_vec(1, 2, vec![0.75, 0.25]);
        let th = TopicDistribution { theta: vec![1.0] };
        let p = decode_word_distribution(&th, &beta);
        assert_abs_diff_eq!(p[0], 0.622459, epsilon = 1e-6);
        assert_abs_diff_eq!(p[1], 0.377541, epsilon = 1e-6);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_network_logits_equal_bias() {
        let cfg = tiny_cfg(4, 3, 2, 2);
        let mut params = LmParams::zeros(&cfg);
        params.out_b = vec![0.5, -0.25, 0.0, 1.0];
        let state = params.zero_state();
        let emb = vec![0.3, -0.7, 0.1];
        let (logits, next) = gru_step(&emb, &state, &params).unwrap();
        assert_eq!(logits, vec![0.5, -0.25, 0.0, 1.0]);
        // zero weights keep the state at zero
        for layer_state in &next {
            assert!(layer_state.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn scalar_hand_trace() {
        // one layer, state width 1, every weight a hand-picked scalar
        let cfg = tiny_cfg(2, 1, 1, 1);
        let mut params = LmParams::zeros(&cfg);
        // packed rows: [r, z, n]
        params.layers[0].w_ih = Mat::from_vec(3, 1, vec![1.0, 2.0, 0.5]);
        params.layers[0].w_hh = Mat::from_vec(3, 1, vec![0.3, -1.0, 0.7]);
        params.layers[0].b_ih = vec![0.1, 0.0, 0.0];
        params.layers[0].b_hh = vec![0.0, 0.2, -0.1];
        params.out_w = Mat::from_vec(2, 1, vec![2.0, -1.0]);
        params.out_b = vec![0.5, 0.0];

        let x = 0.5;
        let h0 = 0.2;
        let (logits, next) = gru_step(&[x], &[vec![h0]], &params).unwrap();

        // independent scalar recomputation
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let r = sig(1.0 * x + 0.1 + 0.3 * h0);
        let z = sig(2.0 * x + (-1.0) * h0 + 0.2);
        let n = (0.5 * x + r * (0.7 * h0 - 0.1)).tanh();
        let h1 = (1.0 - z) * n + z * h0;
        assert_abs_diff_eq!(next[0][0], h1, epsilon = 1e-12);
        assert_abs_diff_eq!(logits[0], 2.0 * h1 + 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(logits[1], -h1, epsilon = 1e-12);
        // anchor values traced by hand
        assert_abs_diff_eq!(h1, 0.218709, epsilon = 1e-4);
        assert_abs_diff_eq!(logits[0], 0.937418, epsilon = 1e-4);
    }

    #[test]
    fn state_is_invariant_to_output_bias() {
        let cfg = tiny_cfg(3, 2, 2, 1);
        let mut params = LmParams::init(&cfg).unwrap();
        let emb = vec![0.4, -0.2];
        let (_, h_a) = gru_step(&emb, &params.zero_state(), &params).unwrap();
        params.out_b = vec![5.0, -3.0, 7.0];
        let (_, h_b) = gru_step(&emb, &params.zero_state(), &params).unwrap();
        assert_eq!(h_a, h_b);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let cfg = tiny_cfg(3, 2, 2, 2);
        let params = LmParams::zeros(&cfg);
        assert!(gru_step(&[0.1], &params.zero_state(), &params).is_err());
        assert!(gru_step(&[0.1, 0.2], &params.zero_state()[..1], &params).is_err());
    }

    #[test]
    fn lm_gradients_match_finite_differences() {
        let cfg = tiny_cfg(5, 3, 4, 2);
        let params = LmParams::init(&cfg).unwrap();
        let seq = vec![0usize, 3, 1, 4, 2];

        let mut grads = LmGrads::zeros_like(&params);
        let (_, _) = sequence_backward(&seq, &params, &mut grads, None);
        let analytic: Vec<(String, Vec<f64>)> =
            grads.named_tensors().into_iter().map(|(n, g)| (n, g.to_vec())).collect();

        for (idx, (name, expected)) in analytic.iter().enumerate() {
            let mut flat = params.named_tensors()[idx].2.to_vec();
            let numeric = central_diff(
                |vals| {
                    let mut p = params.clone();
                    p.named_tensors_mut()[idx].1.copy_from_slice(vals);
                    let mut g = LmGrads::zeros_like(&p);
                    let (loss, _) = sequence_backward(&seq, &p, &mut g, None);
                    loss
                },
                &mut flat,
                FD_STEP,
            );
            let err = max_rel_err(expected, &numeric, FD_FLOOR);
            assert!(err <= 1e-4, "tensor {name}: rel err {err}");
        }
    }

    #[test]
    fn memorizes_a_repeated_sequence() {
        let cfg = LmConfig {
            vocab_size: 6,
            embed_dim: 4,
            state: 12,
            layers: 1,
            lr: 1.0,
            batch: 4,
            dropout: 0.0,
            epochs: 300,
            seed: 2,
        };
        let seq = vec![0usize, 3, 1, 4, 2, 5];
        let trained = train_lm(&vec![seq.clone(); 4], &cfg).unwrap();
        let (logp, preds) = sequence_logprob(&trained.params, &seq);
        let ppl = (-logp / preds as f64).exp();
        assert!(ppl < 1.05, "memorization perplexity {ppl}");
    }

    #[test]
    fn training_improves_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let seqs: Vec<Vec<usize>> = (0..50)
            .map(|_| (0..8).map(|_| rng.random_range(0..10)).collect())
            .collect();
        let cfg = LmConfig {
            vocab_size: 10,
            embed_dim: 4,
            state: 8,
            layers: 2,
            lr: 1.0,
            batch: 10,
            dropout: 0.0,
            epochs: 20,
            seed: 5,
        };
        let a = train_lm(&seqs, &cfg).unwrap();
        assert!(
            a.epoch_loss.last().unwrap() < a.epoch_loss.first().unwrap(),
            "loss {:?} → {:?}",
            a.epoch_loss.first(),
            a.epoch_loss.last()
        );
        let b = train_lm(&seqs, &cfg).unwrap();
        assert_eq!(a.params.embedding.data, b.params.embedding.data);
        assert_eq!(a.params.out_w.data, b.params.out_w.data);
    }

    #[test]
    fn zero_epochs_leaves_params_at_init() {
        let cfg = LmConfig { epochs: 0, ..tiny_cfg(4, 2, 3, 1) };
        let trained = train_lm(&[vec![0, 1, 2]], &cfg).unwrap();
        let init = LmParams::init(&cfg).unwrap();
        assert_eq!(trained.params.embedding.data, init.embedding.data);
        assert_eq!(trained.params.out_w.data, init.out_w.data);
        assert!(trained.epoch_loss.is_empty());
    }

    #[test]
    fn rigged_logits_hand_skeleton() {
        // D_t = 4; p ranks t3 > t1 > t0 > t2, so top-3 = {t3, t1, t0}
        let vocab = vocab_of(&["apple", "brook", "cedar", "dusk"]);
        let stop = HashSet::new();
        let p = vec![0.1, 0.25, 0.05, 0.6];
        let cfg = tiny_cfg(4, 2, 2, 1);
        let mut lm = LmParams::zeros(&cfg);
        // state stays zero, so logits are always this bias:
        // favors t3 first, then t1 once t3 is excluded
        lm.out_b = vec![0.0, 1.0, -1.0, 2.0];
        let sk = sample_skeleton(
            &["anything".to_string()],
            &p,
            &lm,
            &vocab,
            &stop,
            2,
            3,
            SampleMode::Greedy,
            0,
        )
        .unwrap();
        assert_eq!(sk.words(), &["dusk".to_string(), "brook".to_string()]);
    }

    #[test]
    fn skeleton_invariants_are_enforced() {
        let vocab = vocab_of(&["apple", "brook", "cedar"]);
        let stop: HashSet<String> = ["the".to_string()].into_iter().collect();
        let w = |s: &str| s.to_string();
        assert!(Skeleton::new(vec![w("apple"), w("brook")], 2, &vocab, &stop).is_ok());
        // wrong length
        assert!(Skeleton::new(vec![w("apple")], 2, &vocab, &stop).is_err());
        // out of vocabulary
        assert!(Skeleton::new(vec![w("apple"), w("zzz")], 2, &vocab, &stop).is_err());
        // duplicate
        assert!(Skeleton::new(vec![w("apple"), w("apple")], 2, &vocab, &stop).is_err());
    }

    #[test]
    fn invalid_n_configuration_is_an_error() {
        let vocab = vocab_of(&["a", "b", "c"]);
        let stop = HashSet::new();
        let cfg = tiny_cfg(3, 2, 2, 1);
        let lm = LmParams::zeros(&cfg);
        let p = vec![0.5, 0.3, 0.2];
        let s = vec!["x".to_string()];
        // N >= N'
        assert!(sample_skeleton(&s, &p, &lm, &vocab, &stop, 2, 2, SampleMode::Greedy, 0).is_err());
        // N' > D_t
        assert!(sample_skeleton(&s, &p, &lm, &vocab, &stop, 2, 4, SampleMode::Greedy, 0).is_err());
        // empty input text
        assert!(sample_skeleton(&[], &p, &lm, &vocab, &stop, 1, 2, SampleMode::Greedy, 0).is_err());
    }

    #[test]
    fn stochastic_mode_is_seed_reproducible() {
        let vocab = vocab_of(&["a", "b", "c", "d", "e", "f"]);
        let stop = HashSet::new();
        let cfg = tiny_cfg(6, 3, 4, 2);
        let lm = LmParams::init(&cfg).unwrap();
        let p = softmax(&[0.3, 1.2, -0.5, 0.9, 0.0, 2.0]);
        let s = vec!["b".to_string(), "f".to_string()];
        let a =
            sample_skeleton(&s, &p, &lm, &vocab, &stop, 3, 5, SampleMode::Stochastic, 99).unwrap();
        let b =
            sample_skeleton(&s, &p, &lm, &vocab, &stop, 3, 5, SampleMode::Stochastic, 99).unwrap();
        assert_eq!(a, b);
        let c =
            sample_skeleton(&s, &p, &lm, &vocab, &stop, 3, 5, SampleMode::Stochastic, 100).unwrap();
        // a different seed may or may not differ; the contract is only that
        // the same seed reproduces bit-identically
        let _ = c;
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn skeleton_constraints_hold_for_random_models(
            seed in 0u64..1000,
            logit_scale in 0.1f64..3.0,
            n in 1usize..5,
            extra in 1usize..4,
            stochastic in proptest::bool::ANY,
        ) {
            let names = ["alder", "birch", "cedar", "dusk", "ember", "fjord", "grove", "heath"];
            let vocab = vocab_of(&names);
            let stop = HashSet::new();
            let n_prime = (n + extra).min(names.len());
            prop_assume!(n < n_prime);

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = tiny_cfg(8, 3, 4, 2);
            let mut lm = LmParams::init(&cfg).unwrap();
            for v in lm.out_b.iter_mut() {
                *v = rng.random_range(-1.0..1.0) * logit_scale;
            }
            let raw: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = softmax(&raw);
            let mode = if stochastic { SampleMode::Stochastic } else { SampleMode::Greedy };
            let sk = sample_skeleton(
                &["ember".to_string(), "alder".to_string()],
                &p, &lm, &vocab, &stop, n, n_prime, mode, seed,
            ).unwrap();

            prop_assert_eq!(sk.len(), n);
            let allowed = top_n_prime(&p, n_prime);
            let mut seen = HashSet::new();
            for w in sk.words() {
                let id = vocab.get(w).expect("in vocabulary");
                prop_assert!(allowed.contains(&id), "rank constraint violated");
                prop_assert!(seen.insert(id), "duplicate emitted");
            }
        }
    }
}
