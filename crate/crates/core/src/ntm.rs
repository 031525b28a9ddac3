//! Neural variational topic model with a Gaussian-softmax generative
//! process: a latent draw t ~ N(0, I) maps to a topic mixture
//! θ = softmax(W_g·t + b_g), topics emit words through β_k = softmax(V·U_kᵀ),
//! and an MLP inference network amortizes the posterior q(t|X) = N(μ(X), σ(X)).
//!
//! Training maximizes the evidence lower bound
//!   ELBO = Σ_w x_w·log(βᵀθ)_w − KL(q ‖ N(0, I))
//! with one reparameterized sample t = μ + ε⊙σ per document and alternates
//! epochs between the inference network and the generative parameters.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{BowDocument, EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::linalg::{add_scaled, dot, randn, softmax, softmax_backward, Mat};
use crate::optim::Adam;

#[derive(Debug, Clone)]
pub struct NtmConfig {
    /// Topic count K (also the dimension of the latent Gaussian).
    pub topics: usize,
    /// Vocabulary size D of the bag-of-words view.
    pub vocab_size: usize,
    /// Word/topic vector width H.
    pub embed_dim: usize,
    /// Inference MLP width.
    pub hidden: usize,
    /// Inference MLP depth.
    pub layers: usize,
    /// Drop probability on the MLP output at train time.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for NtmConfig {
    fn default() -> Self {
        NtmConfig {
            topics: 50,
            vocab_size: 0,
            embed_dim: 300,
            hidden: 500,
            layers: 2,
            dropout: 0.8,
            seed: 0,
        }
    }
}

impl NtmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topics < 2 {
            return Err(Error::config("ntm.topics must be >= 2"));
        }
        if self.vocab_size == 0 {
            return Err(Error::config("ntm vocab_size must be >= 1"));
        }
        if self.embed_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::config("ntm dims must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("ntm.dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Amortized Gaussian posterior for one document.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    /// Elementwise exp(½·logvar); strictly positive by construction.
    pub sigma: Vec<f64>,
}

/// A point on the K-simplex.
#[derive(Debug, Clone)]
pub struct TopicDistribution {
    pub theta: Vec<f64>,
}

/// All trainable tensors. Gradients reuse the same shapes via [`NtmGrads`].
#[derive(Debug, Clone)]
pub struct NtmParams {
    /// MLP layers as (weight, bias); first maps D -> hidden, rest hidden -> hidden.
    pub mlp: Vec<(Mat, Vec<f64>)>,
    pub mu_w: Mat,
    pub mu_b: Vec<f64>,
    pub logvar_w: Mat,
    pub logvar_b: Vec<f64>,
    /// Topic vectors, K×H.
    pub u: Mat,
    /// Word vectors, D×H.
    pub v: Mat,
    /// When set, `v` is excluded from training updates and gradients.
    pub v_frozen: bool,
    /// Softmax projection g, K×K plus bias.
    pub w_g: Mat,
    pub b_g: Vec<f64>,
    pub dropout: f64,
}

/// Which alternation phase a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Inference,
    Generative,
}

impl NtmParams {
    /// Seeded initialization; `v_init` rows (from pretrained embeddings)
    /// freeze the word vectors.
    pub fn init(cfg: &NtmConfig, v_init: Option<Mat>) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut mlp = Vec::with_capacity(cfg.layers);
        let mut in_dim = cfg.vocab_size;
        for _ in 0..cfg.layers {
            mlp.push((Mat::xavier(&mut rng, cfg.hidden, in_dim), vec![0.0; cfg.hidden]));
            in_dim = cfg.hidden;
        }
        let mu_w = Mat::xavier(&mut rng, cfg.topics, cfg.hidden);
        let logvar_w = Mat::xavier(&mut rng, cfg.topics, cfg.hidden);
        let u = Mat::uniform(&mut rng, cfg.topics, cfg.embed_dim, 0.05);
        let v_frozen = v_init.is_some();
        let v = match v_init {
            Some(m) => {
                if m.rows != cfg.vocab_size || m.cols != cfg.embed_dim {
                    return Err(Error::Shape(format!(
                        "v init is {}x{}, config wants {}x{}",
                        m.rows, m.cols, cfg.vocab_size, cfg.embed_dim
                    )));
                }
                m
            }
            None => Mat::uniform(&mut rng, cfg.vocab_size, cfg.embed_dim, 0.05),
        };
        let w_g = Mat::xavier(&mut rng, cfg.topics, cfg.topics);
        Ok(NtmParams {
            mlp,
            mu_w,
            mu_b: vec![0.0; cfg.topics],
            logvar_w,
            logvar_b: vec![0.0; cfg.topics],
            u,
            v,
            v_frozen,
            w_g,
            b_g: vec![0.0; cfg.topics],
            dropout: cfg.dropout,
        })
    }

    /// All-zero parameters (test scaffolding for hand-computable cases).
    pub fn zeros(cfg: &NtmConfig) -> Self {
        let mut mlp = Vec::with_capacity(cfg.layers);
        let mut in_dim = cfg.vocab_size;
        for _ in 0..cfg.layers {
            mlp.push((Mat::zeros(cfg.hidden, in_dim), vec![0.0; cfg.hidden]));
            in_dim = cfg.hidden;
        }
        NtmParams {
            mlp,
            mu_w: Mat::zeros(cfg.topics, cfg.hidden),
            mu_b: vec![0.0; cfg.topics],
            logvar_w: Mat::zeros(cfg.topics, cfg.hidden),
            logvar_b: vec![0.0; cfg.topics],
            u: Mat::zeros(cfg.topics, cfg.embed_dim),
            v: Mat::zeros(cfg.vocab_size, cfg.embed_dim),
            v_frozen: false,
            w_g: Mat::zeros(cfg.topics, cfg.topics),
            b_g: vec![0.0; cfg.topics],
            dropout: cfg.dropout,
        }
    }

    pub fn topics(&self) -> usize {
        self.u.rows
    }

    pub fn vocab_size(&self) -> usize {
        self.v.rows
    }

    /// Named views of every tensor with its alternation group.
    /// `v` is always listed; training filters it out when frozen.
    pub fn named_tensors(&self) -> Vec<(String, ParamGroup, &[f64])> {
        let mut out: Vec<(String, ParamGroup, &[f64])> = Vec::new();
        for (i, (w, b)) in self.mlp.iter().enumerate() {
            out.push((format!("mlp.{i}.w"), ParamGroup::Inference, &w.data));
            out.push((format!("mlp.{i}.b"), ParamGroup::Inference, b));
        }
        out.push(("mu.w".into(), ParamGroup::Inference, &self.mu_w.data));
        out.push(("mu.b".into(), ParamGroup::Inference, &self.mu_b));
        out.push(("logvar.w".into(), ParamGroup::Inference, &self.logvar_w.data));
        out.push(("logvar.b".into(), ParamGroup::Inference, &self.logvar_b));
        out.push(("u".into(), ParamGroup::Generative, &self.u.data));
        out.push(("v".into(), ParamGroup::Generative, &self.v.data));
        out.push(("w_g".into(), ParamGroup::Generative, &self.w_g.data));
        out.push(("b_g".into(), ParamGroup::Generative, &self.b_g));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, ParamGroup, &mut Vec<f64>)> {
        let mut out: Vec<(String, ParamGroup, &mut Vec<f64>)> = Vec::new();
        for (i, (w, b)) in self.mlp.iter_mut().enumerate() {
            out.push((format!("mlp.{i}.w"), ParamGroup::Inference, &mut w.data));
            out.push((format!("mlp.{i}.b"), ParamGroup::Inference, b));
        }
        out.push(("mu.w".into(), ParamGroup::Inference, &mut self.mu_w.data));
        out.push(("mu.b".into(), ParamGroup::Inference, &mut self.mu_b));
        out.push(("logvar.w".into(), ParamGroup::Inference, &mut self.logvar_w.data));
        out.push(("logvar.b".into(), ParamGroup::Inference, &mut self.logvar_b));
        out.push(("u".into(), ParamGroup::Generative, &mut self.u.data));
        out.push(("v".into(), ParamGroup::Generative, &mut self.v.data));
        out.push(("w_g".into(), ParamGroup::Generative, &mut self.w_g.data));
        out.push(("b_g".into(), ParamGroup::Generative, &mut self.b_g));
        out
    }
}

/// Gradients of (recon − kl); same layout as [`NtmParams`], with `v`
/// absent when the word vectors are frozen.
#[derive(Debug, Clone)]
pub struct NtmGrads {
    pub mlp: Vec<(Mat, Vec<f64>)>,
    pub mu_w: Mat,
    pub mu_b: Vec<f64>,
    pub logvar_w: Mat,
    pub logvar_b: Vec<f64>,
    pub u: Mat,
    pub v: Option<Mat>,
    pub w_g: Mat,
    pub b_g: Vec<f64>,
}

impl NtmGrads {
    fn zeros_like(params: &NtmParams) -> Self {
        NtmGrads {
            mlp: params
                .mlp
                .iter()
                .map(|(w, b)| (Mat::zeros(w.rows, w.cols), vec![0.0; b.len()]))
                .collect(),
            mu_w: Mat::zeros(params.mu_w.rows, params.mu_w.cols),
            mu_b: vec![0.0; params.mu_b.len()],
            logvar_w: Mat::zeros(params.logvar_w.rows, params.logvar_w.cols),
            logvar_b: vec![0.0; params.logvar_b.len()],
            u: Mat::zeros(params.u.rows, params.u.cols),
            v: if params.v_frozen { None } else { Some(Mat::zeros(params.v.rows, params.v.cols)) },
            w_g: Mat::zeros(params.w_g.rows, params.w_g.cols),
            b_g: vec![0.0; params.b_g.len()],
        }
    }

    /// self += scale · other (used for batch averaging).
    pub fn accumulate(&mut self, other: &NtmGrads, scale: f64) {
        for ((w, b), (ow, ob)) in self.mlp.iter_mut().zip(&other.mlp) {
            add_scaled(&mut w.data, scale, &ow.data);
            add_scaled(b, scale, ob);
        }
        add_scaled(&mut self.mu_w.data, scale, &other.mu_w.data);
        add_scaled(&mut self.mu_b, scale, &other.mu_b);
        add_scaled(&mut self.logvar_w.data, scale, &other.logvar_w.data);
        add_scaled(&mut self.logvar_b, scale, &other.logvar_b);
        add_scaled(&mut self.u.data, scale, &other.u.data);
        if let (Some(v), Some(ov)) = (self.v.as_mut(), other.v.as_ref()) {
            add_scaled(&mut v.data, scale, &ov.data);
        }
        add_scaled(&mut self.w_g.data, scale, &other.w_g.data);
        add_scaled(&mut self.b_g, scale, &other.b_g);
    }

    /// Named views matching `NtmParams::named_tensors` (minus frozen `v`).
    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, (w, b)) in self.mlp.iter().enumerate() {
            out.push((format!("mlp.{i}.w"), &w.data));
            out.push((format!("mlp.{i}.b"), b));
        }
        out.push(("mu.w".into(), &self.mu_w.data));
        out.push(("mu.b".into(), &self.mu_b));
        out.push(("logvar.w".into(), &self.logvar_w.data));
        out.push(("logvar.b".into(), &self.logvar_b));
        out.push(("u".into(), &self.u.data));
        if let Some(v) = &self.v {
            out.push(("v".into(), &v.data));
        }
        out.push(("w_g".into(), &self.w_g.data));
        out.push(("b_g".into(), &self.b_g));
        out
    }
}

struct InferenceCache {
    /// Pre-activations per MLP layer.
    pre: Vec<Vec<f64>>,
    /// Post-ReLU activations per MLP layer.
    post: Vec<Vec<f64>>,
    /// MLP output after (inverted) dropout.
    h_out: Vec<f64>,
    /// Scaled dropout mask (entries 0 or 1/(1−p)); None in eval mode.
    mask: Option<Vec<f64>>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

fn forward_inference(
    x_norm: &[f64],
    params: &NtmParams,
    mask: Option<Vec<f64>>,
) -> InferenceCache {
    let mut pre = Vec::with_capacity(params.mlp.len());
    let mut post = Vec::with_capacity(params.mlp.len());
    let mut h: Vec<f64> = x_norm.to_vec();
    for (w, b) in &params.mlp {
        let mut a = w.matvec(&h);
        add_scaled(&mut a, 1.0, b);
        h = a.iter().map(|&v| v.max(0.0)).collect();
        pre.push(a);
        post.push(h.clone());
    }
    let h_out: Vec<f64> = match &mask {
        Some(m) => h.iter().zip(m).map(|(&v, &s)| v * s).collect(),
        None => h,
    };
    let mut mu = params.mu_w.matvec(&h_out);
    add_scaled(&mut mu, 1.0, &params.mu_b);
    let mut logvar = params.logvar_w.matvec(&h_out);
    add_scaled(&mut logvar, 1.0, &params.logvar_b);
    let sigma: Vec<f64> = logvar.iter().map(|&lv| (0.5 * lv).exp()).collect();
    InferenceCache { pre, post, h_out, mask, mu, sigma }
}

/// Posterior q(t|X) = N(μ(X), σ(X)) at evaluation time (dropout off).
/// Training applies dropout inside its own cached forward pass.
pub fn infer_posterior(x: &BowDocument, params: &NtmParams) -> Result<GaussianPosterior> {
    if x.token_total == 0 {
        return Err(Error::EmptyInput("infer_posterior on empty document".into()));
    }
    let x_norm = x.normalized_dense(params.vocab_size());
    let cache = forward_inference(&x_norm, params, None);
    Ok(GaussianPosterior { mu: cache.mu, sigma: cache.sigma })
}

/// θ = softmax(W_g·(μ + ε⊙σ) + b_g). With ε = 0 this is the deterministic
/// posterior-mean topic mixture.
pub fn sample_theta(
    post: &GaussianPosterior,
    eps: &[f64],
    params: &NtmParams,
) -> TopicDistribution {
    assert_eq!(eps.len(), post.mu.len());
    let t: Vec<f64> =
        post.mu.iter().zip(&post.sigma).zip(eps).map(|((&m, &s), &e)| m + e * s).collect();
    let mut logits = params.w_g.matvec(&t);
    add_scaled(&mut logits, 1.0, &params.b_g);
    TopicDistribution { theta: softmax(&logits) }
}

/// Topic-word matrix: row k is softmax over the vocabulary of V·U_kᵀ.
pub fn compute_beta(params: &NtmParams) -> Mat {
    let k = params.topics();
    let d = params.vocab_size();
    let mut beta = Mat::zeros(k, d);
    for ki in 0..k {
        let u_k = params.u.row(ki);
        let row = beta.row_mut(ki);
        for w in 0..d {
            row[w] = dot(params.v.row(w), u_k);
        }
        crate::linalg::softmax_inplace(row);
    }
    beta
}

/// KL(N(μ, σ²) ‖ N(0, I)) = ½ Σ_k (σ_k² + μ_k² − 1 − log σ_k²).
pub fn kl_gaussian_standard(post: &GaussianPosterior) -> f64 {
    post.mu
        .iter()
        .zip(&post.sigma)
        .map(|(&m, &s)| {
            let var = s * s;
            0.5 * (var + m * m - 1.0 - var.ln())
        })
        .sum()
}

/// Σ_w x_w · log (βᵀθ)_w. Errors if a needed mixture probability is 0,
/// which signals a degenerate β rather than a numerical question.
pub fn reconstruction_loglik(x: &BowDocument, theta: &TopicDistribution, beta: &Mat) -> Result<f64> {
    let mut total = 0.0;
    for (&w, &c) in &x.counts {
        let mut mix = 0.0;
        for k in 0..beta.rows {
            mix += theta.theta[k] * beta.at(k, w);
        }
        if mix <= 0.0 {
            return Err(Error::Degenerate(format!(
                "mixture probability for term {w} is {mix}; beta is degenerate"
            )));
        }
        total += c as f64 * mix.ln();
    }
    Ok(total)
}

/// One-sample ELBO pieces: (reconstruction log-likelihood, KL).
/// The objective value is `recon − kl`.
pub fn elbo(x: &BowDocument, params: &NtmParams, eps: &[f64]) -> Result<(f64, f64)> {
    let post = infer_posterior(x, params)?;
    let theta = sample_theta(&post, eps, params);
    let beta = compute_beta(params);
    let recon = reconstruction_loglik(x, &theta, &beta)?;
    Ok((recon, kl_gaussian_standard(&post)))
}

/// Analytic gradients of (recon − kl); ascent direction. Evaluation-mode
/// forward (no dropout), matching the finite-difference oracle.
pub fn elbo_gradients(x: &BowDocument, params: &NtmParams, eps: &[f64]) -> Result<NtmGrads> {
    let beta = compute_beta(params);
    let (_, _, grads) = elbo_backward(x, params, eps, &beta, None)?;
    Ok(grads)
}

/// Shared forward+backward. Returns (recon, kl, grads of recon − kl).
fn elbo_backward(
    x: &BowDocument,
    params: &NtmParams,
    eps: &[f64],
    beta: &Mat,
    mask: Option<Vec<f64>>,
) -> Result<(f64, f64, NtmGrads)> {
    if x.token_total == 0 {
        return Err(Error::EmptyInput("elbo on empty document".into()));
    }
    let k = params.topics();
    let d = params.vocab_size();
    let x_norm = x.normalized_dense(d);
    let cache = forward_inference(&x_norm, params, mask);

    // t = μ + ε⊙σ, θ = softmax(W_g t + b_g)
    let t: Vec<f64> =
        cache.mu.iter().zip(&cache.sigma).zip(eps).map(|((&m, &s), &e)| m + e * s).collect();
    let mut logits = params.w_g.matvec(&t);
    add_scaled(&mut logits, 1.0, &params.b_g);
    let theta = softmax(&logits);

    // mixture over the document's terms only; recon needs no other entries
    let mut recon = 0.0;
    let mut ratio: BTreeMap<usize, f64> = BTreeMap::new(); // w -> x_w / mix_w
    for (&w, &c) in &x.counts {
        let mut mix = 0.0;
        for ki in 0..k {
            mix += theta[ki] * beta.at(ki, w);
        }
        if mix <= 0.0 {
            return Err(Error::Degenerate(format!(
                "mixture probability for term {w} is {mix}; beta is degenerate"
            )));
        }
        recon += c as f64 * mix.ln();
        ratio.insert(w, c as f64 / mix);
    }
    let kl = kl_gaussian_standard(&GaussianPosterior {
        mu: cache.mu.clone(),
        sigma: cache.sigma.clone(),
    });

    let mut grads = NtmGrads::zeros_like(params);

    // --- decoder path ---
    // d recon/d θ_k = Σ_w r_w β_kw ; d recon/d β_kw = θ_k r_w
    let mut dtheta = vec![0.0; k];
    for (&w, &r) in &ratio {
        for ki in 0..k {
            dtheta[ki] += r * beta.at(ki, w);
        }
    }
    for ki in 0..k {
        // dense dβ row: zero except at the document's terms
        let mut dbeta_row = vec![0.0; d];
        for (&w, &r) in &ratio {
            dbeta_row[w] = theta[ki] * r;
        }
        let dscore = softmax_backward(beta.row(ki), &dbeta_row);
        // scores_kw = V_w · U_k
        for w in 0..d {
            let ds = dscore[w];
            if ds == 0.0 {
                continue;
            }
            add_scaled(grads.u.row_mut(ki), ds, params.v.row(w));
            if let Some(gv) = grads.v.as_mut() {
                add_scaled(gv.row_mut(w), ds, params.u.row(ki));
            }
        }
    }

    // --- θ path back to the posterior ---
    let dlogits = softmax_backward(&theta, &dtheta);
    grads.w_g.add_outer(1.0, &dlogits, &t);
    add_scaled(&mut grads.b_g, 1.0, &dlogits);
    let dt = params.w_g.tmatvec(&dlogits);

    // dμ gets the t-path plus the KL term −μ; dlogvar combines the σ chain
    // (∂σ/∂logvar = σ/2) with the KL term −½(σ²−1).
    let mut dmu = dt.clone();
    let mut dlogvar = vec![0.0; k];
    for ki in 0..k {
        dmu[ki] -= cache.mu[ki];
        let sig = cache.sigma[ki];
        dlogvar[ki] = dt[ki] * eps[ki] * sig * 0.5 - 0.5 * (sig * sig - 1.0);
    }

    // --- heads ---
    grads.mu_w.add_outer(1.0, &dmu, &cache.h_out);
    add_scaled(&mut grads.mu_b, 1.0, &dmu);
    grads.logvar_w.add_outer(1.0, &dlogvar, &cache.h_out);
    add_scaled(&mut grads.logvar_b, 1.0, &dlogvar);
    let mut dh = params.mu_w.tmatvec(&dmu);
    add_scaled(&mut dh, 1.0, &params.logvar_w.tmatvec(&dlogvar));

    // --- dropout and MLP ---
    if let Some(m) = &cache.mask {
        for (dv, &s) in dh.iter_mut().zip(m) {
            *dv *= s;
        }
    }
    for li in (0..params.mlp.len()).rev() {
        let da: Vec<f64> = dh
            .iter()
            .zip(&cache.pre[li])
            .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
            .collect();
        let input: &[f64] = if li == 0 { &x_norm } else { &cache.post[li - 1] };
        grads.mlp[li].0.add_outer(1.0, &da, input);
        add_scaled(&mut grads.mlp[li].1, 1.0, &da);
        dh = params.mlp[li].0.tmatvec(&da);
    }

    Ok((recon, kl, grads))
}

/// Per-epoch mean ELBO values alongside the final parameters.
#[derive(Debug, Clone)]
pub struct NtmTraining {
    pub params: NtmParams,
    pub epoch_elbo: Vec<f64>,
}

/// Alternating ELBO maximization: even-numbered epochs (0-based) update the
/// inference network only, odd-numbered epochs the generative tensors only
/// (U, W_g, b_g, and V unless frozen). Adam, lr 1e-3. Deterministic per seed.
pub fn train_ntm(
    corpus: &[BowDocument],
    cfg: &NtmConfig,
    embeddings: Option<(&EmbeddingTable, &Vocabulary)>,
    epochs: usize,
    batch: usize,
) -> Result<NtmTraining> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyInput("train_ntm on empty corpus".into()));
    }
    if batch == 0 {
        return Err(Error::config("ntm batch size must be >= 1"));
    }
    let docs: Vec<&BowDocument> = corpus.iter().filter(|d| d.token_total > 0).collect();
    if docs.is_empty() {
        return Err(Error::EmptyInput("train_ntm: every document is empty".into()));
    }

    let v_init = match embeddings {
        Some((table, vocab)) => {
            if table.dim() != cfg.embed_dim {
                return Err(Error::Shape(format!(
                    "embedding dim {} != configured {}",
                    table.dim(),
                    cfg.embed_dim
                )));
            }
            let mut v = Mat::zeros(cfg.vocab_size, cfg.embed_dim);
            for w in 0..vocab.len().min(cfg.vocab_size) {
                v.row_mut(w).copy_from_slice(&table.lookup(vocab.token(w)));
            }
            Some(v)
        }
        None => None,
    };
    let mut params = NtmParams::init(cfg, v_init)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut opts: BTreeMap<String, Adam> = params
        .named_tensors()
        .iter()
        .map(|(name, _, data)| (name.clone(), Adam::new(1e-3, data.len())))
        .collect();

    let keep = 1.0 - cfg.dropout;
    let mut epoch_elbo = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    for epoch in 0..epochs {
        let phase =
            if epoch % 2 == 0 { ParamGroup::Inference } else { ParamGroup::Generative };
        // deterministic Fisher-Yates reshuffle each epoch
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_obj = 0.0;
        for chunk in order.chunks(batch) {
            let beta = compute_beta(&params);
            let mut acc = NtmGrads::zeros_like(&params);
            let scale = 1.0 / chunk.len() as f64;
            for &di in chunk {
                let doc = docs[di];
                let eps: Vec<f64> = (0..cfg.topics).map(|_| randn(&mut rng)).collect();
                let mask: Option<Vec<f64>> = if cfg.dropout > 0.0 {
                    Some(
                        (0..cfg.hidden)
                            .map(|_| {
                                if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }
                            })
                            .collect(),
                    )
                } else {
                    None
                };
                let (recon, kl, grads) = elbo_backward(doc, &params, &eps, &beta, mask)?;
                epoch_obj += recon - kl;
                acc.accumulate(&grads, scale);
            }
            let grad_map: BTreeMap<String, Vec<f64>> = acc
                .named_tensors()
                .into_iter()
                .map(|(n, g)| (n, g.to_vec()))
                .collect();
            for (name, group, data) in params.named_tensors_mut() {
                if group != phase {
                    continue;
                }
                if name == "v" {
                    // frozen v has no gradient entry
                    if !grad_map.contains_key("v") {
                        continue;
                    }
                }
                let g = &grad_map[&name];
                // Adam minimizes; descend on −(recon − kl)
                let neg: Vec<f64> = g.iter().map(|&x| -x).collect();
                opts.get_mut(&name).expect("optimizer state").step(data, &neg);
            }
        }
        epoch_elbo.push(epoch_obj / docs.len() as f64);
    }
    Ok(NtmTraining { params, epoch_elbo })
}

/// exp(−Σ_d ELBO_d / Σ_d N_d) at ε = 0. The ELBO lower-bounds the
/// log-likelihood, so this upper-bounds the true perplexity.
pub fn perplexity(params: &NtmParams, heldout: &[BowDocument]) -> Result<f64> {
    let eps = vec![0.0; params.topics()];
    let mut total_elbo = 0.0;
    let mut total_tokens = 0u64;
    for doc in heldout {
        if doc.token_total == 0 {
            continue;
        }
        let (recon, kl) = elbo(doc, params, &eps)?;
        total_elbo += recon - kl;
        total_tokens += doc.token_total as u64;
    }
    if total_tokens == 0 {
        return Err(Error::EmptyInput("perplexity: no held-out tokens".into()));
    }
    Ok((-total_elbo / total_tokens as f64).exp())
}

/// Top `count` tokens of a topic by probability, ties broken
/// lexicographically. Panics if `topic` is out of range.
pub fn topic_top_words(beta: &Mat, vocab: &Vocabulary, topic: usize, count: usize) -> Vec<String> {
    assert!(topic < beta.rows, "topic {topic} out of range {}", beta.rows);
    let row = beta.row(topic);
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| {
        row[b].partial_cmp(&row[a]).unwrap().then_with(|| vocab.token(a).cmp(vocab.token(b)))
    });
    idx.truncate(count);
    idx.into_iter().map(|w| vocab.token(w).to_string()).collect()
}
