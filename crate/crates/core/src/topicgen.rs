//! Topic generator: predicts a topic mixture for a short input text as
//! θ̂ = softmax(W₁·ReLU(W₂·Emb_mean(s))) — no bias terms — and is trained
//! with cross-entropy against the topic model's own posterior-mean mixture
//! softmax(W_g·μ(X) + b_g) for each story.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{mean_embedding, BowDocument, EmbeddingTable};
use crate::error::{Error, Result};
use crate::linalg::{add_scaled, softmax, Mat};
use crate::ntm::{infer_posterior, sample_theta, NtmParams, TopicDistribution};
use crate::optim::Adamax;

#[derive(Debug, Clone)]
pub struct TopicGenConfig {
    pub topics: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TopicGenConfig {
    fn default() -> Self {
        TopicGenConfig {
            topics: 50,
            embed_dim: 300,
            hidden: 512,
            dropout: 0.2,
            lr: 0.002,
            batch: 128,
            epochs: 50,
            seed: 0,
        }
    }
}

impl TopicGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topics < 2 || self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::config("topicgen dims must be positive (topics >= 2)"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("topicgen.dropout must lie in [0, 1)"));
        }
        if self.batch == 0 {
            return Err(Error::config("topicgen.batch must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TopicGenParams {
    /// hidden × H.
    pub w2: Mat,
    /// K × hidden.
    pub w1: Mat,
    pub dropout: f64,
}

impl TopicGenParams {
    pub fn init(cfg: &TopicGenConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(TopicGenParams {
            w2: Mat::xavier(&mut rng, cfg.hidden, cfg.embed_dim),
            w1: Mat::xavier(&mut rng, cfg.topics, cfg.hidden),
            dropout: cfg.dropout,
        })
    }

    pub fn zeros(cfg: &TopicGenConfig) -> Self {
        TopicGenParams {
            w2: Mat::zeros(cfg.hidden, cfg.embed_dim),
            w1: Mat::zeros(cfg.topics, cfg.hidden),
            dropout: cfg.dropout,
        }
    }

    pub fn topics(&self) -> usize {
        self.w1.rows
    }
}

/// θ̂ for an input text; dropout is disabled at inference.
pub fn predict_topic(
    s_tokens: &[String],
    table: &EmbeddingTable,
    params: &TopicGenParams,
) -> Result<TopicDistribution> {
    let e = mean_embedding(s_tokens, table)?;
    let (theta, _, _) = forward(&e, params, None);
    Ok(TopicDistribution { theta })
}

/// Forward pass from a mean embedding; returns (θ̂, pre-activation, h̃).
fn forward(e: &[f64], params: &TopicGenParams, mask: Option<&[f64]>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let a = params.w2.matvec(e);
    let mut h: Vec<f64> = a.iter().map(|&v| v.max(0.0)).collect();
    if let Some(m) = mask {
        for (hv, &s) in h.iter_mut().zip(m) {
            *hv *= s;
        }
    }
    let logits = params.w1.matvec(&h);
    (softmax(&logits), a, h)
}

/// Cross-entropy −Σ_k target_k · log θ̂_k.
pub fn cross_entropy(theta_hat: &[f64], target: &[f64]) -> f64 {
    theta_hat.iter().zip(target).map(|(&p, &t)| if t > 0.0 { -t * p.ln() } else { 0.0 }).sum()
}

/// CE gradients with respect to (w1, w2) for one example, eval-mode unless
/// a dropout mask is supplied. Returns (loss, dW1, dW2).
pub fn ce_gradients(
    e: &[f64],
    target: &[f64],
    params: &TopicGenParams,
    mask: Option<&[f64]>,
) -> (f64, Mat, Mat) {
    let (theta, a, h) = forward(e, params, mask);
    let loss = cross_entropy(&theta, target);
    // ∂CE/∂logits = θ̂ − target (softmax + CE, target on the simplex)
    let dlogits: Vec<f64> = theta.iter().zip(target).map(|(&p, &t)| p - t).collect();
    let mut dw1 = Mat::zeros(params.w1.rows, params.w1.cols);
    dw1.add_outer(1.0, &dlogits, &h);
    let mut dh = params.w1.tmatvec(&dlogits);
    if let Some(m) = mask {
        for (dv, &s) in dh.iter_mut().zip(m) {
            *dv *= s;
        }
    }
    let da: Vec<f64> =
        dh.iter().zip(&a).map(|(&g, &av)| if av > 0.0 { g } else { 0.0 }).collect();
    let mut dw2 = Mat::zeros(params.w2.rows, params.w2.cols);
    dw2.add_outer(1.0, &da, e);
    (loss, dw1, dw2)
}

/// Which story-side distribution the targets are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    /// softmax(W_g·μ(X) + b_g): the topic model's own mixture at the
    /// posterior mean (default).
    GOfMu,
    /// softmax(μ(X)) directly, bypassing the g projection.
    SoftmaxMu,
}

impl std::str::FromStr for TargetMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "g_of_mu" => Ok(TargetMode::GOfMu),
            "softmax_mu" => Ok(TargetMode::SoftmaxMu),
            other => Err(Error::config(format!(
                "unknown target mode {other:?} (expected g_of_mu or softmax_mu)"
            ))),
        }
    }
}

impl TargetMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TargetMode::GOfMu => "g_of_mu",
            TargetMode::SoftmaxMu => "softmax_mu",
        }
    }
}

/// Training target per story: the topic mixture of its bag-of-words under
/// the trained topic model. Documents with an empty bag yield `None` so
/// callers can keep inputs aligned while skipping them.
pub fn build_targets(
    bows: &[BowDocument],
    ntm: &NtmParams,
    mode: TargetMode,
) -> Result<Vec<Option<TopicDistribution>>> {
    let eps = vec![0.0; ntm.topics()];
    let mut out = Vec::with_capacity(bows.len());
    for bow in bows {
        if bow.token_total == 0 {
            out.push(None);
            continue;
        }
        let post = infer_posterior(bow, ntm)?;
        let theta = match mode {
            TargetMode::GOfMu => sample_theta(&post, &eps, ntm),
            TargetMode::SoftmaxMu => TopicDistribution { theta: softmax(&post.mu) },
        };
        out.push(Some(theta));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TopicGenTraining {
    pub params: TopicGenParams,
    pub epoch_ce: Vec<f64>,
}

/// Adamax minimization of the mean cross-entropy. Deterministic per seed.
pub fn train_topicgen(
    inputs: &[Vec<String>],
    targets: &[TopicDistribution],
    table: &EmbeddingTable,
    cfg: &TopicGenConfig,
) -> Result<TopicGenTraining> {
    cfg.validate()?;
    if inputs.len() != targets.len() {
        return Err(Error::data(format!(
            "topicgen inputs ({}) and targets ({}) differ in length",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.is_empty() {
        return Err(Error::EmptyInput("train_topicgen on empty dataset".into()));
    }
    if table.dim() != cfg.embed_dim {
        return Err(Error::Shape(format!(
            "embedding dim {} != configured {}",
            table.dim(),
            cfg.embed_dim
        )));
    }
    // mean embeddings are fixed inputs; precompute once
    let embeds: Vec<Vec<f64>> =
        inputs.iter().map(|toks| mean_embedding(toks, table)).collect::<Result<_>>()?;

    let mut params = TopicGenParams::init(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut opt_w1 = Adamax::new(cfg.lr, params.w1.data.len());
    let mut opt_w2 = Adamax::new(cfg.lr, params.w2.data.len());
    let keep = 1.0 - cfg.dropout;

    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_ce = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut total_ce = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut acc_w1 = Mat::zeros(params.w1.rows, params.w1.cols);
            let mut acc_w2 = Mat::zeros(params.w2.rows, params.w2.cols);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let mask: Option<Vec<f64>> = if cfg.dropout > 0.0 {
                    Some(
                        (0..params.w2.rows)
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect(),
                    )
                } else {
                    None
                };
                let (loss, dw1, dw2) =
                    ce_gradients(&embeds[i], &targets[i].theta, &params, mask.as_deref());
                total_ce += loss;
                add_scaled(&mut acc_w1.data, scale, &dw1.data);
                add_scaled(&mut acc_w2.data, scale, &dw2.data);
            }
            opt_w1.step(&mut params.w1.data, &acc_w1.data);
            opt_w2.step(&mut params.w2.data, &acc_w2.data);
        }
        epoch_ce.push(total_ce / inputs.len() as f64);
    }
    Ok(TopicGenTraining { params, epoch_ce })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, max_rel_err, FD_FLOOR, FD_STEP};
    use crate::ntm::NtmConfig;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn tiny_cfg(k: usize, h: usize, hidden: usize) -> TopicGenConfig {
        TopicGenConfig {
            topics: k,
            embed_dim: h,
            hidden,
            dropout: 0.0,
            lr: 0.002,
            batch: 4,
            epochs: 1,
            seed: 3,
        }
    }

    fn one_token_table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(1);
        t.insert("x", vec![1.0]);
        t
    }

    #[test]
    fn zero_weights_predict_uniform() {
        let cfg = tiny_cfg(4, 1, 2);
        let params = TopicGenParams::zeros(&cfg);
        let th = predict_topic(&toks(&["x"]), &one_token_table(), &params).unwrap();
        for k in 0..4 {
            assert_abs_diff_eq!(th.theta[k], 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn hand_forward_pass() {
        // e = [1], W2 = [[1]] → h = 1 ; W1 = [[ln 3], [0]] → logits (ln 3, 0)
        let cfg = tiny_cfg(2, 1, 1);
        let mut params = TopicGenParams::zeros(&cfg);
        params.w2 = Mat::from_vec(1, 1, vec![1.0]);
        params.w1 = Mat::from_vec(2, 1, vec![3.0f64.ln(), 0.0]);
        let th = predict_topic(&toks(&["x"]), &one_token_table(), &params).unwrap();
        assert_abs_diff_eq!(th.theta[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(th.theta[1], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn empty_input_is_an_error() {
        let cfg = tiny_cfg(2, 1, 1);
        let params = TopicGenParams::zeros(&cfg);
        assert!(predict_topic(&[], &one_token_table(), &params).is_err());
    }

    #[test]
    fn uniform_cross_entropy_is_ln_k() {
        let u = vec![0.25; 4];
        assert_abs_diff_eq!(cross_entropy(&u, &u), 4.0f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(cross_entropy(&u, &u), 1.386294, epsilon = 1e-6);
    }

    #[test]
    fn one_hot_cross_entropy_approaches_zero() {
        let nearly = vec![1.0 - 1e-9, 0.5e-9, 0.5e-9];
        let target = vec![1.0, 0.0, 0.0];
        assert!(cross_entropy(&nearly, &target) < 1e-8);
    }

    #[test]
    fn targets_from_zero_network_are_uniform() {
        let ncfg = NtmConfig {
            topics: 3,
            vocab_size: 5,
            embed_dim: 2,
            hidden: 4,
            layers: 2,
            dropout: 0.0,
            seed: 0,
        };
        let ntm = NtmParams::zeros(&ncfg);
        let mut counts = std::collections::BTreeMap::new();
        counts.insert(1usize, 2u32);
        let bows = vec![
            BowDocument { counts, token_total: 2 },
            BowDocument::default(), // empty → skipped
        ];
        let targets = build_targets(&bows, &ntm, TargetMode::GOfMu).unwrap();
        let first = targets[0].as_ref().unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(first.theta[k], 1.0 / 3.0, epsilon = 1e-12);
        }
        assert!(targets[1].is_none());
    }

    #[test]
    fn targets_match_ntm_mean_theta() {
        let ncfg = NtmConfig {
            topics: 3,
            vocab_size: 5,
            embed_dim: 2,
            hidden: 4,
            layers: 2,
            dropout: 0.0,
            seed: 77,
        };
        let ntm = NtmParams::init(&ncfg, None).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        counts.insert(0usize, 1u32);
        counts.insert(4usize, 3u32);
        let bow = BowDocument { counts, token_total: 4 };
        let targets = build_targets(std::slice::from_ref(&bow), &ntm, TargetMode::GOfMu).unwrap();
        let expect = sample_theta(&infer_posterior(&bow, &ntm).unwrap(), &[0.0; 3], &ntm);
        for k in 0..3 {
            assert_abs_diff_eq!(
                targets[0].as_ref().unwrap().theta[k],
                expect.theta[k],
                epsilon = 1e-12
            );
        }

        // the alternative target bypasses g
        let alt = build_targets(std::slice::from_ref(&bow), &ntm, TargetMode::SoftmaxMu).unwrap();
        let post = infer_posterior(&bow, &ntm).unwrap();
        let sm = softmax(&post.mu);
        for k in 0..3 {
            assert_abs_diff_eq!(alt[0].as_ref().unwrap().theta[k], sm[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny_cfg(3, 4, 5);
        let params = TopicGenParams::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = softmax(&(0..3).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());

        let (_, dw1, dw2) = ce_gradients(&e, &target, &params, None);

        let mut w1_flat = params.w1.data.clone();
        let n1 = central_diff(
            |vals| {
                let mut p = params.clone();
                p.w1.data.copy_from_slice(vals);
                let (th, _, _) = forward(&e, &p, None);
                cross_entropy(&th, &target)
            },
            &mut w1_flat,
            FD_STEP,
        );
        assert!(max_rel_err(&dw1.data, &n1, FD_FLOOR) <= 1e-4);

        let mut w2_flat = params.w2.data.clone();
        let n2 = central_diff(
            |vals| {
                let mut p = params.clone();
                p.w2.data.copy_from_slice(vals);
                let (th, _, _) = forward(&e, &p, None);
                cross_entropy(&th, &target)
            },
            &mut w2_flat,
            FD_STEP,
        );
        assert!(max_rel_err(&dw2.data, &n2, FD_FLOOR) <= 1e-4);
    }

    #[test]
    fn training_reduces_cross_entropy_and_is_deterministic() {
        let mut table = EmbeddingTable::new(2);
        for (i, w) in ["sun", "sea", "storm", "calm"].iter().enumerate() {
            table.insert(w, vec![(i as f64) / 2.0 - 0.5, ((i * 7 % 5) as f64) / 4.0]);
        }
        let inputs: Vec<Vec<String>> = (0..20)
            .map(|i| match i % 4 {
                0 => toks(&["sun", "sea"]),
                1 => toks(&["storm"]),
                2 => toks(&["calm", "sun"]),
                _ => toks(&["sea", "storm"]),
            })
            .collect();
        let targets: Vec<TopicDistribution> = (0..20)
            .map(|i| {
                let mut t = vec![0.05; 3];
                t[i % 3] = 0.9;
                TopicDistribution { theta: t }
            })
            .collect();
        let cfg = TopicGenConfig {
            topics: 3,
            embed_dim: 2,
            hidden: 8,
            dropout: 0.0,
            lr: 0.002,
            batch: 5,
            epochs: 200,
            seed: 4,
        };
        let run = train_topicgen(&inputs, &targets, &table, &cfg).unwrap();
        assert!(
            run.epoch_ce.last().unwrap() < run.epoch_ce.first().unwrap(),
            "CE {:?} → {:?}",
            run.epoch_ce.first(),
            run.epoch_ce.last()
        );
        let again = train_topicgen(&inputs, &targets, &table, &cfg).unwrap();
        assert_eq!(run.params.w1.data, again.params.w1.data);
        assert_eq!(run.params.w2.data, again.params.w2.data);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let cfg = tiny_cfg(2, 1, 1);
        let table = one_token_table();
        let err = train_topicgen(
            &[toks(&["x"])],
            &[],
            &table,
            &cfg,
        )
        .unwrap_err();
        assert!(err.to_string().contains("length"));
    }

    proptest! {
        #[test]
        fn prediction_is_on_the_simplex(
            w2 in proptest::collection::vec(-3.0f64..3.0, 6),
            w1 in proptest::collection::vec(-3.0f64..3.0, 9),
            ev in proptest::collection::vec(-2.0f64..2.0, 2),
        ) {
            let cfg = tiny_cfg(3, 2, 3);
            let mut params = TopicGenParams::zeros(&cfg);
            params.w2 = Mat::from_vec(3, 2, w2);
            params.w1 = Mat::from_vec(3, 3, w1);
            let mut table = EmbeddingTable::new(2);
            table.insert("w", ev);
            let th = predict_topic(&toks(&["w"]), &table, &params).unwrap();
            let s: f64 = th.theta.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(th.theta.iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn ce_lower_bounded_by_entropy(
            tl in proptest::collection::vec(-3.0f64..3.0, 4),
            pl in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let t = softmax(&tl);
            let p = softmax(&pl);
            let entropy: f64 = t.iter().map(|&x| -x * x.ln()).sum();
            // CE(p, t) − H(t) = KL(t ‖ p) ≥ 0
            prop_assert!(cross_entropy(&p, &t) >= entropy - 1e-9);
            prop_assert!((cross_entropy(&t, &t) - entropy).abs() < 1e-9);
        }
    }
}
