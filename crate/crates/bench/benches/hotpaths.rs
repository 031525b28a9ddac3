//! Hot-path benchmarks: the topic-word softmax, one ELBO backward pass, a
//! collapsed-Gibbs sweep, constrained skeleton sampling, and the
//! encoder-decoder forward pass. Fixture sizes mirror a small production
//! configuration rather than the unit-test micro sizes.

use std::collections::{BTreeMap, HashSet};
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fabula_core::corpus::{BowDocument, VocabKind, Vocabulary};
use fabula_core::lda::train_lda;
use fabula_core::ntm::{compute_beta, elbo_gradients, NtmConfig, NtmParams, TopicDistribution};
use fabula_core::sampler::{
    decode_word_distribution, sample_skeleton, LmConfig, LmParams, SampleMode,
};
use fabula_core::storygen::{forward_logits, Seq2SeqConfig};

fn rand_doc(rng: &mut ChaCha8Rng, vocab: usize, tokens: usize) -> BowDocument {
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    for _ in 0..tokens {
        *counts.entry(rng.random_range(0..vocab)).or_insert(0) += 1;
    }
    let token_total = counts.values().sum();
    BowDocument { counts, token_total }
}

fn bench_ntm(c: &mut Criterion) {
    let cfg = NtmConfig {
        topics: 50,
        vocab_size: 2000,
        embed_dim: 64,
        hidden: 256,
        layers: 2,
        dropout: 0.0,
        seed: 1,
    };
    let params = NtmParams::init(&cfg, None).unwrap();
    c.bench_function("ntm_compute_beta_k50_d2000", |b| {
        b.iter(|| black_box(compute_beta(black_box(&params))))
    });

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let doc = rand_doc(&mut rng, 2000, 60);
    let eps: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.bench_function("ntm_elbo_gradients_one_doc", |b| {
        b.iter(|| black_box(elbo_gradients(black_box(&doc), &params, &eps).unwrap()))
    });
}

fn bench_lda(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus: Vec<BowDocument> =
        (0..200).map(|_| rand_doc(&mut rng, 500, 100)).collect();
    c.bench_function("lda_init_plus_one_sweep_200x100", |b| {
        b.iter(|| {
            black_box(train_lda(black_box(&corpus), 500, 20, 0.5, 0.01, 1, 7).unwrap())
        })
    });
}

fn bench_skeleton(c: &mut Criterion) {
    let d = 500usize;
    let tokens: Vec<String> = (0..d).map(|i| format!("word{i:03}")).collect();
    let vocab = Vocabulary::new(VocabKind::Topic, tokens).unwrap();
    let stop: HashSet<String> = HashSet::new();
    let lm_cfg = LmConfig {
        vocab_size: d,
        embed_dim: 64,
        state: 128,
        layers: 1,
        lr: 1.0,
        batch: 8,
        dropout: 0.0,
        epochs: 1,
        seed: 4,
    };
    let lm = LmParams::init(&lm_cfg).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = 20usize;
    let mut beta = fabula_core::linalg::Mat::zeros(k, d);
    for row in 0..k {
        let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        for (slot, v) in beta.row_mut(row).iter_mut().zip(raw) {
            *slot = v / s;
        }
    }
    let theta: Vec<f64> = {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    };
    let p = decode_word_distribution(&TopicDistribution { theta }, &beta);
    let title: Vec<String> = vec!["word001".into(), "word077".into(), "word300".into()];

    c.bench_function("skeleton_sample_n10_nprime30_d500", |b| {
        b.iter(|| {
            black_box(
                sample_skeleton(
                    black_box(&title),
                    &p,
                    &lm,
                    &vocab,
                    &stop,
                    10,
                    30,
                    SampleMode::Stochastic,
                    9,
                )
                .unwrap(),
            )
        })
    });
}

fn bench_seq2seq(c: &mut Criterion) {
    let cfg = Seq2SeqConfig {
        vocab_size: 1000,
        d_model: 64,
        n_heads: 4,
        n_layers: 2,
        d_ff: 256,
        max_len: 96,
        dropout: 0.0,
        label_smoothing: 0.1,
        warmup_steps: 100,
        seed: 6,
    };
    let params = cfg.init_params().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let src: Vec<usize> = (0..24).map(|_| rng.random_range(5..1000)).collect();
    let mut dec: Vec<usize> = vec![1];
    dec.extend((0..47).map(|_| rng.random_range(5..1000usize)));
    c.bench_function("seq2seq_forward_s24_t48_d64", |b| {
        b.iter(|| black_box(forward_logits(black_box(&src), &dec, &params).unwrap()))
    });
}

criterion_group!(benches, bench_ntm, bench_lda, bench_skeleton, bench_seq2seq);
criterion_main!(benches);
