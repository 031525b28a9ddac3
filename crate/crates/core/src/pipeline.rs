//! End-to-end orchestration: corpus loading, stage training with
//! checkpointing, skeleton-conditioned generation, and evaluation.
//!
//! Stages write one checkpoint file each under a shared directory and record
//! the ids of the upstream checkpoints they were trained against. Generation
//! reloads the chain for the configured skeleton source and refuses to run
//! when a recorded upstream id no longer matches the file on disk.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_stage, stage_path, verify_chain, Checkpoint, TensorEntry};
use crate::config::{PipelineConfig, SkeletonSource};
use crate::corpus::{
    build_generation_vocabulary, build_topic_vocabulary, content_stems, load_embeddings,
    load_story_pairs, stopwords, to_bow, tokenize, BowDocument, EmbeddingTable, StoryPair,
    VocabKind, Vocabulary,
};
use crate::error::{Error, Result};
use crate::lda::{fold_in_theta, train_lda};
use crate::linalg::Mat;
use crate::metrics::{
    dist_n, ent_n, inter_story_repetition, intra_story_repetition_lenient, rouge_1, rouge_l,
    text_perplexity, Story, StorySet,
};
use crate::ntm::{
    compute_beta, infer_posterior, sample_theta, topic_top_words, train_ntm, NtmConfig, NtmParams,
    TopicDistribution,
};
use crate::sampler::{
    decode_word_distribution, sample_skeleton, top_n_prime, train_lm, LmConfig, LmParams,
    SampleMode,
};
use crate::storygen::{
    build_input, generate, train_storygen, DecodeMode, Seq2SeqConfig, Seq2SeqParams,
};
use crate::topicgen::{
    build_targets, predict_topic, train_topicgen, TopicGenConfig, TopicGenParams,
};

pub const STAGE_NTM: &str = "ntm";
pub const STAGE_LDA: &str = "lda";
pub const STAGE_TOPICGEN: &str = "topicgen";
pub const STAGE_SAMPLER: &str = "sampler";
pub const STAGE_SCORER: &str = "scorer";
pub const STAGE_STORYGEN: &str = "storygen";

/// Everything the training stages read from disk, loaded once.
pub struct CorpusBundle {
    pub pairs: Vec<StoryPair>,
    /// Content-stem vocabulary over the stories (no specials, no stopwords).
    pub topic_vocab: Vocabulary,
    /// Surface-token vocabulary over titles and stories (specials first).
    pub gen_vocab: Vocabulary,
    pub stopwords: HashSet<String>,
    /// Bag-of-words view of each story against `topic_vocab`, pair-aligned.
    pub story_bows: Vec<BowDocument>,
}

pub fn load_corpus(cfg: &PipelineConfig) -> Result<CorpusBundle> {
    let pairs = load_story_pairs(Path::new(&cfg.data_stories))?;
    let stop = stopwords::builtin();
    let story_docs: Vec<Vec<String>> = pairs.iter().map(|p| p.story_tokens.clone()).collect();
    let topic_vocab = build_topic_vocabulary(&story_docs, cfg.topic_vocab, &stop)?;
    let mut gen_docs = story_docs;
    gen_docs.extend(pairs.iter().map(|p| p.input_tokens.clone()));
    let gen_vocab = build_generation_vocabulary(&gen_docs, cfg.gen_vocab)?;
    let story_bows =
        pairs.iter().map(|p| to_bow(&p.story_tokens, &topic_vocab, &stop)).collect();
    Ok(CorpusBundle { pairs, topic_vocab, gen_vocab, stopwords: stop, story_bows })
}

fn load_table(cfg: &PipelineConfig) -> Result<EmbeddingTable> {
    let path = cfg.data_embeddings.as_ref().ok_or_else(|| {
        Error::config("data.embeddings must point at a word-vector file for this operation")
    })?;
    let (table, _skipped) = load_embeddings(Path::new(path), cfg.embed_dim)?;
    Ok(table)
}

/// What a training stage leaves behind: the checkpoint id, where it was
/// written, and human-readable progress notes for the CLI.
#[derive(Debug)]
pub struct StageReport {
    pub stage: String,
    pub id: String,
    pub path: PathBuf,
    pub notes: Vec<String>,
}

fn save_stage(mut ckpt: Checkpoint, dir: &Path, notes: Vec<String>) -> Result<StageReport> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = stage_path(dir, &ckpt.stage);
    ckpt.save(&path)?;
    Ok(StageReport { stage: ckpt.stage.clone(), id: ckpt.id.clone(), path, notes })
}

fn curve_note(name: &str, values: &[f64]) -> String {
    match values {
        [] => format!("{name}: (no epochs run)"),
        [only] => format!("{name}: {only:.4}"),
        [first, .., last] => format!("{name}: {first:.4} -> {last:.4} over {} epochs", values.len()),
    }
}

// ---------------------------------------------------------------------------
// Checkpoint serialization and rebuild
// ---------------------------------------------------------------------------

fn ntm_tensor_entries(p: &NtmParams) -> Vec<TensorEntry> {
    let mut out = Vec::new();
    for (i, (w, b)) in p.mlp.iter().enumerate() {
        out.push(TensorEntry::new(format!("mlp.{i}.w"), vec![w.rows, w.cols], w.data.clone()));
        out.push(TensorEntry::new(format!("mlp.{i}.b"), vec![b.len()], b.clone()));
    }
    out.push(TensorEntry::new("mu.w", vec![p.mu_w.rows, p.mu_w.cols], p.mu_w.data.clone()));
    out.push(TensorEntry::new("mu.b", vec![p.mu_b.len()], p.mu_b.clone()));
    out.push(TensorEntry::new(
        "logvar.w",
        vec![p.logvar_w.rows, p.logvar_w.cols],
        p.logvar_w.data.clone(),
    ));
    out.push(TensorEntry::new("logvar.b", vec![p.logvar_b.len()], p.logvar_b.clone()));
    out.push(TensorEntry::new("u", vec![p.u.rows, p.u.cols], p.u.data.clone()));
    out.push(TensorEntry::new("v", vec![p.v.rows, p.v.cols], p.v.data.clone()));
    out.push(TensorEntry::new("w_g", vec![p.w_g.rows, p.w_g.cols], p.w_g.data.clone()));
    out.push(TensorEntry::new("b_g", vec![p.b_g.len()], p.b_g.clone()));
    out
}

fn fill_slot(ckpt: &Checkpoint, name: &str, slot: &mut Vec<f64>) -> Result<()> {
    let entry = ckpt.tensor(name)?;
    if entry.data.len() != slot.len() {
        return Err(Error::Checkpoint(format!(
            "tensor `{name}` holds {} values but the {} config implies {}",
            entry.data.len(),
            ckpt.stage,
            slot.len()
        )));
    }
    slot.clone_from(&entry.data);
    Ok(())
}

fn cfg_usize(ckpt: &Checkpoint, key: &str) -> Result<usize> {
    let raw = ckpt.config_value(key)?;
    raw.parse()
        .map_err(|_| Error::Checkpoint(format!("config key {key}={raw:?} is not an integer")))
}

fn cfg_u64(ckpt: &Checkpoint, key: &str) -> Result<u64> {
    let raw = ckpt.config_value(key)?;
    raw.parse()
        .map_err(|_| Error::Checkpoint(format!("config key {key}={raw:?} is not an integer")))
}

fn cfg_f64(ckpt: &Checkpoint, key: &str) -> Result<f64> {
    let raw = ckpt.config_value(key)?;
    raw.parse()
        .map_err(|_| Error::Checkpoint(format!("config key {key}={raw:?} is not a number")))
}

fn ckpt_vocab(ckpt: &Checkpoint, name: &str, kind: VocabKind) -> Result<Vocabulary> {
    Vocabulary::new(kind, ckpt.vocab(name)?.clone())
}

pub fn rebuild_ntm(ckpt: &Checkpoint) -> Result<(NtmParams, Vocabulary)> {
    let vocab = ckpt_vocab(ckpt, "topic", VocabKind::Topic)?;
    let cfg = NtmConfig {
        topics: cfg_usize(ckpt, "topics")?,
        vocab_size: vocab.len(),
        embed_dim: cfg_usize(ckpt, "data.embed_dim")?,
        hidden: cfg_usize(ckpt, "ntm.hidden")?,
        layers: cfg_usize(ckpt, "ntm.layers")?,
        dropout: cfg_f64(ckpt, "ntm.dropout")?,
        seed: cfg_u64(ckpt, "seed")?,
    };
    let mut params = NtmParams::zeros(&cfg);
    for (name, _group, slot) in params.named_tensors_mut() {
        fill_slot(ckpt, &name, slot)?;
    }
    params.v_frozen = matches!(ckpt.config_value("ntm.v_frozen"), Ok("true"));
    Ok((params, vocab))
}

fn lda_phi(ckpt: &Checkpoint) -> Result<(Mat, Vocabulary, f64)> {
    let vocab = ckpt_vocab(ckpt, "topic", VocabKind::Topic)?;
    let topics = cfg_usize(ckpt, "topics")?;
    let entry = ckpt.tensor("phi")?;
    if entry.data.len() != topics * vocab.len() {
        return Err(Error::Checkpoint(format!(
            "tensor `phi` holds {} values but topics*vocab = {}",
            entry.data.len(),
            topics * vocab.len()
        )));
    }
    let phi = Mat { rows: topics, cols: vocab.len(), data: entry.data.clone() };
    let alpha = cfg_f64(ckpt, "lda.alpha")?;
    Ok((phi, vocab, alpha))
}

pub fn rebuild_topicgen(ckpt: &Checkpoint) -> Result<TopicGenParams> {
    let cfg = TopicGenConfig {
        topics: cfg_usize(ckpt, "topics")?,
        embed_dim: cfg_usize(ckpt, "data.embed_dim")?,
        hidden: cfg_usize(ckpt, "topicgen.hidden")?,
        dropout: cfg_f64(ckpt, "topicgen.dropout")?,
        lr: cfg_f64(ckpt, "topicgen.lr")?,
        batch: cfg_usize(ckpt, "topicgen.batch")?,
        epochs: cfg_usize(ckpt, "topicgen.epochs")?,
        seed: cfg_u64(ckpt, "seed")?.wrapping_add(1),
    };
    let mut params = TopicGenParams::zeros(&cfg);
    fill_slot(ckpt, "w2", &mut params.w2.data)?;
    fill_slot(ckpt, "w1", &mut params.w1.data)?;
    Ok(params)
}

/// Rebuild a word-level GRU language model; works for both the skeleton
/// sampler (topic vocabulary) and the fluency scorer (generation vocabulary).
pub fn rebuild_lm(ckpt: &Checkpoint) -> Result<(LmParams, Vocabulary)> {
    let (vocab_name, kind, seed_offset) = if ckpt.stage == STAGE_SCORER {
        ("generation", VocabKind::Generation, 4u64)
    } else {
        ("topic", VocabKind::Topic, 2u64)
    };
    let vocab = ckpt_vocab(ckpt, vocab_name, kind)?;
    let cfg = LmConfig {
        vocab_size: vocab.len(),
        embed_dim: cfg_usize(ckpt, "sampler.embed")?,
        state: cfg_usize(ckpt, "sampler.state")?,
        layers: cfg_usize(ckpt, "sampler.layers")?,
        lr: cfg_f64(ckpt, "sampler.lr")?,
        batch: cfg_usize(ckpt, "sampler.batch")?,
        dropout: cfg_f64(ckpt, "sampler.dropout")?,
        epochs: cfg_usize(ckpt, "sampler.epochs")?,
        seed: cfg_u64(ckpt, "seed")?.wrapping_add(seed_offset),
    };
    let mut params = LmParams::zeros(&cfg);
    for (name, slot) in params.named_tensors_mut() {
        fill_slot(ckpt, &name, slot)?;
    }
    Ok((params, vocab))
}

pub fn rebuild_seq2seq(ckpt: &Checkpoint) -> Result<(Seq2SeqParams, Vocabulary)> {
    let vocab = ckpt_vocab(ckpt, "generation", VocabKind::Generation)?;
    let cfg = Seq2SeqConfig {
        vocab_size: vocab.len(),
        d_model: cfg_usize(ckpt, "storygen.d_model")?,
        n_heads: cfg_usize(ckpt, "storygen.heads")?,
        n_layers: cfg_usize(ckpt, "storygen.layers")?,
        d_ff: cfg_usize(ckpt, "storygen.d_ff")?,
        max_len: cfg_usize(ckpt, "storygen.max_len")?,
        dropout: cfg_f64(ckpt, "storygen.dropout")?,
        label_smoothing: cfg_f64(ckpt, "storygen.label_smoothing")?,
        warmup_steps: cfg_usize(ckpt, "storygen.warmup")?,
        seed: cfg_u64(ckpt, "seed")?.wrapping_add(3),
    };
    // init_params builds the fixed sinusoidal table; every trainable tensor
    // is then overwritten from the checkpoint.
    let mut params = cfg.init_params()?;
    for (name, slot) in params.named_tensors_mut() {
        fill_slot(ckpt, &name, slot)?;
    }
    Ok((params, vocab))
}

// ---------------------------------------------------------------------------
// Training stages
// ---------------------------------------------------------------------------

pub fn train_ntm_stage(cfg: &PipelineConfig, dir: &Path) -> Result<StageReport> {
    cfg.validate()?;
    let bundle = load_corpus(cfg)?;
    let ntm_cfg = cfg.ntm_config(bundle.topic_vocab.len());
    let table;
    let emb = match &cfg.data_embeddings {
        Some(_) => {
            table = load_table(cfg)?;
            Some((&table, &bundle.topic_vocab))
        }
        None => None,
    };
    let trained = train_ntm(&bundle.story_bows, &ntm_cfg, emb, cfg.ntm_epochs, cfg.ntm_batch)?;
    let docs = bundle.story_bows.iter().filter(|b| b.token_total > 0).count();
    let mut ckpt = Checkpoint::new(STAGE_NTM);
    ckpt.config = cfg.to_flat();
    ckpt.config.insert("ntm.v_frozen".into(), trained.params.v_frozen.to_string());
    ckpt.vocabs.insert("topic".into(), bundle.topic_vocab.tokens().to_vec());
    ckpt.tensors = ntm_tensor_entries(&trained.params);
    save_stage(
        ckpt,
        dir,
        vec![
            format!("documents: {docs}, topic vocabulary: {}", bundle.topic_vocab.len()),
            format!("word vectors frozen: {}", trained.params.v_frozen),
            curve_note("mean ELBO", &trained.epoch_elbo),
        ],
    )
}

pub fn train_lda_stage(cfg: &PipelineConfig, dir: &Path) -> Result<StageReport> {
    cfg.validate()?;
    let bundle = load_corpus(cfg)?;
    let (state, phi) = train_lda(
        &bundle.story_bows,
        bundle.topic_vocab.len(),
        cfg.topics,
        cfg.lda_alpha,
        cfg.lda_eta,
        cfg.lda_sweeps,
        cfg.seed,
    )?;
    let mut ckpt = Checkpoint::new(STAGE_LDA);
    ckpt.config = cfg.to_flat();
    ckpt.vocabs.insert("topic".into(), bundle.topic_vocab.tokens().to_vec());
    ckpt.tensors = vec![TensorEntry::new("phi", vec![phi.rows, phi.cols], phi.data)];
    save_stage(
        ckpt,
        dir,
        vec![
            format!("documents: {}, topics: {}", state.docs.len(), cfg.topics),
            format!("gibbs sweeps: {}", cfg.lda_sweeps),
        ],
    )
}

pub fn train_topicgen_stage(cfg: &PipelineConfig, dir: &Path) -> Result<StageReport> {
    cfg.validate()?;
    let ntm_ckpt = load_stage(dir, STAGE_NTM)?;
    let (ntm_params, topic_vocab) = rebuild_ntm(&ntm_ckpt)?;
    let bundle = load_corpus(cfg)?;
    let table = load_table(cfg)?;
    // Bags of words must be indexed against the checkpoint's vocabulary, not
    // the one recomputed from the current corpus, so that target mixtures
    // line up with the trained topic-word tensors.
    let bows: Vec<BowDocument> = bundle
        .pairs
        .iter()
        .map(|p| to_bow(&p.story_tokens, &topic_vocab, &bundle.stopwords))
        .collect();
    let targets = build_targets(&bows, &ntm_params, cfg.topicgen_target)?;
    let mut inputs = Vec::new();
    let mut kept_targets = Vec::new();
    for (pair, target) in bundle.pairs.iter().zip(targets) {
        if let Some(t) = target {
            inputs.push(pair.input_tokens.clone());
            kept_targets.push(t);
        }
    }
    if inputs.is_empty() {
        return Err(Error::EmptyInput(
            "no story has content words in the topic vocabulary".into(),
        ));
    }
    let skipped = bundle.pairs.len() - inputs.len();
    let trained = train_topicgen(&inputs, &kept_targets, &table, &cfg.topicgen_config())?;
    let mut ckpt = Checkpoint::new(STAGE_TOPICGEN);
    ckpt.upstream.insert(STAGE_NTM.into(), ntm_ckpt.id.clone());
    ckpt.config = cfg.to_flat();
    ckpt.vocabs.insert("topic".into(), topic_vocab.tokens().to_vec());
    ckpt.tensors = vec![
        TensorEntry::new("w2", vec![trained.params.w2.rows, trained.params.w2.cols],
            trained.params.w2.data.clone()),
        TensorEntry::new("w1", vec![trained.params.w1.rows, trained.params.w1.cols],
            trained.params.w1.data.clone()),
    ];
    save_stage(
        ckpt,
        dir,
        vec![
            format!("training pairs: {} (skipped {skipped} without topical content)", inputs.len()),
            curve_note("mean cross-entropy", &trained.epoch_ce),
        ],
    )
}

/// Train the word-level GRU. With `surface = false` this is the skeleton
/// sampler: sequences are the content stems of each story over the topic
/// vocabulary. With `surface = true` it is the fluency scorer: full
/// `[BOS] story [EOS]` token sequences over the generation vocabulary.
pub fn train_sampler_stage(cfg: &PipelineConfig, dir: &Path, surface: bool) -> Result<StageReport> {
    cfg.validate()?;
    let bundle = load_corpus(cfg)?;
    let (stage, vocab_name, vocab, lm_cfg) = if surface {
        let v = &bundle.gen_vocab;
        (STAGE_SCORER, "generation", v, cfg.scorer_config(v.len()))
    } else {
        let v = &bundle.topic_vocab;
        (STAGE_SAMPLER, "topic", v, cfg.sampler_config(v.len()))
    };
    let sequences: Vec<Vec<usize>> = bundle
        .pairs
        .iter()
        .map(|p| {
            if surface {
                let mut ids = Vec::with_capacity(p.story_tokens.len() + 2);
                ids.push(crate::corpus::BOS);
                ids.extend(p.story_tokens.iter().map(|t| vocab.id_or_unk(t)));
                ids.push(crate::corpus::EOS);
                ids
            } else {
                content_stems(&p.story_tokens, &bundle.stopwords)
                    .iter()
                    .filter_map(|s| vocab.get(s))
                    .collect()
            }
        })
        .collect();
    let usable = sequences.iter().filter(|s| s.len() >= 2).count();
    let trained = train_lm(&sequences, &lm_cfg)?;
    let mut ckpt = Checkpoint::new(stage);
    ckpt.config = cfg.to_flat();
    ckpt.vocabs.insert(vocab_name.into(), vocab.tokens().to_vec());
    ckpt.tensors = trained
        .params
        .named_tensors()
        .into_iter()
        .map(|(name, shape, data)| TensorEntry::new(name, shape, data.to_vec()))
        .collect();
    save_stage(
        ckpt,
        dir,
        vec![
            format!("sequences: {usable} of {} usable, vocabulary: {}", sequences.len(), vocab.len()),
            curve_note("mean next-word loss", &trained.epoch_loss),
        ],
    )
}

/// Skeletons used to condition the story generator during training. They are
/// derived from the *story* side (the trained topic model's view of the
/// finished story), while at generation time the topic mixture comes from
/// the title alone.
fn training_skeletons(
    cfg: &PipelineConfig,
    dir: &Path,
    bundle: &CorpusBundle,
) -> Result<(Vec<Vec<String>>, std::collections::BTreeMap<String, String>)> {
    let mut upstream = std::collections::BTreeMap::new();
    let n_pairs = bundle.pairs.len();
    let mode: SampleMode = cfg.generate_sample_mode.parse()?;
    let skeletons = match cfg.skeleton_source {
        SkeletonSource::None => vec![Vec::new(); n_pairs],
        SkeletonSource::Random => {
            // Draw uniformly (with replacement) from the topic vocabulary.
            let mut out = Vec::with_capacity(n_pairs);
            for i in 0..n_pairs {
                let mut rng = ChaCha8Rng::seed_from_u64(skeleton_seed(cfg.seed, i));
                let words = (0..cfg.n)
                    .map(|_| {
                        bundle.topic_vocab.token(rng.random_range(0..bundle.topic_vocab.len()))
                            .to_string()
                    })
                    .collect();
                out.push(words);
            }
            out
        }
        SkeletonSource::Topnet | SkeletonSource::TopWords => {
            let ntm_ckpt = load_stage(dir, STAGE_NTM)?;
            let (ntm_params, topic_vocab) = rebuild_ntm(&ntm_ckpt)?;
            upstream.insert(STAGE_NTM.into(), ntm_ckpt.id.clone());
            let beta = compute_beta(&ntm_params);
            let eps = vec![0.0; ntm_params.topics()];
            let sampler = if cfg.skeleton_source == SkeletonSource::Topnet {
                let sampler_ckpt = load_stage(dir, STAGE_SAMPLER)?;
                let (lm, lm_vocab) = rebuild_lm(&sampler_ckpt)?;
                same_vocab(&lm_vocab, &topic_vocab, STAGE_SAMPLER, STAGE_NTM)?;
                upstream.insert(STAGE_SAMPLER.into(), sampler_ckpt.id.clone());
                Some(lm)
            } else {
                None
            };
            let mut out = Vec::with_capacity(n_pairs);
            for (i, pair) in bundle.pairs.iter().enumerate() {
                let bow = to_bow(&pair.story_tokens, &topic_vocab, &bundle.stopwords);
                if bow.token_total == 0 {
                    out.push(Vec::new());
                    continue;
                }
                let post = infer_posterior(&bow, &ntm_params)?;
                let theta = sample_theta(&post, &eps, &ntm_params);
                let p = decode_word_distribution(&theta, &beta);
                let words = match &sampler {
                    Some(lm) => sample_skeleton(
                        &pair.input_tokens,
                        &p,
                        lm,
                        &topic_vocab,
                        &bundle.stopwords,
                        cfg.n,
                        cfg.n_prime,
                        mode,
                        skeleton_seed(cfg.seed, i),
                    )?
                    .words()
                    .to_vec(),
                    None => top_words_skeleton(&p, &topic_vocab, cfg.n),
                };
                out.push(words);
            }
            out
        }
        SkeletonSource::TopnetLda => {
            let lda_ckpt = load_stage(dir, STAGE_LDA)?;
            let (phi, topic_vocab, alpha) = lda_phi(&lda_ckpt)?;
            let sampler_ckpt = load_stage(dir, STAGE_SAMPLER)?;
            let (lm, lm_vocab) = rebuild_lm(&sampler_ckpt)?;
            same_vocab(&lm_vocab, &topic_vocab, STAGE_SAMPLER, STAGE_LDA)?;
            upstream.insert(STAGE_LDA.into(), lda_ckpt.id.clone());
            upstream.insert(STAGE_SAMPLER.into(), sampler_ckpt.id.clone());
            let mut out = Vec::with_capacity(n_pairs);
            for (i, pair) in bundle.pairs.iter().enumerate() {
                let ids: Vec<usize> = content_stems(&pair.story_tokens, &bundle.stopwords)
                    .iter()
                    .filter_map(|s| topic_vocab.get(s))
                    .collect();
                if ids.is_empty() {
                    out.push(Vec::new());
                    continue;
                }
                let seed = skeleton_seed(cfg.seed, i);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let theta = fold_in_theta(&phi, &ids, alpha, cfg.fold_iters, &mut rng);
                let p = decode_word_distribution(&TopicDistribution { theta }, &phi);
                out.push(
                    sample_skeleton(
                        &pair.input_tokens,
                        &p,
                        &lm,
                        &topic_vocab,
                        &bundle.stopwords,
                        cfg.n,
                        cfg.n_prime,
                        mode,
                        seed,
                    )?
                    .words()
                    .to_vec(),
                );
            }
            out
        }
    };
    Ok((skeletons, upstream))
}

fn skeleton_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(10_000).wrapping_add(index as u64)
}

/// Skeleton for the rank-order ablation: the N most probable topical words.
fn top_words_skeleton(p: &[f64], vocab: &Vocabulary, n: usize) -> Vec<String> {
    top_n_prime(p, n.min(p.len())).into_iter().map(|w| vocab.token(w).to_string()).collect()
}

fn same_vocab(a: &Vocabulary, b: &Vocabulary, a_stage: &str, b_stage: &str) -> Result<()> {
    if a.tokens() != b.tokens() {
        return Err(Error::ChainMismatch(format!(
            "`{a_stage}` and `{b_stage}` checkpoints were trained on different topic vocabularies \
             ({} vs {} words); retrain them from the same corpus",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn train_storygen_stage(cfg: &PipelineConfig, dir: &Path) -> Result<StageReport> {
    cfg.validate()?;
    let bundle = load_corpus(cfg)?;
    let (skeletons, upstream) = training_skeletons(cfg, dir, &bundle)?;
    let max_len = cfg.storygen_max_len;
    let mut pairs: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut dropped = 0usize;
    let mut truncated = 0usize;
    for (pair, skel) in bundle.pairs.iter().zip(&skeletons) {
        let src = match build_input(&pair.input_tokens, skel, &bundle.gen_vocab, max_len) {
            Ok(s) => s,
            // A title plus its skeleton can exceed the position table; such
            // pairs cannot be encoded and are dropped rather than clipped,
            // since clipping the skeleton would break its length contract.
            Err(Error::Data(_)) => {
                dropped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut story: Vec<usize> =
            pair.story_tokens.iter().map(|t| bundle.gen_vocab.id_or_unk(t)).collect();
        if story.len() > max_len - 1 {
            story.truncate(max_len - 1);
            truncated += 1;
        }
        pairs.push((src, story));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput(
            "every training pair overflowed storygen.max_len; raise it".into(),
        ));
    }
    let s2s_cfg = cfg.storygen_config(bundle.gen_vocab.len());
    let trained =
        train_storygen(&pairs, &s2s_cfg, cfg.storygen_steps, cfg.storygen_batch, None)?;
    let mut ckpt = Checkpoint::new(STAGE_STORYGEN);
    ckpt.upstream = upstream;
    ckpt.config = cfg.to_flat();
    ckpt.vocabs.insert("generation".into(), bundle.gen_vocab.tokens().to_vec());
    if cfg.skeleton_source != SkeletonSource::None {
        // Recorded so that vocabulary-only sources (random) can decode
        // without any topic-model checkpoint present.
        ckpt.vocabs.insert("topic".into(), bundle.topic_vocab.tokens().to_vec());
    }
    let shapes = trained.params.tensor_shapes();
    ckpt.tensors = trained
        .params
        .named_tensors()
        .into_iter()
        .zip(shapes)
        .map(|((name, data), (shape_name, shape))| {
            debug_assert_eq!(name, shape_name);
            TensorEntry::new(name, shape, data.to_vec())
        })
        .collect();
    let first = trained.step_loss.first().copied().unwrap_or(f64::NAN);
    let last = trained.step_loss.last().copied().unwrap_or(f64::NAN);
    save_stage(
        ckpt,
        dir,
        vec![
            format!(
                "pairs: {} (dropped {dropped} over-length inputs, truncated {truncated} stories)",
                pairs.len()
            ),
            format!("skeleton source: {}", cfg.skeleton_source),
            format!(
                "step loss: {first:.4} -> {last:.4} over {} steps, final accuracy {:.3}",
                trained.steps_run, trained.final_accuracy
            ),
        ],
    )
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// One generated story, as written to the output JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub title: String,
    pub skeleton: Vec<String>,
    /// Space-joined surface tokens.
    pub story: String,
}

/// Every model the configured skeleton source needs, loaded and
/// chain-verified once per batch.
pub struct GenerationStack {
    source: SkeletonSource,
    s2s: Seq2SeqParams,
    gen_vocab: Vocabulary,
    stopwords: HashSet<String>,
    /// Topic-word rows: NTM β for topnet/top_words, LDA φ for topnet_lda.
    beta: Option<Mat>,
    topic_vocab: Option<Vocabulary>,
    topicgen: Option<TopicGenParams>,
    table: Option<EmbeddingTable>,
    lm: Option<LmParams>,
    lda_alpha: Option<f64>,
}

/// Verify `down` against `up` when `down` records that stage at all. A
/// storygen checkpoint trained with one skeleton source may be reused with
/// another (that is the ablation axis), so an absent record is not an error;
/// a *stale* record is.
fn verify_if_recorded(down: &Checkpoint, up: &Checkpoint) -> Result<()> {
    if down.upstream.contains_key(&up.stage) {
        verify_chain(down, up)?;
    }
    Ok(())
}

pub fn load_generation_stack(cfg: &PipelineConfig, dir: &Path) -> Result<GenerationStack> {
    cfg.validate()?;
    let storygen_ckpt = load_stage(dir, STAGE_STORYGEN)?;
    let (s2s, gen_vocab) = rebuild_seq2seq(&storygen_ckpt)?;
    let mut stack = GenerationStack {
        source: cfg.skeleton_source,
        s2s,
        gen_vocab,
        stopwords: stopwords::builtin(),
        beta: None,
        topic_vocab: None,
        topicgen: None,
        table: None,
        lm: None,
        lda_alpha: None,
    };
    match cfg.skeleton_source {
        SkeletonSource::None => {}
        SkeletonSource::Random => {
            // Only a topic vocabulary is needed; prefer the one recorded in
            // the storygen checkpoint, fall back to the topic model's.
            let vocab = match storygen_ckpt.vocab("topic") {
                Ok(tokens) => Vocabulary::new(VocabKind::Topic, tokens.clone())?,
                Err(_) => {
                    let ntm_ckpt = load_stage(dir, STAGE_NTM)?;
                    verify_if_recorded(&storygen_ckpt, &ntm_ckpt)?;
                    rebuild_ntm(&ntm_ckpt)?.1
                }
            };
            stack.topic_vocab = Some(vocab);
        }
        SkeletonSource::Topnet | SkeletonSource::TopWords => {
            let ntm_ckpt = load_stage(dir, STAGE_NTM)?;
            let topicgen_ckpt = load_stage(dir, STAGE_TOPICGEN)?;
            verify_chain(&topicgen_ckpt, &ntm_ckpt)?;
            verify_if_recorded(&storygen_ckpt, &ntm_ckpt)?;
            let (ntm_params, topic_vocab) = rebuild_ntm(&ntm_ckpt)?;
            if cfg.skeleton_source == SkeletonSource::Topnet {
                let sampler_ckpt = load_stage(dir, STAGE_SAMPLER)?;
                verify_if_recorded(&storygen_ckpt, &sampler_ckpt)?;
                let (lm, lm_vocab) = rebuild_lm(&sampler_ckpt)?;
                same_vocab(&lm_vocab, &topic_vocab, STAGE_SAMPLER, STAGE_NTM)?;
                stack.lm = Some(lm);
            }
            stack.beta = Some(compute_beta(&ntm_params));
            stack.topicgen = Some(rebuild_topicgen(&topicgen_ckpt)?);
            stack.table = Some(load_table(cfg)?);
            stack.topic_vocab = Some(topic_vocab);
        }
        SkeletonSource::TopnetLda => {
            let lda_ckpt = load_stage(dir, STAGE_LDA)?;
            let sampler_ckpt = load_stage(dir, STAGE_SAMPLER)?;
            verify_if_recorded(&storygen_ckpt, &lda_ckpt)?;
            verify_if_recorded(&storygen_ckpt, &sampler_ckpt)?;
            let (phi, topic_vocab, alpha) = lda_phi(&lda_ckpt)?;
            let (lm, lm_vocab) = rebuild_lm(&sampler_ckpt)?;
            same_vocab(&lm_vocab, &topic_vocab, STAGE_SAMPLER, STAGE_LDA)?;
            stack.beta = Some(phi);
            stack.lm = Some(lm);
            stack.lda_alpha = Some(alpha);
            stack.topic_vocab = Some(topic_vocab);
        }
    }
    Ok(stack)
}

impl GenerationStack {
    /// Generate the skeleton and story for one title. `seed` drives every
    /// stochastic choice (skeleton sampling, LDA fold-in, random draws).
    pub fn generate_one(
        &self,
        cfg: &PipelineConfig,
        title: &str,
        seed: u64,
    ) -> Result<GenerationRecord> {
        let title_tokens = tokenize(title);
        if title_tokens.is_empty() {
            return Err(Error::EmptyInput(format!("title {title:?} has no tokens")));
        }
        let mode: SampleMode = cfg.generate_sample_mode.parse()?;
        let skeleton: Vec<String> = match self.source {
            SkeletonSource::None => Vec::new(),
            SkeletonSource::Random => {
                let vocab = self.topic_vocab.as_ref().expect("random stack has a vocabulary");
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..cfg.n)
                    .map(|_| vocab.token(rng.random_range(0..vocab.len())).to_string())
                    .collect()
            }
            SkeletonSource::Topnet | SkeletonSource::TopWords => {
                let vocab = self.topic_vocab.as_ref().expect("topnet stack has a vocabulary");
                let beta = self.beta.as_ref().expect("topnet stack has beta");
                let theta = predict_topic(
                    &title_tokens,
                    self.table.as_ref().expect("topnet stack has embeddings"),
                    self.topicgen.as_ref().expect("topnet stack has a topic generator"),
                )?;
                let p = decode_word_distribution(&theta, beta);
                match &self.lm {
                    Some(lm) => sample_skeleton(
                        &title_tokens,
                        &p,
                        lm,
                        vocab,
                        &self.stopwords,
                        cfg.n,
                        cfg.n_prime,
                        mode,
                        seed,
                    )?
                    .words()
                    .to_vec(),
                    None => top_words_skeleton(&p, vocab, cfg.n),
                }
            }
            SkeletonSource::TopnetLda => {
                let vocab = self.topic_vocab.as_ref().expect("lda stack has a vocabulary");
                let phi = self.beta.as_ref().expect("lda stack has phi");
                let alpha = self.lda_alpha.expect("lda stack has alpha");
                let lm = self.lm.as_ref().expect("lda stack has a sampler");
                let ids: Vec<usize> = content_stems(&title_tokens, &self.stopwords)
                    .iter()
                    .filter_map(|s| vocab.get(s))
                    .collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let theta = fold_in_theta(phi, &ids, alpha, cfg.fold_iters, &mut rng);
                let p = decode_word_distribution(&TopicDistribution { theta }, phi);
                sample_skeleton(
                    &title_tokens,
                    &p,
                    lm,
                    vocab,
                    &self.stopwords,
                    cfg.n,
                    cfg.n_prime,
                    mode,
                    seed,
                )?
                .words()
                .to_vec()
            }
        };
        let src = build_input(&title_tokens, &skeleton, &self.gen_vocab, self.s2s.max_len())?;
        let decode: DecodeMode = cfg.generate_decode.parse()?;
        let ids = generate(&src, &self.s2s, decode, cfg.generate_max_tokens)?;
        let story =
            ids.iter().map(|&id| self.gen_vocab.token(id)).collect::<Vec<_>>().join(" ");
        Ok(GenerationRecord { title: title.to_string(), skeleton, story })
    }
}

/// Generate one record per title; record `i` uses seed `cfg.seed + i`, so a
/// rerun of the same batch reproduces the same file byte for byte.
pub fn run_generate(
    titles: &[String],
    cfg: &PipelineConfig,
    dir: &Path,
) -> Result<Vec<GenerationRecord>> {
    if titles.is_empty() {
        return Err(Error::EmptyInput("no titles to generate from".into()));
    }
    let stack = load_generation_stack(cfg, dir)?;
    titles
        .iter()
        .enumerate()
        .map(|(i, t)| stack.generate_one(cfg, t, cfg.seed.wrapping_add(i as u64)))
        .collect()
}

pub fn write_generations(path: &Path, records: &[GenerationRecord]) -> Result<()> {
    let mut out = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for rec in records {
        let line = serde_json::to_string(rec)
            .map_err(|e| Error::data(format!("serializing generation record: {e}")))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_generations(path: &Path) -> Result<Vec<GenerationRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GenerationRecord = serde_json::from_str(&line).map_err(|e| {
            Error::data(format!("{}:{}: bad generation record: {e}", path.display(), lineno + 1))
        })?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::EmptyInput(format!("{}: no generation records", path.display())));
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// The evaluation report, serialized as a single JSON object. Reference
/// metrics appear only when a reference file was given; perplexity only when
/// a fluency-scorer checkpoint exists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub inter_s: f64,
    pub intra_s: f64,
    pub dist2: f64,
    pub ent4: f64,
    pub dist2_skeleton: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge1: Option<f64>,
    #[serde(rename = "rougeL", skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppl: Option<f64>,
}

pub fn run_evaluate(
    generated: &Path,
    references: Option<&Path>,
    dir: &Path,
) -> Result<MetricsReport> {
    let records = read_generations(generated)?;
    let story_tokens: Vec<Vec<String>> = records
        .iter()
        .map(|r| r.story.split_whitespace().map(str::to_string).collect())
        .collect();
    let set = StorySet::new(story_tokens.iter().cloned().map(Story::from_tokens).collect())?;

    let inter_s = inter_story_repetition(&set)?;
    let (intra_s, _skipped) = intra_story_repetition_lenient(&set)?;
    let dist2 = dist_n(&set, 2)?;
    let ent4 = ent_n(&set, 4)?;

    // Skeleton diversity: 0.0 when skeletons are absent or too short to form
    // a bigram anywhere (the no-skeleton ablation).
    let skel_set =
        StorySet::new(records.iter().map(|r| Story::from_tokens(r.skeleton.clone())).collect())?;
    let dist2_skeleton = match dist_n(&skel_set, 2) {
        Ok(v) => v,
        Err(Error::Degenerate(_)) => 0.0,
        Err(e) => return Err(e),
    };

    let (rouge1, rouge_l_score) = match references {
        Some(ref_path) => {
            let refs = read_reference_stories(ref_path)?;
            if refs.len() != records.len() {
                return Err(Error::data(format!(
                    "{} reference stories but {} generated records",
                    refs.len(),
                    records.len()
                )));
            }
            let mut r1 = 0.0;
            let mut rl = 0.0;
            for (cand, reference) in story_tokens.iter().zip(&refs) {
                r1 += rouge_1(cand, reference)?;
                rl += rouge_l(cand, reference)?;
            }
            let n = refs.len() as f64;
            (Some(r1 / n), Some(rl / n))
        }
        None => (None, None),
    };

    let ppl = if stage_path(dir, STAGE_SCORER).exists() {
        let scorer_ckpt = load_stage(dir, STAGE_SCORER)?;
        let (lm, vocab) = rebuild_lm(&scorer_ckpt)?;
        Some(text_perplexity(&set, &vocab, &lm)?)
    } else {
        None
    };

    Ok(MetricsReport { inter_s, intra_s, dist2, ent4, dist2_skeleton, rouge1, rouge_l: rouge_l_score, ppl })
}

/// References: either plain text (one story per line) or the same JSONL
/// format the generator writes, in which case the `story` field is used.
fn read_reference_stories(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let text = match serde_json::from_str::<serde_json::Value>(&line) {
            Ok(v) => v
                .get("story")
                .and_then(|s| s.as_str())
                .map(str::to_string)
                .unwrap_or_else(|| line.clone()),
            Err(_) => line.clone(),
        };
        out.push(tokenize(&text));
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(format!("{}: no reference stories", path.display())));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Inspection
// ---------------------------------------------------------------------------

/// Top words per topic from a trained topic model ("ntm" or "lda").
pub fn inspect_topics(dir: &Path, stage: &str, count: usize) -> Result<Vec<Vec<String>>> {
    let (beta, vocab) = match stage {
        STAGE_NTM => {
            let ckpt = load_stage(dir, STAGE_NTM)?;
            let (params, vocab) = rebuild_ntm(&ckpt)?;
            (compute_beta(&params), vocab)
        }
        STAGE_LDA => {
            let ckpt = load_stage(dir, STAGE_LDA)?;
            let (phi, vocab, _alpha) = lda_phi(&ckpt)?;
            (phi, vocab)
        }
        other => {
            return Err(Error::config(format!(
                "no topic model stage named {other:?} (expected ntm or lda)"
            )))
        }
    };
    Ok((0..beta.rows).map(|k| topic_top_words(&beta, &vocab, k, count)).collect())
}
