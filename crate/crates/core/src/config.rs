//! Pipeline configuration: a flat UTF-8 `key=value` file (one pair per
//! line, `#` comments) layered over a named preset. Every stage of the
//! pipeline reads its hyperparameters from here, so a config file plus a
//! seed fully determines a run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ntm::NtmConfig;
use crate::sampler::LmConfig;
use crate::storygen::Seq2SeqConfig;
use crate::topicgen::{TargetMode, TopicGenConfig};

/// Where generated skeletons come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkeletonSource {
    /// Topic generator → word distribution → constrained LM sampler.
    Topnet,
    /// Same pipeline but the word distribution comes from LDA φ with a
    /// fold-in θ̂ instead of the neural topic model.
    TopnetLda,
    /// The N highest-probability words of p, in rank order.
    TopWords,
    /// N uniform draws (with replacement) from the topic vocabulary.
    Random,
    /// No skeleton: the story model sees the title only.
    None,
}

impl SkeletonSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            SkeletonSource::Topnet => "topnet",
            SkeletonSource::TopnetLda => "topnet_lda",
            SkeletonSource::TopWords => "top_words",
            SkeletonSource::Random => "random",
            SkeletonSource::None => "none",
        }
    }
}

impl std::str::FromStr for SkeletonSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topnet" => Ok(SkeletonSource::Topnet),
            "topnet_lda" => Ok(SkeletonSource::TopnetLda),
            "top_words" => Ok(SkeletonSource::TopWords),
            "random" => Ok(SkeletonSource::Random),
            "none" => Ok(SkeletonSource::None),
            other => Err(Error::config(format!(
                "unknown skeleton_source {other:?} \
                 (expected topnet, topnet_lda, top_words, random, or none)"
            ))),
        }
    }
}

impl fmt::Display for SkeletonSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Story corpus, one JSON record per line.
    pub data_stories: String,
    /// Pretrained word-embedding file; required by the topic generator.
    pub data_embeddings: Option<String>,
    pub embed_dim: usize,
    /// Topic-vocabulary cap (content stems).
    pub topic_vocab: usize,
    /// Generation-vocabulary cap (surface tokens incl. specials).
    pub gen_vocab: usize,

    /// Number of topics K.
    pub topics: usize,
    /// Skeleton length N.
    pub n: usize,
    /// Sampler rank cutoff N′ (N < N′).
    pub n_prime: usize,
    pub skeleton_source: SkeletonSource,
    pub seed: u64,

    pub ntm_hidden: usize,
    pub ntm_layers: usize,
    pub ntm_dropout: f64,
    pub ntm_epochs: usize,
    pub ntm_batch: usize,

    pub lda_alpha: f64,
    pub lda_eta: f64,
    pub lda_sweeps: usize,

    pub topicgen_hidden: usize,
    pub topicgen_lr: f64,
    pub topicgen_batch: usize,
    pub topicgen_dropout: f64,
    pub topicgen_epochs: usize,
    pub topicgen_target: TargetMode,

    pub sampler_embed: usize,
    pub sampler_state: usize,
    pub sampler_layers: usize,
    pub sampler_lr: f64,
    pub sampler_batch: usize,
    pub sampler_dropout: f64,
    pub sampler_epochs: usize,

    pub storygen_d_model: usize,
    pub storygen_heads: usize,
    pub storygen_layers: usize,
    pub storygen_d_ff: usize,
    pub storygen_max_len: usize,
    pub storygen_dropout: f64,
    pub storygen_label_smoothing: f64,
    pub storygen_warmup: usize,
    pub storygen_steps: usize,
    pub storygen_batch: usize,

    /// Skeleton sampling mode at generation time: greedy | stochastic.
    pub generate_sample_mode: String,
    /// Story decode mode: greedy | beam:<width>.
    pub generate_decode: String,
    pub generate_max_tokens: usize,
    /// LDA fold-in sweeps when skeleton_source = topnet_lda.
    pub fold_iters: usize,
}

impl PipelineConfig {
    /// Title-to-story defaults: K = 50, N = 10, N′ = 100.
    pub fn rocstories() -> Self {
        PipelineConfig {
            data_stories: "data/stories.jsonl".into(),
            data_embeddings: None,
            embed_dim: 300,
            topic_vocab: 2000,
            gen_vocab: 10000,
            topics: 50,
            n: 10,
            n_prime: 100,
            skeleton_source: SkeletonSource::Topnet,
            seed: 0,
            ntm_hidden: 256,
            ntm_layers: 2,
            ntm_dropout: 0.2,
            ntm_epochs: 30,
            ntm_batch: 32,
            lda_alpha: 0.1,
            lda_eta: 0.01,
            lda_sweeps: 200,
            topicgen_hidden: 512,
            topicgen_lr: 0.002,
            topicgen_batch: 128,
            topicgen_dropout: 0.2,
            topicgen_epochs: 50,
            topicgen_target: TargetMode::GOfMu,
            sampler_embed: 300,
            sampler_state: 512,
            sampler_layers: 3,
            sampler_lr: 0.001,
            sampler_batch: 20,
            sampler_dropout: 0.15,
            sampler_epochs: 10,
            storygen_d_model: 128,
            storygen_heads: 4,
            storygen_layers: 2,
            storygen_d_ff: 512,
            storygen_max_len: 256,
            storygen_dropout: 0.1,
            storygen_label_smoothing: 0.1,
            storygen_warmup: 400,
            storygen_steps: 2000,
            storygen_batch: 8,
            generate_sample_mode: "stochastic".into(),
            generate_decode: "greedy".into(),
            generate_max_tokens: 80,
            fold_iters: 20,
        }
    }

    /// Summary-expansion defaults: K = 80, N = 60, N′ = 200, longer output.
    pub fn cnndm() -> Self {
        PipelineConfig {
            topics: 80,
            n: 60,
            n_prime: 200,
            generate_max_tokens: 400,
            storygen_max_len: 768,
            ..PipelineConfig::rocstories()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "rocstories" => Ok(PipelineConfig::rocstories()),
            "cnndm" => Ok(PipelineConfig::cnndm()),
            other => Err(Error::config(format!(
                "unknown preset {other:?} (expected rocstories or cnndm)"
            ))),
        }
    }

    /// Parses a config file: the `preset` key (anywhere in the file) picks
    /// the base, every other key overrides one field. Unknown keys are
    /// config errors naming the offending line.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        let mut preset_name = "rocstories".to_string();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key == "preset" {
                preset_name = value;
            } else {
                entries.push((lineno + 1, key, value));
            }
        }
        let mut cfg = PipelineConfig::preset(&preset_name)?;
        for (lineno, key, value) in entries {
            cfg.apply(&key, &value).map_err(|e| {
                Error::config(format!("{}:{}: {e}", path.display(), lineno))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its flat key. Used by the file parser and by
    /// command-line overrides.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::config(format!("key {key}: cannot parse {value:?}"))
            })
        }
        match key {
            "data.stories" => self.data_stories = value.to_string(),
            "data.embeddings" => {
                self.data_embeddings =
                    if value.is_empty() { None } else { Some(value.to_string()) }
            }
            "data.embed_dim" => self.embed_dim = num(key, value)?,
            "vocab.topic" => self.topic_vocab = num(key, value)?,
            "vocab.generation" => self.gen_vocab = num(key, value)?,
            "topics" => self.topics = num(key, value)?,
            "n" => self.n = num(key, value)?,
            "n_prime" => self.n_prime = num(key, value)?,
            "skeleton_source" => self.skeleton_source = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "ntm.hidden" => self.ntm_hidden = num(key, value)?,
            "ntm.layers" => self.ntm_layers = num(key, value)?,
            "ntm.dropout" => self.ntm_dropout = num(key, value)?,
            "ntm.epochs" => self.ntm_epochs = num(key, value)?,
            "ntm.batch" => self.ntm_batch = num(key, value)?,
            "lda.alpha" => self.lda_alpha = num(key, value)?,
            "lda.eta" => self.lda_eta = num(key, value)?,
            "lda.sweeps" => self.lda_sweeps = num(key, value)?,
            "topicgen.hidden" => self.topicgen_hidden = num(key, value)?,
            "topicgen.lr" => self.topicgen_lr = num(key, value)?,
            "topicgen.batch" => self.topicgen_batch = num(key, value)?,
            "topicgen.dropout" => self.topicgen_dropout = num(key, value)?,
            "topicgen.epochs" => self.topicgen_epochs = num(key, value)?,
            "topicgen.target" => self.topicgen_target = value.parse()?,
            "sampler.embed" => self.sampler_embed = num(key, value)?,
            "sampler.state" => self.sampler_state = num(key, value)?,
            "sampler.layers" => self.sampler_layers = num(key, value)?,
            "sampler.lr" => self.sampler_lr = num(key, value)?,
            "sampler.batch" => self.sampler_batch = num(key, value)?,
            "sampler.dropout" => self.sampler_dropout = num(key, value)?,
            "sampler.epochs" => self.sampler_epochs = num(key, value)?,
            "storygen.d_model" => self.storygen_d_model = num(key, value)?,
            "storygen.heads" => self.storygen_heads = num(key, value)?,
            "storygen.layers" => self.storygen_layers = num(key, value)?,
            "storygen.d_ff" => self.storygen_d_ff = num(key, value)?,
            "storygen.max_len" => self.storygen_max_len = num(key, value)?,
            "storygen.dropout" => self.storygen_dropout = num(key, value)?,
            "storygen.label_smoothing" => self.storygen_label_smoothing = num(key, value)?,
            "storygen.warmup" => self.storygen_warmup = num(key, value)?,
            "storygen.steps" => self.storygen_steps = num(key, value)?,
            "storygen.batch" => self.storygen_batch = num(key, value)?,
            "generate.sample_mode" => self.generate_sample_mode = value.to_string(),
            "generate.decode" => self.generate_decode = value.to_string(),
            "generate.max_tokens" => self.generate_max_tokens = num(key, value)?,
            "fold_iters" => self.fold_iters = num(key, value)?,
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics == 0 {
            return Err(Error::config("topics must be >= 1"));
        }
        if self.n == 0 {
            return Err(Error::config("n must be >= 1"));
        }
        if self.n >= self.n_prime {
            return Err(Error::config(format!(
                "need n < n_prime, got n={} n_prime={}",
                self.n, self.n_prime
            )));
        }
        if self.n_prime > self.topic_vocab {
            return Err(Error::config(format!(
                "n_prime {} exceeds the topic vocabulary cap {}",
                self.n_prime, self.topic_vocab
            )));
        }
        // these parse lazily at generate time; fail fast here instead
        self.generate_sample_mode.parse::<crate::sampler::SampleMode>()?;
        self.generate_decode.parse::<crate::storygen::DecodeMode>()?;
        Ok(())
    }

    /// The full configuration as the flat string map stored inside every
    /// checkpoint, so any run can be reconstructed from its artifacts.
    pub fn to_flat(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("data.stories", self.data_stories.clone());
        put("data.embeddings", self.data_embeddings.clone().unwrap_or_default());
        put("data.embed_dim", self.embed_dim.to_string());
        put("vocab.topic", self.topic_vocab.to_string());
        put("vocab.generation", self.gen_vocab.to_string());
        put("topics", self.topics.to_string());
        put("n", self.n.to_string());
        put("n_prime", self.n_prime.to_string());
        put("skeleton_source", self.skeleton_source.to_string());
        put("seed", self.seed.to_string());
        put("ntm.hidden", self.ntm_hidden.to_string());
        put("ntm.layers", self.ntm_layers.to_string());
        put("ntm.dropout", self.ntm_dropout.to_string());
        put("ntm.epochs", self.ntm_epochs.to_string());
        put("ntm.batch", self.ntm_batch.to_string());
        put("lda.alpha", self.lda_alpha.to_string());
        put("lda.eta", self.lda_eta.to_string());
        put("lda.sweeps", self.lda_sweeps.to_string());
        put("topicgen.hidden", self.topicgen_hidden.to_string());
        put("topicgen.lr", self.topicgen_lr.to_string());
        put("topicgen.batch", self.topicgen_batch.to_string());
        put("topicgen.dropout", self.topicgen_dropout.to_string());
        put("topicgen.epochs", self.topicgen_epochs.to_string());
        put("topicgen.target", self.topicgen_target.as_str().to_string());
        put("sampler.embed", self.sampler_embed.to_string());
        put("sampler.state", self.sampler_state.to_string());
        put("sampler.layers", self.sampler_layers.to_string());
        put("sampler.lr", self.sampler_lr.to_string());
        put("sampler.batch", self.sampler_batch.to_string());
        put("sampler.dropout", self.sampler_dropout.to_string());
        put("sampler.epochs", self.sampler_epochs.to_string());
        put("storygen.d_model", self.storygen_d_model.to_string());
        put("storygen.heads", self.storygen_heads.to_string());
        put("storygen.layers", self.storygen_layers.to_string());
        put("storygen.d_ff", self.storygen_d_ff.to_string());
        put("storygen.max_len", self.storygen_max_len.to_string());
        put("storygen.dropout", self.storygen_dropout.to_string());
        put("storygen.label_smoothing", self.storygen_label_smoothing.to_string());
        put("storygen.warmup", self.storygen_warmup.to_string());
        put("storygen.steps", self.storygen_steps.to_string());
        put("storygen.batch", self.storygen_batch.to_string());
        put("generate.sample_mode", self.generate_sample_mode.clone());
        put("generate.decode", self.generate_decode.clone());
        put("generate.max_tokens", self.generate_max_tokens.to_string());
        put("fold_iters", self.fold_iters.to_string());
        m
    }

    pub fn ntm_config(&self, vocab_size: usize) -> NtmConfig {
        NtmConfig {
            topics: self.topics,
            vocab_size,
            embed_dim: self.embed_dim,
            hidden: self.ntm_hidden,
            layers: self.ntm_layers,
            dropout: self.ntm_dropout,
            seed: self.seed,
        }
    }

    pub fn topicgen_config(&self) -> TopicGenConfig {
        TopicGenConfig {
            topics: self.topics,
            embed_dim: self.embed_dim,
            hidden: self.topicgen_hidden,
            dropout: self.topicgen_dropout,
            lr: self.topicgen_lr,
            batch: self.topicgen_batch,
            epochs: self.topicgen_epochs,
            seed: self.seed.wrapping_add(1),
        }
    }

    pub fn sampler_config(&self, vocab_size: usize) -> LmConfig {
        LmConfig {
            vocab_size,
            embed_dim: self.sampler_embed,
            state: self.sampler_state,
            layers: self.sampler_layers,
            lr: self.sampler_lr,
            batch: self.sampler_batch,
            dropout: self.sampler_dropout,
            epochs: self.sampler_epochs,
            seed: self.seed.wrapping_add(2),
        }
    }

    pub fn scorer_config(&self, vocab_size: usize) -> LmConfig {
        LmConfig {
            seed: self.seed.wrapping_add(4),
            ..self.sampler_config(vocab_size)
        }
    }

    pub fn storygen_config(&self, vocab_size: usize) -> Seq2SeqConfig {
        Seq2SeqConfig {
            vocab_size,
            d_model: self.storygen_d_model,
            n_heads: self.storygen_heads,
            n_layers: self.storygen_layers,
            d_ff: self.storygen_d_ff,
            max_len: self.storygen_max_len,
            dropout: self.storygen_dropout,
            label_smoothing: self.storygen_label_smoothing,
            warmup_steps: self.storygen_warmup,
            seed: self.seed.wrapping_add(3),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_cfg(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn rocstories_preset_defaults() {
        let c = PipelineConfig::rocstories();
        assert_eq!(c.topics, 50);
        assert_eq!(c.n, 10);
        assert_eq!(c.n_prime, 100);
        c.validate().unwrap();
    }

    #[test]
    fn cnndm_preset_defaults() {
        let c = PipelineConfig::cnndm();
        assert_eq!(c.topics, 80);
        assert_eq!(c.n, 60);
        assert_eq!(c.n_prime, 200);
        c.validate().unwrap();
    }

    #[test]
    fn file_overrides_and_comments() {
        let f = write_cfg(
            "# pipeline settings\n\
             preset=rocstories\n\
             \n\
             topics = 7\n\
             n=3\n\
             n_prime = 12\n\
             skeleton_source=top_words\n\
             data.embeddings = vectors.txt\n",
        );
        let c = PipelineConfig::from_file(f.path()).unwrap();
        assert_eq!(c.topics, 7);
        assert_eq!(c.n, 3);
        assert_eq!(c.n_prime, 12);
        assert_eq!(c.skeleton_source, SkeletonSource::TopWords);
        assert_eq!(c.data_embeddings.as_deref(), Some("vectors.txt"));
        // untouched fields keep preset values
        assert_eq!(c.topicgen_lr, 0.002);
    }

    #[test]
    fn unknown_key_is_an_error_with_line() {
        let f = write_cfg("topics=5\nwibble=1\n");
        let err = PipelineConfig::from_file(f.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("wibble"), "{msg}");
        assert!(msg.contains(":2"), "{msg}");
    }

    #[test]
    fn malformed_line_is_an_error() {
        let f = write_cfg("topics\n");
        assert!(PipelineConfig::from_file(f.path()).is_err());
    }

    #[test]
    fn bad_number_is_an_error() {
        let f = write_cfg("topics=banana\n");
        assert!(PipelineConfig::from_file(f.path()).is_err());
    }

    #[test]
    fn n_constraints_are_validated() {
        let f = write_cfg("n=10\nn_prime=10\n");
        assert!(PipelineConfig::from_file(f.path()).is_err());
        let mut c = PipelineConfig::rocstories();
        c.n_prime = c.topic_vocab + 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn flat_map_round_trips_through_apply() {
        let mut base = PipelineConfig::rocstories();
        base.topics = 9;
        base.generate_decode = "beam:4".into();
        base.data_embeddings = Some("e.txt".into());
        let flat = base.to_flat();
        let mut rebuilt = PipelineConfig::rocstories();
        for (k, v) in &flat {
            rebuilt.apply(k, v).unwrap();
        }
        assert_eq!(rebuilt.topics, 9);
        assert_eq!(rebuilt.generate_decode, "beam:4");
        assert_eq!(rebuilt.to_flat(), flat);
    }

    #[test]
    fn bad_modes_fail_validation() {
        let mut c = PipelineConfig::rocstories();
        c.generate_sample_mode = "sometimes".into();
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::rocstories();
        c.generate_decode = "beam:0".into();
        assert!(c.validate().is_err());
    }
}
