//! `fabula` — train, generate, and evaluate the topic-guided story pipeline.
//!
//! One subcommand per pipeline stage. Every run is deterministic for a fixed
//! config, seed, and input; checkpoints record the ids of the upstream
//! checkpoints they were trained against, and `generate` refuses to mix
//! stages from different training runs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 missing or mismatched
//! checkpoint, 4 data/model error.

use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use fabula_core::config::PipelineConfig;
use fabula_core::pipeline::{
    inspect_topics, run_evaluate, run_generate, train_lda_stage, train_ntm_stage,
    train_sampler_stage, train_storygen_stage, train_topicgen_stage, write_generations,
    StageReport,
};
use fabula_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fabula",
    version,
    about = "Topic-guided story generation: topic model, skeleton sampler, seq2seq generator"
)]
struct Cli {
    /// Flat key=value config file. Without it, a builtin preset is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Builtin preset when no --config is given: rocstories | cnndm.
    #[arg(long, global = true, default_value = "rocstories")]
    preset: String,

    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory holding one <stage>.ckpt file per trained stage.
    #[arg(long, global = true, default_value = "checkpoints")]
    checkpoint_dir: PathBuf,

    /// Skeleton source: topnet | topnet_lda | top_words | random | none.
    #[arg(long, global = true)]
    skeleton_source: Option<String>,

    /// Skeleton length N.
    #[arg(long, global = true)]
    n: Option<usize>,

    /// Sampler rank cutoff N' (must exceed N).
    #[arg(long, global = true)]
    n_prime: Option<usize>,

    /// Skeleton sampling mode: greedy | stochastic.
    #[arg(long, global = true)]
    mode: Option<String>,

    /// Story beam width; 0 selects greedy decoding.
    #[arg(long, global = true)]
    beam: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the neural variational topic model over story bags of words.
    TrainNtm,
    /// Train the collapsed-Gibbs LDA baseline topic model.
    TrainLda,
    /// Train the title-to-topic-mixture predictor (requires the ntm
    /// checkpoint and a word-vector file).
    TrainTopicgen,
    /// Train the skeleton language model over story content stems; with
    /// --surface, train the fluency scorer over full story token streams
    /// instead.
    TrainSampler {
        #[arg(long)]
        surface: bool,
    },
    /// Train the encoder-decoder story generator on (title ⊕ skeleton,
    /// story) pairs built with the configured skeleton source.
    TrainStorygen,
    /// Generate a skeleton and story for one title or a file of titles.
    Generate {
        /// A single title.
        #[arg(long, conflicts_with = "input")]
        title: Option<String>,
        /// File with one title per line.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Write JSONL records here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a generated JSONL file: diversity and repetition always,
    /// ROUGE with --references, perplexity when a scorer checkpoint exists.
    Evaluate {
        /// JSONL produced by `generate`.
        #[arg(long)]
        generated: PathBuf,
        /// Reference stories: plain text one per line, or JSONL with a
        /// `story` field; must align line-for-line with --generated.
        #[arg(long)]
        references: Option<PathBuf>,
        /// Write the JSON report here as well as to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the highest-probability words of each topic.
    InspectTopics {
        /// Which topic model to inspect: ntm | lda.
        #[arg(long, default_value = "ntm")]
        stage: String,
        /// Words per topic.
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::MissingCheckpoint { .. } | Error::ChainMismatch(_) => 3,
        _ => 4,
    }
}

fn build_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::preset(&cli.preset)?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(src) = &cli.skeleton_source {
        cfg.skeleton_source = src.parse()?;
    }
    if let Some(n) = cli.n {
        cfg.n = n;
    }
    if let Some(np) = cli.n_prime {
        cfg.n_prime = np;
    }
    if let Some(mode) = &cli.mode {
        // Validate eagerly so a typo fails before any training happens.
        let _: fabula_core::sampler::SampleMode = mode.parse()?;
        cfg.generate_sample_mode = mode.clone();
    }
    if let Some(beam) = cli.beam {
        cfg.generate_decode =
            if beam == 0 { "greedy".to_string() } else { format!("beam:{beam}") };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(report: &StageReport) {
    println!("wrote {} (checkpoint {})", report.path.display(), &report.id[..12.min(report.id.len())]);
    for note in &report.notes {
        println!("  {note}");
    }
}

fn read_titles(path: &Path) -> Result<Vec<String>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut titles = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            titles.push(trimmed.to_string());
        }
    }
    if titles.is_empty() {
        return Err(Error::EmptyInput(format!("{}: no titles", path.display())));
    }
    Ok(titles)
}

fn read_title_from_stdin() -> Result<String> {
    let mut buf = String::new();
    std::io::stdin()
        .read_to_string(&mut buf)
        .map_err(|e| Error::io(PathBuf::from("<stdin>"), e))?;
    let title = buf.trim().to_string();
    if title.is_empty() {
        return Err(Error::EmptyInput("no title on stdin".into()));
    }
    Ok(title)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = build_config(cli)?;
    let dir = cli.checkpoint_dir.as_path();
    match &cli.command {
        Command::TrainNtm => print_report(&train_ntm_stage(&cfg, dir)?),
        Command::TrainLda => print_report(&train_lda_stage(&cfg, dir)?),
        Command::TrainTopicgen => print_report(&train_topicgen_stage(&cfg, dir)?),
        Command::TrainSampler { surface } => {
            print_report(&train_sampler_stage(&cfg, dir, *surface)?)
        }
        Command::TrainStorygen => print_report(&train_storygen_stage(&cfg, dir)?),
        Command::Generate { title, input, output } => {
            let titles = match (title, input) {
                (Some(t), None) => vec![t.clone()],
                (None, Some(path)) => read_titles(path)?,
                (None, None) => vec![read_title_from_stdin()?],
                (Some(_), Some(_)) => unreachable!("clap forbids --title with --input"),
            };
            let records = run_generate(&titles, &cfg, dir)?;
            match output {
                Some(path) => {
                    write_generations(path, &records)?;
                    println!("wrote {} records to {}", records.len(), path.display());
                }
                None => {
                    for rec in &records {
                        let line = serde_json::to_string(rec)
                            .map_err(|e| Error::data(format!("serializing record: {e}")))?;
                        println!("{line}");
                    }
                }
            }
        }
        Command::Evaluate { generated, references, output } => {
            let report = run_evaluate(generated, references.as_deref(), dir)?;
            let json = serde_json::to_value(&report)
                .map_err(|e| Error::data(format!("serializing report: {e}")))?;
            // Flat key=value lines for the eyeball, one JSON object for machines.
            if let Some(obj) = json.as_object() {
                for (k, v) in obj {
                    println!("{k}={v}");
                }
            }
            let line = serde_json::to_string(&json)
                .map_err(|e| Error::data(format!("serializing report: {e}")))?;
            println!("{line}");
            if let Some(path) = output {
                std::fs::write(path, format!("{line}\n")).map_err(|e| Error::io(path, e))?;
            }
        }
        Command::InspectTopics { stage, count } => {
            for (k, words) in inspect_topics(dir, stage, *count)?.iter().enumerate() {
                println!("topic {k}: {}", words.join(" "));
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
