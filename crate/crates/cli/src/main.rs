use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use mulan_cli::commands::{self, EmbedModality, TaskKind};
use mulan_cli::config::RunConfig;
use mulan_core::corpus::synthetic::SyntheticSpec;

#[derive(Parser)]
#[command(
    name = "mulan",
    about = "Two-tower audio-text contrastive embedding toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted ground truth.
    Synth {
        /// Synthetic spec JSON file; defaults apply for missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory for WAVs, corpus, vocab, and task files.
        #[arg(long)]
        out: PathBuf,
        /// Held-out recordings (taken from the end); default: one quarter.
        #[arg(long)]
        eval_count: Option<usize>,
        /// Context window length T in frames used for duration bounds.
        #[arg(long, default_value_t = 100)]
        window_frames: usize,
        /// Override the spec seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a corpus.
    Train {
        /// Run config JSON (profile plus overrides); desk profile if absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Checkpoint + log directory.
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint written by the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write an embedding index for a corpus.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// audio (clip-level) or text (unique annotation strings).
        #[arg(long, default_value = "audio")]
        modality: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write a JSONL copy next to the binary index.
        #[arg(long)]
        jsonl: bool,
    },
    /// Rank an index against a text query.
    Retrieve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Run an evaluation protocol and write a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        task: PathBuf,
        /// tagging, probe, retrieval, or triplet.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Synth {
            spec,
            out,
            eval_count,
            window_frames,
            seed,
        } => {
            let mut spec: SyntheticSpec = match spec {
                Some(path) => serde_json::from_str(
                    &std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?,
                )?,
                None => SyntheticSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let eval_count = eval_count.unwrap_or(spec.num_recordings / 4);
            let outcome = commands::cmd_synth(&spec, window_frames, eval_count, &out)?;
            println!(
                "wrote {} recordings ({} eval) to {}",
                outcome.num_recordings,
                outcome.num_eval,
                outcome.out_dir.display()
            );
            println!("manifest digest {:08x}", outcome.manifest_digest);
        }
        Command::Train {
            config,
            corpus,
            vocab,
            out,
            resume,
            seed,
        } => {
            let mut config = match config {
                Some(path) => RunConfig::from_file(&path)?,
                None => RunConfig::desk(),
            };
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let outcome =
                commands::cmd_train(&config, &corpus, &vocab, &out, resume.as_deref())?;
            println!(
                "trained {} steps, final loss {:.6}",
                outcome.steps_run, outcome.final_loss
            );
            println!("checkpoint {}", outcome.final_checkpoint.display());
            println!("log {}", outcome.log_path.display());
        }
        Command::Embed {
            checkpoint,
            corpus,
            vocab,
            modality,
            out,
            jsonl,
        } => {
            let modality: EmbedModality = modality.parse()?;
            let index =
                commands::cmd_embed(&checkpoint, &corpus, &vocab, modality, &out, jsonl)?;
            println!("indexed {} embeddings of dimension {}", index.len(), index.dim());
        }
        Command::Retrieve {
            checkpoint,
            index,
            vocab,
            query,
            k,
        } => {
            let hits = commands::cmd_retrieve(&checkpoint, &index, &vocab, &query, k)?;
            for (id, score) in hits {
                println!("{score:.6}\t{id}");
            }
        }
        Command::Eval {
            checkpoint,
            corpus,
            vocab,
            task,
            kind,
            out,
        } => {
            let kind: TaskKind = kind.parse()?;
            let report = commands::cmd_eval(&checkpoint, &corpus, &vocab, &task, kind, &out)?;
            for (name, value) in &report.macros {
                println!("{name} {value:.6}");
            }
            println!("report {}", out.display());
        }
    }
    Ok(())
}
