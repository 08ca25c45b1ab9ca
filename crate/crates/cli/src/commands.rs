//! Command implementations behind the CLI surface.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mulan_core::corpus::synthetic::{
    concept_pool, generate_synthetic, labeled_filter_sentences, SyntheticCorpus, SyntheticSpec,
};
use mulan_core::corpus::{load_corpus, save_corpus, Corpus, SourceType};
use mulan_core::dsp::wav::write_wav;
use mulan_core::error::{Error, Result};
use mulan_core::eval::{
    linear_probe, retrieval_eval, retrieve, tagging_task_from_corpus, triplet_accuracy,
    zero_shot_tagging, ClipEmbeddings, EvalReport, Model, ProbeConfig, RetrievalQuery,
    RetrievalTask, Split, TaggingTask, Triplet, TripletTask,
};
use mulan_core::index::EmbeddingIndex;
use mulan_core::nn::checkpoint::Checkpoint;
use mulan_core::text::{save_labeled_tsv, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::train;

/// File names emitted by `synth` into its output directory.
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const TRAIN_CORPUS_FILE: &str = "train.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const FILTER_TSV_FILE: &str = "filter_train.tsv";
pub const TAGGING_FILE: &str = "tagging.jsonl";
pub const RETRIEVAL_FILE: &str = "retrieval.jsonl";
pub const TRIPLET_FILE: &str = "triplets.jsonl";

pub struct SynthOutcome {
    pub out_dir: PathBuf,
    pub manifest_digest: u32,
    pub num_recordings: usize,
    pub num_eval: usize,
}

/// Generate a synthetic corpus directory: WAVs, corpus JSONL, vocabulary,
/// filter-training TSV, and the three evaluation task files. The last
/// `eval_count` recordings form the held-out split.
pub fn cmd_synth(spec: &SyntheticSpec, window_frames: usize, eval_count: usize, out_dir: &Path) -> Result<SynthOutcome> {
    spec.validate()?;
    if eval_count >= spec.num_recordings {
        return Err(Error::Config(format!(
            "eval_count {eval_count} must leave at least one training recording of {}",
            spec.num_recordings
        )));
    }
    let dsp = mulan_core::dsp::SpectrogramConfig {
        mel_channels: 32,
        ..Default::default()
    };
    let synth = generate_synthetic(spec, &dsp, window_frames)?;
    write_synth_outputs(&synth, spec, eval_count, out_dir)
}

/// Same as [`cmd_synth`] but with an explicit DSP config (the trainer's
/// spectrogram settings must match the generator's band planting).
pub fn cmd_synth_with_dsp(
    spec: &SyntheticSpec,
    dsp: &mulan_core::dsp::SpectrogramConfig,
    window_frames: usize,
    eval_count: usize,
    out_dir: &Path,
) -> Result<SynthOutcome> {
    spec.validate()?;
    if eval_count >= spec.num_recordings {
        return Err(Error::Config(format!(
            "eval_count {eval_count} must leave at least one training recording of {}",
            spec.num_recordings
        )));
    }
    let synth = generate_synthetic(spec, dsp, window_frames)?;
    write_synth_outputs(&synth, spec, eval_count, out_dir)
}

fn write_synth_outputs(
    synth: &SyntheticCorpus,
    spec: &SyntheticSpec,
    eval_count: usize,
    out_dir: &Path,
) -> Result<SynthOutcome> {
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir)?;

    // WAVs plus a corpus whose recordings point at them
    let mut recordings = Vec::with_capacity(synth.corpus.len());
    for rec in synth.corpus.recordings() {
        let rel = format!("audio/{}.wav", rec.id);
        let waveform = synth.corpus.waveform(&rec.id)?;
        write_wav(&out_dir.join(&rel), &waveform)?;
        let mut rec = rec.clone();
        rec.audio = Some(rel);
        recordings.push(rec);
    }
    let corpus = Corpus::new(recordings)?.with_base_dir(out_dir);
    save_corpus(&corpus, &out_dir.join(CORPUS_FILE))?;
    let split_at = synth.corpus.len() - eval_count;
    let train_corpus =
        Corpus::new(corpus.recordings()[..split_at].to_vec())?.with_base_dir(out_dir);
    save_corpus(&train_corpus, &out_dir.join(TRAIN_CORPUS_FILE))?;
    synth.vocab.save(&out_dir.join(VOCAB_FILE))?;

    let labeled = labeled_filter_sentences(spec, 200, spec.seed ^ 0x66696c74);
    save_labeled_tsv(&out_dir.join(FILTER_TSV_FILE), &labeled)?;

    let split_at = synth.corpus.len() - eval_count;
    let tagging = tagging_task_from_corpus(&corpus, |i, _| i >= split_at)?;
    tagging.save(&out_dir.join(TAGGING_FILE))?;

    let eval_ids: Vec<String> = corpus.recordings()[split_at..]
        .iter()
        .map(|r| r.id.clone())
        .collect();
    let retrieval = build_retrieval_task(synth, spec, &corpus, &eval_ids)?;
    retrieval.save(&out_dir.join(RETRIEVAL_FILE))?;

    let triplets = build_triplet_task(spec, 600, spec.seed ^ 0x74726970)?;
    triplets.save(&out_dir.join(TRIPLET_FILE))?;

    let manifest_digest = crc32fast::hash(&std::fs::read(out_dir.join(CORPUS_FILE))?);
    Ok(SynthOutcome {
        out_dir: out_dir.to_path_buf(),
        manifest_digest,
        num_recordings: corpus.len(),
        num_eval: eval_count,
    })
}

/// One concept-phrase query per concept; targets are the eval recordings
/// carrying that concept, candidates are all eval recordings.
pub fn build_retrieval_task(
    synth: &SyntheticCorpus,
    spec: &SyntheticSpec,
    corpus: &Corpus,
    eval_ids: &[String],
) -> Result<RetrievalTask> {
    let mut queries = Vec::new();
    for (k, name) in synth.concept_names.iter().enumerate() {
        let sf = concept_pool(SourceType::SF, k, spec.words_per_pool);
        let lf = concept_pool(SourceType::LF, k, spec.words_per_pool);
        let query = format!("{name} {} {}", sf[1], lf[0]);
        let targets: Vec<String> = eval_ids
            .iter()
            .filter(|id| {
                corpus
                    .get(id)
                    .and_then(|r| r.concepts.as_ref())
                    .map(|cs| cs.contains(&(k as u32)))
                    .unwrap_or(false)
            })
            .cloned()
            .collect();
        if targets.is_empty() {
            continue; // concept absent from the eval split
        }
        queries.push(RetrievalQuery { query, targets });
    }
    let task = RetrievalTask {
        pool: eval_ids.to_vec(),
        queries,
    };
    task.validate()?;
    Ok(task)
}

/// Concept-consistent triplets with no lexical overlap: the anchor draws
/// from the concept's playlist pool, pos/neg from long-form pools, so an
/// untrained model sees three unrelated word sets and sits at chance.
pub fn build_triplet_task(spec: &SyntheticSpec, count: usize, seed: u64) -> Result<TripletTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phrase = |rng: &mut ChaCha8Rng, pool: &[String]| -> String {
        let len = rng.gen_range(3..=5);
        (0..len)
            .map(|_| pool[rng.gen_range(0..pool.len())].clone())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut triplets = Vec::with_capacity(count);
    while triplets.len() < count {
        let c = rng.gen_range(0..spec.num_concepts);
        let other = rng.gen_range(0..spec.num_concepts);
        if other == c {
            continue;
        }
        let anchor_pool = concept_pool(SourceType::PL, c, spec.words_per_pool);
        let pos_pool = concept_pool(SourceType::LF, c, spec.words_per_pool);
        let neg_pool = concept_pool(SourceType::LF, other, spec.words_per_pool);
        triplets.push(Triplet {
            anchor: phrase(&mut rng, &anchor_pool),
            pos: phrase(&mut rng, &pos_pool),
            neg: phrase(&mut rng, &neg_pool),
        });
    }
    let task = TripletTask { triplets };
    task.validate()?;
    Ok(task)
}

pub fn cmd_train(
    config: &RunConfig,
    corpus_path: &Path,
    vocab_path: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<train::TrainOutcome> {
    config.validate()?;
    let corpus = load_corpus(corpus_path)?;
    let vocab = Vocabulary::load(vocab_path)?;
    train::train(config, &corpus, &vocab, out_dir, resume)
}

/// A checkpoint plus the digests derived from its bytes.
pub struct LoadedModel {
    pub checkpoint: Checkpoint,
    pub config: RunConfig,
    pub checkpoint_digest: u32,
    pub config_digest: u32,
}

pub fn load_model(checkpoint_path: &Path) -> Result<LoadedModel> {
    let bytes = std::fs::read(checkpoint_path)?;
    let checkpoint = Checkpoint::from_bytes(&bytes)?;
    let config = RunConfig::from_json(&checkpoint.config_json)?;
    let config_digest = crc32fast::hash(checkpoint.config_json.as_bytes());
    Ok(LoadedModel {
        checkpoint,
        config,
        checkpoint_digest: crc32fast::hash(&bytes),
        config_digest,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedModality {
    Audio,
    Text,
}

impl std::str::FromStr for EmbedModality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio" => Ok(EmbedModality::Audio),
            "text" => Ok(EmbedModality::Text),
            other => Err(Error::Argument(format!(
                "modality must be audio or text, got {other:?}"
            ))),
        }
    }
}

/// Embed every recording (clip-level) or every unique annotation string into
/// an index file tied to the checkpoint digest.
pub fn cmd_embed(
    checkpoint_path: &Path,
    corpus_path: &Path,
    vocab_path: &Path,
    modality: EmbedModality,
    out_path: &Path,
    also_jsonl: bool,
) -> Result<EmbeddingIndex> {
    let loaded = load_model(checkpoint_path)?;
    let corpus = load_corpus(corpus_path)?;
    let vocab = Vocabulary::load(vocab_path)?;
    let model = Model {
        params: &loaded.checkpoint.params,
        audio_cfg: &loaded.config.audio_tower,
        text_cfg: &loaded.config.text_tower,
        vocab: &vocab,
        dsp: &loaded.config.spectrogram,
    };
    let d = loaded.config.audio_tower.transformer.embed_dim;
    let mut index = EmbeddingIndex::new(d, loaded.checkpoint_digest);
    match modality {
        EmbedModality::Audio => {
            for rec in corpus.recordings() {
                let (emb, _) = model.embed_clip_by_id(&corpus, &rec.id)?;
                index.insert(&rec.id, &emb)?;
            }
        }
        EmbedModality::Text => {
            let mut seen = std::collections::HashSet::new();
            for rec in corpus.recordings() {
                for ann in &rec.annotations {
                    if seen.insert(ann.text.clone()) {
                        let emb = model.embed_text_str(&ann.text)?;
                        index.insert(&ann.text, &emb)?;
                    }
                }
            }
        }
    }
    index.save(out_path)?;
    if also_jsonl {
        index.save_jsonl(&out_path.with_extension("jsonl"))?;
    }
    Ok(index)
}

/// Rank the index against a free-text query; returns (id, score) rows.
pub fn cmd_retrieve(
    checkpoint_path: &Path,
    index_path: &Path,
    vocab_path: &Path,
    query: &str,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let loaded = load_model(checkpoint_path)?;
    let vocab = Vocabulary::load(vocab_path)?;
    let index = EmbeddingIndex::load(index_path)?;
    if index.dim() != loaded.config.text_tower.transformer.embed_dim {
        return Err(Error::Shape(format!(
            "index dimension {} does not match model dimension {}",
            index.dim(),
            loaded.config.text_tower.transformer.embed_dim
        )));
    }
    let model = Model {
        params: &loaded.checkpoint.params,
        audio_cfg: &loaded.config.audio_tower,
        text_cfg: &loaded.config.text_tower,
        vocab: &vocab,
        dsp: &loaded.config.spectrogram,
    };
    retrieve(&model, &index, query, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Tagging,
    Probe,
    Retrieval,
    Triplet,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tagging" => Ok(TaskKind::Tagging),
            "probe" => Ok(TaskKind::Probe),
            "retrieval" => Ok(TaskKind::Retrieval),
            "triplet" => Ok(TaskKind::Triplet),
            other => Err(Error::Argument(format!(
                "task kind must be tagging, probe, retrieval, or triplet; got {other:?}"
            ))),
        }
    }
}

/// Run one evaluation protocol and write its JSON report.
pub fn cmd_eval(
    checkpoint_path: &Path,
    corpus_path: &Path,
    vocab_path: &Path,
    task_path: &Path,
    kind: TaskKind,
    out_path: &Path,
) -> Result<EvalReport> {
    let loaded = load_model(checkpoint_path)?;
    let corpus = load_corpus(corpus_path)?;
    let vocab = Vocabulary::load(vocab_path)?;
    let model = Model {
        params: &loaded.checkpoint.params,
        audio_cfg: &loaded.config.audio_tower,
        text_cfg: &loaded.config.text_tower,
        vocab: &vocab,
        dsp: &loaded.config.spectrogram,
    };
    let report = evaluate(&model, &corpus, task_path, kind, loaded.config_digest, loaded.checkpoint_digest)?;
    report.save(out_path)?;
    Ok(report)
}

/// Protocol dispatch shared by the CLI and the test harnesses.
pub fn evaluate(
    model: &Model<'_>,
    corpus: &Corpus,
    task_path: &Path,
    kind: TaskKind,
    config_digest: u32,
    checkpoint_digest: u32,
) -> Result<EvalReport> {
    match kind {
        TaskKind::Tagging => {
            let task = TaggingTask::load(task_path)?;
            let ids: Vec<&str> = task
                .split_clips(Split::Eval)
                .map(|c| c.clip_id.as_str())
                .collect();
            let clips = ClipEmbeddings::compute(model, corpus, ids)?;
            let outcome = zero_shot_tagging(model, &task, &clips)?;
            let mut report = EvalReport::new("tagging", config_digest, checkpoint_digest);
            report.macros.insert("macro_auc".to_string(), outcome.macro_auc);
            report.per_item = outcome.per_tag_auc;
            for tag in outcome.skipped_tags {
                report.notes.push(format!("tag {tag:?} skipped: single class"));
            }
            for clip in outcome.padded_clips {
                report.notes.push(format!("clip {clip:?} used the padded path"));
            }
            Ok(report)
        }
        TaskKind::Probe => {
            let task = TaggingTask::load(task_path)?;
            let ids: Vec<&str> = task.clips.iter().map(|c| c.clip_id.as_str()).collect();
            let clips = ClipEmbeddings::compute(model, corpus, ids)?;
            let outcome = linear_probe(&task, &clips, &ProbeConfig::default())?;
            let mut report = EvalReport::new("probe", config_digest, checkpoint_digest);
            report.macros.insert("macro_auc".to_string(), outcome.macro_auc);
            report.per_item = outcome.per_tag_auc;
            for tag in outcome.skipped_tags {
                report.notes.push(format!("tag {tag:?} skipped: single class"));
            }
            Ok(report)
        }
        TaskKind::Retrieval => {
            let task = RetrievalTask::load(task_path)?;
            let ids: Vec<&str> = task.pool.iter().map(String::as_str).collect();
            let clips = ClipEmbeddings::compute(model, corpus, ids)?;
            let outcome = retrieval_eval(model, &task, &clips)?;
            let mut report = EvalReport::new("retrieval", config_digest, checkpoint_digest);
            report
                .macros
                .insert("map".to_string(), outcome.mean_average_precision);
            report.macros.insert("macro_auc".to_string(), outcome.macro_auc);
            report.per_item = outcome.per_query_ap;
            Ok(report)
        }
        TaskKind::Triplet => {
            let task = TripletTask::load(task_path)?;
            let accuracy = triplet_accuracy(model, &task)?;
            let mut report = EvalReport::new("triplet", config_digest, checkpoint_digest);
            report.macros.insert("accuracy".to_string(), accuracy);
            report.per_item = BTreeMap::new();
            Ok(report)
        }
    }
}
