//! The four evaluation protocols: zero-shot tagging, linear probe,
//! text-query retrieval, and text triplet classification.

use std::collections::{BTreeMap, HashMap};

use crate::corpus::types::Corpus;
use crate::dsp::spectrogram::{pad_or_trim_to_window, ContextWindow, SpectrogramConfig};
use crate::dsp::{compute_log_mel, extract_window};
use crate::error::{Error, Result};
use crate::eval::metrics::{auc_binary, auc_roc_class_balanced, average_precision};
use crate::eval::tasks::{RetrievalTask, Split, TaggingTask, TripletTask};
use crate::index::EmbeddingIndex;
use crate::nn::ParameterStore;
use crate::text::tokenizer::tokenize;
use crate::text::vocab::Vocabulary;
use crate::towers::{
    embed_clip, embed_text, AudioTowerConfig, Embedding, TextTowerConfig,
};

/// Everything needed to embed audio and text with one trained model.
pub struct Model<'a> {
    pub params: &'a ParameterStore,
    pub audio_cfg: &'a AudioTowerConfig,
    pub text_cfg: &'a TextTowerConfig,
    pub vocab: &'a Vocabulary,
    pub dsp: &'a SpectrogramConfig,
}

impl Model<'_> {
    pub fn embed_text_str(&self, text: &str) -> Result<Embedding> {
        let tokens = tokenize(text, self.vocab, self.text_cfg.max_positions)?;
        embed_text(self.params, self.text_cfg, &tokens)
    }

    /// Split a clip into non-overlapping T-frame segments; a shorter-than-T
    /// clip or trailing remainder becomes one right-padded segment.
    pub fn clip_segments(&self, corpus: &Corpus, id: &str) -> Result<(Vec<ContextWindow>, bool)> {
        let waveform = corpus.waveform(id)?;
        let spec = compute_log_mel(&waveform, self.dsp)?;
        let t = self.audio_cfg.window_frames;
        let full = spec.num_frames() / t;
        let tail = spec.num_frames() % t;
        let mut segments = Vec::new();
        for k in 0..full {
            segments.push(extract_window(&spec, id, k * t, t)?);
        }
        let mut padded = false;
        if tail > 0 {
            let rest = spec.slice_frames(full * t, tail)?;
            segments.push(pad_or_trim_to_window(&rest, id, t)?);
            padded = true;
        }
        Ok((segments, padded))
    }

    pub fn embed_clip_by_id(&self, corpus: &Corpus, id: &str) -> Result<(Embedding, bool)> {
        let (segments, padded) = self.clip_segments(corpus, id)?;
        Ok((embed_clip(self.params, self.audio_cfg, &segments)?, padded))
    }
}

/// Clip-level embeddings computed once and shared across protocols.
pub struct ClipEmbeddings {
    map: HashMap<String, Embedding>,
    /// Clips that needed the pad-or-trim path (shorter than one segment or
    /// with a trailing partial segment).
    pub padded: Vec<String>,
}

impl ClipEmbeddings {
    pub fn compute<'a, I>(model: &Model<'_>, corpus: &Corpus, ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut map = HashMap::new();
        let mut padded = Vec::new();
        for id in ids {
            if map.contains_key(id) {
                continue;
            }
            let (emb, was_padded) = model.embed_clip_by_id(corpus, id)?;
            if was_padded {
                padded.push(id.to_string());
            }
            map.insert(id.to_string(), emb);
        }
        padded.sort();
        Ok(ClipEmbeddings { map, padded })
    }

    /// Assemble from precomputed embeddings (tests and callers that already
    /// hold an index).
    pub fn from_map(map: HashMap<String, Embedding>) -> Self {
        ClipEmbeddings {
            map,
            padded: Vec::new(),
        }
    }

    pub fn get(&self, id: &str) -> Result<&Embedding> {
        self.map
            .get(id)
            .ok_or_else(|| Error::Task(format!("no embedding computed for clip {id:?}")))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Zero-shot tagging scores and the class-balanced AUC over the eval split.
pub struct TaggingOutcome {
    pub macro_auc: f64,
    pub per_tag_auc: BTreeMap<String, f64>,
    pub skipped_tags: Vec<String>,
    pub padded_clips: Vec<String>,
}

/// Score every eval clip against every tag string by cosine and reduce to
/// class-balanced AUC.
pub fn zero_shot_tagging(
    model: &Model<'_>,
    task: &TaggingTask,
    clips: &ClipEmbeddings,
) -> Result<TaggingOutcome> {
    task.validate()?;
    let tag_embeddings: Vec<Embedding> = task
        .tags
        .iter()
        .map(|t| model.embed_text_str(t))
        .collect::<Result<_>>()?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for clip in task.split_clips(Split::Eval) {
        let clip_emb = clips.get(&clip.clip_id)?;
        scores.push(
            tag_embeddings
                .iter()
                .map(|t| clip_emb.cosine(t))
                .collect::<Vec<f64>>(),
        );
        labels.push(task.label_row(clip));
    }
    let auc = auc_roc_class_balanced(&scores, &labels)?;
    Ok(TaggingOutcome {
        macro_auc: auc.macro_auc,
        per_tag_auc: task
            .tags
            .iter()
            .zip(&auc.per_class)
            .filter_map(|(t, a)| a.map(|a| (t.clone(), a)))
            .collect(),
        skipped_tags: auc
            .skipped_classes
            .iter()
            .map(|&c| task.tags[c].clone())
            .collect(),
        padded_clips: clips.padded.clone(),
    })
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProbeConfig {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2: 1e-4,
            epochs: 500,
            learning_rate: 0.1,
        }
    }
}

pub struct ProbeOutcome {
    pub macro_auc: f64,
    pub per_tag_auc: BTreeMap<String, f64>,
    pub skipped_tags: Vec<String>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-class logistic regression on frozen clip embeddings: full-batch
/// gradient descent on the mean regularized logistic loss for a fixed epoch
/// budget, then class-balanced AUC on the eval split.
pub fn linear_probe(
    task: &TaggingTask,
    clips: &ClipEmbeddings,
    cfg: &ProbeConfig,
) -> Result<ProbeOutcome> {
    task.validate()?;
    let train: Vec<(&[f64], Vec<bool>)> = task
        .split_clips(Split::Train)
        .map(|c| Ok((clips.get(&c.clip_id)?.as_slice(), task.label_row(c))))
        .collect::<Result<_>>()?;
    if train.is_empty() {
        return Err(Error::Task("probe task has no training clips".to_string()));
    }
    let eval: Vec<(&[f64], Vec<bool>)> = task
        .split_clips(Split::Eval)
        .map(|c| Ok((clips.get(&c.clip_id)?.as_slice(), task.label_row(c))))
        .collect::<Result<_>>()?;
    let d = train[0].0.len();
    let n = train.len() as f64;

    let mut per_tag = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut total = 0.0;
    let mut counted = 0usize;
    for (class, tag) in task.tags.iter().enumerate() {
        let ys: Vec<bool> = train.iter().map(|(_, l)| l[class]).collect();
        let pos = ys.iter().filter(|&&y| y).count();
        if pos == 0 || pos == ys.len() {
            skipped.push(tag.clone());
            continue;
        }
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        for _ in 0..cfg.epochs {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for ((x, _), &y) in train.iter().zip(&ys) {
                let z = b + x.iter().zip(&w).map(|(&xi, &wi)| xi * wi).sum::<f64>();
                let err = sigmoid(z) - if y { 1.0 } else { 0.0 };
                for (g, &xi) in gw.iter_mut().zip(*x) {
                    *g += err * xi;
                }
                gb += err;
            }
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= cfg.learning_rate * (g / n + 2.0 * cfg.l2 * *wi);
            }
            b -= cfg.learning_rate * gb / n;
        }
        let scores: Vec<f64> = eval
            .iter()
            .map(|(x, _)| b + x.iter().zip(&w).map(|(&xi, &wi)| xi * wi).sum::<f64>())
            .collect();
        let labels: Vec<bool> = eval.iter().map(|(_, l)| l[class]).collect();
        match auc_binary(&scores, &labels) {
            Some(auc) => {
                per_tag.insert(tag.clone(), auc);
                total += auc;
                counted += 1;
            }
            None => skipped.push(tag.clone()),
        }
    }
    if counted == 0 {
        return Err(Error::Task("no class had both labels on both splits".to_string()));
    }
    Ok(ProbeOutcome {
        macro_auc: total / counted as f64,
        per_tag_auc: per_tag,
        skipped_tags: skipped,
    })
}

pub struct RetrievalOutcome {
    pub mean_average_precision: f64,
    pub macro_auc: f64,
    pub per_query_ap: BTreeMap<String, f64>,
}

/// Rank the whole pool for each query by cosine; report mAP and the
/// per-query AUC (targets as positives), macro-averaged.
pub fn retrieval_eval(
    model: &Model<'_>,
    task: &RetrievalTask,
    clips: &ClipEmbeddings,
) -> Result<RetrievalOutcome> {
    task.validate()?;
    let d = model.audio_cfg.transformer.embed_dim;
    let mut index = EmbeddingIndex::new(d, 0);
    for id in &task.pool {
        index.insert(id, clips.get(id)?)?;
    }
    let mut per_query_ap = BTreeMap::new();
    let mut ap_sum = 0.0;
    let mut auc_sum = 0.0;
    let mut auc_count = 0usize;
    for q in &task.queries {
        let query_emb = model.embed_text_str(&q.query)?;
        let ranking = index.retrieve(query_emb.as_slice(), task.pool.len())?;
        let relevance: Vec<bool> = ranking
            .iter()
            .map(|(id, _)| q.targets.iter().any(|t| t == id))
            .collect();
        let ap = average_precision(&relevance)?;
        ap_sum += ap;
        per_query_ap.insert(q.query.clone(), ap);
        let scores: Vec<f64> = ranking.iter().map(|(_, s)| *s).collect();
        if let Some(auc) = auc_binary(&scores, &relevance) {
            auc_sum += auc;
            auc_count += 1;
        }
    }
    if task.queries.is_empty() {
        return Err(Error::Task("retrieval task has no queries".to_string()));
    }
    Ok(RetrievalOutcome {
        mean_average_precision: ap_sum / task.queries.len() as f64,
        macro_auc: auc_sum / auc_count.max(1) as f64,
        per_query_ap,
    })
}

/// Retrieve the top-k clips for one free-text query.
pub fn retrieve(
    model: &Model<'_>,
    index: &EmbeddingIndex,
    query: &str,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let query_emb = model.embed_text_str(query)?;
    index.retrieve(query_emb.as_slice(), k)
}

/// Fraction of triplets where pos lands closer than neg to the anchor in
/// the text embedding space; exact ties count as incorrect.
pub fn triplet_accuracy(model: &Model<'_>, task: &TripletTask) -> Result<f64> {
    task.validate()?;
    if task.triplets.is_empty() {
        return Err(Error::Task("triplet task is empty".to_string()));
    }
    let mut cache: HashMap<String, Embedding> = HashMap::new();
    let mut correct = 0usize;
    for t in &task.triplets {
        for text in [&t.anchor, &t.pos, &t.neg] {
            if !cache.contains_key(text.as_str()) {
                cache.insert(text.clone(), model.embed_text_str(text)?);
            }
        }
        let anchor = &cache[t.anchor.as_str()];
        let pos = &cache[t.pos.as_str()];
        let neg = &cache[t.neg.as_str()];
        if anchor.cosine(pos) > anchor.cosine(neg) {
            correct += 1;
        }
    }
    Ok(correct as f64 / task.triplets.len() as f64)
}
