//! Recordings, annotations, and the corpus container.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::dsp::spectrogram::Waveform;
use crate::dsp::wav::load_wav_as_internal;
use crate::error::{Error, Result};

/// The four annotation sources: short-form tags, long-form sentences,
/// playlist titles, and label strings from an annotated clip collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum SourceType {
    SF,
    LF,
    PL,
    ASET,
}

impl SourceType {
    pub const ALL: [SourceType; 4] = [
        SourceType::SF,
        SourceType::LF,
        SourceType::PL,
        SourceType::ASET,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SourceType::SF => "SF",
            SourceType::LF => "LF",
            SourceType::PL => "PL",
            SourceType::ASET => "ASET",
        }
    }
}

impl std::fmt::Display for SourceType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Annotation {
    pub source: SourceType,
    pub text: String,
}

/// One recording: an audio reference (file path or synthetic seed), its
/// annotations, and optional planted ground truth for oracle evaluation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Recording {
    pub id: String,
    pub audio: Option<String>,
    pub synthetic_seed: Option<u64>,
    pub annotations: Vec<Annotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concepts: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl Recording {
    pub fn annotations_of(&self, source: SourceType) -> impl Iterator<Item = &Annotation> {
        self.annotations.iter().filter(move |a| a.source == source)
    }
}

/// Immutable after construction; samplers and evaluators share it freely.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    recordings: Vec<Recording>,
    by_id: HashMap<String, usize>,
    /// Directory audio paths resolve against (the corpus file's directory).
    base_dir: Option<PathBuf>,
    /// Waveforms for freshly generated corpora that have not hit disk.
    in_memory_audio: HashMap<String, Waveform>,
}

impl Corpus {
    pub fn new(recordings: Vec<Recording>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(recordings.len());
        for (i, r) in recordings.iter().enumerate() {
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate recording id {:?}", r.id)));
            }
        }
        Ok(Corpus {
            recordings,
            by_id,
            base_dir: None,
            in_memory_audio: HashMap::new(),
        })
    }

    pub fn with_base_dir(mut self, dir: &Path) -> Self {
        self.base_dir = Some(dir.to_path_buf());
        self
    }

    pub fn set_in_memory_audio(&mut self, id: &str, waveform: Waveform) {
        self.in_memory_audio.insert(id.to_string(), waveform);
    }

    pub fn len(&self) -> usize {
        self.recordings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }

    pub fn recordings(&self) -> &[Recording] {
        &self.recordings
    }

    pub fn get(&self, id: &str) -> Option<&Recording> {
        self.by_id.get(id).map(|&i| &self.recordings[i])
    }

    /// Resolve a recording's audio: in-memory first, then its WAV path
    /// (relative paths resolve against the corpus file's directory).
    pub fn waveform(&self, id: &str) -> Result<Waveform> {
        if let Some(w) = self.in_memory_audio.get(id) {
            return Ok(w.clone());
        }
        let rec = self
            .get(id)
            .ok_or_else(|| Error::Sampling(format!("no recording with id {id:?}")))?;
        let rel = rec.audio.as_ref().ok_or_else(|| {
            Error::Sampling(format!("recording {id:?} has no audio reference"))
        })?;
        let path = match &self.base_dir {
            Some(dir) if Path::new(rel).is_relative() => dir.join(rel),
            _ => PathBuf::from(rel),
        };
        load_wav_as_internal(&path)
    }

    /// Keep only annotations accepted by the predicate. Recording set and
    /// ground truth are unchanged; a fresh corpus is returned.
    pub fn filtered_annotations<F>(&self, mut keep: F) -> Corpus
    where
        F: FnMut(&Annotation) -> bool,
    {
        let recordings = self
            .recordings
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.annotations.retain(|a| keep(a));
                r
            })
            .collect();
        Corpus {
            recordings,
            by_id: self.by_id.clone(),
            base_dir: self.base_dir.clone(),
            in_memory_audio: self.in_memory_audio.clone(),
        }
    }
}

/// Turn (audio reference, label strings) pairs into ASET-annotated
/// recordings. Duplicate labels collapse to one annotation; clips with no
/// labels are retained without annotations.
pub fn build_aset_pairs(labeled_clips: &[(String, Vec<String>)]) -> Vec<Recording> {
    labeled_clips
        .iter()
        .map(|(audio_ref, labels)| {
            let mut seen = std::collections::HashSet::new();
            let annotations = labels
                .iter()
                .filter(|l| seen.insert(l.as_str()))
                .map(|l| Annotation {
                    source: SourceType::ASET,
                    text: l.clone(),
                })
                .collect();
            Recording {
                id: audio_ref.clone(),
                audio: Some(audio_ref.clone()),
                synthetic_seed: None,
                annotations,
                concepts: None,
                labels: None,
            }
        })
        .collect()
}
