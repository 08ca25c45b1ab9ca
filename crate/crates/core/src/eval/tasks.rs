//! Task file schemas: tagging, retrieval, and triplet sets as JSONL.

use std::collections::HashSet;
use std::path::Path;

use crate::corpus::types::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ClipLabels {
    pub clip_id: String,
    pub positives: Vec<String>,
    #[serde(default = "default_split")]
    pub split: Split,
}

fn default_split() -> Split {
    Split::Eval
}

/// Tag set plus per-clip binary labels; doubles as the linear-probe task
/// via the train/eval split field.
#[derive(Debug, Clone)]
pub struct TaggingTask {
    pub tags: Vec<String>,
    pub clips: Vec<ClipLabels>,
}

impl TaggingTask {
    pub fn validate(&self) -> Result<()> {
        if self.tags.is_empty() {
            return Err(Error::Task("tagging task has no tags".to_string()));
        }
        let tag_set: HashSet<&str> = self.tags.iter().map(String::as_str).collect();
        if tag_set.len() != self.tags.len() {
            return Err(Error::Task("duplicate tags".to_string()));
        }
        for clip in &self.clips {
            for p in &clip.positives {
                if !tag_set.contains(p.as_str()) {
                    return Err(Error::Task(format!(
                        "clip {:?} labeled with unknown tag {p:?}",
                        clip.clip_id
                    )));
                }
            }
        }
        // every tag needs both labels within the eval split
        for tag in &self.tags {
            let mut pos = 0usize;
            let mut neg = 0usize;
            for clip in self.clips.iter().filter(|c| c.split == Split::Eval) {
                if clip.positives.iter().any(|p| p == tag) {
                    pos += 1;
                } else {
                    neg += 1;
                }
            }
            if pos == 0 || neg == 0 {
                return Err(Error::Task(format!(
                    "tag {tag:?} lacks a positive or negative in the eval split"
                )));
            }
        }
        Ok(())
    }

    pub fn split_clips(&self, split: Split) -> impl Iterator<Item = &ClipLabels> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn label_row(&self, clip: &ClipLabels) -> Vec<bool> {
        self.tags
            .iter()
            .map(|t| clip.positives.iter().any(|p| p == t))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&serde_json::json!({ "tags": self.tags }))?);
        out.push('\n');
        for clip in &self.clips {
            out.push_str(&serde_json::to_string(clip)?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        let mut lines = content.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Task("empty tagging task file".to_string()))?;
        #[derive(serde::Deserialize)]
        struct Header {
            tags: Vec<String>,
        }
        let header: Header = serde_json::from_str(header).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        let mut clips = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let clip: ClipLabels = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            clips.push(clip);
        }
        let task = TaggingTask {
            tags: header.tags,
            clips,
        };
        task.validate()?;
        Ok(task)
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RetrievalQuery {
    pub query: String,
    pub targets: Vec<String>,
}

/// Text queries with ground-truth target clips over a candidate pool.
#[derive(Debug, Clone)]
pub struct RetrievalTask {
    pub pool: Vec<String>,
    pub queries: Vec<RetrievalQuery>,
}

impl RetrievalTask {
    pub fn validate(&self) -> Result<()> {
        if self.pool.is_empty() {
            return Err(Error::Task("retrieval pool is empty".to_string()));
        }
        let pool: HashSet<&str> = self.pool.iter().map(String::as_str).collect();
        for q in &self.queries {
            if q.targets.is_empty() {
                return Err(Error::Task(format!("query {:?} has no targets", q.query)));
            }
            for t in &q.targets {
                if !pool.contains(t.as_str()) {
                    return Err(Error::Task(format!(
                        "target {t:?} of query {:?} is outside the pool",
                        q.query
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&serde_json::json!({ "pool": self.pool }))?);
        out.push('\n');
        for q in &self.queries {
            out.push_str(&serde_json::to_string(q)?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        let mut lines = content.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Task("empty retrieval task file".to_string()))?;
        #[derive(serde::Deserialize)]
        struct Header {
            pool: Vec<String>,
        }
        let header: Header = serde_json::from_str(header).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        let mut queries = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            queries.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        let task = RetrievalTask {
            pool: header.pool,
            queries,
        };
        task.validate()?;
        Ok(task)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Triplet {
    pub anchor: String,
    pub pos: String,
    pub neg: String,
}

#[derive(Debug, Clone)]
pub struct TripletTask {
    pub triplets: Vec<Triplet>,
}

impl TripletTask {
    pub fn validate(&self) -> Result<()> {
        for t in &self.triplets {
            if t.pos == t.neg {
                return Err(Error::Task(format!(
                    "triplet with anchor {:?} has pos == neg",
                    t.anchor
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.triplets {
            out.push_str(&serde_json::to_string(t)?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        let mut triplets = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            triplets.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        let task = TripletTask { triplets };
        task.validate()?;
        Ok(task)
    }
}

/// Tagging task straight from a corpus with ground-truth labels: tags are
/// the union of recording labels, split assigned by the given predicate.
pub fn tagging_task_from_corpus<F>(corpus: &Corpus, mut is_eval: F) -> Result<TaggingTask>
where
    F: FnMut(usize, &str) -> bool,
{
    let mut tags: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for rec in corpus.recordings() {
        for label in rec.labels.iter().flatten() {
            if seen.insert(label.clone()) {
                tags.push(label.clone());
            }
        }
    }
    tags.sort();
    if tags.is_empty() {
        return Err(Error::Task("corpus has no ground-truth labels".to_string()));
    }
    let clips = corpus
        .recordings()
        .iter()
        .enumerate()
        .map(|(i, rec)| ClipLabels {
            clip_id: rec.id.clone(),
            positives: rec.labels.clone().unwrap_or_default(),
            split: if is_eval(i, &rec.id) {
                Split::Eval
            } else {
                Split::Train
            },
        })
        .collect();
    Ok(TaggingTask { tags, clips })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagging_round_trip_and_validation() {
        let task = TaggingTask {
            tags: vec!["a".into(), "b".into()],
            clips: vec![
                ClipLabels {
                    clip_id: "c1".into(),
                    positives: vec!["a".into()],
                    split: Split::Eval,
                },
                ClipLabels {
                    clip_id: "c2".into(),
                    positives: vec!["b".into()],
                    split: Split::Eval,
                },
            ],
        };
        task.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tags.jsonl");
        task.save(&path).unwrap();
        let loaded = TaggingTask::load(&path).unwrap();
        assert_eq!(loaded.tags, task.tags);
        assert_eq!(loaded.clips.len(), 2);
        assert_eq!(loaded.label_row(&loaded.clips[0]), vec![true, false]);
    }

    #[test]
    fn tag_without_negatives_fails_validation() {
        let task = TaggingTask {
            tags: vec!["a".into()],
            clips: vec![ClipLabels {
                clip_id: "c1".into(),
                positives: vec!["a".into()],
                split: Split::Eval,
            }],
        };
        assert!(task.validate().is_err());
    }

    #[test]
    fn retrieval_targets_must_be_in_pool() {
        let task = RetrievalTask {
            pool: vec!["x".into()],
            queries: vec![RetrievalQuery {
                query: "q".into(),
                targets: vec!["y".into()],
            }],
        };
        assert!(task.validate().is_err());
    }

    #[test]
    fn triplet_pos_neq_neg() {
        let task = TripletTask {
            triplets: vec![Triplet {
                anchor: "a".into(),
                pos: "p".into(),
                neg: "p".into(),
            }],
        };
        assert!(task.validate().is_err());
    }
}
