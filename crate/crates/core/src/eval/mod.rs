//! Evaluation protocols and reference metric implementations.
//!
//! Everything here reads immutable model snapshots and corpora; per-clip and
//! per-query work has no shared state and the metric reductions are
//! associative.

pub mod metrics;
pub mod protocols;
pub mod report;
pub mod tasks;

pub use metrics::{
    auc_binary, auc_roc_class_balanced, average_precision, mean_average_precision,
    ClassBalancedAuc,
};
pub use protocols::{
    linear_probe, retrieval_eval, retrieve, triplet_accuracy, zero_shot_tagging, ClipEmbeddings,
    Model, ProbeConfig, ProbeOutcome, RetrievalOutcome, TaggingOutcome,
};
pub use report::EvalReport;
pub use tasks::{
    tagging_task_from_corpus, ClipLabels, RetrievalQuery, RetrievalTask, Split, TaggingTask,
    Triplet, TripletTask,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::protocols::ProbeConfig;
    use crate::eval::tasks::{ClipLabels, Split, TaggingTask};
    use crate::index::EmbeddingIndex;
    use crate::nn::tensor::l2_normalized;
    use crate::towers::Embedding;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: Vec<f64>) -> Embedding {
        Embedding::new(l2_normalized(&v)).unwrap()
    }

    #[test]
    fn retrieve_agrees_with_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let d = 6;
        for pool_size in [1usize, 2, 10, 100, 1000] {
            let mut index = EmbeddingIndex::new(d, 0);
            let mut entries = Vec::new();
            for i in 0..pool_size {
                let id = format!("clip{i:04}");
                let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let e = unit(v);
                index.insert(&id, &e).unwrap();
                entries.push((id, e));
            }
            let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = index.retrieve(&q, pool_size).unwrap();

            // oracle: score everything, sort by (-score, id)
            let mut expected: Vec<(String, f64)> = entries
                .iter()
                .map(|(id, e)| {
                    (
                        id.clone(),
                        crate::nn::tensor::cosine(&q, e.as_slice()),
                    )
                })
                .collect();
            expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
            assert_eq!(got, expected);

            // permutation of the pool prefix, no duplicates
            let mut ids: Vec<&str> = got.iter().map(|(i, _)| i.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), pool_size);
        }
    }

    #[test]
    fn probe_separates_separable_clusters_and_shuffled_labels_are_chance() {
        // two linearly separable clusters in d = 8
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 8;
        let mut clips = Vec::new();
        let mut cache = std::collections::HashMap::new();
        for i in 0..120 {
            let positive = i % 2 == 0;
            let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.3..0.3)).collect();
            v[0] += if positive { 1.0 } else { -1.0 };
            let id = format!("c{i:03}");
            cache.insert(id.clone(), unit(v));
            clips.push(ClipLabels {
                clip_id: id,
                positives: if positive { vec!["x".into()] } else { vec![] },
                split: if i < 80 { Split::Train } else { Split::Eval },
            });
        }
        let task = TaggingTask {
            tags: vec!["x".into()],
            clips,
        };
        let embeddings = ClipEmbeddings::from_map(cache.clone());
        let outcome = linear_probe(&task, &embeddings, &ProbeConfig::default()).unwrap();
        assert_eq!(outcome.macro_auc, 1.0);

        // shuffled labels: expect chance within 3 sigma over eval positives/negatives
        use rand::seq::SliceRandom;
        let mut shuffled = task.clone();
        let mut perm: Vec<Vec<String>> =
            shuffled.clips.iter().map(|c| c.positives.clone()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(123));
        for (c, p) in shuffled.clips.iter_mut().zip(perm) {
            c.positives = p;
        }
        let outcome = linear_probe(&shuffled, &embeddings, &ProbeConfig::default()).unwrap();
        // 20 pos / 20 neg in eval: sigma of AUC under the null is about
        // sqrt((p+n+1)/(12 p n)) ~ 0.093
        assert!((outcome.macro_auc - 0.5).abs() < 0.28);
    }

    #[test]
    fn probe_is_invariant_to_duplicating_training_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = 4;
        let mut cache = std::collections::HashMap::new();
        let mut clips = Vec::new();
        for i in 0..40 {
            let y = i % 2 == 0;
            let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.4..0.4)).collect();
            v[1] += if y { 0.8 } else { -0.8 };
            let id = format!("c{i}");
            cache.insert(id.clone(), unit(v));
            clips.push(ClipLabels {
                clip_id: id,
                positives: if y { vec!["x".into()] } else { vec![] },
                split: if i < 24 { Split::Train } else { Split::Eval },
            });
        }
        let base_task = TaggingTask {
            tags: vec!["x".into()],
            clips: clips.clone(),
        };

        // duplicate every training clip under a fresh id
        let mut dup_clips = clips.clone();
        let mut dup_cache = cache.clone();
        for c in &clips {
            if c.split == Split::Train {
                let id = format!("{}dup", c.clip_id);
                dup_cache.insert(id.clone(), cache[&c.clip_id].clone());
                dup_clips.push(ClipLabels {
                    clip_id: id,
                    positives: c.positives.clone(),
                    split: Split::Train,
                });
            }
        }
        let dup_task = TaggingTask {
            tags: vec!["x".into()],
            clips: dup_clips,
        };

        let base = linear_probe(
            &base_task,
            &ClipEmbeddings::from_map(cache),
            &ProbeConfig::default(),
        )
        .unwrap();
        let doubled = linear_probe(
            &dup_task,
            &ClipEmbeddings::from_map(dup_cache),
            &ProbeConfig::default(),
        )
        .unwrap();
        assert!((base.macro_auc - doubled.macro_auc).abs() < 1e-9);
    }
}
