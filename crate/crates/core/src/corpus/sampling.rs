//! Pair sampling and mini-batch mixing.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::types::{Corpus, SourceType};
use crate::dsp::augment::{spec_augment, SpecAugmentConfig};
use crate::dsp::spectrogram::{
    compute_log_mel, extract_window, ContextWindow, LogMelSpectrogram, SpectrogramConfig,
};
use crate::error::{Error, Result};
use crate::text::tokenizer::{tokenize, TokenSequence};
use crate::text::vocab::Vocabulary;

/// Per-source pair counts for one mini-batch.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MixingSpec {
    counts: [usize; 4],
}

impl MixingSpec {
    pub fn from_counts(counts: [usize; 4]) -> Result<Self> {
        if counts.iter().sum::<usize>() == 0 {
            return Err(Error::Config("mixing counts sum to zero".to_string()));
        }
        Ok(MixingSpec { counts })
    }

    /// Apportion `batch_size` slots to the SF:LF:PL:ASET ratio. Sources are
    /// processed in that fixed order; each takes the ceiling of its
    /// proportional share of the remaining slots, so earlier sources absorb
    /// the rounding remainder first.
    pub fn from_ratio(batch_size: usize, ratio: [u64; 4]) -> Result<Self> {
        let mut weight_sum: u64 = ratio.iter().sum();
        if weight_sum == 0 {
            return Err(Error::Config("mixing ratio is all zeros".to_string()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".to_string()));
        }
        let mut counts = [0usize; 4];
        let mut remaining = batch_size as u64;
        for (slot, &w) in counts.iter_mut().zip(&ratio) {
            if weight_sum == 0 {
                break;
            }
            let take = (remaining * w).div_ceil(weight_sum);
            *slot = take as usize;
            remaining -= take;
            weight_sum -= w;
        }
        debug_assert_eq!(remaining, 0);
        Ok(MixingSpec { counts })
    }

    pub fn count(&self, source: SourceType) -> usize {
        self.counts[source_index(source)]
    }

    pub fn counts(&self) -> [usize; 4] {
        self.counts
    }

    pub fn batch_size(&self) -> usize {
        self.counts.iter().sum()
    }
}

fn source_index(source: SourceType) -> usize {
    match source {
        SourceType::SF => 0,
        SourceType::LF => 1,
        SourceType::PL => 2,
        SourceType::ASET => 3,
    }
}

/// One pre-embedding training pair with full provenance.
#[derive(Debug, Clone)]
pub struct SampledPair {
    pub window: ContextWindow,
    pub tokens: TokenSequence,
    pub text: String,
    pub source: SourceType,
    pub recording_id: String,
}

/// Sampling knobs shared by training and evaluation.
#[derive(Debug, Clone)]
pub struct SamplerSettings {
    /// Context window length T in frames.
    pub window_frames: usize,
    /// Tokenized sequence length n.
    pub token_len: usize,
    /// Training mode applies SpecAugment with a per-window seed.
    pub spec_augment: Option<SpecAugmentConfig>,
}

/// Immutable sampling context over one corpus: spectrograms are computed
/// once up front, eligibility is indexed per source.
pub struct Sampler<'a> {
    corpus: &'a Corpus,
    vocab: &'a Vocabulary,
    settings: SamplerSettings,
    spectrograms: HashMap<String, LogMelSpectrogram>,
    eligible: [Vec<usize>; 4],
}

impl<'a> Sampler<'a> {
    /// Decode and fingerprint every recording. Recordings with fewer than T
    /// frames are simply ineligible for sampling; missing audio files are an
    /// error.
    pub fn new(
        corpus: &'a Corpus,
        vocab: &'a Vocabulary,
        dsp: &SpectrogramConfig,
        settings: SamplerSettings,
    ) -> Result<Self> {
        let mut spectrograms = HashMap::new();
        for rec in corpus.recordings() {
            let waveform = corpus.waveform(&rec.id)?;
            match compute_log_mel(&waveform, dsp) {
                Ok(s) => {
                    spectrograms.insert(rec.id.clone(), s);
                }
                Err(Error::Audio(_)) => {} // shorter than one analysis window
                Err(e) => return Err(e),
            }
        }
        let mut eligible: [Vec<usize>; 4] = Default::default();
        for (i, rec) in corpus.recordings().iter().enumerate() {
            let frames = spectrograms
                .get(&rec.id)
                .map(|s| s.num_frames())
                .unwrap_or(0);
            if frames < settings.window_frames {
                continue;
            }
            for source in SourceType::ALL {
                if rec.annotations_of(source).next().is_some() {
                    eligible[source_index(source)].push(i);
                }
            }
        }
        Ok(Sampler {
            corpus,
            vocab,
            settings,
            spectrograms,
            eligible,
        })
    }

    pub fn spectrogram(&self, id: &str) -> Option<&LogMelSpectrogram> {
        self.spectrograms.get(id)
    }

    pub fn eligible_count(&self, source: SourceType) -> usize {
        self.eligible[source_index(source)].len()
    }

    /// Draw one (window, text) pair: uniform recording among those eligible
    /// for `source`, uniform window offset, uniform annotation.
    pub fn sample_pair<R: Rng>(&self, source: SourceType, rng: &mut R) -> Result<SampledPair> {
        let pool = &self.eligible[source_index(source)];
        if pool.is_empty() {
            return Err(Error::Sampling(format!(
                "no eligible recording for source {source}"
            )));
        }
        let rec = &self.corpus.recordings()[pool[rng.gen_range(0..pool.len())]];
        let spec = &self.spectrograms[&rec.id];
        let t = self.settings.window_frames;
        let start = rng.gen_range(0..=spec.num_frames() - t);
        let mut window = extract_window(spec, &rec.id, start, t)?;
        if let Some(augment_cfg) = &self.settings.spec_augment {
            let seed = rng.gen::<u64>();
            window = spec_augment(&window, augment_cfg, seed)?;
        }
        let annotations: Vec<_> = rec.annotations_of(source).collect();
        let annotation = annotations[rng.gen_range(0..annotations.len())];
        let tokens = tokenize(&annotation.text, self.vocab, self.settings.token_len)?;
        Ok(SampledPair {
            window,
            tokens,
            text: annotation.text.clone(),
            source,
            recording_id: rec.id.clone(),
        })
    }

    /// Assemble one mixed batch with exactly the prescribed per-source
    /// counts, then shuffle the pair order.
    pub fn assemble_batch<R: Rng>(
        &self,
        mix: &MixingSpec,
        rng: &mut R,
    ) -> Result<Vec<SampledPair>> {
        for source in SourceType::ALL {
            if mix.count(source) > 0 && self.eligible_count(source) == 0 {
                return Err(Error::Batch(format!(
                    "mixing requires source {source} but the corpus has no eligible recording"
                )));
            }
        }
        let mut batch = Vec::with_capacity(mix.batch_size());
        for source in SourceType::ALL {
            for _ in 0..mix.count(source) {
                batch.push(self.sample_pair(source, rng)?);
            }
        }
        batch.shuffle(rng);
        Ok(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::types::{Annotation, Recording};
    use crate::dsp::spectrogram::Waveform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ratio_2211_pins_the_documented_counts() {
        let mix = MixingSpec::from_ratio(6, [2, 2, 1, 1]).unwrap();
        assert_eq!(mix.counts(), [2, 2, 1, 1]);

        let mix = MixingSpec::from_ratio(64, [2, 2, 1, 1]).unwrap();
        assert_eq!(mix.counts(), [22, 21, 11, 10]);
        assert_eq!(mix.batch_size(), 64);

        let mix = MixingSpec::from_ratio(5120, [2, 2, 1, 1]).unwrap();
        assert_eq!(mix.counts(), [1707, 1707, 853, 853]);
    }

    #[test]
    fn all_mass_on_one_source() {
        let mix = MixingSpec::from_ratio(8, [0, 0, 0, 1]).unwrap();
        assert_eq!(mix.counts(), [0, 0, 0, 8]);
        assert!(MixingSpec::from_ratio(8, [0, 0, 0, 0]).is_err());
    }

    fn tone_corpus(ids: &[&str], seconds: f64) -> Corpus {
        let recordings: Vec<Recording> = ids
            .iter()
            .map(|id| Recording {
                id: id.to_string(),
                audio: None,
                synthetic_seed: None,
                annotations: vec![
                    Annotation {
                        source: SourceType::SF,
                        text: format!("tag {id}"),
                    },
                    Annotation {
                        source: SourceType::LF,
                        text: format!("sentence about {id}"),
                    },
                ],
                concepts: None,
                labels: None,
            })
            .collect();
        let mut corpus = Corpus::new(recordings).unwrap();
        for (i, id) in ids.iter().enumerate() {
            let n = (seconds * 16_000.0) as usize;
            let samples: Vec<f64> = (0..n)
                .map(|j| 0.3 * ((j as f64 * 0.01 * (i + 1) as f64).sin()))
                .collect();
            corpus.set_in_memory_audio(id, Waveform::new(samples, 16_000).unwrap());
        }
        corpus
    }

    fn settings(t: usize) -> SamplerSettings {
        SamplerSettings {
            window_frames: t,
            token_len: 8,
            spec_augment: None,
        }
    }

    fn dsp() -> SpectrogramConfig {
        SpectrogramConfig {
            mel_channels: 8,
            ..Default::default()
        }
    }

    #[test]
    fn single_recording_single_annotation_is_always_returned() {
        let corpus = tone_corpus(&["only"], 1.0);
        let vocab = Vocabulary::with_words(["tag", "only", "sentence", "about"]).unwrap();
        let sampler = Sampler::new(&corpus, &vocab, &dsp(), settings(20)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let pair = sampler.sample_pair(SourceType::SF, &mut rng).unwrap();
            assert_eq!(pair.recording_id, "only");
            assert_eq!(pair.text, "tag only");
            assert_eq!(pair.window.recording_id, "only");
        }
    }

    #[test]
    fn exact_length_recording_always_starts_at_zero() {
        // 98 frames at 1.0 s: (16000 - 400) / 160 + 1 = 98
        let corpus = tone_corpus(&["r"], 1.0);
        let vocab = Vocabulary::with_words(["tag", "r", "sentence", "about"]).unwrap();
        let sampler = Sampler::new(&corpus, &vocab, &dsp(), settings(98)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let pair = sampler.sample_pair(SourceType::LF, &mut rng).unwrap();
            assert_eq!(pair.window.start_frame, 0);
        }
    }

    #[test]
    fn recording_selection_is_uniform_within_3_sigma() {
        let ids = ["a", "b", "c", "d"];
        let corpus = tone_corpus(&ids, 0.5);
        let vocab =
            Vocabulary::with_words(["tag", "a", "b", "c", "d", "sentence", "about"]).unwrap();
        let sampler = Sampler::new(&corpus, &vocab, &dsp(), settings(10)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000usize;
        let mut counts: HashMap<String, usize> = HashMap::new();
        for _ in 0..draws {
            let pair = sampler.sample_pair(SourceType::SF, &mut rng).unwrap();
            *counts.entry(pair.recording_id).or_insert(0) += 1;
        }
        let expectation = draws as f64 / 4.0;
        let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
        for id in ids {
            let c = counts[id] as f64;
            assert!(
                (c - expectation).abs() <= 3.0 * sigma,
                "{id}: {c} vs {expectation} +- {sigma}"
            );
        }
    }

    #[test]
    fn too_short_recordings_are_ineligible() {
        let corpus = tone_corpus(&["short"], 0.1); // 1600 samples -> 8 frames
        let vocab = Vocabulary::with_words(["tag", "short", "sentence", "about"]).unwrap();
        let sampler = Sampler::new(&corpus, &vocab, &dsp(), settings(50)).unwrap();
        assert_eq!(sampler.eligible_count(SourceType::SF), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            sampler.sample_pair(SourceType::SF, &mut rng),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn batch_counts_match_the_mix_exactly_and_text_matches_window() {
        let corpus = tone_corpus(&["a", "b", "c"], 0.8);
        let vocab =
            Vocabulary::with_words(["tag", "a", "b", "c", "sentence", "about"]).unwrap();
        let sampler = Sampler::new(&corpus, &vocab, &dsp(), settings(20)).unwrap();
        let mix = MixingSpec::from_counts([3, 2, 0, 0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let batch = sampler.assemble_batch(&mix, &mut rng).unwrap();
            assert_eq!(batch.len(), 5);
            let sf = batch.iter().filter(|p| p.source == SourceType::SF).count();
            let lf = batch.iter().filter(|p| p.source == SourceType::LF).count();
            assert_eq!((sf, lf), (3, 2));
            for pair in &batch {
                assert_eq!(pair.window.recording_id, pair.recording_id);
                assert!(pair.text.contains(&pair.recording_id));
            }
        }
    }

    #[test]
    fn unsatisfiable_source_names_the_source() {
        let corpus = tone_corpus(&["a"], 0.8);
        let vocab = Vocabulary::with_words(["tag", "a", "sentence", "about"]).unwrap();
        let sampler = Sampler::new(&corpus, &vocab, &dsp(), settings(20)).unwrap();
        let mix = MixingSpec::from_counts([1, 0, 1, 0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        match sampler.assemble_batch(&mix, &mut rng).unwrap_err() {
            Error::Batch(msg) => assert!(msg.contains("PL")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn training_mode_applies_spec_augment_deterministically() {
        let corpus = tone_corpus(&["a"], 0.8);
        let vocab = Vocabulary::with_words(["tag", "a", "sentence", "about"]).unwrap();
        let mut s = settings(20);
        s.spec_augment = Some(SpecAugmentConfig {
            num_freq_masks: 1,
            max_freq_width: 4,
            num_time_masks: 1,
            max_time_width: 8,
            mask_value: -99.0,
        });
        let sampler = Sampler::new(&corpus, &vocab, &dsp(), s).unwrap();
        let mut rng1 = ChaCha8Rng::seed_from_u64(5);
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let p1 = sampler.sample_pair(SourceType::SF, &mut rng1).unwrap();
        let p2 = sampler.sample_pair(SourceType::SF, &mut rng2).unwrap();
        assert_eq!(p1.window, p2.window);
    }
}
