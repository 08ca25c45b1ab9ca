//! Synthetic corpus generation with planted ground truth.
//!
//! Each concept gets a pure-tone frequency that lands in its own mel band
//! and four disjoint word pools, one per annotation source. A recording sums
//! the tones of its concepts over a low noise floor; its annotations are
//! drawn from the pools of its concepts, with optional word-level noise and
//! whole distractor annotations of pure noise text. The planted concepts are
//! stored on every recording, so downstream evaluation has an exact oracle.
//!
//! Pool words are disjoint across sources on purpose: the only thing tying a
//! concept's short-form words to its long-form words is co-occurrence on the
//! same audio, which is exactly the structure cross-modal training is
//! supposed to discover.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::types::{Annotation, Corpus, Recording, SourceType};
use crate::dsp::spectrogram::{SpectrogramConfig, Waveform, INTERNAL_SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::text::vocab::Vocabulary;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Number of planted concepts K.
    pub num_concepts: usize,
    pub num_recordings: usize,
    pub min_concepts_per_recording: usize,
    pub max_concepts_per_recording: usize,
    /// Probability that an annotation word is replaced by a noise word.
    pub annotation_noise_rate: f64,
    /// Probability of adding a pure-noise annotation per (recording, source).
    pub distractor_rate: f64,
    /// Explicit tone frequencies; derived from the mel config when absent.
    pub tone_frequencies_hz: Option<Vec<f64>>,
    /// Recording length bounds in frames; defaults to [T, 2T].
    pub duration_frames: Option<(usize, usize)>,
    /// Words per concept pool per source (the SF pool also holds the
    /// concept name).
    pub words_per_pool: usize,
    pub noise_vocab_size: usize,
    /// Per-recording tone detuning as a fraction of the inter-band mel gap;
    /// recordings of one concept stay in its band but are acoustically
    /// distinct, the way real recordings of one genre are.
    pub tone_jitter: f64,
    /// Append a per-recording title word to short-form annotations, the way
    /// real short-form tags carry song titles and artist names.
    pub recording_titles: bool,
    pub tone_amplitude: f64,
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_concepts: 4,
            num_recordings: 100,
            min_concepts_per_recording: 1,
            max_concepts_per_recording: 3,
            annotation_noise_rate: 0.0,
            distractor_rate: 0.0,
            tone_frequencies_hz: None,
            duration_frames: None,
            words_per_pool: 4,
            noise_vocab_size: 24,
            tone_jitter: 0.3,
            recording_titles: true,
            tone_amplitude: 0.8,
            noise_amplitude: 0.01,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_concepts < 2 {
            return Err(Error::Config("need at least 2 concepts".to_string()));
        }
        if self.num_recordings == 0 {
            return Err(Error::Config("need at least 1 recording".to_string()));
        }
        if self.min_concepts_per_recording < 1
            || self.min_concepts_per_recording > self.max_concepts_per_recording
            || self.max_concepts_per_recording > self.num_concepts
        {
            return Err(Error::Config(format!(
                "concepts-per-recording range [{}, {}] invalid for K = {}",
                self.min_concepts_per_recording,
                self.max_concepts_per_recording,
                self.num_concepts
            )));
        }
        for rate in [self.annotation_noise_rate, self.distractor_rate] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("rate {rate} outside [0, 1]")));
            }
        }
        if self.words_per_pool == 0 || self.noise_vocab_size == 0 {
            return Err(Error::Config("pool sizes must be positive".to_string()));
        }
        if !(0.0..0.5).contains(&self.tone_jitter) {
            return Err(Error::Config(format!(
                "tone_jitter {} must be in [0, 0.5) to keep bands resolvable",
                self.tone_jitter
            )));
        }
        Ok(())
    }
}

/// A generated corpus plus everything needed to interpret it.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub vocab: Vocabulary,
    /// Concept name words, index = concept id; these double as tag strings.
    pub concept_names: Vec<String>,
    pub tone_frequencies_hz: Vec<f64>,
    /// Mel band each tone lands in under the generation config.
    pub tone_bands: Vec<usize>,
}

fn concept_name(k: usize) -> String {
    format!("tone{k}")
}

fn pool_word(source: SourceType, k: usize, i: usize) -> String {
    format!("{}{k}w{i}", source.as_str().to_lowercase())
}

fn noise_word(i: usize) -> String {
    format!("chatter{i}")
}

fn title_word(r: usize) -> String {
    format!("track{r}")
}

/// Word pool for one concept and source. The SF pool carries the concept
/// name so tag strings are attested in training text.
pub fn concept_pool(source: SourceType, k: usize, words_per_pool: usize) -> Vec<String> {
    let mut pool = Vec::new();
    if source == SourceType::SF {
        pool.push(concept_name(k));
    }
    for i in 0..words_per_pool {
        pool.push(pool_word(source, k, i));
    }
    pool
}

/// Resolve (or derive) one distinct mel band per concept.
fn resolve_tone_bands(
    spec: &SyntheticSpec,
    dsp: &SpectrogramConfig,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let fb = dsp.filterbank(INTERNAL_SAMPLE_RATE_HZ)?;
    let k = spec.num_concepts;
    match &spec.tone_frequencies_hz {
        Some(freqs) => {
            if freqs.len() != k {
                return Err(Error::Config(format!(
                    "{} tone frequencies for {k} concepts",
                    freqs.len()
                )));
            }
            let mut bands = Vec::with_capacity(k);
            for &f in freqs {
                let band = fb.argmax_band_for(f).ok_or_else(|| {
                    Error::Config(format!("tone at {f} Hz excites no mel band"))
                })?;
                if bands.contains(&band) {
                    return Err(Error::Config(format!(
                        "tone at {f} Hz collides with another concept in mel band {band}"
                    )));
                }
                bands.push(band);
            }
            Ok((freqs.clone(), bands))
        }
        None => {
            let f_bands = dsp.mel_channels;
            if k > f_bands {
                return Err(Error::Config(format!(
                    "{k} concepts cannot get distinct bands out of {f_bands}"
                )));
            }
            let mut freqs = Vec::with_capacity(k);
            let mut bands = Vec::with_capacity(k);
            for i in 0..k {
                // spread across the interior of the mel range
                let band = ((i + 1) * f_bands) / (k + 1);
                let band = band.min(f_bands - 1);
                if bands.contains(&band) {
                    return Err(Error::Config(
                        "derived bands collide; too many concepts for this mel config".to_string(),
                    ));
                }
                freqs.push(fb.center_hz(band));
                bands.push(band);
            }
            Ok((freqs, bands))
        }
    }
}

/// Deterministic waveform for a recording: its concepts' tones with random
/// phases plus a white noise floor, all drawn from the recording seed.
pub fn synth_waveform(
    recording_seed: u64,
    concept_freqs: &[f64],
    num_samples: usize,
    tone_amplitude: f64,
    noise_amplitude: f64,
) -> Result<Waveform> {
    let mut rng = ChaCha8Rng::seed_from_u64(recording_seed);
    let amp = tone_amplitude / concept_freqs.len().max(1) as f64;
    let phases: Vec<f64> = concept_freqs
        .iter()
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let rate = INTERNAL_SAMPLE_RATE_HZ as f64;
    let mut samples = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let t = i as f64 / rate;
        let mut s = 0.0;
        for (&f, &phase) in concept_freqs.iter().zip(&phases) {
            s += amp * (std::f64::consts::TAU * f * t + phase).sin();
        }
        s += noise_amplitude * rng.gen_range(-1.0..1.0);
        samples.push(s.clamp(-1.0, 1.0));
    }
    Waveform::new(samples, INTERNAL_SAMPLE_RATE_HZ)
}

/// Word-count range per source, mirroring the character of each source:
/// short tag-like strings, sentence-length comments, title-length playlist
/// names, and one-or-two-word label strings.
fn annotation_len_range(source: SourceType) -> (usize, usize) {
    match source {
        SourceType::SF => (1, 3),
        SourceType::LF => (4, 8),
        SourceType::PL => (2, 4),
        SourceType::ASET => (1, 2),
    }
}

fn draw_annotation<R: Rng>(
    rng: &mut R,
    source: SourceType,
    pool: &[String],
    noise_rate: f64,
    noise_vocab: usize,
) -> String {
    let (lo, hi) = annotation_len_range(source);
    let len = rng.gen_range(lo..=hi);
    let mut words: Vec<String> = Vec::with_capacity(len);
    if source == SourceType::SF {
        // short-form tags always carry the concept name (pool entry 0)
        words.push(pool[0].clone());
    }
    while words.len() < len {
        if noise_rate > 0.0 && rng.gen::<f64>() < noise_rate {
            words.push(noise_word(rng.gen_range(0..noise_vocab)));
        } else {
            words.push(pool[rng.gen_range(0..pool.len())].clone());
        }
    }
    words.join(" ")
}

fn draw_distractor<R: Rng>(rng: &mut R, source: SourceType, noise_vocab: usize) -> String {
    let (lo, hi) = annotation_len_range(source);
    let len = rng.gen_range(lo..=hi);
    let words: Vec<String> = (0..len)
        .map(|_| noise_word(rng.gen_range(0..noise_vocab)))
        .collect();
    words.join(" ")
}

/// Generate the corpus. `window_frames` is the training context length T;
/// recording durations default to [T, 2T] frames so every recording is
/// eligible for window sampling.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    dsp: &SpectrogramConfig,
    window_frames: usize,
) -> Result<SyntheticCorpus> {
    spec.validate()?;
    dsp.validate(INTERNAL_SAMPLE_RATE_HZ)?;
    let (freqs, bands) = resolve_tone_bands(spec, dsp)?;
    let (min_frames, max_frames) = spec
        .duration_frames
        .unwrap_or((window_frames, 2 * window_frames));
    if min_frames < window_frames || min_frames > max_frames {
        return Err(Error::Config(format!(
            "duration range [{min_frames}, {max_frames}] must start at or above T = {window_frames}"
        )));
    }
    let win = dsp.window_samples(INTERNAL_SAMPLE_RATE_HZ);
    let hop = dsp.hop_samples(INTERNAL_SAMPLE_RATE_HZ);

    // vocabulary: concept pools in order, then the noise vocabulary
    let mut words = Vec::new();
    for k in 0..spec.num_concepts {
        for source in SourceType::ALL {
            words.extend(concept_pool(source, k, spec.words_per_pool));
        }
    }
    for i in 0..spec.noise_vocab_size {
        words.push(noise_word(i));
    }
    if spec.recording_titles {
        for r in 0..spec.num_recordings {
            words.push(title_word(r));
        }
    }
    let vocab = Vocabulary::with_words(words.iter().map(String::as_str))?;

    // one filter's spacing on the mel axis; jitter stays inside it
    let band_step_mel = (crate::dsp::mel::hz_to_mel(dsp.mel_fmax_hz)
        - crate::dsp::mel::hz_to_mel(dsp.mel_fmin_hz))
        / (dsp.mel_channels + 1) as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut recordings = Vec::with_capacity(spec.num_recordings);
    let mut audio = Vec::with_capacity(spec.num_recordings);
    let digits = spec.num_recordings.to_string().len();
    for r in 0..spec.num_recordings {
        let id = format!("rec{r:0width$}", width = digits);
        let n_concepts =
            rng.gen_range(spec.min_concepts_per_recording..=spec.max_concepts_per_recording);
        // sample distinct concepts
        let mut concepts: Vec<u32> = Vec::with_capacity(n_concepts);
        while concepts.len() < n_concepts {
            let c = rng.gen_range(0..spec.num_concepts) as u32;
            if !concepts.contains(&c) {
                concepts.push(c);
            }
        }
        concepts.sort_unstable();

        let mut annotations = Vec::new();
        for source in SourceType::ALL {
            for &c in &concepts {
                let pool = concept_pool(source, c as usize, spec.words_per_pool);
                let mut text = draw_annotation(
                    &mut rng,
                    source,
                    &pool,
                    spec.annotation_noise_rate,
                    spec.noise_vocab_size,
                );
                if source == SourceType::SF && spec.recording_titles {
                    text = format!("{text} {}", title_word(r));
                }
                annotations.push(Annotation { source, text });
            }
            if spec.distractor_rate > 0.0 && rng.gen::<f64>() < spec.distractor_rate {
                annotations.push(Annotation {
                    source,
                    text: draw_distractor(&mut rng, source, spec.noise_vocab_size),
                });
            }
        }

        let frames = rng.gen_range(min_frames..=max_frames);
        let num_samples = (frames - 1) * hop + win;
        let recording_seed = rng.gen::<u64>();
        let concept_freqs: Vec<f64> = concepts
            .iter()
            .map(|&c| {
                let base_mel = crate::dsp::mel::hz_to_mel(freqs[c as usize]);
                let detune = rng.gen_range(-1.0..1.0) * spec.tone_jitter * band_step_mel;
                crate::dsp::mel::mel_to_hz(base_mel + detune)
            })
            .collect();
        let waveform = synth_waveform(
            recording_seed,
            &concept_freqs,
            num_samples,
            spec.tone_amplitude,
            spec.noise_amplitude,
        )?;

        let labels = concepts
            .iter()
            .map(|&c| concept_name(c as usize))
            .collect();
        recordings.push(Recording {
            id: id.clone(),
            audio: None,
            synthetic_seed: Some(recording_seed),
            annotations,
            concepts: Some(concepts),
            labels: Some(labels),
        });
        audio.push((id, waveform));
    }

    let mut corpus = Corpus::new(recordings)?;
    for (id, w) in audio {
        corpus.set_in_memory_audio(&id, w);
    }
    Ok(SyntheticCorpus {
        corpus,
        vocab,
        concept_names: (0..spec.num_concepts).map(concept_name).collect(),
        tone_frequencies_hz: freqs,
        tone_bands: bands,
    })
}

/// Labeled sentences for training the descriptiveness filter: descriptive
/// annotations (label 1) vs pure-noise distractors (label 0), alternating.
pub fn labeled_filter_sentences(spec: &SyntheticSpec, count: usize, seed: u64) -> Vec<(String, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        if i % 2 == 0 {
            let k = rng.gen_range(0..spec.num_concepts);
            let source = SourceType::ALL[rng.gen_range(0..4)];
            let pool = concept_pool(source, k, spec.words_per_pool);
            out.push((
                draw_annotation(
                    &mut rng,
                    source,
                    &pool,
                    spec.annotation_noise_rate,
                    spec.noise_vocab_size,
                ),
                true,
            ));
        } else {
            let source = SourceType::ALL[rng.gen_range(0..4)];
            out.push((draw_distractor(&mut rng, source, spec.noise_vocab_size), false));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::spectrogram::compute_log_mel;
    use std::collections::HashSet;

    fn dsp() -> SpectrogramConfig {
        SpectrogramConfig {
            mel_channels: 32,
            ..Default::default()
        }
    }

    fn quick_spec() -> SyntheticSpec {
        SyntheticSpec {
            num_concepts: 3,
            num_recordings: 12,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&quick_spec(), &dsp(), 50).unwrap();
        let b = generate_synthetic(&quick_spec(), &dsp(), 50).unwrap();
        assert_eq!(a.corpus.recordings(), b.corpus.recordings());
        for rec in a.corpus.recordings() {
            assert_eq!(
                a.corpus.waveform(&rec.id).unwrap(),
                b.corpus.waveform(&rec.id).unwrap()
            );
        }
    }

    #[test]
    fn clean_annotations_use_only_concept_pools_and_own_title() {
        let spec = quick_spec(); // zero noise, zero distractors
        let out = generate_synthetic(&spec, &dsp(), 50).unwrap();
        for (r, rec) in out.corpus.recordings().iter().enumerate() {
            let concepts = rec.concepts.as_ref().unwrap();
            let mut allowed: HashSet<String> = concepts
                .iter()
                .flat_map(|&c| {
                    SourceType::ALL
                        .iter()
                        .flat_map(move |&s| concept_pool(s, c as usize, spec.words_per_pool))
                })
                .collect();
            allowed.insert(format!("track{r}"));
            for ann in &rec.annotations {
                for word in ann.text.split_whitespace() {
                    assert!(allowed.contains(word), "{word} outside pools of {concepts:?}");
                }
            }
        }
    }

    #[test]
    fn concept_sharing_controls_vocabulary_overlap() {
        let spec = SyntheticSpec {
            num_concepts: 4,
            num_recordings: 30,
            max_concepts_per_recording: 1,
            seed: 9,
            recording_titles: false, // isolate pool-word structure
            ..Default::default()
        };
        let out = generate_synthetic(&spec, &dsp(), 50).unwrap();
        let words_of = |rec: &Recording| -> HashSet<String> {
            rec.annotations
                .iter()
                .flat_map(|a| a.text.split_whitespace().map(str::to_string))
                .collect()
        };
        let recs = out.corpus.recordings();
        for a in recs {
            for b in recs {
                let (ca, cb) = (a.concepts.as_ref().unwrap(), b.concepts.as_ref().unwrap());
                let share = ca.iter().any(|c| cb.contains(c));
                let overlap = !words_of(a).is_disjoint(&words_of(b));
                if share {
                    assert!(overlap, "{} and {} share a concept but no words", a.id, b.id);
                } else {
                    assert!(!overlap, "{} and {} are concept-disjoint but share words", a.id, b.id);
                }
            }
        }
    }

    #[test]
    fn spectrogram_argmax_tracks_planted_bands() {
        let spec = SyntheticSpec {
            num_concepts: 4,
            num_recordings: 8,
            seed: 3,
            ..Default::default()
        };
        let cfg = dsp();
        let out = generate_synthetic(&spec, &cfg, 50).unwrap();
        for rec in out.corpus.recordings() {
            let w = out.corpus.waveform(&rec.id).unwrap();
            let s = compute_log_mel(&w, &cfg).unwrap();
            let planted: Vec<usize> = rec
                .concepts
                .as_ref()
                .unwrap()
                .iter()
                .map(|&c| out.tone_bands[c as usize])
                .collect();
            let mut hits = 0usize;
            for frame in 0..s.num_frames() {
                let col = s.frame_column(frame);
                let argmax = col
                    .iter()
                    .enumerate()
                    .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                    .unwrap()
                    .0;
                if planted.contains(&argmax) {
                    hits += 1;
                }
            }
            let rate = hits as f64 / s.num_frames() as f64;
            assert!(rate > 0.99, "{}: only {rate:.3} of frames match", rec.id);
        }
    }

    #[test]
    fn colliding_explicit_tones_are_a_spec_error() {
        let spec = SyntheticSpec {
            num_concepts: 2,
            tone_frequencies_hz: Some(vec![440.0, 441.0]),
            ..Default::default()
        };
        assert!(matches!(
            generate_synthetic(&spec, &dsp(), 50),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn distractors_appear_at_the_requested_rate() {
        let spec = SyntheticSpec {
            num_concepts: 2,
            num_recordings: 200,
            max_concepts_per_recording: 1,
            distractor_rate: 0.5,
            seed: 11,
            ..Default::default()
        };
        let out = generate_synthetic(&spec, &dsp(), 50).unwrap();
        let mut distractors = 0usize;
        let mut chances = 0usize;
        for rec in out.corpus.recordings() {
            // with one concept per recording, anything beyond one annotation
            // per source is a distractor
            for source in SourceType::ALL {
                chances += 1;
                distractors += rec.annotations_of(source).count() - 1;
            }
        }
        let rate = distractors as f64 / chances as f64;
        assert!((rate - 0.5).abs() < 0.1, "observed distractor rate {rate}");
    }

    #[test]
    fn filter_sentences_are_balanced_and_disjoint() {
        let spec = quick_spec();
        let labeled = labeled_filter_sentences(&spec, 200, 42);
        assert_eq!(labeled.len(), 200);
        assert_eq!(labeled.iter().filter(|(_, y)| *y).count(), 100);
        for (text, y) in &labeled {
            let noisy = text.split_whitespace().all(|w| w.starts_with("chatter"));
            if *y {
                assert!(!noisy);
            } else {
                assert!(noisy);
            }
        }
    }
}
