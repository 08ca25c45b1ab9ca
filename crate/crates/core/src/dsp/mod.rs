//! Audio frontend: waveforms to log-mel spectrogram context windows.
//!
//! Every operation here is a pure function of its inputs (plus an explicit
//! seed for SpecAugment), so callers may fan work across threads freely.

pub mod augment;
pub mod mel;
pub mod spectrogram;
pub mod wav;

pub use augment::{spec_augment, SpecAugmentConfig};
pub use mel::MelFilterbank;
pub use spectrogram::{
    compute_log_mel, extract_window, pad_or_trim_to_window, read_spectrogram, write_spectrogram,
    ContextWindow, LogMelSpectrogram, SpectrogramConfig, Waveform, INTERNAL_SAMPLE_RATE_HZ,
};
pub use wav::{load_wav, load_wav_as_internal, write_wav};
