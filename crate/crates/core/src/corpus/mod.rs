//! Corpus data model, pair sampling, batch mixing, and the synthetic
//! oracle-corpus generator.

pub mod io;
pub mod sampling;
pub mod synthetic;
pub mod types;

pub use io::{load_corpus, save_corpus};
pub use sampling::{MixingSpec, SampledPair, Sampler, SamplerSettings};
pub use synthetic::{generate_synthetic, SyntheticCorpus, SyntheticSpec};
pub use types::{build_aset_pairs, Annotation, Corpus, Recording, SourceType};
