//! Text frontend: vocabulary, wordpiece tokenization, annotation filters.

pub mod filter;
pub mod tokenizer;
pub mod vocab;

pub use filter::{
    apply_sf_rules, filter_lf, load_labeled_tsv, save_labeled_tsv,
    train_descriptiveness_classifier, ClassifierTrainConfig, DescriptivenessClassifier,
    FilterRuleSet,
};
pub use tokenizer::{detokenize, tokenize, TokenSequence};
pub use vocab::{Vocabulary, CLS_ID, CLS_TOKEN, CONTINUATION, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};
