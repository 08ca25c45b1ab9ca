//! Token vocabulary with reserved ids and the `##` continuation prefix.
//!
//! On disk a vocabulary is a plain UTF-8 text file, one token per line,
//! line number = id, so tests can ship tiny vocabularies.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "[PAD]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;

/// Wordpiece continuation prefix.
pub const CONTINUATION: &str = "##";

#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Build from the full ordered token list (reserved tokens included).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3
            || tokens[PAD_ID as usize] != PAD_TOKEN
            || tokens[CLS_ID as usize] != CLS_TOKEN
            || tokens[UNK_ID as usize] != UNK_TOKEN
        {
            return Err(Error::Vocab(format!(
                "first tokens must be {PAD_TOKEN}, {CLS_TOKEN}, {UNK_TOKEN}"
            )));
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token: tokens,
        })
    }

    /// Reserved tokens plus the given words, in order, duplicates dropped.
    pub fn with_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut tokens = vec![
            PAD_TOKEN.to_string(),
            CLS_TOKEN.to_string(),
            UNK_TOKEN.to_string(),
        ];
        let mut seen: HashMap<String, ()> = HashMap::new();
        for w in words {
            let w = w.as_ref().to_string();
            if w.is_empty() || seen.contains_key(&w) {
                continue;
            }
            seen.insert(w.clone(), ());
            tokens.push(w);
        }
        Vocabulary::from_tokens(tokens)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        let tokens: Vec<String> = content.lines().map(str::to_string).collect();
        Vocabulary::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for tok in &self.id_to_token {
            out.push_str(tok);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_tokens_are_enforced() {
        assert!(Vocabulary::from_tokens(vec!["[PAD]".into(), "[CLS]".into()]).is_err());
        assert!(Vocabulary::from_tokens(vec![
            "[CLS]".into(),
            "[PAD]".into(),
            "[UNK]".into()
        ])
        .is_err());
        let v = Vocabulary::with_words(["rock", "jazz"]).unwrap();
        assert_eq!(v.id_of("[PAD]"), Some(PAD_ID));
        assert_eq!(v.id_of("rock"), Some(3));
    }

    #[test]
    fn duplicates_are_rejected_in_raw_lists() {
        let err = Vocabulary::from_tokens(vec![
            "[PAD]".into(),
            "[CLS]".into(),
            "[UNK]".into(),
            "x".into(),
            "x".into(),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Vocab(_)));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::with_words(["lo", "##fi", "beats"]).unwrap();
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded.tokens(), v.tokens());
        assert_eq!(loaded.id_of("##fi"), Some(4));
    }
}
