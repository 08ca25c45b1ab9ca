//! Greedy longest-match wordpiece tokenization to fixed-length sequences.

use crate::error::{Error, Result};
use crate::text::vocab::{Vocabulary, CLS_ID, CONTINUATION, PAD_ID, UNK_ID};

/// Words longer than this map straight to `[UNK]`.
const MAX_WORD_CHARS: usize = 100;

/// A `[CLS]`-prefixed, `[PAD]`-padded id sequence of fixed length `n` with
/// its attention mask (1 = real token, and always a prefix of ones).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<u32>,
    attention_mask: Vec<u8>,
}

impl TokenSequence {
    /// Assemble a sequence from raw parts. The mask must be a prefix of ones
    /// and position 0 must be `[CLS]`; ids at masked positions are ignored by
    /// every consumer, so they are not constrained here.
    pub fn from_parts(ids: Vec<u32>, attention_mask: Vec<u8>) -> Result<Self> {
        if ids.len() != attention_mask.len() || ids.len() < 2 {
            return Err(Error::Argument(
                "ids and mask must have equal length >= 2".to_string(),
            ));
        }
        if ids[0] != CLS_ID || attention_mask[0] != 1 {
            return Err(Error::Argument("position 0 must be a real [CLS]".to_string()));
        }
        let real = attention_mask.iter().take_while(|&&m| m == 1).count();
        if attention_mask[real..].iter().any(|&m| m != 0) {
            return Err(Error::Argument(
                "attention mask must be a prefix of ones".to_string(),
            ));
        }
        Ok(TokenSequence {
            ids,
            attention_mask,
        })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn attention_mask(&self) -> &[u8] {
        &self.attention_mask
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of real (unpadded) tokens, including `[CLS]`.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().map(|&m| m as usize).sum()
    }

    /// The unpadded portion of the ids.
    pub fn real_ids(&self) -> &[u32] {
        &self.ids[..self.real_len()]
    }
}

/// Split into lowercase words: runs of alphanumeric characters, with each
/// punctuation character its own word.
fn basic_split(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if c.is_alphanumeric() {
            current.push(c);
        } else {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(c.to_string());
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Greedy longest-match segmentation of one word; `None` means the word
/// cannot be covered and becomes a single `[UNK]`.
fn wordpiece(word: &str, vocab: &Vocabulary) -> Option<Vec<u32>> {
    if word.chars().count() > MAX_WORD_CHARS {
        return None;
    }
    let chars: Vec<char> = word.chars().collect();
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while end > start {
            let mut piece: String = chars[start..end].iter().collect();
            if start > 0 {
                piece = format!("{CONTINUATION}{piece}");
            }
            if let Some(id) = vocab.id_of(&piece) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        match found {
            Some(id) => {
                pieces.push(id);
                start = end;
            }
            None => return None,
        }
    }
    Some(pieces)
}

/// Tokenize any string to exactly `n` ids: lowercase, whitespace/punctuation
/// split, wordpiece with `[UNK]` fallback, `[CLS]` prepended, then truncated
/// or padded.
pub fn tokenize(text: &str, vocab: &Vocabulary, n: usize) -> Result<TokenSequence> {
    if n < 2 {
        return Err(Error::Argument(format!("sequence length {n} must be >= 2")));
    }
    let mut ids = vec![CLS_ID];
    for word in basic_split(text) {
        match wordpiece(&word, vocab) {
            Some(pieces) => ids.extend(pieces),
            None => ids.push(UNK_ID),
        }
        if ids.len() >= n {
            break;
        }
    }
    ids.truncate(n);
    let real = ids.len();
    ids.resize(n, PAD_ID);
    let mut attention_mask = vec![0u8; n];
    for m in attention_mask[..real].iter_mut() {
        *m = 1;
    }
    Ok(TokenSequence {
        ids,
        attention_mask,
    })
}

/// Reassemble words from unpadded ids, skipping `[CLS]`/`[PAD]` and fusing
/// `##` continuations. Inverse of [`tokenize`] on in-vocabulary text.
pub fn detokenize(ids: &[u32], vocab: &Vocabulary) -> String {
    let mut words: Vec<String> = Vec::new();
    for &id in ids {
        if id == CLS_ID || id == PAD_ID {
            continue;
        }
        let tok = vocab.token(id).unwrap_or("[UNK]");
        if let Some(rest) = tok.strip_prefix(CONTINUATION) {
            if let Some(last) = words.last_mut() {
                last.push_str(rest);
                continue;
            }
        }
        words.push(tok.to_string());
    }
    words.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        Vocabulary::with_words([
            "rock", "jazz", "lo", "##fi", "##fis", "beats", "the", "piano",
        ])
        .unwrap()
    }

    #[test]
    fn empty_string_is_cls_then_pads() {
        let t = tokenize("", &vocab(), 5).unwrap();
        assert_eq!(t.ids(), &[CLS_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]);
        assert_eq!(t.attention_mask(), &[1, 0, 0, 0, 0]);
    }

    #[test]
    fn single_word_lookup() {
        let t = tokenize("rock", &vocab(), 4).unwrap();
        let rock = vocab().id_of("rock").unwrap();
        assert_eq!(t.ids(), &[CLS_ID, rock, PAD_ID, PAD_ID]);
    }

    #[test]
    fn overlong_expansion_truncates_to_n() {
        let text = "rock jazz beats piano the lofi rock jazz";
        let t = tokenize(text, &vocab(), 4).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.attention_mask(), &[1, 1, 1, 1]);
    }

    #[test]
    fn greedy_longest_match_prefers_longer_pieces() {
        let v = vocab();
        // "lofis" -> "lo" + "##fis" (not "##fi" + dead end)
        let t = tokenize("lofis", &v, 6).unwrap();
        assert_eq!(
            t.real_ids(),
            &[CLS_ID, v.id_of("lo").unwrap(), v.id_of("##fis").unwrap()]
        );
    }

    #[test]
    fn unknown_word_is_single_unk() {
        let t = tokenize("zzzz", &vocab(), 4).unwrap();
        assert_eq!(t.real_ids(), &[CLS_ID, UNK_ID]);
        let long_word = "a".repeat(200);
        let t = tokenize(&long_word, &vocab(), 4).unwrap();
        assert_eq!(t.real_ids(), &[CLS_ID, UNK_ID]);
    }

    #[test]
    fn punctuation_splits_and_case_folds() {
        let v = vocab();
        let t = tokenize("Rock,JAZZ", &v, 8).unwrap();
        // "," is not in the vocabulary -> UNK between the two words
        assert_eq!(
            t.real_ids(),
            &[
                CLS_ID,
                v.id_of("rock").unwrap(),
                UNK_ID,
                v.id_of("jazz").unwrap()
            ]
        );
    }

    #[test]
    fn round_trip_on_in_vocab_words() {
        let v = vocab();
        let text = "rock jazz beats lofis";
        let t = tokenize(text, &v, 16).unwrap();
        let rebuilt = detokenize(t.real_ids(), &v);
        let t2 = tokenize(&rebuilt, &v, 16).unwrap();
        assert_eq!(t.ids(), t2.ids());
    }

    proptest! {
        #[test]
        fn output_is_always_exactly_n(text in ".{0,200}", n in 2usize..40) {
            let t = tokenize(&text, &vocab(), n).unwrap();
            prop_assert_eq!(t.len(), n);
            prop_assert_eq!(t.attention_mask().len(), n);
            prop_assert_eq!(t.ids()[0], CLS_ID);
            // mask is a prefix of ones
            let real = t.real_len();
            prop_assert!(t.attention_mask()[..real].iter().all(|&m| m == 1));
            prop_assert!(t.attention_mask()[real..].iter().all(|&m| m == 0));
            prop_assert!(t.ids()[real..].iter().all(|&id| id == PAD_ID));
            // determinism
            let t2 = tokenize(&text, &vocab(), n).unwrap();
            prop_assert_eq!(t.ids(), t2.ids());
        }
    }
}
