//! Word-level vocabulary and tokenizer.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

const UNK_CANDIDATES: [&str; 3] = ["[UNK]", "<unk>", "<|endoftext|>"];
const PUNCTUATION: &str = ".,:;()-/%+'\"!?[]#=<>|_";

/// Bijection between tokens and ids `0..V`.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    unk: u32,
    /// Words missing from the vocabulary are split into `##` pieces.
    wordpiece: bool,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("token {i} is empty or contains whitespace")));
            }
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate token `{t}` at line {}", i + 1)));
            }
        }
        let unk = UNK_CANDIDATES
            .iter()
            .find_map(|u| ids.get(*u).copied())
            .ok_or_else(|| Error::Format("vocabulary has no unknown-token entry".into()))?;
        let wordpiece = tokens.iter().any(|t| t.starts_with("##") && t.len() > 2);
        Ok(Self {
            tokens,
            ids,
            unk,
            wordpiece,
        })
    }

    /// Self-contained vocabulary covering the default prompt template, padded
    /// with `unusedN` entries to `size`.
    pub fn builtin(size: usize) -> Result<Self> {
        let mut tokens: Vec<String> = vec!["[UNK]".into(), "[PAD]".into()];
        let mut push = |t: &str| {
            if !tokens.iter().any(|x| x == t) {
                tokens.push(t.to_string());
            }
        };
        PUNCTUATION.chars().for_each(|c| push(&c.to_string()));
        for w in super::TEMPLATE_WORDS {
            push(w);
        }
        for i in 0..200 {
            push(&i.to_string());
        }
        if tokens.len() > size {
            return Err(Error::Argument(format!(
                "builtin vocabulary needs at least {} entries, asked for {size}",
                tokens.len()
            )));
        }
        let mut k = 0;
        while tokens.len() < size {
            tokens.push(format!("unused{k}"));
            k += 1;
        }
        Self::new(tokens)
    }

    /// One token per line; the line number is the id.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Whitespace split, then the longest run of punctuation/alphanumeric
    /// pieces that is a vocabulary entry; leftover words map to UNK (or to
    /// `##` pieces for WordPiece vocabularies).
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            let pieces = basic_pieces(chunk);
            let mut i = 0;
            while i < pieces.len() {
                let mut matched = None;
                for j in (i + 1..=pieces.len()).rev() {
                    let cand: String = pieces[i..j].concat();
                    if let Some(id) = self.id(&cand) {
                        matched = Some((id, j));
                        break;
                    }
                }
                match matched {
                    Some((id, j)) => {
                        out.push(id);
                        i = j;
                    }
                    None => {
                        self.unknown_word(pieces[i], &mut out);
                        i += 1;
                    }
                }
            }
        }
        out
    }

    fn unknown_word(&self, word: &str, out: &mut Vec<u32>) {
        let lower = word.to_lowercase();
        if let Some(id) = self.id(&lower) {
            out.push(id);
            return;
        }
        if self.wordpiece {
            let chars: Vec<char> = lower.chars().collect();
            let mut pieces = Vec::new();
            let mut start = 0;
            while start < chars.len() {
                let mut found = None;
                for end in (start + 1..=chars.len()).rev() {
                    let s: String = chars[start..end].iter().collect();
                    let key = if start == 0 { s } else { format!("##{s}") };
                    if let Some(id) = self.id(&key) {
                        found = Some((id, end));
                        break;
                    }
                }
                match found {
                    Some((id, end)) => {
                        pieces.push(id);
                        start = end;
                    }
                    None => {
                        out.push(self.unk);
                        return;
                    }
                }
            }
            out.extend(pieces);
            return;
        }
        out.push(self.unk);
    }

    pub fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let words: Result<Vec<&str>> = ids
            .iter()
            .map(|&id| {
                self.token(id).ok_or(Error::Bounds {
                    what: "token id",
                    index: id as usize,
                    len: self.len(),
                })
            })
            .collect();
        Ok(words?.join(" "))
    }
}

/// Alphanumeric runs and single punctuation characters.
fn basic_pieces(chunk: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in chunk.char_indices() {
        if c.is_alphanumeric() {
            start.get_or_insert(i);
        } else {
            if let Some(s) = start.take() {
                out.push(&chunk[s..i]);
            }
            out.push(&chunk[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = start {
        out.push(&chunk[s..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_and_unknown_words() {
        let v = Vocab::builtin(512).unwrap();
        let ids = v.tokenize("forecast CDR-SB");
        assert_eq!(ids.len(), 2);
        assert!(ids.iter().all(|&i| i != v.unk_id()));
        assert_eq!(v.tokenize("zzqx"), vec![v.unk_id()]);
        assert!(v.tokenize("").is_empty());
    }

    #[test]
    fn punctuation_splits_off() {
        let v = Vocab::builtin(512).unwrap();
        let ids = v.tokenize("CDR-SB, 73.5");
        let words: Vec<&str> = ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(words, ["CDR-SB", ",", "73", ".", "5"]);
    }

    #[test]
    fn builtin_size_and_bijection() {
        let v = Vocab::builtin(512).unwrap();
        assert_eq!(v.len(), 512);
        for i in 0..512u32 {
            assert_eq!(v.id(v.token(i).unwrap()), Some(i));
        }
        assert!(Vocab::builtin(10).is_err());
    }

    #[test]
    fn file_vocab_with_wordpiece() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "[PAD]\n[UNK]\nforecast\nplay\n##ing\n##s\n").unwrap();
        let v = Vocab::from_file(&path).unwrap();
        assert_eq!(v.unk_id(), 1);
        assert_eq!(v.tokenize("Playing plays forecast"), vec![3, 4, 3, 5, 2]);
        assert_eq!(v.tokenize("qq"), vec![1]);
    }

    #[test]
    fn bad_files_rejected() {
        assert!(Vocab::new(vec!["a".into(), "a".into(), "[UNK]".into()]).is_err());
        assert!(Vocab::new(vec!["a".into()]).is_err());
    }

    proptest! {
        #[test]
        fn detokenize_round_trip(ids in prop::collection::vec(0u32..512, 0..40)) {
            let v = Vocab::builtin(512).unwrap();
            let text = v.detokenize(&ids).unwrap();
            prop_assert_eq!(v.tokenize(&text), ids);
        }
    }
}
