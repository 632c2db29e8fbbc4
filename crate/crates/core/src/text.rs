//! Word-level vocabulary with reserved special symbols.
//!
//! Ids `0..7` are reserved for the specials in the order of [`Special::ALL`];
//! corpus tokens follow, most frequent first.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Special {
    Pad,
    Cls,
    Mask,
    Sot,
    Bos,
    Eos,
    Unk,
}

impl Special {
    pub const ALL: [Special; 7] = [
        Special::Pad,
        Special::Cls,
        Special::Mask,
        Special::Sot,
        Special::Bos,
        Special::Eos,
        Special::Unk,
    ];

    pub const fn id(self) -> usize {
        self as usize
    }

    pub const fn symbol(self) -> &'static str {
        match self {
            Special::Pad => "[PAD]",
            Special::Cls => "[CLS]",
            Special::Mask => "[MASK]",
            Special::Sot => "[SOT]",
            Special::Bos => "[BOS]",
            Special::Eos => "[EOS]",
            Special::Unk => "[UNK]",
        }
    }
}

pub const PAD: usize = Special::Pad.id();
pub const CLS: usize = Special::Cls.id();
pub const MASK: usize = Special::Mask.id();
pub const SOT: usize = Special::Sot.id();
pub const BOS: usize = Special::Bos.id();
pub const EOS: usize = Special::Eos.id();
pub const UNK: usize = Special::Unk.id();

/// Number of reserved ids; the first corpus token has this id.
pub const NUM_SPECIALS: usize = Special::ALL.len();

pub fn is_special(id: usize) -> bool {
    id < NUM_SPECIALS
}

/// Splits text into tokens and maps ids back to text.
///
/// The model only ever sees ids, so a subword scheme can replace the
/// word-level one behind this trait.
pub trait Tokenizer {
    fn encode(&self, text: &str) -> Vec<usize>;
    fn decode(&self, ids: &[usize]) -> Result<String>;
    fn vocab_size(&self) -> usize;
}

/// Lowercased whitespace tokens.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Counts lowercased whitespace tokens, keeps those seen at least
    /// `min_freq` times and truncates to `max_size` corpus tokens, breaking
    /// frequency ties lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_freq: usize, max_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Vocab(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        if min_freq == 0 {
            return Err(Error::Vocab("min_freq must be at least 1".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for utterance in corpus {
            for tok in normalize(utterance.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let reserved: Vec<&str> = Special::ALL.iter().map(|s| s.symbol()).collect();
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(tok, n)| *n >= min_freq && !reserved.contains(&tok.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        kept.truncate(max_size);
        Ok(Self::from_tokens(kept.into_iter().map(|(t, _)| t)))
    }

    fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let id_to_token: Vec<String> = Special::ALL
            .iter()
            .map(|s| s.symbol().to_string())
            .chain(tokens)
            .collect();
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Corpus tokens, in id order.
    pub fn content_tokens(&self) -> &[String] {
        &self.id_to_token[NUM_SPECIALS..]
    }

    /// Writes one token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.id_to_token.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        Self::from_lines(&lines).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: msg.0,
            message: msg.1,
        })
    }

    /// Rebuilds a vocabulary from its full id-ordered token list, specials first.
    pub fn from_token_list(tokens: &[String]) -> Result<Self> {
        let lines: Vec<&str> = tokens.iter().map(String::as_str).collect();
        Self::from_lines(&lines).map_err(|(i, m)| Error::Vocab(format!("token {}: {m}", i - 1)))
    }

    /// Full id-ordered token list, specials first.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    fn from_lines(lines: &[&str]) -> std::result::Result<Self, (usize, String)> {
        if lines.len() < NUM_SPECIALS {
            return Err((
                lines.len() + 1,
                "vocabulary file is missing special tokens".into(),
            ));
        }
        for (i, s) in Special::ALL.iter().enumerate() {
            if lines[i] != s.symbol() {
                return Err((
                    i + 1,
                    format!("expected {} at id {i}, found {:?}", s.symbol(), lines[i]),
                ));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (i, tok) in lines.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err((i + 1, format!("invalid token {tok:?}")));
            }
            if !seen.insert(*tok) {
                return Err((i + 1, format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self::from_tokens(
            lines[NUM_SPECIALS..].iter().map(|t| t.to_string()),
        ))
    }

    /// Lowercases, splits on whitespace and maps out-of-vocabulary tokens to `[UNK]`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        normalize(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// Space-joins tokens, dropping every special except `[UNK]`.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token(id).ok_or_else(|| {
                Error::Vocab(format!(
                    "id {id} out of range for vocabulary of {}",
                    self.len()
                ))
            })?;
            if !is_special(id) || id == UNK {
                out.push(tok);
            }
        }
        Ok(out.join(" "))
    }
}

impl Tokenizer for Vocabulary {
    fn encode(&self, text: &str) -> Vec<usize> {
        Vocabulary::encode(self, text)
    }

    fn decode(&self, ids: &[usize]) -> Result<String> {
        Vocabulary::decode(self, ids)
    }

    fn vocab_size(&self) -> usize {
        self.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn specials_are_fixed() {
        let v = Vocabulary::build(&["x"], 1, 10).unwrap();
        for (i, s) in Special::ALL.iter().enumerate() {
            assert_eq!(v.id(s.symbol()), Some(i));
        }
        assert_eq!((PAD, CLS, MASK, SOT, BOS, EOS, UNK), (0, 1, 2, 3, 4, 5, 6));
    }

    #[test]
    fn build_counts_frequencies() {
        let v = Vocabulary::build(&["a b", "a"], 1, 100).unwrap();
        assert_eq!(v.len(), NUM_SPECIALS + 2);
        assert_eq!(v.content_tokens(), &["a".to_string(), "b".to_string()]);

        let v = Vocabulary::build(&["a b", "a"], 2, 100).unwrap();
        assert_eq!(v.content_tokens(), &["a".to_string()]);

        let v = Vocabulary::build(&["", "  ", "a"], 1, 100).unwrap();
        assert_eq!(v.len(), NUM_SPECIALS + 1);
    }

    #[test]
    fn build_truncates_with_lexicographic_ties() {
        let v = Vocabulary::build(&["d c b a", "d"], 1, 2).unwrap();
        assert_eq!(v.content_tokens(), &["d".to_string(), "a".to_string()]);
    }

    #[test]
    fn build_rejects_bad_input() {
        assert!(Vocabulary::build::<&str>(&[], 1, 10).is_err());
        assert!(Vocabulary::build(&["a"], 0, 10).is_err());
    }

    #[test]
    fn corpus_cannot_claim_special_symbols() {
        let v = Vocabulary::build(&["[CLS] [cls] hi"], 1, 10).unwrap();
        // Lowercasing means corpus text can only produce "[cls]", an ordinary token.
        assert_eq!(v.id("[CLS]"), Some(CLS));
        assert!(v.id("[cls]").unwrap() >= NUM_SPECIALS);
        assert_eq!(v.len(), NUM_SPECIALS + 2);
    }

    #[test]
    fn encode_examples() {
        let v = Vocabulary::build(&["a b"], 1, 10).unwrap();
        assert_eq!(
            v.encode("A b"),
            vec![v.id("a").unwrap(), v.id("b").unwrap()]
        );
        assert!(v.encode("").is_empty());
        assert_eq!(v.encode("zzz"), vec![UNK]);
    }

    #[test]
    fn decode_drops_specials_but_keeps_unk() {
        let v = Vocabulary::build(&["a b"], 1, 10).unwrap();
        let a = v.id("a").unwrap();
        assert_eq!(v.decode(&[BOS, a, UNK, EOS, PAD]).unwrap(), "a [UNK]");
        assert!(v.decode(&[99]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let v = Vocabulary::build(&["hello there", "general kenobi hello"], 1, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().nth(7), Some("hello"));
        assert_eq!(Vocabulary::load(&path).unwrap(), v);

        std::fs::write(&path, "[PAD]\n[CLS]\n").unwrap();
        assert!(matches!(Vocabulary::load(&path), Err(Error::Parse { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_in_vocab(words in proptest::collection::vec("[a-zA-Z]{1,6}", 0..12), sep in "[ \t]{1,3}") {
            let text = words.join(&sep);
            let v = Vocabulary::build(&[text.as_str(), "filler"], 1, 1000).unwrap();
            let back = v.decode(&v.encode(&text)).unwrap();
            prop_assert_eq!(back, normalize(&text).join(" "));
        }
    }
}
