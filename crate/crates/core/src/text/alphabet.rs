//! The fixed character alphabet and description encoding.

use std::collections::HashMap;

use crate::error::{CvlError, Result};
use crate::tensor::Tensor;

/// Length every description is padded or truncated to.
pub const SEQ_LEN: usize = 201;

/// Alphabet symbols in index order: 26 letters, 10 digits, space and 31
/// ASCII punctuation marks (everything printable except the backtick).
/// Padding and unknown follow at indices 68 and 69.
pub const SYMBOLS: &str = "abcdefghijklmnopqrstuvwxyz0123456789 !\"#$%&'()*+,-./:;<=>?@[\\]^_{|}~";

pub const ALPHABET_SIZE: usize = 70;

#[derive(Clone, Debug)]
pub struct Alphabet {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
    pub pad_index: usize,
    pub unknown_index: usize,
}

impl Alphabet {
    pub fn size(&self) -> usize {
        self.symbols.len() + 2
    }

    pub fn index_of(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(self.unknown_index)
    }

    pub fn symbol(&self, i: usize) -> Option<char> {
        self.symbols.get(i).copied()
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        build_alphabet()
    }
}

pub fn build_alphabet() -> Alphabet {
    let symbols: Vec<char> = SYMBOLS.chars().collect();
    let index = symbols.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let pad_index = symbols.len();
    Alphabet {
        symbols,
        index,
        pad_index,
        unknown_index: pad_index + 1,
    }
}

/// A description as a sequence of alphabet indices of length [`SEQ_LEN`];
/// the one-hot matrix is materialised on demand.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EncodedText {
    pub indices: Vec<usize>,
    pub effective_length: usize,
    pub alphabet_size: usize,
}

impl EncodedText {
    /// `A x L` one-hot matrix.
    pub fn onehot(&self) -> Tensor {
        let len = self.indices.len();
        let mut t = Tensor::zeros(&[self.alphabet_size, len]);
        for (pos, &c) in self.indices.iter().enumerate() {
            t.data_mut()[c * len + pos] = 1.0;
        }
        t
    }
}

pub fn encode_chars(text: &str, alphabet: &Alphabet) -> Result<EncodedText> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(CvlError::EmptyDescription);
    }
    let mut indices: Vec<usize> = trimmed
        .chars()
        .flat_map(char::to_lowercase)
        .take(SEQ_LEN)
        .map(|c| alphabet.index_of(c))
        .collect();
    let effective_length = indices.len();
    indices.resize(SEQ_LEN, alphabet.pad_index);
    Ok(EncodedText {
        indices,
        effective_length,
        alphabet_size: alphabet.size(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabet_layout() {
        let a = build_alphabet();
        assert_eq!(a.index_of('a'), 0);
        assert_eq!(a.index_of('z'), 25);
        assert_eq!(a.index_of('0'), 26);
        assert_eq!(a.index_of(' '), 36);
        // enumerate the documented groups independently
        let letters = ('a'..='z').count();
        let digits = ('0'..='9').count();
        let punct = (33u8..=126).filter(|b| !b.is_ascii_alphanumeric() && *b != b'`').count();
        assert_eq!(letters + digits + 1 + punct + 2, 70);
        assert_eq!(a.size(), ALPHABET_SIZE);
        assert_ne!(a.pad_index, a.unknown_index);
        assert_eq!(a.index_of('€'), a.unknown_index);
        assert_eq!(a.index_of('`'), a.unknown_index);
    }

    #[test]
    fn indices_are_a_bijection() {
        let a = build_alphabet();
        let mut seen = vec![false; a.size()];
        for c in SYMBOLS.chars() {
            let i = a.index_of(c);
            assert!(!seen[i]);
            seen[i] = true;
        }
        seen[a.pad_index] = true;
        seen[a.unknown_index] = true;
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn short_text_is_padded() {
        let a = build_alphabet();
        let e = encode_chars("abc", &a).unwrap();
        assert_eq!(e.effective_length, 3);
        assert_eq!(&e.indices[..3], &[0, 1, 2]);
        assert!(e.indices[3..].iter().all(|&i| i == a.pad_index));
        let oh = e.onehot();
        assert_eq!(oh.shape(), &[70, 201]);
        for col in 0..201 {
            let ones: f64 = (0..70).map(|r| oh.data()[r * 201 + col]).sum();
            assert_eq!(ones, 1.0);
        }
    }

    #[test]
    fn long_text_is_truncated() {
        let a = build_alphabet();
        let text: String = std::iter::repeat("abcde").take(50).collect();
        assert_eq!(text.len(), 250);
        let e = encode_chars(&text, &a).unwrap();
        assert_eq!(e.effective_length, 201);
        assert_eq!(e.indices.len(), 201);
    }

    #[test]
    fn case_folding() {
        let a = build_alphabet();
        assert_eq!(encode_chars("This BIRD", &a).unwrap(), encode_chars("this bird", &a).unwrap());
    }

    #[test]
    fn empty_is_rejected() {
        let a = build_alphabet();
        assert!(matches!(encode_chars("   ", &a), Err(CvlError::EmptyDescription)));
    }
}
