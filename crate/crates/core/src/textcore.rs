//! Tokenization over a fixed synthetic vocabulary and n-gram utilities.
//!
//! Words are mapped to token identifiers with 64-bit FNV-1a folded modulo the
//! vocabulary size. The mapping is lossy (there is no detokenizer); every
//! statistic in this crate works on identifiers only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::fnv1a64;

pub type Token = u32;

/// Sequence of token identifiers. The universal text representation.
pub type TokenSeq = Vec<Token>;

pub const DEFAULT_VOCAB_SIZE: u32 = 32_768;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Vocabulary {
    size: u32,
}

impl Vocabulary {
    pub const MIN_SIZE: u32 = 4;

    pub fn new(size: u32) -> Result<Self> {
        if size < Self::MIN_SIZE {
            return Err(Error::config(format!(
                "vocabulary size must be at least {}, got {size}",
                Self::MIN_SIZE
            )));
        }
        Ok(Self { size })
    }

    #[inline]
    pub fn size(self) -> u32 {
        self.size
    }

    pub fn contains(self, token: Token) -> bool {
        token < self.size
    }

    /// Checks that every identifier of `seq` lies in `[0, |V|)`.
    pub fn validate(self, seq: &[Token]) -> Result<()> {
        match seq.iter().position(|&t| t >= self.size) {
            None => Ok(()),
            Some(i) => Err(Error::contract(format!(
                "token {} at position {i} outside vocabulary of size {}",
                seq[i], self.size
            ))),
        }
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self {
            size: DEFAULT_VOCAB_SIZE,
        }
    }
}

impl TryFrom<u32> for Vocabulary {
    type Error = Error;

    fn try_from(size: u32) -> Result<Self> {
        Self::new(size)
    }
}

impl From<Vocabulary> for u32 {
    fn from(v: Vocabulary) -> u32 {
        v.size
    }
}

/// Identifier of a single word.
#[inline]
pub fn word_id(word: &str, vocab: Vocabulary) -> Token {
    (fnv1a64(word.as_bytes()) % u64::from(vocab.size())) as Token
}

/// Whitespace tokenization; one identifier per word.
pub fn tokenize(text: &str, vocab: Vocabulary) -> TokenSeq {
    text.split_whitespace().map(|w| word_id(w, vocab)).collect()
}

/// All contiguous windows of `width` tokens with their start positions.
pub fn ngram_windows(seq: &[Token], width: usize) -> Result<Vec<(usize, &[Token])>> {
    if width == 0 {
        return Err(Error::contract("n-gram width must be at least 1"));
    }
    Ok(seq.windows(width).enumerate().collect())
}

/// Length of the longest contiguous token run occurring in both `a` and `b`.
pub fn max_token_overlap(a: &[Token], b: &[Token]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    // Classic longest-common-substring DP with a single rolling row.
    let (outer, inner) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut row = vec![0usize; inner.len() + 1];
    let mut best = 0;
    for &x in outer {
        let mut diag = 0;
        for (j, &y) in inner.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { 0 };
            best = best.max(row[j + 1]);
            diag = up;
        }
    }
    best
}

/// Whether `needle` occurs contiguously inside `haystack`.
pub fn contains_run(haystack: &[Token], needle: &[Token]) -> bool {
    needle.is_empty() || haystack.windows(needle.len()).any(|w| w == needle)
}

/// Start positions of every occurrence of `needle` in `haystack`.
pub fn find_runs(haystack: &[Token], needle: &[Token]) -> Vec<usize> {
    if needle.is_empty() {
        return Vec::new();
    }
    haystack
        .windows(needle.len())
        .enumerate()
        .filter(|(_, w)| *w == needle)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_overlap(a: &[Token], b: &[Token]) -> usize {
        let mut best = 0;
        for i in 0..a.len() {
            for j in 0..b.len() {
                let mut l = 0;
                while i + l < a.len() && j + l < b.len() && a[i + l] == b[j + l] {
                    l += 1;
                }
                best = best.max(l);
            }
        }
        best
    }

    #[test]
    fn tokenize_empty_and_repeats() {
        let v = Vocabulary::default();
        assert!(tokenize("", v).is_empty());
        assert!(tokenize("   \n\t ", v).is_empty());
        let t = tokenize("a a b", v);
        assert_eq!(t.len(), 3);
        assert_eq!(t[0], t[1]);
        assert_eq!(t, tokenize("a  a\nb", v));
    }

    #[test]
    fn tokenize_golden_values() {
        // FNV-1a("alpha") = 0x8ac625bb85ed202b, FNV-1a("beta") = 0x7627619b954620a7,
        // evaluated independently and folded by hand.
        let v8 = Vocabulary::new(8).unwrap();
        assert_eq!(tokenize("alpha beta", v8), vec![3, 7]);
        let v = Vocabulary::default();
        assert_eq!(tokenize("alpha beta", v), vec![8235, 8359]);
    }

    #[test]
    fn vocabulary_lower_bound() {
        assert!(Vocabulary::new(3).is_err());
        assert!(Vocabulary::new(4).is_ok());
        assert!(Vocabulary::new(8).unwrap().validate(&[0, 7]).is_ok());
        assert!(Vocabulary::new(8).unwrap().validate(&[0, 8]).is_err());
    }

    #[test]
    fn windows_examples() {
        let w = ngram_windows(&[1, 2, 3], 2).unwrap();
        assert_eq!(w, vec![(0, &[1, 2][..]), (1, &[2, 3][..])]);
        assert!(ngram_windows(&[1, 2], 3).unwrap().is_empty());
        let w = ngram_windows(&[5, 5, 5, 5], 2).unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|(_, g)| *g == [5, 5]));
        assert!(ngram_windows(&[1], 0).is_err());
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(max_token_overlap(&[1, 2, 3, 4], &[9, 2, 3, 7]), 2);
        assert_eq!(max_token_overlap(&[4, 5, 6], &[4, 5, 6]), 3);
        assert_eq!(max_token_overlap(&[], &[1, 2]), 0);
    }

    #[test]
    fn overlap_matches_brute_force_exhaustively_small() {
        // Every pair of binary sequences up to length 6, plus a randomized sweep
        // to length 12 below.
        let all: Vec<Vec<Token>> = (0..=6)
            .flat_map(|len| (0..1u32 << len).map(move |m| (0..len).map(|i| (m >> i) & 1).collect()))
            .collect();
        for a in &all {
            for b in &all {
                assert_eq!(max_token_overlap(a, b), brute_overlap(a, b), "{a:?} {b:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn overlap_oracle(a in prop::collection::vec(0u32..4, 0..=12),
                          b in prop::collection::vec(0u32..4, 0..=12)) {
            let fast = max_token_overlap(&a, &b);
            prop_assert_eq!(fast, brute_overlap(&a, &b));
            prop_assert_eq!(fast, max_token_overlap(&b, &a));
            prop_assert!(fast <= a.len().min(b.len()));
        }

        #[test]
        fn window_count(seq in prop::collection::vec(any::<u32>(), 0..40), w in 1usize..10) {
            let n = ngram_windows(&seq, w).unwrap().len();
            prop_assert_eq!(n, (seq.len() + 1).saturating_sub(w));
        }
    }
}
