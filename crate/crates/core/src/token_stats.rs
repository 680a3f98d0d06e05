//! Unigram frequencies, elbow detection on the rank-frequency curve, and the
//! excluded / rare / common vocabulary split.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor_io::TokenStream;

pub const DEFAULT_PERCENTILE: f64 = 0.15;
pub const DEFAULT_ELBOW_WINDOW: usize = 51;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TokenStatsError {
    #[error("curve of length {len} too short for window {window}")]
    CurveTooShort { len: usize, window: usize },
    #[error("percentile {0} outside (0, 1)")]
    InvalidPercentile(f64),
    #[error("every token falls below the elbow")]
    DegenerateVocabulary,
    #[error("split covers {split} tokens but vocabulary has {vocab}")]
    VocabMismatch { split: usize, vocab: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenClass {
    Excluded,
    Rare,
    Common,
}

/// Counts of each token id; sums to the stream length.
pub fn count_frequencies(stream: &TokenStream, vocab_size: usize) -> Vec<u64> {
    let mut counts = vec![0u64; vocab_size];
    for &id in &stream.ids {
        counts[id as usize] += 1;
    }
    counts
}

/// Counts sorted descending, as the `ln(1 + count)` curve fed to
/// [`detect_elbow`]. The `+1` keeps unseen tokens finite.
pub fn sorted_log_frequency(freq: &[u64]) -> Vec<f64> {
    let mut sorted: Vec<u64> = freq.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted.into_iter().map(|c| (c as f64).ln_1p()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Elbow {
    /// Number of leading (most frequent) ranks kept; ranks at or after this
    /// index lie below the elbow.
    pub rank: usize,
    /// `false` when the curve has no downward bend; `rank` is then the
    /// curve length.
    pub found: bool,
    pub curvature: f64,
}

/// Locates the sharpest downward bend in the lower half of a descending
/// curve.
///
/// The curve is smoothed with a centred moving average of `window` ranks
/// and the second difference is taken at lag `window / 2`; the elbow is the
/// rank where that second difference is most negative.
pub fn detect_elbow(sorted_log_freq: &[f64], window: usize) -> Result<Elbow, TokenStatsError> {
    let n = sorted_log_freq.len();
    let half = window / 2;
    if window == 0 || half == 0 || n <= 2 * window {
        return Err(TokenStatsError::CurveTooShort { len: n, window });
    }
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in sorted_log_freq.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let width = (2 * half + 1) as f64;
    // smoothed value at rank r, defined for half ≤ r < n − half
    let smooth = |r: usize| (prefix[r + half + 1] - prefix[r - half]) / width;

    let lo = (n / 2).max(2 * half);
    let hi = n - 2 * half; // exclusive
    let scale = sorted_log_freq.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let tol = 1e-9 * scale;

    let mut best: Option<(usize, f64)> = None;
    for r in lo..hi {
        let c = (smooth(r + half) - 2.0 * smooth(r) + smooth(r - half)) / (half * half) as f64;
        if best.is_none_or(|(_, b)| c < b) {
            best = Some((r, c));
        }
    }
    match best {
        Some((rank, c)) if c < -tol / (half * half) as f64 => Ok(Elbow {
            rank,
            found: true,
            curvature: c,
        }),
        Some((_, c)) => Ok(Elbow {
            rank: n,
            found: false,
            curvature: c,
        }),
        None => Ok(Elbow {
            rank: n,
            found: false,
            curvature: 0.0,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenClassSplit {
    pub freq: Vec<u64>,
    pub elbow_rank: usize,
    pub percentile: f64,
    /// Tokens with count strictly below this value (among the kept ones)
    /// are rare.
    pub rare_threshold: f64,
    pub classes: Vec<TokenClass>,
}

impl TokenClassSplit {
    pub fn vocab_size(&self) -> usize {
        self.classes.len()
    }

    pub fn class_of(&self, token: u32) -> TokenClass {
        self.classes[token as usize]
    }

    pub fn members(&self, class: TokenClass) -> Vec<u32> {
        self.classes.iter().enumerate().filter(|(_, &c)| c == class).map(|(i, _)| i as u32).collect()
    }

    pub fn count(&self, class: TokenClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }
}

/// Linear-interpolation sample quantile of ascending-sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Splits the vocabulary.
///
/// Tokens whose count does not exceed the count found at `elbow_rank` in
/// the descending order are excluded. Among the rest, tokens with count
/// strictly below the `percentile` quantile are rare; the remainder are
/// common. Every comparison is on counts, so relabelling token ids
/// permutes the classes with them.
pub fn split_classes(freq: &[u64], elbow_rank: usize, percentile: f64) -> Result<TokenClassSplit, TokenStatsError> {
    if !(percentile > 0.0 && percentile < 1.0) {
        return Err(TokenStatsError::InvalidPercentile(percentile));
    }
    let mut sorted: Vec<u64> = freq.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let elbow_rank = elbow_rank.min(freq.len());
    let kept = |c: u64| match sorted.get(elbow_rank) {
        Some(&cut) => c > cut,
        None => true,
    };
    let mut kept_counts: Vec<f64> = freq.iter().filter(|&&c| kept(c)).map(|&c| c as f64).collect();
    if kept_counts.is_empty() {
        return Err(TokenStatsError::DegenerateVocabulary);
    }
    kept_counts.sort_by(f64::total_cmp);
    let threshold = quantile_sorted(&kept_counts, percentile);
    let classes = freq
        .iter()
        .map(|&c| {
            if !kept(c) {
                TokenClass::Excluded
            } else if (c as f64) < threshold {
                TokenClass::Rare
            } else {
                TokenClass::Common
            }
        })
        .collect();
    Ok(TokenClassSplit {
        freq: freq.to_vec(),
        elbow_rank,
        percentile,
        rare_threshold: threshold,
        classes,
    })
}

/// Frequencies → elbow → split, the usual path from a counting corpus.
pub fn split_from_stream(stream: &TokenStream, percentile: f64, window: usize) -> Result<TokenClassSplit, TokenStatsError> {
    let freq = count_frequencies(stream, stream.vocab_size);
    let elbow = detect_elbow(&sorted_log_frequency(&freq), window)?;
    split_classes(&freq, elbow.rank, percentile)
}

/// On-disk `split.json`: classes are run-length encoded as `[class, run]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub vocab_size: usize,
    pub elbow_rank: usize,
    pub percentile: f64,
    pub classes: Vec<(TokenClass, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rare_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub freq: Vec<u64>,
}

impl From<&TokenClassSplit> for SplitFile {
    fn from(split: &TokenClassSplit) -> Self {
        let mut runs: Vec<(TokenClass, usize)> = Vec::new();
        for &c in &split.classes {
            match runs.last_mut() {
                Some((last, n)) if *last == c => *n += 1,
                _ => runs.push((c, 1)),
            }
        }
        Self {
            vocab_size: split.classes.len(),
            elbow_rank: split.elbow_rank,
            percentile: split.percentile,
            classes: runs,
            rare_threshold: Some(split.rare_threshold),
            freq: split.freq.clone(),
        }
    }
}

impl SplitFile {
    pub fn into_split(self) -> Result<TokenClassSplit, TokenStatsError> {
        let classes: Vec<TokenClass> = self.classes.iter().flat_map(|&(c, n)| std::iter::repeat_n(c, n)).collect();
        if classes.len() != self.vocab_size {
            return Err(TokenStatsError::VocabMismatch {
                split: classes.len(),
                vocab: self.vocab_size,
            });
        }
        Ok(TokenClassSplit {
            freq: self.freq,
            elbow_rank: self.elbow_rank,
            percentile: self.percentile,
            rare_threshold: self.rare_threshold.unwrap_or(f64::NAN),
            classes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts() {
        let s = TokenStream::new(vec![1, 1, 2], vec![], 4).unwrap();
        assert_eq!(count_frequencies(&s, 4), vec![0, 2, 1, 0]);
        let empty = TokenStream::new(vec![], vec![], 4).unwrap();
        assert_eq!(count_frequencies(&empty, 4), vec![0; 4]);
    }

    fn piecewise(n: usize, knee: usize, s1: f64, s2: f64) -> Vec<f64> {
        (0..n)
            .map(|r| {
                if r <= knee {
                    10.0 - s1 * r as f64
                } else {
                    10.0 - s1 * knee as f64 - s2 * (r - knee) as f64
                }
            })
            .collect()
    }

    #[test]
    fn planted_knee() {
        let curve = piecewise(1000, 700, 0.002, 0.02);
        let e = detect_elbow(&curve, 51).unwrap();
        assert!(e.found);
        assert!(e.rank.abs_diff(700) <= 51, "{}", e.rank);
    }

    #[test]
    fn straight_line_has_no_elbow() {
        let curve: Vec<f64> = (0..1000).map(|r| 12.0 - 0.01 * r as f64).collect();
        let e = detect_elbow(&curve, 51).unwrap();
        assert!(!e.found);
        assert_eq!(e.rank, 1000);
    }

    #[test]
    fn sharper_of_two_knees() {
        // gentle bend at 600, sharp bend at 850
        let curve: Vec<f64> = (0..1000)
            .map(|r| {
                let r = r as f64;
                10.0 - 0.002 * r - 0.004 * (r - 600.0).max(0.0) - 0.03 * (r - 850.0).max(0.0)
            })
            .collect();
        let e = detect_elbow(&curve, 51).unwrap();
        assert!(e.rank.abs_diff(850) <= 51, "{}", e.rank);
        // and the other way round
        let curve: Vec<f64> = (0..1000)
            .map(|r| {
                let r = r as f64;
                10.0 - 0.002 * r - 0.03 * (r - 600.0).max(0.0) - 0.004 * (r - 850.0).max(0.0)
            })
            .collect();
        assert!(detect_elbow(&curve, 51).unwrap().rank.abs_diff(600) <= 51);
    }

    #[test]
    fn short_curve() {
        assert_eq!(detect_elbow(&[1.0; 102], 51), Err(TokenStatsError::CurveTooShort { len: 102, window: 51 }));
    }

    #[test]
    fn hundred_distinct_tokens() {
        let freq: Vec<u64> = (1..=100).rev().collect();
        let split = split_classes(&freq, 100, 0.15).unwrap();
        assert_eq!(split.count(TokenClass::Rare), 15);
        assert_eq!(split.count(TokenClass::Common), 85);
        assert_eq!(split.count(TokenClass::Excluded), 0);
        for (p, n) in [(0.10, 10), (0.20, 20)] {
            assert_eq!(split_classes(&freq, 100, p).unwrap().count(TokenClass::Rare), n);
        }
    }

    #[test]
    fn default_percentile() {
        assert_eq!(DEFAULT_PERCENTILE, 0.15);
    }

    #[test]
    fn elbow_excludes_the_tail() {
        let mut freq: Vec<u64> = (11..=110).collect();
        freq.extend([1, 1, 0, 0]);
        let split = split_classes(&freq, 100, 0.15).unwrap();
        assert_eq!(split.count(TokenClass::Excluded), 4);
        assert_eq!(split.count(TokenClass::Rare), 15);
    }

    #[test]
    fn ties_go_to_common() {
        let freq = vec![5u64; 40];
        let split = split_classes(&freq, 40, 0.15).unwrap();
        assert_eq!(split.count(TokenClass::Rare), 0);
    }

    #[test]
    fn degenerate_and_invalid() {
        assert_eq!(split_classes(&[3, 3, 3], 0, 0.15), Err(TokenStatsError::DegenerateVocabulary));
        assert_eq!(split_classes(&[3, 2], 2, 1.0), Err(TokenStatsError::InvalidPercentile(1.0)));
        assert_eq!(split_classes(&[3, 2], 2, 0.0), Err(TokenStatsError::InvalidPercentile(0.0)));
    }

    #[test]
    fn split_file_round_trip() {
        let freq: Vec<u64> = (0..300).map(|i| (i * 7919 % 1000) as u64).collect();
        let split = split_classes(&freq, 280, 0.15).unwrap();
        let file = SplitFile::from(&split);
        let json = serde_json::to_string(&file).unwrap();
        let back: SplitFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_split().unwrap(), split);
    }

    proptest! {
        #[test]
        fn rare_sets_are_nested(freq in proptest::collection::vec(0u64..500, 20..200), a in 0.01f64..0.98, b in 0.01f64..0.98) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let n = freq.len();
            let small = split_classes(&freq, n, lo).unwrap();
            let large = split_classes(&freq, n, hi).unwrap();
            for (s, l) in small.classes.iter().zip(&large.classes) {
                if *s == TokenClass::Rare {
                    prop_assert_eq!(*l, TokenClass::Rare);
                }
            }
        }

        #[test]
        fn relabelling_permutes_classes(freq in proptest::collection::vec(0u64..50, 20..120), seed in any::<u64>(), cut in 0usize..120) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let n = freq.len();
            let cut = cut.min(n - 1);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<u64> = perm.iter().map(|&i| freq[i]).collect();
            let a = split_classes(&freq, cut, 0.15);
            let b = split_classes(&permuted, cut, 0.15);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    for (new, &old) in perm.iter().enumerate() {
                        prop_assert_eq!(b.classes[new], a.classes[old]);
                    }
                }
                (Err(x), Err(y)) => prop_assert_eq!(x, y),
                _ => prop_assert!(false, "one split failed"),
            }
        }

        #[test]
        fn counts_sum_to_length(ids in proptest::collection::vec(0u32..64, 0..300)) {
            let n = ids.len() as u64;
            let s = TokenStream::new(ids, vec![], 64).unwrap();
            prop_assert_eq!(count_frequencies(&s, 64).iter().sum::<u64>(), n);
        }
    }
}
