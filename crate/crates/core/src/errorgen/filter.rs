//! Plausibility filtration for the noisiest generator outputs.
//!
//! Deletion and keyboard-substitution dictionaries can produce errors no
//! human would type; a character language model scores each synthesized
//! source and the worst tail per type is dropped.

use std::collections::HashMap;

use super::{ErrorType, ParallelPair};
use crate::charlex::Lexicon;
use crate::error::{Error, Result};

/// Assigns a real score to a pair; lower means more plausible.
pub trait PlausibilityScorer {
    fn score(&self, pair: &ParallelPair) -> f64;
}

const BOS: char = '\u{2}';
const EOS_CH: char = '\u{3}';

/// Character-trigram language model with add-one smoothing, fit on the
/// lexicon. Scores the per-character negative log-likelihood of the
/// erroneous source.
#[derive(Debug, Clone)]
pub struct TrigramScorer {
    trigrams: HashMap<(char, char, char), u32>,
    bigrams: HashMap<(char, char), u32>,
    vocab: usize,
}

impl TrigramScorer {
    pub fn fit(lexicon: &Lexicon) -> Self {
        let mut trigrams = HashMap::new();
        let mut bigrams = HashMap::new();
        let mut charset = std::collections::HashSet::new();
        for word in lexicon.words() {
            let padded: Vec<char> = [BOS, BOS]
                .into_iter()
                .chain(word.chars())
                .chain([EOS_CH])
                .collect();
            charset.extend(padded.iter().copied());
            for w in padded.windows(3) {
                *trigrams.entry((w[0], w[1], w[2])).or_insert(0) += 1;
                *bigrams.entry((w[0], w[1])).or_insert(0) += 1;
            }
        }
        TrigramScorer {
            trigrams,
            bigrams,
            vocab: charset.len().max(1),
        }
    }

    fn nll(&self, text: &str) -> f64 {
        let padded: Vec<char> = [BOS, BOS]
            .into_iter()
            .chain(text.chars())
            .chain([EOS_CH])
            .collect();
        let mut total = 0.0;
        let mut count = 0usize;
        for w in padded.windows(3) {
            let tri = self.trigrams.get(&(w[0], w[1], w[2])).copied().unwrap_or(0);
            let bi = self.bigrams.get(&(w[0], w[1])).copied().unwrap_or(0);
            let p = (tri as f64 + 1.0) / (bi as f64 + self.vocab as f64);
            total -= p.ln();
            count += 1;
        }
        total / count.max(1) as f64
    }
}

impl PlausibilityScorer for TrigramScorer {
    fn score(&self, pair: &ParallelPair) -> f64 {
        self.nll(&pair.source)
    }
}

const FILTERED_TYPES: [ErrorType; 3] = [
    ErrorType::TypoDeletion,
    ErrorType::TypoSubstAvro,
    ErrorType::TypoSubstBijoy,
];

/// Drop pairs of the three filtered types whose score exceeds the given
/// percentile of that type's score distribution. Every other type passes
/// through untouched; input order is preserved.
pub fn filter_errors(
    pairs: Vec<ParallelPair>,
    scorer: &dyn PlausibilityScorer,
    percentile: f64,
) -> Result<Vec<ParallelPair>> {
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(Error::Config(format!(
            "filtration percentile must be in (0, 1], got {percentile}"
        )));
    }

    let mut thresholds: HashMap<ErrorType, f64> = HashMap::new();
    for ty in FILTERED_TYPES {
        let mut scores: Vec<f64> = pairs
            .iter()
            .filter(|p| p.error_type == ty)
            .map(|p| scorer.score(p))
            .collect();
        if scores.is_empty() {
            continue;
        }
        scores.sort_by(|a, b| a.total_cmp(b));
        let idx = ((percentile * scores.len() as f64).ceil() as usize).max(1) - 1;
        thresholds.insert(ty, scores[idx.min(scores.len() - 1)]);
    }

    Ok(pairs
        .into_iter()
        .filter(|p| match thresholds.get(&p.error_type) {
            Some(&t) => scorer.score(p) <= t,
            None => true,
        })
        .collect())
}
