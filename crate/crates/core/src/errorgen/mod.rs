//! Synthetic spelling-error generation: the 14 error types, confusion
//! tables, mask derivation, plausibility filtering, and corpus assembly.

mod corpus;
mod filter;

pub use corpus::{
    assemble_corpus, read_corpus, stratified_split, write_corpus, CorpusSplit, GenerationReport,
    GeneratorTables, InsertionMode, Quotas, ReportRow,
};
pub use filter::{filter_errors, PlausibilityScorer, TrigramScorer};

use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::Rng;

use crate::baseline::{levenshtein, EditOp};
use crate::charlex::{Alphabet, Lexicon};
use crate::error::{Error, Result};

/// The 14 synthesized error types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorType {
    Cognitive,
    Homonym,
    VisualSingle,
    VisualCombined,
    TypoDeletion,
    TypoSubstBijoy,
    TypoSubstAvro,
    TypoTransposition,
    TypoInsertion,
    RunOn,
    SplitLeft,
    SplitRight,
    SplitRandom,
    SplitBoth,
}

impl ErrorType {
    pub const ALL: [ErrorType; 14] = [
        ErrorType::Cognitive,
        ErrorType::Homonym,
        ErrorType::VisualSingle,
        ErrorType::VisualCombined,
        ErrorType::TypoDeletion,
        ErrorType::TypoSubstBijoy,
        ErrorType::TypoSubstAvro,
        ErrorType::TypoTransposition,
        ErrorType::TypoInsertion,
        ErrorType::RunOn,
        ErrorType::SplitLeft,
        ErrorType::SplitRight,
        ErrorType::SplitRandom,
        ErrorType::SplitBoth,
    ];

    /// Stable label used in the CSV `error_type` column.
    pub fn label(self) -> &'static str {
        match self {
            ErrorType::Cognitive => "cognitive",
            ErrorType::Homonym => "homonym",
            ErrorType::VisualSingle => "visual_single",
            ErrorType::VisualCombined => "visual_combined",
            ErrorType::TypoDeletion => "typo_deletion",
            ErrorType::TypoSubstBijoy => "typo_subst_bijoy",
            ErrorType::TypoSubstAvro => "typo_subst_avro",
            ErrorType::TypoTransposition => "typo_transposition",
            ErrorType::TypoInsertion => "typo_insertion",
            ErrorType::RunOn => "run_on",
            ErrorType::SplitLeft => "split_left",
            ErrorType::SplitRight => "split_right",
            ErrorType::SplitRandom => "split_random",
            ErrorType::SplitBoth => "split_both",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).expect("listed type")
    }
}

impl std::fmt::Display for ErrorType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ErrorType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| format!("unknown error_type label {s:?}"))
    }
}

/// Mapping from a correct unit (single character or combined unit) to its
/// plausible wrong replacements.
#[derive(Debug, Clone, Default)]
pub struct ConfusionTable {
    entries: IndexMap<String, Vec<String>>,
}

impl ConfusionTable {
    pub fn new(entries: impl IntoIterator<Item = (String, Vec<String>)>) -> Result<Self> {
        let mut map = IndexMap::new();
        for (key, cands) in entries {
            if key.is_empty() {
                return Err(Error::Config("confusion key must be non-empty".into()));
            }
            if cands.is_empty() {
                return Err(Error::Config(format!(
                    "confusion key {key:?} has an empty candidate list"
                )));
            }
            if cands.iter().any(|c| c == &key) {
                return Err(Error::Config(format!(
                    "confusion key {key:?} lists itself as a candidate"
                )));
            }
            if cands.iter().any(|c| c.is_empty()) {
                return Err(Error::Config(format!(
                    "confusion key {key:?} has an empty candidate"
                )));
            }
            map.insert(key, cands);
        }
        Ok(ConfusionTable { entries: map })
    }

    /// Parse `key:cand1,cand2,...` lines. Blank lines and `#` comments are
    /// skipped.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| Error::data(path, idx + 1, "expected `key:cand1,cand2,...`"))?;
            let cands: Vec<String> = rest.split(',').map(|c| c.to_string()).collect();
            entries.push((key.to_string(), cands));
        }
        ConfusionTable::new(entries).map_err(|e| Error::data(path, 0, e.to_string()))
    }

    /// Check every key and candidate against the alphabet's retained set
    /// (or its combined units).
    pub fn validate(&self, alphabet: &Alphabet) -> Result<()> {
        let ok = |unit: &str| {
            unit.chars().all(|c| alphabet.is_frequent(c))
                || alphabet.combined_units().iter().any(|u| u == unit)
        };
        for (key, cands) in &self.entries {
            if !ok(key) {
                return Err(Error::Config(format!(
                    "confusion key {key:?} is outside the alphabet"
                )));
            }
            for cand in cands {
                if !ok(cand) {
                    return Err(Error::Config(format!(
                        "confusion candidate {cand:?} for key {key:?} is outside the alphabet"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.entries.iter()
    }

    pub fn get(&self, key: &str) -> Option<&Vec<String>> {
        self.entries.get(key)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One corpus row: erroneous source, aligned mask, gold target, error type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelPair {
    pub source: String,
    pub mask: String,
    pub target: String,
    pub error_type: ErrorType,
}

/// Mask string for `source` given `target`: a copy of the source with
/// `glyph` at every substituted or deleted source position, and at the
/// cursor position (clamped) of every target-only insertion.
///
/// Uses the minimal edit alignment with the documented tie-break
/// (substitute, then delete, then insert, leftmost first), so the mask is
/// deterministic.
pub fn derive_mask(source: &str, target: &str, glyph: char) -> String {
    let mut mask: Vec<char> = source.chars().collect();
    if mask.is_empty() {
        return String::new();
    }
    let last = mask.len() - 1;
    let (_, script) = levenshtein(source, target);
    let mut cursor = 0usize;
    for op in &script.ops {
        match *op {
            EditOp::Keep(i, _) => cursor = i + 1,
            EditOp::Substitute(i, _) | EditOp::DeleteSource(i) => {
                mask[i] = glyph;
                cursor = i + 1;
            }
            EditOp::InsertTarget(_) => mask[cursor.min(last)] = glyph,
        }
    }
    mask.into_iter().collect()
}

fn chars_of(word: &str) -> Vec<char> {
    word.chars().collect()
}

fn glyphs(n: usize, glyph: char) -> String {
    std::iter::repeat(glyph).take(n).collect()
}

/// Replace one occurrence of one confusion-table key by a uniformly chosen
/// wrong unit. `None` when no key occurs in the word.
pub fn gen_substitution(
    word: &str,
    table: &ConfusionTable,
    kind: ErrorType,
    glyph: char,
    rng: &mut impl Rng,
) -> Option<ParallelPair> {
    let chars = chars_of(word);
    // (start position, key length, key) for every occurrence, in scan order
    let mut occurrences: Vec<(usize, usize, &String)> = Vec::new();
    for (key, _) in table.entries() {
        let key_chars = chars_of(key);
        if key_chars.is_empty() || key_chars.len() > chars.len() {
            continue;
        }
        for start in 0..=(chars.len() - key_chars.len()) {
            if chars[start..start + key_chars.len()] == key_chars[..] {
                occurrences.push((start, key_chars.len(), key));
            }
        }
    }
    if occurrences.is_empty() {
        return None;
    }
    occurrences.sort_by(|a, b| (a.0, a.2).cmp(&(b.0, b.2)));
    let (start, key_len, key) = occurrences[rng.gen_range(0..occurrences.len())];
    let cands = table.get(key).expect("key came from the table");
    let wrong = &cands[rng.gen_range(0..cands.len())];

    let prefix: String = chars[..start].iter().collect();
    let suffix: String = chars[start + key_len..].iter().collect();
    Some(ParallelPair {
        source: format!("{prefix}{wrong}{suffix}"),
        mask: format!("{prefix}{}{suffix}", glyphs(wrong.chars().count(), glyph)),
        target: word.to_string(),
        error_type: kind,
    })
}

/// Drop one uniformly chosen character. `None` for words shorter than 2.
pub fn gen_deletion(word: &str, glyph: char, rng: &mut impl Rng) -> Option<ParallelPair> {
    let chars = chars_of(word);
    if chars.len() < 2 {
        return None;
    }
    let i = rng.gen_range(0..chars.len());
    let source: String = chars
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &c)| c)
        .collect();
    Some(ParallelPair {
        mask: derive_mask(&source, word, glyph),
        source,
        target: word.to_string(),
        error_type: ErrorType::TypoDeletion,
    })
}

/// Swap one uniformly chosen adjacent pair of distinct characters.
pub fn gen_transposition(word: &str, glyph: char, rng: &mut impl Rng) -> Option<ParallelPair> {
    let chars = chars_of(word);
    let spots: Vec<usize> = (0..chars.len().saturating_sub(1))
        .filter(|&i| chars[i] != chars[i + 1])
        .collect();
    if spots.is_empty() {
        return None;
    }
    let i = spots[rng.gen_range(0..spots.len())];
    let mut source = chars.clone();
    source.swap(i, i + 1);
    let mut mask = source.clone();
    mask[i] = glyph;
    mask[i + 1] = glyph;
    Some(ParallelPair {
        source: source.into_iter().collect(),
        mask: mask.into_iter().collect(),
        target: word.to_string(),
        error_type: ErrorType::TypoTransposition,
    })
}

/// How typo-insertion picks the inserted character.
#[derive(Debug, Clone, Copy)]
pub enum InsertionKind<'a> {
    /// Duplicate the chosen character in place.
    Duplicate,
    /// Insert a keyboard neighbor of the chosen character.
    Keyboard(&'a ConfusionTable),
}

/// Insert one extra character after a uniformly chosen position.
pub fn gen_insertion(
    word: &str,
    kind: InsertionKind<'_>,
    glyph: char,
    rng: &mut impl Rng,
) -> Option<ParallelPair> {
    let chars = chars_of(word);
    if chars.is_empty() {
        return None;
    }
    let (i, inserted) = match kind {
        InsertionKind::Duplicate => {
            let i = rng.gen_range(0..chars.len());
            (i, chars[i])
        }
        InsertionKind::Keyboard(table) => {
            let spots: Vec<usize> = (0..chars.len())
                .filter(|&i| table.get(&chars[i].to_string()).is_some())
                .collect();
            if spots.is_empty() {
                return None;
            }
            let i = spots[rng.gen_range(0..spots.len())];
            let cands = table.get(&chars[i].to_string()).expect("spot checked");
            let single: Vec<char> = cands
                .iter()
                .filter_map(|c| {
                    let mut it = c.chars();
                    match (it.next(), it.next()) {
                        (Some(ch), None) => Some(ch),
                        _ => None,
                    }
                })
                .collect();
            if single.is_empty() {
                return None;
            }
            (i, single[rng.gen_range(0..single.len())])
        }
    };
    let mut source = chars.clone();
    source.insert(i + 1, inserted);
    let source: String = source.into_iter().collect();
    Some(ParallelPair {
        mask: derive_mask(&source, word, glyph),
        source,
        target: word.to_string(),
        error_type: ErrorType::TypoInsertion,
    })
}

/// Classification of a split position by which halves are lexicon words.
fn split_kind(a: &str, b: &str, lexicon: &Lexicon) -> ErrorType {
    match (lexicon.contains(a), lexicon.contains(b)) {
        (true, true) => ErrorType::SplitBoth,
        (true, false) => ErrorType::SplitLeft,
        (false, true) => ErrorType::SplitRight,
        (false, false) => ErrorType::SplitRandom,
    }
}

/// Insert a space at a uniformly chosen interior position and classify the
/// result by lexicon membership of the two halves.
pub fn gen_split(
    word: &str,
    lexicon: &Lexicon,
    glyph: char,
    rng: &mut impl Rng,
) -> Option<ParallelPair> {
    let chars = chars_of(word);
    if chars.len() < 2 {
        return None;
    }
    let i = rng.gen_range(1..chars.len());
    Some(split_at(&chars, i, word, lexicon, glyph))
}

/// Like [`gen_split`], but only over positions whose classification is
/// `want`; `None` when no interior position yields that kind.
pub fn gen_split_of_kind(
    word: &str,
    lexicon: &Lexicon,
    want: ErrorType,
    glyph: char,
    rng: &mut impl Rng,
) -> Option<ParallelPair> {
    let chars = chars_of(word);
    if chars.len() < 2 {
        return None;
    }
    let spots: Vec<usize> = (1..chars.len())
        .filter(|&i| {
            let a: String = chars[..i].iter().collect();
            let b: String = chars[i..].iter().collect();
            split_kind(&a, &b, lexicon) == want
        })
        .collect();
    if spots.is_empty() {
        return None;
    }
    let i = spots[rng.gen_range(0..spots.len())];
    Some(split_at(&chars, i, word, lexicon, glyph))
}

fn split_at(chars: &[char], i: usize, word: &str, lexicon: &Lexicon, glyph: char) -> ParallelPair {
    let a: String = chars[..i].iter().collect();
    let b: String = chars[i..].iter().collect();
    let error_type = split_kind(&a, &b, lexicon);
    ParallelPair {
        source: format!("{a} {b}"),
        mask: format!("{a}{glyph}{b}"),
        target: word.to_string(),
        error_type,
    }
}

/// Join the word with a second lexicon word (space omitted); the target is
/// the left word alone.
pub fn gen_runon(
    word: &str,
    lexicon: &Lexicon,
    glyph: char,
    rng: &mut impl Rng,
) -> Option<ParallelPair> {
    let candidates = lexicon.len() - usize::from(lexicon.contains(word));
    if candidates == 0 {
        return None;
    }
    let k = rng.gen_range(0..candidates);
    let second = lexicon
        .words()
        .iter()
        .filter(|w| w.as_str() != word)
        .nth(k)
        .expect("k < candidate count");
    Some(ParallelPair {
        source: format!("{word}{second}"),
        mask: format!("{word}{}", glyphs(second.chars().count(), glyph)),
        target: word.to_string(),
        error_type: ErrorType::RunOn,
    })
}

/// Read `wrong,correct` homonym pairs; duplicates collapse, order is kept.
pub fn load_homonyms(path: impl AsRef<Path>, glyph: char) -> Result<Vec<ParallelPair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = std::collections::HashSet::new();
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let (wrong, correct) = match (fields.next(), fields.next(), fields.next()) {
            (Some(w), Some(c), None) => (w.trim(), c.trim()),
            _ => {
                return Err(Error::data(path, idx + 1, "expected `wrong,correct`"));
            }
        };
        if wrong.is_empty() || correct.is_empty() {
            return Err(Error::data(path, idx + 1, "empty homonym field"));
        }
        if wrong == correct {
            return Err(Error::data(path, idx + 1, "homonym pair is an identity"));
        }
        if !seen.insert((wrong.to_string(), correct.to_string())) {
            continue;
        }
        pairs.push(ParallelPair {
            source: wrong.to_string(),
            mask: derive_mask(wrong, correct, glyph),
            target: correct.to_string(),
            error_type: ErrorType::Homonym,
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests;
