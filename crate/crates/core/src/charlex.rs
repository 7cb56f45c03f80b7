//! Alphabet definition, wordlist ingestion and cleaning, lexicon membership,
//! and vocabulary construction.

use std::collections::HashMap;
use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use indexmap::IndexSet;

use crate::error::{Error, Result};
use crate::errorgen::ParallelPair;

/// Default glyph marking erroneous positions in mask strings.
pub const DEFAULT_MASK_GLYPH: char = '_';

/// The character set a script is written in, split into the full set and the
/// retained (frequent) subset that cleaning keeps. Multi-code-point units in
/// `combined` are treated as atomic by the visual-combined error generator.
#[derive(Debug, Clone)]
pub struct Alphabet {
    chars: IndexSet<char>,
    frequent: IndexSet<char>,
    combined: Vec<String>,
    mask_glyph: char,
}

impl Alphabet {
    pub fn new(
        frequent: impl IntoIterator<Item = char>,
        combined: impl IntoIterator<Item = String>,
        mask_glyph: char,
    ) -> Result<Self> {
        let mut freq: IndexSet<char> = frequent.into_iter().collect();
        freq.insert(' ');
        let combined: Vec<String> = combined.into_iter().collect();
        if freq.contains(&mask_glyph) {
            return Err(Error::Config(format!(
                "mask glyph {mask_glyph:?} is reserved and cannot be a frequent character"
            )));
        }
        for unit in &combined {
            if unit.chars().count() < 2 {
                return Err(Error::Config(format!(
                    "combined unit {unit:?} must have at least two code points"
                )));
            }
            if unit.contains(mask_glyph) {
                return Err(Error::Config(format!(
                    "combined unit {unit:?} contains the reserved mask glyph"
                )));
            }
        }
        let mut chars = freq.clone();
        chars.extend(combined.iter().flat_map(|u| u.chars()));
        Ok(Alphabet {
            chars,
            frequent: freq,
            combined,
            mask_glyph,
        })
    }

    /// Parse an alphabet file: one frequent character per line, then an
    /// optional `[combined]` section with one multi-code-point unit per line.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn from_file(path: impl AsRef<Path>, mask_glyph: char) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut frequent = Vec::new();
        let mut combined = Vec::new();
        let mut in_combined = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "[combined]" {
                in_combined = true;
                continue;
            }
            if in_combined {
                combined.push(line.to_string());
            } else {
                let mut it = line.chars();
                let c = it.next().expect("non-empty line");
                if it.next().is_some() {
                    return Err(Error::data(
                        path,
                        idx + 1,
                        format!("expected a single character, got {line:?}"),
                    ));
                }
                frequent.push(c);
            }
        }
        Alphabet::new(frequent, combined, mask_glyph)
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.chars.iter().copied()
    }

    pub fn frequent(&self) -> impl Iterator<Item = char> + '_ {
        self.frequent.iter().copied()
    }

    pub fn is_frequent(&self, c: char) -> bool {
        self.frequent.contains(&c)
    }

    pub fn combined_units(&self) -> &[String] {
        &self.combined
    }

    pub fn mask_glyph(&self) -> char {
        self.mask_glyph
    }
}

/// Remove every character of `raw` that is not in the retained set.
pub fn clean_text(raw: &str, alphabet: &Alphabet) -> String {
    raw.chars().filter(|&c| alphabet.is_frequent(c)).collect()
}

/// An ordered list of error-free words with constant-time membership.
#[derive(Debug, Clone)]
pub struct Lexicon {
    words: Vec<String>,
    membership: HashSet<String>,
}

impl Lexicon {
    /// Build from pre-cleaned words; empties and duplicates are dropped,
    /// first-occurrence order is preserved.
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for w in words {
            if w.is_empty() {
                continue;
            }
            if seen.insert(w.clone()) {
                out.push(w);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("lexicon requires at least one word".into()));
        }
        Ok(Lexicon {
            membership: seen,
            words: out,
        })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.membership.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Read a wordlist (one word per line), clean each line against the
/// alphabet, and build a lexicon.
pub fn load_wordlist(path: impl AsRef<Path>, alphabet: &Alphabet) -> Result<Lexicon> {
    let path = path.as_ref();
    if alphabet.is_frequent(alphabet.mask_glyph()) {
        return Err(Error::Config(
            "alphabet retains the mask glyph; refusing to build a lexicon".into(),
        ));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let words = text
        .lines()
        .map(|line| clean_text(line.trim_end_matches('\r'), alphabet).trim().to_string());
    Lexicon::from_words(words).map_err(|_| Error::EmptyLexicon { path: path.into() })
}

/// Download a wordlist over HTTP to `dest`, returning the bytes written.
pub fn fetch_wordlist(url: &str, dest: impl AsRef<Path>) -> Result<u64> {
    let dest = dest.as_ref();
    let response = ureq::get(url)
        .timeout(std::time::Duration::from_secs(30))
        .call()
        .map_err(|e| Error::Fetch {
            url: url.to_string(),
            msg: e.to_string(),
        })?;
    let mut body = Vec::new();
    response
        .into_reader()
        .read_to_end(&mut body)
        .map_err(|e| Error::Fetch {
            url: url.to_string(),
            msg: e.to_string(),
        })?;
    std::fs::write(dest, &body).map_err(|e| Error::io(dest, e))?;
    Ok(body.len() as u64)
}

/// Token ids of the six special tokens; they occupy the lowest ids in this
/// fixed order, followed by characters in code-point order.
pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const UNK: usize = 5;
pub const NUM_SPECIALS: usize = 6;

const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<pad>", "<sos>", "<eos>", "<sep>", "<mask>", "<unk>"];

/// Bijection between characters and token ids, plus the six specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    ids: HashMap<char, usize>,
}

impl Vocab {
    /// Deterministic vocabulary over a character set: specials first, then
    /// characters sorted by code point.
    pub fn from_chars(set: impl IntoIterator<Item = char>) -> Self {
        let mut chars: Vec<char> = set.into_iter().collect::<HashSet<_>>().into_iter().collect();
        chars.sort_unstable();
        let ids = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, NUM_SPECIALS + i))
            .collect();
        Vocab { chars, ids }
    }

    pub fn size(&self) -> usize {
        NUM_SPECIALS + self.chars.len()
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        self.ids.get(&c).copied()
    }

    pub fn id_or_unk(&self, c: char) -> usize {
        self.id_of(c).unwrap_or(UNK)
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(NUM_SPECIALS).and_then(|i| self.chars.get(i).copied())
    }

    pub fn encode_str(&self, s: &str) -> Vec<usize> {
        s.chars().map(|c| self.id_or_unk(c)).collect()
    }

    /// Decode into plain text, stripping every special token.
    pub fn decode_text(&self, ids: &[usize]) -> String {
        ids.iter().filter_map(|&id| self.char_of(id)).collect()
    }

    /// Decode a mask-form sequence: MASK renders as `glyph`, other specials
    /// are stripped.
    pub fn decode_mask_text(&self, ids: &[usize], glyph: char) -> String {
        ids.iter()
            .filter_map(|&id| {
                if id == MASK {
                    Some(glyph)
                } else {
                    self.char_of(id)
                }
            })
            .collect()
    }

    /// Token spellings in id order, used by checkpoint serialization.
    pub fn token_names(&self) -> Vec<String> {
        SPECIAL_NAMES
            .iter()
            .map(|s| s.to_string())
            .chain(self.chars.iter().map(|c| c.to_string()))
            .collect()
    }

    pub fn from_token_names(names: &[String]) -> Result<Self> {
        if names.len() < NUM_SPECIALS {
            return Err(Error::Checkpoint("vocab table too short".into()));
        }
        for (i, want) in SPECIAL_NAMES.iter().enumerate() {
            if names[i] != *want {
                return Err(Error::Checkpoint(format!(
                    "vocab special {i} is {:?}, expected {want:?}",
                    names[i]
                )));
            }
        }
        let mut chars = Vec::with_capacity(names.len() - NUM_SPECIALS);
        for name in &names[NUM_SPECIALS..] {
            let mut it = name.chars();
            let c = it.next().ok_or_else(|| Error::Checkpoint("empty vocab token".into()))?;
            if it.next().is_some() {
                return Err(Error::Checkpoint(format!(
                    "vocab token {name:?} is not a single character"
                )));
            }
            chars.push(c);
        }
        let ids = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, NUM_SPECIALS + i))
            .collect();
        Ok(Vocab { chars, ids })
    }
}

/// Vocabulary covering every character of every source, mask, and target
/// field of the corpus, plus the six specials.
pub fn build_vocab(corpus: &[ParallelPair]) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut set = HashSet::new();
    for pair in corpus {
        set.extend(pair.source.chars());
        set.extend(pair.mask.chars());
        set.extend(pair.target.chars());
    }
    Ok(Vocab::from_chars(set))
}
