//! Edit-distance machinery: alignment scripts for mask derivation, a
//! dictionary-lookup corrector, and the distance oracle used to validate
//! generated corpora.

use crate::charlex::Lexicon;

/// One step of an alignment between a source and a target string.
///
/// Indices are character positions (`i` into the source, `j` into the
/// target). Replaying a script on the source yields the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Keep(usize, usize),
    Substitute(usize, usize),
    DeleteSource(usize),
    InsertTarget(usize),
}

/// Minimal-cost alignment from a source to a target string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditScript {
    pub ops: Vec<EditOp>,
}

impl EditScript {
    /// Number of non-keep operations, i.e. the edit distance.
    pub fn cost(&self) -> usize {
        self.ops
            .iter()
            .filter(|op| !matches!(op, EditOp::Keep(_, _)))
            .count()
    }

    /// Replay the script on `source`, producing the aligned target.
    pub fn apply(&self, source: &str, target: &str) -> String {
        let src: Vec<char> = source.chars().collect();
        let tgt: Vec<char> = target.chars().collect();
        let mut out = String::new();
        for op in &self.ops {
            match *op {
                EditOp::Keep(i, _) => out.push(src[i]),
                EditOp::Substitute(_, j) => out.push(tgt[j]),
                EditOp::DeleteSource(_) => {}
                EditOp::InsertTarget(j) => out.push(tgt[j]),
            }
        }
        out
    }
}

/// Unit-cost Levenshtein distance together with one minimal edit script.
///
/// The script is deterministic: walking the alignment left to right, ties
/// are broken by preferring substitution, then source deletion, then target
/// insertion. Mask derivation relies on this exact tie-break.
pub fn levenshtein(a: &str, b: &str) -> (usize, EditScript) {
    let src: Vec<char> = a.chars().collect();
    let tgt: Vec<char> = b.chars().collect();
    let n = src.len();
    let m = tgt.len();

    // dist[i][j] = distance between src[i..] and tgt[j..]
    let mut dist = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            dist[i][j] = if i == n {
                m - j
            } else if j == m {
                n - i
            } else if src[i] == tgt[j] {
                dist[i + 1][j + 1]
            } else {
                1 + dist[i + 1][j + 1].min(dist[i + 1][j]).min(dist[i][j + 1])
            };
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && src[i] == tgt[j] && dist[i][j] == dist[i + 1][j + 1] {
            ops.push(EditOp::Keep(i, j));
            i += 1;
            j += 1;
        } else if i < n && j < m && dist[i][j] == 1 + dist[i + 1][j + 1] {
            ops.push(EditOp::Substitute(i, j));
            i += 1;
            j += 1;
        } else if i < n && dist[i][j] == 1 + dist[i + 1][j] {
            ops.push(EditOp::DeleteSource(i));
            i += 1;
        } else {
            ops.push(EditOp::InsertTarget(j));
            j += 1;
        }
    }

    (dist[0][0], EditScript { ops })
}

/// Distance-only variant, with an early-out band for the lexicon scan.
pub fn distance(a: &str, b: &str) -> usize {
    levenshtein(a, b).0
}

/// A ranked correction candidate from the lexicon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suggestion {
    pub word: String,
    pub distance: usize,
}

/// Lexicon words within `max_dist` of `word`, sorted by (distance, lexicon
/// order) and truncated to `k`.
pub fn suggest(word: &str, lexicon: &Lexicon, max_dist: usize, k: usize) -> Vec<Suggestion> {
    let word_len = word.chars().count();
    let mut found: Vec<Suggestion> = Vec::new();
    for cand in lexicon.words() {
        let cand_len = cand.chars().count();
        if cand_len.abs_diff(word_len) > max_dist {
            continue;
        }
        let d = distance(word, cand);
        if d <= max_dist {
            found.push(Suggestion {
                word: cand.clone(),
                distance: d,
            });
        }
    }
    // stable sort keeps lexicon order within equal distances
    found.sort_by_key(|s| s.distance);
    found.truncate(k);
    found
}

/// Dictionary-lookup corrector: best suggestion within distance 2, or the
/// input unchanged when nothing qualifies.
pub fn rulebased_correct(word: &str, lexicon: &Lexicon) -> String {
    suggest(word, lexicon, 2, 1)
        .into_iter()
        .next()
        .map(|s| s.word)
        .unwrap_or_else(|| word.to_string())
}
