//! Corpus assembly, stratified splitting, and CSV round-tripping.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    gen_deletion, gen_insertion, gen_runon, gen_split_of_kind, gen_substitution,
    gen_transposition, load_homonyms, ConfusionTable, ErrorType, InsertionKind, ParallelPair,
};
use crate::charlex::{Alphabet, Lexicon};
use crate::error::{Error, Result};

/// Requested number of pairs per error type.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Quotas([usize; ErrorType::ALL.len()]);

impl Quotas {
    pub fn uniform(n: usize) -> Self {
        Quotas([n; ErrorType::ALL.len()])
    }

    pub fn get(&self, ty: ErrorType) -> usize {
        self.0[ty.index()]
    }

    pub fn set(&mut self, ty: ErrorType, n: usize) {
        self.0[ty.index()] = n;
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

/// Confusion tables backing the dictionary-driven generators. A type whose
/// table is absent simply generates nothing (reported as a warning when its
/// quota is positive).
#[derive(Debug, Clone, Default)]
pub struct GeneratorTables {
    pub cognitive: Option<ConfusionTable>,
    pub visual_single: Option<ConfusionTable>,
    pub visual_combined: Option<ConfusionTable>,
    pub typo_subst_avro: Option<ConfusionTable>,
    pub typo_subst_bijoy: Option<ConfusionTable>,
    /// Keyboard table for [`InsertionMode::Keyboard`].
    pub insertion: Option<ConfusionTable>,
}

/// Whether typo-insertion duplicates a character or inserts a keyboard
/// neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InsertionMode {
    #[default]
    Duplicate,
    Keyboard,
}

/// Per-type row of the generation report.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub error_type: ErrorType,
    pub requested: usize,
    pub generated: usize,
}

/// Plain-text summary of a generation run: per-type counts and percentages,
/// plus warnings for unreachable quotas.
#[derive(Debug, Clone, Default)]
pub struct GenerationReport {
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
}

impl GenerationReport {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.generated).sum()
    }

    pub fn render(&self) -> String {
        let total = self.total();
        let mut out = String::new();
        out.push_str(&format!(
            "{:<22} {:>10} {:>10} {:>9}\n",
            "error type", "requested", "generated", "percent"
        ));
        for row in &self.rows {
            let pct = if total == 0 {
                0.0
            } else {
                100.0 * row.generated as f64 / total as f64
            };
            out.push_str(&format!(
                "{:<22} {:>10} {:>10} {:>8.2}%\n",
                row.error_type.label(),
                row.requested,
                row.generated,
                pct
            ));
        }
        out.push_str(&format!("total = {total}\n"));
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

/// Generate a parallel corpus: for each error type, walk the lexicon in a
/// seeded shuffle and apply the matching generator until the quota is met
/// or the words run out. Deterministic given (lexicon, tables, seed).
pub fn assemble_corpus(
    lexicon: &Lexicon,
    alphabet: &Alphabet,
    tables: &GeneratorTables,
    homonym_path: Option<&Path>,
    quotas: &Quotas,
    insertion_mode: InsertionMode,
    seed: u64,
) -> Result<(Vec<ParallelPair>, GenerationReport)> {
    let glyph = alphabet.mask_glyph();
    let mut pairs = Vec::new();
    let mut report = GenerationReport::default();

    for ty in ErrorType::ALL {
        let quota = quotas.get(ty);
        let mut generated = 0usize;
        let mut warned = false;
        if quota > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ty.index() as u64);

            if ty == ErrorType::Homonym {
                match homonym_path {
                    Some(path) => {
                        let homonyms = load_homonyms(path, glyph)?;
                        generated = homonyms.len().min(quota);
                        pairs.extend(homonyms.into_iter().take(quota));
                    }
                    None => {
                        report
                            .warnings
                            .push(format!("{}: quota {quota} but no homonym file", ty.label()));
                        warned = true;
                    }
                }
            } else {
                let table = match ty {
                    ErrorType::Cognitive => tables.cognitive.as_ref(),
                    ErrorType::VisualSingle => tables.visual_single.as_ref(),
                    ErrorType::VisualCombined => tables.visual_combined.as_ref(),
                    ErrorType::TypoSubstAvro => tables.typo_subst_avro.as_ref(),
                    ErrorType::TypoSubstBijoy => tables.typo_subst_bijoy.as_ref(),
                    _ => None,
                };
                let needs_table = matches!(
                    ty,
                    ErrorType::Cognitive
                        | ErrorType::VisualSingle
                        | ErrorType::VisualCombined
                        | ErrorType::TypoSubstAvro
                        | ErrorType::TypoSubstBijoy
                );
                if needs_table && table.is_none() {
                    report.warnings.push(format!(
                        "{}: quota {quota} but no confusion table",
                        ty.label()
                    ));
                    warned = true;
                } else {
                    let mut order: Vec<usize> = (0..lexicon.len()).collect();
                    order.shuffle(&mut rng);
                    for wi in order {
                        if generated == quota {
                            break;
                        }
                        let word = &lexicon.words()[wi];
                        let pair = match ty {
                            ErrorType::Cognitive
                            | ErrorType::VisualSingle
                            | ErrorType::VisualCombined
                            | ErrorType::TypoSubstAvro
                            | ErrorType::TypoSubstBijoy => gen_substitution(
                                word,
                                table.expect("checked above"),
                                ty,
                                glyph,
                                &mut rng,
                            ),
                            ErrorType::TypoDeletion => gen_deletion(word, glyph, &mut rng),
                            ErrorType::TypoTransposition => {
                                gen_transposition(word, glyph, &mut rng)
                            }
                            ErrorType::TypoInsertion => {
                                let kind = match insertion_mode {
                                    InsertionMode::Duplicate => InsertionKind::Duplicate,
                                    InsertionMode::Keyboard => match tables.insertion.as_ref() {
                                        Some(t) => InsertionKind::Keyboard(t),
                                        None => InsertionKind::Duplicate,
                                    },
                                };
                                gen_insertion(word, kind, glyph, &mut rng)
                            }
                            ErrorType::RunOn => gen_runon(word, lexicon, glyph, &mut rng),
                            ErrorType::SplitLeft
                            | ErrorType::SplitRight
                            | ErrorType::SplitRandom
                            | ErrorType::SplitBoth => {
                                gen_split_of_kind(word, lexicon, ty, glyph, &mut rng)
                            }
                            ErrorType::Homonym => unreachable!("handled above"),
                        };
                        if let Some(p) = pair {
                            pairs.push(p);
                            generated += 1;
                        }
                    }
                }
            }
            if generated < quota && !warned {
                report.warnings.push(format!(
                    "{}: requested {quota}, generated {generated} (lexicon exhausted)",
                    ty.label()
                ));
            }
        }
        report.rows.push(ReportRow {
            error_type: ty,
            requested: quota,
            generated,
        });
    }

    Ok((pairs, report))
}

/// Train/validation/test portions of a corpus.
#[derive(Debug, Clone, Default)]
pub struct CorpusSplit {
    pub train: Vec<ParallelPair>,
    pub validation: Vec<ParallelPair>,
    pub test: Vec<ParallelPair>,
}

/// Split per error type: seeded shuffle, then contiguous cuts at the
/// cumulative rounded ratios, so each type lands within one pair of its
/// exact proportion.
pub fn stratified_split(
    corpus: &[ParallelPair],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<CorpusSplit> {
    let (r_train, r_val, r_test) = ratios;
    if r_train < 0.0 || r_val < 0.0 || r_test < 0.0 {
        return Err(Error::Config("split ratios must be non-negative".into()));
    }
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1, got {}",
            r_train + r_val + r_test
        )));
    }

    let mut split = CorpusSplit::default();
    for ty in ErrorType::ALL {
        let mut indices: Vec<usize> = corpus
            .iter()
            .enumerate()
            .filter(|(_, p)| p.error_type == ty)
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ty.index() as u64);
        indices.shuffle(&mut rng);
        let n = indices.len();
        let cut1 = (r_train * n as f64).round() as usize;
        let cut2 = ((r_train + r_val) * n as f64).round() as usize;
        let cut1 = cut1.min(n);
        let cut2 = cut2.clamp(cut1, n);
        for (k, &i) in indices.iter().enumerate() {
            let pair = corpus[i].clone();
            if k < cut1 {
                split.train.push(pair);
            } else if k < cut2 {
                split.validation.push(pair);
            } else {
                split.test.push(pair);
            }
        }
    }
    Ok(split)
}

const CSV_HEADER: [&str; 4] = ["source", "mask", "target", "error_type"];

/// Write pairs as UTF-8 CSV with the fixed `source,mask,target,error_type`
/// header. Fields are quoted only when necessary, so output is byte-stable.
pub fn write_corpus(pairs: &[ParallelPair], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, &e))?;
    writer
        .write_record(CSV_HEADER)
        .map_err(|e| csv_error(path, &e))?;
    for pair in pairs {
        writer
            .write_record([
                pair.source.as_str(),
                pair.mask.as_str(),
                pair.target.as_str(),
                pair.error_type.label(),
            ])
            .map_err(|e| csv_error(path, &e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a corpus CSV written by [`write_corpus`].
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<ParallelPair>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, &e))?;
    {
        let headers = reader.headers().map_err(|e| csv_error(path, &e))?;
        if headers != &csv::StringRecord::from(CSV_HEADER.to_vec()) {
            return Err(Error::data(
                path,
                1,
                format!("unexpected header {:?}", headers),
            ));
        }
    }
    let mut pairs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, &e))?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        if record.len() != 4 {
            return Err(Error::data(
                path,
                line,
                format!("expected 4 fields, got {}", record.len()),
            ));
        }
        let error_type: ErrorType = record[3]
            .parse()
            .map_err(|e: String| Error::data(path, line, e))?;
        pairs.push(ParallelPair {
            source: record[0].to_string(),
            mask: record[1].to_string(),
            target: record[2].to_string(),
            error_type,
        });
    }
    Ok(pairs)
}

fn csv_error(path: &Path, e: &csv::Error) -> Error {
    let line = match e.position() {
        Some(p) => p.line() as usize,
        None => 0,
    };
    Error::data(path, line, e.to_string())
}
