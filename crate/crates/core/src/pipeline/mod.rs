//! Stage-specific training examples, the three-stage training loop, the
//! inference cascade with its ablation variants, and checkpoints.

mod checkpoint;
#[cfg(test)]
mod tests;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{continue_training, train_stage, EpochStats, TrainOptions, TrainingLog};

use std::str::FromStr;

use crate::charlex::{Vocab, DEFAULT_MASK_GLYPH, MASK, SEP};
use crate::error::{Error, Result};
use crate::errorgen::{ParallelPair, PlausibilityScorer};
use crate::scalar::Scalar;
use crate::transformer::{beam_decode, greedy_decode, Seq2SeqModel};

/// Which network of the cascade an example trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageRole {
    Detector,
    Purificator,
    Corrector,
}

impl StageRole {
    pub fn label(self) -> &'static str {
        match self {
            StageRole::Detector => "detector",
            StageRole::Purificator => "purificator",
            StageRole::Corrector => "corrector",
        }
    }
}

impl FromStr for StageRole {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "detector" => Ok(StageRole::Detector),
            "purificator" => Ok(StageRole::Purificator),
            "corrector" => Ok(StageRole::Corrector),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}

/// Cascade composition: full three-stage, detector+corrector, or
/// corrector-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageVariant {
    Dpc,
    Dc,
    C,
}

impl StageVariant {
    pub fn label(self) -> &'static str {
        match self {
            StageVariant::Dpc => "dpc",
            StageVariant::Dc => "dc",
            StageVariant::C => "c",
        }
    }

    pub fn stages(self) -> &'static [StageRole] {
        match self {
            StageVariant::Dpc => &[
                StageRole::Detector,
                StageRole::Purificator,
                StageRole::Corrector,
            ],
            StageVariant::Dc => &[StageRole::Detector, StageRole::Corrector],
            StageVariant::C => &[StageRole::Corrector],
        }
    }
}

impl FromStr for StageVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "dpc" => Ok(StageVariant::Dpc),
            "dc" => Ok(StageVariant::Dc),
            "c" => Ok(StageVariant::C),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

/// One token of a stage input/target: a character, SEP, or MASK.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tok {
    Ch(char),
    Sep,
    Mask,
}

/// Character tokens of plain text.
pub fn text_toks(text: &str) -> Vec<Tok> {
    text.chars().map(Tok::Ch).collect()
}

/// Tokens of a mask-form string where `glyph` marks MASK positions.
pub fn mask_toks(text: &str, glyph: char) -> Vec<Tok> {
    text.chars()
        .map(|c| if c == glyph { Tok::Mask } else { Tok::Ch(c) })
        .collect()
}

/// Encode tokens to vocabulary ids.
pub fn tok_ids(vocab: &Vocab, toks: &[Tok]) -> Vec<usize> {
    toks.iter()
        .map(|t| match t {
            Tok::Ch(c) => vocab.id_or_unk(*c),
            Tok::Sep => SEP,
            Tok::Mask => MASK,
        })
        .collect()
}

/// One training example for one stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageExample {
    pub input: Vec<Tok>,
    pub target: Vec<Tok>,
    pub role: StageRole,
}

fn validate_pair(pair: &ParallelPair, glyph: char) -> Result<()> {
    let src: Vec<char> = pair.source.chars().collect();
    let mask: Vec<char> = pair.mask.chars().collect();
    if src.len() != mask.len() {
        return Err(Error::InvalidPair(format!(
            "mask length {} differs from source length {} in {:?}",
            mask.len(),
            src.len(),
            pair.source
        )));
    }
    for (j, (&m, &s)) in mask.iter().zip(&src).enumerate() {
        if m != s && m != glyph {
            return Err(Error::InvalidPair(format!(
                "mask position {j} is {m:?}, expected {s:?} or the mask glyph"
            )));
        }
    }
    Ok(())
}

/// Detector example: input is the erroneous source, target is the mask with
/// the glyph replaced by the MASK token; target length equals input length.
pub fn make_detector_example(pair: &ParallelPair, glyph: char) -> Result<StageExample> {
    validate_pair(pair, glyph)?;
    Ok(StageExample {
        input: text_toks(&pair.source),
        target: mask_toks(&pair.mask, glyph),
        role: StageRole::Detector,
    })
}

fn sep_joined(source: &str, middle: &[Tok]) -> Vec<Tok> {
    let mut input = Vec::with_capacity(source.chars().count() + middle.len() + 3);
    input.push(Tok::Sep);
    input.extend(text_toks(source));
    input.push(Tok::Sep);
    input.extend_from_slice(middle);
    input.push(Tok::Sep);
    input
}

/// Purificator example: SEP source SEP detected SEP, targeting the gold mask.
pub fn make_purificator_example(
    pair: &ParallelPair,
    detected: &str,
    glyph: char,
) -> Result<StageExample> {
    validate_pair(pair, glyph)?;
    Ok(StageExample {
        input: sep_joined(&pair.source, &mask_toks(detected, glyph)),
        target: mask_toks(&pair.mask, glyph),
        role: StageRole::Purificator,
    })
}

/// Corrector example: SEP source SEP purified SEP, targeting the correction.
pub fn make_corrector_example(
    pair: &ParallelPair,
    purified: &str,
    glyph: char,
) -> Result<StageExample> {
    validate_pair(pair, glyph)?;
    Ok(StageExample {
        input: sep_joined(&pair.source, &mask_toks(purified, glyph)),
        target: text_toks(&pair.target),
        role: StageRole::Corrector,
    })
}

/// Corrector-only example (variant C): raw source to target, no SEP or mask.
pub fn make_plain_corrector_example(pair: &ParallelPair) -> StageExample {
    StageExample {
        input: text_toks(&pair.source),
        target: text_toks(&pair.target),
        role: StageRole::Corrector,
    }
}

/// How the cascade decodes each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

impl FromStr for DecodeMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "greedy" {
            return Ok(DecodeMode::Greedy);
        }
        if let Some(b) = s.strip_prefix("beam:") {
            let width: usize = b
                .parse()
                .map_err(|_| format!("invalid beam width {b:?}"))?;
            if width == 0 {
                return Err("beam width must be at least 1".into());
            }
            return Ok(DecodeMode::Beam(width));
        }
        Err(format!("unknown decode mode {s:?}, expected greedy or beam:B"))
    }
}

/// The frozen models of one cascade variant, sharing a single vocabulary.
#[derive(Debug, Clone)]
pub struct CascadeModels<F: Scalar> {
    pub variant: StageVariant,
    pub detector: Option<Seq2SeqModel<F>>,
    pub purificator: Option<Seq2SeqModel<F>>,
    pub corrector: Seq2SeqModel<F>,
}

impl<F: Scalar> CascadeModels<F> {
    pub fn new(
        variant: StageVariant,
        detector: Option<Seq2SeqModel<F>>,
        purificator: Option<Seq2SeqModel<F>>,
        corrector: Seq2SeqModel<F>,
    ) -> Result<Self> {
        let need_detector = matches!(variant, StageVariant::Dpc | StageVariant::Dc);
        if need_detector != detector.is_some() {
            return Err(Error::Config(format!(
                "variant {} {} a detector model",
                variant.label(),
                if need_detector { "requires" } else { "does not take" }
            )));
        }
        let need_purificator = variant == StageVariant::Dpc;
        if need_purificator != purificator.is_some() {
            return Err(Error::Config(format!(
                "variant {} {} a purificator model",
                variant.label(),
                if need_purificator { "requires" } else { "does not take" }
            )));
        }
        for stage in detector.iter().chain(purificator.iter()) {
            if stage.vocab() != corrector.vocab() {
                return Err(Error::Config(
                    "cascade checkpoints carry mismatched vocabularies".into(),
                ));
            }
        }
        Ok(CascadeModels {
            variant,
            detector,
            purificator,
            corrector,
        })
    }
}

/// Result of correcting one word through the cascade.
#[derive(Debug, Clone)]
pub struct CorrectionOutcome {
    /// Detector output rendered with the mask glyph, when a detector ran.
    pub detected: Option<String>,
    /// Purificator output rendered with the mask glyph, when one ran.
    pub purified: Option<String>,
    /// Top candidate with specials stripped.
    pub output: String,
    /// Ranked candidates with length-normalized log-probability scores;
    /// greedy decoding yields a single candidate with score 0.
    pub candidates: Vec<(String, f64)>,
    /// Whether the detector produced a mask of a different length than the
    /// input (passed through as-is; the purificator exists to repair it).
    pub detector_len_mismatch: bool,
}

fn decode_stage<F: Scalar>(
    model: &Seq2SeqModel<F>,
    src: &[usize],
    mode: DecodeMode,
    max_len: usize,
) -> Result<Vec<(Vec<usize>, f64)>> {
    match mode {
        DecodeMode::Greedy => Ok(vec![(greedy_decode(model, src, max_len)?, 0.0)]),
        DecodeMode::Beam(b) => Ok(beam_decode(model, src, b, max_len)?
            .into_iter()
            .map(|h| (h.tokens, h.score))
            .collect()),
    }
}

fn check_len<F: Scalar>(model: &Seq2SeqModel<F>, len: usize) -> Result<()> {
    let max = model.config().max_seq_len;
    if len + 2 > max {
        return Err(Error::InputTooLong { len: len + 2, max });
    }
    Ok(())
}

fn sep_joined_ids(word_ids: &[usize], middle: &[usize]) -> Vec<usize> {
    let mut ids = Vec::with_capacity(word_ids.len() + middle.len() + 3);
    ids.push(SEP);
    ids.extend_from_slice(word_ids);
    ids.push(SEP);
    ids.extend_from_slice(middle);
    ids.push(SEP);
    ids
}

/// Run the Eq.-1 cascade on one word: the detector masks, the purificator
/// refines the mask, the corrector synthesizes the output. Inference always
/// cascades predicted intermediates. Dispatches on the variant: DC skips
/// the purificator, C feeds the raw word to the corrector.
pub fn correct_word<F: Scalar>(
    models: &CascadeModels<F>,
    word: &str,
    mode: DecodeMode,
) -> Result<CorrectionOutcome> {
    let glyph = DEFAULT_MASK_GLYPH;
    if word.is_empty() {
        return Ok(CorrectionOutcome {
            detected: None,
            purified: None,
            output: String::new(),
            candidates: vec![(String::new(), 0.0)],
            detector_len_mismatch: false,
        });
    }
    let vocab = models.corrector.vocab();
    let word_ids = vocab.encode_str(word);
    let gen_cap = |m: &Seq2SeqModel<F>| m.config().max_seq_len.saturating_sub(2);

    let mut detected = None;
    let mut detector_len_mismatch = false;
    let corrector_input = match models.variant {
        StageVariant::C => word_ids.clone(),
        StageVariant::Dc | StageVariant::Dpc => {
            let detector = models.detector.as_ref().expect("validated by new");
            check_len(detector, word_ids.len())?;
            let xd = decode_stage(detector, &word_ids, mode, gen_cap(detector))?
                .swap_remove(0)
                .0;
            detector_len_mismatch = xd.len() != word_ids.len();
            if detector_len_mismatch {
                log::debug!(
                    "detector produced {} tokens for a {}-token input",
                    xd.len(),
                    word_ids.len()
                );
            }
            detected = Some(vocab.decode_mask_text(&xd, glyph));
            let middle = if models.variant == StageVariant::Dpc {
                let purificator = models.purificator.as_ref().expect("validated by new");
                let pur_in = sep_joined_ids(&word_ids, &xd);
                check_len(purificator, pur_in.len())?;
                decode_stage(purificator, &pur_in, mode, gen_cap(purificator))?
                    .swap_remove(0)
                    .0
            } else {
                xd
            };
            sep_joined_ids(&word_ids, &middle)
        }
    };
    let purified = match models.variant {
        StageVariant::Dpc => {
            // middle segment sits between the 2nd and 3rd SEP
            let inner = &corrector_input[word_ids.len() + 2..corrector_input.len() - 1];
            Some(vocab.decode_mask_text(inner, glyph))
        }
        _ => None,
    };

    check_len(&models.corrector, corrector_input.len())?;
    let decoded = decode_stage(
        &models.corrector,
        &corrector_input,
        mode,
        gen_cap(&models.corrector),
    )?;
    let candidates: Vec<(String, f64)> = decoded
        .into_iter()
        .map(|(ids, score)| (vocab.decode_text(&ids), score))
        .collect();
    let output = candidates[0].0.clone();

    Ok(CorrectionOutcome {
        detected,
        purified,
        output,
        candidates,
        detector_len_mismatch,
    })
}

/// Mask-form prediction of the detector (and, for DPC, the purificator)
/// alone, for mask-quality evaluation.
pub fn predict_mask<F: Scalar>(
    models: &CascadeModels<F>,
    word: &str,
    mode: DecodeMode,
) -> Result<(String, Option<String>)> {
    let outcome = correct_word(models, word, mode)?;
    Ok((outcome.detected.unwrap_or_default(), outcome.purified))
}

/// Plausibility scorer backed by a transformer trained target-to-source;
/// the score is the per-character negative log-likelihood of the erroneous
/// source given its target. Unscorable pairs (for example over-long ones)
/// rank as maximally implausible.
pub struct TransformerScorer<F: Scalar> {
    model: Seq2SeqModel<F>,
}

impl<F: Scalar> TransformerScorer<F> {
    pub fn new(model: Seq2SeqModel<F>) -> Self {
        TransformerScorer { model }
    }
}

impl<F: Scalar> PlausibilityScorer for TransformerScorer<F> {
    fn score(&self, pair: &ParallelPair) -> f64 {
        let vocab = self.model.vocab();
        let src = vocab.encode_str(&pair.target);
        let tgt = vocab.encode_str(&pair.source);
        self.model.sequence_nll(&src, &tgt).unwrap_or(f64::INFINITY)
    }
}
