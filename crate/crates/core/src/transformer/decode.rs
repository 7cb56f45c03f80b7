//! Greedy and beam-search decoding against a frozen model.

use super::{wrap_sos_eos, RunCtx, Seq2SeqModel};
use crate::autodiff::Tape;
use crate::charlex::{EOS, PAD, SOS};
use crate::error::Result;
use crate::scalar::{to_f64, Scalar};

/// Encoder output cached across decode steps.
pub(crate) struct EncodedSource<F> {
    t_src: usize,
    hidden: usize,
    z: Vec<F>,
    key_ok: Vec<bool>,
}

impl<F: Scalar> Seq2SeqModel<F> {
    pub(crate) fn encode_source(&self, src_core: &[usize]) -> Result<EncodedSource<F>> {
        let src = wrap_sos_eos(src_core);
        let key_ok: Vec<bool> = src.iter().map(|&id| id != PAD).collect();
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let mut ctx = RunCtx::eval();
        let z = self.encode(&mut tape, &vars, &src, &key_ok, &mut ctx)?;
        Ok(EncodedSource {
            t_src: src.len(),
            hidden: self.config().hidden_dim,
            z: tape.value(z).to_vec(),
            key_ok,
        })
    }

    /// Logits of the next token after `prefix` (generated ids so far).
    pub(crate) fn step_logits(&self, enc: &EncodedSource<F>, prefix: &[usize]) -> Result<Vec<F>> {
        let mut tgt_in = Vec::with_capacity(prefix.len() + 1);
        tgt_in.push(SOS);
        tgt_in.extend_from_slice(prefix);

        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let z = tape.input(&[enc.t_src, enc.hidden], enc.z.clone())?;
        let mut ctx = RunCtx::eval();
        let logits = self.decode(&mut tape, &vars, &tgt_in, z, &enc.key_ok, &mut ctx)?;
        let v = self.config().vocab_size;
        let all = tape.value(logits);
        Ok(all[(tgt_in.len() - 1) * v..].to_vec())
    }
}

fn argmax_first<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

fn log_softmax_f64<F: Scalar>(row: &[F]) -> Vec<f64> {
    let vals: Vec<f64> = row.iter().map(|&x| to_f64(x)).collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = vals.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    vals.into_iter().map(|x| x - log_z).collect()
}

/// Argmax decoding from SOS until EOS or `max_len` generated tokens.
pub fn greedy_decode<F: Scalar>(
    model: &Seq2SeqModel<F>,
    src_core: &[usize],
    max_len: usize,
) -> Result<Vec<usize>> {
    let enc = model.encode_source(src_core)?;
    let cap = max_len.min(model.config().max_seq_len.saturating_sub(1));
    let mut out = Vec::new();
    for _ in 0..cap {
        let row = model.step_logits(&enc, &out)?;
        let tok = argmax_first(&row);
        if tok == EOS {
            break;
        }
        out.push(tok);
    }
    Ok(out)
}

/// One ranked beam-search result.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<usize>,
    /// Length-normalized log probability.
    pub score: f64,
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<usize>,
    logp: f64,
    finished: bool,
}

impl Hyp {
    /// Generated length including the EOS step, at least 1.
    fn norm_len(&self) -> f64 {
        (self.tokens.len() + usize::from(self.finished)).max(1) as f64
    }

    fn score(&self) -> f64 {
        self.logp / self.norm_len()
    }
}

/// Length-normalized beam search; the returned list is sorted by score
/// descending and `beam_decode(.., 1, ..)` equals [`greedy_decode`].
pub fn beam_decode<F: Scalar>(
    model: &Seq2SeqModel<F>,
    src_core: &[usize],
    beam_width: usize,
    max_len: usize,
) -> Result<Vec<BeamHypothesis>> {
    let b = beam_width.max(1);
    let enc = model.encode_source(src_core)?;
    let cap = max_len.min(model.config().max_seq_len.saturating_sub(1));

    let mut hyps = vec![Hyp {
        tokens: Vec::new(),
        logp: 0.0,
        finished: cap == 0,
    }];

    for _ in 0..cap {
        if hyps.iter().all(|h| h.finished) {
            break;
        }
        let mut candidates: Vec<Hyp> = Vec::new();
        for hyp in &hyps {
            if hyp.finished {
                candidates.push(hyp.clone());
                continue;
            }
            let row = model.step_logits(&enc, &hyp.tokens)?;
            let log_probs = log_softmax_f64(&row);
            let mut ranked: Vec<usize> = (0..log_probs.len()).collect();
            ranked.sort_by(|&i, &j| log_probs[j].total_cmp(&log_probs[i]).then(i.cmp(&j)));
            for &tok in ranked.iter().take(b) {
                let mut next = hyp.clone();
                next.logp += log_probs[tok];
                if tok == EOS {
                    next.finished = true;
                } else {
                    next.tokens.push(tok);
                }
                candidates.push(next);
            }
        }
        candidates.sort_by(|x, y| y.score().total_cmp(&x.score()));
        candidates.truncate(b);
        hyps = candidates;
    }

    hyps.sort_by(|x, y| y.score().total_cmp(&x.score()));
    Ok(hyps
        .into_iter()
        .map(|h| BeamHypothesis {
            score: h.score(),
            tokens: h.tokens,
        })
        .collect())
}
