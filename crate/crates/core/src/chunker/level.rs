use serde::{Deserialize, Serialize};

use super::codec::{GapCodec, SurpriseRule};
use super::sequence::{Event, ReducedSequence, SymbolSequence};
use crate::error::{Error, Result};
use crate::numerics::{argmax, Rng};
use crate::rnn::{cross_entropy, forward_step, Activation, RnnParams, RnnState};
use crate::train::{train_sequences, SeqObjective, TrainConfig, TrainLog};

/// One level of the stack: a next-symbol predictor with its surprise rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub index: usize,
    pub predictor: RnnParams,
    pub rule: SurpriseRule,
    pub codec: GapCodec,
}

impl Level {
    pub fn new(
        index: usize,
        codec: GapCodec,
        rule: SurpriseRule,
        hidden: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        let predictor = RnnParams::init(codec.input_dim(), hidden, codec.alphabet_size, activation, rng);
        Level {
            index,
            predictor,
            rule,
            codec,
        }
    }

    pub fn from_parts(index: usize, predictor: RnnParams, rule: SurpriseRule, codec: GapCodec) -> Result<Self> {
        predictor.validate()?;
        if predictor.input_size() != codec.input_dim() {
            return Err(Error::dims("level input", codec.input_dim(), predictor.input_size()));
        }
        if predictor.output_size() != codec.alphabet_size {
            return Err(Error::dims("level output", codec.alphabet_size, predictor.output_size()));
        }
        Ok(Level {
            index,
            predictor,
            rule,
            codec,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.predictor.hidden_size()
    }

    /// Runs the predictor over `input` and returns the hidden state after
    /// every step.
    pub fn hidden_trace(&self, input: &[Event]) -> Result<Vec<Vec<f64>>> {
        let mut state = RnnState::zeros(self.hidden_size());
        let mut out = Vec::with_capacity(input.len());
        for &e in input {
            state = forward_step(&self.predictor, &state, &self.codec.encode(e))?.0;
            out.push(state.h.clone());
        }
        Ok(out)
    }

    /// Final hidden state after consuming `input` (zeros for empty input).
    pub fn final_hidden(&self, input: &[Event]) -> Result<Vec<f64>> {
        let mut state = RnnState::zeros(self.hidden_size());
        for &e in input {
            state = forward_step(&self.predictor, &state, &self.codec.encode(e))?.0;
        }
        Ok(state.h)
    }

    /// Keeps the steps the frozen predictor fails to anticipate. Step 0 is
    /// always kept.
    pub fn reduce(&self, input: &[Event]) -> Result<ReducedSequence> {
        let mut events = Vec::new();
        let mut last_pos = 0;
        let mut state = RnnState::zeros(self.hidden_size());
        let mut prev_logits: Option<Vec<f64>> = None;
        for (t, &e) in input.iter().enumerate() {
            let surprise = match &prev_logits {
                None => true,
                Some(l) => self.rule.fires(l, e.symbol),
            };
            if surprise {
                let gap = if events.is_empty() { t } else { t - last_pos };
                events.push(Event { symbol: e.symbol, gap });
                last_pos = t;
            }
            let (next, logits) = forward_step(&self.predictor, &state, &self.codec.encode(e))?;
            state = next;
            prev_logits = Some(logits);
        }
        Ok(ReducedSequence {
            events,
            source_length: input.len(),
            alphabet_size: self.codec.alphabet_size,
        })
    }

    pub fn reduce_symbols(&self, seq: &SymbolSequence) -> Result<ReducedSequence> {
        if seq.alphabet_size() != self.codec.alphabet_size {
            return Err(Error::dims("alphabet", self.codec.alphabet_size, seq.alphabet_size()));
        }
        self.reduce(&seq.as_events())
    }

    /// Inverse of [`Level::reduce_symbols`]: replays the predictor, filling
    /// every non-event step with its prediction.
    pub fn reconstruct(&self, reduced: &ReducedSequence) -> Result<SymbolSequence> {
        let symbols = self.replay(reduced, |t| usize::from(t > 0))?;
        SymbolSequence::new(symbols, reduced.alphabet_size)
    }

    /// Inverse of [`Level::reduce`] for inputs on a non-unit clock.
    /// `input_gaps[t]` is the gap carried by input step `t`.
    pub fn reconstruct_timed(&self, reduced: &ReducedSequence, input_gaps: &[usize]) -> Result<Vec<Event>> {
        if input_gaps.len() != reduced.source_length {
            return Err(Error::dims("input gaps", reduced.source_length, input_gaps.len()));
        }
        let symbols = self.replay(reduced, |t| input_gaps[t])?;
        Ok(symbols
            .into_iter()
            .zip(input_gaps)
            .map(|(symbol, &gap)| Event { symbol, gap })
            .collect())
    }

    fn replay(&self, reduced: &ReducedSequence, gap_at: impl Fn(usize) -> usize) -> Result<Vec<usize>> {
        reduced.validate()?;
        if reduced.alphabet_size != self.codec.alphabet_size {
            return Err(Error::dims("alphabet", self.codec.alphabet_size, reduced.alphabet_size));
        }
        let positions = reduced.positions();
        let mut next_event = 0;
        let mut out = Vec::with_capacity(reduced.source_length);
        let mut state = RnnState::zeros(self.hidden_size());
        let mut prev_logits: Vec<f64> = Vec::new();
        for t in 0..reduced.source_length {
            let symbol = if next_event < positions.len() && positions[next_event] == t {
                let s = reduced.events[next_event].symbol;
                next_event += 1;
                if t > 0 && !self.rule.fires(&prev_logits, s) {
                    return Err(Error::StalePredictor { position: t });
                }
                s
            } else {
                let s = argmax(&prev_logits);
                if self.rule.fires(&prev_logits, s) {
                    // reduce would have kept this step
                    return Err(Error::StalePredictor { position: t });
                }
                s
            };
            out.push(symbol);
            let (next, logits) =
                forward_step(&self.predictor, &state, &self.codec.encode(Event { symbol, gap: gap_at(t) }))?;
            state = next;
            prev_logits = logits;
        }
        Ok(out)
    }

    /// Mean next-symbol cross-entropy over the steps `t >= from` of each
    /// sequence (the prediction made after consuming step `t - 1`).
    pub fn mean_loss(&self, corpus: &[Vec<Event>], from: usize) -> Result<f64> {
        let (mut total, mut count) = (0.0, 0usize);
        for seq in corpus {
            let mut state = RnnState::zeros(self.hidden_size());
            for (t, &e) in seq.iter().enumerate() {
                let (next, logits) = forward_step(&self.predictor, &state, &self.codec.encode(e))?;
                state = next;
                if t + 1 < seq.len() && t + 1 >= from {
                    total += cross_entropy(&logits, seq[t + 1].symbol)?.0;
                    count += 1;
                }
            }
        }
        Ok(total / count.max(1) as f64)
    }

    /// Unsupervised next-symbol training on `corpus`; returns the trained
    /// level and the per-epoch log.
    pub fn pretrain(&self, corpus: &[Vec<Event>], cfg: &TrainConfig, rng: &mut Rng) -> Result<(Level, TrainLog)> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let inputs: Vec<Vec<Vec<f64>>> = corpus.iter().map(|s| self.codec.encode_all(s)).collect();
        let mut predictor = self.predictor.clone();
        let rule = self.rule;
        let log = train_sequences(&mut predictor, &inputs, cfg, rng, |i, tape| {
            next_symbol_objective(&corpus[i], tape.logits(), rule)
        })?;
        Ok((
            Level {
                predictor,
                ..self.clone()
            },
            log,
        ))
    }
}

/// Next-symbol cross-entropy for one sequence, normalised to a per-step mean.
pub(crate) fn next_symbol_objective<'a>(
    seq: &[Event],
    logits: impl Iterator<Item = &'a [f64]>,
    rule: SurpriseRule,
) -> Result<SeqObjective> {
    let n = seq.len();
    let steps = n.saturating_sub(1);
    let scale = 1.0 / steps.max(1) as f64;
    let mut obj = SeqObjective {
        logit_grads: Vec::with_capacity(n),
        loss_steps: steps,
        ..Default::default()
    };
    for (t, l) in logits.enumerate() {
        if t + 1 < n {
            let target = seq[t + 1].symbol;
            let (loss, mut g) = cross_entropy(l, target)?;
            obj.loss += loss;
            if rule.fires(l, target) {
                obj.surprises += 1;
            }
            g.iter_mut().for_each(|v| *v *= scale);
            obj.logit_grads.push(Some(g));
        } else {
            obj.logit_grads.push(None);
        }
    }
    Ok(obj)
}
