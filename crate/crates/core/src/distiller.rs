//! Collapsing a higher level into the one below it: the lower predictor gets
//! extra linear outputs trained to reproduce the higher predictor's hidden
//! state at every step the lower level forwards upward.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chunker::{next_symbol_objective, Event, GapCodec, Hierarchy, Level, ReducedSequence, SurpriseRule, SymbolSequence};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::provenance::Provenance;
use crate::rnn::checkpoint::RnnCheckpoint;
use crate::rnn::{forward_step, RnnParams, RnnState, UnrollTape};
use crate::train::{train_sequences, SeqObjective, TrainConfig, TrainLog};

/// Teacher hidden state to reproduce after the student consumes `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub step: usize,
    pub hidden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillTargets {
    pub lower_level: usize,
    pub teacher_level: usize,
    pub hidden_size: usize,
    /// One list per sequence, ordered by step.
    pub sequences: Vec<Vec<Target>>,
}

impl DistillTargets {
    pub fn count(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }
}

/// Runs `teacher` over each reduced sequence and pairs its hidden state
/// after every event with that event's position in the lower clock.
pub fn targets_from_reduced(teacher: &Level, lower_level: usize, reduced: &[ReducedSequence]) -> Result<DistillTargets> {
    if reduced.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sequences = reduced
        .par_iter()
        .map(|r| {
            r.validate()?;
            if r.alphabet_size != teacher.codec.alphabet_size {
                return Err(Error::dims("teacher alphabet", teacher.codec.alphabet_size, r.alphabet_size));
            }
            let trace = teacher.hidden_trace(&r.events)?;
            Ok(r.positions()
                .into_iter()
                .zip(trace)
                .map(|(step, hidden)| Target { step, hidden })
                .collect())
        })
        .collect::<Result<Vec<Vec<Target>>>>()?;
    Ok(DistillTargets {
        lower_level,
        teacher_level: teacher.index,
        hidden_size: teacher.hidden_size(),
        sequences,
    })
}

/// Inputs of level `lower` for every corpus sequence, and the targets the
/// level above produces on them.
pub fn make_targets(
    hierarchy: &Hierarchy,
    lower: usize,
    corpus: &[SymbolSequence],
) -> Result<(Vec<Vec<Event>>, DistillTargets)> {
    if lower + 1 >= hierarchy.depth() {
        return Err(Error::Config(format!(
            "level {lower} has no level above it in a hierarchy of depth {}",
            hierarchy.depth()
        )));
    }
    if let Some(s) = corpus.iter().find(|s| s.alphabet_size() != hierarchy.alphabet_size()) {
        return Err(Error::dims("corpus alphabet", hierarchy.alphabet_size(), s.alphabet_size()));
    }
    let inputs: Vec<Vec<Event>> = corpus
        .par_iter()
        .map(|s| hierarchy.input_of(lower, s))
        .collect::<Result<_>>()?;
    let level = &hierarchy.levels[lower];
    let reduced: Vec<ReducedSequence> = inputs.par_iter().map(|x| level.reduce(x)).collect::<Result<_>>()?;
    let targets = targets_from_reduced(&hierarchy.levels[lower + 1], lower, &reduced)?;
    Ok((inputs, targets))
}

/// A level predictor whose output layer carries extra imitation rows:
/// outputs `..split` are next-symbol logits, `split..` a linear estimate of
/// the teacher's hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRnn {
    pub base: RnnParams,
    pub split: usize,
    pub rule: SurpriseRule,
    pub codec: GapCodec,
}

impl AugmentedRnn {
    /// Copies `level` and appends `imitation_dim` output rows drawn from a
    /// stream derived from `rng` (which is not advanced).
    pub fn from_level(level: &Level, imitation_dim: usize, rng: &Rng) -> AugmentedRnn {
        let p = &level.predictor;
        let (h, split) = (p.hidden_size(), p.output_size());
        let extra = Matrix::uniform(imitation_dim, h, 1.0 / (h as f64).sqrt(), &mut rng.derive("imitation-head"));
        let mut data = p.w_out.data().to_vec();
        data.extend_from_slice(extra.data());
        let mut base = p.clone();
        base.w_out = Matrix::from_vec(split + imitation_dim, h, data).expect("row counts add up");
        base.b_o.extend(std::iter::repeat_n(0.0, imitation_dim));
        AugmentedRnn {
            base,
            split,
            rule: level.rule,
            codec: level.codec,
        }
    }

    pub fn imitation_dim(&self) -> usize {
        self.base.output_size() - self.split
    }

    /// The prediction part alone, as an ordinary level.
    pub fn prediction_level(&self, index: usize) -> Result<Level> {
        let mut p = self.base.clone();
        let h = p.hidden_size();
        p.w_out = Matrix::from_vec(self.split, h, p.w_out.data()[..self.split * h].to_vec())?;
        p.b_o.truncate(self.split);
        Level::from_parts(index, p, self.rule, self.codec)
    }

    /// Imitation output at the last step the net's own prediction head is
    /// surprised by: the collapsed net's estimate of the teacher's final
    /// hidden state.
    pub fn distilled_code(&self, input: &[Event]) -> Result<Vec<f64>> {
        if input.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut state = RnnState::zeros(self.base.hidden_size());
        let mut prev: Option<Vec<f64>> = None;
        let mut code = Vec::new();
        for &e in input {
            let surprised = prev.as_ref().is_none_or(|l| self.rule.fires(&l[..self.split], e.symbol));
            let (next, logits) = forward_step(&self.base, &state, &self.codec.encode(e))?;
            if surprised {
                code = logits[self.split..].to_vec();
            }
            state = next;
            prev = Some(logits);
        }
        Ok(code)
    }

    /// Mean squared imitation error per hidden unit over all targets.
    pub fn imitation_mse(&self, inputs: &[Vec<Event>], targets: &DistillTargets) -> Result<f64> {
        check_targets(self, inputs, targets)?;
        let per: Vec<(f64, usize)> = inputs
            .par_iter()
            .zip(&targets.sequences)
            .map(|(x, ts)| {
                let mut state = RnnState::zeros(self.base.hidden_size());
                let mut outputs = Vec::with_capacity(x.len());
                for &e in x {
                    let (next, logits) = forward_step(&self.base, &state, &self.codec.encode(e))?;
                    state = next;
                    outputs.push(logits);
                }
                let sum = ts.iter().map(|t| unit_mse(&outputs[t.step][self.split..], &t.hidden)).sum::<f64>();
                Ok((sum, ts.len()))
            })
            .collect::<Result<_>>()?;
        let (sum, n) = per.iter().fold((0.0, 0), |(s, n), p| (s + p.0, n + p.1));
        Ok(sum / n.max(1) as f64)
    }
}

fn unit_mse(out: &[f64], target: &[f64]) -> f64 {
    out.iter().zip(target).map(|(o, y)| (o - y).powi(2)).sum::<f64>() / target.len() as f64
}

fn check_targets(aug: &AugmentedRnn, inputs: &[Vec<Event>], targets: &DistillTargets) -> Result<()> {
    if inputs.len() != targets.sequences.len() {
        return Err(Error::dims("target sequences", inputs.len(), targets.sequences.len()));
    }
    if targets.hidden_size != aug.imitation_dim() {
        return Err(Error::dims("imitation outputs", targets.hidden_size, aug.imitation_dim()));
    }
    for (x, ts) in inputs.iter().zip(&targets.sequences) {
        if let Some(t) = ts.iter().find(|t| t.step >= x.len() || t.hidden.len() != targets.hidden_size) {
            return Err(Error::InvalidReduction(format!(
                "target at step {} does not fit a sequence of length {}",
                t.step,
                x.len()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub lambda: f64,
    pub train: TrainConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            lambda: 1.0,
            train: TrainConfig {
                epochs: 100,
                lr: 0.1,
                early_stop: None,
                ..TrainConfig::default()
            },
        }
    }
}

/// Per-sequence objective: mean next-symbol cross-entropy over all steps
/// plus `lambda` times the mean per-unit squared imitation error over the
/// target steps. Steps without a target contribute no imitation gradient.
pub(crate) fn distill_objective(
    aug: &AugmentedRnn,
    input: &[Event],
    targets: &[Target],
    tape: &UnrollTape,
    lambda: f64,
) -> Result<SeqObjective> {
    let split = aug.split;
    let mut obj = next_symbol_objective(input, tape.logits().map(|l| &l[..split]), aug.rule)?;
    let h = aug.imitation_dim();
    for g in obj.logit_grads.iter_mut() {
        match g {
            Some(v) => v.resize(split + h, 0.0),
            None => *g = Some(vec![0.0; split + h]),
        }
    }
    let scale = 2.0 * lambda / (h as f64 * targets.len().max(1) as f64);
    for t in targets {
        let out = &tape.steps[t.step].logits[split..];
        obj.aux_loss += unit_mse(out, &t.hidden);
        let g = obj.logit_grads[t.step].as_mut().unwrap();
        for ((gi, o), y) in g[split..].iter_mut().zip(out).zip(&t.hidden) {
            *gi = scale * (o - y);
        }
    }
    obj.aux_steps = targets.len();
    Ok(obj)
}

/// Trains the augmented net on next-symbol prediction plus imitation.
/// The returned log carries the prediction loss in `loss` and the
/// imitation error (per unit, per target) in `aux_loss`.
pub fn distill(
    aug: &AugmentedRnn,
    inputs: &[Vec<Event>],
    targets: &DistillTargets,
    cfg: &DistillConfig,
    rng: &mut Rng,
) -> Result<(AugmentedRnn, TrainLog)> {
    if !(cfg.lambda >= 0.0) || !cfg.lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be non-negative, got {}", cfg.lambda)));
    }
    if inputs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    check_targets(aug, inputs, targets)?;
    let encoded: Vec<Vec<Vec<f64>>> = inputs.iter().map(|x| aug.codec.encode_all(x)).collect();
    let mut out = aug.clone();
    let log = train_sequences(&mut out.base, &encoded, &cfg.train, rng, |i, tape| {
        distill_objective(aug, &inputs[i], &targets.sequences[i], tape, cfg.lambda)
    })?;
    Ok((out, log))
}

/// On-disk form of a distilled net: the plain network checkpoint plus the
/// fields that describe the collapse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledCheckpoint {
    #[serde(flatten)]
    pub net: RnnCheckpoint,
    pub split_index: usize,
    pub lambda: f64,
    pub teacher_level: usize,
    pub lower_level: usize,
    pub surprise: SurpriseRule,
    pub gap_cap: usize,
    pub alphabet_size: usize,
}

pub fn save(
    aug: &AugmentedRnn,
    lambda: f64,
    targets: &DistillTargets,
    provenance: Option<&Provenance>,
    path: &Path,
) -> Result<()> {
    let ck = DistilledCheckpoint {
        net: RnnCheckpoint {
            provenance: provenance.cloned(),
            ..RnnCheckpoint::from(&aug.base)
        },
        split_index: aug.split,
        lambda,
        teacher_level: targets.teacher_level,
        lower_level: targets.lower_level,
        surprise: aug.rule,
        gap_cap: aug.codec.gap_cap,
        alphabet_size: aug.codec.alphabet_size,
    };
    fs::write(path, serde_json::to_string_pretty(&ck)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(AugmentedRnn, DistilledCheckpoint)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let ck: DistilledCheckpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
    let base = ck.net.clone().into_params()?;
    if ck.split_index > base.output_size() {
        return Err(Error::dims("split index", base.output_size(), ck.split_index));
    }
    let aug = AugmentedRnn {
        base,
        split: ck.split_index,
        rule: ck.surprise,
        codec: GapCodec::new(ck.alphabet_size, ck.gap_cap),
    };
    Ok((aug, ck))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::{build_hierarchy, HierarchyConfig};
    use crate::numerics::{finite_diff_grad, max_relative_error};
    use crate::rnn::{backprop, unroll, Activation, Record};

    fn corpus(n: usize, len: usize, alphabet: usize, seed: u64) -> Vec<SymbolSequence> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| {
                // mostly a repeating pattern with occasional random symbols
                let s = (0..len)
                    .map(|t| if rng.bernoulli(0.15) { rng.below(alphabet) } else { t % alphabet })
                    .collect();
                SymbolSequence::new(s, alphabet).unwrap()
            })
            .collect()
    }

    fn small_hierarchy(seqs: &[SymbolSequence], epochs: usize) -> Hierarchy {
        let cfg = HierarchyConfig {
            depth: 2,
            hidden_sizes: vec![5, 3],
            train: vec![TrainConfig {
                epochs,
                lr: 0.3,
                early_stop: None,
                ..TrainConfig::default()
            }],
            ..HierarchyConfig::default()
        };
        build_hierarchy(seqs, &cfg, &Rng::new(1)).unwrap().hierarchy
    }

    #[test]
    fn one_target_per_event() {
        let seqs = corpus(6, 40, 3, 2);
        let h = small_hierarchy(&seqs, 10);
        let (inputs, targets) = make_targets(&h, 0, &seqs).unwrap();
        assert_eq!(targets.sequences.len(), seqs.len());
        for (x, ts) in inputs.iter().zip(&targets.sequences) {
            let r = h.levels[0].reduce(x).unwrap();
            assert_eq!(ts.len(), r.len());
            assert_eq!(ts.iter().map(|t| t.step).collect::<Vec<_>>(), r.positions());
            assert!(ts.iter().all(|t| t.hidden.len() == 3));
        }
        let single = vec![SymbolSequence::new(vec![2], 3).unwrap()];
        let (_, t) = make_targets(&h, 0, &single).unwrap();
        assert_eq!(t.sequences[0].len(), 1);
        assert_eq!(t.sequences[0][0].step, 0);
    }

    #[test]
    fn target_hidden_states_match_a_step_by_step_replay() {
        let seqs = corpus(4, 50, 3, 3);
        let h = small_hierarchy(&seqs, 5);
        let (_, targets) = make_targets(&h, 0, &seqs).unwrap();
        let teacher = &h.levels[1].predictor;
        for (s, ts) in seqs.iter().zip(&targets.sequences) {
            let events = h.levels[0].reduce_symbols(s).unwrap().events;
            let mut state = RnnState::zeros(3);
            for (e, t) in events.iter().zip(ts) {
                let mut x = vec![0.0; 4];
                x[e.symbol] = 1.0;
                x[3] = e.gap.min(128) as f64 / 128.0;
                state = forward_step(teacher, &state, &x).unwrap().0;
                assert_eq!(state.h, t.hidden);
            }
        }
    }

    #[test]
    fn targets_need_a_level_above_and_a_matching_alphabet() {
        let seqs = corpus(2, 20, 3, 4);
        let h = small_hierarchy(&seqs, 1);
        assert!(make_targets(&h, 1, &seqs).is_err());
        let other = vec![SymbolSequence::new(vec![0, 1], 4).unwrap()];
        assert!(make_targets(&h, 0, &other).is_err());
    }

    #[test]
    fn zero_lambda_follows_plain_pretraining_exactly() {
        let seqs = corpus(5, 30, 3, 5);
        let h = small_hierarchy(&seqs, 3);
        let (inputs, targets) = make_targets(&h, 0, &seqs).unwrap();
        let level = &h.levels[0];
        let aug = AugmentedRnn::from_level(level, 3, &Rng::new(9));
        let train = TrainConfig { epochs: 7, lr: 0.2, early_stop: None, ..TrainConfig::default() };
        let cfg = DistillConfig { lambda: 0.0, train: train.clone() };
        let (distilled, dlog) = distill(&aug, &inputs, &targets, &cfg, &mut Rng::new(4)).unwrap();
        let (pretrained, plog) = level.pretrain(&inputs, &train, &mut Rng::new(4)).unwrap();
        assert_eq!(distilled.prediction_level(0).unwrap().predictor, pretrained.predictor);
        assert_eq!(dlog.loss, plog.loss);
        // the imitation rows receive no gradient at all
        let h5 = aug.base.hidden_size();
        assert_eq!(distilled.base.w_out.data()[3 * h5..], aug.base.w_out.data()[3 * h5..]);
    }

    fn tiny() -> (AugmentedRnn, Vec<Event>, Vec<Target>) {
        // 4 inputs, 4 hidden, 3 + 2 outputs: 61 parameters
        let mut rng = Rng::new(21);
        let codec = GapCodec::new(3, 8);
        let level = Level::new(0, codec, SurpriseRule::ArgmaxMismatch, 4, Activation::Tanh, &mut rng);
        let aug = AugmentedRnn::from_level(&level, 2, &rng);
        let input: Vec<Event> = (0..9).map(|t| Event { symbol: rng.below(3), gap: usize::from(t > 0) }).collect();
        let targets = vec![
            Target { step: 0, hidden: vec![0.3, -0.2] },
            Target { step: 4, hidden: vec![-0.5, 0.1] },
            Target { step: 8, hidden: vec![0.9, 0.4] },
        ];
        (aug, input, targets)
    }

    fn loss_and_grad(aug: &AugmentedRnn, input: &[Event], targets: &[Target], lambda: f64) -> (f64, Vec<f64>) {
        let x = aug.codec.encode_all(input);
        let tape = unroll(&aug.base, &x, &vec![0.0; aug.base.hidden_size()]).unwrap();
        let obj = distill_objective(aug, input, targets, &tape, lambda).unwrap();
        let loss = obj.loss / obj.loss_steps as f64 + lambda * obj.aux_loss / obj.aux_steps as f64;
        let bp = backprop(&aug.base, &tape, &obj.logit_grads, None, Record::default()).unwrap();
        (loss, bp.grads.to_flat())
    }

    #[test]
    fn combined_gradient_matches_finite_differences() {
        let (aug, input, targets) = tiny();
        assert!(aug.base.num_params() <= 80);
        let (_, analytic) = loss_and_grad(&aug, &input, &targets, 0.7);
        let numeric = finite_diff_grad(
            |theta| {
                let a = AugmentedRnn { base: aug.base.with_flat(theta).unwrap(), ..aug.clone() };
                loss_and_grad(&a, &input, &targets, 0.7).0
            },
            &aug.base.to_flat(),
            1e-6,
        )
        .unwrap();
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn combined_gradient_is_linear_in_lambda() {
        let (aug, input, targets) = tiny();
        let g0 = loss_and_grad(&aug, &input, &targets, 0.0).1;
        let g1 = loss_and_grad(&aug, &input, &targets, 1.0).1;
        let g = loss_and_grad(&aug, &input, &targets, 2.5).1;
        for ((a, b), c) in g0.iter().zip(&g1).zip(&g) {
            assert!((a + 2.5 * (b - a) - c).abs() < 1e-12);
        }
    }

    #[test]
    fn imitation_error_falls_under_training() {
        let seqs = corpus(8, 40, 3, 6);
        let h = small_hierarchy(&seqs, 20);
        let (inputs, targets) = make_targets(&h, 0, &seqs).unwrap();
        let aug = AugmentedRnn::from_level(&h.levels[0], 3, &Rng::new(2));
        let before = aug.imitation_mse(&inputs, &targets).unwrap();
        let cfg = DistillConfig {
            lambda: 1.0,
            train: TrainConfig { epochs: 40, lr: 0.2, early_stop: None, ..TrainConfig::default() },
        };
        let (after, log) = distill(&aug, &inputs, &targets, &cfg, &mut Rng::new(3)).unwrap();
        let mse = after.imitation_mse(&inputs, &targets).unwrap();
        assert!(mse < before, "{before} -> {mse}");
        assert!((log.aux_loss.last().unwrap() - mse).abs() < 0.05);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let (aug, _, _) = tiny();
        let targets = DistillTargets { lower_level: 1, teacher_level: 2, hidden_size: 2, sequences: vec![] };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("distilled.json");
        save(&aug, 0.5, &targets, Some(&Provenance::new("abc", 3)), &path).unwrap();
        let (back, ck) = load(&path).unwrap();
        assert_eq!(back, aug);
        assert_eq!((ck.split_index, ck.lambda, ck.teacher_level), (3, 0.5, 2));
        assert_eq!(ck.net.provenance.map(|p| p.seed), Some(3));
        assert!(matches!(load(&dir.path().join("nope.json")), Err(Error::MissingArtifact(_))));
    }
}
