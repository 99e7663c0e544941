use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::codec::{GapCodec, SurpriseRule, DEFAULT_GAP_CAP};
use super::level::Level;
use super::sequence::{Event, ReducedSequence, SymbolSequence};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::rnn::Activation;
use crate::train::{TrainConfig, TrainLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchyConfig {
    pub depth: usize,
    /// Hidden units per level; the last entry is reused for deeper levels.
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub surprise: SurpriseRule,
    pub gap_cap: usize,
    /// Training budget per level; the last entry is reused for deeper levels.
    pub train: Vec<TrainConfig>,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            depth: 3,
            hidden_sizes: vec![24, 12],
            activation: Activation::Tanh,
            surprise: SurpriseRule::ArgmaxMismatch,
            gap_cap: DEFAULT_GAP_CAP,
            train: vec![TrainConfig::default()],
        }
    }
}

impl HierarchyConfig {
    pub fn hidden(&self, level: usize) -> usize {
        self.hidden_sizes[level.min(self.hidden_sizes.len() - 1)]
    }

    pub fn train_for(&self, level: usize) -> &TrainConfig {
        &self.train[level.min(self.train.len() - 1)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden sizes must be non-empty and positive".into()));
        }
        if self.train.is_empty() {
            return Err(Error::Config("at least one training config is required".into()));
        }
        if let SurpriseRule::ProbThreshold { tau } = self.surprise {
            if !(0.0..=1.0).contains(&tau) {
                return Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")));
            }
        }
        self.train.iter().try_for_each(TrainConfig::validate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BuildStatus {
    Complete,
    /// Every sequence reduced to a single event at `level`; stacking stopped.
    FullyCompressed { level: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub levels: Vec<Level>,
    pub status: BuildStatus,
}

/// Statistics of the sequence fed to one level (entry `depth` describes the
/// top level's own output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub mean_length: f64,
    /// Mean length relative to the level below; 1 for level 0.
    pub ratio: f64,
    /// Mean per-sequence fraction of the lower level's steps kept.
    pub event_rate: f64,
}

pub struct BuildOutput {
    pub hierarchy: Hierarchy,
    /// `reduced[k]` is level k's reduction of every corpus sequence.
    pub reduced: Vec<Vec<ReducedSequence>>,
    pub logs: Vec<TrainLog>,
}

impl Hierarchy {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn top(&self) -> &Level {
        self.levels.last().expect("hierarchy has at least one level")
    }

    pub fn alphabet_size(&self) -> usize {
        self.levels[0].codec.alphabet_size
    }

    /// Inputs seen by every level for one raw sequence, plus the top level's
    /// own reduction: `depth + 1` entries.
    pub fn level_inputs(&self, seq: &SymbolSequence) -> Result<Vec<Vec<Event>>> {
        let mut inputs = vec![seq.as_events()];
        for level in &self.levels {
            let reduced = level.reduce(inputs.last().unwrap())?;
            inputs.push(reduced.events);
        }
        Ok(inputs)
    }

    /// Input of level `k` for one raw sequence.
    pub fn input_of(&self, k: usize, seq: &SymbolSequence) -> Result<Vec<Event>> {
        let mut input = seq.as_events();
        for level in &self.levels[..k] {
            input = level.reduce(&input)?.events;
        }
        Ok(input)
    }

    /// Input of the top level (what supervised BPTT traverses).
    pub fn top_input(&self, seq: &SymbolSequence) -> Result<Vec<Event>> {
        self.input_of(self.depth() - 1, seq)
    }

    pub fn compression_stats(&self, corpus: &[SymbolSequence]) -> Result<Vec<LevelStats>> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let per_seq: Vec<Vec<usize>> = corpus
            .par_iter()
            .map(|s| Ok(self.level_inputs(s)?.iter().map(Vec::len).collect()))
            .collect::<Result<_>>()?;
        Ok(stats_from_lengths(&per_seq))
    }
}

pub(crate) fn stats_from_lengths(per_seq: &[Vec<usize>]) -> Vec<LevelStats> {
    let n = per_seq.len() as f64;
    let levels = per_seq[0].len();
    let mut stats: Vec<LevelStats> = Vec::with_capacity(levels);
    for k in 0..levels {
        let mean_length = per_seq.iter().map(|l| l[k] as f64).sum::<f64>() / n;
        let (ratio, event_rate) = if k == 0 {
            (1.0, 1.0)
        } else {
            let prev = stats[k - 1].mean_length;
            let rate = per_seq
                .iter()
                .map(|l| l[k] as f64 / l[k - 1].max(1) as f64)
                .sum::<f64>()
                / n;
            (if prev > 0.0 { mean_length / prev } else { 1.0 }, rate)
        };
        stats.push(LevelStats {
            level: k,
            mean_length,
            ratio,
            event_rate,
        });
    }
    stats
}

/// Greedy bottom-up construction: train level 0 on the raw corpus, reduce
/// the corpus with it, train level 1 on the reductions, and so on.
pub fn build_hierarchy(corpus: &[SymbolSequence], cfg: &HierarchyConfig, rng: &Rng) -> Result<BuildOutput> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let alphabet = corpus[0].alphabet_size();
    if corpus.iter().any(|s| s.alphabet_size() != alphabet) {
        return Err(Error::Config("corpus mixes alphabets".into()));
    }
    let codec = GapCodec::new(alphabet, cfg.gap_cap);
    let mut current: Vec<Vec<Event>> = corpus.iter().map(SymbolSequence::as_events).collect();
    let mut levels = Vec::new();
    let mut reduced_all = Vec::new();
    let mut logs = Vec::new();
    let mut status = BuildStatus::Complete;

    for k in 0..cfg.depth {
        let mut level_rng = rng.derive(&format!("level-{k}"));
        let fresh = Level::new(k, codec, cfg.surprise, cfg.hidden(k), cfg.activation, &mut level_rng);
        let (level, log) = fresh.pretrain(&current, cfg.train_for(k), &mut level_rng)?;
        let reduced: Vec<ReducedSequence> = current
            .par_iter()
            .map(|s| level.reduce(s))
            .collect::<Result<_>>()?;
        current = reduced.iter().map(|r| r.events.clone()).collect();
        levels.push(level);
        reduced_all.push(reduced);
        logs.push(log);
        if k + 1 < cfg.depth && current.iter().all(|s| s.len() <= 1) {
            status = BuildStatus::FullyCompressed { level: k };
            break;
        }
    }
    Ok(BuildOutput {
        hierarchy: Hierarchy { levels, status },
        reduced: reduced_all,
        logs,
    })
}
