//! Deterministic synthetic corpora.
//!
//! Long-lag layout of the alphabet (`n_classes = C`):
//!
//! ```text
//! 0 .. C        class markers (never produced by the filler)
//! C             erasure symbol (noise corruptions)
//! C+1 .. A      filler symbols
//! ```
//!
//! The filler is one global 32-symbol cycle: four motifs of eight symbols
//! concatenated in a seeded schedule order. Every cyclic bigram of the cycle
//! is distinct and no symbol repeats back to back, so any two consecutive
//! filler symbols pin down the phase. Each sequence starts at a random phase,
//! a class marker overwrites one position in `[0, 10]`, and every other
//! position is independently erased with probability `noise_rate`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chunker::SymbolSequence;
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::provenance::Provenance;
use crate::supervised::LabeledCorpus;

pub const MOTIFS: usize = 4;
pub const MOTIF_LEN: usize = 8;
pub const FILLER_PERIOD: usize = MOTIFS * MOTIF_LEN;
/// Last position a class marker may occupy.
pub const MARKER_WINDOW: usize = 10;
const MIN_FILLER_SYMBOLS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Cyclic,
    GrammarFiller,
    LongLag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub length: usize,
    pub alphabet_size: usize,
    pub n_classes: usize,
    pub noise_rate: f64,
    pub seed: u64,
    pub n_sequences: usize,
    /// Cycle length for `cyclic` corpora.
    pub period: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            kind: TaskKind::LongLag,
            length: 1200,
            alphabet_size: 16,
            n_classes: 2,
            noise_rate: 0.02,
            seed: 0,
            n_sequences: 640,
            period: 3,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::InvalidTask(format!("length must be at least 2, got {}", self.length)));
        }
        if !(0.0..=0.2).contains(&self.noise_rate) {
            return Err(Error::InvalidTask(format!(
                "noise_rate must lie in [0, 0.2], got {}",
                self.noise_rate
            )));
        }
        if self.n_sequences == 0 {
            return Err(Error::InvalidTask("n_sequences must be positive".into()));
        }
        match self.kind {
            TaskKind::Cyclic => {
                if self.period == 0 || self.alphabet_size == 0 {
                    return Err(Error::InvalidTask("period and alphabet must be positive".into()));
                }
            }
            TaskKind::GrammarFiller | TaskKind::LongLag => {
                if self.n_classes == 0 {
                    return Err(Error::InvalidTask("n_classes must be positive".into()));
                }
                let reserved = self.n_classes + 1;
                if self.alphabet_size < reserved + MIN_FILLER_SYMBOLS {
                    return Err(Error::InvalidTask(format!(
                        "alphabet of {} cannot hold {} markers, the erasure symbol and {} filler symbols",
                        self.alphabet_size, self.n_classes, MIN_FILLER_SYMBOLS
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn erasure_symbol(&self) -> usize {
        self.n_classes
    }
}

/// A repeated random cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicCorpus {
    pub cycle: Vec<usize>,
    /// Sequence `i` starts at phase `phases[i]`; sequence 0 starts at 0.
    pub phases: Vec<usize>,
    pub sequences: Vec<SymbolSequence>,
}

/// Repetitions of one seeded cycle. The cycle uses distinct symbols when
/// `period <= alphabet`, otherwise symbols repeat (but never back to back
/// when the alphabet allows).
pub fn gen_cyclic(period: usize, length: usize, alphabet: usize, n_sequences: usize, seed: u64) -> Result<CyclicCorpus> {
    if period == 0 || alphabet == 0 || length == 0 {
        return Err(Error::InvalidTask("period, length and alphabet must be positive".into()));
    }
    let mut rng = Rng::new(seed).derive("cycle");
    let cycle: Vec<usize> = if period <= alphabet {
        let mut symbols: Vec<usize> = (0..alphabet).collect();
        rng.shuffle(&mut symbols);
        symbols.truncate(period);
        symbols
    } else {
        let mut c: Vec<usize> = Vec::with_capacity(period);
        while c.len() < period {
            let s = rng.below(alphabet);
            if alphabet == 1 || c.last() != Some(&s) {
                c.push(s);
            }
        }
        c
    };
    let mut phase_rng = Rng::new(seed).derive("phases");
    let phases: Vec<usize> = (0..n_sequences)
        .map(|i| if i == 0 { 0 } else { phase_rng.below(period) })
        .collect();
    let sequences = phases
        .iter()
        .map(|&p| SymbolSequence::new((0..length).map(|t| cycle[(p + t) % period]).collect(), alphabet))
        .collect::<Result<_>>()?;
    Ok(CyclicCorpus {
        cycle,
        phases,
        sequences,
    })
}

/// The periodic filler shared by every long-lag sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillerGrammar {
    pub motifs: Vec<Vec<usize>>,
    pub schedule: Vec<usize>,
    pub cycle: Vec<usize>,
}

impl FillerGrammar {
    /// Builds the grammar over filler symbols `first..alphabet`.
    pub fn generate(first: usize, alphabet: usize, rng: &mut Rng) -> Result<Self> {
        let n = alphabet.saturating_sub(first);
        if n < MIN_FILLER_SYMBOLS {
            return Err(Error::InvalidTask(format!("{n} filler symbols are too few")));
        }
        let mut schedule: Vec<usize> = (0..MOTIFS).collect();
        rng.shuffle(&mut schedule);
        'attempt: for _ in 0..100_000 {
            let mut cycle: Vec<usize> = Vec::with_capacity(FILLER_PERIOD);
            let mut seen: HashSet<(usize, usize)> = HashSet::new();
            while cycle.len() < FILLER_PERIOD {
                let prev = cycle.last().copied();
                let options: Vec<usize> = (first..alphabet)
                    .filter(|&s| match prev {
                        None => true,
                        Some(p) => p != s && !seen.contains(&(p, s)),
                    })
                    .collect();
                if options.is_empty() {
                    continue 'attempt;
                }
                let s = options[rng.below(options.len())];
                if let Some(p) = prev {
                    seen.insert((p, s));
                }
                cycle.push(s);
            }
            let (last, head) = (cycle[FILLER_PERIOD - 1], cycle[0]);
            if last == head || seen.contains(&(last, head)) {
                continue;
            }
            // the cycle was laid out in schedule order; recover motif i
            let mut motifs = vec![Vec::new(); MOTIFS];
            for (slot, &m) in schedule.iter().enumerate() {
                motifs[m] = cycle[slot * MOTIF_LEN..(slot + 1) * MOTIF_LEN].to_vec();
            }
            return Ok(FillerGrammar {
                motifs,
                schedule,
                cycle,
            });
        }
        Err(Error::InvalidTask("could not build a filler cycle with distinct bigrams".into()))
    }

    /// `length` filler symbols starting at a random phase.
    pub fn sample(&self, length: usize, rng: &mut Rng) -> Vec<usize> {
        let phase = rng.below(self.cycle.len());
        (0..length).map(|t| self.cycle[(phase + t) % self.cycle.len()]).collect()
    }
}

/// Label-independent part of one long-lag sequence: filler with erasures
/// and the chosen marker slot.
fn unlabeled_sequence(spec: &TaskSpec, grammar: &FillerGrammar, rng: &mut Rng) -> (Vec<usize>, usize) {
    let mut symbols = grammar.sample(spec.length, rng);
    let marker_pos = rng.below(MARKER_WINDOW.min(spec.length - 1) + 1);
    for (t, s) in symbols.iter_mut().enumerate() {
        if t != marker_pos && rng.bernoulli(spec.noise_rate) {
            *s = spec.erasure_symbol();
        }
    }
    (symbols, marker_pos)
}

/// The filler grammar a spec generates with.
pub fn filler_grammar(spec: &TaskSpec) -> Result<FillerGrammar> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed).derive("grammar");
    FillerGrammar::generate(spec.n_classes + 1, spec.alphabet_size, &mut rng)
}

/// Long-lag classification corpus; see the module docs for the layout.
/// Returns the corpus and each sequence's marker position.
pub fn gen_long_lag(spec: &TaskSpec) -> Result<(LabeledCorpus, Vec<usize>)> {
    if spec.kind != TaskKind::LongLag {
        return Err(Error::InvalidTask("gen_long_lag needs kind = long_lag".into()));
    }
    let grammar = filler_grammar(spec)?;
    let root = Rng::new(spec.seed);
    let mut sequences = Vec::with_capacity(spec.n_sequences);
    let mut labels = Vec::with_capacity(spec.n_sequences);
    let mut markers = Vec::with_capacity(spec.n_sequences);
    for i in 0..spec.n_sequences {
        let label = i % spec.n_classes;
        let mut rng = root.derive(&format!("sequence-{i}"));
        let (mut symbols, pos) = unlabeled_sequence(spec, &grammar, &mut rng);
        symbols[pos] = label;
        sequences.push(SymbolSequence::new(symbols, spec.alphabet_size)?);
        labels.push(label);
        markers.push(pos);
    }
    Ok((LabeledCorpus::new(sequences, labels, spec.n_classes)?, markers))
}

/// Unlabeled filler corpus (no markers) for compression studies.
pub fn gen_grammar_filler(spec: &TaskSpec) -> Result<Vec<SymbolSequence>> {
    let grammar = filler_grammar(spec)?;
    let root = Rng::new(spec.seed);
    (0..spec.n_sequences)
        .map(|i| {
            let mut rng = root.derive(&format!("filler-{i}"));
            let mut symbols = grammar.sample(spec.length, &mut rng);
            for s in symbols.iter_mut() {
                if rng.bernoulli(spec.noise_rate) {
                    *s = spec.erasure_symbol();
                }
            }
            SymbolSequence::new(symbols, spec.alphabet_size)
        })
        .collect()
}

/// Any task kind as a labeled corpus (labels are 0 for unlabeled kinds).
pub fn generate(spec: &TaskSpec) -> Result<LabeledCorpus> {
    spec.validate()?;
    match spec.kind {
        TaskKind::LongLag => Ok(gen_long_lag(spec)?.0),
        TaskKind::GrammarFiller => {
            let seqs = gen_grammar_filler(spec)?;
            let n = seqs.len();
            LabeledCorpus::new(seqs, vec![0; n], 1)
        }
        TaskKind::Cyclic => {
            let c = gen_cyclic(spec.period, spec.length, spec.alphabet_size, spec.n_sequences, spec.seed)?;
            let n = c.sequences.len();
            LabeledCorpus::new(c.sequences, vec![0; n], 1)
        }
    }
}

/// Text form: a `#hc-corpus` header, optional `#` comment lines, then one
/// record per line: `label<TAB>s0,s1,...`.
pub fn corpus_to_string(corpus: &LabeledCorpus, provenance: Option<&Provenance>) -> String {
    let mut out = format!(
        "#hc-corpus alphabet_size={} n_classes={}\n",
        corpus.alphabet_size(),
        corpus.n_classes
    );
    if let Some(p) = provenance {
        out.push_str(&p.comment_line());
        out.push('\n');
    }
    for (seq, label) in corpus.sequences.iter().zip(&corpus.labels) {
        out.push_str(&label.to_string());
        out.push('\t');
        let syms: Vec<String> = seq.symbols().iter().map(usize::to_string).collect();
        out.push_str(&syms.join(","));
        out.push('\n');
    }
    out
}

pub fn corpus_from_str(text: &str) -> Result<LabeledCorpus> {
    let mut alphabet: Option<usize> = None;
    let mut n_classes: Option<usize> = None;
    let mut records: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let parse_err = |message: String| Error::Parse { line: lineno, message };
        if let Some(rest) = line.strip_prefix("#hc-corpus") {
            for field in rest.split_whitespace() {
                let (key, value) = field
                    .split_once('=')
                    .ok_or_else(|| parse_err(format!("bad header field {field:?}")))?;
                let value: usize = value
                    .parse()
                    .map_err(|_| parse_err(format!("bad header value {value:?}")))?;
                match key {
                    "alphabet_size" => alphabet = Some(value),
                    "n_classes" => n_classes = Some(value),
                    _ => {}
                }
            }
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let (label, body) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected label<TAB>symbols".into()))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad label {label:?}")))?;
        let symbols = body
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| parse_err(format!("bad symbol {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        records.push((label, symbols));
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let alphabet = alphabet.unwrap_or_else(|| records.iter().flat_map(|r| r.1.iter()).max().unwrap() + 1);
    let n_classes = n_classes.unwrap_or_else(|| records.iter().map(|r| r.0).max().unwrap() + 1);
    let mut sequences = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for (label, symbols) in records {
        sequences.push(SymbolSequence::new(symbols, alphabet)?);
        labels.push(label);
    }
    LabeledCorpus::new(sequences, labels, n_classes)
}

pub fn save_corpus(corpus: &LabeledCorpus, path: &Path, provenance: Option<&Provenance>) -> Result<()> {
    fs::write(path, corpus_to_string(corpus, provenance))?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<LabeledCorpus> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    corpus_from_str(&fs::read_to_string(path)?)
}
