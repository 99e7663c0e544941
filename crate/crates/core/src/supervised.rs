//! Sequence classification: a linear head on the top-level code, and the
//! plain-RNN baseline that reads raw sequences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chunker::{Hierarchy, Level, SymbolSequence};
use crate::error::{Error, Result};
use crate::numerics::{argmax, Matrix, Rng};
use crate::rnn::{backprop, clip_factor, cross_entropy, sgd_update, unroll, Activation, Record, RnnParams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    pub sequences: Vec<SymbolSequence>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl LabeledCorpus {
    pub fn new(sequences: Vec<SymbolSequence>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if sequences.len() != labels.len() {
            return Err(Error::dims("labels", sequences.len(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::TargetOutOfRange { index: bad, size: n_classes });
        }
        Ok(LabeledCorpus { sequences, labels, n_classes })
    }
    pub fn len(&self) -> usize { self.sequences.len() }
    pub fn is_empty(&self) -> bool { self.sequences.is_empty() }
    pub fn alphabet_size(&self) -> usize { self.sequences.first().map_or(0, |s| s.alphabet_size()) }
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &l in &self.labels { c[l] += 1; }
        c
    }
}

/// Train/test partition of corpus indices, both parts sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded shuffle of `0..n`; the first `round(n · test_fraction)` indices
    /// (at least one, and never all) become the test set.
    pub fn new(n: usize, test_fraction: f64, rng: &Rng) -> Result<Split> {
        if n < 2 {
            return Err(Error::Config(format!("cannot split a corpus of {n} sequences")));
        }
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Config(format!("test fraction must lie in [0, 1), got {test_fraction}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        rng.derive("split").shuffle(&mut order);
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        let mut test = order[..n_test].to_vec();
        let mut train = order[n_test..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        Ok(Split { train, test })
    }

    /// SHA-256 over the two index lists; equal hashes mean equal partitions.
    pub fn partition_hash(&self) -> String {
        let mut h = Sha256::new();
        for (tag, part) in [("train", &self.train), ("test", &self.test)] {
            h.update(tag.as_bytes());
            for i in part {
                h.update((*i as u64).to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }
}

/// Linear softmax classifier on a code vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub w_c: Matrix,
    pub b_c: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(n_classes: usize, code_dim: usize, rng: &mut Rng) -> Self {
        ClassifierHead {
            w_c: Matrix::uniform(n_classes, code_dim, 1.0 / (code_dim as f64).sqrt(), rng),
            b_c: vec![0.0; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.w_c.rows()
    }

    pub fn code_dim(&self) -> usize {
        self.w_c.cols()
    }

    pub fn num_params(&self) -> usize {
        self.w_c.rows() * self.w_c.cols() + self.b_c.len()
    }

    pub fn logits(&self, code: &[f64]) -> Result<Vec<f64>> {
        if code.len() != self.code_dim() {
            return Err(Error::dims("code", self.code_dim(), code.len()));
        }
        let mut out = self.b_c.clone();
        self.w_c.matvec_acc(code, &mut out);
        Ok(out)
    }

    fn norm_sq(&self) -> f64 {
        self.w_c.data().iter().chain(&self.b_c).map(|x| x * x).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub clip: Option<f64>,
    pub test_fraction: f64,
    /// Also backpropagate into the top predictor (over its short input only).
    pub finetune_top: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 20,
            lr: 0.05,
            clip: Some(5.0),
            test_fraction: 0.2,
            finetune_top: true,
        }
    }
}

/// Loss and accuracy on both splits after one epoch, measured with the
/// weights frozen at the end of that epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

pub struct ClassifierRun {
    pub head: ClassifierHead,
    /// The top level after fine-tuning (unchanged when fine-tuning is off).
    pub top: Level,
    pub curve: Vec<EpochMetrics>,
    pub split: Split,
}

impl ClassifierRun {
    pub fn final_test_accuracy(&self) -> f64 {
        self.curve.last().map_or(0.0, |m| m.test_accuracy)
    }
}

/// Final hidden state of the top predictor over the fully reduced sequence.
pub fn top_code(hierarchy: &Hierarchy, seq: &SymbolSequence) -> Result<Vec<f64>> {
    hierarchy.top().final_hidden(&hierarchy.top_input(seq)?)
}

fn evaluate<F>(indices: &[usize], labels: &[usize], logits_of: F) -> Result<(f64, f64)>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync,
{
    let per: Vec<(f64, bool)> = indices
        .par_iter()
        .map(|&i| {
            let logits = logits_of(i)?;
            let loss = cross_entropy(&logits, labels[i])?.0;
            Ok((loss, argmax(&logits) == labels[i]))
        })
        .collect::<Result<_>>()?;
    let n = per.len().max(1) as f64;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / n;
    let acc = per.iter().filter(|p| p.1).count() as f64 / n;
    Ok((loss, acc))
}

fn metrics<F>(epoch: usize, split: &Split, labels: &[usize], logits_of: F) -> Result<EpochMetrics>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync,
{
    let (train_loss, train_accuracy) = evaluate(&split.train, labels, &logits_of)?;
    let (test_loss, test_accuracy) = evaluate(&split.test, labels, &logits_of)?;
    Ok(EpochMetrics {
        epoch,
        train_loss,
        train_accuracy,
        test_loss,
        test_accuracy,
    })
}

fn check_corpus(corpus: &LabeledCorpus) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(())
}

/// Cross-entropy training of `head` on the top-level code of every training
/// sequence, optionally fine-tuning the top predictor through its own short
/// input sequence. Lower levels stay frozen.
pub fn train_classifier(
    hierarchy: &Hierarchy,
    head: ClassifierHead,
    corpus: &LabeledCorpus,
    cfg: &ClassifierConfig,
    rng: &Rng,
) -> Result<ClassifierRun> {
    check_corpus(corpus)?;
    let mut top = hierarchy.top().clone();
    if head.code_dim() != top.hidden_size() {
        return Err(Error::dims("classifier head", top.hidden_size(), head.code_dim()));
    }
    if head.n_classes() != corpus.n_classes {
        return Err(Error::dims("classifier classes", corpus.n_classes, head.n_classes()));
    }
    let split = Split::new(corpus.len(), cfg.test_fraction, rng)?;
    let inputs: Vec<Vec<Vec<f64>>> = corpus
        .sequences
        .par_iter()
        .map(|s| Ok(top.codec.encode_all(&hierarchy.top_input(s)?)))
        .collect::<Result<_>>()?;
    let mut head = head;
    let mut order = split.train.clone();
    let mut order_rng = rng.derive("classifier-order");
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        for &i in &order {
            let x = &inputs[i];
            let h0 = vec![0.0; top.hidden_size()];
            let tape = unroll(&top.predictor, x, &h0)?;
            let code = tape.final_hidden().to_vec();
            let (_, g) = cross_entropy(&head.logits(&code)?, corpus.labels[i])?;
            let mut g_head = ClassifierHead {
                w_c: Matrix::zeros(head.n_classes(), head.code_dim()),
                b_c: g.clone(),
            };
            g_head.w_c.add_outer(1.0, &g, &code);
            let enc_grads = if cfg.finetune_top {
                let n = tape.len();
                let mut hidden = vec![None; n];
                hidden[n - 1] = Some(head.w_c.matvec_t(&g));
                let bp = backprop(&top.predictor, &tape, &vec![None; n], Some(&hidden), Record::default())?;
                Some(bp.grads)
            } else {
                None
            };
            let norm_sq = g_head.norm_sq() + enc_grads.as_ref().map_or(0.0, RnnParams::norm_sq);
            if !norm_sq.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let step = cfg.lr * clip_factor(norm_sq.sqrt(), cfg.clip);
            head.w_c.add_outer(-step, &g, &code);
            for (b, gi) in head.b_c.iter_mut().zip(&g) {
                *b -= step * gi;
            }
            if let Some(grads) = enc_grads {
                top.predictor.add_scaled(&grads, -step);
            }
        }
        if !top.predictor.is_finite() || !head.w_c.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let (p, hd) = (&top.predictor, &head);
        curve.push(metrics(epoch, &split, &corpus.labels, |i| {
            let h0 = vec![0.0; p.hidden_size()];
            hd.logits(unroll(p, &inputs[i], &h0)?.final_hidden())
        })?);
    }
    Ok(ClassifierRun { head, top, curve, split })
}

/// Head-only training on fixed code vectors, one per corpus sequence.
pub fn train_head_on_codes(
    codes: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    cfg: &ClassifierConfig,
    rng: &Rng,
) -> Result<(ClassifierHead, Vec<EpochMetrics>, Split)> {
    if codes.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if codes.len() != labels.len() {
        return Err(Error::dims("labels", codes.len(), labels.len()));
    }
    let dim = codes[0].len();
    let split = Split::new(codes.len(), cfg.test_fraction, rng)?;
    let mut head = ClassifierHead::new(n_classes, dim, &mut rng.derive("head"));
    let mut order = split.train.clone();
    let mut order_rng = rng.derive("classifier-order");
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        for &i in &order {
            let (_, g) = cross_entropy(&head.logits(&codes[i])?, labels[i])?;
            let norm_sq = g.iter().map(|x| x * x).sum::<f64>() * (1.0 + codes[i].iter().map(|x| x * x).sum::<f64>());
            if !norm_sq.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let step = cfg.lr * clip_factor(norm_sq.sqrt(), cfg.clip);
            head.w_c.add_outer(-step, &g, &codes[i]);
            for (b, gi) in head.b_c.iter_mut().zip(&g) {
                *b -= step * gi;
            }
        }
        let hd = &head;
        curve.push(metrics(epoch, &split, labels, |i| hd.logits(&codes[i]))?);
    }
    Ok((head, curve, split))
}

/// Parameter count of a plain RNN classifier.
pub fn baseline_param_count(hidden: usize, alphabet: usize, n_classes: usize) -> usize {
    hidden * alphabet + hidden * hidden + hidden + n_classes * hidden + n_classes
}

/// Hidden size whose plain RNN classifier comes closest to `budget` parameters.
pub fn parity_hidden(budget: usize, alphabet: usize, n_classes: usize) -> usize {
    let (a, c) = (alphabet as f64, n_classes as f64);
    // h² + (a + 1 + c)·h + c = budget
    let b = a + 1.0 + c;
    let root = (-b + (b * b + 4.0 * (budget as f64 - c)).max(0.0).sqrt()) / 2.0;
    let lo = root.floor().max(1.0) as usize;
    (lo..=lo + 1)
        .min_by_key(|&h| baseline_param_count(h, alphabet, n_classes).abs_diff(budget))
        .unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub params: RnnParams,
    pub curve: Vec<EpochMetrics>,
    /// Epoch at which training produced a non-finite update; the curve stops
    /// before it.
    pub diverged_at: Option<usize>,
    pub split: Split,
}

impl BaselineRun {
    pub fn final_test_accuracy(&self) -> f64 {
        self.curve.last().map_or(0.0, |m| m.test_accuracy)
    }
}

fn one_hot_inputs(seq: &SymbolSequence) -> Vec<Vec<f64>> {
    seq.symbols()
        .iter()
        .map(|&s| {
            let mut v = vec![0.0; seq.alphabet_size()];
            v[s] = 1.0;
            v
        })
        .collect()
}

/// A single plain RNN reading the raw one-hot sequence and classifying from
/// the output at its final step; trained by full-length BPTT.
pub fn baseline_rnn_classifier(
    corpus: &LabeledCorpus,
    hidden: usize,
    cfg: &ClassifierConfig,
    rng: &Rng,
) -> Result<BaselineRun> {
    check_corpus(corpus)?;
    let split = Split::new(corpus.len(), cfg.test_fraction, rng)?;
    let alphabet = corpus.alphabet_size();
    let mut params = RnnParams::init(
        alphabet,
        hidden,
        corpus.n_classes,
        Activation::Tanh,
        &mut rng.derive("baseline-init"),
    );
    let inputs: Vec<Vec<Vec<f64>>> = corpus.sequences.iter().map(one_hot_inputs).collect();
    let mut order = split.train.clone();
    let mut order_rng = rng.derive("classifier-order");
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut diverged_at = None;
    let h0 = vec![0.0; hidden];

    'epochs: for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        for &i in &order {
            let tape = unroll(&params, &inputs[i], &h0)?;
            let n = tape.len();
            let (_, g) = match cross_entropy(&tape.steps[n - 1].logits, corpus.labels[i]) {
                Ok(v) => v,
                Err(_) => {
                    diverged_at = Some(epoch);
                    break 'epochs;
                }
            };
            let mut logit_grads = vec![None; n];
            logit_grads[n - 1] = Some(g);
            let bp = backprop(&params, &tape, &logit_grads, None, Record::default())?;
            match sgd_update(&mut params, &bp.grads, cfg.lr, cfg.clip) {
                Ok(_) if params.is_finite() => {}
                Ok(_) | Err(Error::NonFinite(_)) => {
                    diverged_at = Some(epoch);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let p = &params;
        curve.push(metrics(epoch, &split, &corpus.labels, |i| {
            Ok(unroll(p, &inputs[i], &h0)?.steps[inputs[i].len() - 1].logits.clone())
        })?);
    }
    Ok(BaselineRun {
        params,
        curve,
        diverged_at,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::{build_hierarchy, HierarchyConfig};
    use crate::train::TrainConfig;

    fn corpus_from(seqs: Vec<Vec<usize>>, labels: Vec<usize>, alphabet: usize, n_classes: usize) -> LabeledCorpus {
        let sequences = seqs
            .into_iter()
            .map(|s| SymbolSequence::new(s, alphabet).unwrap())
            .collect();
        LabeledCorpus::new(sequences, labels, n_classes).unwrap()
    }

    fn random_corpus(n: usize, len: usize, alphabet: usize, seed: u64) -> LabeledCorpus {
        let mut rng = Rng::new(seed);
        let seqs = (0..n).map(|_| (0..len).map(|_| rng.below(alphabet)).collect()).collect();
        // i.i.d. labels: an exactly balanced corpus would tie the test-set
        // class mix to the training one and bias held-out accuracy below 0.5
        let labels = (0..n).map(|_| usize::from(rng.bernoulli(0.5))).collect();
        corpus_from(seqs, labels, alphabet, 2)
    }

    fn untrained_hierarchy(corpus: &LabeledCorpus, depth: usize) -> Hierarchy {
        let cfg = HierarchyConfig {
            depth,
            hidden_sizes: vec![6],
            train: vec![TrainConfig { epochs: 0, ..TrainConfig::default() }],
            ..HierarchyConfig::default()
        };
        build_hierarchy(&corpus.sequences, &cfg, &Rng::new(3)).unwrap().hierarchy
    }

    #[test]
    fn split_is_a_pure_disjoint_partition() {
        let a = Split::new(640, 0.2, &Rng::new(5)).unwrap();
        let b = Split::new(640, 0.2, &Rng::new(5)).unwrap();
        let c = Split::new(640, 0.2, &Rng::new(6)).unwrap();
        assert_eq!(a.partition_hash(), b.partition_hash());
        assert_ne!(a.partition_hash(), c.partition_hash());
        assert_eq!((a.train.len(), a.test.len()), (512, 128));
        let mut all: Vec<usize> = a.train.iter().chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..640).collect::<Vec<_>>());
        assert!(Split::new(1, 0.2, &Rng::new(0)).is_err());
    }

    #[test]
    fn top_code_of_depth_one_is_level_zero_final_state() {
        let corpus = random_corpus(4, 30, 5, 1);
        let h = untrained_hierarchy(&corpus, 1);
        for s in &corpus.sequences {
            let code = top_code(&h, s).unwrap();
            assert_eq!(code, h.levels[0].final_hidden(&s.as_events()).unwrap());
            assert_eq!(code.len(), 6);
        }
    }

    #[test]
    fn single_class_corpus_is_learned_in_one_epoch() {
        let mut corpus = random_corpus(20, 15, 4, 2);
        corpus.labels = vec![1; 20];
        let h = untrained_hierarchy(&corpus, 2);
        let cfg = ClassifierConfig { epochs: 1, lr: 0.5, ..ClassifierConfig::default() };
        let head = ClassifierHead::new(2, h.top().hidden_size(), &mut Rng::new(0));
        let run = train_classifier(&h, head, &corpus, &cfg, &Rng::new(0)).unwrap();
        let m = run.curve[0];
        assert_eq!((m.train_accuracy, m.test_accuracy), (1.0, 1.0));
    }

    #[test]
    fn random_encoder_on_label_free_data_is_at_chance() {
        // labels are independent of the sequences, so no encoder can beat
        // chance on held-out data beyond sampling noise; pooled over seeds
        let (mut correct, mut total) = (0.0, 0.0);
        for seed in 0..5 {
            let corpus = random_corpus(400, 40, 6, 100 + seed);
            let h = untrained_hierarchy(&corpus, 2);
            let cfg = ClassifierConfig { epochs: 5, test_fraction: 0.5, ..ClassifierConfig::default() };
            let head = ClassifierHead::new(2, h.top().hidden_size(), &mut Rng::new(seed));
            let run = train_classifier(&h, head, &corpus, &cfg, &Rng::new(seed)).unwrap();
            let n = run.split.test.len() as f64;
            correct += run.final_test_accuracy() * n;
            total += n;
        }
        let acc = correct / total;
        let half_width = 1.96 * (0.25 / total).sqrt();
        assert!((acc - 0.5).abs() <= half_width, "accuracy {acc} outside 0.5 ± {half_width}");
    }

    fn marker_at_end(n: usize, seed: u64) -> LabeledCorpus {
        let mut rng = Rng::new(seed);
        let mut seqs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let mut s: Vec<usize> = (0..9).map(|_| 2 + rng.below(4)).collect();
            s.push(label);
            seqs.push(s);
            labels.push(label);
        }
        corpus_from(seqs, labels, 6, 2)
    }

    #[test]
    fn baseline_solves_short_marker_at_end_task() {
        let corpus = marker_at_end(200, 11);
        let cfg = ClassifierConfig { epochs: 10, lr: 0.1, ..ClassifierConfig::default() };
        let run = baseline_rnn_classifier(&corpus, 8, &cfg, &Rng::new(2)).unwrap();
        assert!(run.diverged_at.is_none());
        assert!(run.final_test_accuracy() >= 0.9, "{:?}", run.curve.last());
    }

    #[test]
    fn baseline_is_deterministic() {
        let corpus = marker_at_end(40, 12);
        let cfg = ClassifierConfig { epochs: 3, ..ClassifierConfig::default() };
        let a = baseline_rnn_classifier(&corpus, 5, &cfg, &Rng::new(8)).unwrap();
        let b = baseline_rnn_classifier(&corpus, 5, &cfg, &Rng::new(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn baseline_records_divergence_instead_of_failing() {
        let corpus = marker_at_end(20, 13);
        let cfg = ClassifierConfig { epochs: 3, lr: 1e308, clip: None, ..ClassifierConfig::default() };
        let run = baseline_rnn_classifier(&corpus, 4, &cfg, &Rng::new(1)).unwrap();
        let epoch = run.diverged_at.expect("overflowing updates must be reported");
        assert_eq!(run.curve.len(), epoch);
    }

    #[test]
    fn parity_hidden_is_within_ten_percent() {
        for budget in [200, 1000, 2570, 10_000] {
            let h = parity_hidden(budget, 16, 2);
            let p = baseline_param_count(h, 16, 2) as f64;
            assert!((p - budget as f64).abs() <= 0.1 * budget as f64, "{budget}: h={h} p={p}");
        }
        assert_eq!(baseline_param_count(3, 4, 2), 3 * 4 + 9 + 3 + 6 + 2);
    }

    #[test]
    fn head_only_training_separates_fixed_codes() {
        let codes: Vec<Vec<f64>> = (0..60).map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }, 0.3]).collect();
        let labels: Vec<usize> = (0..60).map(|i| i % 2).collect();
        let cfg = ClassifierConfig { epochs: 5, lr: 0.5, ..ClassifierConfig::default() };
        let (head, curve, _) = train_head_on_codes(&codes, &labels, 2, &cfg, &Rng::new(0)).unwrap();
        assert_eq!(head.num_params(), 6);
        assert_eq!(curve.last().unwrap().test_accuracy, 1.0);
    }
}
