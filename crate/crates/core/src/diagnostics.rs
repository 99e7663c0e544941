//! How far error signals travel back in time through a plain recurrent net,
//! and how long the paths are that supervised training has to traverse in a
//! compressed hierarchy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chunker::{Hierarchy, SymbolSequence};
use crate::error::{Error, Result};
use crate::numerics::{norm2, Matrix, Rng};
use crate::provenance::Provenance;
use crate::rnn::{backprop, cross_entropy, unroll, Record, RnnParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradientConfig {
    pub seq_len: usize,
    /// Lags to probe; empty means every lag in `0..seq_len`.
    pub probe_lags: Vec<usize>,
    pub n_samples: usize,
    /// A lag counts as exploded once its mean norm exceeds this multiple of
    /// the mean norm at the smallest probed lag.
    pub explosion_ratio: f64,
}

impl Default for GradientConfig {
    fn default() -> Self {
        GradientConfig {
            seq_len: 200,
            probe_lags: Vec::new(),
            n_samples: 10,
            explosion_ratio: 1e3,
        }
    }
}

impl GradientConfig {
    pub fn lags(&self) -> Result<Vec<usize>> {
        if self.seq_len < 2 {
            return Err(Error::Config(format!("seq_len must be at least 2, got {}", self.seq_len)));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        if self.probe_lags.is_empty() {
            return Ok((0..self.seq_len).collect());
        }
        if self.probe_lags.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("probe lags must be strictly increasing".into()));
        }
        if let Some(&l) = self.probe_lags.iter().find(|&&l| l >= self.seq_len) {
            return Err(Error::Config(format!("lag {l} does not fit a sequence of length {}", self.seq_len)));
        }
        Ok(self.probe_lags.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagRow {
    pub lag: usize,
    /// ‖∂loss/∂h‖ at `lag` steps before the final one, mean and median over
    /// samples.
    pub mean_norm: f64,
    pub median_norm: f64,
    /// Mean ‖∂loss/∂x‖ at the same step.
    pub mean_input_norm: f64,
    pub explosion_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub rows: Vec<LagRow>,
    pub exploded: bool,
    pub first_explosion_lag: Option<usize>,
    /// First lag at which some sample produced a non-finite norm; the table
    /// stops before it.
    pub first_non_finite_lag: Option<usize>,
    pub config: GradientConfig,
    pub input_size: usize,
    pub hidden_size: usize,
    pub seed: u64,
}

impl GradientReport {
    pub fn lags(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.lag).collect()
    }

    pub fn row(&self, lag: usize) -> Option<&LagRow> {
        self.rows.iter().find(|r| r.lag == lag)
    }

    /// `mean_norm(to) / mean_norm(from)`, if both lags are in the table.
    pub fn decay_ratio(&self, from: usize, to: usize) -> Option<f64> {
        Some(self.row(to)?.mean_norm / self.row(from)?.mean_norm)
    }

    pub fn to_csv(&self, provenance: &Provenance) -> String {
        let mut out = format!("{}\nlag,mean_norm,median_norm,explosion_flag\n", provenance.comment_line());
        for r in &self.rows {
            out.push_str(&format!("{},{:e},{:e},{}\n", r.lag, r.mean_norm, r.median_norm, u8::from(r.explosion_flag)));
        }
        out
    }
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// A random one-hot input sequence and a random final-step target.
fn probe_sample(params: &RnnParams, seq_len: usize, rng: &mut Rng) -> (Vec<Vec<f64>>, usize) {
    let n = params.input_size();
    let inputs = (0..seq_len).map(|_| one_hot(n, rng.below(n))).collect();
    (inputs, rng.below(params.output_size()))
}

/// Per-lag (hidden, input) gradient norms for one sample, by backpropagation.
fn sample_norms(params: &RnnParams, inputs: &[Vec<f64>], target: usize, lags: &[usize]) -> Result<Vec<(f64, f64)>> {
    let n = inputs.len();
    let tape = unroll(params, inputs, &vec![0.0; params.hidden_size()])?;
    let mut logit_grads = vec![None; n];
    logit_grads[n - 1] = Some(cross_entropy(&tape.steps[n - 1].logits, target)?.1);
    let bp = backprop(params, &tape, &logit_grads, None, Record { hidden: true, inputs: true })?;
    Ok(lags
        .iter()
        .map(|&l| (norm2(&bp.hidden[n - 1 - l]), norm2(&bp.inputs[n - 1 - l])))
        .collect())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Norm of the gradient of a final-step cross-entropy (against a random
/// target) with respect to the hidden state `lag` steps earlier, averaged
/// over random one-hot input sequences.
pub fn gradient_norm_by_lag(params: &RnnParams, cfg: &GradientConfig, rng: &Rng) -> Result<GradientReport> {
    params.validate()?;
    let lags = cfg.lags()?;
    let per_sample: Vec<Vec<(f64, f64)>> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|s| {
            let mut r = rng.derive(&format!("sample-{s}"));
            let (inputs, target) = probe_sample(params, cfg.seq_len, &mut r);
            sample_norms(params, &inputs, target, &lags)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(lags.len());
    let mut first_non_finite_lag = None;
    for (j, &lag) in lags.iter().enumerate() {
        let mut hidden: Vec<f64> = per_sample.iter().map(|s| s[j].0).collect();
        let input_mean = per_sample.iter().map(|s| s[j].1).sum::<f64>() / cfg.n_samples as f64;
        let mean = hidden.iter().sum::<f64>() / cfg.n_samples as f64;
        if !mean.is_finite() || !input_mean.is_finite() {
            first_non_finite_lag = Some(lag);
            break;
        }
        rows.push(LagRow {
            lag,
            mean_norm: mean,
            median_norm: median(&mut hidden),
            mean_input_norm: input_mean,
            explosion_flag: false,
        });
    }
    let reference = rows.first().map_or(0.0, |r| r.mean_norm);
    for r in rows.iter_mut() {
        r.explosion_flag = r.mean_norm > cfg.explosion_ratio * reference;
    }
    let first_explosion_lag = rows
        .iter()
        .find(|r| r.explosion_flag)
        .map(|r| r.lag)
        .or(first_non_finite_lag);
    Ok(GradientReport {
        rows,
        exploded: first_explosion_lag.is_some(),
        first_explosion_lag,
        first_non_finite_lag,
        config: cfg.clone(),
        input_size: params.input_size(),
        hidden_size: params.hidden_size(),
        seed: rng.seed(),
    })
}

/// The same hidden-state gradient norms computed a second way: forming the
/// step Jacobians `diag(f'(h_t)) · W_rec` as explicit matrices and
/// multiplying them out. Meant for small nets.
pub fn hidden_grad_norms_by_jacobian(
    params: &RnnParams,
    inputs: &[Vec<f64>],
    target: usize,
    lags: &[usize],
) -> Result<Vec<f64>> {
    let n = inputs.len();
    if let Some(&l) = lags.iter().find(|&&l| l >= n) {
        return Err(Error::Config(format!("lag {l} does not fit a sequence of length {n}")));
    }
    let tape = unroll(params, inputs, &vec![0.0; params.hidden_size()])?;
    let hsize = params.hidden_size();
    let g = cross_entropy(&tape.steps[n - 1].logits, target)?.1;
    let dl_dh = params.w_out.matvec_t(&g);
    // prod = ∂h_{n-1}/∂h_{n-1-k}, grown one step at a time
    let mut prod = Matrix::zeros(hsize, hsize);
    for i in 0..hsize {
        prod.set(i, i, 1.0);
    }
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    let mut by_lag = vec![0.0; max_lag + 1];
    for k in 0..=max_lag {
        by_lag[k] = norm2(&prod.transpose().matvec(&dl_dh));
        let t = n - 1 - k;
        if t == 0 {
            break;
        }
        let mut jac = params.w_rec.clone();
        for (i, &y) in tape.steps[t].hidden.iter().enumerate() {
            let d = params.activation.derivative_at_output(y);
            jac.row_mut(i).iter_mut().for_each(|v| *v *= d);
        }
        prod = prod.matmul(&jac)?;
    }
    Ok(lags.iter().map(|&l| by_lag[l]).collect())
}

/// Mean input length of every level: the number of steps supervised
/// backpropagation through that level would traverse. The last entry is the
/// top level's path.
pub fn effective_path_length(hierarchy: &Hierarchy, corpus: &[SymbolSequence]) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let depth = hierarchy.depth();
    let lengths: Vec<Vec<usize>> = corpus
        .par_iter()
        .map(|s| {
            let mut input = s.as_events();
            let mut out = Vec::with_capacity(depth);
            for level in &hierarchy.levels {
                out.push(input.len());
                input = level.reduce(&input)?.events;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok((0..depth)
        .map(|k| lengths.iter().map(|l| l[k] as f64).sum::<f64>() / corpus.len() as f64)
        .collect())
}
