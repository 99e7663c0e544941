use super::params::RnnParams;
use super::tape::UnrollTape;
use crate::error::{Error, Result};
use crate::numerics::softmax_unchecked;

/// Cross-entropy of `softmax(logits)` against `target`, with its gradient
/// with respect to the logits (`softmax − onehot`).
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::TargetOutOfRange {
            index: target,
            size: logits.len(),
        });
    }
    let mut p = softmax_unchecked(logits);
    let loss = -p[target].max(f64::MIN_POSITIVE).ln();
    p[target] -= 1.0;
    Ok((loss, p))
}

/// Which per-step quantities the backward pass should keep.
#[derive(Debug, Clone, Copy, Default)]
pub struct Record {
    pub hidden: bool,
    pub inputs: bool,
}

/// Result of a backward sweep over a tape.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub grads: RnnParams,
    /// `∂L/∂h_t` (total, including flow from later steps), if recorded.
    pub hidden: Vec<Vec<f64>>,
    /// `∂L/∂x_t`, if recorded.
    pub inputs: Vec<Vec<f64>>,
    /// `∂L/∂h0`.
    pub initial: Vec<f64>,
}

/// Reverse sweep through an unrolled tape.
///
/// `logit_grads[t]` is `∂L/∂logits_t` (None = no loss at that step);
/// `hidden_grads[t]`, when given, is injected directly into `∂L/∂h_t`.
pub fn backprop(
    params: &RnnParams,
    tape: &UnrollTape,
    logit_grads: &[Option<Vec<f64>>],
    hidden_grads: Option<&[Option<Vec<f64>>]>,
    record: Record,
) -> Result<Backprop> {
    let n = tape.len();
    if logit_grads.len() != n {
        return Err(Error::dims("logit gradients", n, logit_grads.len()));
    }
    if let Some(hg) = hidden_grads {
        if hg.len() != n {
            return Err(Error::dims("hidden gradients", n, hg.len()));
        }
    }
    let hsize = params.hidden_size();
    let act = params.activation;
    let mut grads = params.zeros_like();
    let mut carry = vec![0.0; hsize];
    let mut dh = vec![0.0; hsize];
    let mut hidden_rec = Vec::new();
    let mut input_rec = Vec::new();

    for t in (0..n).rev() {
        let step = &tape.steps[t];
        dh.copy_from_slice(&carry);
        if let Some(g) = &logit_grads[t] {
            if g.len() != params.output_size() {
                return Err(Error::dims("w_out", params.output_size(), g.len()));
            }
            params.w_out.matvec_t_acc(g, &mut dh);
            grads.w_out.add_outer(1.0, g, &step.hidden);
            for (b, gi) in grads.b_o.iter_mut().zip(g) {
                *b += gi;
            }
        }
        if let Some(Some(g)) = hidden_grads.map(|hg| &hg[t]) {
            for (d, gi) in dh.iter_mut().zip(g) {
                *d += gi;
            }
        }
        if record.hidden {
            hidden_rec.push(dh.clone());
        }
        let dpre: Vec<f64> = dh
            .iter()
            .zip(&step.hidden)
            .map(|(&d, &y)| d * act.derivative_at_output(y))
            .collect();
        grads.w_in.add_outer(1.0, &dpre, &step.input);
        grads.w_rec.add_outer(1.0, &dpre, tape.hidden_before(t));
        for (b, d) in grads.b_h.iter_mut().zip(&dpre) {
            *b += d;
        }
        if record.inputs {
            input_rec.push(params.w_in.matvec_t(&dpre));
        }
        carry.iter_mut().for_each(|c| *c = 0.0);
        params.w_rec.matvec_t_acc(&dpre, &mut carry);
    }
    hidden_rec.reverse();
    input_rec.reverse();
    Ok(Backprop {
        grads,
        hidden: hidden_rec,
        inputs: input_rec,
        initial: carry,
    })
}

/// Summed next-step cross-entropy over the steps that carry a target, and
/// its exact gradient by full-unroll backpropagation through time.
pub fn bptt(
    params: &RnnParams,
    tape: &UnrollTape,
    targets: &[Option<usize>],
) -> Result<(f64, RnnParams)> {
    if targets.len() != tape.len() {
        return Err(Error::dims("targets", tape.len(), targets.len()));
    }
    let mut loss = 0.0;
    let mut logit_grads = Vec::with_capacity(targets.len());
    for (step, target) in tape.steps.iter().zip(targets) {
        match target {
            Some(t) => {
                let (l, g) = cross_entropy(&step.logits, *t)?;
                loss += l;
                logit_grads.push(Some(g));
            }
            None => logit_grads.push(None),
        }
    }
    let bp = backprop(params, tape, &logit_grads, None, Record::default())?;
    Ok((loss, bp.grads))
}

/// Global-norm clipping: returns the factor (≤ 1) the gradient must be scaled by.
pub fn clip_factor(norm: f64, clip: Option<f64>) -> f64 {
    match clip {
        Some(c) if norm > c && norm > 0.0 => c / norm,
        _ => 1.0,
    }
}

/// Norm and clipping factor applied by one SGD update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    pub clip_factor: f64,
}

/// In-place `params −= lr · factor · grads`, with global-norm clipping.
pub fn sgd_update(
    params: &mut RnnParams,
    grads: &RnnParams,
    lr: f64,
    clip: Option<f64>,
) -> Result<StepInfo> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let grad_norm = grads.norm();
    let factor = clip_factor(grad_norm, clip);
    params.add_scaled(grads, -lr * factor);
    Ok(StepInfo {
        grad_norm,
        clip_factor: factor,
    })
}

pub fn sgd_step(
    params: &RnnParams,
    grads: &RnnParams,
    lr: f64,
    clip: Option<f64>,
) -> Result<(RnnParams, StepInfo)> {
    let mut next = params.clone();
    let info = sgd_update(&mut next, grads, lr, clip)?;
    Ok((next, info))
}
