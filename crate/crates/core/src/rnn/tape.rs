use super::params::RnnParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RnnState {
    pub h: Vec<f64>,
    pub t: usize,
}

impl RnnState {
    pub fn zeros(hidden: usize) -> Self {
        RnnState {
            h: vec![0.0; hidden],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Everything the backward pass needs from an unrolled forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrollTape {
    pub h0: Vec<f64>,
    pub steps: Vec<StepRecord>,
}

impl UnrollTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn logits(&self) -> impl Iterator<Item = &[f64]> {
        self.steps.iter().map(|s| s.logits.as_slice())
    }

    pub fn final_hidden(&self) -> &[f64] {
        self.steps.last().map(|s| s.hidden.as_slice()).unwrap_or(&self.h0)
    }

    /// Hidden state entering step `t`.
    pub fn hidden_before(&self, t: usize) -> &[f64] {
        if t == 0 {
            &self.h0
        } else {
            &self.steps[t - 1].hidden
        }
    }

    /// Re-runs the forward pass from the recorded inputs and `h0`.
    pub fn replay(&self, params: &RnnParams) -> Result<Vec<Vec<f64>>> {
        let inputs: Vec<&[f64]> = self.steps.iter().map(|s| s.input.as_slice()).collect();
        let tape = unroll(params, &inputs, &self.h0)?;
        Ok(tape.steps.into_iter().map(|s| s.logits).collect())
    }
}

fn check_dims(params: &RnnParams, h: &[f64], x: &[f64]) -> Result<()> {
    if x.len() != params.input_size() {
        return Err(Error::dims("w_in", params.input_size(), x.len()));
    }
    if h.len() != params.hidden_size() {
        return Err(Error::dims("w_rec", params.hidden_size(), h.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rnn input".into()));
    }
    Ok(())
}

fn step_record(params: &RnnParams, h: &[f64], x: &[f64]) -> StepRecord {
    let mut pre = params.b_h.clone();
    params.w_in.matvec_acc(x, &mut pre);
    params.w_rec.matvec_acc(h, &mut pre);
    let act = params.activation;
    let hidden: Vec<f64> = pre.iter().map(|&v| act.apply(v)).collect();
    let mut logits = params.b_o.clone();
    params.w_out.matvec_acc(&hidden, &mut logits);
    StepRecord {
        input: x.to_vec(),
        pre,
        hidden,
        logits,
    }
}

/// One step of the recurrence. Returns the next state and the output logits.
pub fn forward_step(params: &RnnParams, state: &RnnState, x: &[f64]) -> Result<(RnnState, Vec<f64>)> {
    check_dims(params, &state.h, x)?;
    let rec = step_record(params, &state.h, x);
    Ok((
        RnnState {
            h: rec.hidden,
            t: state.t + 1,
        },
        rec.logits,
    ))
}

/// Unrolls the network over `inputs` starting from `h0`, recording a tape.
pub fn unroll<X: AsRef<[f64]>>(params: &RnnParams, inputs: &[X], h0: &[f64]) -> Result<UnrollTape> {
    if inputs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut steps: Vec<StepRecord> = Vec::with_capacity(inputs.len());
    for x in inputs {
        let x = x.as_ref();
        let h = steps.last().map(|s| s.hidden.as_slice()).unwrap_or(h0);
        check_dims(params, h, x)?;
        let rec = step_record(params, h, x);
        steps.push(rec);
    }
    Ok(UnrollTape {
        h0: h0.to_vec(),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, Rng};
    use crate::rnn::Activation;

    #[test]
    fn zero_net_outputs_act_of_zero() {
        let p = RnnParams::zeros(3, 2, 4, Activation::Tanh);
        let (s, logits) = forward_step(&p, &RnnState::zeros(2), &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(s.h, vec![0.0, 0.0]);
        assert_eq!(logits, vec![0.0; 4]);
        let p = RnnParams::zeros(3, 2, 4, Activation::Sigmoid);
        let (s, _) = forward_step(&p, &RnnState::zeros(2), &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(s.h, vec![0.5, 0.5]);
    }

    #[test]
    fn hand_calculated_step() {
        let p = RnnParams {
            w_in: Matrix::from_vec(2, 2, vec![0.5, -0.3, 0.2, 0.8]).unwrap(),
            w_rec: Matrix::from_vec(2, 2, vec![0.1, 0.0, 0.0, -0.4]).unwrap(),
            b_h: vec![0.05, -0.1],
            w_out: Matrix::from_vec(1, 2, vec![1.0, -1.0]).unwrap(),
            b_o: vec![0.25],
            activation: Activation::Tanh,
        };
        let state = RnnState {
            h: vec![0.2, -0.5],
            t: 0,
        };
        let (next, logits) = forward_step(&p, &state, &[1.0, 0.0]).unwrap();
        // pre = [0.5 + 0.1*0.2 + 0.05, 0.2 + (-0.4)(-0.5) - 0.1] = [0.57, 0.3]
        let h = [0.57f64.tanh(), 0.3f64.tanh()];
        assert!((next.h[0] - h[0]).abs() < 1e-15);
        assert!((next.h[1] - h[1]).abs() < 1e-15);
        assert!((logits[0] - (h[0] - h[1] + 0.25)).abs() < 1e-15);
        assert_eq!(next.t, 1);
        let (again, logits2) = forward_step(&p, &state, &[1.0, 0.0]).unwrap();
        assert_eq!(again, next);
        assert_eq!(logits2, logits);
    }

    #[test]
    fn dimension_errors_name_the_matrix() {
        let p = RnnParams::zeros(3, 2, 4, Activation::Tanh);
        match forward_step(&p, &RnnState::zeros(2), &[1.0]) {
            Err(Error::DimensionMismatch { what, .. }) => assert_eq!(what, "w_in"),
            other => panic!("{other:?}"),
        }
        match forward_step(&p, &RnnState::zeros(5), &[1.0, 0.0, 0.0]) {
            Err(Error::DimensionMismatch { what, .. }) => assert_eq!(what, "w_rec"),
            other => panic!("{other:?}"),
        }
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(unroll(&p, &empty, &[0.0, 0.0]), Err(Error::EmptySequence)));
    }

    #[test]
    fn unroll_is_compositional_and_replayable() {
        let mut rng = Rng::new(4);
        let p = RnnParams::init(3, 5, 3, Activation::Tanh, &mut rng);
        let xs: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let h0 = vec![0.0; 5];
        let full = unroll(&p, &xs, &h0).unwrap();
        let one = unroll(&p, &xs[..1], &h0).unwrap();
        let (s, l) = forward_step(&p, &RnnState::zeros(5), &xs[0]).unwrap();
        assert_eq!(one.steps[0].hidden, s.h);
        assert_eq!(one.steps[0].logits, l);
        for split in 1..10 {
            let a = unroll(&p, &xs[..split], &h0).unwrap();
            let b = unroll(&p, &xs[split..], a.final_hidden()).unwrap();
            let chained: Vec<&[f64]> = a.logits().chain(b.logits()).collect();
            let whole: Vec<&[f64]> = full.logits().collect();
            assert_eq!(chained, whole);
        }
        let replayed = full.replay(&p).unwrap();
        let whole: Vec<Vec<f64>> = full.logits().map(|l| l.to_vec()).collect();
        assert_eq!(replayed, whole);
    }

    #[test]
    fn long_unroll_stays_finite() {
        let mut rng = Rng::new(1200);
        let p = RnnParams::init(6, 16, 6, Activation::Tanh, &mut rng);
        let xs: Vec<Vec<f64>> = (0..1200)
            .map(|t| {
                let mut v = vec![0.0; 6];
                v[t % 6] = 1.0;
                v
            })
            .collect();
        let tape = unroll(&p, &xs, &[0.0; 16]).unwrap();
        assert_eq!(tape.len(), 1200);
        assert!(tape
            .steps
            .iter()
            .all(|s| s.hidden.iter().chain(&s.logits).all(|v| v.is_finite())));
    }
}
