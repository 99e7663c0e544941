use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, sigmoid, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation output `y = act(x)`.
    pub fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Weights of a single-hidden-layer Elman network.
///
/// `h' = act(w_in·x + w_rec·h + b_h)`, `logits = w_out·h' + b_o`.
/// The same struct doubles as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    pub w_in: Matrix,
    pub w_rec: Matrix,
    pub b_h: Vec<f64>,
    pub w_out: Matrix,
    pub b_o: Vec<f64>,
    pub activation: Activation,
}

impl RnnParams {
    pub fn zeros(input: usize, hidden: usize, output: usize, activation: Activation) -> Self {
        RnnParams {
            w_in: Matrix::zeros(hidden, input),
            w_rec: Matrix::zeros(hidden, hidden),
            b_h: vec![0.0; hidden],
            w_out: Matrix::zeros(output, hidden),
            b_o: vec![0.0; output],
            activation,
        }
    }

    /// Weights uniform in `[-r, r]` with `r = 1/√fan_in` per matrix, biases zero.
    pub fn init(
        input: usize,
        hidden: usize,
        output: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        RnnParams {
            w_in: Matrix::uniform(hidden, input, 1.0 / (input as f64).sqrt(), rng),
            w_rec: Matrix::uniform(hidden, hidden, 1.0 / (hidden as f64).sqrt(), rng),
            b_h: vec![0.0; hidden],
            w_out: Matrix::uniform(output, hidden, 1.0 / (hidden as f64).sqrt(), rng),
            b_o: vec![0.0; output],
            activation,
        }
    }

    /// All weight matrices uniform in `[-r, r]`, biases zero.
    pub fn init_uniform(
        input: usize,
        hidden: usize,
        output: usize,
        activation: Activation,
        r: f64,
        rng: &mut Rng,
    ) -> Self {
        RnnParams {
            w_in: Matrix::uniform(hidden, input, r, rng),
            w_rec: Matrix::uniform(hidden, hidden, r, rng),
            b_h: vec![0.0; hidden],
            w_out: Matrix::uniform(output, hidden, r, rng),
            b_o: vec![0.0; output],
            activation,
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_in.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_rec.rows()
    }

    pub fn output_size(&self) -> usize {
        self.w_out.rows()
    }

    pub fn zeros_like(&self) -> Self {
        RnnParams::zeros(
            self.input_size(),
            self.hidden_size(),
            self.output_size(),
            self.activation,
        )
    }

    pub fn num_params(&self) -> usize {
        let (i, h, o) = (self.input_size(), self.hidden_size(), self.output_size());
        h * i + h * h + h + o * h + o
    }

    /// Checks that all shapes agree and every entry is finite.
    pub fn validate(&self) -> Result<()> {
        let h = self.w_in.rows();
        if self.w_rec.rows() != h {
            return Err(Error::dims("w_rec rows", h, self.w_rec.rows()));
        }
        if self.w_rec.cols() != h {
            return Err(Error::dims("w_rec cols", h, self.w_rec.cols()));
        }
        if self.b_h.len() != h {
            return Err(Error::dims("b_h", h, self.b_h.len()));
        }
        if self.w_out.cols() != h {
            return Err(Error::dims("w_out cols", h, self.w_out.cols()));
        }
        if self.b_o.len() != self.w_out.rows() {
            return Err(Error::dims("b_o", self.w_out.rows(), self.b_o.len()));
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("rnn parameters".into()));
        }
        Ok(())
    }

    fn slices(&self) -> [&[f64]; 5] {
        [
            self.w_in.data(),
            self.w_rec.data(),
            &self.b_h,
            self.w_out.data(),
            &self.b_o,
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w_in.data_mut(),
            self.w_rec.data_mut(),
            &mut self.b_h,
            self.w_out.data_mut(),
            &mut self.b_o,
        ]
    }

    /// Flat view in the order `w_in, w_rec, b_h, w_out, b_o`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    /// Copies of `self`'s shape with values taken from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::dims("flat parameter vector", self.num_params(), flat.len()));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for s in out.slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn norm_sq(&self) -> f64 {
        self.slices().iter().map(|s| dot(s, s)).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `self += alpha · other` (shapes must agree).
    pub fn add_scaled(&mut self, other: &RnnParams, alpha: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            axpy(alpha, src, dst);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= alpha);
        }
    }
}
