//! Elman recurrent network: forward pass, full-unroll backpropagation through
//! time, and plain SGD with optional global-norm clipping.

mod bptt;
pub mod checkpoint;
mod params;
mod tape;

pub use bptt::{backprop, bptt, clip_factor, cross_entropy, sgd_step, sgd_update, Backprop, Record, StepInfo};
pub use params::{Activation, RnnParams};
pub use tape::{forward_step, unroll, RnnState, StepRecord, UnrollTape};
