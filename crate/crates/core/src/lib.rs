//! Neural history compressor.
//!
//! A stack of next-symbol predicting recurrent nets. Each level forwards only
//! the inputs it failed to predict, so higher levels tick on a slower clock;
//! the original sequence stays exactly recoverable from the reduced one plus
//! the frozen predictor. On top of the stack sit a supervised classifier, a
//! distillation step that folds a higher level back into the one below, and
//! gradient diagnostics for plain recurrent nets.

pub mod chunker;
pub mod diagnostics;
pub mod distiller;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod provenance;
pub mod rnn;
pub mod supervised;
pub mod taskgen;
pub mod train;

pub use error::{Error, Result};
