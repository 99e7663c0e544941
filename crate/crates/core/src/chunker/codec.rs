use serde::{Deserialize, Serialize};

use super::sequence::Event;
use crate::numerics::{argmax, softmax_unchecked};

pub const DEFAULT_GAP_CAP: usize = 128;

/// Maps an event to `onehot(symbol) ++ [min(gap, cap) / cap]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapCodec {
    pub alphabet_size: usize,
    pub gap_cap: usize,
}

impl GapCodec {
    pub fn new(alphabet_size: usize, gap_cap: usize) -> Self {
        GapCodec {
            alphabet_size,
            gap_cap: gap_cap.max(1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.alphabet_size + 1
    }

    pub fn gap_feature(&self, gap: usize) -> f64 {
        gap.min(self.gap_cap) as f64 / self.gap_cap as f64
    }

    pub fn encode(&self, e: Event) -> Vec<f64> {
        let mut v = vec![0.0; self.input_dim()];
        v[e.symbol] = 1.0;
        v[self.alphabet_size] = self.gap_feature(e.gap);
        v
    }

    pub fn encode_all(&self, events: &[Event]) -> Vec<Vec<f64>> {
        events.iter().map(|&e| self.encode(e)).collect()
    }

    /// Symbol carried by an encoded vector.
    pub fn decode_symbol(&self, v: &[f64]) -> usize {
        argmax(&v[..self.alphabet_size])
    }
}

/// When an input counts as unexpected.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SurpriseRule {
    /// Surprise iff the predicted argmax differs from the actual symbol.
    #[default]
    ArgmaxMismatch,
    /// Surprise iff `p(actual) < tau`. A step whose argmax is wrong is also
    /// forwarded even when `p(actual) >= tau`, so replay stays exact.
    ProbThreshold { tau: f64 },
}

impl SurpriseRule {
    pub fn fires(&self, logits: &[f64], actual: usize) -> bool {
        let predicted = argmax(logits);
        match *self {
            SurpriseRule::ArgmaxMismatch => predicted != actual,
            SurpriseRule::ProbThreshold { tau } => {
                predicted != actual || softmax_unchecked(logits)[actual] < tau
            }
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match *self {
            SurpriseRule::ArgmaxMismatch => None,
            SurpriseRule::ProbThreshold { tau } => Some(tau),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_examples() {
        let c = GapCodec::new(4, 100);
        assert_eq!(c.encode(Event { symbol: 2, gap: 1 }), vec![0.0, 0.0, 1.0, 0.0, 0.01]);
        assert_eq!(c.encode(Event { symbol: 0, gap: 100 })[4], 1.0);
        assert_eq!(c.encode(Event { symbol: 0, gap: 5000 })[4], 1.0);
        for s in 0..4 {
            for gap in [0, 1, 7, 1000] {
                assert_eq!(c.decode_symbol(&c.encode(Event { symbol: s, gap })), s);
            }
        }
    }

    #[test]
    fn threshold_rule_guards_argmax_errors() {
        let rule = SurpriseRule::ProbThreshold { tau: 0.1 };
        // p ≈ [0.42, 0.16, 0.42]: p(1) ≥ 0.1 but argmax is 0
        let logits = [1.0, 0.0, 1.0];
        assert!(rule.fires(&logits, 1));
        assert!(SurpriseRule::ArgmaxMismatch.fires(&logits, 1));
        assert!(!SurpriseRule::ArgmaxMismatch.fires(&logits, 0));
        // argmax correct but not confident enough
        let strict = SurpriseRule::ProbThreshold { tau: 0.9 };
        assert!(strict.fires(&logits, 0));
    }
}
