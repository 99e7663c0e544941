use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite sequence of symbols drawn from `0..alphabet_size`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymbolSequence {
    symbols: Vec<usize>,
    alphabet_size: usize,
}

impl SymbolSequence {
    pub fn new(symbols: Vec<usize>, alphabet_size: usize) -> Result<Self> {
        if let Some(&bad) = symbols.iter().find(|&&s| s >= alphabet_size) {
            return Err(Error::TargetOutOfRange {
                index: bad,
                size: alphabet_size,
            });
        }
        Ok(SymbolSequence {
            symbols,
            alphabet_size,
        })
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// The raw sequence on its own clock: every step is one tick after the
    /// previous one, the first step sits at absolute position 0.
    pub fn as_events(&self) -> Vec<Event> {
        self.symbols
            .iter()
            .enumerate()
            .map(|(t, &symbol)| Event {
                symbol,
                gap: usize::from(t > 0),
            })
            .collect()
    }
}

/// A symbol together with the number of input steps since the previous
/// event. The first event of a sequence carries its absolute position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub symbol: usize,
    pub gap: usize,
}

/// The surprising steps of an input sequence, forwarded to the next level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReducedSequence {
    pub events: Vec<Event>,
    /// Length of the input sequence the events were taken from.
    pub source_length: usize,
    pub alphabet_size: usize,
}

impl ReducedSequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Event positions on the input clock (prefix sums of the gaps).
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = 0;
        self.events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                pos = if i == 0 { e.gap } else { pos + e.gap };
                pos
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .events
            .first()
            .ok_or_else(|| Error::InvalidReduction("position 0 must be an event".into()))?;
        if first.gap != 0 {
            return Err(Error::InvalidReduction(format!(
                "first event at position {} instead of 0",
                first.gap
            )));
        }
        if let Some(e) = self.events.iter().skip(1).find(|e| e.gap == 0) {
            return Err(Error::InvalidReduction(format!(
                "non-positive gap at symbol {}",
                e.symbol
            )));
        }
        if let Some(&last) = self.positions().last() {
            if last >= self.source_length {
                return Err(Error::InvalidReduction(format!(
                    "event position {last} beyond source length {}",
                    self.source_length
                )));
            }
        }
        if let Some(e) = self.events.iter().find(|e| e.symbol >= self.alphabet_size) {
            return Err(Error::InvalidReduction(format!("symbol {} out of alphabet", e.symbol)));
        }
        Ok(())
    }
}
