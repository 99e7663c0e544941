//! The history compressor proper: stacked predictors, surprise-driven
//! reduction between levels, and exact reconstruction.

pub mod checkpoint;
mod codec;
mod hierarchy;
mod level;
mod sequence;

pub use codec::{GapCodec, SurpriseRule, DEFAULT_GAP_CAP};
pub use hierarchy::{build_hierarchy, BuildOutput, BuildStatus, Hierarchy, HierarchyConfig, LevelStats};
pub use level::Level;
pub(crate) use level::next_symbol_objective;
pub use sequence::{Event, ReducedSequence, SymbolSequence};
