//! The `hc` experiment runner. Commands talk to each other only through
//! files under the output directory:
//!
//! ```text
//! <out>/seed-<S>/corpus.txt            hc gen
//! <out>/seed-<S>/hierarchy/            hc pretrain (manifest.json, level_<k>.json)
//! <out>/seed-<S>/pretrain_log.csv      hc pretrain
//! <out>/seed-<S>/compression.csv       hc pretrain
//! <out>/seed-<S>/classifier/           hc classify (head.json, top.json)
//! <out>/seed-<S>/classify.csv          hc classify
//! <out>/seed-<S>/distilled.json        hc distill
//! <out>/seed-<S>/distill.csv           hc distill
//! <out>/diagnose/scale-<x>/net-<i>.csv hc diagnose (plus .json sidecars)
//! <out>/repro.csv                      hc repro
//! ```
//!
//! Each per-seed stage also writes a `<stage>.json` summary. Every artifact
//! carries the config hash, the run seed and the tool version.
//!
//! Seeds: a run seed `S` roots one [`Rng`](crate::numerics::Rng); each
//! component draws from `Rng::new(S).derive(<component>)`, with component
//! names `task`, `hierarchy`, `head`, `classify`, `distill`, `distill-train`,
//! `diagnose-net-<i>` and `diagnose-probe-<i>`.

pub mod checks;
mod commands;
mod config;

pub use commands::{
    cmd_classify, cmd_diagnose, cmd_distill, cmd_gen, cmd_pretrain, cmd_repro, tree_differences, ClassifySummary,
    DiagnoseRow, DiagnoseSummary, DistillSummary, Layout, OutputLock, Parity, PretrainSummary, ReproReport, SeedRun,
    LOCK_FILE,
};
pub use config::{DiagnosticsConfig, ExperimentConfig};
