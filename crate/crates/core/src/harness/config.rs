use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chunker::{HierarchyConfig, SurpriseRule};
use crate::diagnostics::GradientConfig;
use crate::distiller::DistillConfig;
use crate::error::{Error, Result};
use crate::supervised::ClassifierConfig;
use crate::taskgen::TaskSpec;
use crate::train::{EarlyStop, TrainConfig};

/// Random nets probed by `hc diagnose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsConfig {
    pub hidden: usize,
    /// Weights of every probed net are drawn uniformly from `[-r, r]`.
    pub init_range: f64,
    /// Each net is probed once per factor applied to its recurrent weights.
    pub recurrent_scales: Vec<f64>,
    pub n_nets: usize,
    /// `(from, to)` lags of the reported decay ratio.
    pub ratio_lags: (usize, usize),
    pub gradient: GradientConfig,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            hidden: 32,
            init_range: 0.1,
            recurrent_scales: vec![1.0, 8.0],
            n_nets: 10,
            ratio_lags: (1, 100),
            gradient: GradientConfig::default(),
        }
    }
}

/// Everything one experiment needs. `task.seed` is ignored: each run seed
/// derives the corpus seed itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub hierarchy: HierarchyConfig,
    pub classifier: ClassifierConfig,
    pub distill: DistillConfig,
    pub diagnostics: DiagnosticsConfig,
    /// Root seeds; every command runs once per seed.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let level = |lr, max_sequences| TrainConfig {
            epochs: 300,
            lr,
            clip: Some(5.0),
            max_sequences: Some(max_sequences),
            early_stop: Some(EarlyStop {
                window: 20,
                tolerance: 0.01,
                min_epochs: 0,
            }),
        };
        ExperimentConfig {
            task: TaskSpec::default(),
            hierarchy: HierarchyConfig {
                depth: 3,
                hidden_sizes: vec![24, 16, 8],
                surprise: SurpriseRule::ProbThreshold { tau: 0.7 },
                train: vec![level(0.5, 16), level(0.3, 256)],
                ..HierarchyConfig::default()
            },
            classifier: ClassifierConfig {
                lr: 0.1,
                ..ClassifierConfig::default()
            },
            distill: DistillConfig {
                lambda: 30.0,
                train: TrainConfig {
                    epochs: 150,
                    lr: 0.03,
                    clip: Some(5.0),
                    max_sequences: None,
                    early_stop: None,
                },
            },
            diagnostics: DiagnosticsConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Command-line flags win over the config file.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.seeds = vec![s];
        }
        if let Some(o) = out {
            self.out_dir = o;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.hierarchy.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !(self.classifier.lr > 0.0) {
            return Err(Error::Config(format!("classifier lr must be positive, got {}", self.classifier.lr)));
        }
        if !(0.0..1.0).contains(&self.classifier.test_fraction) {
            return Err(Error::Config("classifier test_fraction must lie in [0, 1)".into()));
        }
        if !(self.distill.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.distill.lambda)));
        }
        self.distill.train.validate()?;
        let d = &self.diagnostics;
        if d.hidden == 0 || d.n_nets == 0 || !(d.init_range > 0.0) {
            return Err(Error::Config("diagnostics need positive hidden, n_nets and init_range".into()));
        }
        d.gradient.lags()?;
        Ok(())
    }

    /// SHA-256 of the config without the seed list and the output
    /// directory. Artifacts record their seed next to this hash, so one run
    /// seed reproduces the same bytes whichever seed list it came from.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.seeds.clear();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        format!("{:x}", Sha256::digest(&bytes))
    }
}
