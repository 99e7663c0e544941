use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::codec::{GapCodec, SurpriseRule};
use super::hierarchy::{BuildStatus, Hierarchy, LevelStats};
use super::level::Level;
use crate::error::{Error, Result};
use crate::provenance::Provenance;
use crate::rnn::checkpoint as rnn_ck;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEntry {
    pub index: usize,
    pub file: String,
    pub hidden: usize,
}

/// `manifest.json` of a hierarchy checkpoint directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub depth: usize,
    pub surprise_rule: SurpriseRule,
    pub tau: Option<f64>,
    pub gap_cap: usize,
    pub alphabet_size: usize,
    pub status: BuildStatus,
    pub levels: Vec<LevelEntry>,
    pub stats: Vec<LevelStats>,
    pub provenance: Option<Provenance>,
}

pub fn level_file(k: usize) -> String {
    format!("level_{k}.json")
}

pub fn save(
    hierarchy: &Hierarchy,
    stats: &[LevelStats],
    provenance: Option<&Provenance>,
    dir: &Path,
) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for level in &hierarchy.levels {
        let file = level_file(level.index);
        rnn_ck::save_with_provenance(&level.predictor, provenance, &dir.join(&file))?;
        entries.push(LevelEntry {
            index: level.index,
            file,
            hidden: level.hidden_size(),
        });
    }
    let first = &hierarchy.levels[0];
    let manifest = Manifest {
        version: rnn_ck::CHECKPOINT_VERSION,
        depth: hierarchy.depth(),
        surprise_rule: first.rule,
        tau: first.rule.tau(),
        gap_cap: first.codec.gap_cap,
        alphabet_size: first.codec.alphabet_size,
        status: hierarchy.status,
        levels: entries,
        stats: stats.to_vec(),
        provenance: provenance.cloned(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load(dir: &Path) -> Result<(Hierarchy, Manifest)> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
    if manifest.levels.len() != manifest.depth || manifest.depth == 0 {
        return Err(Error::Config(format!(
            "manifest depth {} does not match {} level entries",
            manifest.depth,
            manifest.levels.len()
        )));
    }
    let codec = GapCodec::new(manifest.alphabet_size, manifest.gap_cap);
    let levels = manifest
        .levels
        .iter()
        .map(|entry| {
            let params = rnn_ck::load(&dir.join(&entry.file))?;
            Level::from_parts(entry.index, params, manifest.surprise_rule, codec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        Hierarchy {
            levels,
            status: manifest.status,
        },
        manifest,
    ))
}
