//! Effective run configuration, echoed into every emitted artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attributes::{AttributeError, FusionThresholds, TailBounds};
use crate::balancer::DEFAULT_IOU_THRESHOLD;
use crate::bootstrap::DEFAULT_SAMPLES;
use crate::scoring::{ScoreOptions, DEFAULT_BINS};
use crate::TOOL_VERSION;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Flat keys mirror the CLI flags. Defaults are the published constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Races to audit; empty means every race with both genders.
    pub races: Vec<String>,
    pub dataset: String,
    pub matcher: String,
    pub bald_hair_ratio: f64,
    pub bald_confidence: f64,
    pub fh_ms_strong: f64,
    pub fh_ms_mid: f64,
    pub fh_rek_true_strong: f64,
    pub fh_rek_true_weak: f64,
    pub fh_rek_false_weak: f64,
    pub iou_threshold: f64,
    pub tail_lower: f64,
    pub tail_upper: f64,
    pub bins: usize,
    pub max_pairs: Option<u64>,
    pub seed: u64,
    pub samples: usize,
    pub skip_bootstrap: bool,
    pub hair_label: Option<u8>,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let f = FusionThresholds::default();
        let t = TailBounds::default();
        Self {
            corpus: None,
            out_dir: None,
            races: Vec::new(),
            dataset: "corpus".into(),
            matcher: "unspecified".into(),
            bald_hair_ratio: f.bald_hair_ratio,
            bald_confidence: f.bald_confidence,
            fh_ms_strong: f.ms_strong,
            fh_ms_mid: f.ms_mid,
            fh_rek_true_strong: f.rek_true_strong,
            fh_rek_true_weak: f.rek_true_weak,
            fh_rek_false_weak: f.rek_false_weak,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            tail_lower: t.lower,
            tail_upper: t.upper,
            bins: DEFAULT_BINS,
            max_pairs: None,
            seed: 0,
            samples: DEFAULT_SAMPLES,
            skip_bootstrap: false,
            hair_label: None,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn fusion(&self) -> FusionThresholds {
        FusionThresholds {
            bald_hair_ratio: self.bald_hair_ratio,
            bald_confidence: self.bald_confidence,
            ms_strong: self.fh_ms_strong,
            ms_mid: self.fh_ms_mid,
            rek_true_strong: self.fh_rek_true_strong,
            rek_true_weak: self.fh_rek_true_weak,
            rek_false_weak: self.fh_rek_false_weak,
        }
    }

    pub fn tails(&self) -> Result<TailBounds, AttributeError> {
        TailBounds::new(self.tail_lower, self.tail_upper)
    }

    pub fn score_options(&self) -> ScoreOptions {
        ScoreOptions {
            bins: self.bins,
            max_pairs: self.max_pairs,
            seed: self.seed,
            ..ScoreOptions::default()
        }
    }

    /// `{"tool": ..., "config": ...}` for embedding in JSON outputs.
    pub fn provenance(&self) -> serde_json::Value {
        serde_json::json!({ "tool": TOOL_VERSION, "config": self })
    }

    /// `#`-prefixed header lines for CSV and text outputs.
    pub fn comment_header(&self) -> String {
        format!(
            "# tool: {TOOL_VERSION}\n# config: {}\n",
            serde_json::to_string(self).expect("config serializes")
        )
    }
}
