//! Run configuration: everything a `track` run needs, serializable to TOML so
//! each output directory archives the exact settings that produced it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost::CostProfile;
use crate::error::{Error, Result};
use crate::io::OracleConfig;
use crate::metrics::EvalConfig;
use crate::scheduler::{default_forced_cadence, CostMode, SkipPattern, SkipPolicy};
use crate::similarity::SimilarityConfig;
use crate::tracker::{SkipBoxSource, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    NoSkip,
    Periodic,
    Alternate,
    #[default]
    ContextAware,
}

/// Policy settings before they are resolved against a sequence's frame rate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Explicit periodic pattern, e.g. `"DDS"`. Takes precedence over `omega`.
    pub pattern: Option<SkipPattern>,
    /// Periodic window: one detection every `omega` frames.
    pub omega: Option<usize>,
    pub similarity: SimilarityConfig,
    /// Forced-detection cadence; derived from the frame rate when unset.
    pub k: Option<usize>,
}

impl PolicyConfig {
    pub fn resolve(&self, fps: f64) -> Result<SkipPolicy> {
        let policy = match self.kind {
            PolicyKind::NoSkip => SkipPolicy::NoSkip,
            PolicyKind::Periodic => match (&self.pattern, self.omega) {
                (Some(pattern), _) => SkipPolicy::Periodic {
                    pattern: pattern.clone(),
                },
                (None, Some(omega)) => SkipPolicy::periodic(omega)?,
                (None, None) => {
                    return Err(Error::InvalidConfig(
                        "periodic policy needs a pattern or omega".into(),
                    ))
                }
            },
            PolicyKind::Alternate => SkipPolicy::AlternateWithEstimation,
            PolicyKind::ContextAware => SkipPolicy::ContextAware {
                similarity: self.similarity.clone(),
                forced_cadence: self.k.unwrap_or_else(|| default_forced_cadence(fps)),
            },
        };
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DetectorConfig {
    /// Read `det/det.txt`.
    #[default]
    File,
    /// Synthesize detections from ground truth.
    Oracle(OracleConfig),
}

/// Named cost profiles plus custom and measured timing.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "lowercase")]
pub enum CostConfig {
    #[default]
    Mot17,
    Mot15,
    Measured,
    Custom(CostProfile),
}

impl CostConfig {
    pub fn mode(&self) -> CostMode {
        match self {
            CostConfig::Mot17 => CostMode::Simulated(CostProfile::MOT17),
            CostConfig::Mot15 => CostMode::Simulated(CostProfile::MOT15),
            CostConfig::Measured => CostMode::Measured,
            CostConfig::Custom(p) => CostMode::Simulated(*p),
        }
    }

    /// Parses `mot17`, `mot15`, `measured`, or a path to a TOML/JSON file
    /// holding `t_detection`, `t_decision` and `t_estimation`.
    pub fn from_arg(arg: &str) -> Result<Self> {
        match arg.to_ascii_lowercase().as_str() {
            "mot17" => Ok(CostConfig::Mot17),
            "mot15" => Ok(CostConfig::Mot15),
            "measured" => Ok(CostConfig::Measured),
            _ => {
                let path = Path::new(arg);
                let text = read_text(path)?;
                let profile: CostProfile = if path.extension().is_some_and(|e| e == "json") {
                    serde_json::from_str(&text).map_err(|e| parse_error(path, e))?
                } else {
                    toml::from_str(&text).map_err(|e| parse_error(path, e))?
                };
                profile.validate()?;
                Ok(CostConfig::Custom(profile))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Directory holding one sub-directory per sequence.
    pub data: PathBuf,
    /// Sequence names; empty means every sequence under `data`.
    pub sequences: Vec<String>,
    pub out: PathBuf,
    pub policy: PolicyConfig,
    /// Overrides the policy's default box source on skipped frames.
    pub skip_box_source: Option<SkipBoxSource>,
    pub detector: DetectorConfig,
    pub cost: CostConfig,
    pub tracker: TrackerConfig,
    pub eval: EvalConfig,
    /// Base seed; per-sequence oracle seeds are derived from it.
    pub seed: u64,
    /// Sequences processed in parallel; 0 uses all cores.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            sequences: Vec::new(),
            out: PathBuf::from("out"),
            policy: PolicyConfig::default(),
            skip_box_source: None,
            detector: DetectorConfig::default(),
            cost: CostConfig::default(),
            tracker: TrackerConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
            jobs: 0,
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn parse_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("{}: {e}", path.display()))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        toml::from_str(&read_text(path)?).map_err(|e| parse_error(path, e))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.tracker.validate()?;
        if let DetectorConfig::Oracle(o) = &self.detector {
            o.validate()?;
        }
        if let CostConfig::Custom(p) = &self.cost {
            p.validate()?;
        }
        if !(0.0..=1.0).contains(&self.eval.iou_threshold) {
            return Err(Error::InvalidConfig(format!(
                "evaluation IoU threshold {} not in [0, 1]",
                self.eval.iou_threshold
            )));
        }
        // Resolve once so bad policy settings fail before any work starts.
        self.policy.resolve(25.0).map(|_| ())
    }

    /// Oracle seed for one sequence: the base seed mixed with the name, so
    /// results do not depend on which other sequences are selected.
    pub fn sequence_seed(&self, name: &str) -> u64 {
        name.bytes()
            .fold(self.seed ^ 0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3))
    }
}
