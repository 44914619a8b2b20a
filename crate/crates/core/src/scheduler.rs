//! Per-frame detect-or-skip decisions and the sequence loop that drives the
//! tracker, the detection source and the cost ledger.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cost::{CostLedger, CostProfile};
use crate::error::{Error, Result};
use crate::io::{DetectionSource, FrameSource, ResultRow};
use crate::similarity::{aggregate, pair_similarity, FrameSimilarity, SimilarityConfig, SimilarityScope};
use crate::tracker::{SkipBoxSource, Tracker, TrackerConfig};
use crate::types::{crop, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Detect,
    Skip,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Detect => "detect",
            Action::Skip => "skip",
        })
    }
}

/// Why a decision was taken. `BelowThreshold` / `AboveThreshold` refer to the
/// similarity verdict (insufficient / sufficient), so for the eigenvalue
/// measure `AboveThreshold` means the raw value was at or under its limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reason {
    FirstFrame,
    Forced,
    BelowThreshold,
    AboveThreshold,
    Periodic,
    NoTracks,
}

impl Reason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Reason::FirstFrame => "first_frame",
            Reason::Forced => "forced",
            Reason::BelowThreshold => "below_threshold",
            Reason::AboveThreshold => "above_threshold",
            Reason::Periodic => "periodic",
            Reason::NoTracks => "no_tracks",
        }
    }
}

impl FromStr for Reason {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "first_frame" => Reason::FirstFrame,
            "forced" => Reason::Forced,
            "below_threshold" => Reason::BelowThreshold,
            "above_threshold" => Reason::AboveThreshold,
            "periodic" => Reason::Periodic,
            "no_tracks" => Reason::NoTracks,
            other => return Err(format!("unknown reason {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipDecision {
    pub frame_index: usize,
    pub action: Action,
    pub similarity_score: Option<f64>,
    pub reason: Reason,
    /// Frames elapsed since the last detector call (0 on the first frame).
    pub frames_since_detection: usize,
}

/// Repeating detect/skip pattern such as `DDS` (skip one frame in three).
/// Must start with a detection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SkipPattern(Vec<Action>);

impl SkipPattern {
    /// One detection every `omega` frames.
    pub fn detect_every(omega: usize) -> Result<Self> {
        if omega == 0 {
            return Err(Error::InvalidConfig("omega must be >= 1".into()));
        }
        let mut v = vec![Action::Skip; omega];
        v[0] = Action::Detect;
        Ok(Self(v))
    }

    pub fn action_at(&self, frame_index: usize) -> Action {
        self.0[(frame_index - 1) % self.0.len()]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn detections_in(&self, n_frames: usize) -> usize {
        (1..=n_frames).filter(|&f| self.action_at(f) == Action::Detect).count()
    }
}

impl FromStr for SkipPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let actions = s
            .trim()
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'D' => Ok(Action::Detect),
                'S' => Ok(Action::Skip),
                other => Err(Error::InvalidConfig(format!("pattern character {other:?} is not D or S"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if actions.first() != Some(&Action::Detect) {
            return Err(Error::InvalidConfig(format!("pattern {s:?} must start with D")));
        }
        Ok(Self(actions))
    }
}

impl TryFrom<String> for SkipPattern {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SkipPattern> for String {
    fn from(p: SkipPattern) -> String {
        p.to_string()
    }
}

impl fmt::Display for SkipPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.0 {
            f.write_str(if *a == Action::Detect { "D" } else { "S" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SkipPolicy {
    NoSkip,
    Periodic { pattern: SkipPattern },
    /// Detect on odd frames, estimate on even ones.
    AlternateWithEstimation,
    ContextAware {
        similarity: SimilarityConfig,
        /// At most `forced_cadence - 1` consecutive skips.
        forced_cadence: usize,
    },
}

impl SkipPolicy {
    pub fn periodic(omega: usize) -> Result<Self> {
        Ok(SkipPolicy::Periodic {
            pattern: SkipPattern::detect_every(omega)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SkipPolicy::Periodic { pattern } if pattern.is_empty() => {
                Err(Error::InvalidConfig("empty skip pattern".into()))
            }
            SkipPolicy::ContextAware { similarity, forced_cadence } => {
                if *forced_cadence == 0 {
                    return Err(Error::InvalidConfig("forced cadence k must be >= 1".into()));
                }
                similarity.validate()
            }
            _ => Ok(()),
        }
    }

    pub fn uses_similarity(&self) -> bool {
        matches!(self, SkipPolicy::ContextAware { .. })
    }

    /// Box source used on skipped frames unless overridden: periodic skipping
    /// reuses the previous boxes, the estimation policies use Kalman.
    pub fn default_box_source(&self) -> SkipBoxSource {
        match self {
            SkipPolicy::Periodic { .. } => SkipBoxSource::Reuse,
            _ => SkipBoxSource::Kalman,
        }
    }

    pub fn label(&self) -> String {
        match self {
            SkipPolicy::NoSkip => "noskip".into(),
            SkipPolicy::Periodic { pattern } => format!("periodic:{pattern}"),
            SkipPolicy::AlternateWithEstimation => "alternate".into(),
            SkipPolicy::ContextAware {
                similarity,
                forced_cadence,
            } => format!("context-aware:{:?}:k{}", similarity.measure, forced_cadence).to_lowercase(),
        }
    }
}

/// Forced-detection cadence for a given frame rate: `max(2, round(fps / 5))`.
pub fn default_forced_cadence(fps: f64) -> usize {
    ((fps / 5.0).round() as usize).max(2)
}

pub fn decide(
    policy: &SkipPolicy,
    frame_index: usize,
    frames_since_last_detection: usize,
    similarity: Option<FrameSimilarity>,
) -> SkipDecision {
    let similarity_score = similarity.and_then(|s| s.score());
    let (action, reason) = if frame_index <= 1 {
        (Action::Detect, Reason::FirstFrame)
    } else {
        match policy {
            SkipPolicy::NoSkip => (Action::Detect, Reason::Periodic),
            SkipPolicy::Periodic { pattern } => (pattern.action_at(frame_index), Reason::Periodic),
            SkipPolicy::AlternateWithEstimation => {
                let action = if frame_index % 2 == 1 { Action::Detect } else { Action::Skip };
                (action, Reason::Periodic)
            }
            SkipPolicy::ContextAware {
                similarity: config,
                forced_cadence,
            } => {
                if frames_since_last_detection >= *forced_cadence {
                    (Action::Detect, Reason::Forced)
                } else {
                    match similarity.unwrap_or(FrameSimilarity::NoTracks) {
                        FrameSimilarity::NoTracks => (Action::Detect, Reason::NoTracks),
                        FrameSimilarity::Score(s) if config.passes(s) => (Action::Skip, Reason::AboveThreshold),
                        FrameSimilarity::Score(_) => (Action::Detect, Reason::BelowThreshold),
                    }
                }
            }
        }
    };
    SkipDecision {
        frame_index,
        action,
        similarity_score,
        reason,
        frames_since_detection: frames_since_last_detection,
    }
}

/// Re-runs the decision rule over a recorded similarity series (one entry
/// per frame, `None` for frames without tracks).
pub fn replay_decisions(policy: &SkipPolicy, scores: &[Option<f64>]) -> Vec<SkipDecision> {
    let mut last_detect = 1;
    scores
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let f = i + 1;
            let sim = s.map(FrameSimilarity::Score).unwrap_or(FrameSimilarity::NoTracks);
            let d = decide(policy, f, f.saturating_sub(last_detect), Some(sim));
            if d.action == Action::Detect {
                last_detect = f;
            }
            d
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CostMode {
    Simulated(CostProfile),
    /// Wall-clock timings of this process replace the simulated profile.
    Measured,
}

impl Default for CostMode {
    fn default() -> Self {
        CostMode::Simulated(CostProfile::default())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Overrides the policy's default skipped-frame box source.
    pub skip_box_source: Option<SkipBoxSource>,
    pub cost: CostMode,
}

#[derive(Debug, Clone, Default)]
pub struct SequenceRun {
    /// Emitted boxes, sorted by (frame, id).
    pub rows: Vec<ResultRow>,
    pub decisions: Vec<SkipDecision>,
    pub ledger: CostLedger,
    pub detector_calls: usize,
}

impl SequenceRun {
    pub fn frames_skipped(&self) -> usize {
        self.decisions.iter().filter(|d| d.action == Action::Skip).count()
    }
}

fn frame_similarity_for(
    tracker: &Tracker,
    image: &GrayImage,
    last_detected_frame: Option<&GrayImage>,
    config: &SimilarityConfig,
) -> FrameSimilarity {
    let scores: Vec<f64> = match config.scope {
        SimilarityScope::Crops => tracker
            .active_tracks()
            .filter_map(|t| {
                let template = t.template.as_ref()?;
                let estimate = crop(image, &t.predicted_box()).ok()?;
                pair_similarity(template, &estimate, config).ok()
            })
            .collect(),
        SimilarityScope::WholeFrame => last_detected_frame
            .and_then(|prev| pair_similarity(prev, image, config).ok())
            .into_iter()
            .collect(),
    };
    aggregate(&scores, config)
}

/// Runs one sequence under `policy`. The detection source is queried exactly
/// on frames whose decision is `Detect`; frames are only decoded when the
/// policy needs pixels.
pub fn run_sequence(
    frames: &mut dyn FrameSource,
    detections: &mut dyn DetectionSource,
    policy: &SkipPolicy,
    tracker_config: &TrackerConfig,
    options: &RunOptions,
) -> Result<SequenceRun> {
    policy.validate()?;
    tracker_config.validate()?;
    let box_source = options.skip_box_source.unwrap_or_else(|| policy.default_box_source());
    let profile = match options.cost {
        CostMode::Simulated(p) => {
            p.validate()?;
            Some(if policy.uses_similarity() { p } else { p.without_decision() })
        }
        CostMode::Measured => None,
    };
    let sim_config = match policy {
        SkipPolicy::ContextAware { similarity, .. } => Some(similarity),
        _ => None,
    };

    let n = frames.len();
    let mut tracker = Tracker::new(tracker_config.clone());
    let mut run = SequenceRun::default();
    let mut last_detect = 0usize;
    let mut last_detected_image: Option<GrayImage> = None;
    let mut detect_seconds = 0.0;

    for f in 1..=n {
        let image = match sim_config {
            Some(_) => Some(frames.frame(f)?),
            None => None,
        };

        let started = Instant::now();
        tracker.predict();
        let similarity = match (sim_config, &image) {
            (Some(cfg), Some(img)) if f > 1 => {
                Some(frame_similarity_for(&tracker, img, last_detected_image.as_ref(), cfg))
            }
            _ => None,
        };
        let since = if f == 1 { 0 } else { f - last_detect };
        let decision = decide(policy, f, since, similarity);
        let decided = Instant::now();

        let outputs = match decision.action {
            Action::Detect => {
                let dets = detections.detect(f)?;
                run.detector_calls += 1;
                let out = tracker.step_with_detections(&dets, image.as_ref(), f == 1);
                last_detect = f;
                if sim_config.is_some_and(|c| c.scope == SimilarityScope::WholeFrame) {
                    last_detected_image = image;
                }
                out
            }
            Action::Skip => tracker.step_skipped(box_source),
        };
        let finished = Instant::now();

        match &profile {
            Some(p) => run.ledger.accumulate(&decision, p),
            None => {
                let decision_s = (decided - started).as_secs_f64();
                let stage_s = (finished - decided).as_secs_f64();
                if decision.action == Action::Detect {
                    detect_seconds += stage_s;
                }
                let mean_detect = if run.detector_calls > 0 {
                    detect_seconds / run.detector_calls as f64
                } else {
                    stage_s
                };
                run.ledger.record(decision.action, decision_s + stage_s, mean_detect);
            }
        }

        let mut frame_rows: Vec<ResultRow> = outputs
            .into_iter()
            .map(|o| ResultRow {
                frame: f,
                id: o.id,
                bbox: o.bbox,
            })
            .collect();
        frame_rows.sort_by_key(|r| r.id);
        run.rows.extend(frame_rows);
        run.decisions.push(decision);
    }

    if profile.is_none() && run.detector_calls > 0 {
        // Re-base the measured baseline on the final mean detection time.
        run.ledger.baseline_time = run.ledger.n_frames as f64 * detect_seconds / run.detector_calls as f64;
    }
    Ok(run)
}

pub const DECISION_LOG_HEADER: &str = "frame,action,reason,similarity,frames_since_detection";

pub fn format_decision_log(decisions: &[SkipDecision]) -> String {
    let mut out = String::from(DECISION_LOG_HEADER);
    out.push('\n');
    for d in decisions {
        let sim = d.similarity_score.map(|s| format!("{s:.6}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            d.frame_index,
            d.action,
            d.reason.as_str(),
            sim,
            d.frames_since_detection
        );
    }
    out
}

pub fn parse_decision_log(text: &str, path: &std::path::Path) -> Result<Vec<SkipDecision>> {
    let malformed = |line: usize, reason: String| Error::MalformedLine {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (i == 0 && line.starts_with("frame")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(malformed(i + 1, format!("expected 5 fields, found {}", fields.len())));
        }
        let frame_index = fields[0]
            .parse()
            .map_err(|e| malformed(i + 1, format!("frame: {e}")))?;
        let action = match fields[1] {
            "detect" => Action::Detect,
            "skip" => Action::Skip,
            other => return Err(malformed(i + 1, format!("unknown action {other:?}"))),
        };
        let reason = fields[2].parse().map_err(|e| malformed(i + 1, e))?;
        let similarity_score = if fields[3].is_empty() {
            None
        } else {
            Some(
                fields[3]
                    .parse()
                    .map_err(|e| malformed(i + 1, format!("similarity: {e}")))?,
            )
        };
        let frames_since_detection = fields[4]
            .parse()
            .map_err(|e| malformed(i + 1, format!("frames_since_detection: {e}")))?;
        out.push(SkipDecision {
            frame_index,
            action,
            similarity_score,
            reason,
            frames_since_detection,
        });
    }
    Ok(out)
}
