//! IoU-based tracking-by-detection: per-frame Kalman prediction, gated
//! Hungarian association and the track lifecycle.

use serde::{Deserialize, Serialize};

use crate::assignment::{solve_assignment, AssignmentResult};
use crate::error::{Error, Result};
use crate::kalman::{KalmanFilter, KalmanParams};
use crate::types::{crop, iou, BoundingBox, Detection, GrayImage, Track, TrackState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Minimum IoU between a predicted track box and a detection to match.
    pub iou_gate: f64,
    /// A lost track is removed once it has gone this many frames unmatched.
    pub max_lost_frames: usize,
    pub min_confidence: f64,
    /// Matches a new track needs before its boxes are emitted.
    pub tentative_confirm_frames: usize,
    pub kalman: KalmanParams,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_gate: 0.3,
            max_lost_frames: 30,
            min_confidence: 0.4,
            tentative_confirm_frames: 2,
            kalman: KalmanParams::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_gate) {
            return Err(Error::InvalidConfig(format!("iou_gate {} not in [0, 1]", self.iou_gate)));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::InvalidConfig(format!(
                "min_confidence {} not in [0, 1]",
                self.min_confidence
            )));
        }
        if self.tentative_confirm_frames == 0 {
            return Err(Error::InvalidConfig("tentative_confirm_frames must be >= 1".into()));
        }
        let k = &self.kalman;
        if !(k.std_weight_position > 0.0 && k.std_weight_velocity > 0.0) {
            return Err(Error::InvalidConfig("Kalman noise weights must be positive".into()));
        }
        Ok(())
    }

    /// Matching gate expressed on the `1 - IoU` cost scale.
    pub fn cost_gate(&self) -> f64 {
        1.0 - self.iou_gate
    }
}

/// Where boxes for a skipped frame come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipBoxSource {
    /// Repeat the last detected box.
    Reuse,
    /// Emit the Kalman prediction.
    #[default]
    Kalman,
}

/// `1 - IoU` between each track's current predicted box and each detection.
pub fn cost_matrix(tracks: &[Track], detections: &[Detection]) -> Vec<Vec<f64>> {
    tracks
        .iter()
        .map(|t| {
            let pred = t.predicted_box();
            detections.iter().map(|d| 1.0 - iou(&pred, &d.bbox)).collect()
        })
        .collect()
}

/// A box emitted for the current frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub id: u64,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    kf: KalmanFilter,
    tracks: Vec<Track>,
    next_id: u64,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        let kf = KalmanFilter::new(config.kalman);
        Self {
            config,
            kf,
            tracks: Vec::new(),
            next_id: 1,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Live (not removed) tracks.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn active_tracks(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.state == TrackState::Active)
    }

    /// Number of identities handed out so far.
    pub fn ids_created(&self) -> u64 {
        self.next_id - 1
    }

    /// Advances every live track by one frame. Call exactly once per frame,
    /// before either step function.
    pub fn predict(&mut self) {
        for t in &mut self.tracks {
            if t.state != TrackState::Active {
                // Unobserved tracks keep their size.
                t.kalman.mean[7] = 0.0;
            }
            t.kalman = self.kf.predict(&t.kalman);
            if t.kalman.mean[3] < 1.0 {
                t.kalman.mean[3] = 1.0;
                t.kalman.mean[7] = 0.0;
            }
            t.total_age += 1;
        }
    }

    /// Detections that pass the confidence floor and have positive area.
    pub fn usable_detections(&self, detections: &[Detection]) -> Vec<Detection> {
        detections
            .iter()
            .filter(|d| d.confidence >= self.config.min_confidence && d.bbox.is_valid() && d.bbox.area() > 0.0)
            .copied()
            .collect()
    }

    pub fn associate(&self, detections: &[Detection]) -> AssignmentResult {
        solve_assignment(&cost_matrix(&self.tracks, detections), detections.len(), self.config.cost_gate())
    }

    /// Detection-frame update: associate, correct matched filters, age
    /// unmatched tracks, spawn new ones. `frame` is used to capture template
    /// crops for later similarity checks. When `activate_new` is set, new
    /// tracks start Active (used on the very first frame).
    pub fn step_with_detections(
        &mut self,
        detections: &[Detection],
        frame: Option<&GrayImage>,
        activate_new: bool,
    ) -> Vec<TrackOutput> {
        let detections = self.usable_detections(detections);
        let assignment = self.associate(&detections);
        let mut matched = vec![false; self.tracks.len()];

        for &(ti, di) in &assignment.matches {
            let det = &detections[di];
            let t = &mut self.tracks[ti];
            t.kalman = self
                .kf
                .update(&t.kalman, &det.bbox)
                .expect("usable detections have positive area");
            t.last_box = det.bbox;
            t.frames_since_detection = 0;
            t.hits += 1;
            t.template = frame.and_then(|f| crop(f, &det.bbox).ok());
            match t.state {
                TrackState::Tentative if t.hits >= self.config.tentative_confirm_frames => {
                    t.set_state(TrackState::Active)
                }
                TrackState::Lost => t.set_state(TrackState::Active),
                _ => {}
            }
            matched[ti] = true;
        }

        for ti in assignment.unmatched_rows {
            let t = &mut self.tracks[ti];
            t.frames_since_detection += 1;
            match t.state {
                TrackState::Tentative => t.set_state(TrackState::Removed),
                TrackState::Active => t.set_state(TrackState::Lost),
                _ => {}
            }
            if t.state == TrackState::Lost && t.frames_since_detection > self.config.max_lost_frames {
                t.set_state(TrackState::Removed);
            }
        }

        let mut outputs: Vec<TrackOutput> = self
            .tracks
            .iter()
            .zip(&matched)
            .filter(|(t, &m)| m && t.state == TrackState::Active)
            .map(|(t, _)| TrackOutput {
                id: t.id,
                bbox: t.last_box,
            })
            .collect();

        for di in assignment.unmatched_cols {
            let det = &detections[di];
            let state = if activate_new || self.config.tentative_confirm_frames <= 1 {
                TrackState::Active
            } else {
                TrackState::Tentative
            };
            let track = Track {
                id: self.next_id,
                state,
                kalman: self.kf.init(&det.bbox).expect("usable detections have positive area"),
                last_box: det.bbox,
                template: frame.and_then(|f| crop(f, &det.bbox).ok()),
                frames_since_detection: 0,
                total_age: 1,
                hits: 1,
            };
            self.next_id += 1;
            if state == TrackState::Active {
                outputs.push(TrackOutput {
                    id: track.id,
                    bbox: track.last_box,
                });
            }
            self.tracks.push(track);
        }

        self.tracks.retain(|t| t.state != TrackState::Removed);
        outputs
    }

    /// Skipped-frame update: no filter correction, no new tracks, no
    /// lifecycle changes. Active tracks emit their box from `source`.
    pub fn step_skipped(&mut self, source: SkipBoxSource) -> Vec<TrackOutput> {
        let mut outputs = Vec::new();
        for t in &mut self.tracks {
            t.frames_since_detection += 1;
            if t.state == TrackState::Active {
                let bbox = match source {
                    SkipBoxSource::Kalman => t.predicted_box(),
                    SkipBoxSource::Reuse => t.last_box,
                };
                outputs.push(TrackOutput { id: t.id, bbox });
            }
        }
        outputs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(frame: usize, l: f64, t: f64, w: f64, h: f64) -> Detection {
        Detection::new(frame, BoundingBox::new(l, t, w, h), 0.9)
    }

    #[test]
    fn cold_start_spawns_tentative_tracks() {
        let mut tr = Tracker::new(TrackerConfig::default());
        tr.predict();
        let out = tr.step_with_detections(
            &[det(2, 0.0, 0.0, 10.0, 20.0), det(2, 50.0, 0.0, 10.0, 20.0), det(2, 100.0, 0.0, 10.0, 20.0)],
            None,
            false,
        );
        assert!(out.is_empty());
        let ids: Vec<u64> = tr.tracks().iter().map(|t| t.id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        assert!(tr.tracks().iter().all(|t| t.state == TrackState::Tentative));

        tr.predict();
        let out = tr.step_with_detections(
            &[det(3, 0.0, 0.0, 10.0, 20.0), det(3, 50.0, 0.0, 10.0, 20.0), det(3, 100.0, 0.0, 10.0, 20.0)],
            None,
            false,
        );
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn low_confidence_is_filtered() {
        let mut tr = Tracker::new(TrackerConfig::default());
        let mut d = det(1, 0.0, 0.0, 10.0, 10.0);
        d.confidence = 0.2;
        tr.predict();
        tr.step_with_detections(&[d], None, true);
        assert!(tr.tracks().is_empty());
    }

    #[test]
    fn cost_matrix_matches_oracle() {
        let mut tr = Tracker::new(TrackerConfig::default());
        let boxes = [(0.0, 0.0, 10.0, 10.0), (30.0, 5.0, 12.0, 8.0), (3.0, 4.0, 9.0, 14.0)];
        let d: Vec<Detection> = boxes.iter().map(|&(l, t, w, h)| det(1, l, t, w, h)).collect();
        tr.step_with_detections(&d, None, true);
        let probe = [(1.0, 1.0, 10.0, 10.0), (29.0, 4.0, 11.0, 9.0), (100.0, 4.0, 9.0, 14.0)];
        let pd: Vec<Detection> = probe.iter().map(|&(l, t, w, h)| det(2, l, t, w, h)).collect();
        let c = cost_matrix(tr.tracks(), &pd);
        for (i, b) in boxes.iter().enumerate() {
            for (j, p) in probe.iter().enumerate() {
                // independent area arithmetic
                let ix = ((b.0 + b.2).min(p.0 + p.2) - b.0.max(p.0)).max(0.0);
                let iy = ((b.1 + b.3).min(p.1 + p.3) - b.1.max(p.1)).max(0.0);
                let inter = ix * iy;
                let expected = 1.0 - inter / (b.2 * b.3 + p.2 * p.3 - inter);
                assert!((c[i][j] - expected).abs() < 1e-9);
            }
        }
        assert_eq!(c[0][2], 1.0);
    }

    #[test]
    fn unmatched_track_removed_after_max_lost() {
        let cfg = TrackerConfig {
            max_lost_frames: 3,
            ..Default::default()
        };
        let mut tr = Tracker::new(cfg);
        tr.predict();
        tr.step_with_detections(&[det(1, 0.0, 0.0, 10.0, 20.0)], None, true);
        for f in 0..3 {
            tr.predict();
            tr.step_with_detections(&[], None, false);
            assert_eq!(tr.tracks().len(), 1, "frame {f}");
            assert_eq!(tr.tracks()[0].state, TrackState::Lost);
        }
        tr.predict();
        tr.step_with_detections(&[], None, false);
        assert!(tr.tracks().is_empty());
    }

    #[test]
    fn lost_track_reactivates_with_same_id() {
        let mut tr = Tracker::new(TrackerConfig::default());
        let at = |f: usize| det(f, 10.0 + 3.0 * f as f64, 40.0, 20.0, 40.0);
        for f in 1..=8 {
            tr.predict();
            tr.step_with_detections(&[at(f)], None, f == 1);
        }
        for _ in 9..=11 {
            tr.predict();
            tr.step_with_detections(&[], None, false);
        }
        tr.predict();
        let out = tr.step_with_detections(&[at(12)], None, false);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, 1);
        assert_eq!(tr.ids_created(), 1);
    }

    #[test]
    fn skipped_frames_follow_the_motion_line() {
        let mut tr = Tracker::new(TrackerConfig::default());
        let vx = 2.0;
        let at = |f: usize| BoundingBox::new(10.0 + vx * f as f64, 40.0, 20.0, 40.0);
        for f in 1..=40 {
            tr.predict();
            tr.step_with_detections(&[Detection::new(f, at(f), 1.0)], None, f == 1);
        }
        let (vel, _) = tr.tracks()[0].kalman.velocity();
        let left_40 = tr.tracks()[0].kalman.to_box().left;
        for f in 41..=43 {
            tr.predict();
            let out = tr.step_skipped(SkipBoxSource::Kalman);
            let expected_left = left_40 + vel * (f - 40) as f64;
            assert!((out[0].bbox.left - expected_left).abs() < 1e-6);
            assert!((out[0].bbox.left - at(f).left).abs() < 0.05);
        }
        assert_eq!(tr.tracks()[0].frames_since_detection, 3);

        tr.predict();
        let reuse = tr.step_skipped(SkipBoxSource::Reuse);
        assert_eq!(reuse[0].bbox, at(40));
    }

    #[test]
    fn skip_with_no_active_tracks_emits_nothing() {
        let mut tr = Tracker::new(TrackerConfig::default());
        tr.predict();
        assert!(tr.step_skipped(SkipBoxSource::Kalman).is_empty());
    }

    #[test]
    fn skip_does_not_touch_covariance_beyond_predict() {
        let mut tr = Tracker::new(TrackerConfig::default());
        tr.predict();
        tr.step_with_detections(&[det(1, 0.0, 0.0, 10.0, 20.0)], None, true);
        tr.predict();
        let before = tr.tracks()[0].kalman.clone();
        tr.step_skipped(SkipBoxSource::Kalman);
        assert_eq!(tr.tracks()[0].kalman, before);
    }
}
