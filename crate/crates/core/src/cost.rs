//! Latency accounting for a run: simulated per-stage costs charged per
//! decision, or measured wall-clock timings.
//!
//! A detected frame costs `t_detection + t_decision`; a skipped frame costs
//! `t_decision + t_estimation`. The baseline is a plain detector run,
//! `n_frames * t_detection`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheduler::{Action, SkipDecision};

/// Average seconds per frame spent in each stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    pub t_detection: f64,
    pub t_decision: f64,
    pub t_estimation: f64,
}

impl CostProfile {
    /// Stage timings measured for FairMOT on MOT-17.
    pub const MOT17: CostProfile = CostProfile {
        t_detection: 0.248551353,
        t_decision: 0.026890381,
        t_estimation: 0.000341388,
    };

    /// Stage timings measured for FairMOT on MOT-15.
    pub const MOT15: CostProfile = CostProfile {
        t_detection: 0.246894905,
        t_decision: 0.011596515,
        t_estimation: 0.000252304,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.t_detection) && ok(self.t_decision) && ok(self.t_estimation) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("cost profile has negative or non-finite entries: {self:?}")))
        }
    }

    /// Same profile without the decision charge, for policies that never
    /// compute a similarity.
    pub fn without_decision(self) -> Self {
        Self {
            t_decision: 0.0,
            ..self
        }
    }

    pub fn frame_cost(&self, action: Action) -> f64 {
        match action {
            Action::Detect => self.t_detection + self.t_decision,
            Action::Skip => self.t_decision + self.t_estimation,
        }
    }
}

impl Default for CostProfile {
    fn default() -> Self {
        Self::MOT17
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostLedger {
    pub n_frames: usize,
    pub n_detected: usize,
    pub n_skipped: usize,
    /// Seconds charged to the policy run.
    pub total_time: f64,
    /// Seconds a detect-every-frame run would take.
    pub baseline_time: f64,
}

impl CostLedger {
    pub fn accumulate(&mut self, decision: &SkipDecision, profile: &CostProfile) {
        self.record(decision.action, profile.frame_cost(decision.action), profile.t_detection);
    }

    /// Records one frame with an explicit charge; `detection_cost` is the
    /// per-frame baseline cost used for the no-skip reference.
    pub fn record(&mut self, action: Action, charged: f64, detection_cost: f64) {
        self.n_frames += 1;
        match action {
            Action::Detect => self.n_detected += 1,
            Action::Skip => self.n_skipped += 1,
        }
        self.total_time += charged;
        self.baseline_time += detection_cost;
    }

    pub fn from_decisions<'a>(decisions: impl IntoIterator<Item = &'a SkipDecision>, profile: &CostProfile) -> Self {
        let mut ledger = Self::default();
        for d in decisions {
            ledger.accumulate(d, profile);
        }
        ledger
    }

    pub fn merge(&mut self, other: &CostLedger) {
        self.n_frames += other.n_frames;
        self.n_detected += other.n_detected;
        self.n_skipped += other.n_skipped;
        self.total_time += other.total_time;
        self.baseline_time += other.baseline_time;
    }

    /// `t_total_policy / t_total_noskip`; NaN for an empty ledger.
    pub fn speedup_vs_noskip(&self) -> f64 {
        if self.baseline_time > 0.0 {
            self.total_time / self.baseline_time
        } else {
            f64::NAN
        }
    }

    pub fn skip_fraction(&self) -> f64 {
        if self.n_frames == 0 {
            0.0
        } else {
            self.n_skipped as f64 / self.n_frames as f64
        }
    }
}

/// Ratio of the ledger total to `n_frames * t_detection`.
pub fn speedup(ledger: &CostLedger, profile: &CostProfile) -> f64 {
    ledger.total_time / (ledger.n_frames as f64 * profile.t_detection)
}

pub const LEDGER_HEADER: &str = "sequence,n_frames,n_detected,n_skipped,total_time_s,speedup";

pub fn ledger_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a CostLedger)>) -> String {
    let mut out = String::from(LEDGER_HEADER);
    out.push('\n');
    for (name, l) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.9},{:.6}",
            name,
            l.n_frames,
            l.n_detected,
            l.n_skipped,
            l.total_time,
            l.speedup_vs_noskip()
        );
    }
    out
}
