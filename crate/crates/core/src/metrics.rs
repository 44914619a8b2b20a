//! Tracking accuracy metrics: CLEAR (MOTA, MOTP, IDSW), identity metrics
//! (IDP, IDR, IDF1) and HOTA with its DetA / AssA / LocA decomposition.
//!
//! Every report keeps its raw counts so reports from several sequences can
//! be pooled by summing counts rather than averaging percentages.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::assignment::minimize;
use crate::types::{iou, BoundingBox};

/// `frame -> [(id, box)]`.
pub type FrameBoxes = BTreeMap<usize, Vec<(u64, BoundingBox)>>;

const EPS: f64 = f64::EPSILON;
/// Bonus that makes an existing GT/prediction pairing win over any IoU gain.
const CONTINUITY_BONUS: f64 = 1000.0;

pub fn alphas() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// IoU needed for a CLEAR / identity match.
    pub iou_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.5 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameMatch {
    pub frame: usize,
    /// `(gt id, predicted id, IoU)`.
    pub matches: Vec<(u64, u64, f64)>,
    pub unmatched_gt: Vec<u64>,
    pub unmatched_pred: Vec<u64>,
}

fn all_frames(gt: &FrameBoxes, pred: &FrameBoxes) -> BTreeSet<usize> {
    gt.keys().chain(pred.keys()).copied().collect()
}

fn iou_matrix(g: &[(u64, BoundingBox)], p: &[(u64, BoundingBox)]) -> Vec<Vec<f64>> {
    g.iter()
        .map(|(_, gb)| p.iter().map(|(_, pb)| iou(gb, pb)).collect())
        .collect()
}

/// Best-total-score matching; only pairs with positive score are returned.
fn maximize(scores: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let neg: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
    minimize(&neg)
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect()
}

/// Per-frame CLEAR matching at `iou_threshold`. A pairing that was matched
/// on the previous frame is kept whenever it still clears the threshold;
/// remaining pairs maximize total IoU.
pub fn match_frames(gt: &FrameBoxes, pred: &FrameBoxes, iou_threshold: f64) -> Vec<FrameMatch> {
    let empty = Vec::new();
    let mut prev_pairing: BTreeMap<u64, u64> = BTreeMap::new();
    let mut out = Vec::new();
    for frame in all_frames(gt, pred) {
        let g = gt.get(&frame).unwrap_or(&empty);
        let p = pred.get(&frame).unwrap_or(&empty);
        let sim = iou_matrix(g, p);
        let scores: Vec<Vec<f64>> = g
            .iter()
            .enumerate()
            .map(|(i, (gid, _))| {
                p.iter()
                    .enumerate()
                    .map(|(j, (pid, _))| {
                        if sim[i][j] < iou_threshold - EPS {
                            0.0
                        } else if prev_pairing.get(gid) == Some(pid) {
                            CONTINUITY_BONUS + sim[i][j]
                        } else {
                            sim[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let mut fm = FrameMatch {
            frame,
            ..Default::default()
        };
        let mut gt_used = vec![false; g.len()];
        let mut pr_used = vec![false; p.len()];
        for (i, j) in maximize(&scores) {
            if scores[i][j] > EPS {
                gt_used[i] = true;
                pr_used[j] = true;
                fm.matches.push((g[i].0, p[j].0, sim[i][j]));
            }
        }
        fm.unmatched_gt = g.iter().zip(&gt_used).filter(|(_, &u)| !u).map(|(x, _)| x.0).collect();
        fm.unmatched_pred = p.iter().zip(&pr_used).filter(|(_, &u)| !u).map(|(x, _)| x.0).collect();
        prev_pairing = fm.matches.iter().map(|&(gi, pi, _)| (gi, pi)).collect();
        out.push(fm);
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClearCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
    pub gt: usize,
    pub iou_sum: f64,
}

impl ClearCounts {
    /// `None` when there is no ground truth.
    pub fn mota(&self) -> Option<f64> {
        (self.gt > 0).then(|| 1.0 - (self.fn_ + self.fp + self.idsw) as f64 / self.gt as f64)
    }

    pub fn motp(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.iou_sum / self.tp as f64
        }
    }

    fn add(&mut self, o: &ClearCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.idsw += o.idsw;
        self.gt += o.gt;
        self.iou_sum += o.iou_sum;
    }
}

/// An identity switch is a matched GT whose predicted id differs from the
/// one it was last matched to (gaps in between do not reset it).
pub fn clear_metrics(matches: &[FrameMatch]) -> ClearCounts {
    let mut c = ClearCounts::default();
    let mut last_id: BTreeMap<u64, u64> = BTreeMap::new();
    for fm in matches {
        c.tp += fm.matches.len();
        c.fn_ += fm.unmatched_gt.len();
        c.fp += fm.unmatched_pred.len();
        c.gt += fm.matches.len() + fm.unmatched_gt.len();
        for &(g, p, s) in &fm.matches {
            c.iou_sum += s;
            if let Some(prev) = last_id.insert(g, p) {
                if prev != p {
                    c.idsw += 1;
                }
            }
        }
    }
    c
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentityCounts {
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

impl IdentityCounts {
    pub fn idp(&self) -> f64 {
        ratio(self.idtp, self.idtp + self.idfp)
    }

    pub fn idr(&self) -> f64 {
        ratio(self.idtp, self.idtp + self.idfn)
    }

    pub fn idf1(&self) -> f64 {
        ratio(2 * self.idtp, 2 * self.idtp + self.idfp + self.idfn)
    }

    fn add(&mut self, o: &IdentityCounts) {
        self.idtp += o.idtp;
        self.idfp += o.idfp;
        self.idfn += o.idfn;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn dense_ids(boxes: &FrameBoxes) -> BTreeMap<u64, usize> {
    let ids: BTreeSet<u64> = boxes.values().flatten().map(|(id, _)| *id).collect();
    ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
}

/// Global one-to-one trajectory matching maximizing the number of frames in
/// which the paired trajectories overlap at `iou_threshold`.
pub fn id_metrics(gt: &FrameBoxes, pred: &FrameBoxes, iou_threshold: f64) -> IdentityCounts {
    let gids = dense_ids(gt);
    let pids = dense_ids(pred);
    let total_gt: usize = gt.values().map(Vec::len).sum();
    let total_pred: usize = pred.values().map(Vec::len).sum();
    let mut overlap = vec![vec![0.0; pids.len()]; gids.len()];
    let empty = Vec::new();
    for frame in all_frames(gt, pred) {
        let g = gt.get(&frame).unwrap_or(&empty);
        let p = pred.get(&frame).unwrap_or(&empty);
        for (gid, gb) in g {
            for (pid, pb) in p {
                if iou(gb, pb) >= iou_threshold - EPS {
                    overlap[gids[gid]][pids[pid]] += 1.0;
                }
            }
        }
    }
    let idtp: usize = maximize(&overlap)
        .into_iter()
        .map(|(i, j)| overlap[i][j] as usize)
        .sum();
    IdentityCounts {
        idtp,
        idfp: total_pred - idtp,
        idfn: total_gt - idtp,
    }
}

/// Raw HOTA sums at one localization threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    /// Sum of Ass-IoU over true positives.
    pub ass_sum: f64,
    /// Sum of Loc-IoU over true positives.
    pub loc_sum: f64,
}

impl AlphaRow {
    pub fn deta(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_ + self.fp)
    }

    pub fn assa(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.ass_sum / self.tp as f64
        }
    }

    pub fn loca(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.loc_sum / self.tp as f64
        }
    }

    pub fn hota(&self) -> f64 {
        (self.deta() * self.assa()).sqrt()
    }

    fn add(&mut self, o: &AlphaRow) {
        self.tp += o.tp;
        self.fn_ += o.fn_;
        self.fp += o.fp;
        self.ass_sum += o.ass_sum;
        self.loc_sum += o.loc_sum;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotaTable {
    pub rows: Vec<AlphaRow>,
}

impl HotaTable {
    fn empty() -> Self {
        Self {
            rows: alphas()
                .into_iter()
                .map(|alpha| AlphaRow {
                    alpha,
                    ..Default::default()
                })
                .collect(),
        }
    }

    fn mean(&self, f: impl Fn(&AlphaRow) -> f64) -> f64 {
        self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64
    }

    pub fn hota(&self) -> f64 {
        self.mean(AlphaRow::hota)
    }

    pub fn deta(&self) -> f64 {
        self.mean(AlphaRow::deta)
    }

    pub fn assa(&self) -> f64 {
        self.mean(AlphaRow::assa)
    }

    /// Mean Loc-IoU over the thresholds that have true positives.
    pub fn loca(&self) -> f64 {
        let scored: Vec<f64> = self.rows.iter().filter(|r| r.tp > 0).map(AlphaRow::loca).collect();
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().sum::<f64>() / scored.len() as f64
        }
    }

    fn add(&mut self, o: &HotaTable) {
        for (a, b) in self.rows.iter_mut().zip(&o.rows) {
            a.add(b);
        }
    }
}

/// HOTA over the 19 thresholds `0.05, 0.10, ..., 0.95`.
///
/// Per frame, detections are matched once by a Hungarian assignment on
/// `IoU * global alignment`, where the alignment of a (gt, pred) id pair is
/// its soft trajectory-level Jaccard overlap. Each threshold then keeps the
/// matched pairs with IoU at or above it.
pub fn hota(gt: &FrameBoxes, pred: &FrameBoxes) -> HotaTable {
    let gids = dense_ids(gt);
    let pids = dense_ids(pred);
    let (ng, np) = (gids.len(), pids.len());
    let empty = Vec::new();
    let frames = all_frames(gt, pred);

    let mut potential = vec![vec![0.0; np]; ng];
    let mut gt_count = vec![0.0; ng];
    let mut pr_count = vec![0.0; np];
    for &frame in &frames {
        let g = gt.get(&frame).unwrap_or(&empty);
        let p = pred.get(&frame).unwrap_or(&empty);
        let sim = iou_matrix(g, p);
        let row_sum: Vec<f64> = sim.iter().map(|r| r.iter().sum()).collect();
        let col_sum: Vec<f64> = (0..p.len()).map(|j| sim.iter().map(|r| r[j]).sum()).collect();
        for (i, (gid, _)) in g.iter().enumerate() {
            for (j, (pid, _)) in p.iter().enumerate() {
                let denom = row_sum[i] + col_sum[j] - sim[i][j];
                if denom > EPS {
                    potential[gids[gid]][pids[pid]] += sim[i][j] / denom;
                }
            }
        }
        for (gid, _) in g {
            gt_count[gids[gid]] += 1.0;
        }
        for (pid, _) in p {
            pr_count[pids[pid]] += 1.0;
        }
    }
    let alignment: Vec<Vec<f64>> = (0..ng)
        .map(|i| {
            (0..np)
                .map(|j| potential[i][j] / (gt_count[i] + pr_count[j] - potential[i][j]))
                .collect()
        })
        .collect();

    let mut table = HotaTable::empty();
    let mut match_counts = vec![vec![vec![0.0; np]; ng]; table.rows.len()];
    for &frame in &frames {
        let g = gt.get(&frame).unwrap_or(&empty);
        let p = pred.get(&frame).unwrap_or(&empty);
        if g.is_empty() || p.is_empty() {
            for row in &mut table.rows {
                row.fn_ += g.len();
                row.fp += p.len();
            }
            continue;
        }
        let sim = iou_matrix(g, p);
        let scores: Vec<Vec<f64>> = g
            .iter()
            .enumerate()
            .map(|(i, (gid, _))| {
                p.iter()
                    .enumerate()
                    .map(|(j, (pid, _))| alignment[gids[gid]][pids[pid]] * sim[i][j])
                    .collect()
            })
            .collect();
        let pairs = maximize(&scores);
        for (a, row) in table.rows.iter_mut().enumerate() {
            let mut matched = 0;
            for &(i, j) in &pairs {
                if sim[i][j] >= row.alpha - EPS {
                    matched += 1;
                    row.loc_sum += sim[i][j];
                    match_counts[a][gids[&g[i].0]][pids[&p[j].0]] += 1.0;
                }
            }
            row.tp += matched;
            row.fn_ += g.len() - matched;
            row.fp += p.len() - matched;
        }
    }

    for (a, row) in table.rows.iter_mut().enumerate() {
        let mc = &match_counts[a];
        let mut ass_sum = 0.0;
        for i in 0..ng {
            for j in 0..np {
                let m = mc[i][j];
                if m > 0.0 {
                    ass_sum += m * m / (gt_count[i] + pr_count[j] - m);
                }
            }
        }
        row.ass_sum = ass_sum;
    }
    table
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sequence: String,
    pub mota: Option<f64>,
    pub motp: f64,
    /// `1 - MOTP`, the distance-style presentation.
    pub motp_distance: f64,
    pub idsw: usize,
    pub idf1: f64,
    pub idp: f64,
    pub idr: f64,
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub loca: f64,
    pub clear: ClearCounts,
    pub identity: IdentityCounts,
    pub alpha_table: HotaTable,
    pub frames: usize,
    pub frames_skipped: usize,
}

impl MetricsReport {
    pub fn from_parts(
        sequence: impl Into<String>,
        clear: ClearCounts,
        identity: IdentityCounts,
        alpha_table: HotaTable,
        frames: usize,
        frames_skipped: usize,
    ) -> Self {
        let motp = clear.motp();
        Self {
            sequence: sequence.into(),
            mota: clear.mota(),
            motp,
            motp_distance: 1.0 - motp,
            idsw: clear.idsw,
            idf1: identity.idf1(),
            idp: identity.idp(),
            idr: identity.idr(),
            hota: alpha_table.hota(),
            deta: alpha_table.deta(),
            assa: alpha_table.assa(),
            loca: alpha_table.loca(),
            clear,
            identity,
            alpha_table,
            frames,
            frames_skipped,
        }
    }

    pub fn skip_pct(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            100.0 * self.frames_skipped as f64 / self.frames as f64
        }
    }

    /// Skip statistic in the `"#Frames Skipped : %"` style, e.g. `2077 : 37.8%`.
    pub fn frames_skipped_label(&self) -> String {
        format!("{} : {:.1}%", self.frames_skipped, self.skip_pct())
    }

    /// Pools raw counts of several reports into one.
    pub fn pooled(name: impl Into<String>, reports: &[MetricsReport]) -> Self {
        let mut clear = ClearCounts::default();
        let mut identity = IdentityCounts::default();
        let mut table = HotaTable::empty();
        let (mut frames, mut skipped) = (0, 0);
        for r in reports {
            clear.add(&r.clear);
            identity.add(&r.identity);
            table.add(&r.alpha_table);
            frames += r.frames;
            skipped += r.frames_skipped;
        }
        Self::from_parts(name, clear, identity, table, frames, skipped)
    }
}

/// Full evaluation of one sequence.
pub fn evaluate(
    sequence: &str,
    gt: &FrameBoxes,
    pred: &FrameBoxes,
    config: &EvalConfig,
    frames: usize,
    frames_skipped: usize,
) -> MetricsReport {
    let clear = clear_metrics(&match_frames(gt, pred, config.iou_threshold));
    let identity = id_metrics(gt, pred, config.iou_threshold);
    let table = hota(gt, pred);
    MetricsReport::from_parts(sequence, clear, identity, table, frames, frames_skipped)
}

pub const METRICS_COLUMNS: [&str; 12] = [
    "MOTA",
    "MOTP",
    "IDF1",
    "IDP",
    "IDR",
    "IDSW",
    "HOTA",
    "DetA",
    "AssA",
    "LocA",
    "FramesSkipped",
    "SkipPct",
];

/// CSV with a `sequence` column, the fixed metric columns (fractions, not
/// percentages) and a trailing `MOTPDistance` column.
pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut out = format!("sequence,{},MOTPDistance\n", METRICS_COLUMNS.join(","));
    for r in reports {
        let mota = r.mota.map(|m| format!("{m:.6}")).unwrap_or_else(|| "nan".into());
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6},{},{:.2},{:.6}",
            r.sequence,
            mota,
            r.motp,
            r.idf1,
            r.idp,
            r.idr,
            r.idsw,
            r.hota,
            r.deta,
            r.assa,
            r.loca,
            r.frames_skipped,
            r.skip_pct(),
            r.motp_distance
        );
    }
    out
}

/// Human-readable table in percent, one row per report.
pub struct MetricsTable<'a>(pub &'a [MetricsReport]);

impl fmt::Display for MetricsTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.0.iter().map(|r| r.sequence.len()).max().unwrap_or(8).max(8);
        writeln!(
            f,
            "{:<width$} {:>7} {:>7} {:>7} {:>6} {:>7} {:>7} {:>7} {:>7} {:>18}",
            "Sequence", "MOTA", "MOTP", "IDF1", "IDSW", "DetA", "AssA", "LocA", "HOTA", "#Frames Skipped : %"
        )?;
        for r in self.0 {
            let mota = r.mota.map(|m| format!("{:.1}", 100.0 * m)).unwrap_or_else(|| "n/a".into());
            writeln!(
                f,
                "{:<width$} {:>7} {:>7.3} {:>6.1}% {:>6} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>18}",
                r.sequence,
                mota,
                100.0 * r.motp,
                100.0 * r.idf1,
                r.idsw,
                100.0 * r.deta,
                100.0 * r.assa,
                100.0 * r.loca,
                100.0 * r.hota,
                r.frames_skipped_label()
            )?;
        }
        Ok(())
    }
}
