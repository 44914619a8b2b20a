//! Slow, direct evaluator used as an oracle for the metrics module. Every
//! matching is found by exhaustive enumeration.

use std::collections::{BTreeMap, BTreeSet};

use skiptrack::metrics::FrameBoxes;
use skiptrack::BoundingBox;

const EPS: f64 = f64::EPSILON;

#[derive(Debug, Clone, Copy)]
pub struct Reference {
    pub mota: f64,
    pub motp: f64,
    pub idsw: usize,
    pub idf1: f64,
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub loca: f64,
}

fn overlap(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.left + a.width).min(b.left + b.width) - a.left.max(b.left);
    let h = (a.top + a.height).min(b.top + b.height) - a.top.max(b.top);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / (a.width * a.height + b.width * b.height - inter)
}

/// Highest-weight set of disjoint (row, col) pairs, by enumeration. Pairs
/// with weight <= 0 are never used.
fn best_matching(w: &[Vec<f64>]) -> Vec<(usize, usize)> {
    fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, best: &mut (f64, Vec<(usize, usize)>), acc: f64) {
        if row == w.len() {
            if acc > best.0 + 1e-12 {
                *best = (acc, cur.clone());
            }
            return;
        }
        go(w, row + 1, used, cur, best, acc);
        for c in 0..used.len() {
            if !used[c] && w[row][c] > 0.0 {
                used[c] = true;
                cur.push((row, c));
                go(w, row + 1, used, cur, best, acc + w[row][c]);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let cols = w.first().map_or(0, Vec::len);
    let mut best = (0.0, Vec::new());
    go(w, 0, &mut vec![false; cols], &mut Vec::new(), &mut best, 0.0);
    best.1
}

fn frames(gt: &FrameBoxes, pred: &FrameBoxes) -> BTreeSet<usize> {
    gt.keys().chain(pred.keys()).copied().collect()
}

pub fn evaluate(gt: &FrameBoxes, pred: &FrameBoxes, thr: f64) -> Reference {
    let empty = Vec::new();
    let all = frames(gt, pred);

    // CLEAR
    let (mut tp, mut fp, mut fn_, mut idsw, mut n_gt, mut iou_sum) = (0usize, 0usize, 0usize, 0usize, 0usize, 0.0);
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    let mut prev_pairs: BTreeSet<(u64, u64)> = BTreeSet::new();
    for &f in &all {
        let g = gt.get(&f).unwrap_or(&empty);
        let p = pred.get(&f).unwrap_or(&empty);
        let w: Vec<Vec<f64>> = g
            .iter()
            .map(|(gi, gb)| {
                p.iter()
                    .map(|(pi, pb)| {
                        let s = overlap(gb, pb);
                        if s < thr - EPS {
                            0.0
                        } else if prev_pairs.contains(&(*gi, *pi)) {
                            1000.0 + s
                        } else {
                            s
                        }
                    })
                    .collect()
            })
            .collect();
        let m = best_matching(&w);
        n_gt += g.len();
        tp += m.len();
        fn_ += g.len() - m.len();
        fp += p.len() - m.len();
        prev_pairs.clear();
        for &(i, j) in &m {
            let (gi, pi) = (g[i].0, p[j].0);
            iou_sum += overlap(&g[i].1, &p[j].1);
            if last.get(&gi).is_some_and(|&q| q != pi) {
                idsw += 1;
            }
            last.insert(gi, pi);
            prev_pairs.insert((gi, pi));
        }
    }
    let mota = 1.0 - (fn_ + fp + idsw) as f64 / n_gt as f64;
    let motp = if tp == 0 { 0.0 } else { iou_sum / tp as f64 };

    // Identity
    let gids: Vec<u64> = gt.values().flatten().map(|x| x.0).collect::<BTreeSet<_>>().into_iter().collect();
    let pids: Vec<u64> = pred.values().flatten().map(|x| x.0).collect::<BTreeSet<_>>().into_iter().collect();
    let mut together = vec![vec![0.0; pids.len()]; gids.len()];
    for &f in &all {
        for (gi, gb) in gt.get(&f).unwrap_or(&empty) {
            for (pi, pb) in pred.get(&f).unwrap_or(&empty) {
                if overlap(gb, pb) >= thr - EPS {
                    let a = gids.iter().position(|x| x == gi).unwrap();
                    let b = pids.iter().position(|x| x == pi).unwrap();
                    together[a][b] += 1.0;
                }
            }
        }
    }
    let idtp: f64 = best_matching(&together).iter().map(|&(a, b)| together[a][b]).sum();
    let total_gt: usize = gt.values().map(Vec::len).sum();
    let total_pred: usize = pred.values().map(Vec::len).sum();
    let idf1 = 2.0 * idtp / (total_gt + total_pred) as f64;

    // HOTA
    let count = |boxes: &FrameBoxes, id: u64| boxes.values().flatten().filter(|x| x.0 == id).count() as f64;
    let mut align: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    for &gi in &gids {
        for &pi in &pids {
            let mut soft = 0.0;
            for &f in &all {
                let g = gt.get(&f).unwrap_or(&empty);
                let p = pred.get(&f).unwrap_or(&empty);
                let (Some(gb), Some(pb)) = (g.iter().find(|x| x.0 == gi), p.iter().find(|x| x.0 == pi)) else {
                    continue;
                };
                let s = overlap(&gb.1, &pb.1);
                let row: f64 = p.iter().map(|x| overlap(&gb.1, &x.1)).sum();
                let col: f64 = g.iter().map(|x| overlap(&x.1, &pb.1)).sum();
                if row + col - s > EPS {
                    soft += s / (row + col - s);
                }
            }
            align.insert((gi, pi), soft / (count(gt, gi) + count(pred, pi) - soft));
        }
    }
    // Frame matchings are shared by all thresholds.
    let mut matched: Vec<(usize, u64, u64, f64)> = Vec::new();
    for &f in &all {
        let g = gt.get(&f).unwrap_or(&empty);
        let p = pred.get(&f).unwrap_or(&empty);
        let w: Vec<Vec<f64>> = g
            .iter()
            .map(|(gi, gb)| p.iter().map(|(pi, pb)| align[&(*gi, *pi)] * overlap(gb, pb)).collect())
            .collect();
        for (i, j) in best_matching(&w) {
            matched.push((f, g[i].0, p[j].0, overlap(&g[i].1, &p[j].1)));
        }
    }
    let (mut hs, mut ds, mut as_, mut ls) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 1..=19 {
        let alpha = i as f64 / 20.0;
        let tps: Vec<&(usize, u64, u64, f64)> = matched.iter().filter(|m| m.3 >= alpha - EPS).collect();
        let n_tp = tps.len() as f64;
        // TP + FN + FP = |gt| + |pred| - TP
        let denom = (total_gt + total_pred) as f64 - n_tp;
        let det = if denom > 0.0 { n_tp / denom } else { 0.0 };
        let ass = if tps.is_empty() {
            0.0
        } else {
            tps.iter()
                .map(|m| {
                    let tpa = tps.iter().filter(|o| o.1 == m.1 && o.2 == m.2).count() as f64;
                    tpa / (count(gt, m.1) + count(pred, m.2) - tpa)
                })
                .sum::<f64>()
                / n_tp
        };
        hs.push((det * ass).sqrt());
        ds.push(det);
        as_.push(ass);
        if !tps.is_empty() {
            ls.push(tps.iter().map(|m| m.3).sum::<f64>() / n_tp);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Reference {
        mota,
        motp,
        idsw,
        idf1,
        hota: hs.iter().sum::<f64>() / 19.0,
        deta: ds.iter().sum::<f64>() / 19.0,
        assa: as_.iter().sum::<f64>() / 19.0,
        loca: mean(&ls),
    }
}
