#![allow(dead_code)]

pub mod reference;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skiptrack::metrics::FrameBoxes;
use skiptrack::BoundingBox;

/// A small random tracking instance: linear GT tracks and a perturbed copy
/// with misses, jitter, identity swaps and false positives.
pub fn random_instance(seed: u64, max_objects: usize, max_frames: usize) -> (FrameBoxes, FrameBoxes) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = rng.random_range(1..=max_frames);
    let objects = rng.random_range(1..=max_objects);
    let mut gt: FrameBoxes = BTreeMap::new();
    let mut pred: FrameBoxes = BTreeMap::new();
    // Predicted id per GT object, possibly reassigned mid-way.
    let mut pred_ids: Vec<u64> = (0..objects as u64).map(|i| 10 + i).collect();
    let tracks: Vec<(usize, usize, f64, f64, f64, f64, f64, f64)> = (0..objects)
        .map(|_| {
            let a = rng.random_range(1..=frames);
            let b = rng.random_range(a..=frames);
            (
                a,
                b,
                rng.random_range(0.0..60.0),
                rng.random_range(0.0..60.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(8.0..20.0),
                rng.random_range(12.0..30.0),
            )
        })
        .collect();
    let jitter = rng.random_range(0.0..4.0);
    for f in 1..=frames {
        if objects >= 2 && rng.random::<f64>() < 0.1 {
            let i = rng.random_range(0..objects);
            let j = rng.random_range(0..objects);
            pred_ids.swap(i, j);
        }
        if rng.random::<f64>() < 0.05 {
            let i = rng.random_range(0..objects);
            pred_ids[i] = 100 + f as u64;
        }
        for (k, &(a, b, x, y, vx, vy, w, h)) in tracks.iter().enumerate() {
            if f < a || f > b {
                continue;
            }
            let t = (f - a) as f64;
            let bx = BoundingBox::new(x + vx * t, y + vy * t, w, h);
            gt.entry(f).or_default().push((k as u64 + 1, bx));
            if rng.random::<f64>() < 0.15 {
                continue;
            }
            let mut j = || rng.random_range(-jitter..=jitter);
            let pb = BoundingBox::new(bx.left + j(), bx.top + j(), (w + j()).max(1.0), (h + j()).max(1.0));
            pred.entry(f).or_default().push((pred_ids[k], pb));
        }
        if rng.random::<f64>() < 0.2 {
            let fp = BoundingBox::new(rng.random_range(0.0..80.0), rng.random_range(0.0..80.0), 12.0, 20.0);
            pred.entry(f).or_default().push((50 + rng.random_range(0..3), fp));
        }
    }
    // A predicted id may appear at most once per frame.
    for boxes in pred.values_mut() {
        let mut seen = std::collections::BTreeSet::new();
        boxes.retain(|(id, _)| seen.insert(*id));
    }
    (gt, pred)
}
