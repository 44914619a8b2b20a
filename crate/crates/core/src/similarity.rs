//! Low-cost image similarity measures used to decide whether a detector call
//! can be skipped: normalized cross-correlation, HOG cosine similarity, and
//! the smaller eigenvalue of the gray-level pair covariance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Ncc,
    Hog,
    Eigen,
}

/// How per-pair eigenvalues are combined into one frame score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenAggregation {
    #[default]
    Mean,
    Sum,
}

/// What gets compared on each frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityScope {
    /// Per-track template crop vs crop at the Kalman-predicted box.
    #[default]
    Crops,
    /// Last detected frame vs current frame.
    WholeFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HogParams {
    pub cell_size: usize,
    pub bins: usize,
    pub block_cells: usize,
    pub resize_width: usize,
    pub resize_height: usize,
}

impl Default for HogParams {
    fn default() -> Self {
        Self {
            cell_size: 8,
            bins: 9,
            block_cells: 2,
            resize_width: 64,
            resize_height: 128,
        }
    }
}

impl HogParams {
    pub fn cells(&self) -> (usize, usize) {
        (
            self.resize_width / self.cell_size,
            self.resize_height / self.cell_size,
        )
    }

    pub fn feature_len(&self) -> usize {
        let (cx, cy) = self.cells();
        let bx = (cx + 1).saturating_sub(self.block_cells);
        let by = (cy + 1).saturating_sub(self.block_cells);
        bx * by * self.block_cells * self.block_cells * self.bins
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityConfig {
    pub measure: Measure,
    pub ncc_threshold: f64,
    pub hog_threshold: f64,
    /// No universal default exists for the eigenvalue threshold; it must be
    /// chosen per video when the eigenvalue measure is used.
    pub eigen_threshold: Option<f64>,
    pub eigen_aggregation: EigenAggregation,
    pub scope: SimilarityScope,
    pub hog: HogParams,
    pub ncc_resize: (usize, usize),
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            measure: Measure::Ncc,
            ncc_threshold: 0.75,
            hog_threshold: 0.85,
            eigen_threshold: None,
            eigen_aggregation: EigenAggregation::Mean,
            scope: SimilarityScope::Crops,
            hog: HogParams::default(),
            ncc_resize: (32, 32),
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        // NCC/HOG thresholds above 1 are allowed: they disable skipping.
        for (name, t) in [("ncc", self.ncc_threshold), ("hog", self.hog_threshold)] {
            if !t.is_finite() || t < -1.0 {
                return Err(Error::InvalidConfig(format!("{name} threshold {t} below -1")));
            }
        }
        if self.measure == Measure::Eigen {
            match self.eigen_threshold {
                Some(t) if t.is_finite() && t >= 0.0 => {}
                Some(t) => return Err(Error::InvalidConfig(format!("eigen threshold {t} must be >= 0"))),
                None => {
                    return Err(Error::InvalidConfig(
                        "the eigen measure requires an explicit eigen threshold".into(),
                    ))
                }
            }
        }
        let h = &self.hog;
        if h.cell_size == 0 || h.bins == 0 || h.block_cells == 0 || h.feature_len() == 0 {
            return Err(Error::InvalidConfig("HOG parameters yield no blocks".into()));
        }
        if self.ncc_resize.0 == 0 || self.ncc_resize.1 == 0 {
            return Err(Error::InvalidConfig("NCC resize must be positive".into()));
        }
        Ok(())
    }

    /// Whether a frame score is good enough to skip detection.
    pub fn passes(&self, score: f64) -> bool {
        match self.measure {
            Measure::Ncc => score >= self.ncc_threshold,
            Measure::Hog => score >= self.hog_threshold,
            Measure::Eigen => score <= self.eigen_threshold.unwrap_or(f64::NEG_INFINITY),
        }
    }
}

/// Pearson correlation of two equally sized images. Constant inputs give 1
/// when both are identical and 0 otherwise.
pub fn pearson(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCrop);
    }
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let n = a.data().len() as f64;
    let ma = a.data().iter().sum::<f64>() / n;
    let mb = b.data().iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Ok(if a.data() == b.data() { 1.0 } else { 0.0 });
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Normalized cross-correlation between a template and a candidate crop,
/// both resampled to `resize_to` first.
pub fn ncc(template: &GrayImage, candidate: &GrayImage, resize_to: (usize, usize)) -> Result<f64> {
    if template.is_empty() || candidate.is_empty() {
        return Err(Error::EmptyCrop);
    }
    let t = template.resize_bilinear(resize_to.0, resize_to.1)?;
    let c = candidate.resize_bilinear(resize_to.0, resize_to.1)?;
    pearson(&t, &c)
}

/// HOG descriptor of the image resampled to the configured window, with
/// L2-normalized blocks and a unit-norm final vector (all zeros for a
/// gradient-free image).
pub fn hog_features(image: &GrayImage, params: &HogParams) -> Result<Vec<f64>> {
    if image.is_empty() {
        return Err(Error::EmptyCrop);
    }
    let img = image.resize_bilinear(params.resize_width, params.resize_height)?;
    let (w, h) = (img.width(), img.height());
    let (cells_x, cells_y) = params.cells();
    let bins = params.bins;
    let bin_width = 180.0 / bins as f64;

    let mut hist = vec![0.0; cells_x * cells_y * bins];
    for y in 0..cells_y * params.cell_size {
        for x in 0..cells_x * params.cell_size {
            let gx = img.get((x + 1).min(w - 1), y) - img.get(x.saturating_sub(1), y);
            let gy = img.get(x, (y + 1).min(h - 1)) - img.get(x, y.saturating_sub(1));
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            // Unsigned orientation in [0, 180), bin i centred on i * bin_width.
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            if angle >= 180.0 {
                angle -= 180.0;
            }
            let pos = angle / bin_width;
            let lo = pos.floor();
            let frac = pos - lo;
            let lo = lo as usize % bins;
            let hi = (lo + 1) % bins;
            let cell = (y / params.cell_size) * cells_x + x / params.cell_size;
            hist[cell * bins + lo] += mag * (1.0 - frac);
            hist[cell * bins + hi] += mag * frac;
        }
    }

    let bc = params.block_cells;
    let mut features = Vec::with_capacity(params.feature_len());
    for by in 0..=(cells_y - bc) {
        for bx in 0..=(cells_x - bc) {
            let start = features.len();
            for cy in by..by + bc {
                for cx in bx..bx + bc {
                    let cell = cy * cells_x + cx;
                    features.extend_from_slice(&hist[cell * bins..(cell + 1) * bins]);
                }
            }
            let block = &mut features[start..];
            let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                block.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
    let norm = features.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        features.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(features)
}

/// Cosine similarity of HOG descriptors; 0 when either has no gradients.
pub fn hog_similarity(a: &GrayImage, b: &GrayImage, params: &HogParams) -> Result<f64> {
    let fa = hog_features(a, params)?;
    let fb = hog_features(b, params)?;
    Ok(cosine(&fa, &fb))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Smaller eigenvalue of the covariance of paired gray levels. The candidate
/// is resampled to the template size. Zero for identical (or collinear)
/// images.
pub fn eigen_similarity(template: &GrayImage, candidate: &GrayImage) -> Result<f64> {
    if template.is_empty() || candidate.is_empty() {
        return Err(Error::EmptyCrop);
    }
    let b = candidate.resize_bilinear(template.width(), template.height())?;
    if b.data().len() != template.data().len() {
        return Err(Error::DimensionMismatch("resampled candidate size differs".into()));
    }
    let a = template.data();
    let b = b.data();
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let (sxx, syy, sxy) = (sxx / n, syy / n, sxy / n);
    let half_trace = (sxx + syy) / 2.0;
    let disc = ((sxx - syy) / 2.0).hypot(sxy);
    Ok((half_trace - disc).max(0.0))
}

/// Similarity of one (template, candidate) pair under the configured measure.
pub fn pair_similarity(template: &GrayImage, candidate: &GrayImage, config: &SimilarityConfig) -> Result<f64> {
    match config.measure {
        Measure::Ncc => ncc(template, candidate, config.ncc_resize),
        Measure::Hog => hog_similarity(template, candidate, &config.hog),
        Measure::Eigen => eigen_similarity(template, candidate),
    }
}

/// Frame-level similarity, or the `NoTracks` sentinel when nothing could be
/// compared (which forces a detection).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrameSimilarity {
    NoTracks,
    Score(f64),
}

impl FrameSimilarity {
    pub fn score(&self) -> Option<f64> {
        match self {
            FrameSimilarity::NoTracks => None,
            FrameSimilarity::Score(s) => Some(*s),
        }
    }
}

/// Combines per-pair similarities in pair order. Pairs are averaged, except
/// that eigenvalues may be summed when configured.
pub fn aggregate(scores: &[f64], config: &SimilarityConfig) -> FrameSimilarity {
    if scores.is_empty() {
        return FrameSimilarity::NoTracks;
    }
    let sum: f64 = scores.iter().sum();
    let score = match (config.measure, config.eigen_aggregation) {
        (Measure::Eigen, EigenAggregation::Sum) => sum,
        _ => sum / scores.len() as f64,
    };
    FrameSimilarity::Score(score)
}

pub fn frame_similarity(
    prev_crops: &[GrayImage],
    est_crops: &[GrayImage],
    config: &SimilarityConfig,
) -> Result<FrameSimilarity> {
    if prev_crops.len() != est_crops.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} templates vs {} estimates",
            prev_crops.len(),
            est_crops.len()
        )));
    }
    let scores = prev_crops
        .iter()
        .zip(est_crops)
        .map(|(t, c)| pair_similarity(t, c, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&scores, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..6.28)).collect();
        GrayImage::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            128.0 + 50.0 * (x / 5.0 + p[0]).sin() + 40.0 * (y / 7.0 + p[1]).cos() + 20.0 * ((x + y) / 3.0 + p[2]).sin()
        })
    }

    fn noise(w: usize, h: usize, seed: u64, amp: f64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| 128.0 + rng.random_range(-amp..amp))
    }

    /// Eq.-style direct summation: template mean, window mean, products.
    fn ncc_direct(f: &GrayImage, t: &GrayImage) -> f64 {
        let n = (t.width() * t.height()) as f64;
        let mut fbar = 0.0;
        let mut tbar = 0.0;
        for y in 0..t.height() {
            for x in 0..t.width() {
                fbar += f.get(x, y);
                tbar += t.get(x, y);
            }
        }
        fbar /= n;
        tbar /= n;
        let (mut num, mut df, mut dt) = (0.0, 0.0, 0.0);
        for y in 0..t.height() {
            for x in 0..t.width() {
                let a = f.get(x, y) - fbar;
                let b = t.get(x, y) - tbar;
                num += a * b;
                df += a * a;
                dt += b * b;
            }
        }
        num / (df * dt).sqrt()
    }

    #[test]
    fn ncc_identity_and_negative() {
        let a = textured(40, 30, 1);
        assert!((ncc(&a, &a, (32, 32)).unwrap() - 1.0).abs() < 1e-9);
        let neg = a.map(|v| 255.0 - v);
        assert!((ncc(&a, &neg, (32, 32)).unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn ncc_affine_matches_direct_summation() {
        let a = textured(32, 32, 3);
        let b = noise(32, 32, 4, 40.0).map(|v| 0.5 * v + a.get(0, 0));
        let mixed = GrayImage::from_fn(32, 32, |x, y| a.get(x, y) + 0.3 * b.get(x, y));
        let direct = ncc_direct(&mixed, &a);
        assert!((ncc(&a, &mixed, (32, 32)).unwrap() - direct).abs() < 1e-12);

        let affine = a.map(|v| 1.7 * v + 12.0);
        assert!((ncc_direct(&affine, &a) - 1.0).abs() < 1e-6);
        assert!((ncc(&a, &affine, (32, 32)).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ncc_constant_images() {
        let c = GrayImage::filled(8, 8, 10.0);
        assert_eq!(ncc(&c, &c, (32, 32)).unwrap(), 1.0);
        assert_eq!(ncc(&c, &GrayImage::filled(8, 8, 11.0), (32, 32)).unwrap(), 0.0);
        assert_eq!(ncc(&c, &textured(8, 8, 2), (32, 32)).unwrap(), 0.0);
        let empty = GrayImage::new(0, 0, vec![]).unwrap();
        assert!(matches!(ncc(&empty, &c, (32, 32)), Err(Error::EmptyCrop)));
    }

    #[test]
    fn hog_shape_and_constant_image() {
        let p = HogParams::default();
        // (8 - 1) * (16 - 1) blocks * 4 cells * 9 bins
        assert_eq!(p.feature_len(), 7 * 15 * 4 * 9);
        let f = hog_features(&GrayImage::filled(20, 40, 77.0), &p).unwrap();
        assert_eq!(f.len(), 3780);
        assert!(f.iter().all(|&v| v == 0.0));
        let g = hog_features(&textured(50, 90, 5), &p).unwrap();
        let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hog_vertical_edge_concentrates_in_horizontal_gradient_bin() {
        let p = HogParams::default();
        let img = GrayImage::from_fn(64, 128, |x, _| if x < 29 { 30.0 } else { 220.0 });
        // Finite-difference oracle: every nonzero gradient is purely along x.
        for y in 0..128 {
            for x in 1..63 {
                let gy = img.get(x, (y + 1).min(127)) - img.get(x, y.saturating_sub(1));
                assert_eq!(gy, 0.0);
            }
        }
        let f = hog_features(&img, &p).unwrap();
        let mut per_bin = [0.0; 9];
        for (i, v) in f.iter().enumerate() {
            per_bin[i % 9] += v * v;
        }
        let total: f64 = per_bin.iter().sum();
        assert!(per_bin[0] / total > 0.999, "{per_bin:?}");
    }

    #[test]
    fn hog_self_and_brightness_shift() {
        let p = HogParams::default();
        let a = textured(48, 96, 9);
        assert!((hog_similarity(&a, &a, &p).unwrap() - 1.0).abs() < 1e-9);
        let shifted = a.map(|v| v + 25.0);
        assert!((hog_similarity(&a, &shifted, &p).unwrap() - 1.0).abs() < 1e-3);
        assert_eq!(hog_similarity(&a, &GrayImage::filled(10, 10, 3.0), &p).unwrap(), 0.0);
    }

    #[test]
    fn hog_structured_vs_noise_is_low_on_average() {
        let p = HogParams::default();
        let structured = GrayImage::from_fn(64, 128, |x, _| 120.0 + 80.0 * (x as f64 * 0.7).sin());
        let mean: f64 = (0..100)
            .map(|seed| hog_similarity(&structured, &noise(64, 128, 1000 + seed, 100.0), &p).unwrap())
            .sum::<f64>()
            / 100.0;
        assert!(mean < 0.5, "mean cosine {mean}");
    }

    fn eigen_oracle(a: &GrayImage, b: &GrayImage) -> f64 {
        let n = a.data().len() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let (ma, mb) = (mean(a.data()), mean(b.data()));
        let mut c = [[0.0; 2]; 2];
        for (x, y) in a.data().iter().zip(b.data()) {
            let d = [x - ma, y - mb];
            for i in 0..2 {
                for j in 0..2 {
                    c[i][j] += d[i] * d[j] / n;
                }
            }
        }
        let tr = c[0][0] + c[1][1];
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        (tr - (tr * tr - 4.0 * det).max(0.0).sqrt()) / 2.0
    }

    #[test]
    fn eigen_identity_and_offset() {
        let a = textured(30, 20, 11);
        assert!(eigen_similarity(&a, &a).unwrap().abs() < 1e-9);
        let off = a.map(|v| v + 17.0);
        assert!(eigen_similarity(&a, &off).unwrap().abs() < 1e-9);
        assert!(eigen_oracle(&a, &off).abs() < 1e-6);
    }

    #[test]
    fn eigen_grows_with_noise_level() {
        let a = textured(40, 40, 12);
        let mut last = 0.0;
        for (i, amp) in [5.0, 20.0, 50.0].into_iter().enumerate() {
            let n = noise(40, 40, 77 + i as u64, amp);
            let b = GrayImage::from_fn(40, 40, |x, y| a.get(x, y) + n.get(x, y) - 128.0);
            let v = eigen_similarity(&a, &b).unwrap();
            assert!((v - eigen_oracle(&a, &b)).abs() < 1e-6 * v.max(1.0));
            assert!(v > last, "amp {amp}: {v} <= {last}");
            last = v;
        }
    }

    #[test]
    fn frame_similarity_means_and_sentinel() {
        let cfg = SimilarityConfig::default();
        let a = textured(20, 20, 1);
        let b = textured(20, 20, 2);
        let s = frame_similarity(&[a.clone(), b.clone()], &[a.clone(), b.clone()], &cfg).unwrap();
        assert!((s.score().unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(frame_similarity(&[], &[], &cfg).unwrap(), FrameSimilarity::NoTracks);
        assert_eq!(aggregate(&[1.0, 0.5], &cfg), FrameSimilarity::Score(0.75));

        let eig = SimilarityConfig {
            measure: Measure::Eigen,
            eigen_threshold: Some(60.0),
            eigen_aggregation: EigenAggregation::Sum,
            ..Default::default()
        };
        assert_eq!(aggregate(&[10.0, 30.0], &eig), FrameSimilarity::Score(40.0));
    }

    #[test]
    fn skip_predicates() {
        let mut cfg = SimilarityConfig::default();
        assert!(cfg.passes(0.75));
        assert!(!cfg.passes(0.7499));
        cfg.measure = Measure::Hog;
        assert!(cfg.passes(0.85) && !cfg.passes(0.84));
        cfg.measure = Measure::Eigen;
        assert!(cfg.validate().is_err());
        cfg.eigen_threshold = Some(100.0);
        assert!(cfg.validate().is_ok());
        assert!(cfg.passes(100.0) && !cfg.passes(100.5));
    }

    #[test]
    fn ncc_symmetric() {
        for seed in 0..20 {
            let a = textured(25, 35, seed);
            let b = noise(18, 22, seed + 100, 60.0);
            let ab = ncc(&a, &b, (32, 32)).unwrap();
            let ba = ncc(&b, &a, (32, 32)).unwrap();
            assert!((ab - ba).abs() < 1e-9);
        }
    }
}
