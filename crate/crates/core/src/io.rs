//! MOTChallenge sequence layout: `seqinfo.ini`, `img1/`, `det/det.txt`,
//! `gt/gt.txt`, result files, frame decoding, and the detection sources that
//! stand in for a CNN detector.
//!
//! Ground-truth rows come in two layouts. Nine-field rows
//! (`frame,id,l,t,w,h,flag,class,visibility`, MOT16/17/20) carry class and
//! visibility; any other width of at least six fields (MOT15's ten-field rows,
//! bare seven-field rows) is read as a considered pedestrian with full
//! visibility.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BoundingBox, Detection, GrayImage};

pub const PEDESTRIAN_CLASS: i32 = 1;
pub const MIN_VISIBILITY: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub name: String,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub length: usize,
    pub im_dir: String,
    pub im_ext: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub id: u64,
    pub bbox: BoundingBox,
    pub class: i32,
    pub visibility: f64,
    /// MOTChallenge "consider" flag (column 7).
    pub considered: bool,
}

impl GtObject {
    /// Rows used for evaluation and oracle detections.
    pub fn is_evaluated(&self) -> bool {
        self.considered && self.class == PEDESTRIAN_CLASS && self.visibility >= MIN_VISIBILITY
    }
}

pub type GroundTruth = BTreeMap<usize, Vec<GtObject>>;

/// One output row: a box with its track identity on a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub frame: usize,
    pub id: u64,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone)]
pub struct SequenceBundle {
    pub root: PathBuf,
    pub info: SequenceInfo,
    /// Index `i` holds frame `i + 1`.
    pub frame_paths: Vec<PathBuf>,
    pub detections_by_frame: BTreeMap<usize, Vec<Detection>>,
    pub ground_truth: Option<GroundTruth>,
}

impl SequenceBundle {
    pub fn name(&self) -> &str {
        &self.info.name
    }

    pub fn len(&self) -> usize {
        self.info.length
    }

    pub fn is_empty(&self) -> bool {
        self.info.length == 0
    }

    /// Evaluated ground truth as `(frame -> [(id, box)])`.
    pub fn evaluation_gt(&self) -> Result<BTreeMap<usize, Vec<(u64, BoundingBox)>>> {
        let gt = self.ground_truth.as_ref().ok_or(Error::NoGroundTruth)?;
        Ok(evaluation_boxes(gt))
    }
}

pub fn evaluation_boxes(gt: &GroundTruth) -> BTreeMap<usize, Vec<(u64, BoundingBox)>> {
    gt.iter()
        .map(|(&f, objs)| {
            (
                f,
                objs.iter()
                    .filter(|o| o.is_evaluated())
                    .map(|o| (o.id, o.bbox))
                    .collect(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Detections below this confidence are dropped while loading `det.txt`.
    pub confidence_floor: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { confidence_floor: 0.4 }
    }
}

pub fn parse_seqinfo(text: &str, path: &Path) -> Result<SequenceInfo> {
    let invalid = |reason: String| Error::InvalidSeqInfo {
        path: path.to_path_buf(),
        reason,
    };
    let ini = ini::Ini::load_from_str(text.trim_start_matches('\u{feff}')).map_err(|e| invalid(e.to_string()))?;
    let section = ini
        .iter()
        .find(|(name, _)| name.is_some_and(|n| n.eq_ignore_ascii_case("sequence")))
        .map(|(_, props)| props)
        .ok_or_else(|| invalid("missing [Sequence] section".into()))?;
    let get = |key: &str| -> Option<String> {
        section
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .map(|(_, v)| v.trim().to_string())
    };
    let require = |key: &str| get(key).ok_or_else(|| invalid(format!("missing key {key}")));
    let number = |key: &str| -> Result<f64> {
        let v = require(key)?;
        v.parse::<f64>().map_err(|_| invalid(format!("{key}={v} is not a number")))
    };
    let count = |key: &str| -> Result<usize> {
        let v = number(key)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(invalid(format!("{key}={v} is not a non-negative integer")));
        }
        Ok(v as usize)
    };

    let fps = number("frameRate")?;
    if fps <= 0.0 || !fps.is_finite() {
        return Err(invalid(format!("frameRate={fps} must be positive")));
    }
    let mut im_ext = get("imExt").unwrap_or_else(|| ".jpg".into());
    if !im_ext.starts_with('.') {
        im_ext.insert(0, '.');
    }
    Ok(SequenceInfo {
        name: get("name").unwrap_or_else(|| {
            path.parent()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        }),
        fps,
        width: count("imWidth")?,
        height: count("imHeight")?,
        length: count("seqLength")?,
        im_dir: get("imDir").unwrap_or_else(|| "img1".into()),
        im_ext,
    })
}

pub fn format_seqinfo(info: &SequenceInfo) -> String {
    format!(
        "[Sequence]\nname={}\nimDir={}\nframeRate={}\nseqLength={}\nimWidth={}\nimHeight={}\nimExt={}\n",
        info.name, info.im_dir, info.fps, info.length, info.width, info.height, info.im_ext
    )
}

/// Splits CSV text into numeric rows, keeping 1-based line numbers and
/// skipping blank lines.
fn numeric_rows<'a>(
    text: &'a str,
    path: &'a Path,
    min_fields: usize,
) -> impl Iterator<Item = Result<(usize, Vec<f64>)>> + 'a {
    text.lines().enumerate().filter_map(move |(i, raw)| {
        let line = raw.trim();
        if line.is_empty() {
            return None;
        }
        let malformed = |reason: String| Error::MalformedLine {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let fields: Result<Vec<f64>> = line
            .split(',')
            .map(|f| {
                let f = f.trim();
                f.parse::<f64>()
                    .map_err(|_| malformed(format!("field {f:?} is not a number")))
            })
            .collect();
        Some(fields.and_then(|v| {
            if v.len() < min_fields {
                Err(malformed(format!("expected at least {min_fields} fields, found {}", v.len())))
            } else if v[..min_fields.min(6)].iter().any(|x| !x.is_finite()) {
                Err(malformed("non-finite coordinate".into()))
            } else if v[0] < 1.0 || v[0].fract() != 0.0 {
                Err(malformed(format!("frame {} is not a positive integer", v[0])))
            } else {
                Ok((i + 1, v))
            }
        }))
    })
}

fn row_box(v: &[f64], path: &Path, line: usize) -> Result<BoundingBox> {
    let b = BoundingBox::new(v[2], v[3], v[4], v[5]);
    if !b.is_valid() {
        return Err(Error::MalformedLine {
            path: path.to_path_buf(),
            line,
            reason: "negative box extent".into(),
        });
    }
    Ok(b)
}

/// `frame,id,left,top,width,height,conf[,x,y,z]`.
pub fn parse_detections(text: &str, path: &Path, confidence_floor: f64) -> Result<BTreeMap<usize, Vec<Detection>>> {
    let mut out: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
    for row in numeric_rows(text, path, 7) {
        let (line, v) = row?;
        let frame = v[0] as usize;
        let bbox = row_box(&v, path, line)?;
        let conf = v[6];
        if conf < confidence_floor {
            continue;
        }
        out.entry(frame).or_default().push(Detection::new(frame, bbox, conf));
    }
    Ok(out)
}

pub fn parse_ground_truth(text: &str, path: &Path) -> Result<GroundTruth> {
    let mut out: GroundTruth = BTreeMap::new();
    for row in numeric_rows(text, path, 6) {
        let (line, v) = row?;
        let frame = v[0] as usize;
        let bbox = row_box(&v, path, line)?;
        let considered = v.get(6).is_none_or(|&c| c != 0.0);
        let (class, visibility) = if v.len() == 9 {
            (v[7] as i32, v[8])
        } else {
            (PEDESTRIAN_CLASS, 1.0)
        };
        out.entry(frame).or_default().push(GtObject {
            id: v[1] as u64,
            bbox,
            class,
            visibility,
            considered,
        });
    }
    Ok(out)
}

pub fn parse_results(text: &str, path: &Path) -> Result<Vec<ResultRow>> {
    numeric_rows(text, path, 6)
        .map(|row| {
            let (line, v) = row?;
            Ok(ResultRow {
                frame: v[0] as usize,
                id: v[1] as u64,
                bbox: row_box(&v, path, line)?,
            })
        })
        .collect()
}

/// MOTChallenge result text, one `frame,id,left,top,width,height,1,-1,-1,-1`
/// line per row with two-decimal coordinates, sorted by (frame, id).
pub fn format_results(rows: &[ResultRow]) -> String {
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.id));
    let mut out = String::new();
    for r in sorted {
        let b = &r.bbox;
        let _ = writeln!(
            out,
            "{},{},{:.2},{:.2},{:.2},{:.2},1,-1,-1,-1",
            r.frame,
            r.id,
            clean_zero(b.left),
            clean_zero(b.top),
            clean_zero(b.width),
            clean_zero(b.height)
        );
    }
    out
}

// Avoids "-0.00" for values that round to zero.
/// MOT16/17 ground-truth layout. Coordinates use the shortest exact decimal
/// form so a round trip is lossless.
pub fn format_ground_truth(gt: &GroundTruth) -> String {
    let mut out = String::new();
    for (frame, objects) in gt {
        for o in objects {
            let b = &o.bbox;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                frame,
                o.id,
                b.left,
                b.top,
                b.width,
                b.height,
                u8::from(o.considered),
                o.class,
                o.visibility
            );
        }
    }
    out
}

/// `det.txt` layout: `frame,-1,left,top,width,height,conf,-1,-1,-1`.
pub fn format_detections(by_frame: &BTreeMap<usize, Vec<Detection>>) -> String {
    let mut out = String::new();
    for (frame, dets) in by_frame {
        for d in dets {
            let b = &d.bbox;
            let _ = writeln!(
                out,
                "{},-1,{},{},{},{},{},-1,-1,-1",
                frame, b.left, b.top, b.width, b.height, d.confidence
            );
        }
    }
    out
}

fn clean_zero(v: f64) -> f64 {
    if v.abs() < 0.005 {
        0.0
    } else {
        v
    }
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, format_results(rows)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_results(&text, path)
}

/// Rows grouped per frame as `(id, box)` pairs.
pub fn rows_by_frame(rows: &[ResultRow]) -> BTreeMap<usize, Vec<(u64, BoundingBox)>> {
    let mut out: BTreeMap<usize, Vec<(u64, BoundingBox)>> = BTreeMap::new();
    for r in rows {
        out.entry(r.frame).or_default().push((r.id, r.bbox));
    }
    out
}

fn frame_index_from_path(path: &Path, ext: &str) -> Option<usize> {
    let name = path.file_name()?.to_str()?;
    let lower = name.to_ascii_lowercase();
    let stem = lower.strip_suffix(&ext.to_ascii_lowercase())?;
    stem.parse().ok()
}

pub fn load_sequence(root: &Path) -> Result<SequenceBundle> {
    load_sequence_with(root, &LoadOptions::default())
}

pub fn load_sequence_with(root: &Path, options: &LoadOptions) -> Result<SequenceBundle> {
    let seqinfo = root.join("seqinfo.ini");
    if !seqinfo.is_file() {
        return Err(Error::MissingSeqInfo(root.to_path_buf()));
    }
    let text = fs::read_to_string(&seqinfo).map_err(|e| Error::io(format!("reading {}", seqinfo.display()), e))?;
    let info = parse_seqinfo(&text, &seqinfo)?;

    let img_dir = root.join(&info.im_dir);
    let mut by_index: BTreeMap<usize, PathBuf> = BTreeMap::new();
    if let Ok(entries) = fs::read_dir(&img_dir) {
        for entry in entries.flatten() {
            let p = entry.path();
            if let Some(i) = frame_index_from_path(&p, &info.im_ext) {
                by_index.insert(i, p);
            }
        }
    }
    let frame_paths = (1..=info.length)
        .map(|i| {
            by_index.remove(&i).ok_or(Error::MissingFrameFile {
                dir: img_dir.clone(),
                frame: i,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let det_path = root.join("det").join("det.txt");
    let detections_by_frame = if det_path.is_file() {
        let text = fs::read_to_string(&det_path).map_err(|e| Error::io(format!("reading {}", det_path.display()), e))?;
        parse_detections(&text, &det_path, options.confidence_floor)?
    } else {
        BTreeMap::new()
    };

    let gt_path = root.join("gt").join("gt.txt");
    let ground_truth = if gt_path.is_file() {
        let text = fs::read_to_string(&gt_path).map_err(|e| Error::io(format!("reading {}", gt_path.display()), e))?;
        Some(parse_ground_truth(&text, &gt_path)?)
    } else {
        None
    };

    Ok(SequenceBundle {
        root: root.to_path_buf(),
        info,
        frame_paths,
        detections_by_frame,
        ground_truth,
    })
}

/// Decodes a PNG or JPEG into BT.601 luminance. Single-channel images keep
/// their stored gray levels.
pub fn load_frame(path: &Path) -> Result<GrayImage> {
    let decode = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let img = image::ImageReader::open(path)
        .map_err(|e| decode(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| decode(e.to_string()))?
        .decode()
        .map_err(|e| decode(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            GrayImage::new(w, h, buf.into_raw().into_iter().map(f64::from).collect())
        }
        other => GrayImage::from_rgb8(w, h, other.to_rgb8().as_raw()),
    }
}

/// Writes an 8-bit grayscale PNG (values rounded and clamped to `[0, 255]`).
pub fn save_gray_png(path: &Path, image: &GrayImage) -> Result<()> {
    let bytes: Vec<u8> = image.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let buf = image::GrayImage::from_raw(image.width() as u32, image.height() as u32, bytes)
        .ok_or_else(|| Error::DimensionMismatch("image buffer size".into()))?;
    buf.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Frame pixels by 1-based index.
pub trait FrameSource {
    fn len(&self) -> usize;
    fn frame(&mut self, index: usize) -> Result<GrayImage>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Frames decoded from disk on demand.
pub struct DiskFrames<'a> {
    paths: &'a [PathBuf],
}

impl<'a> DiskFrames<'a> {
    pub fn new(bundle: &'a SequenceBundle) -> Self {
        Self {
            paths: &bundle.frame_paths,
        }
    }
}

impl FrameSource for DiskFrames<'_> {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn frame(&mut self, index: usize) -> Result<GrayImage> {
        let path = index
            .checked_sub(1)
            .and_then(|i| self.paths.get(i))
            .ok_or(Error::MissingFrame(index))?;
        load_frame(path)
    }
}

/// Frames held in memory.
pub struct MemoryFrames {
    frames: Vec<GrayImage>,
}

impl MemoryFrames {
    pub fn new(frames: Vec<GrayImage>) -> Self {
        Self { frames }
    }
}

impl FrameSource for MemoryFrames {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn frame(&mut self, index: usize) -> Result<GrayImage> {
        index
            .checked_sub(1)
            .and_then(|i| self.frames.get(i))
            .cloned()
            .ok_or(Error::MissingFrame(index))
    }
}

/// Frame count only; for policies that never look at pixels.
pub struct BlankFrames(pub usize);

impl FrameSource for BlankFrames {
    fn len(&self) -> usize {
        self.0
    }

    fn frame(&mut self, index: usize) -> Result<GrayImage> {
        Err(Error::MissingFrame(index))
    }
}

/// Per-frame detector stand-in.
pub trait DetectionSource {
    fn detect(&mut self, frame_index: usize) -> Result<Vec<Detection>>;
}

/// Cached detector output (e.g. `det/det.txt`). Frames without rows have no
/// detections; frames beyond the sequence are an error.
pub struct FileDetections<'a> {
    by_frame: &'a BTreeMap<usize, Vec<Detection>>,
    length: usize,
}

impl<'a> FileDetections<'a> {
    pub fn new(by_frame: &'a BTreeMap<usize, Vec<Detection>>, length: usize) -> Self {
        Self { by_frame, length }
    }
}

impl DetectionSource for FileDetections<'_> {
    fn detect(&mut self, frame_index: usize) -> Result<Vec<Detection>> {
        if frame_index == 0 || frame_index > self.length {
            return Err(Error::MissingDetections(frame_index));
        }
        Ok(self.by_frame.get(&frame_index).cloned().unwrap_or_default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Gaussian jitter (pixels) on each box field.
    pub sigma: f64,
    /// Probability of dropping each ground-truth box.
    pub drop_probability: f64,
    /// Expected false positives per ground-truth box.
    pub false_positive_rate: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            drop_probability: 0.0,
            false_positive_rate: 0.0,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!("oracle sigma {} must be >= 0", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(Error::InvalidConfig(format!(
                "oracle drop probability {} not in [0, 1]",
                self.drop_probability
            )));
        }
        if !(self.false_positive_rate.is_finite() && self.false_positive_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "oracle false-positive rate {} must be >= 0",
                self.false_positive_rate
            )));
        }
        Ok(())
    }
}

/// Synthesizes detections for one frame from its ground truth.
///
/// The generator is ChaCha8 seeded with `seed` on stream `frame`, so output
/// depends only on `(seed, frame, gt)`. Draw order: per box (in the given
/// order) one uniform for the drop test then four normals for jitter (always
/// drawn); then the false-positive count (Poisson with mean `rate * |gt|`);
/// then per false positive a size-donor index, two uniform coordinates and a
/// confidence.
pub fn oracle_detections(
    gt: &[BoundingBox],
    config: &OracleConfig,
    frame_index: usize,
    image_size: (usize, usize),
) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(frame_index as u64);
    let normal = Normal::new(0.0, config.sigma.max(0.0)).expect("finite sigma");

    let mut out = Vec::with_capacity(gt.len());
    for b in gt {
        let dropped = rng.random::<f64>() < config.drop_probability;
        let j: [f64; 4] = std::array::from_fn(|_| normal.sample(&mut rng));
        if dropped {
            continue;
        }
        let bbox = BoundingBox::new(
            b.left + j[0],
            b.top + j[1],
            (b.width + j[2]).max(1.0),
            (b.height + j[3]).max(1.0),
        );
        out.push(Detection::new(frame_index, bbox, 1.0));
    }

    let lambda = config.false_positive_rate * gt.len() as f64;
    if lambda > 0.0 {
        let count = Poisson::new(lambda).expect("positive mean").sample(&mut rng) as usize;
        let (iw, ih) = (image_size.0 as f64, image_size.1 as f64);
        for _ in 0..count {
            let donor = gt[rng.random_range(0..gt.len())];
            let (w, h) = (donor.width.max(1.0), donor.height.max(1.0));
            let left = rng.random::<f64>() * (iw - w).max(0.0);
            let top = rng.random::<f64>() * (ih - h).max(0.0);
            let conf = 0.5 + 0.5 * rng.random::<f64>();
            out.push(Detection::new(frame_index, BoundingBox::new(left, top, w, h), conf));
        }
    }
    out
}

/// Ground-truth-derived detector. Only evaluated rows (see
/// [`GtObject::is_evaluated`]) are used, in id order.
pub struct OracleDetections {
    gt: BTreeMap<usize, Vec<BoundingBox>>,
    config: OracleConfig,
    image_size: (usize, usize),
    length: usize,
}

impl OracleDetections {
    pub fn new(gt: &GroundTruth, config: OracleConfig, image_size: (usize, usize), length: usize) -> Self {
        let gt = gt
            .iter()
            .map(|(&f, objs)| {
                let mut kept: Vec<&GtObject> = objs.iter().filter(|o| o.is_evaluated()).collect();
                kept.sort_by_key(|o| o.id);
                (f, kept.into_iter().map(|o| o.bbox).collect())
            })
            .collect();
        Self {
            gt,
            config,
            image_size,
            length,
        }
    }

    pub fn for_bundle(bundle: &SequenceBundle, config: OracleConfig) -> Result<Self> {
        let gt = bundle.ground_truth.as_ref().ok_or(Error::NoGroundTruth)?;
        Ok(Self::new(
            gt,
            config,
            (bundle.info.width, bundle.info.height),
            bundle.info.length,
        ))
    }
}

impl DetectionSource for OracleDetections {
    fn detect(&mut self, frame_index: usize) -> Result<Vec<Detection>> {
        if frame_index == 0 || frame_index > self.length {
            return Err(Error::MissingDetections(frame_index));
        }
        let empty = Vec::new();
        let boxes = self.gt.get(&frame_index).unwrap_or(&empty);
        Ok(oracle_detections(boxes, &self.config, frame_index, self.image_size))
    }
}
