//! Geometric and track-domain types shared across the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::KalmanState;

/// Axis-aligned box in pixel coordinates, stored as top-left corner plus size
/// (the MOTChallenge file layout).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundingBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub const fn new(left: f64, top: f64, width: f64, height: f64) -> Self {
        Self {
            left,
            top,
            width,
            height,
        }
    }

    /// Finite coordinates and non-negative extent.
    pub fn is_valid(&self) -> bool {
        [self.left, self.top, self.width, self.height]
            .iter()
            .all(|v| v.is_finite())
            && self.width >= 0.0
            && self.height >= 0.0
    }

    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn center(&self) -> (f64, f64) {
        (self.left + self.width / 2.0, self.top + self.height / 2.0)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = (self.right().min(other.right()) - self.left.max(other.left)).max(0.0);
        let h = (self.bottom().min(other.bottom()) - self.top.max(other.top)).max(0.0);
        w * h
    }
}

/// Intersection over union of two boxes; 0 when the union is empty.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
    /// 1-based frame ordinal.
    pub frame_index: usize,
}

impl Detection {
    pub fn new(frame_index: usize, bbox: BoundingBox, confidence: f64) -> Self {
        Self {
            bbox,
            confidence: confidence.clamp(0.0, 1.0),
            frame_index,
        }
    }
}

/// Single-channel luminance image, row-major, values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {}x{} image",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// BT.601 luma of interleaved 8-bit RGB samples.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} RGB bytes for a {}x{} image",
                rgb.len(),
                width,
                height
            )));
        }
        let data = rgb
            .chunks_exact(3)
            .map(|p| luma_bt601(p[0], p[1], p[2]))
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear resampling with pixel-center alignment. Same-size requests
    /// return an exact copy.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<GrayImage> {
        if self.is_empty() || width == 0 || height == 0 {
            return Err(Error::EmptyCrop);
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                let top = self.get(x0, y0) * (1.0 - wx) + self.get(x1, y0) * wx;
                let bottom = self.get(x0, y1) * (1.0 - wx) + self.get(x1, y1) * wx;
                data.push(top * (1.0 - wy) + bottom * wy);
            }
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }
}

pub fn luma_bt601(r: u8, g: u8, b: u8) -> f64 {
    0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)
}

/// Integer pixel rectangle `[x0, x1) x [y0, y1)` covered by `bbox` inside an
/// image of the given size. Left/top are floored, right/bottom ceiled, then
/// everything is clamped to the image.
pub fn pixel_rect(bbox: &BoundingBox, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
    if !bbox.is_valid() {
        return None;
    }
    let clamp = |v: f64, hi: usize| -> usize { v.max(0.0).min(hi as f64) as usize };
    let x0 = clamp(bbox.left.floor(), width);
    let y0 = clamp(bbox.top.floor(), height);
    let x1 = clamp(bbox.right().ceil(), width);
    let y1 = clamp(bbox.bottom().ceil(), height);
    (x1 > x0 && y1 > y0).then_some((x0, y0, x1, y1))
}

/// Sub-image covered by `bbox`, clamped to the image bounds.
pub fn crop(image: &GrayImage, bbox: &BoundingBox) -> Result<GrayImage> {
    if image.is_empty() {
        return Err(Error::EmptyCrop);
    }
    let (x0, y0, x1, y1) = pixel_rect(bbox, image.width, image.height).ok_or(Error::EmptyCrop)?;
    let w = x1 - x0;
    let mut data = Vec::with_capacity(w * (y1 - y0));
    for y in y0..y1 {
        let row = y * image.width;
        data.extend_from_slice(&image.data[row + x0..row + x1]);
    }
    Ok(GrayImage {
        width: w,
        height: y1 - y0,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrackState {
    Tentative,
    Active,
    Lost,
    Removed,
}

impl TrackState {
    pub fn can_transition_to(self, next: TrackState) -> bool {
        use TrackState::*;
        matches!(
            (self, next),
            (Tentative, Active) | (Active, Lost) | (Lost, Active) | (Tentative, Removed) | (Lost, Removed)
        ) || self == next
    }
}

/// One tracked object.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub state: TrackState,
    pub kalman: KalmanState,
    /// Box of the most recent matched detection.
    pub last_box: BoundingBox,
    /// Image crop at `last_box` from the frame where it was detected, kept as
    /// the template for similarity checks on later frames.
    pub template: Option<GrayImage>,
    pub frames_since_detection: usize,
    pub total_age: usize,
    /// Matched detections so far (confirmation counter).
    pub hits: usize,
}

impl Track {
    pub fn predicted_box(&self) -> BoundingBox {
        self.kalman.to_box()
    }

    pub(crate) fn set_state(&mut self, next: TrackState) {
        debug_assert!(
            self.state.can_transition_to(next),
            "illegal track transition {:?} -> {:?}",
            self.state,
            next
        );
        self.state = next;
    }
}
