//! Synthetic scenes: smoothly textured boxes moving linearly over a smooth
//! background, with births, deaths and occlusion. Produces in-memory frames
//! and ground truth, or a MOTChallenge-style directory on disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{
    format_detections, format_ground_truth, format_seqinfo, oracle_detections, save_gray_png, GroundTruth, GtObject,
    OracleConfig, SequenceInfo, PEDESTRIAN_CLASS,
};
use crate::types::{BoundingBox, GrayImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub length: usize,
    pub fps: f64,
    pub initial_objects: usize,
    /// Chance of a new object appearing on each later frame.
    pub birth_probability: f64,
    pub max_objects: usize,
    /// Speed range in pixels per frame.
    pub speed: (f64, f64),
    pub object_height: (f64, f64),
    /// Width over height.
    pub aspect: f64,
    pub lifetime: (usize, usize),
    /// Standard deviation of per-pixel sensor noise.
    pub pixel_noise: f64,
    /// Round box positions and sizes to whole pixels.
    pub pixel_aligned: bool,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            length: 100,
            fps: 25.0,
            initial_objects: 4,
            birth_probability: 0.05,
            max_objects: 8,
            speed: (0.5, 3.0),
            object_height: (40.0, 80.0),
            aspect: 0.5,
            lifetime: (30, 120),
            pixel_noise: 0.0,
            pixel_aligned: false,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// Motionless objects that live for the whole sequence, on identical
    /// frames. Boxes are pixel aligned with power-of-two heights, so box to
    /// filter-state conversions are exact.
    pub fn static_scene(length: usize, objects: usize, seed: u64) -> Self {
        Self {
            length,
            initial_objects: objects,
            birth_probability: 0.0,
            max_objects: objects,
            speed: (0.0, 0.0),
            object_height: (64.0, 64.0),
            lifetime: (length, length),
            pixel_aligned: true,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.width == 0 || self.height == 0 || self.length == 0 {
            return bad("scene size and length must be positive".into());
        }
        if !(self.fps > 0.0) {
            return bad(format!("scene fps {} must be positive", self.fps));
        }
        if !(0.0..=1.0).contains(&self.birth_probability) {
            return bad(format!("birth probability {} not in [0, 1]", self.birth_probability));
        }
        if !(0.0 <= self.speed.0 && self.speed.0 <= self.speed.1) {
            return bad(format!("bad speed range {:?}", self.speed));
        }
        let (h0, h1) = self.object_height;
        if !(1.0 <= h0 && h0 <= h1 && h1 < self.height as f64 && h1 * self.aspect * 1.1 < self.width as f64) {
            return bad(format!("object heights {:?} do not fit the image", self.object_height));
        }
        if !(self.aspect > 0.0) || self.lifetime.0 == 0 || self.lifetime.0 > self.lifetime.1 {
            return bad("bad aspect or lifetime range".into());
        }
        if !(self.pixel_noise >= 0.0) {
            return bad(format!("pixel noise {} must be >= 0", self.pixel_noise));
        }
        Ok(())
    }
}

/// A sum of two low-frequency gratings, evaluated in object coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Texture {
    base: f64,
    waves: [(f64, f64, f64, f64); 2],
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut wave = |amp: f64| {
            let wavelength = rng.random_range(10.0..28.0);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let k = std::f64::consts::TAU / wavelength;
            (amp, k * angle.cos(), k * angle.sin(), rng.random_range(0.0..std::f64::consts::TAU))
        };
        let waves = [wave(45.0), wave(30.0)];
        Self {
            base: rng.random_range(70.0..190.0),
            waves,
        }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        self.base
            + self
                .waves
                .iter()
                .map(|(a, kx, ky, p)| a * (kx * u + ky * v + p).sin())
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: u64,
    pub first_frame: usize,
    pub last_frame: usize,
    /// Box on `first_frame`.
    pub start: BoundingBox,
    pub velocity: (f64, f64),
    texture: Texture,
}

impl SceneObject {
    pub fn alive_at(&self, frame: usize) -> bool {
        (self.first_frame..=self.last_frame).contains(&frame)
    }

    pub fn box_at(&self, frame: usize) -> BoundingBox {
        let dt = frame as f64 - self.first_frame as f64;
        BoundingBox::new(
            self.start.left + self.velocity.0 * dt,
            self.start.top + self.velocity.1 * dt,
            self.start.width,
            self.start.height,
        )
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    pub objects: Vec<SceneObject>,
    background: [Texture; 2],
}

impl Scene {
    pub fn generate(config: &SceneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let background = [Texture::random(&mut rng), Texture::random(&mut rng)];
        let mut objects: Vec<SceneObject> = Vec::new();
        for frame in 1..=config.length {
            let alive = objects.iter().filter(|o| o.alive_at(frame)).count();
            let wanted = if frame == 1 {
                config.initial_objects
            } else {
                usize::from(alive < config.max_objects && rng.random::<f64>() < config.birth_probability)
            };
            for _ in 0..wanted.min(config.max_objects.saturating_sub(alive)) {
                let id = objects.len() as u64 + 1;
                objects.push(spawn(config, &mut rng, id, frame));
            }
        }
        Ok(Self {
            config: config.clone(),
            objects,
            background,
        })
    }

    pub fn len(&self) -> usize {
        self.config.length
    }

    pub fn is_empty(&self) -> bool {
        self.config.length == 0
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.config.width, self.config.height)
    }

    fn background_at(&self, x: f64, y: f64) -> f64 {
        0.5 * (self.background[0].at(x, y) + self.background[1].at(x * 0.5, y * 0.5))
    }

    /// Renders frame `frame` (1-based) and the visible fraction of each
    /// object alive in it. Later objects are drawn on top.
    pub fn render(&self, frame: usize) -> (GrayImage, BTreeMap<u64, f64>) {
        let (w, h) = self.image_size();
        let mut owner: Vec<Option<usize>> = vec![None; w * h];
        let mut visible: BTreeMap<u64, f64> = BTreeMap::new();
        let mut areas: BTreeMap<u64, f64> = BTreeMap::new();
        for (k, o) in self.objects.iter().enumerate() {
            if !o.alive_at(frame) {
                continue;
            }
            let b = o.box_at(frame);
            let (x0, x1) = (b.left.round().max(0.0) as usize, (b.right().round().max(0.0) as usize).min(w));
            let (y0, y1) = (b.top.round().max(0.0) as usize, (b.bottom().round().max(0.0) as usize).min(h));
            areas.insert(o.id, ((x1.saturating_sub(x0)) * (y1.saturating_sub(y0))) as f64);
            for y in y0..y1 {
                for x in x0..x1 {
                    owner[y * w + x] = Some(k);
                }
            }
        }
        let image = GrayImage::from_fn(w, h, |x, y| match owner[y * w + x] {
            Some(k) => {
                let o = &self.objects[k];
                let b = o.box_at(frame);
                o.texture.at(x as f64 - b.left, y as f64 - b.top)
            }
            None => self.background_at(x as f64, y as f64),
        });
        for k in owner.iter().flatten() {
            *visible.entry(self.objects[*k].id).or_insert(0.0) += 1.0;
        }
        let fractions = areas
            .into_iter()
            .map(|(id, area)| {
                let seen = visible.get(&id).copied().unwrap_or(0.0);
                (id, if area > 0.0 { seen / area } else { 0.0 })
            })
            .collect();

        let image = if self.config.pixel_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_f00d);
            rng.set_stream(frame as u64);
            let normal = Normal::new(0.0, self.config.pixel_noise).expect("finite noise");
            let noisy: Vec<f64> = image.data().iter().map(|v| v + normal.sample(&mut rng)).collect();
            GrayImage::new(w, h, noisy).expect("same dimensions")
        } else {
            image
        };
        (image.map(|v| v.clamp(0.0, 255.0)), fractions)
    }

    pub fn frame(&self, frame: usize) -> GrayImage {
        self.render(frame).0
    }

    pub fn frames(&self) -> Vec<GrayImage> {
        (1..=self.len()).map(|f| self.frame(f)).collect()
    }

    /// Ground truth for every frame, including frames with no objects.
    pub fn ground_truth(&self) -> GroundTruth {
        (1..=self.len())
            .map(|f| {
                let (_, vis) = self.render(f);
                let objs = self
                    .objects
                    .iter()
                    .filter(|o| o.alive_at(f))
                    .map(|o| GtObject {
                        id: o.id,
                        bbox: o.box_at(f),
                        class: PEDESTRIAN_CLASS,
                        visibility: vis.get(&o.id).copied().unwrap_or(0.0),
                        considered: true,
                    })
                    .collect();
                (f, objs)
            })
            .collect()
    }

    pub fn sequence_info(&self, name: &str) -> SequenceInfo {
        SequenceInfo {
            name: name.to_string(),
            fps: self.config.fps,
            width: self.config.width,
            height: self.config.height,
            length: self.config.length,
            im_dir: "img1".into(),
            im_ext: ".png".into(),
        }
    }
}

fn spawn(config: &SceneConfig, rng: &mut ChaCha8Rng, id: u64, frame: usize) -> SceneObject {
    let (iw, ih) = (config.width as f64, config.height as f64);
    let mut h = rng.random_range(config.object_height.0..=config.object_height.1);
    let mut w = h * config.aspect * rng.random_range(0.9..=1.1);
    if config.pixel_aligned {
        h = h.round();
        w = (h * config.aspect).round();
    }
    let speed = rng.random_range(config.speed.0..=config.speed.1);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (vx, vy) = (speed * angle.cos(), speed * angle.sin());
    let wanted = rng.random_range(config.lifetime.0..=config.lifetime.1);
    let remaining = config.length - frame + 1;

    // Longest stay for which the box remains inside the image.
    let fit = |room: f64, v: f64| if v.abs() < 1e-9 { usize::MAX } else { (room / v.abs()).floor() as usize + 1 };
    let inside = fit(iw - w, vx).min(fit(ih - h, vy)).max(2);
    let life = wanted.min(remaining).min(inside);

    let (dx, dy) = (vx * (life - 1) as f64, vy * (life - 1) as f64);
    let span = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| if hi > lo { rng.random_range(lo..=hi) } else { lo.max(0.0) };
    let mut left = span((-dx).max(0.0), iw - w - dx.max(0.0), rng);
    let mut top = span((-dy).max(0.0), ih - h - dy.max(0.0), rng);
    if config.pixel_aligned {
        left = left.round();
        top = top.round();
    }
    SceneObject {
        id,
        first_frame: frame,
        last_frame: frame + life - 1,
        start: BoundingBox::new(left, top, w, h),
        velocity: (vx, vy),
        texture: Texture::random(rng),
    }
}

/// Writes `root/name/{seqinfo.ini, img1/*.png, gt/gt.txt}` and, when an
/// oracle is given, `det/det.txt` built from the evaluated ground truth.
pub fn write_sequence(scene: &Scene, root: &Path, name: &str, detections: Option<&OracleConfig>) -> Result<PathBuf> {
    let dir = root.join(name);
    let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e));
    let write = |p: &Path, text: String| fs::write(p, text).map_err(|e| Error::io(format!("writing {}", p.display()), e));
    let info = scene.sequence_info(name);

    mkdir(&dir.join(&info.im_dir))?;
    write(&dir.join("seqinfo.ini"), format_seqinfo(&info))?;
    for f in 1..=scene.len() {
        save_gray_png(&dir.join(&info.im_dir).join(format!("{f:06}{}", info.im_ext)), &scene.frame(f))?;
    }
    let gt = scene.ground_truth();
    mkdir(&dir.join("gt"))?;
    write(&dir.join("gt").join("gt.txt"), format_ground_truth(&gt))?;

    if let Some(cfg) = detections {
        cfg.validate()?;
        let by_frame = (1..=scene.len())
            .map(|f| {
                let boxes: Vec<BoundingBox> = gt[&f].iter().filter(|o| o.is_evaluated()).map(|o| o.bbox).collect();
                (f, oracle_detections(&boxes, cfg, f, scene.image_size()))
            })
            .collect();
        mkdir(&dir.join("det"))?;
        write(&dir.join("det").join("det.txt"), format_detections(&by_frame))?;
    }
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objects_stay_inside_the_image() {
        for seed in 0..20 {
            let cfg = SceneConfig {
                speed: (2.0, 8.0),
                length: 150,
                seed,
                ..Default::default()
            };
            let scene = Scene::generate(&cfg).unwrap();
            for o in &scene.objects {
                for f in o.first_frame..=o.last_frame {
                    let b = o.box_at(f);
                    assert!(b.left >= -1e-9 && b.top >= -1e-9, "{b:?}");
                    assert!(b.right() <= cfg.width as f64 + 1e-9 && b.bottom() <= cfg.height as f64 + 1e-9);
                }
                assert!(o.last_frame <= cfg.length);
            }
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let cfg = SceneConfig {
            seed: 7,
            length: 30,
            pixel_noise: 2.0,
            ..Default::default()
        };
        let a = Scene::generate(&cfg).unwrap();
        let b = Scene::generate(&cfg).unwrap();
        assert_eq!(a.objects, b.objects);
        assert_eq!(a.frame(12), b.frame(12));
        assert_ne!(a.frame(12), a.frame(13));
    }

    #[test]
    fn static_scene_frames_are_identical() {
        let scene = Scene::generate(&SceneConfig::static_scene(20, 3, 1)).unwrap();
        assert_eq!(scene.objects.len(), 3);
        let first = scene.frame(1);
        assert!((2..=20).all(|f| scene.frame(f) == first));
        for o in &scene.objects {
            assert_eq!((o.first_frame, o.last_frame), (1, 20));
            assert_eq!(o.start.height, 64.0);
            assert_eq!(o.start.left.fract(), 0.0);
        }
    }

    #[test]
    fn visibility_drops_under_occlusion() {
        let mut scene = Scene::generate(&SceneConfig::static_scene(2, 2, 3)).unwrap();
        scene.objects[0].start = BoundingBox::new(10.0, 10.0, 32.0, 64.0);
        scene.objects[1].start = BoundingBox::new(26.0, 10.0, 32.0, 64.0);
        let gt = scene.ground_truth();
        let vis: Vec<f64> = gt[&1].iter().map(|o| o.visibility).collect();
        assert!((vis[0] - 0.5).abs() < 1e-12);
        assert_eq!(vis[1], 1.0);
    }
}
