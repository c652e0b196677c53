//! Procedural tracking sequences: a textured sprite moving over value-noise
//! clutter, optionally with static distractors and a sweeping occluder.
//!
//! Ground truth is the tight box of the sprite's rasterized pixels. Datasets
//! are stored as `<root>/<name>/frames/%06d.ppm`, `<root>/<name>/groundtruth.txt`
//! (`x,y,w,h` per line) and `<root>/list.txt`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::BBox;
use crate::image::{ByteImage, Image};

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Ellipse,
    Rect,
    /// Star-shaped outline; radii (fractions of the half-extent) at equal
    /// angular steps.
    Polygon(Vec<f64>),
}

/// Oriented sinusoidal grating modulating the base color.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub freq: f64,
    pub angle: f64,
    pub phase: f64,
    pub contrast: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    pub shape: Shape,
    pub w: f64,
    pub h: f64,
    pub color: [f32; 3],
    pub texture: Texture,
}

impl Sprite {
    /// Whether `(x, y)` lies in the sprite drawn at `(cx, cy)` with size `(w, h)`.
    pub fn covers(&self, x: f64, y: f64, cx: f64, cy: f64, w: f64, h: f64) -> bool {
        let u = (x - cx) / (w / 2.0);
        let v = (y - cy) / (h / 2.0);
        match &self.shape {
            Shape::Ellipse => u * u + v * v <= 1.0,
            Shape::Rect => u.abs() <= 1.0 && v.abs() <= 1.0,
            Shape::Polygon(radii) => {
                let r = (u * u + v * v).sqrt();
                let n = radii.len() as f64;
                let t = (v.atan2(u) / std::f64::consts::TAU).rem_euclid(1.0) * n;
                let i = t.floor() as usize % radii.len();
                let f = t - t.floor();
                r <= radii[i] * (1.0 - f) + radii[(i + 1) % radii.len()] * f
            }
        }
    }

    fn shade(&self, x: f64, y: f64, cx: f64, cy: f64, w: f64, h: f64) -> [f32; 3] {
        let u = (x - cx) / w;
        let v = (y - cy) / h;
        let t = &self.texture;
        let s = (std::f64::consts::TAU * t.freq * (u * t.angle.cos() + v * t.angle.sin()) + t.phase).sin();
        let m = (1.0 - t.contrast) + t.contrast * 0.5 * (1.0 + s);
        self.color.map(|c| (c as f64 * m).clamp(0.0, 1.0) as f32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Trajectory {
    /// Constant velocity in pixels per frame.
    Linear { vx: f64, vy: f64 },
    /// Linear drift plus a perpendicular-free sinusoid on both axes.
    Sinusoidal { vx: f64, vy: f64, amp: f64, period: f64 },
    /// Velocity random walk with reflection at the margins.
    RandomWalk { step: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub sprite: Sprite,
    pub start: (f64, f64),
    pub trajectory: Trajectory,
    /// Per-frame multiplicative size change.
    pub scale_drift: f64,
    /// Amplitude of the opposing width/height oscillation.
    pub wobble: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub sprite: Sprite,
    pub at: (f64, f64),
}

/// Vertical bar sweeping horizontally.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub width: f64,
    pub x0: f64,
    pub speed: f64,
    pub color: [f32; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub frame_size: usize,
    pub num_frames: usize,
    pub target: TargetSpec,
    pub distractors: Vec<Distractor>,
    pub occluder: Option<Occluder>,
    pub rng_seed: u64,
}

/// Per-frame target placement `(cx, cy, w, h)`, rounded to 1e-4.
pub type Placement = (f64, f64, f64, f64);

impl SceneSpec {
    fn sizes(&self, t: usize) -> (f64, f64) {
        let tg = &self.target;
        let s = (1.0 + tg.scale_drift).powi(t as i32);
        let wob = tg.wobble * (0.3 * t as f64).sin();
        (round4(tg.sprite.w * s * (1.0 + wob)), round4(tg.sprite.h * s * (1.0 - wob)))
    }

    /// Target placement for every frame. Errors when a scripted trajectory
    /// leaves the frame margins.
    pub fn placements(&self) -> Result<Vec<Placement>> {
        let f = self.frame_size as f64;
        let tg = &self.target;
        let mut out = Vec::with_capacity(self.num_frames);
        let mut rng = ChaCha8Rng::seed_from_u64(match tg.trajectory {
            Trajectory::RandomWalk { seed, .. } => seed,
            _ => 0,
        });
        let (mut x, mut y) = tg.start;
        let (mut vx, mut vy) = (0.0, 0.0);
        for t in 0..self.num_frames {
            let (w, h) = self.sizes(t);
            let (mx, my) = (w / 2.0 + 1.0, h / 2.0 + 1.0);
            let (cx, cy) = match tg.trajectory {
                Trajectory::Linear { vx, vy } => (tg.start.0 + vx * t as f64, tg.start.1 + vy * t as f64),
                Trajectory::Sinusoidal { vx, vy, amp, period } => {
                    let ph = std::f64::consts::TAU * t as f64 / period;
                    (
                        tg.start.0 + vx * t as f64 + amp * ph.sin(),
                        tg.start.1 + vy * t as f64 + amp * (ph * 0.5).sin(),
                    )
                }
                Trajectory::RandomWalk { step, .. } => {
                    if t > 0 {
                        vx = (0.8 * vx + rng.gen_range(-step..=step)).clamp(-2.0 * step, 2.0 * step);
                        vy = (0.8 * vy + rng.gen_range(-step..=step)).clamp(-2.0 * step, 2.0 * step);
                        x += vx;
                        y += vy;
                        if x < mx || x > f - mx {
                            vx = -vx;
                            x = x.clamp(mx, f - mx);
                        }
                        if y < my || y > f - my {
                            vy = -vy;
                            y = y.clamp(my, f - my);
                        }
                    }
                    (x, y)
                }
            };
            let (cx, cy) = (round4(cx), round4(cy));
            // the tolerance absorbs the 1e-4 rounding of reflected walks
            let tol = 1e-3;
            if cx < mx - tol || cx > f - mx + tol || cy < my - tol || cy > f - my + tol {
                return invalid(format!(
                    "trajectory leaves the frame at t={t}: center ({cx}, {cy}), size ({w}, {h}), frame {f}"
                ));
            }
            out.push((cx, cy, w, h));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_size < 16 || self.num_frames < 2 {
            return invalid("scene needs frame_size >= 16 and at least two frames");
        }
        let t = &self.target.sprite;
        if !(t.w >= 2.0 && t.h >= 2.0) {
            return invalid("target sprite smaller than 2 px");
        }
        let p = self.placements()?;
        let vis = self.visible_fraction(&p[0], 0);
        if vis < 0.25 {
            return invalid(format!("target only {:.0}% visible in the first frame", vis * 100.0));
        }
        Ok(())
    }

    fn occluder_span(&self, t: usize) -> Option<(f64, f64)> {
        self.occluder.as_ref().map(|o| {
            let x = o.x0 + o.speed * t as f64;
            (x, x + o.width)
        })
    }

    /// Fraction of the target's pixels not under the occluder.
    pub fn visible_fraction(&self, p: &Placement, t: usize) -> f64 {
        let px = target_pixels(&self.target.sprite, p, self.frame_size);
        if px.is_empty() {
            return 0.0;
        }
        let Some((a, b)) = self.occluder_span(t) else { return 1.0 };
        let hidden = px.iter().filter(|&&(x, _)| (x as f64 + 0.5) >= a && (x as f64 + 0.5) < b).count();
        1.0 - hidden as f64 / px.len() as f64
    }
}

/// Pixels whose centers the sprite covers.
pub fn target_pixels(sprite: &Sprite, p: &Placement, frame_size: usize) -> Vec<(usize, usize)> {
    let (cx, cy, w, h) = *p;
    let x0 = ((cx - w / 2.0).floor().max(0.0)) as usize;
    let y0 = ((cy - h / 2.0).floor().max(0.0)) as usize;
    let x1 = ((cx + w / 2.0).ceil() as usize).min(frame_size);
    let y1 = ((cy + h / 2.0).ceil() as usize).min(frame_size);
    let mut out = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            if sprite.covers(x as f64 + 0.5, y as f64 + 0.5, cx, cy, w, h) {
                out.push((x, y));
            }
        }
    }
    out
}

/// Tight box of a pixel set.
pub fn pixel_hull(px: &[(usize, usize)]) -> BBox {
    if px.is_empty() {
        return BBox::EMPTY;
    }
    let (mut lx, mut ly, mut hx, mut hy) = (usize::MAX, usize::MAX, 0, 0);
    for &(x, y) in px {
        lx = lx.min(x);
        ly = ly.min(y);
        hx = hx.max(x + 1);
        hy = hy.max(y + 1);
    }
    BBox::from_xyxy(lx as f64, ly as f64, hx as f64, hy as f64)
}

fn value_noise(size: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut acc = vec![0.0f32; size * size];
    for (cell, amp) in [(32usize, 0.6f32), (8, 0.4)] {
        let n = size / cell + 2;
        let lattice: Vec<f32> = (0..n * n).map(|_| rng.gen()).collect();
        let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
        for y in 0..size {
            for x in 0..size {
                let (gx, gy) = (x / cell, y / cell);
                let fx = smooth((x % cell) as f32 / cell as f32);
                let fy = smooth((y % cell) as f32 / cell as f32);
                let l = |i: usize, j: usize| lattice[j * n + i];
                let top = l(gx, gy) * (1.0 - fx) + l(gx + 1, gy) * fx;
                let bot = l(gx, gy + 1) * (1.0 - fx) + l(gx + 1, gy + 1) * fx;
                acc[y * size + x] += amp * (top * (1.0 - fy) + bot * fy);
            }
        }
    }
    acc
}

fn background(spec: &SceneSpec) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let n = spec.frame_size;
    let noise = value_noise(n, &mut rng);
    let c1: [f32; 3] = [rng.gen_range(0.15..0.5), rng.gen_range(0.15..0.5), rng.gen_range(0.15..0.5)];
    let c2: [f32; 3] = [rng.gen_range(0.5..0.85), rng.gen_range(0.5..0.85), rng.gen_range(0.5..0.85)];
    let mut img = Image::new(n, n, 3);
    for (i, px) in img.data_mut().chunks_mut(3).enumerate() {
        let t = noise[i];
        for c in 0..3 {
            px[c] = c1[c] * (1.0 - t) + c2[c] * t;
        }
    }
    for d in &spec.distractors {
        let p = (d.at.0, d.at.1, d.sprite.w, d.sprite.h);
        paint(&mut img, &d.sprite, &p);
    }
    img
}

fn paint(img: &mut Image, sprite: &Sprite, p: &Placement) {
    let (cx, cy, w, h) = *p;
    for (x, y) in target_pixels(sprite, p, img.width()) {
        let c = sprite.shade(x as f64 + 0.5, y as f64 + 0.5, cx, cy, w, h);
        img.pixel_mut(x, y).copy_from_slice(&c);
    }
}

/// A clip with its first-frame box and, when labeled, a box for every frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub name: String,
    pub frames: Vec<ByteImage>,
    /// One box per frame, or only the first frame's box when unlabeled.
    pub gt: Vec<BBox>,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.gt.len() == self.frames.len()
    }

    pub fn init_box(&self) -> BBox {
        self.gt[0]
    }

    pub fn frame(&self, i: usize) -> Image {
        self.frames[i].to_image()
    }

    /// Label for frame `i` if known.
    pub fn gt_at(&self, i: usize) -> Option<BBox> {
        self.gt.get(i).copied()
    }

    /// Same frames with every label but the first removed.
    pub fn stripped(&self) -> SequenceSample {
        SequenceSample {
            name: self.name.clone(),
            frames: self.frames.clone(),
            gt: self.gt[..1].to_vec(),
        }
    }

    /// Frames `idx` in order; labels follow when present.
    pub fn subsequence(&self, idx: &[usize]) -> SequenceSample {
        SequenceSample {
            name: self.name.clone(),
            frames: idx.iter().map(|&i| self.frames[i].clone()).collect(),
            gt: if self.is_labeled() {
                idx.iter().map(|&i| self.gt[i]).collect()
            } else {
                vec![self.gt[0]]
            },
        }
    }
}

pub fn generate(name: &str, spec: &SceneSpec) -> Result<SequenceSample> {
    spec.validate()?;
    let bg = background(spec);
    let places = spec.placements()?;
    let mut frames = Vec::with_capacity(spec.num_frames);
    let mut gt = Vec::with_capacity(spec.num_frames);
    for (t, p) in places.iter().enumerate() {
        let mut img = bg.clone();
        let px = target_pixels(&spec.target.sprite, p, spec.frame_size);
        paint(&mut img, &spec.target.sprite, p);
        if let (Some(o), Some((a, b))) = (&spec.occluder, spec.occluder_span(t)) {
            let lo = a.max(0.0).round() as usize;
            let hi = (b.max(0.0).round() as usize).min(spec.frame_size);
            for y in 0..spec.frame_size {
                for x in lo..hi {
                    img.pixel_mut(x, y).copy_from_slice(&o.color);
                }
            }
        }
        frames.push(ByteImage::from_image(&img));
        gt.push(pixel_hull(&px));
    }
    Ok(SequenceSample {
        name: name.to_string(),
        frames,
        gt,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Slow linear motion, no occlusion, no distractors.
    Easy,
    /// Random walk, an occluder and three distractors.
    Hard,
    /// The easy tier, 64 sequences by default.
    Ci,
}

impl Preset {
    pub fn default_count(self) -> usize {
        match self {
            Preset::Ci => 64,
            _ => 100,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Preset::Easy),
            "hard" => Ok(Preset::Hard),
            "ci" => Ok(Preset::Ci),
            other => invalid(format!("unknown preset `{other}` (expected easy, hard or ci)")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Easy => "easy",
            Preset::Hard => "hard",
            Preset::Ci => "ci",
        })
    }
}

pub const FRAME_SIZE: usize = 128;

fn random_sprite(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Sprite {
    let shape = match rng.gen_range(0..3) {
        0 => Shape::Ellipse,
        1 => Shape::Rect,
        _ => {
            let n = rng.gen_range(5..9);
            Shape::Polygon((0..n).map(|_| rng.gen_range(0.6..1.0)).collect())
        }
    };
    let w = rng.gen_range(lo..hi).round();
    let aspect: f64 = rng.gen_range(0.6..1.6);
    let h = (w * aspect).round().clamp(lo * 0.6, hi * 1.2);
    // a saturated color: one channel high, one low
    let mut color = [rng.gen_range(0.0..1.0f32), rng.gen_range(0.0..1.0f32), rng.gen_range(0.0..1.0f32)];
    let hi_c = rng.gen_range(0..3);
    let lo_c = (hi_c + rng.gen_range(1..3)) % 3;
    color[hi_c] = rng.gen_range(0.85..1.0);
    color[lo_c] = rng.gen_range(0.0..0.15);
    Sprite {
        shape,
        w,
        h,
        color,
        texture: Texture {
            freq: rng.gen_range(1.0..3.0),
            angle: rng.gen_range(0.0..std::f64::consts::PI),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            contrast: rng.gen_range(0.2..0.5),
        },
    }
}

/// Scene for sequence `index` of a dataset drawn with `seed`.
pub fn scene_for(preset: Preset, seed: u64, index: usize, num_frames: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let f = FRAME_SIZE as f64;
    let sprite = random_sprite(&mut rng, 16.0, 30.0);
    let rng_seed = rng.gen();
    let steps = (num_frames - 1) as f64;
    match preset {
        Preset::Easy | Preset::Ci => {
            let drift = rng.gen_range(-0.004..0.004);
            let grow = (1.0f64 + drift).max(1.0).powi(num_frames as i32);
            let m = sprite.w.max(sprite.h) * grow / 2.0 + 2.0;
            let mut vel = || {
                let v = rng.gen_range(0.3..1.2) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                // slow down until the path fits
                let mut v: f64 = v;
                while (f - 2.0 * m) < v.abs() * steps {
                    v *= 0.8;
                }
                round4(v)
            };
            let (vx, vy) = (vel(), vel());
            let range = |v: f64, rng: &mut ChaCha8Rng| {
                let lo = m + (-v * steps).max(0.0);
                let hi = f - m - (v * steps).max(0.0);
                round4(if hi > lo { rng.gen_range(lo..hi) } else { (lo + hi) / 2.0 })
            };
            let start = (range(vx, &mut rng), range(vy, &mut rng));
            SceneSpec {
                frame_size: FRAME_SIZE,
                num_frames,
                target: TargetSpec {
                    sprite,
                    start,
                    trajectory: Trajectory::Linear { vx, vy },
                    scale_drift: round4(drift),
                    wobble: 0.0,
                },
                distractors: Vec::new(),
                occluder: None,
                rng_seed,
            }
        }
        Preset::Hard => {
            let m = sprite.w.max(sprite.h) * 1.2 / 2.0 + 2.0;
            let start = (round4(rng.gen_range(m..f - m)), round4(rng.gen_range(m..f - m)));
            let distractors = (0..3)
                .map(|_| {
                    let s = random_sprite(&mut rng, 12.0, 28.0);
                    let at = (rng.gen_range(0.0..f).round(), rng.gen_range(0.0..f).round());
                    Distractor { sprite: s, at }
                })
                .collect();
            let width = rng.gen_range(8.0..16.0f64).round();
            let occluder = Occluder {
                width,
                x0: -width,
                speed: rng.gen_range(2.0..4.0f64).round(),
                color: [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
            };
            SceneSpec {
                frame_size: FRAME_SIZE,
                num_frames,
                target: TargetSpec {
                    sprite,
                    start,
                    trajectory: Trajectory::RandomWalk {
                        step: 1.5,
                        seed: rng.gen(),
                    },
                    scale_drift: round4(rng.gen_range(-0.006..0.006)),
                    wobble: 0.05,
                },
                distractors,
                occluder: Some(occluder),
                rng_seed,
            }
        }
    }
}

pub const DEFAULT_NUM_FRAMES: usize = 32;

pub fn sequence_name(index: usize) -> String {
    format!("seq_{index:04}")
}

/// Generates `num` sequences; sequence `i` depends only on `(seed, i)`.
pub fn generate_dataset(preset: Preset, seed: u64, num: usize) -> Result<Vec<SequenceSample>> {
    generate_dataset_frames(preset, seed, num, DEFAULT_NUM_FRAMES)
}

pub fn generate_dataset_frames(preset: Preset, seed: u64, num: usize, num_frames: usize) -> Result<Vec<SequenceSample>> {
    (0..num)
        .into_par_iter()
        .map(|i| generate(&sequence_name(i), &scene_for(preset, seed, i, num_frames)))
        .collect()
}

fn fmt_box(b: &BBox) -> String {
    let [x, y, w, h] = b.xywh();
    format!("{x},{y},{w},{h}")
}

pub fn write_dataset(samples: &[SequenceSample], root: &Path) -> Result<()> {
    std::fs::create_dir_all(root)?;
    let mut list = String::new();
    for s in samples {
        let dir = root.join(&s.name);
        let fdir = dir.join("frames");
        std::fs::create_dir_all(&fdir)?;
        for (i, f) in s.frames.iter().enumerate() {
            f.write_ppm(&fdir.join(format!("{:06}.ppm", i + 1)))?;
        }
        let gt: String = s.gt.iter().map(|b| fmt_box(b) + "\n").collect();
        std::fs::write(dir.join("groundtruth.txt"), gt)?;
        list.push_str(&s.name);
        list.push('\n');
    }
    std::fs::write(root.join("list.txt"), list)?;
    Ok(())
}

fn parse_groundtruth(path: &Path) -> Result<Vec<BBox>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|e| perr(format!("`{t}`: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 4 {
            return Err(perr(format!("expected 4 values, found {}", vals.len())));
        }
        if !vals.iter().all(|v| v.is_finite()) || vals[2] <= 0.0 || vals[3] <= 0.0 {
            return Err(perr(format!("invalid box `{line}`")));
        }
        out.push(BBox::from_xywh(vals[0], vals[1], vals[2], vals[3]));
    }
    if out.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "no boxes".into(),
        });
    }
    Ok(out)
}

pub fn read_sequence(dir: &Path) -> Result<SequenceSample> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut paths: Vec<_> = std::fs::read_dir(dir.join("frames"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    paths.sort();
    let frames = paths.iter().map(|p| ByteImage::read_ppm(p)).collect::<Result<Vec<_>>>()?;
    let gpath = dir.join("groundtruth.txt");
    let gt = parse_groundtruth(&gpath)?;
    if gt.len() != 1 && gt.len() != frames.len() {
        return Err(Error::Parse {
            path: gpath,
            line: gt.len(),
            msg: format!("{} boxes for {} frames (need 1 or one per frame)", gt.len(), frames.len()),
        });
    }
    Ok(SequenceSample { name, frames, gt })
}

/// Reads `list.txt` order when present, otherwise sorted subdirectories.
/// An empty directory gives an empty dataset.
pub fn read_dataset(root: &Path) -> Result<Vec<SequenceSample>> {
    let list = root.join("list.txt");
    let names: Vec<String> = if list.exists() {
        std::fs::read_to_string(&list)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect()
    } else {
        let mut v: Vec<String> = std::fs::read_dir(root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("groundtruth.txt").exists())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        v.sort();
        v
    };
    names.iter().map(|n| read_sequence(&root.join(n))).collect()
}
