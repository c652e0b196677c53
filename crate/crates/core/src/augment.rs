//! View augmentation with exact box transforms.
//!
//! Geometric operations are affine maps about the image center and move the
//! box to the axis-aligned hull of its transformed corners. Photometric
//! operations leave the box alone.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::BBox;
use crate::image::Image;

/// Row-major 2x3 affine map `(x, y) -> (a x + b y + c, d x + e y + f)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine(pub [f64; 6]);

impl Affine {
    pub const IDENTITY: Affine = Affine([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    /// Linear part `[[a, b], [d, e]]` applied about `(ox, oy)`, then shifted.
    pub fn about(a: f64, b: f64, d: f64, e: f64, ox: f64, oy: f64, tx: f64, ty: f64) -> Self {
        Affine([a, b, ox - a * ox - b * oy + tx, d, e, oy - d * ox - e * oy + ty])
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        (m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5])
    }

    /// `next ∘ self`.
    pub fn then(&self, next: &Affine) -> Affine {
        let (a, n) = (&self.0, &next.0);
        Affine([
            n[0] * a[0] + n[1] * a[3],
            n[0] * a[1] + n[1] * a[4],
            n[0] * a[2] + n[1] * a[5] + n[2],
            n[3] * a[0] + n[4] * a[3],
            n[3] * a[1] + n[4] * a[4],
            n[3] * a[2] + n[4] * a[5] + n[5],
        ])
    }

    pub fn inverse(&self) -> Option<Affine> {
        let m = &self.0;
        let det = m[0] * m[4] - m[1] * m[3];
        if det.abs() < 1e-12 {
            return None;
        }
        let (a, b, d, e) = (m[4] / det, -m[1] / det, -m[3] / det, m[0] / det);
        Some(Affine([a, b, -(a * m[2] + b * m[5]), d, e, -(d * m[2] + e * m[5])]))
    }

    /// Axis-aligned hull of the four mapped corners, in the input's frame tag.
    pub fn transform_box(&self, b: &BBox) -> BBox {
        let [x1, y1, x2, y2] = b.xyxy();
        let pts = [(x1, y1), (x2, y1), (x1, y2), (x2, y2)].map(|(x, y)| self.apply(x, y));
        let (mut lx, mut ly, mut hx, mut hy) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for (x, y) in pts {
            lx = lx.min(x);
            ly = ly.min(y);
            hx = hx.max(x);
            hy = hy.max(y);
        }
        BBox::from_xyxy(lx, ly, hx, hy).in_frame(b.frame)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AugOp {
    /// Zoom about the image center.
    Scale { factor: f64 },
    /// `x += kx (y - H/2)`, `y += ky (x - W/2)`.
    Shear { kx: f64, ky: f64 },
    /// Rescale about the center, then shift; the canvas keeps its size.
    Lsj { scale: f64, dx: f64, dy: f64 },
    Blur { kernel: usize, sigma: f64 },
    Hflip,
    ColorJitter { brightness: f64, contrast: f64, saturation: f64 },
}

/// One drawn augmentation; `rng_seed` identifies the draw for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugSpec {
    pub op: AugOp,
    pub rng_seed: u64,
}

impl AugSpec {
    pub fn new(op: AugOp) -> Self {
        Self { op, rng_seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self.op {
            AugOp::Scale { factor } if !(0.5..=2.0).contains(&factor) => {
                invalid(format!("scale factor {factor} outside [0.5, 2]"))
            }
            AugOp::Shear { kx, ky } if kx.abs() > 0.3 || ky.abs() > 0.3 => {
                invalid(format!("shear ({kx}, {ky}) outside [-0.3, 0.3]"))
            }
            AugOp::Lsj { scale, .. } if !(0.1..=2.0).contains(&scale) => {
                invalid(format!("lsj scale {scale} outside [0.1, 2]"))
            }
            AugOp::Blur { kernel, sigma } if kernel % 2 == 0 || !(0.0..=2.0).contains(&sigma) => {
                invalid(format!("blur kernel {kernel} must be odd and sigma {sigma} in [0, 2]"))
            }
            _ => Ok(()),
        }
    }

    /// Forward map for geometric operations on a `w x h` image.
    pub fn affine(&self, w: f64, h: f64) -> Option<Affine> {
        let (ox, oy) = (w / 2.0, h / 2.0);
        match self.op {
            AugOp::Scale { factor: s } => Some(Affine::about(s, 0.0, 0.0, s, ox, oy, 0.0, 0.0)),
            AugOp::Shear { kx, ky } => Some(Affine::about(1.0, kx, ky, 1.0, ox, oy, 0.0, 0.0)),
            AugOp::Lsj { scale: s, dx, dy } => Some(Affine::about(s, 0.0, 0.0, s, ox, oy, dx, dy)),
            AugOp::Hflip => Some(Affine::about(-1.0, 0.0, 0.0, 1.0, ox, oy, 0.0, 0.0)),
            _ => None,
        }
    }
}

/// Resamples `img` under the forward map `a`, padding with the channel means.
pub fn warp_affine(img: &Image, a: &Affine) -> Image {
    if *a == Affine::IDENTITY {
        return img.clone();
    }
    let inv = a.inverse().expect("augmentation maps are invertible");
    let pad = img.channel_means();
    img.warp(img.width(), img.height(), &pad, |u, v| inv.apply(u, v))
}

/// Separable normalized Gaussian with replicated borders.
pub fn gaussian_blur(img: &Image, kernel: usize, sigma: f64) -> Image {
    if kernel <= 1 || sigma <= 0.0 {
        return img.clone();
    }
    let r = (kernel / 2) as i64;
    let mut k: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32).collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (w, h, c) = (img.width() as i64, img.height() as i64, img.channels());
    let pass = |src: &Image, horizontal: bool| {
        let mut out = src.clone();
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0f32;
                    for (j, &kv) in k.iter().enumerate() {
                        let o = j as i64 - r;
                        let (sx, sy) = if horizontal {
                            ((x + o).clamp(0, w - 1), y)
                        } else {
                            (x, (y + o).clamp(0, h - 1))
                        };
                        acc += kv * src.get(sx as usize, sy as usize, ch);
                    }
                    out.set(x as usize, y as usize, ch, acc);
                }
            }
        }
        out
    };
    pass(&pass(img, true), false)
}

pub fn color_jitter(img: &Image, brightness: f64, contrast: f64, saturation: f64) -> Image {
    let means = img.channel_means();
    let mut out = img.clone();
    let c = img.channels();
    for px in out.data_mut().chunks_mut(c) {
        let gray = px.iter().sum::<f32>() / c as f32;
        for (ch, v) in px.iter_mut().enumerate() {
            let sat = gray + saturation as f32 * (*v - gray);
            let con = (sat - means[ch]) * contrast as f32 + means[ch];
            *v = (con + brightness as f32).clamp(0.0, 1.0);
        }
    }
    out
}

/// Applies one augmentation. A box mapped entirely out of the frame yields
/// [`Error::Rejected`].
pub fn apply(img: &Image, b: &BBox, spec: &AugSpec) -> Result<(Image, BBox)> {
    spec.validate()?;
    let (w, h) = (img.width() as f64, img.height() as f64);
    match spec.op {
        AugOp::Blur { kernel, sigma } => Ok((gaussian_blur(img, kernel, sigma), *b)),
        AugOp::ColorJitter {
            brightness,
            contrast,
            saturation,
        } => Ok((color_jitter(img, brightness, contrast, saturation), *b)),
        _ => {
            let a = spec.affine(w, h).expect("geometric op");
            let nb = clip_or_reject(&a.transform_box(b), w, h)?;
            Ok((warp_affine(img, &a), nb))
        }
    }
}

fn clip_or_reject(b: &BBox, w: f64, h: f64) -> Result<BBox> {
    let c = b.clip(w, h).in_frame(b.frame);
    if c.is_empty() {
        return Err(Error::Rejected(format!("box {:?} left the {w}x{h} frame", b.xyxy())));
    }
    Ok(c)
}

fn default_true() -> bool {
    true
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleAug {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "half")]
    pub p: f64,
    #[serde(default = "ScaleAug::lo")]
    pub min: f64,
    #[serde(default = "ScaleAug::hi")]
    pub max: f64,
}

impl ScaleAug {
    fn lo() -> f64 {
        0.5
    }
    fn hi() -> f64 {
        2.0
    }
}

impl Default for ScaleAug {
    fn default() -> Self {
        Self {
            enabled: true,
            p: 0.5,
            min: Self::lo(),
            max: Self::hi(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsjAug {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "half")]
    pub p: f64,
    #[serde(default = "LsjAug::lo")]
    pub min: f64,
    #[serde(default = "LsjAug::hi")]
    pub max: f64,
}

impl LsjAug {
    fn lo() -> f64 {
        0.1
    }
    fn hi() -> f64 {
        2.0
    }
}

impl Default for LsjAug {
    fn default() -> Self {
        Self {
            enabled: true,
            p: 0.5,
            min: Self::lo(),
            max: Self::hi(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShearAug {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "half")]
    pub p: f64,
    #[serde(default = "ShearAug::max_default")]
    pub max: f64,
}

impl ShearAug {
    fn max_default() -> f64 {
        0.3
    }
}

impl Default for ShearAug {
    fn default() -> Self {
        Self {
            enabled: true,
            p: 0.5,
            max: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlurAug {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "half")]
    pub p: f64,
    #[serde(default = "BlurAug::kernel_default")]
    pub kernel: usize,
    #[serde(default = "BlurAug::sigma_default")]
    pub sigma_max: f64,
}

impl BlurAug {
    fn kernel_default() -> usize {
        5
    }
    fn sigma_default() -> f64 {
        2.0
    }
}

impl Default for BlurAug {
    fn default() -> Self {
        Self {
            enabled: true,
            p: 0.5,
            kernel: 5,
            sigma_max: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipAug {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "half")]
    pub p: f64,
}

impl Default for FlipAug {
    fn default() -> Self {
        Self { enabled: false, p: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterAug {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "half")]
    pub p: f64,
    #[serde(default = "JitterAug::b")]
    pub brightness: f64,
    #[serde(default = "JitterAug::c")]
    pub contrast: f64,
    #[serde(default = "JitterAug::c")]
    pub saturation: f64,
}

impl JitterAug {
    fn b() -> f64 {
        0.1
    }
    fn c() -> f64 {
        0.2
    }
}

impl Default for JitterAug {
    fn default() -> Self {
        Self {
            enabled: true,
            p: 0.5,
            brightness: 0.1,
            contrast: 0.2,
            saturation: 0.2,
        }
    }
}

/// Toggles and ranges, read from the `aug` object of a run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugConfig {
    pub scale: ScaleAug,
    pub shear: ShearAug,
    pub lsj: LsjAug,
    pub blur: BlurAug,
    pub hflip: FlipAug,
    pub color_jitter: JitterAug,
    /// Minimum visible fraction of the transformed box.
    pub min_visible: f64,
    /// Minimum side in pixels of the visible box.
    pub min_box_side: f64,
    pub max_resamples: usize,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            scale: ScaleAug::default(),
            shear: ShearAug::default(),
            lsj: LsjAug::default(),
            blur: BlurAug::default(),
            hflip: FlipAug::default(),
            color_jitter: JitterAug::default(),
            min_visible: 0.5,
            min_box_side: 4.0,
            max_resamples: 10,
        }
    }
}

impl AugConfig {
    /// Everything off: every view is the identity.
    pub fn identity() -> Self {
        let mut c = Self::default();
        c.scale.enabled = false;
        c.shear.enabled = false;
        c.lsj.enabled = false;
        c.blur.enabled = false;
        c.hflip.enabled = false;
        c.color_jitter.enabled = false;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let ps = [self.scale.p, self.shear.p, self.lsj.p, self.blur.p, self.hflip.p, self.color_jitter.p];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return invalid("augmentation probabilities must lie in [0, 1]");
        }
        let ordered = |lo: f64, hi: f64, a: f64, b: f64| a <= b && a >= lo && b <= hi;
        if !ordered(0.5, 2.0, self.scale.min, self.scale.max) {
            return invalid("aug.scale range must satisfy 0.5 <= min <= max <= 2");
        }
        if !ordered(0.1, 2.0, self.lsj.min, self.lsj.max) {
            return invalid("aug.lsj range must satisfy 0.1 <= min <= max <= 2");
        }
        if !(0.0..=0.3).contains(&self.shear.max) {
            return invalid("aug.shear max must lie in [0, 0.3]");
        }
        if self.blur.kernel % 2 == 0 || !(0.0..=2.0).contains(&self.blur.sigma_max) {
            return invalid("aug.blur kernel must be odd and sigma_max in [0, 2]");
        }
        if !(0.0..=1.0).contains(&self.min_visible) {
            return invalid("aug.min_visible must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One augmented view with its box and the operations that produced it.
#[derive(Clone, Debug)]
pub struct View {
    pub image: Image,
    pub bbox: BBox,
    pub specs: Vec<AugSpec>,
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    rng.gen_range(lo.ln()..=hi.ln()).exp()
}

fn sym<R: Rng>(rng: &mut R, m: f64) -> f64 {
    if m <= 0.0 {
        0.0
    } else {
        rng.gen_range(-m..=m)
    }
}

/// Draws an operation list in the fixed order
/// scale, shear, lsj, hflip, blur, color jitter.
pub fn draw_specs<R: Rng>(cfg: &AugConfig, w: f64, h: f64, rng: &mut R) -> Vec<AugSpec> {
    let mut out = Vec::new();
    let mut push = |rng: &mut R, op: AugOp| {
        out.push(AugSpec {
            op,
            rng_seed: rng.gen(),
        })
    };
    if cfg.scale.enabled && rng.gen_bool(cfg.scale.p) {
        let factor = log_uniform(rng, cfg.scale.min, cfg.scale.max);
        push(rng, AugOp::Scale { factor });
    }
    if cfg.shear.enabled && rng.gen_bool(cfg.shear.p) {
        let kx = sym(rng, cfg.shear.max);
        let ky = sym(rng, cfg.shear.max);
        push(rng, AugOp::Shear { kx, ky });
    }
    if cfg.lsj.enabled && rng.gen_bool(cfg.lsj.p) {
        let scale = log_uniform(rng, cfg.lsj.min, cfg.lsj.max);
        let slack = (scale - 1.0).abs() / 2.0;
        let dx = sym(rng, slack * w);
        let dy = sym(rng, slack * h);
        push(rng, AugOp::Lsj { scale, dx, dy });
    }
    if cfg.hflip.enabled && rng.gen_bool(cfg.hflip.p) {
        push(rng, AugOp::Hflip);
    }
    if cfg.blur.enabled && rng.gen_bool(cfg.blur.p) {
        let sigma = rng.gen_range(0.0..=cfg.blur.sigma_max);
        push(
            rng,
            AugOp::Blur {
                kernel: cfg.blur.kernel,
                sigma,
            },
        );
    }
    if cfg.color_jitter.enabled && rng.gen_bool(cfg.color_jitter.p) {
        let j = &cfg.color_jitter;
        let brightness = sym(rng, j.brightness);
        let contrast = 1.0 + sym(rng, j.contrast);
        let saturation = 1.0 + sym(rng, j.saturation);
        push(
            rng,
            AugOp::ColorJitter {
                brightness,
                contrast,
                saturation,
            },
        );
    }
    out
}

/// Applies a drawn list: geometric maps are composed and resampled once,
/// photometric operations follow in order.
pub fn apply_all(img: &Image, b: &BBox, specs: &[AugSpec]) -> Result<(Image, BBox)> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let mut a = Affine::IDENTITY;
    for s in specs {
        s.validate()?;
        if let Some(m) = s.affine(w, h) {
            a = a.then(&m);
        }
    }
    let nb = clip_or_reject(&a.transform_box(b), w, h)?;
    let mut out = warp_affine(img, &a);
    for s in specs {
        if s.affine(w, h).is_none() {
            out = apply(&out, &nb, s)?.0;
        }
    }
    Ok((out, nb))
}

/// Draws `k` independent views. Draws whose box is mostly out of frame or
/// too small are redrawn up to `max_resamples` times before falling back to
/// the identity view.
pub fn sample_views<R: Rng>(img: &Image, b: &BBox, k: usize, cfg: &AugConfig, rng: &mut R) -> Vec<View> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    (0..k)
        .map(|_| {
            for _ in 0..=cfg.max_resamples {
                let specs = draw_specs(cfg, w, h, rng);
                if specs.is_empty() {
                    break;
                }
                let mut a = Affine::IDENTITY;
                for s in &specs {
                    if let Some(m) = s.affine(w, h) {
                        a = a.then(&m);
                    }
                }
                let full = a.transform_box(b);
                let vis = full.clip(w, h);
                let ok = !vis.is_empty()
                    && vis.area() >= cfg.min_visible * full.area()
                    && vis.w.min(vis.h) >= cfg.min_box_side;
                if !ok {
                    continue;
                }
                if let Ok((image, bbox)) = apply_all(img, b, &specs) {
                    return View { image, bbox, specs };
                }
            }
            View {
                image: img.clone(),
                bbox: *b,
                specs: Vec::new(),
            }
        })
        .collect()
}
