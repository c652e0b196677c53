//! Boxes, overlap measures and square crop windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Smallest crop side in global pixels.
pub const MIN_CROP_SIDE: f64 = 8.0;

/// Coordinate frame a box lives in.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub enum CoordFrame {
    /// Pixels of the full frame.
    #[default]
    Global,
    /// Output pixels of a crop window.
    Crop(CropWindow),
}

/// Axis-aligned box, center/size form, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default)]
    pub frame: CoordFrame,
}

impl BBox {
    /// Marker for a failed prediction or missing label.
    pub const EMPTY: BBox = BBox {
        cx: 0.0,
        cy: 0.0,
        w: 0.0,
        h: 0.0,
        frame: CoordFrame::Global,
    };

    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            cx,
            cy,
            w,
            h,
            frame: CoordFrame::Global,
        }
    }

    pub fn in_frame(self, frame: CoordFrame) -> Self {
        Self { frame, ..self }
    }

    pub fn from_xyxy(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    /// Top-left / size form used by `groundtruth.txt`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x + w / 2.0, y + h / 2.0, w, h)
    }

    pub fn xyxy(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }

    pub fn xywh(&self) -> [f64; 4] {
        [self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.cx.is_finite() && self.cy.is_finite() && self.w.is_finite() && self.h.is_finite()
    }

    pub fn is_empty(&self) -> bool {
        !self.is_valid()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let [x1, y1, x2, y2] = self.xyxy();
        x >= x1 && x <= x2 && y >= y1 && y <= y2
    }

    /// Intersection with `[0, w] x [0, h]`; may come back empty.
    pub fn clip(&self, w: f64, h: f64) -> BBox {
        let [x1, y1, x2, y2] = self.xyxy();
        let (x1, y1) = (x1.max(0.0), y1.max(0.0));
        let (x2, y2) = (x2.min(w), y2.min(h));
        if x2 <= x1 || y2 <= y1 {
            return BBox::EMPTY.in_frame(self.frame);
        }
        BBox::from_xyxy(x1, y1, x2, y2).in_frame(self.frame)
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        ((self.cx - other.cx).powi(2) + (self.cy - other.cy).powi(2)).sqrt()
    }
}

fn same_frame(op: &str, a: &BBox, b: &BBox) -> Result<()> {
    if a.frame != b.frame {
        return Err(Error::Invalid(format!("{op}: boxes in different coordinate frames")));
    }
    Ok(())
}

fn inter_union(a: &BBox, b: &BBox) -> (f64, f64) {
    let [ax1, ay1, ax2, ay2] = a.xyxy();
    let [bx1, by1, bx2, by2] = b.xyxy();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    (inter, a.area() + b.area() - inter)
}

/// Intersection over union. Empty operands give 0.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    same_frame("iou", a, b)?;
    if a.is_empty() || b.is_empty() {
        return Ok(0.0);
    }
    let (inter, union) = inter_union(a, b);
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Generalized IoU: `iou - (enclosing - union) / enclosing`.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64> {
    same_frame("giou", a, b)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("giou: empty box".into()));
    }
    let (inter, union) = inter_union(a, b);
    let [ax1, ay1, ax2, ay2] = a.xyxy();
    let [bx1, by1, bx2, by2] = b.xyxy();
    let enclosing = (ax2.max(bx2) - ax1.min(bx1)) * (ay2.max(by2) - ay1.min(by1));
    Ok(inter / union - (enclosing - union) / enclosing)
}

/// Square window in global pixels, resampled to `out_size` output pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropWindow {
    pub cx: f64,
    pub cy: f64,
    pub side: f64,
    pub out_size: usize,
}

impl CropWindow {
    /// Output pixels per global pixel.
    pub fn scale(&self) -> f64 {
        self.out_size as f64 / self.side
    }

    pub fn is_valid(&self) -> bool {
        let s = self.scale();
        self.side > 0.0 && self.out_size > 0 && s.is_finite() && s > 0.0
    }

    fn origin(&self) -> (f64, f64) {
        (self.cx - self.side / 2.0, self.cy - self.side / 2.0)
    }

    /// Window covering the whole image, padded to square.
    pub fn full_frame(width: usize, height: usize, out_size: usize) -> Self {
        Self {
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            side: width.max(height) as f64,
            out_size,
        }
    }
}

/// Square window centered on `b` with side `context_factor * sqrt(w * h)`.
pub fn make_crop_window(b: &BBox, context_factor: f64, out_size: usize) -> CropWindow {
    let side = (context_factor * (b.w * b.h).sqrt()).max(MIN_CROP_SIDE);
    CropWindow {
        cx: b.cx,
        cy: b.cy,
        side,
        out_size,
    }
}

/// Bilinear crop; regions outside the frame take the per-channel mean.
pub fn crop_image(frame: &Image, win: &CropWindow) -> Image {
    let pad = frame.channel_means();
    let (x0, y0) = win.origin();
    let s = win.scale();
    frame.warp(win.out_size, win.out_size, &pad, |u, v| (x0 + u / s, y0 + v / s))
}

pub fn global_to_crop(b: &BBox, win: &CropWindow) -> BBox {
    let (x0, y0) = win.origin();
    let s = win.scale();
    BBox {
        cx: (b.cx - x0) * s,
        cy: (b.cy - y0) * s,
        w: b.w * s,
        h: b.h * s,
        frame: CoordFrame::Crop(*win),
    }
}

pub fn crop_to_global(b: &BBox, win: &CropWindow) -> BBox {
    let (x0, y0) = win.origin();
    let s = win.scale();
    BBox {
        cx: b.cx / s + x0,
        cy: b.cy / s + y0,
        w: b.w / s,
        h: b.h / s,
        frame: CoordFrame::Global,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn iou_examples() {
        let b = BBox::from_xyxy(3.0, 4.0, 9.0, 7.5);
        assert_eq!(iou(&b, &b).unwrap(), 1.0);
        let a = BBox::from_xyxy(0.0, 0.0, 2.0, 2.0);
        let c = BBox::from_xyxy(1.0, 1.0, 3.0, 3.0);
        assert!((iou(&a, &c).unwrap() - 1.0 / 7.0).abs() < 1e-12);
        let d = BBox::from_xyxy(5.0, 5.0, 6.0, 6.0);
        assert_eq!(iou(&a, &d).unwrap(), 0.0);
        assert_eq!(iou(&a, &BBox::EMPTY).unwrap(), 0.0);
    }

    #[test]
    fn giou_examples() {
        let b = BBox::from_xyxy(3.0, 4.0, 9.0, 7.5);
        assert_eq!(giou(&b, &b).unwrap(), 1.0);
        let a = BBox::from_xyxy(0.0, 0.0, 1.0, 1.0);
        let c = BBox::from_xyxy(2.0, 2.0, 3.0, 3.0);
        assert!((giou(&a, &c).unwrap() + 7.0 / 9.0).abs() < 1e-12);
        let a = BBox::from_xyxy(0.0, 0.0, 2.0, 2.0);
        let c = BBox::from_xyxy(1.0, 1.0, 3.0, 3.0);
        assert!((giou(&a, &c).unwrap() - (1.0 / 7.0 - 2.0 / 9.0)).abs() < 1e-12);
        assert!(giou(&a, &BBox::EMPTY).is_err());
    }

    #[test]
    fn frame_mismatch_is_rejected() {
        let a = BBox::new(5.0, 5.0, 2.0, 2.0);
        let win = make_crop_window(&a, 2.0, 16);
        let b = global_to_crop(&a, &win);
        assert!(iou(&a, &b).is_err());
    }

    #[test]
    fn crop_window_examples() {
        let b = BBox::new(50.0, 50.0, 16.0, 16.0);
        let w = make_crop_window(&b, 2.0, 64);
        assert_eq!((w.cx, w.cy, w.side), (50.0, 50.0, 32.0));
        assert_eq!(make_crop_window(&b, 4.0, 64).side, 64.0);
        let tiny = BBox::new(50.0, 50.0, 1.0, 1.0);
        assert_eq!(make_crop_window(&tiny, 2.0, 64).side, 8.0);
    }

    #[test]
    fn full_window_crop_is_identity() {
        let raw: Vec<u8> = (0..16 * 16 * 3).map(|i| (i * 7 % 251) as u8).collect();
        let img = Image::from_u8(16, 16, 3, &raw).unwrap();
        let win = CropWindow::full_frame(16, 16, 16);
        assert_eq!(crop_image(&img, &win), img);
    }

    #[test]
    fn centered_box_maps_to_crop_center() {
        let b = BBox::new(37.25, 81.5, 12.0, 20.0);
        let win = make_crop_window(&b, 4.0, 128);
        let c = global_to_crop(&b, &win);
        assert!((c.cx - 64.0).abs() < 1e-12 && (c.cy - 64.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_frame_pads_with_mean() {
        let img = Image::filled(8, 8, &[0.2, 0.4, 0.6]);
        let win = CropWindow {
            cx: -100.0,
            cy: -100.0,
            side: 10.0,
            out_size: 4,
        };
        let out = crop_image(&img, &win);
        for px in out.data().chunks(3) {
            assert!((px[0] - 0.2).abs() < 1e-6 && (px[2] - 0.6).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn crop_round_trip(cx in -50.0f64..300.0, cy in -50.0f64..300.0, w in 0.5f64..120.0, h in 0.5f64..120.0,
                           wx in 0.0f64..256.0, wy in 0.0f64..256.0, side in 8.0f64..400.0, out in 16usize..256) {
            let b = BBox::new(cx, cy, w, h);
            let win = CropWindow { cx: wx, cy: wy, side, out_size: out };
            let r = crop_to_global(&global_to_crop(&b, &win), &win);
            prop_assert!((r.cx - b.cx).abs() < 1e-9 && (r.cy - b.cy).abs() < 1e-9);
            prop_assert!((r.w - b.w).abs() < 1e-9 && (r.h - b.h).abs() < 1e-9);
        }

        #[test]
        fn giou_bounded_by_iou(a in (0.0f64..60.0, 0.0f64..60.0, 0.5f64..30.0, 0.5f64..30.0),
                               b in (0.0f64..60.0, 0.0f64..60.0, 0.5f64..30.0, 0.5f64..30.0)) {
            let a = BBox::new(a.0, a.1, a.2, a.3);
            let b = BBox::new(b.0, b.1, b.2, b.3);
            let (i, g) = (iou(&a, &b).unwrap(), giou(&a, &b).unwrap());
            prop_assert!(g <= i + 1e-12);
            prop_assert!(g > -1.0 && g <= 1.0);
            prop_assert!((i - iou(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((g - giou(&b, &a).unwrap()).abs() < 1e-12);
        }
    }
}
