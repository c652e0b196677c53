//! Training objectives: the tracking loss (focal classification plus GIoU and
//! L1 box regression) and the instance contrastive loss over mask-pooled
//! search tokens.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::BBox;
use crate::model::PredictionMap;
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Probability clamp applied before the focal loss logs.
pub const SCORE_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContrastiveVariant {
    /// Positive pair included in the softmax denominator.
    Standard,
    /// Denominator over negatives only; the loss can go negative.
    AsWritten,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Exponent of the `(1 - y)` penalty on soft negatives.
    pub focal_beta: f64,
    pub weight_focal: f64,
    pub weight_giou: f64,
    pub weight_l1: f64,
    pub tau: f64,
    pub contrastive_variant: ContrastiveVariant,
    pub use_contrastive: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            focal_beta: 4.0,
            weight_focal: 1.0,
            weight_giou: 2.0,
            weight_l1: 5.0,
            tau: 0.07,
            contrastive_variant: ContrastiveVariant::Standard,
            use_contrastive: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return invalid(format!("tau must be positive, got {}", self.tau));
        }
        let w = [self.weight_focal, self.weight_giou, self.weight_l1, self.focal_alpha, self.focal_gamma];
        if w.iter().any(|&x| !(x >= 0.0)) {
            return invalid("loss weights and focal parameters must be non-negative");
        }
        Ok(())
    }
}

/// Dense head targets for one box.
#[derive(Clone, Debug, PartialEq)]
pub struct GtTargets {
    pub grid: usize,
    /// Gaussian bump, 1.0 at the center cell.
    pub score: Vec<f64>,
    /// Normalized `(w, h)` at the center cell, zero elsewhere.
    pub size: Vec<f64>,
    /// Sub-cell `(x, y)` offset at the center cell, zero elsewhere.
    pub offset: Vec<f64>,
    pub pos_mask: Vec<bool>,
    pub center: Option<usize>,
}

/// Cell holding `(x, y)` on a `grid`-square map over a `frame_size` frame.
pub fn cell_of(x: f64, y: f64, grid: usize, frame_size: f64) -> (usize, usize) {
    let stride = frame_size / grid as f64;
    let clampi = |v: f64| (v / stride).floor().clamp(0.0, (grid - 1) as f64) as usize;
    (clampi(y), clampi(x))
}

pub fn encode_gt(b: &BBox, grid: usize, frame_size: f64) -> GtTargets {
    let n = grid * grid;
    let mut t = GtTargets {
        grid,
        score: vec![0.0; n],
        size: vec![0.0; 2 * n],
        offset: vec![0.0; 2 * n],
        pos_mask: vec![false; n],
        center: None,
    };
    if b.is_empty() {
        return t;
    }
    let stride = frame_size / grid as f64;
    let (r0, c0) = cell_of(b.cx, b.cy, grid, frame_size);
    let c = r0 * grid + c0;
    for r in 0..grid {
        for k in 0..grid {
            let d2 = (r as f64 - r0 as f64).powi(2) + (k as f64 - c0 as f64).powi(2);
            t.score[r * grid + k] = (-d2 / 2.0).exp();
        }
    }
    let below_one = 1.0 - 1e-9;
    t.offset[2 * c] = (b.cx / stride - c0 as f64).clamp(0.0, below_one);
    t.offset[2 * c + 1] = (b.cy / stride - r0 as f64).clamp(0.0, below_one);
    t.size[2 * c] = b.w / frame_size;
    t.size[2 * c + 1] = b.h / frame_size;
    t.pos_mask[c] = true;
    t.center = Some(c);
    t
}

/// Focal loss with Gaussian-penalized negatives, normalized by the positive
/// count. Positives are the cells where `pos_mask` is set.
pub fn focal_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    score: Var,
    target: &[f64],
    pos_mask: &[bool],
    cfg: &LossConfig,
) -> Result<Var> {
    let n = g.value(score).len();
    if target.len() != n || pos_mask.len() != n {
        return Err(Error::Shape {
            op: "focal_loss",
            lhs: g.shape(score).to_vec(),
            rhs: vec![target.len()],
        });
    }
    let shape = g.shape(score).to_vec();
    let p = g.clamp(score, SCORE_EPS, 1.0 - SCORE_EPS);
    let log_p = g.log(p);
    let one_minus = g.rsub_scalar(1.0, p);
    let log_1mp = g.log(one_minus);
    let pos_w = g.powf(one_minus, cfg.focal_gamma);
    let neg_w = g.powf(p, cfg.focal_gamma);
    let pos = g.mul(pos_w, log_p)?;
    let neg = g.mul(neg_w, log_1mp)?;
    let pos_coef: Vec<T> = pos_mask
        .iter()
        .map(|&m| T::of(if m { -cfg.focal_alpha } else { 0.0 }))
        .collect();
    let neg_coef: Vec<T> = pos_mask
        .iter()
        .zip(target)
        .map(|(&m, &y)| {
            T::of(if m {
                0.0
            } else {
                -(1.0 - cfg.focal_alpha) * (1.0 - y).powf(cfg.focal_beta)
            })
        })
        .collect();
    let pc = g.constant(Tensor::new(shape.clone(), pos_coef)?);
    let nc = g.constant(Tensor::new(shape, neg_coef)?);
    let pos = g.mul(pos, pc)?;
    let neg = g.mul(neg, nc)?;
    let all = g.add(pos, neg)?;
    let s = g.sum(all);
    let npos = pos_mask.iter().filter(|&&m| m).count().max(1);
    Ok(g.scale(s, 1.0 / npos as f64))
}

/// Scalar focal loss; cells with target exactly 1 are positives.
pub fn focal_loss(score: &[f64], target: &[f64], cfg: &LossConfig) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let s = g.constant(Tensor::new(vec![score.len()], score.to_vec())?);
    let mask: Vec<bool> = target.iter().map(|&y| y == 1.0).collect();
    let l = focal_loss_graph(&mut g, s, target, &mask, cfg)?;
    Ok(g.value(l).item())
}

fn split4<T: Scalar>(g: &mut Graph<T>, b: Var) -> Result<[Var; 4]> {
    Ok([
        g.slice_cols(b, 0, 1)?,
        g.slice_cols(b, 1, 1)?,
        g.slice_cols(b, 2, 1)?,
        g.slice_cols(b, 3, 1)?,
    ])
}

fn corners<T: Scalar>(g: &mut Graph<T>, b: Var) -> Result<[Var; 4]> {
    let [cx, cy, w, h] = split4(g, b)?;
    let hw = g.scale(w, 0.5);
    let hh = g.scale(h, 0.5);
    Ok([g.sub(cx, hw)?, g.sub(cy, hh)?, g.add(cx, hw)?, g.add(cy, hh)?])
}

/// Row-wise GIoU of `[n, 4]` cxcywh boxes.
pub fn giou_graph<T: Scalar>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    let [px1, py1, px2, py2] = corners(g, pred)?;
    let [gx1, gy1, gx2, gy2] = corners(g, gt)?;
    let zero = g.constant(Tensor::zeros(g.shape(px1)));
    let extent = |g: &mut Graph<T>, lo1: Var, lo2: Var, hi1: Var, hi2: Var, inner: bool| -> Result<Var> {
        if inner {
            let hi = g.minimum(hi1, hi2)?;
            let lo = g.maximum(lo1, lo2)?;
            let d = g.sub(hi, lo)?;
            g.maximum(d, zero)
        } else {
            let hi = g.maximum(hi1, hi2)?;
            let lo = g.minimum(lo1, lo2)?;
            g.sub(hi, lo)
        }
    };
    let iw = extent(g, px1, gx1, px2, gx2, true)?;
    let ih = extent(g, py1, gy1, py2, gy2, true)?;
    let inter = g.mul(iw, ih)?;
    let [_, _, pw, ph] = split4(g, pred)?;
    let [_, _, gw, gh] = split4(g, gt)?;
    let pa = g.mul(pw, ph)?;
    let ga = g.mul(gw, gh)?;
    let sa = g.add(pa, ga)?;
    let union = g.sub(sa, inter)?;
    let iou = g.div(inter, union)?;
    let cw = extent(g, px1, gx1, px2, gx2, false)?;
    let ch = extent(g, py1, gy1, py2, gy2, false)?;
    let enc = g.mul(cw, ch)?;
    let gap = g.sub(enc, union)?;
    let frac = g.div(gap, enc)?;
    g.sub(iou, frac)
}

/// `weight_giou * mean(1 - giou) + weight_l1 * mean|pred - gt|` over
/// normalized `[n, 4]` cxcywh boxes.
pub fn regression_loss_graph<T: Scalar>(g: &mut Graph<T>, pred: Var, gt: Var, cfg: &LossConfig) -> Result<Var> {
    let gi = giou_graph(g, pred, gt)?;
    let m = g.mean(gi);
    let lg = g.rsub_scalar(1.0, m);
    let d = g.sub(pred, gt)?;
    let a = g.abs(d);
    let l1 = g.mean(a);
    let lg = g.scale(lg, cfg.weight_giou);
    let l1 = g.scale(l1, cfg.weight_l1);
    g.add(lg, l1)
}

/// Regression loss value; skipped (0) when the label is empty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionTerm {
    pub value: f64,
    pub skipped: bool,
}

/// Box regression loss between two boxes of the same `frame_size` frame.
pub fn regression_loss(pred: &BBox, gt: &BBox, frame_size: f64, cfg: &LossConfig) -> Result<RegressionTerm> {
    if gt.is_empty() {
        return Ok(RegressionTerm {
            value: 0.0,
            skipped: true,
        });
    }
    if pred.is_empty() {
        return invalid("regression_loss: empty prediction");
    }
    if pred.frame != gt.frame {
        return invalid("regression_loss: boxes in different coordinate frames");
    }
    let norm = |b: &BBox| [b.cx, b.cy, b.w, b.h].map(|v| v / frame_size).to_vec();
    let mut g = Graph::<f64>::new();
    let p = g.constant(Tensor::new(vec![1, 4], norm(pred))?);
    let t = g.constant(Tensor::new(vec![1, 4], norm(gt))?);
    let l = regression_loss_graph(&mut g, p, t, cfg)?;
    Ok(RegressionTerm {
        value: g.value(l).item(),
        skipped: false,
    })
}

/// Tracking loss of one prediction map against a box in search pixels.
/// Returns `None` when the label is empty.
pub fn tracking_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    pm: &PredictionMap,
    gt: &BBox,
    frame_size: f64,
    cfg: &LossConfig,
) -> Result<Option<Var>> {
    let t = encode_gt(gt, pm.grid, frame_size);
    let Some(c) = t.center else { return Ok(None) };
    let focal = focal_loss_graph(g, pm.score, &t.score, &t.pos_mask, cfg)?;
    let grid = pm.grid as f64;
    let (row, col) = ((c / pm.grid) as f64, (c % pm.grid) as f64);
    let off = g.gather(pm.offset, vec![2 * c, 2 * c + 1])?;
    let cell = g.constant(Tensor::from_f64(vec![2], &[col, row])?);
    let center = g.add(off, cell)?;
    let center = g.scale(center, 1.0 / grid);
    let size = g.gather(pm.size, vec![2 * c, 2 * c + 1])?;
    let pred = g.concat_cols(&[center, size])?;
    let pred = g.reshape(pred, vec![1, 4])?;
    let gtv = [gt.cx, gt.cy, gt.w, gt.h].map(|v| v / frame_size);
    let gtv = g.constant(Tensor::from_f64(vec![1, 4], &gtv)?);
    let reg = regression_loss_graph(g, pred, gtv, cfg)?;
    let focal = g.scale(focal, cfg.weight_focal);
    Ok(Some(g.add(focal, reg)?))
}

/// Cells whose centers fall inside `b`; the cell containing the box center
/// when none do.
pub fn pooling_mask(b: &BBox, grid: usize, frame_size: f64) -> Vec<bool> {
    let stride = frame_size / grid as f64;
    let mut m: Vec<bool> = (0..grid * grid)
        .map(|k| {
            let x = ((k % grid) as f64 + 0.5) * stride;
            let y = ((k / grid) as f64 + 0.5) * stride;
            b.contains(x, y)
        })
        .collect();
    if !m.iter().any(|&v| v) {
        let (r, c) = cell_of(b.cx, b.cy, grid, frame_size);
        m[r * grid + c] = true;
    }
    m
}

/// Mean of the search tokens selected by the box mask, `[1, D]`.
pub fn mask_pool<T: Scalar>(g: &mut Graph<T>, tokens: Var, b: &BBox, grid: usize, frame_size: f64) -> Result<Var> {
    let m = pooling_mask(b, grid, frame_size);
    let cnt = m.iter().filter(|&&v| v).count() as f64;
    let w: Vec<T> = m.iter().map(|&v| T::of(if v { 1.0 / cnt } else { 0.0 })).collect();
    let w = g.constant(Tensor::new(vec![1, grid * grid], w)?);
    g.matmul(w, tokens)
}

/// Pooled representation of one view of one instance.
#[derive(Clone, Copy, Debug)]
pub struct InstanceEmbedding {
    /// `[1, D]` (or `[D]`).
    pub vector: Var,
    pub instance_id: usize,
    pub view_id: usize,
}

/// Anchors, their positive partner and their denominator sets.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastivePlan {
    pub anchors: Vec<usize>,
    pub positive: Vec<usize>,
    /// Row-major `N x N` denominator mask (negatives, plus the positive in
    /// the standard variant).
    pub denominator: Vec<bool>,
}

/// Every embedding whose instance has another view is an anchor; its
/// positive is the next view of the same instance (round-robin by view id)
/// and its negatives are all embeddings of other instances.
pub fn contrastive_plan(ids: &[(usize, usize)], variant: ContrastiveVariant) -> Option<ContrastivePlan> {
    let n = ids.len();
    let mut anchors = Vec::new();
    let mut positive = Vec::new();
    let mut denominator = vec![false; n * n];
    for i in 0..n {
        let (inst, _) = ids[i];
        let mut same: Vec<usize> = (0..n).filter(|&j| ids[j].0 == inst).collect();
        same.sort_by_key(|&j| (ids[j].1, j));
        let has_neg = ids.iter().any(|&(other, _)| other != inst);
        if same.len() < 2 || !has_neg {
            continue;
        }
        let pos_in = same.iter().position(|&j| j == i).unwrap();
        let p = same[(pos_in + 1) % same.len()];
        anchors.push(i);
        positive.push(p);
        for j in 0..n {
            if ids[j].0 != inst || (variant == ContrastiveVariant::Standard && j == p) {
                denominator[i * n + j] = true;
            }
        }
    }
    if anchors.is_empty() {
        return None;
    }
    // Rows of non-anchors still need a selection for the log-sum-exp.
    for i in 0..n {
        if !anchors.contains(&i) {
            denominator[i * n + i] = true;
        }
    }
    Some(ContrastivePlan {
        anchors,
        positive,
        denominator,
    })
}

/// Instance contrastive loss averaged over anchors. `None` means skipped: no
/// embedding has both a positive and a negative.
pub fn contrastive_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    embs: &[InstanceEmbedding],
    cfg: &LossConfig,
) -> Result<Option<Var>> {
    let ids: Vec<(usize, usize)> = embs.iter().map(|e| (e.instance_id, e.view_id)).collect();
    let Some(plan) = contrastive_plan(&ids, cfg.contrastive_variant) else {
        return Ok(None);
    };
    let n = embs.len();
    let d = g.value(embs[0].vector).len();
    let rows = embs
        .iter()
        .map(|e| g.reshape(e.vector, vec![1, d]))
        .collect::<Result<Vec<_>>>()?;
    let z = g.concat_rows(&rows)?;
    let z = g
        .normalize_rows(z)
        .map_err(|_| Error::Invalid("contrastive_loss: zero-norm embedding".into()))?;
    let zt = g.transpose(z)?;
    let sim = g.matmul(z, zt)?;
    let logits = g.scale(sim, 1.0 / cfg.tau);
    let lse = g.masked_logsumexp(logits, plan.denominator.clone())?;
    let lse = g.gather(lse, plan.anchors.clone())?;
    let pos_idx = plan.anchors.iter().zip(&plan.positive).map(|(&a, &p)| a * n + p).collect();
    let pos = g.gather(logits, pos_idx)?;
    let per_anchor = g.sub(lse, pos)?;
    Ok(Some(g.mean(per_anchor)))
}

/// Contrastive loss over plain vectors; returns `(loss, skipped)`.
pub fn contrastive_loss(vectors: &[(Vec<f64>, usize, usize)], cfg: &LossConfig) -> Result<(f64, bool)> {
    let mut g = Graph::<f64>::new();
    let embs: Vec<InstanceEmbedding> = vectors
        .iter()
        .map(|(v, inst, view)| {
            Ok(InstanceEmbedding {
                vector: g.constant(Tensor::new(vec![1, v.len()], v.clone())?),
                instance_id: *inst,
                view_id: *view,
            })
        })
        .collect::<Result<_>>()?;
    match contrastive_loss_graph(&mut g, &embs, cfg)? {
        Some(l) => Ok((g.value(l).item(), false)),
        None => Ok((0.0, true)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MapValues;

    #[test]
    fn centered_box_marks_middle_cell() {
        let t = encode_gt(&BBox::new(64.0, 64.0, 20.0, 30.0), 8, 128.0);
        assert_eq!(t.center, Some(4 * 8 + 4));
        assert!(t.pos_mask[36]);
        assert_eq!(t.score[36], 1.0);
        assert!((t.score[37] - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(t.pos_mask.iter().filter(|&&m| m).count(), 1);
    }

    #[test]
    fn empty_box_gives_zero_targets() {
        let t = encode_gt(&BBox::EMPTY, 8, 128.0);
        assert!(t.center.is_none());
        assert!(t.score.iter().all(|&v| v == 0.0));
        assert!(!t.pos_mask.iter().any(|&m| m));
    }

    #[test]
    fn distinct_boxes_distinct_cells() {
        let a = encode_gt(&BBox::new(10.0, 10.0, 8.0, 8.0), 8, 128.0);
        let b = encode_gt(&BBox::new(100.0, 40.0, 8.0, 8.0), 8, 128.0);
        assert_ne!(a.center, b.center);
        let c = encode_gt(&BBox::new(12.0, 14.0, 8.0, 8.0), 8, 128.0);
        assert_eq!(a.center, c.center);
    }

    #[test]
    fn decode_inverts_encode() {
        for &(cx, cy, w, h) in &[(64.0, 64.0, 20.0, 30.0), (3.3, 120.9, 7.0, 5.5), (88.0, 17.25, 40.0, 12.0)] {
            let b = BBox::new(cx, cy, w, h);
            let t = encode_gt(&b, 8, 128.0);
            let mut score = vec![0.0; 64];
            score[t.center.unwrap()] = 1.0;
            let v = MapValues {
                grid: 8,
                score,
                size: t.size.clone(),
                offset: t.offset.clone(),
            };
            let d = v.decode(128.0);
            let quantum = 16.0 * 1e-6;
            assert!((d.cx - cx).abs() < quantum && (d.cy - cy).abs() < quantum);
            assert!((d.w - w).abs() < 1e-9 && (d.h - h).abs() < 1e-9);
        }
    }

    #[test]
    fn focal_examples() {
        let cfg = LossConfig::default();
        let mut target = vec![0.0; 16];
        target[5] = 1.0;
        assert!(focal_loss(&target, &target, &cfg).unwrap() < 1e-4);
        let l = focal_loss(&[0.5], &[1.0], &cfg).unwrap();
        let expected = -0.25 * 0.25 * 0.5f64.ln();
        assert!((l - expected).abs() < 1e-12 && (l - 0.0433).abs() < 1e-4);
        let zeros = vec![0.0; 16];
        assert!(focal_loss(&zeros, &zeros, &cfg).unwrap() < 1e-9);
        assert!(focal_loss(&zeros, &zeros[..3], &cfg).is_err());
    }

    #[test]
    fn regression_examples() {
        let cfg = LossConfig::default();
        let gt = BBox::new(40.0, 50.0, 20.0, 10.0);
        let r = regression_loss(&gt, &gt, 128.0, &cfg).unwrap();
        assert!(r.value.abs() < 1e-15 && !r.skipped);

        let a = BBox::from_xyxy(0.0, 0.0, 1.0, 1.0);
        let b = BBox::from_xyxy(2.0, 2.0, 3.0, 3.0);
        let frame = 4.0;
        let l1 = ((2.0 / frame) + (2.0 / frame)) / 4.0;
        let expected = 2.0 * (1.0 + 7.0 / 9.0) + 5.0 * l1;
        let r = regression_loss(&a, &b, frame, &cfg).unwrap();
        assert!((r.value - expected).abs() < 1e-12);

        let s = regression_loss(&a, &BBox::EMPTY, frame, &cfg).unwrap();
        assert!(s.skipped && s.value == 0.0);
    }

    #[test]
    fn regression_decreases_toward_target() {
        let cfg = LossConfig::default();
        let gt = BBox::new(64.0, 64.0, 24.0, 24.0);
        let start = BBox::new(20.0, 90.0, 24.0, 24.0);
        let vals: Vec<f64> = (0..5)
            .map(|k| {
                let t = k as f64 / 4.0;
                let p = BBox::new(start.cx + t * (gt.cx - start.cx), start.cy + t * (gt.cy - start.cy), 24.0, 24.0);
                regression_loss(&p, &gt, 128.0, &cfg).unwrap().value
            })
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]), "{vals:?}");
    }

    #[test]
    fn mask_pool_examples() {
        let grid = 4;
        let tokens: Vec<f64> = (0..16 * 2).map(|i| i as f64).collect();
        let mut g = Graph::<f64>::new();
        let t = g.constant(Tensor::new(vec![16, 2], tokens.clone()).unwrap());
        let full = mask_pool(&mut g, t, &BBox::new(32.0, 32.0, 64.0, 64.0), grid, 64.0).unwrap();
        assert_eq!(g.value(full).data(), &[15.0, 16.0]);
        // cells (0,0) and (0,1): centers (8,8) and (24,8)
        let two = mask_pool(&mut g, t, &BBox::from_xyxy(4.0, 4.0, 28.0, 12.0), grid, 64.0).unwrap();
        assert_eq!(g.value(two).data(), &[1.0, 2.0]);
        let c = g.constant(Tensor::full(&[16, 2], 0.7));
        let tiny = mask_pool(&mut g, c, &BBox::new(30.0, 30.0, 1.0, 1.0), grid, 64.0).unwrap();
        assert!(g.value(tiny).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    fn cfg_variant(v: ContrastiveVariant, tau: f64) -> LossConfig {
        LossConfig {
            contrastive_variant: v,
            tau,
            ..Default::default()
        }
    }

    #[test]
    fn uniform_similarity_gives_log_three() {
        let e = vec![0.3, -1.2, 0.5];
        let set = vec![(e.clone(), 0, 0), (e.clone(), 0, 1), (e.clone(), 1, 0), (e, 1, 1)];
        for tau in [0.07, 1.0, 3.0] {
            let (l, skipped) = contrastive_loss(&set, &cfg_variant(ContrastiveVariant::Standard, tau)).unwrap();
            assert!(!skipped);
            assert!((l - 3f64.ln()).abs() < 1e-9, "tau {tau}: {l}");
        }
    }

    #[test]
    fn worked_pair_for_both_variants() {
        let e = vec![1.0, 2.0];
        let ne = vec![-1.0, -2.0];
        let set = vec![(e.clone(), 0, 0), (e, 0, 1), (ne, 1, 0)];
        let (aw, _) = contrastive_loss(&set, &cfg_variant(ContrastiveVariant::AsWritten, 1.0)).unwrap();
        assert!((aw + 2.0).abs() < 1e-12, "{aw}");
        let (st, _) = contrastive_loss(&set, &cfg_variant(ContrastiveVariant::Standard, 1.0)).unwrap();
        assert!((st - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!((st - 0.1269).abs() < 1e-4);
    }

    #[test]
    fn contrastive_skips_without_pairs() {
        let cfg = LossConfig::default();
        let one_instance = vec![(vec![1.0], 0, 0), (vec![2.0], 0, 1)];
        assert_eq!(contrastive_loss(&one_instance, &cfg).unwrap(), (0.0, true));
        let singletons = vec![(vec![1.0], 0, 0), (vec![2.0], 1, 0)];
        assert_eq!(contrastive_loss(&singletons, &cfg).unwrap(), (0.0, true));
    }

    #[test]
    fn zero_norm_embedding_is_an_error() {
        let set = vec![(vec![0.0, 0.0], 0, 0), (vec![1.0, 0.0], 0, 1), (vec![0.0, 1.0], 1, 0), (vec![1.0, 1.0], 1, 1)];
        assert!(contrastive_loss(&set, &LossConfig::default()).is_err());
    }

    #[test]
    fn positives_are_round_robin() {
        let plan = contrastive_plan(&[(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)], ContrastiveVariant::Standard).unwrap();
        assert_eq!(plan.anchors, vec![0, 1, 2, 3, 4]);
        assert_eq!(plan.positive, vec![1, 2, 0, 4, 3]);
    }

    #[test]
    fn standard_loss_falls_as_positive_aligns() {
        let cfg = cfg_variant(ContrastiveVariant::Standard, 0.5);
        let anchor = vec![1.0, 0.0];
        let neg = vec![0.0, 1.0];
        let mut prev = f64::INFINITY;
        for angle in [1.2f64, 0.6, 0.1] {
            let pos = vec![angle.cos(), angle.sin() * -1.0];
            let set = vec![(anchor.clone(), 0, 0), (pos, 0, 1), (neg.clone(), 1, 0)];
            // only anchor 0's term changes with the angle through its positive
            let (l, _) = contrastive_loss(&set, &cfg).unwrap();
            assert!(l >= 0.0);
            assert!(l < prev, "{l} !< {prev}");
            prev = l;
        }
    }

    #[test]
    fn contrastive_is_scale_invariant() {
        let cfg = LossConfig::default();
        let base = vec![
            (vec![0.2, 0.9, -0.4], 0, 0),
            (vec![0.3, 0.7, -0.1], 0, 1),
            (vec![-0.5, 0.1, 0.8], 1, 0),
            (vec![-0.2, 0.4, 0.9], 1, 1),
        ];
        let scaled: Vec<_> = base
            .iter()
            .map(|(v, i, j)| (v.iter().map(|x| x * 37.5).collect(), *i, *j))
            .collect();
        let (a, _) = contrastive_loss(&base, &cfg).unwrap();
        let (b, _) = contrastive_loss(&scaled, &cfg).unwrap();
        assert!((a - b).abs() < 1e-10);
    }
}
