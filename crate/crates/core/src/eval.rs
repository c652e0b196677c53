//! Inference and one-pass evaluation.
//!
//! Tracking is local: each frame is searched in a window around the previous
//! prediction, conditioned on the first-frame template (plus recent
//! prediction crops in multi-reference mode). Metrics pool every frame after
//! the first across sequences.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{crop_image, crop_to_global, global_to_crop, iou, make_crop_window, BBox};
use crate::model::{Predictor, Reference, TargetContext};
use crate::synth::SequenceSample;
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    pub template_factor: f64,
    pub search_factor: f64,
    /// Condition on recent prediction crops as well as the template.
    pub multi_ref: bool,
    /// Weight of the new size estimate against the previous box size
    /// (1 = take the prediction as is).
    pub size_update: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            template_factor: 2.0,
            search_factor: 4.0,
            multi_ref: false,
            size_update: 0.2,
        }
    }
}

impl TrackConfig {
    /// No size smoothing; used with the ground-truth oracle.
    pub fn exact() -> Self {
        Self {
            size_update: 1.0,
            ..Default::default()
        }
    }
}

/// Boxes for frames `1..` of `seq`, global pixels. `hints` are handed to
/// hint-reading predictors only; learned models never see them.
pub fn track_sequence<T: Scalar, P: Predictor<T>>(
    model: &P,
    seq: &SequenceSample,
    cfg: &TrackConfig,
    hints: Option<&[BBox]>,
) -> Result<Vec<BBox>> {
    if seq.is_empty() {
        return invalid(format!("sequence `{}` has no frames", seq.name));
    }
    let mc = model.config();
    let first = seq.frame(0);
    let (fw, fh) = (first.width() as f64, first.height() as f64);
    let init = seq.init_box();
    let twin = make_crop_window(&init, cfg.template_factor, mc.ref_size);
    let template = Reference {
        image: crop_image(&first, &twin),
        bbox: global_to_crop(&init, &twin),
    };
    let mut ctx = TargetContext { refs: vec![template] };
    let mut prev = init;
    let mut out = Vec::with_capacity(seq.len() - 1);
    for t in 1..seq.len() {
        let frame = seq.frame(t);
        let win = make_crop_window(&prev, cfg.search_factor, mc.search_size);
        let search = crop_image(&frame, &win);
        let hint = match (model.uses_hints(), hints) {
            (true, Some(h)) => h.get(t).map(|b| global_to_crop(b, &win)),
            _ => None,
        };
        let v = model.predict_values(&ctx, &search, hint.as_ref())?;
        let mut b = crop_to_global(&v.decode(mc.search_size as f64), &win);
        b.w = prev.w + cfg.size_update * (b.w - prev.w);
        b.h = prev.h + cfg.size_update * (b.h - prev.h);
        let mut b = b.clip(fw, fh);
        if b.is_empty() {
            b = prev;
        }
        if cfg.multi_ref && mc.max_refs > 1 {
            let w = make_crop_window(&b, cfg.template_factor, mc.ref_size);
            ctx.refs.push(Reference {
                image: crop_image(&frame, &w),
                bbox: global_to_crop(&b, &w),
            });
            if ctx.refs.len() > mc.max_refs {
                ctx.refs.remove(1);
            }
        }
        out.push(b);
        prev = b;
    }
    Ok(out)
}

/// Overlap thresholds `0, 0.01, ..., 1`.
pub fn overlap_thresholds() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Normalized-error thresholds `0, 0.005, ..., 0.5`.
pub fn norm_thresholds() -> Vec<f64> {
    (0..=100).map(|i| i as f64 * 0.005).collect()
}

fn nonempty(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return invalid(format!("{name}: empty trace"));
    }
    Ok(())
}

/// IoU values this close to 1 count as perfect overlap.
pub const PERFECT_IOU_EPS: f64 = 1e-9;

/// Whether `iou` succeeds at threshold `t`: strictly above it, except that the
/// final threshold `t = 1` is met by perfect overlap.
pub fn succeeds(iou: f64, t: f64) -> bool {
    if t >= 1.0 {
        iou >= 1.0 - PERFECT_IOU_EPS
    } else {
        iou > t
    }
}

/// Success rate at each overlap threshold.
pub fn success_curve(ious: &[f64]) -> Vec<f64> {
    let n = ious.len().max(1) as f64;
    overlap_thresholds()
        .iter()
        .map(|&t| ious.iter().filter(|&&v| succeeds(v, t)).count() as f64 / n)
        .collect()
}

pub fn success_auc(ious: &[f64]) -> Result<f64> {
    nonempty("success_auc", ious)?;
    let c = success_curve(ious);
    Ok(c.iter().sum::<f64>() / c.len() as f64)
}

/// Fraction of frames with center error within `thr` pixels.
pub fn precision(errs: &[f64], thr: f64) -> Result<f64> {
    nonempty("precision", errs)?;
    Ok(errs.iter().filter(|&&e| e <= thr).count() as f64 / errs.len() as f64)
}

pub fn precision_curve(errs: &[f64], max_px: usize) -> Vec<f64> {
    let n = errs.len().max(1) as f64;
    (0..=max_px)
        .map(|t| errs.iter().filter(|&&e| e <= t as f64).count() as f64 / n)
        .collect()
}

/// Mean precision over the normalized-error thresholds.
pub fn norm_precision(norm_errs: &[f64]) -> Result<f64> {
    nonempty("norm_precision", norm_errs)?;
    let n = norm_errs.len() as f64;
    let th = norm_thresholds();
    Ok(th
        .iter()
        .map(|&t| norm_errs.iter().filter(|&&e| e <= t).count() as f64 / n)
        .sum::<f64>()
        / th.len() as f64)
}

/// `(AO, SR_0.5, SR_0.75)`.
pub fn ao_sr(ious: &[f64]) -> Result<(f64, f64, f64)> {
    nonempty("ao_sr", ious)?;
    let n = ious.len() as f64;
    let sr = |t: f64| ious.iter().filter(|&&v| v > t).count() as f64 / n;
    Ok((ious.iter().sum::<f64>() / n, sr(0.5), sr(0.75)))
}

/// Center distance scaled by the ground-truth size per axis.
pub fn normalized_error(pred: &BBox, gt: &BBox) -> f64 {
    (((pred.cx - gt.cx) / gt.w).powi(2) + ((pred.cy - gt.cy) / gt.h).powi(2)).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceTrace {
    pub iou: Vec<f64>,
    pub err: Vec<f64>,
    pub norm_err: Vec<f64>,
}

impl SequenceTrace {
    pub fn from_boxes(pred: &[BBox], gt: &[BBox]) -> Result<Self> {
        if pred.len() != gt.len() {
            return invalid(format!("{} predictions for {} labels", pred.len(), gt.len()));
        }
        let mut t = SequenceTrace {
            iou: Vec::with_capacity(pred.len()),
            err: Vec::with_capacity(pred.len()),
            norm_err: Vec::with_capacity(pred.len()),
        };
        for (p, g) in pred.iter().zip(gt) {
            t.iou.push(iou(p, g)?);
            t.err.push(p.center_distance(g));
            t.norm_err.push(normalized_error(p, g));
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(rename = "AUC")]
    pub auc: f64,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "P_Norm")]
    pub p_norm: f64,
    #[serde(rename = "AO")]
    pub ao: f64,
    #[serde(rename = "SR_0.5")]
    pub sr50: f64,
    #[serde(rename = "SR_0.75")]
    pub sr75: f64,
}

/// Pooled metrics over all traces.
pub fn aggregate<'a>(traces: impl IntoIterator<Item = &'a SequenceTrace>) -> Result<Aggregate> {
    let (mut ious, mut errs, mut nerrs) = (Vec::new(), Vec::new(), Vec::new());
    for t in traces {
        ious.extend_from_slice(&t.iou);
        errs.extend_from_slice(&t.err);
        nerrs.extend_from_slice(&t.norm_err);
    }
    let (ao, sr50, sr75) = ao_sr(&ious)?;
    Ok(Aggregate {
        auc: success_auc(&ious)?,
        p: precision(&errs, 20.0)?,
        p_norm: norm_precision(&nerrs)?,
        ao,
        sr50,
        sr75,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub ckpt_path: Option<String>,
    pub ckpt_hash: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub oracle: bool,
    pub multi_ref: bool,
    pub size_update: f64,
    pub num_sequences: usize,
    pub num_frames: usize,
    pub timestamp: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub per_sequence: BTreeMap<String, SequenceTrace>,
    pub aggregate: Aggregate,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Worker count from `SSTRACK_THREADS`, else the machine's parallelism.
pub fn thread_count() -> usize {
    std::env::var("SSTRACK_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Tracks every sequence (in parallel) and returns traces keyed by name.
/// Trackers only see the first-frame label; the full labels score the run.
pub fn evaluate<T: Scalar, P: Predictor<T> + Sync>(
    model: &P,
    data: &[SequenceSample],
    cfg: &TrackConfig,
) -> Result<BTreeMap<String, SequenceTrace>> {
    if let Some(s) = data.iter().find(|s| !s.is_labeled() || s.len() < 2) {
        return invalid(format!("sequence `{}` lacks per-frame labels for evaluation", s.name));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let traces: Vec<(String, SequenceTrace)> = pool.install(|| {
        data.par_iter()
            .map(|s| {
                let hints = model.uses_hints().then_some(&s.gt[..]);
                let pred = track_sequence(model, &s.stripped(), cfg, hints)?;
                Ok((s.name.clone(), SequenceTrace::from_boxes(&pred, &s.gt[1..])?))
            })
            .collect::<Result<_>>()
    })?;
    Ok(traces.into_iter().collect())
}

/// Traces of the tracker that repeats the first-frame box.
pub fn static_baseline(data: &[SequenceSample]) -> Result<BTreeMap<String, SequenceTrace>> {
    data.iter()
        .map(|s| {
            let pred = vec![s.init_box(); s.len() - 1];
            Ok((s.name.clone(), SequenceTrace::from_boxes(&pred, &s.gt[1..])?))
        })
        .collect()
}

/// Mean per-frame IoU over pooled traces.
pub fn mean_iou(traces: &BTreeMap<String, SequenceTrace>) -> f64 {
    let (s, n) = traces
        .values()
        .flat_map(|t| t.iou.iter())
        .fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
    s / n.max(1) as f64
}

/// `SOURCE_DATE_EPOCH` when set (reproducible reports), else the clock.
pub fn timestamp() -> String {
    let secs = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse::<u64>().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        });
    format!("{secs}")
}

pub fn sha256_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}
