//! Cycle training.
//!
//! Forward tracking runs the tracker over full resized frames starting from
//! the first-frame annotation and crops a new reference around every
//! prediction. Backward tracking conditions on those crops and localizes the
//! target in augmented views of the first frame, whose box is known, so the
//! transformed first-frame box supervises the whole cycle. Pooled search
//! tokens of the views feed the instance contrastive loss, and the two
//! losses are summed with unit weights.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{sample_views, AugConfig, AugSpec, View};
use crate::config::RunConfig;
use crate::error::{invalid, Error, Result};
use crate::geometry::{crop_image, crop_to_global, global_to_crop, make_crop_window, BBox, CropWindow};
use crate::image::Image;
use crate::losses::{contrastive_loss_graph, mask_pool, tracking_loss_graph, InstanceEmbedding, LossConfig};
use crate::model::{PredictionMap, Predictor, Reference, TargetContext, Tracker};
use crate::synth::SequenceSample;
use crate::tensor::{
    read_checkpoint, write_checkpoint, AdamW, AdamWConfig, Checkpoint, Graph, Scalar, StepSchedule, Tensor, Var,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Forward (global) search frames per clip.
    pub n_global_search: usize,
    /// Augmented views of the first frame searched backwards.
    pub m_views: usize,
    /// Forward crops used as references in the backward phase.
    pub k_backward_refs: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_heads: f64,
    pub weight_decay: f64,
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    /// Probability that a labeled sequence also supervises its forward frames.
    pub labeled_fraction: f64,
    pub forward_loss: bool,
    pub seed: u64,
    /// Reference crop side as a multiple of `sqrt(w h)`.
    pub template_factor: f64,
    /// Local search crop side as a multiple of `sqrt(w h)`.
    pub search_factor: f64,
    /// Maximum shift of the backward search window, as a fraction of its side.
    pub search_jitter: f64,
    /// Largest frame stride when sampling a clip.
    pub max_frame_gap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_global_search: 3,
            m_views: 2,
            k_backward_refs: 3,
            epochs: 20,
            steps_per_epoch: 125,
            batch_size: 8,
            lr_backbone: 5e-4,
            lr_heads: 1e-3,
            weight_decay: 1e-4,
            lr_drop_epoch: 16,
            lr_drop_factor: 0.1,
            labeled_fraction: 0.0,
            forward_loss: true,
            seed: 0,
            template_factor: 2.0,
            search_factor: 4.0,
            search_jitter: 0.25,
            max_frame_gap: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &crate::model::ModelConfig) -> Result<()> {
        if self.n_global_search < 1 {
            return invalid("n_global_search must be at least 1");
        }
        if self.m_views < 2 {
            return invalid("m_views must be at least 2");
        }
        if self.k_backward_refs < 1 || self.k_backward_refs > model.max_refs {
            return invalid(format!(
                "k_backward_refs {} must lie in [1, max_refs = {}]",
                self.k_backward_refs, model.max_refs
            ));
        }
        if self.batch_size < 1 || self.max_frame_gap < 1 {
            return invalid("batch_size and max_frame_gap must be positive");
        }
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return invalid("labeled_fraction must lie in [0, 1]");
        }
        if !(self.template_factor > 0.0 && self.search_factor > 0.0 && self.search_jitter >= 0.0) {
            return invalid("crop factors must be positive");
        }
        if self.lr_backbone < 0.0 || self.lr_heads < 0.0 || self.weight_decay < 0.0 {
            return invalid("learning rates and weight decay must be non-negative");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr_backbone: self.lr_backbone,
            lr_heads: self.lr_heads,
            weight_decay: self.weight_decay,
            ..Default::default()
        }
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule {
            drop_epoch: self.lr_drop_epoch,
            factor: self.lr_drop_factor,
        }
    }
}

/// One forward tracking step.
#[derive(Clone, Debug)]
pub struct ForwardStep {
    /// Window the full frame was resampled through.
    pub search_window: CropWindow,
    pub map: PredictionMap,
    /// Predicted box in global pixels.
    pub pseudo_box: BBox,
    /// Reference crop around the prediction.
    pub window: CropWindow,
    pub crop: Image,
    /// The prediction in crop pixels (centered).
    pub crop_box: BBox,
}

fn reference_crop(frame: &Image, b: &BBox, factor: f64, size: usize) -> (CropWindow, Reference) {
    let win = make_crop_window(b, factor, size);
    let image = crop_image(frame, &win);
    (
        win,
        Reference {
            image,
            bbox: global_to_crop(b, &win),
        },
    )
}

/// Global tracking over frames `1..=n_global_search` of `clip`, starting from
/// the frame-0 box. The context grows by one crop per step and is truncated
/// first-in first-out to `max_refs`, always keeping the frame-0 crop.
/// Labels past frame 0 are only read (as oracle hints) when present.
pub fn forward_phase<T: Scalar, P: Predictor<T>>(
    model: &P,
    g: &mut Graph<T>,
    clip: &SequenceSample,
    cfg: &TrainConfig,
) -> Result<Vec<ForwardStep>> {
    let n = cfg.n_global_search;
    if clip.len() < n + 1 {
        return invalid(format!("forward_phase: clip of {} frames needs {}", clip.len(), n + 1));
    }
    let mc = model.config().clone();
    let first = clip.frame(0);
    let (fw, fh) = (first.width() as f64, first.height() as f64);
    let (_, r0) = reference_crop(&first, &clip.init_box(), cfg.template_factor, mc.ref_size);
    let mut ctx = TargetContext { refs: vec![r0] };
    let mut prev = clip.init_box();
    let mut out = Vec::with_capacity(n);
    for t in 1..=n {
        let frame = clip.frame(t);
        let sw = CropWindow::full_frame(frame.width(), frame.height(), mc.search_size);
        let search = crop_image(&frame, &sw);
        let hint = clip.gt_at(t).map(|b| global_to_crop(&b, &sw));
        let map = model.predict(g, &ctx, &search, hint.as_ref())?;
        let decoded = map.values(g).decode(mc.search_size as f64);
        let mut pseudo = crop_to_global(&decoded, &sw).clip(fw, fh);
        if pseudo.is_empty() {
            pseudo = prev;
        }
        let (window, r) = reference_crop(&frame, &pseudo, cfg.template_factor, mc.ref_size);
        let step = ForwardStep {
            search_window: sw,
            map,
            pseudo_box: pseudo,
            window,
            crop: r.image.clone(),
            crop_box: r.bbox,
        };
        ctx.refs.push(r);
        if ctx.refs.len() > mc.max_refs {
            ctx.refs.remove(1);
        }
        prev = pseudo;
        out.push(step);
    }
    Ok(out)
}

/// Backward tracking outputs for one clip.
#[derive(Clone, Debug)]
pub struct BackwardOutput {
    /// Window of the first frame the views were cut from.
    pub search_window: CropWindow,
    pub views: Vec<View>,
    pub maps: Vec<PredictionMap>,
    /// Decoded predictions in view pixels.
    pub predicted: Vec<BBox>,
    /// Tracking loss per view; `None` when the view label is empty.
    pub terms: Vec<Option<Var>>,
}

/// Local tracking from the last `k_backward_refs` forward crops back onto
/// `m_views` augmented views of a jittered search crop of the first frame.
/// Each view is supervised by the transformed first-frame box.
#[allow(clippy::too_many_arguments)]
pub fn backward_phase<T: Scalar, P: Predictor<T>, R: Rng>(
    model: &P,
    g: &mut Graph<T>,
    init_frame: &Image,
    init_box: &BBox,
    forward: &[ForwardStep],
    cfg: &TrainConfig,
    aug: &AugConfig,
    loss: &LossConfig,
    rng: &mut R,
) -> Result<BackwardOutput> {
    if forward.is_empty() {
        return invalid("backward_phase: no forward crops");
    }
    let mc = model.config().clone();
    let k = cfg.k_backward_refs.min(forward.len()).min(mc.max_refs);
    let ctx = TargetContext {
        refs: forward[forward.len() - k..]
            .iter()
            .map(|s| Reference {
                image: s.crop.clone(),
                bbox: s.crop_box,
            })
            .collect(),
    };
    let base = make_crop_window(init_box, cfg.search_factor, mc.search_size);
    let j = cfg.search_jitter * base.side;
    let (jx, jy) = if j > 0.0 {
        (rng.gen_range(-j..=j), rng.gen_range(-j..=j))
    } else {
        (0.0, 0.0)
    };
    let win = CropWindow {
        cx: base.cx + jx,
        cy: base.cy + jy,
        ..base
    };
    let s = mc.search_size as f64;
    let img = crop_image(init_frame, &win);
    let mut label = global_to_crop(init_box, &win);
    let clipped = label.clip(s, s);
    if !clipped.is_empty() {
        label = clipped;
    }
    let views = sample_views(&img, &label, cfg.m_views, aug, rng);
    let mut maps = Vec::with_capacity(views.len());
    let mut predicted = Vec::with_capacity(views.len());
    let mut terms = Vec::with_capacity(views.len());
    for v in &views {
        let map = model.predict(g, &ctx, &v.image, Some(&v.bbox))?;
        predicted.push(map.values(g).decode(s).in_frame(v.bbox.frame));
        terms.push(tracking_loss_graph(g, &map, &v.bbox, s, loss)?);
        maps.push(map);
    }
    Ok(BackwardOutput {
        search_window: win,
        views,
        maps,
        predicted,
        terms,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SkipFlags {
    /// No embedding had both a positive and a negative.
    pub contrastive_skipped: bool,
    /// Tracking terms dropped for empty labels.
    pub empty_labels: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CycleBatchResult {
    /// Forward predictions per sequence, global pixels.
    pub forward_boxes: Vec<Vec<BBox>>,
    /// Backward predictions per sequence, view pixels.
    pub backward_boxes: Vec<Vec<BBox>>,
    pub loss_track: f64,
    pub loss_cont: f64,
    pub loss_all: f64,
    pub skip_flags: SkipFlags,
    pub num_track_terms: usize,
    pub num_forward_terms: usize,
    pub num_embeddings: usize,
    pub num_instances: usize,
    /// Augmentations drawn for every view, in batch order.
    pub aug_specs: Vec<Vec<AugSpec>>,
}

/// Picks `n + 1` frames with a common random stride.
pub fn sample_clip<R: Rng>(seq: &SequenceSample, n: usize, max_gap: usize, rng: &mut R) -> Result<SequenceSample> {
    if seq.len() < n + 1 {
        return invalid(format!("sequence `{}` has {} frames, need {}", seq.name, seq.len(), n + 1));
    }
    let gap_max = ((seq.len() - 1) / n).clamp(1, max_gap);
    let gap = rng.gen_range(1..=gap_max);
    let start = rng.gen_range(0..=seq.len() - 1 - n * gap);
    let idx: Vec<usize> = (0..=n).map(|i| start + i * gap).collect();
    Ok(seq.subsequence(&idx))
}

/// Builds the batch objective on `g` and returns its summary and the
/// `loss_all` node. `batch` holds clips of `n_global_search + 1` frames.
pub fn cycle_losses<T: Scalar, P: Predictor<T>, R: Rng>(
    model: &P,
    g: &mut Graph<T>,
    batch: &[SequenceSample],
    run: &RunConfig,
    rng: &mut R,
) -> Result<(CycleBatchResult, Var)> {
    if batch.is_empty() {
        return invalid("cycle_losses: empty batch");
    }
    let cfg = &run.train;
    let s = model.config().search_size as f64;
    let grid = model.config().grid();
    let mut res = CycleBatchResult::default();
    let mut terms = Vec::new();
    let mut embs = Vec::new();
    for (inst, clip) in batch.iter().enumerate() {
        let labeled = clip.is_labeled() && cfg.labeled_fraction > 0.0 && rng.gen_bool(cfg.labeled_fraction);
        let supervise_forward = labeled && cfg.forward_loss;
        // Learned models never see labels past the first frame of an
        // unlabeled clip; oracles get them as hints.
        let fclip = if labeled || model.uses_hints() {
            clip.clone()
        } else {
            clip.stripped()
        };
        let fwd = if supervise_forward {
            forward_phase(model, g, &fclip, cfg)?
        } else {
            let mut scratch = Graph::new();
            forward_phase(model, &mut scratch, &fclip, cfg)?
        };
        let bwd = backward_phase(model, g, &clip.frame(0), &clip.init_box(), &fwd, cfg, &run.aug, &run.loss, rng)?;
        for (v, (map, pred)) in bwd.maps.iter().zip(&bwd.predicted).enumerate() {
            let vector = mask_pool(g, map.tokens, pred, grid, s)?;
            embs.push(InstanceEmbedding {
                vector,
                instance_id: inst,
                view_id: v,
            });
        }
        for t in bwd.terms.iter() {
            match t {
                Some(t) => terms.push(*t),
                None => res.skip_flags.empty_labels += 1,
            }
        }
        if supervise_forward {
            for (t, step) in fwd.iter().enumerate() {
                let gt = global_to_crop(&clip.gt[t + 1], &step.search_window);
                match tracking_loss_graph(g, &step.map, &gt, s, &run.loss)? {
                    Some(term) => {
                        terms.push(term);
                        res.num_forward_terms += 1;
                    }
                    None => res.skip_flags.empty_labels += 1,
                }
                let vector = mask_pool(g, step.map.tokens, &gt, grid, s)?;
                embs.push(InstanceEmbedding {
                    vector,
                    instance_id: inst,
                    view_id: cfg.m_views + t,
                });
            }
        }
        res.forward_boxes.push(fwd.iter().map(|f| f.pseudo_box).collect());
        res.backward_boxes.push(bwd.predicted.clone());
        res.aug_specs.extend(bwd.views.iter().map(|v| v.specs.clone()));
    }
    res.num_track_terms = terms.len();
    res.num_embeddings = embs.len();
    res.num_instances = batch.len();
    let loss_track = if terms.is_empty() {
        g.constant(Tensor::scalar(T::zero()))
    } else {
        let parts = terms
            .iter()
            .map(|&t| g.reshape(t, vec![1, 1]))
            .collect::<Result<Vec<_>>>()?;
        let cat = g.concat_rows(&parts)?;
        g.mean(cat)
    };
    let loss_cont = if run.loss.use_contrastive {
        match contrastive_loss_graph(g, &embs, &run.loss)? {
            Some(l) => l,
            None => {
                res.skip_flags.contrastive_skipped = true;
                g.constant(Tensor::scalar(T::zero()))
            }
        }
    } else {
        g.constant(Tensor::scalar(T::zero()))
    };
    let loss_track = g.reshape(loss_track, vec![])?;
    let loss_cont = g.reshape(loss_cont, vec![])?;
    let loss_all = g.add(loss_track, loss_cont)?;
    res.loss_track = g.value(loss_track).item().as_f64();
    res.loss_cont = g.value(loss_cont).item().as_f64();
    res.loss_all = g.value(loss_all).item().as_f64();
    Ok((res, loss_all))
}

/// One optimizer update on a batch of clips.
pub fn train_step<T: Scalar, R: Rng>(
    model: &mut Tracker<T>,
    opt: &mut AdamW<T>,
    batch: &[SequenceSample],
    run: &RunConfig,
    lr_scale: f64,
    rng: &mut R,
) -> Result<CycleBatchResult> {
    let mut g = Graph::new();
    let (res, loss) = cycle_losses(&*model, &mut g, batch, run, rng)?;
    if !res.loss_all.is_finite() {
        let names: Vec<&str> = batch.iter().map(|c| c.name.as_str()).collect();
        return Err(Error::NonFiniteLoss(format!(
            "loss_track {} loss_cont {} on sequences {names:?}; augmentations {:?}",
            res.loss_track, res.loss_cont, res.aug_specs
        )));
    }
    g.backward(loss)?;
    model.params.zero_grad();
    model.params.accumulate_grads(&g);
    opt.step(&mut model.params, lr_scale)?;
    Ok(res)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub epoch: usize,
    pub loss_track: f64,
    pub loss_cont: f64,
    pub loss_all: f64,
    pub lr: f64,
}

/// JSON-lines log written next to a checkpoint.
pub fn log_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("log.jsonl")
}

pub fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

fn checkpoint_of(model: &Tracker<f32>, opt: &AdamW<f32>, run: &RunConfig, step: usize, epoch: usize, best: Option<f64>) -> Checkpoint {
    let mut tensors: Vec<(String, Tensor<f32>)> = model.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
    let (m, v) = opt.moments();
    for (p, t) in model.params.iter().zip(m) {
        tensors.push((format!("opt.m.{}", p.name), t.clone()));
    }
    for (p, t) in model.params.iter().zip(v) {
        tensors.push((format!("opt.v.{}", p.name), t.clone()));
    }
    Checkpoint {
        meta: serde_json::json!({
            "model_config": model.config(),
            "run_config": run,
            "step": step,
            "epoch": epoch,
            "opt_step": opt.step_count(),
            "best_loss": best,
        }),
        tensors,
    }
}

/// Rebuilds a tracker from a checkpoint's config and weights.
pub fn load_tracker(path: &Path) -> Result<(Tracker<f32>, Checkpoint)> {
    let ckpt = read_checkpoint(path)?;
    let cfg = serde_json::from_value(ckpt.meta["model_config"].clone())
        .map_err(|e| Error::Checkpoint(format!("model_config: {e}")))?;
    let mut model = Tracker::new(cfg)?;
    model.params.load_values(&ckpt.tensors)?;
    Ok((model, ckpt))
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64 + 1);
    rng
}

/// Sidecar checkpoint path, e.g. `run.ckpt` -> `run.best.ckpt`.
pub fn sibling(ckpt: &Path, tag: &str) -> PathBuf {
    let stem = ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ckpt.with_file_name(format!("{stem}.{tag}.ckpt"))
}

/// Full training run. Writes `out` after every epoch (plus per-epoch and
/// best copies) and appends one log line per step. With `resume`, training
/// restarts after the last completed epoch recorded in `out`.
pub fn train(run: &RunConfig, data: &[SequenceSample], out: &Path, resume: bool) -> Result<Vec<LogEntry>> {
    run.validate()?;
    if data.is_empty() {
        return invalid("train: empty dataset");
    }
    let cfg = &run.train;
    let mut model = Tracker::<f32>::new(run.model.clone())?;
    let mut opt = AdamW::new(cfg.optimizer(), &model.params);
    let mut start_epoch = 0;
    let mut best: Option<f64> = None;
    let lpath = log_path(out);
    let mut log = Vec::new();
    if resume && out.exists() {
        let (m, ckpt) = load_tracker(out)?;
        model = m;
        let get = |name: String| {
            ckpt.get(&name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing `{name}`")))
        };
        let ms = model.params.iter().map(|p| get(format!("opt.m.{}", p.name))).collect::<Result<Vec<_>>>()?;
        let vs = model.params.iter().map(|p| get(format!("opt.v.{}", p.name))).collect::<Result<Vec<_>>>()?;
        let opt_step = ckpt.meta["opt_step"].as_u64().unwrap_or(0);
        opt.restore(ms, vs, opt_step)?;
        start_epoch = ckpt.meta["epoch"].as_u64().unwrap_or(0) as usize;
        best = ckpt.meta["best_loss"].as_f64();
        let done = ckpt.meta["step"].as_u64().unwrap_or(0) as usize;
        if lpath.exists() {
            log = read_log(&lpath)?.into_iter().filter(|e| e.step < done).collect();
        }
    }
    let mut lf = std::io::BufWriter::new(std::fs::File::create(&lpath)?);
    for e in &log {
        writeln!(lf, "{}", serde_json::to_string(e)?)?;
    }
    lf.flush()?;
    if cfg.epochs == 0 || cfg.steps_per_epoch == 0 {
        write_checkpoint(out, &checkpoint_of(&model, &opt, run, 0, 0, best))?;
        return Ok(log);
    }
    let sched = cfg.schedule();
    for epoch in start_epoch..cfg.epochs {
        let scale = sched.scale(epoch);
        let mut sum = 0.0;
        for s in 0..cfg.steps_per_epoch {
            let step = epoch * cfg.steps_per_epoch + s;
            let mut rng = step_rng(cfg.seed, step);
            let batch = (0..cfg.batch_size)
                .map(|_| {
                    let seq = &data[rng.gen_range(0..data.len())];
                    sample_clip(seq, cfg.n_global_search, cfg.max_frame_gap, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let r = train_step(&mut model, &mut opt, &batch, run, scale, &mut rng)?;
            sum += r.loss_all;
            let entry = LogEntry {
                step,
                epoch,
                loss_track: r.loss_track,
                loss_cont: r.loss_cont,
                loss_all: r.loss_all,
                lr: cfg.lr_backbone * scale,
            };
            writeln!(lf, "{}", serde_json::to_string(&entry)?)?;
            lf.flush()?;
            log.push(entry);
        }
        let mean = sum / cfg.steps_per_epoch as f64;
        let improved = best.map_or(true, |b| mean < b);
        if improved {
            best = Some(mean);
        }
        let done = (epoch + 1) * cfg.steps_per_epoch;
        let ck = checkpoint_of(&model, &opt, run, done, epoch + 1, best);
        write_checkpoint(out, &ck)?;
        write_checkpoint(&sibling(out, &format!("epoch{:03}", epoch + 1)), &ck)?;
        if improved {
            write_checkpoint(&sibling(out, "best"), &ck)?;
        }
    }
    Ok(log)
}

/// Exponential moving average used to compare early and late losses.
pub fn smoothed(values: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = None;
    for &v in values {
        let next = match acc {
            None => v,
            Some(a) => alpha * v + (1.0 - alpha) * a,
        };
        acc = Some(next);
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GroundTruthOracle, ModelConfig};
    use crate::synth::{generate, scene_for, Preset};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            patch_size: 8,
            embed_dim: 16,
            depth: 1,
            num_heads: 2,
            ref_size: 16,
            search_size: 32,
            max_refs: 3,
            ..Default::default()
        }
    }

    fn tiny_run() -> RunConfig {
        let mut r = RunConfig {
            model: tiny_model(),
            ..Default::default()
        };
        r.train.batch_size = 2;
        r
    }

    fn clip(i: usize, n: usize) -> SequenceSample {
        generate("c", &scene_for(Preset::Easy, 5, i, n)).unwrap()
    }

    #[test]
    fn one_global_frame_gives_one_step() {
        let model = Tracker::<f32>::new(tiny_model()).unwrap();
        let mut cfg = TrainConfig::default();
        cfg.n_global_search = 1;
        let mut g = Graph::new();
        let steps = forward_phase(&model, &mut g, &clip(0, 4), &cfg).unwrap();
        assert_eq!(steps.len(), 1);
        assert!(steps[0].pseudo_box.is_valid());
    }

    #[test]
    fn oracle_forward_crops_center_on_truth() {
        let oracle = GroundTruthOracle { cfg: ModelConfig::default() };
        let c = clip(1, 5);
        let mut g = Graph::<f64>::new();
        let steps = forward_phase(&oracle, &mut g, &c, &TrainConfig::default()).unwrap();
        for (t, s) in steps.iter().enumerate() {
            let gt = c.gt[t + 1];
            assert!((s.window.cx - gt.cx).abs() < 1e-6 && (s.window.cy - gt.cy).abs() < 1e-6);
            assert!(crate::geometry::iou(&s.pseudo_box, &gt).unwrap() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn context_is_fifo_keeping_first() {
        // max_refs 2 with 3 forward steps still runs; references never exceed the cap
        let mut mc = tiny_model();
        mc.max_refs = 2;
        let model = Tracker::<f32>::new(mc).unwrap();
        let mut cfg = TrainConfig::default();
        cfg.k_backward_refs = 2;
        let mut g = Graph::new();
        assert_eq!(forward_phase(&model, &mut g, &clip(2, 5), &cfg).unwrap().len(), 3);
    }

    #[test]
    fn two_views_two_terms_and_bookkeeping() {
        let model = Tracker::<f32>::new(tiny_model()).unwrap();
        let run = tiny_run();
        let batch = vec![clip(0, 4), clip(1, 4)];
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (res, _) = cycle_losses(&model, &mut g, &batch, &run, &mut rng).unwrap();
        assert_eq!(res.num_track_terms, 4);
        assert_eq!(res.num_forward_terms, 0);
        assert_eq!(res.num_embeddings, 4);
        assert_eq!(res.num_instances, 2);
        assert_eq!(res.backward_boxes.iter().map(Vec::len).sum::<usize>(), 4);
        assert!(!res.skip_flags.contrastive_skipped);
    }

    #[test]
    fn labeled_fraction_one_adds_forward_terms() {
        let model = Tracker::<f32>::new(tiny_model()).unwrap();
        let mut run = tiny_run();
        run.train.labeled_fraction = 1.0;
        let batch = vec![clip(0, 4)];
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (res, _) = cycle_losses(&model, &mut g, &batch, &run, &mut rng).unwrap();
        assert_eq!(res.num_forward_terms, 3);
        assert_eq!(res.num_track_terms, 5);
        assert_eq!(res.num_embeddings, 5);
    }

    #[test]
    fn loss_all_is_sum_in_f64() {
        let model = Tracker::<f64>::new(tiny_model()).unwrap();
        let run = tiny_run();
        let batch = vec![clip(3, 4), clip(4, 4)];
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (res, _) = cycle_losses(&model, &mut g, &batch, &run, &mut rng).unwrap();
        assert_eq!(res.loss_all - (res.loss_track + res.loss_cont), 0.0);
        assert!(res.loss_cont > 0.0 && res.loss_track > 0.0);
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut model = Tracker::<f32>::new(tiny_model()).unwrap();
        let before = model.params.clone();
        let mut run = tiny_run();
        run.train.lr_backbone = 0.0;
        run.train.lr_heads = 0.0;
        let mut opt = AdamW::new(run.train.optimizer(), &model.params);
        let batch = vec![clip(0, 4), clip(1, 4)];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = train_step(&mut model, &mut opt, &batch, &run, 1.0, &mut rng).unwrap();
        assert!(r.loss_all.is_finite());
        for (a, b) in before.iter().zip(model.params.iter()) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
    }

    #[test]
    fn forward_scores_receive_no_gradient() {
        let model = Tracker::<f64>::new(tiny_model()).unwrap();
        let run = tiny_run();
        let c = clip(0, 4).stripped();
        let mut g = Graph::new();
        let fwd = forward_phase(&model, &mut g, &c, &run.train).unwrap();
        for s in &fwd {
            g.retain_grad(s.map.score);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bwd = backward_phase(&model, &mut g, &c.frame(0), &c.init_box(), &fwd, &run.train, &run.aug, &run.loss, &mut rng)
            .unwrap();
        let terms: Vec<Var> = bwd.terms.iter().flatten().copied().collect();
        let mut loss = terms[0];
        for &t in &terms[1..] {
            loss = g.add(loss, t).unwrap();
        }
        g.backward(loss).unwrap();
        for s in &fwd {
            let zero = g.grad(s.map.score).map_or(true, |t| t.data().iter().all(|&v| v == 0.0));
            assert!(zero);
        }
        assert!(g.param_grads().any(|(_, t)| t.data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn forward_is_unaffected_by_backward() {
        let model = Tracker::<f32>::new(tiny_model()).unwrap();
        let run = tiny_run();
        let c = clip(5, 4);
        let mut g1 = Graph::new();
        let alone: Vec<BBox> = forward_phase(&model, &mut g1, &c, &run.train)
            .unwrap()
            .iter()
            .map(|s| s.pseudo_box)
            .collect();
        let mut g2 = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (res, _) = cycle_losses(&model, &mut g2, &[c], &run, &mut rng).unwrap();
        assert_eq!(res.forward_boxes[0], alone);
    }

    #[test]
    fn oracle_cycle_on_identity_views_has_near_zero_tracking_loss() {
        let oracle = GroundTruthOracle { cfg: ModelConfig::default() };
        let mut run = RunConfig::default();
        run.aug = AugConfig::identity();
        run.train.search_jitter = 0.0;
        let batch: Vec<_> = (0..3).map(|i| clip(i, 4)).collect();
        let mut g = Graph::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (res, _) = cycle_losses(&oracle, &mut g, &batch, &run, &mut rng).unwrap();
        assert!(res.loss_track < 1e-3, "{}", res.loss_track);
    }

    #[test]
    fn view_order_does_not_change_tracking_loss() {
        let model = Tracker::<f64>::new(tiny_model()).unwrap();
        let run = tiny_run();
        let c = clip(6, 4).stripped();
        let mut scratch = Graph::new();
        let fwd = forward_phase(&model, &mut scratch, &c, &run.train).unwrap();
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bwd = backward_phase(&model, &mut g, &c.frame(0), &c.init_box(), &fwd, &run.train, &run.aug, &run.loss, &mut rng)
            .unwrap();
        let vals: Vec<f64> = bwd.terms.iter().flatten().map(|&t| g.value(t).item()).collect();
        let fwd_sum: f64 = vals.iter().sum();
        let rev_sum: f64 = vals.iter().rev().sum();
        assert!((fwd_sum - rev_sum).abs() < 1e-12);
    }

    #[test]
    fn clip_sampling_respects_bounds() {
        let c = clip(0, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let s = sample_clip(&c, 3, 3, &mut rng).unwrap();
            assert_eq!(s.len(), 4);
            assert!(s.is_labeled());
        }
        assert!(sample_clip(&clip(0, 3), 3, 1, &mut rng).is_err());
    }

    #[test]
    fn smoothing_is_an_ema() {
        assert_eq!(smoothed(&[1.0, 3.0], 0.5), vec![1.0, 2.0]);
    }
}
