//! Built-in numerical checks: finite-difference gradients for every graph op,
//! every loss and a tiny end-to-end tracker, plus box geometry against a
//! pixel-counting oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::{crop_to_global, giou, global_to_crop, iou, BBox, CropWindow};
use crate::image::Image;
use crate::losses::{
    contrastive_loss_graph, encode_gt, focal_loss_graph, mask_pool, regression_loss_graph, tracking_loss_graph,
    ContrastiveVariant, InstanceEmbedding, LossConfig,
};
use crate::model::{ModelConfig, PredictionMap, TargetContext, Tracker};
use crate::tensor::{Graph, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-6;
pub const GEOM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub err: f64,
    pub tol: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: impl Into<String>, err: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            passed: err.is_finite() && err <= tol,
            err,
            tol,
        }
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)` over whole gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-8)
}

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn eval_scalar(f: &Build, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Central-difference check of `f` with respect to every input element.
pub fn check_inputs(f: &Build, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let mut analytic = Vec::new();
    for (v, t) in vars.iter().zip(inputs) {
        match g.grad(*v) {
            Some(gr) => analytic.extend_from_slice(gr.data()),
            None => analytic.extend(std::iter::repeat(0.0).take(t.len())),
        }
    }
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut xs = inputs.to_vec();
    for k in 0..xs.len() {
        for i in 0..xs[k].len() {
            let x0 = xs[k].data()[i];
            xs[k].data_mut()[i] = x0 + FD_STEP;
            let hi = eval_scalar(f, &xs)?;
            xs[k].data_mut()[i] = x0 - FD_STEP;
            let lo = eval_scalar(f, &xs)?;
            xs[k].data_mut()[i] = x0;
            numeric.push((hi - lo) / (2.0 * FD_STEP));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_f64(shape.to_vec(), &v).expect("shape matches")
}

/// Reduces any output to a scalar with fixed random weights, so constant-sum
/// outputs (softmax) still have informative gradients.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(y).to_vec();
    let w = rand_tensor(&mut rng, &shape, -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, (f64, f64), Box<Build>)> {
    fn unary(f: fn(&mut Graph<f64>, Var) -> Result<Var>) -> Box<Build> {
        Box::new(move |g, v| {
            let y = f(g, v[0])?;
            weighted_sum(g, y, 1)
        })
    }
    fn binary(f: fn(&mut Graph<f64>, Var, Var) -> Result<Var>) -> Box<Build> {
        Box::new(move |g, v| {
            let y = f(g, v[0], v[1])?;
            weighted_sum(g, y, 2)
        })
    }
    let m23 = vec![vec![2, 3], vec![2, 3]];
    let pos = (0.5, 2.0);
    let any = (-1.5, 1.5);
    vec![
        ("add", m23.clone(), any, binary(|g, a, b| g.add(a, b))),
        ("add_row", vec![vec![3, 4], vec![4]], any, binary(|g, a, b| g.add_row(a, b))),
        ("sub", m23.clone(), any, binary(|g, a, b| g.sub(a, b))),
        ("mul", m23.clone(), any, binary(|g, a, b| g.mul(a, b))),
        ("div", m23.clone(), pos, binary(|g, a, b| g.div(a, b))),
        (
            "maximum",
            m23.clone(),
            any,
            binary(|g, a, b| {
                let b = g.add_scalar(b, 0.05);
                g.maximum(a, b)
            }),
        ),
        ("minimum", m23.clone(), any, binary(|g, a, b| g.minimum(a, b))),
        ("scale", vec![vec![5]], any, unary(|g, a| Ok(g.scale(a, -2.5)))),
        ("neg", vec![vec![5]], any, unary(|g, a| Ok(g.neg(a)))),
        ("add_scalar", vec![vec![5]], any, unary(|g, a| Ok(g.add_scalar(a, 0.7)))),
        ("rsub_scalar", vec![vec![5]], any, unary(|g, a| Ok(g.rsub_scalar(1.0, a)))),
        ("exp", vec![vec![5]], any, unary(|g, a| Ok(g.exp(a)))),
        ("log", vec![vec![5]], pos, unary(|g, a| Ok(g.log(a)))),
        ("sqrt", vec![vec![5]], pos, unary(|g, a| Ok(g.sqrt(a)))),
        ("powf", vec![vec![5]], pos, unary(|g, a| Ok(g.powf(a, 2.5)))),
        ("abs", vec![vec![5]], pos, unary(|g, a| {
            let n = g.neg(a);
            Ok(g.abs(n))
        })),
        ("sigmoid", vec![vec![5]], any, unary(|g, a| Ok(g.sigmoid(a)))),
        ("gelu", vec![vec![5]], any, unary(|g, a| Ok(g.gelu(a)))),
        ("clamp", vec![vec![8]], (-0.9, 0.9), unary(|g, a| Ok(g.clamp(a, -0.5, 0.5)))),
        ("sum", vec![vec![2, 3]], any, Box::new(|g, v| {
            let s = g.sum(v[0]);
            Ok(g.mul(s, s)?)
        })),
        ("mean", vec![vec![2, 3]], any, Box::new(|g, v| {
            let s = g.mean(v[0]);
            Ok(g.mul(s, s)?)
        })),
        ("softmax", vec![vec![3, 4]], any, unary(|g, a| Ok(g.softmax(a)))),
        ("masked_logsumexp", vec![vec![3, 3]], any, unary(|g, a| {
            g.masked_logsumexp(a, vec![true, true, false, false, true, true, true, false, true])
        })),
        ("layer_norm", vec![vec![3, 5], vec![5], vec![5]], any, Box::new(|g, v| {
            let y = g.layer_norm(v[0], v[1], v[2])?;
            weighted_sum(g, y, 3)
        })),
        ("normalize_rows", vec![vec![3, 4]], pos, unary(|g, a| g.normalize_rows(a))),
        ("matmul", vec![vec![2, 3], vec![3, 4]], any, binary(|g, a, b| g.matmul(a, b))),
        ("transpose", vec![vec![2, 3]], any, unary(|g, a| g.transpose(a))),
        ("reshape", vec![vec![2, 3]], any, unary(|g, a| g.reshape(a, vec![3, 2]))),
        ("slice_cols", vec![vec![3, 5]], any, unary(|g, a| g.slice_cols(a, 1, 3))),
        ("slice_rows", vec![vec![4, 2]], any, unary(|g, a| g.slice_rows(a, 1, 2))),
        ("concat_cols", vec![vec![2, 3], vec![2, 1]], any, binary(|g, a, b| g.concat_cols(&[a, b]))),
        ("concat_rows", vec![vec![2, 3], vec![1, 3]], any, binary(|g, a, b| g.concat_rows(&[a, b]))),
        ("gather", vec![vec![2, 3]], any, unary(|g, a| g.gather(a, vec![5, 0, 0, 3]))),
    ]
}

/// One gradient check per graph op.
pub fn op_gradient_checks() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut out = Vec::new();
    for (name, shapes, (lo, hi), f) in op_cases() {
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(&mut rng, s, lo, hi)).collect();
        let err = check_inputs(f.as_ref(), &inputs)?;
        out.push(CheckResult::new(format!("grad/op/{name}"), err, GRAD_TOL));
    }
    Ok(out)
}

fn map_from(g: &mut Graph<f64>, v: &[Var], grid: usize) -> PredictionMap {
    PredictionMap {
        grid,
        score: g.sigmoid(v[0]),
        size: g.sigmoid(v[1]),
        offset: g.sigmoid(v[2]),
        tokens: v[3],
    }
}

/// Gradient checks of each loss with respect to its head inputs.
pub fn loss_gradient_checks() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = LossConfig::default();
    let grid = 4;
    let frame = 32.0;
    let gt = BBox::new(13.0, 18.5, 9.0, 6.0);
    let heads = |rng: &mut ChaCha8Rng| {
        vec![
            rand_tensor(rng, &[grid * grid, 1], -2.0, 2.0),
            rand_tensor(rng, &[grid * grid, 2], -2.0, 2.0),
            rand_tensor(rng, &[grid * grid, 2], -2.0, 2.0),
            rand_tensor(rng, &[grid * grid, 5], -1.0, 1.0),
        ]
    };
    let mut out = Vec::new();

    let t = encode_gt(&gt, grid, frame);
    let focal: Box<Build> = {
        let (score, mask) = (t.score.clone(), t.pos_mask.clone());
        let cfg = cfg.clone();
        Box::new(move |g, v| {
            let p = g.sigmoid(v[0]);
            focal_loss_graph(g, p, &score, &mask, &cfg)
        })
    };
    let err = check_inputs(focal.as_ref(), &[rand_tensor(&mut rng, &[grid * grid, 1], -2.0, 2.0)])?;
    out.push(CheckResult::new("grad/loss/focal", err, GRAD_TOL));

    let reg: Box<Build> = {
        let cfg = cfg.clone();
        Box::new(move |g, v| {
            let p = g.sigmoid(v[0]);
            let gt = g.constant(Tensor::from_f64(vec![2, 4], &[0.4, 0.55, 0.3, 0.2, 0.6, 0.5, 0.25, 0.4])?);
            regression_loss_graph(g, p, gt, &cfg)
        })
    };
    let err = check_inputs(reg.as_ref(), &[rand_tensor(&mut rng, &[2, 4], -1.0, 1.0)])?;
    out.push(CheckResult::new("grad/loss/giou_l1", err, GRAD_TOL));

    let track: Box<Build> = {
        let cfg = cfg.clone();
        Box::new(move |g, v| {
            let pm = map_from(g, v, grid);
            Ok(tracking_loss_graph(g, &pm, &gt, frame, &cfg)?.expect("non-empty label"))
        })
    };
    let err = check_inputs(track.as_ref(), &heads(&mut rng))?;
    out.push(CheckResult::new("grad/loss/tracking", err, GRAD_TOL));

    let pool: Box<Build> = Box::new(move |g, v| {
        let p = mask_pool(g, v[0], &gt, grid, frame)?;
        weighted_sum(g, p, 4)
    });
    let err = check_inputs(pool.as_ref(), &[rand_tensor(&mut rng, &[grid * grid, 5], -1.0, 1.0)])?;
    out.push(CheckResult::new("grad/loss/mask_pool", err, GRAD_TOL));

    for (variant, tag) in [(ContrastiveVariant::Standard, "standard"), (ContrastiveVariant::AsWritten, "as_written")] {
        let mut c = cfg.clone();
        c.contrastive_variant = variant;
        c.tau = 0.5;
        let ids = [(0, 0), (0, 1), (1, 0), (1, 1), (2, 0)];
        let f: Box<Build> = Box::new(move |g, v| {
            let embs: Vec<InstanceEmbedding> = ids
                .iter()
                .enumerate()
                .map(|(k, &(i, w))| {
                    let row = g.slice_rows(v[0], k, 1)?;
                    Ok(InstanceEmbedding { vector: row, instance_id: i, view_id: w })
                })
                .collect::<Result<_>>()?;
            Ok(contrastive_loss_graph(g, &embs, &c)?.expect("anchors exist"))
        });
        let err = check_inputs(f.as_ref(), &[rand_tensor(&mut rng, &[5, 6], -1.0, 1.0)])?;
        out.push(CheckResult::new(format!("grad/loss/contrastive_{tag}"), err, GRAD_TOL));
    }
    Ok(out)
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        patch_size: 8,
        embed_dim: 8,
        depth: 1,
        num_heads: 2,
        ref_size: 16,
        search_size: 16,
        max_refs: 2,
        mlp_ratio: 2,
        init_std: 0.3,
        ..Default::default()
    }
}

fn tiny_image(rng: &mut ChaCha8Rng, side: usize) -> Image {
    let data: Vec<f32> = (0..side * side * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
    Image::from_raw(side, side, 3, data).expect("sized")
}

fn model_loss(model: &Tracker<f64>, g: &mut Graph<f64>, ctx: &TargetContext, search: &Image) -> Result<Var> {
    let cfg = LossConfig::default();
    let pm = model.forward(g, ctx, search)?;
    let gt = BBox::new(6.5, 9.0, 5.0, 4.0);
    let track = tracking_loss_graph(g, &pm, &gt, search.width() as f64, &cfg)?.expect("non-empty label");
    let pooled = mask_pool(g, pm.tokens, &gt, pm.grid, search.width() as f64)?;
    let sq = g.mul(pooled, pooled)?;
    let s = g.sum(sq);
    let s = g.scale(s, 0.1);
    g.add(track, s)
}

/// End-to-end check through a tiny tracker: one random direction over all
/// parameters plus a random subset of single coordinates.
pub fn model_gradient_checks() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut model = Tracker::<f64>::new(tiny_config())?;
    let r1 = tiny_image(&mut rng, 16);
    let r2 = tiny_image(&mut rng, 16);
    let search = tiny_image(&mut rng, 16);
    let mut ctx = TargetContext::new(r1, BBox::new(8.0, 8.0, 6.0, 5.0));
    ctx.refs.push(crate::model::Reference { image: r2, bbox: BBox::new(7.0, 9.0, 5.0, 6.0) });

    let mut g = Graph::new();
    let loss = model_loss(&model, &mut g, &ctx, &search)?;
    g.backward(loss)?;
    let mut grads: Vec<Tensor<f64>> = model.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
    for (id, gr) in g.param_grads() {
        grads[id.0].add_assign(gr);
    }
    let eval = |m: &Tracker<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let l = model_loss(m, &mut g, &ctx, &search)?;
        Ok(g.value(l).item())
    };

    let dirs: Vec<Tensor<f64>> = grads.iter().map(|t| rand_tensor(&mut rng, t.shape(), -1.0, 1.0)).collect();
    let analytic: f64 = grads.iter().zip(&dirs).map(|(g, d)| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>()).sum();
    let shift = |m: &mut Tracker<f64>, s: f64| {
        for (p, d) in m.params.iter_mut().zip(&dirs) {
            for (x, dx) in p.value.data_mut().iter_mut().zip(d.data()) {
                *x += s * dx;
            }
        }
    };
    shift(&mut model, FD_STEP);
    let hi = eval(&model)?;
    shift(&mut model, -2.0 * FD_STEP);
    let lo = eval(&model)?;
    shift(&mut model, FD_STEP);
    let numeric = (hi - lo) / (2.0 * FD_STEP);
    let mut out = vec![CheckResult::new(
        "grad/model/directional",
        relative_error(&[analytic], &[numeric]),
        GRAD_TOL,
    )];

    let (mut a, mut n) = (Vec::new(), Vec::new());
    let np = grads.len();
    for _ in 0..24 {
        let k = rng.gen_range(0..np);
        let i = rng.gen_range(0..grads[k].len());
        let x0 = model.params.iter().nth(k).expect("index").value.data()[i];
        let set = |m: &mut Tracker<f64>, v: f64| m.params.iter_mut().nth(k).expect("index").value.data_mut()[i] = v;
        set(&mut model, x0 + FD_STEP);
        let hi = eval(&model)?;
        set(&mut model, x0 - FD_STEP);
        let lo = eval(&model)?;
        set(&mut model, x0);
        a.push(grads[k].data()[i]);
        n.push((hi - lo) / (2.0 * FD_STEP));
    }
    out.push(CheckResult::new("grad/model/coordinates", relative_error(&a, &n), GRAD_TOL));
    Ok(out)
}

fn raster(b: [i64; 4]) -> impl Fn(i64, i64) -> bool {
    move |x, y| x >= b[0] && x < b[2] && y >= b[1] && y < b[3]
}

/// IoU and GIoU on integer boxes against unit-pixel counting, and the crop
/// coordinate round trip.
pub fn geometry_checks() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let rand_box = |rng: &mut ChaCha8Rng| {
        let (a, b) = (rng.gen_range(0..=64i64), rng.gen_range(0..=64i64));
        let (c, d) = (rng.gen_range(0..=64i64), rng.gen_range(0..=64i64));
        let (x1, x2) = (a.min(b), a.max(b).max(a.min(b) + 1));
        let (y1, y2) = (c.min(d), c.max(d).max(c.min(d) + 1));
        [x1, y1, x2, y2]
    };
    let (mut e_iou, mut e_giou) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (p, q) = (rand_box(&mut rng), rand_box(&mut rng));
        let (ip, iq) = (raster(p), raster(q));
        let hull = [p[0].min(q[0]), p[1].min(q[1]), p[2].max(q[2]), p[3].max(q[3])];
        let (mut inter, mut union, mut area_c) = (0u64, 0u64, 0u64);
        for y in hull[1]..hull[3] {
            for x in hull[0]..hull[2] {
                let (u, v) = (ip(x, y), iq(x, y));
                inter += (u && v) as u64;
                union += (u || v) as u64;
                area_c += 1;
            }
        }
        let want_iou = inter as f64 / union as f64;
        let want_giou = want_iou - (area_c - union) as f64 / area_c as f64;
        let to_box = |b: [i64; 4]| BBox::from_xyxy(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64);
        e_iou = e_iou.max((iou(&to_box(p), &to_box(q))? - want_iou).abs());
        e_giou = e_giou.max((giou(&to_box(p), &to_box(q))? - want_giou).abs());
    }
    let mut e_crop = 0.0f64;
    for _ in 0..1000 {
        let b = BBox::new(
            rng.gen_range(-50.0..300.0),
            rng.gen_range(-50.0..300.0),
            rng.gen_range(0.5..120.0),
            rng.gen_range(0.5..120.0),
        );
        let win = CropWindow {
            cx: rng.gen_range(0.0..256.0),
            cy: rng.gen_range(0.0..256.0),
            side: rng.gen_range(8.0..400.0),
            out_size: rng.gen_range(16..256),
        };
        let back = crop_to_global(&global_to_crop(&b, &win), &win);
        for (u, v) in [(back.cx, b.cx), (back.cy, b.cy), (back.w, b.w), (back.h, b.h)] {
            e_crop = e_crop.max((u - v).abs() / v.abs().max(1.0));
        }
    }
    Ok(vec![
        CheckResult::new("geometry/iou_raster", e_iou, GEOM_TOL),
        CheckResult::new("geometry/giou_raster", e_giou, GEOM_TOL),
        CheckResult::new("geometry/crop_round_trip", e_crop, GEOM_TOL),
    ])
}

pub fn run_all() -> Result<Vec<CheckResult>> {
    let mut out = op_gradient_checks()?;
    out.extend(loss_gradient_checks()?);
    out.extend(model_gradient_checks()?);
    out.extend(geometry_checks()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_is_scale_free() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        let e = relative_error(&[2.0], &[1.0]);
        assert!((e - 0.5).abs() < 1e-15);
        assert!((relative_error(&[2e3], &[1e3]) - e).abs() < 1e-15);
    }

    #[test]
    fn a_wrong_gradient_is_detected() {
        let f: Box<Build> = Box::new(|g, v| {
            let d = g.detach(v[0]);
            let y = g.mul(d, v[0])?;
            Ok(g.sum(y))
        });
        let x = Tensor::from_f64(vec![3], &[1.0, -2.0, 0.5]).unwrap();
        assert!(check_inputs(f.as_ref(), &[x]).unwrap() > 0.1);
    }

    #[test]
    fn all_op_gradients_pass() {
        for r in op_gradient_checks().unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn all_loss_gradients_pass() {
        for r in loss_gradient_checks().unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn tiny_model_gradients_pass() {
        for r in model_gradient_checks().unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn geometry_matches_raster_oracle() {
        for r in geometry_checks().unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }
}
