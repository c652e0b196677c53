//! Joint reference/search transformer tracker with anchor-free heads.
//!
//! Reference crops and the search frame are patch-embedded, concatenated into
//! one token sequence and run through pre-norm self-attention blocks. The
//! heads read only the search positions and produce a center score map, a
//! normalized size map and a sub-cell offset map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::BBox;
use crate::image::Image;
use crate::tensor::{Graph, ParamGroup, ParamId, ParamStore, Scalar, Tensor, Var};

const PIXEL_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const PIXEL_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub ref_size: usize,
    pub search_size: usize,
    pub max_refs: usize,
    pub mlp_ratio: usize,
    /// Reference slots share positional and segment embeddings, which makes
    /// the output invariant to reference order.
    pub shared_ref_slots: bool,
    pub init_std: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            embed_dim: 64,
            depth: 4,
            num_heads: 4,
            ref_size: 64,
            search_size: 128,
            max_refs: 3,
            mlp_ratio: 4,
            shared_ref_slots: true,
            init_std: 0.02,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || self.ref_size % p != 0 || self.search_size % p != 0 {
            return invalid(format!(
                "ref_size {} and search_size {} must be multiples of patch_size {p}",
                self.ref_size, self.search_size
            ));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return invalid(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.depth == 0 || self.max_refs == 0 || self.mlp_ratio == 0 {
            return invalid("depth, max_refs and mlp_ratio must be positive");
        }
        Ok(())
    }

    pub fn ref_tokens(&self) -> usize {
        (self.ref_size / self.patch_size).pow(2)
    }

    pub fn search_tokens(&self) -> usize {
        self.grid().pow(2)
    }

    /// Side of the search-frame cell grid.
    pub fn grid(&self) -> usize {
        self.search_size / self.patch_size
    }
}

/// One reference crop with the target box in crop pixels.
#[derive(Clone, Debug)]
pub struct Reference {
    pub image: Image,
    pub bbox: BBox,
}

/// Ordered references conditioning a prediction.
#[derive(Clone, Debug, Default)]
pub struct TargetContext {
    pub refs: Vec<Reference>,
}

impl TargetContext {
    pub fn new(image: Image, bbox: BBox) -> Self {
        Self {
            refs: vec![Reference { image, bbox }],
        }
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }
}

/// Head outputs on the graph. `tokens` are the final search tokens.
#[derive(Clone, Copy, Debug)]
pub struct PredictionMap {
    pub grid: usize,
    /// `[grid*grid, 1]` in `[0, 1]`.
    pub score: Var,
    /// `[grid*grid, 2]` width/height as a fraction of the search frame.
    pub size: Var,
    /// `[grid*grid, 2]` sub-cell offsets in `[0, 1)`.
    pub offset: Var,
    /// `[grid*grid, D]`.
    pub tokens: Var,
}

impl PredictionMap {
    pub fn values<T: Scalar>(&self, g: &Graph<T>) -> MapValues {
        let f = |v: Var| g.value(v).data().iter().map(|x| x.as_f64()).collect();
        MapValues {
            grid: self.grid,
            score: f(self.score),
            size: f(self.size),
            offset: f(self.offset),
        }
    }
}

/// Detached head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct MapValues {
    pub grid: usize,
    pub score: Vec<f64>,
    pub size: Vec<f64>,
    pub offset: Vec<f64>,
}

impl MapValues {
    /// Row-major index of the maximal score; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.score.iter().enumerate() {
            if s > self.score[best] {
                best = i;
            }
        }
        best
    }

    /// Box at the argmax cell in pixels of a `frame_size` square search frame.
    /// Sizes are floored at one pixel so the result is never empty.
    pub fn decode(&self, frame_size: f64) -> BBox {
        let i = self.argmax();
        let (row, col) = ((i / self.grid) as f64, (i % self.grid) as f64);
        let stride = frame_size / self.grid as f64;
        BBox::new(
            (col + self.offset[2 * i]) * stride,
            (row + self.offset[2 * i + 1]) * stride,
            (self.size[2 * i] * frame_size).max(1.0),
            (self.size[2 * i + 1] * frame_size).max(1.0),
        )
    }
}

/// Anything that maps a target context and a search frame to head outputs.
pub trait Predictor<T: Scalar> {
    fn config(&self) -> &ModelConfig;

    /// `hint` is the true box in search pixels when the caller knows it.
    /// Learned models ignore it; ground-truth oracles use it.
    fn predict(
        &self,
        g: &mut Graph<T>,
        ctx: &TargetContext,
        search: &Image,
        hint: Option<&BBox>,
    ) -> Result<PredictionMap>;

    /// Whether `predict` reads the `hint` box. Only test oracles do.
    fn uses_hints(&self) -> bool {
        false
    }

    /// Forward without keeping a graph.
    fn predict_values(&self, ctx: &TargetContext, search: &Image, hint: Option<&BBox>) -> Result<MapValues> {
        let mut g = Graph::new();
        let pm = self.predict(&mut g, ctx, search, hint)?;
        Ok(pm.values(&g))
    }
}

#[derive(Clone, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Block {
    ln1: Norm,
    qkv: Linear,
    proj: Linear,
    ln2: Norm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
struct Layout {
    patch: Linear,
    pos_ref: ParamId,
    pos_search: ParamId,
    seg_ref: ParamId,
    seg_search: ParamId,
    slots: Vec<ParamId>,
    box_emb: ParamId,
    blocks: Vec<Block>,
    norm: Norm,
    score: [Linear; 2],
    size: [Linear; 2],
    offset: [Linear; 2],
}

/// Tracker parameters plus architecture.
#[derive(Clone, Debug)]
pub struct Tracker<T> {
    cfg: ModelConfig,
    pub params: ParamStore<T>,
    layout: Layout,
}

impl<T: Scalar> Tracker<T> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut ps = ParamStore::new();
        let d = cfg.embed_dim;
        let std = cfg.init_std;
        let bb = ParamGroup::Backbone;
        let hd = ParamGroup::Head;
        let pdim = cfg.patch_size * cfg.patch_size * 3;

        let linear = |ps: &mut ParamStore<T>, name: &str, i: usize, o: usize, group, rng: &mut ChaCha8Rng| Linear {
            w: ps.add_trunc_normal(format!("{name}.w"), &[i, o], std, group, rng),
            b: ps.add(format!("{name}.b"), Tensor::zeros(&[o]), group),
        };
        let norm = |ps: &mut ParamStore<T>, name: &str| Norm {
            g: ps.add(format!("{name}.g"), Tensor::ones(&[d]), bb),
            b: ps.add(format!("{name}.b"), Tensor::zeros(&[d]), bb),
        };

        let patch = linear(&mut ps, "patch_embed", pdim, d, bb, &mut rng);
        let pos_ref = ps.add_trunc_normal("pos.ref", &[cfg.ref_tokens(), d], std, bb, &mut rng);
        let pos_search = ps.add_trunc_normal("pos.search", &[cfg.search_tokens(), d], std, bb, &mut rng);
        let seg_ref = ps.add_trunc_normal("seg.ref", &[d], std, bb, &mut rng);
        let seg_search = ps.add_trunc_normal("seg.search", &[d], std, bb, &mut rng);
        let slots = if cfg.shared_ref_slots {
            Vec::new()
        } else {
            (0..cfg.max_refs)
                .map(|i| ps.add_trunc_normal(format!("slot.{i}"), &[d], std, bb, &mut rng))
                .collect()
        };
        let box_emb = ps.add_trunc_normal("box_emb", &[d], std, bb, &mut rng);
        let hidden = d * cfg.mlp_ratio;
        let blocks = (0..cfg.depth)
            .map(|l| {
                let p = format!("blocks.{l}");
                Block {
                    ln1: norm(&mut ps, &format!("{p}.ln1")),
                    qkv: linear(&mut ps, &format!("{p}.attn.qkv"), d, 3 * d, bb, &mut rng),
                    proj: linear(&mut ps, &format!("{p}.attn.proj"), d, d, bb, &mut rng),
                    ln2: norm(&mut ps, &format!("{p}.ln2")),
                    fc1: linear(&mut ps, &format!("{p}.mlp.fc1"), d, hidden, bb, &mut rng),
                    fc2: linear(&mut ps, &format!("{p}.mlp.fc2"), hidden, d, bb, &mut rng),
                }
            })
            .collect();
        let norm_out = norm(&mut ps, "norm");
        let mut head = |name: &str, out: usize| {
            [
                linear(&mut ps, &format!("head.{name}.fc1"), d, d, hd, &mut rng),
                linear(&mut ps, &format!("head.{name}.fc2"), d, out, hd, &mut rng),
            ]
        };
        let score = head("score", 1);
        let size = head("size", 2);
        let offset = head("offset", 2);
        // Low initial center confidence keeps the focal loss well scaled.
        ps.get_mut(score[1].b).value = Tensor::full(&[1], T::of(-2.19));

        Ok(Self {
            cfg,
            params: ps,
            layout: Layout {
                patch,
                pos_ref,
                pos_search,
                seg_ref,
                seg_search,
                slots,
                box_emb,
                blocks,
                norm: norm_out,
                score,
                size,
                offset,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    /// Same architecture, values converted to another float type.
    pub fn cast<U: Scalar>(&self) -> Tracker<U> {
        Tracker {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    fn linear(&self, g: &mut Graph<T>, x: Var, l: &Linear) -> Result<Var> {
        let w = g.param(&self.params, l.w);
        let b = g.param(&self.params, l.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    fn norm(&self, g: &mut Graph<T>, x: Var, n: &Norm) -> Result<Var> {
        let gm = g.param(&self.params, n.g);
        let b = g.param(&self.params, n.b);
        g.layer_norm(x, gm, b)
    }

    /// Patch tokens for one frame. `slot` is `None` for the search frame and
    /// the reference index otherwise; reference boxes mark the tokens whose
    /// patch center falls inside them.
    pub fn embed_frame(&self, g: &mut Graph<T>, img: &Image, slot: Option<(usize, &BBox)>) -> Result<Var> {
        let size = if slot.is_some() {
            self.cfg.ref_size
        } else {
            self.cfg.search_size
        };
        if img.channels() != 3 {
            return invalid(format!("embed_frame: expected 3 channels, got {}", img.channels()));
        }
        if img.width() != img.height() {
            return invalid(format!("embed_frame: non-square image {}x{}", img.width(), img.height()));
        }
        if img.width() != size {
            return invalid(format!("embed_frame: expected {size}px frame, got {}", img.width()));
        }
        let p = self.cfg.patch_size;
        let n = size / p;
        let pdim = p * p * 3;
        let mut patches = Vec::with_capacity(n * n * pdim);
        for py in 0..n {
            for px in 0..n {
                for dy in 0..p {
                    for dx in 0..p {
                        for c in 0..3 {
                            let v = (img.get(px * p + dx, py * p + dy, c) - PIXEL_MEAN[c]) / PIXEL_STD[c];
                            patches.push(T::of(v as f64));
                        }
                    }
                }
            }
        }
        let x = g.constant(Tensor::new(vec![n * n, pdim], patches)?);
        let mut tok = self.linear(g, x, &self.layout.patch)?;
        let ly = &self.layout;
        let (pos, seg) = match slot {
            Some(_) => (ly.pos_ref, ly.seg_ref),
            None => (ly.pos_search, ly.seg_search),
        };
        let pos = g.param(&self.params, pos);
        tok = g.add(tok, pos)?;
        let seg = g.param(&self.params, seg);
        tok = g.add_row(tok, seg)?;
        if let Some((i, bbox)) = slot {
            if let Some(&s) = ly.slots.get(i) {
                let s = g.param(&self.params, s);
                tok = g.add_row(tok, s)?;
            }
            let mask: Vec<T> = (0..n * n)
                .map(|k| {
                    let cx = ((k % n) as f64 + 0.5) * p as f64;
                    let cy = ((k / n) as f64 + 0.5) * p as f64;
                    if bbox.contains(cx, cy) {
                        T::one()
                    } else {
                        T::zero()
                    }
                })
                .collect();
            let mask = g.constant(Tensor::new(vec![n * n, 1], mask)?);
            let e = g.param(&self.params, ly.box_emb);
            let e = g.reshape(e, vec![1, self.cfg.embed_dim])?;
            let add = g.matmul(mask, e)?;
            tok = g.add(tok, add)?;
        }
        Ok(tok)
    }

    fn block(&self, g: &mut Graph<T>, x: Var, b: &Block) -> Result<Var> {
        let d = self.cfg.embed_dim;
        let nh = self.cfg.num_heads;
        let dh = d / nh;
        let h = self.norm(g, x, &b.ln1)?;
        let qkv = self.linear(g, h, &b.qkv)?;
        let mut heads = Vec::with_capacity(nh);
        for i in 0..nh {
            let q = g.slice_cols(qkv, i * dh, dh)?;
            let k = g.slice_cols(qkv, d + i * dh, dh)?;
            let v = g.slice_cols(qkv, 2 * d + i * dh, dh)?;
            let kt = g.transpose(k)?;
            let s = g.matmul(q, kt)?;
            let s = g.scale(s, 1.0 / (dh as f64).sqrt());
            let a = g.softmax(s);
            heads.push(g.matmul(a, v)?);
        }
        let o = g.concat_cols(&heads)?;
        let o = self.linear(g, o, &b.proj)?;
        let x = g.add(x, o)?;
        let h = self.norm(g, x, &b.ln2)?;
        let h = self.linear(g, h, &b.fc1)?;
        let h = g.gelu(h);
        let h = self.linear(g, h, &b.fc2)?;
        g.add(x, h)
    }

    fn head(&self, g: &mut Graph<T>, x: Var, h: &[Linear; 2]) -> Result<Var> {
        let y = self.linear(g, x, &h[0])?;
        let y = g.gelu(y);
        let y = self.linear(g, y, &h[1])?;
        Ok(g.sigmoid(y))
    }

    pub fn forward(&self, g: &mut Graph<T>, ctx: &TargetContext, search: &Image) -> Result<PredictionMap> {
        if ctx.is_empty() {
            return Err(Error::Invalid("forward: empty target context".into()));
        }
        if ctx.len() > self.cfg.max_refs {
            return invalid(format!("forward: {} references exceed max_refs {}", ctx.len(), self.cfg.max_refs));
        }
        let mut parts = Vec::with_capacity(ctx.len() + 1);
        for (i, r) in ctx.refs.iter().enumerate() {
            parts.push(self.embed_frame(g, &r.image, Some((i, &r.bbox)))?);
        }
        parts.push(self.embed_frame(g, search, None)?);
        let mut x = g.concat_rows(&parts)?;
        for b in &self.layout.blocks {
            x = self.block(g, x, b)?;
        }
        x = self.norm(g, x, &self.layout.norm)?;
        let ns = self.cfg.search_tokens();
        let tokens = g.slice_rows(x, ctx.len() * self.cfg.ref_tokens(), ns)?;
        Ok(PredictionMap {
            grid: self.cfg.grid(),
            score: self.head(g, tokens, &self.layout.score)?,
            size: self.head(g, tokens, &self.layout.size)?,
            offset: self.head(g, tokens, &self.layout.offset)?,
            tokens,
        })
    }
}

impl<T: Scalar> Predictor<T> for Tracker<T> {
    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn predict(&self, g: &mut Graph<T>, ctx: &TargetContext, search: &Image, _hint: Option<&BBox>) -> Result<PredictionMap> {
        self.forward(g, ctx, search)
    }
}

/// Emits the perfect head outputs for the hinted box: one-hot score at the
/// box's cell, exact size and offset. Tokens are per-patch mean colors.
#[derive(Clone, Debug)]
pub struct GroundTruthOracle {
    pub cfg: ModelConfig,
}

impl<T: Scalar> Predictor<T> for GroundTruthOracle {
    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn uses_hints(&self) -> bool {
        true
    }

    fn predict(&self, g: &mut Graph<T>, ctx: &TargetContext, search: &Image, hint: Option<&BBox>) -> Result<PredictionMap> {
        if ctx.is_empty() {
            return Err(Error::Invalid("forward: empty target context".into()));
        }
        let b = hint.ok_or_else(|| Error::Invalid("ground-truth oracle needs a hint box".into()))?;
        let grid = self.cfg.grid();
        let frame = search.width() as f64;
        let t = crate::losses::encode_gt(b, grid, frame);
        let n = grid * grid;
        let mut score = vec![T::zero(); n];
        if let Some(c) = t.center {
            score[c] = T::one();
        }
        let cvt = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<_>>();
        let p = search.width() / grid;
        let mut tokens = Vec::with_capacity(n * 3);
        for k in 0..n {
            let (r, c) = (k / grid, k % grid);
            for ch in 0..3 {
                let mut s = 0.0f64;
                for y in r * p..(r + 1) * p {
                    for x in c * p..(c + 1) * p {
                        s += search.get(x, y, ch) as f64;
                    }
                }
                tokens.push(T::of(1.0 + s / (p * p) as f64));
            }
        }
        Ok(PredictionMap {
            grid,
            score: g.constant(Tensor::new(vec![n, 1], score)?),
            size: g.constant(Tensor::new(vec![n, 2], cvt(&t.size))?),
            offset: g.constant(Tensor::new(vec![n, 2], cvt(&t.offset))?),
            tokens: g.constant(Tensor::new(vec![n, 3], tokens)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            patch_size: 8,
            embed_dim: 16,
            depth: 2,
            num_heads: 2,
            ref_size: 16,
            search_size: 32,
            max_refs: 3,
            ..Default::default()
        }
    }

    fn noise_image(size: usize, seed: u64) -> Image {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..size * size * 3).map(|_| rng.gen::<f32>()).collect();
        Image::from_raw(size, size, 3, data).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            search_size: 100,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            num_heads: 3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn default_model_is_desk_scale() {
        let m = Tracker::<f32>::new(ModelConfig::default()).unwrap();
        let n = m.num_params();
        assert!((150_000..300_000).contains(&n), "{n} params");
    }

    #[test]
    fn token_counts() {
        let cfg = ModelConfig::default();
        let m = Tracker::<f32>::new(cfg).unwrap();
        let mut g = Graph::new();
        let r = m.embed_frame(&mut g, &noise_image(64, 1), Some((0, &BBox::new(32., 32., 16., 16.)))).unwrap();
        assert_eq!(g.shape(r), &[16, 64]);
        let s = m.embed_frame(&mut g, &noise_image(128, 2), None).unwrap();
        assert_eq!(g.shape(s), &[64, 64]);
        let s2 = m.embed_frame(&mut g, &noise_image(128, 2), None).unwrap();
        assert_eq!(g.value(s), g.value(s2));
    }

    #[test]
    fn embed_rejects_bad_images() {
        let m = Tracker::<f32>::new(ModelConfig::default()).unwrap();
        let mut g = Graph::new();
        assert!(m.embed_frame(&mut g, &Image::new(128, 64, 3), None).is_err());
        assert!(m.embed_frame(&mut g, &Image::new(128, 128, 1), None).is_err());
    }

    #[test]
    fn output_shapes_for_one_and_three_refs() {
        let m = Tracker::<f32>::new(ModelConfig::default()).unwrap();
        let r = Reference {
            image: noise_image(64, 3),
            bbox: BBox::new(32., 32., 32., 32.),
        };
        for k in [1, 3] {
            let ctx = TargetContext { refs: vec![r.clone(); k] };
            let mut g = Graph::new();
            let pm = m.forward(&mut g, &ctx, &noise_image(128, 4)).unwrap();
            assert_eq!(g.shape(pm.score), &[64, 1]);
            assert_eq!(g.shape(pm.size), &[64, 2]);
            assert_eq!(g.shape(pm.offset), &[64, 2]);
            assert!(g.value(pm.score).data().iter().all(|&s| (0.0..=1.0).contains(&s)));
        }
        let mut g = Graph::new();
        assert!(m.forward(&mut g, &TargetContext::default(), &noise_image(128, 4)).is_err());
        let ctx = TargetContext { refs: vec![r; 4] };
        assert!(m.forward(&mut g, &ctx, &noise_image(128, 4)).is_err());
    }

    #[test]
    fn gradient_reaches_reference_and_search_embeddings() {
        let m = Tracker::<f64>::new(tiny_cfg()).unwrap();
        let ctx = TargetContext::new(noise_image(16, 5), BBox::new(8., 8., 8., 8.));
        let mut g = Graph::new();
        let pm = m.forward(&mut g, &ctx, &noise_image(32, 6)).unwrap();
        let loss = g.sum(pm.score);
        g.backward(loss).unwrap();
        let mut store = m.params.clone();
        store.accumulate_grads(&g);
        for name in ["pos.ref", "pos.search", "seg.ref", "seg.search", "box_emb", "patch_embed.w"] {
            let id = store.find(name).unwrap();
            let gn: f64 = store.get(id).grad.data().iter().map(|x| x * x).sum();
            assert!(gn > 0.0, "{name} got no gradient");
        }
    }

    #[test]
    fn reference_order_does_not_matter_with_shared_slots() {
        let m = Tracker::<f64>::new(tiny_cfg()).unwrap();
        let a = Reference {
            image: noise_image(16, 7),
            bbox: BBox::new(8., 8., 6., 10.),
        };
        let b = Reference {
            image: noise_image(16, 8),
            bbox: BBox::new(6., 9., 8., 8.),
        };
        let c = Reference {
            image: noise_image(16, 9),
            bbox: BBox::new(10., 7., 4., 4.),
        };
        let s = noise_image(32, 10);
        let v1 = m
            .predict_values(&TargetContext { refs: vec![a.clone(), b.clone(), c.clone()] }, &s, None)
            .unwrap();
        let v2 = m.predict_values(&TargetContext { refs: vec![c, a, b] }, &s, None).unwrap();
        for (x, y) in v1.score.iter().zip(&v2.score).chain(v1.size.iter().zip(&v2.size)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_examples() {
        let grid = 8;
        let mut v = MapValues {
            grid,
            score: vec![0.0; 64],
            size: vec![0.25; 128],
            offset: vec![0.5; 128],
        };
        v.score[3 * 8 + 5] = 1.0;
        let b = v.decode(128.0);
        assert_eq!((b.cx, b.cy, b.w, b.h), (88.0, 56.0, 32.0, 32.0));
        v.score = vec![0.3; 64];
        assert_eq!(v.argmax(), 0);
        v.score = vec![0.0; 64];
        assert!(v.decode(128.0).is_valid());
    }
}
