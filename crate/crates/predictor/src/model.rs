//! Clip execution-time model: instruction encoder, block encoder over the
//! context matrix, and MLP head.

use std::collections::HashMap;

use capsim_core::tokenizer::{vocab, EncodedClip, DEFAULT_L_CLIP_MAX, DEFAULT_L_TOKEN};
use ndarray::{s, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{self, AttnGroup, LnCache, Mat, MhaCache, MhaGrads, MhaWeights};
use crate::real::{Precision, Real};
use crate::{PredictError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub heads: usize,
    /// Depth of both the instruction encoder and the block encoder.
    pub layers: usize,
    pub ffn_multiplier: usize,
    pub l_token: usize,
    pub l_clip_max: usize,
    /// Context-matrix rows.
    pub m: usize,
    /// Hidden widths of the head; `None` means a single hidden layer of `embed_dim`.
    pub mlp_hidden: Option<Vec<usize>>,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 32,
            heads: 2,
            layers: 2,
            ffn_multiplier: 4,
            l_token: DEFAULT_L_TOKEN,
            l_clip_max: DEFAULT_L_CLIP_MAX,
            m: 194,
            mlp_hidden: None,
            seed: 0,
            precision: Precision::Double,
        }
    }
}

impl ModelConfig {
    /// The large configuration: E=128, four heads, four layers.
    pub fn large() -> Self {
        ModelConfig { embed_dim: 128, heads: 4, layers: 4, ..ModelConfig::default() }
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.mlp_hidden.clone().unwrap_or_else(|| vec![self.embed_dim])
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.embed_dim;
        if e == 0 || self.heads == 0 || e % self.heads != 0 {
            return Err(PredictError::Config(format!("embed_dim {e} not divisible by heads {}", self.heads)));
        }
        if self.ffn_multiplier == 0 || self.l_token < 3 || self.l_clip_max == 0 || self.m == 0 {
            return Err(PredictError::Config("ffn_multiplier, l_clip_max and m must be >= 1, l_token >= 3".into()));
        }
        if self.hidden().contains(&0) {
            return Err(PredictError::Config("mlp hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LayerIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    emb: usize,
    inst: Vec<LayerIdx>,
    block: Vec<LayerIdx>,
    /// (weight, bias) per head layer; the last maps to one output.
    head: Vec<(usize, usize)>,
}

#[derive(Clone, Copy)]
enum Init {
    Embedding,
    Xavier,
    Zeros,
    Ones,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn layer(&mut self, prefix: &str, e: usize, f: usize) -> LayerIdx {
        LayerIdx {
            wq: self.add(format!("{prefix}.attn.wq"), (e, e), Init::Xavier),
            wk: self.add(format!("{prefix}.attn.wk"), (e, e), Init::Xavier),
            wv: self.add(format!("{prefix}.attn.wv"), (e, e), Init::Xavier),
            wo: self.add(format!("{prefix}.attn.wo"), (e, e), Init::Xavier),
            ln1_g: self.add(format!("{prefix}.ln1.gain"), (1, e), Init::Ones),
            ln1_b: self.add(format!("{prefix}.ln1.bias"), (1, e), Init::Zeros),
            w1: self.add(format!("{prefix}.ffn.w1"), (e, f), Init::Xavier),
            b1: self.add(format!("{prefix}.ffn.b1"), (1, f), Init::Zeros),
            w2: self.add(format!("{prefix}.ffn.w2"), (f, e), Init::Xavier),
            b2: self.add(format!("{prefix}.ffn.b2"), (1, e), Init::Zeros),
            ln2_g: self.add(format!("{prefix}.ln2.gain"), (1, e), Init::Ones),
            ln2_b: self.add(format!("{prefix}.ln2.bias"), (1, e), Init::Zeros),
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Builder) {
    let e = cfg.embed_dim;
    let f = e * cfg.ffn_multiplier;
    let mut b = Builder { names: Vec::new(), shapes: Vec::new(), inits: Vec::new() };
    let emb = b.add("embedding".into(), (vocab().len(), e), Init::Embedding);
    let inst = (0..cfg.layers).map(|l| b.layer(&format!("inst.{l}"), e, f)).collect();
    let block = (0..cfg.layers).map(|l| b.layer(&format!("block.{l}"), e, f)).collect();
    let mut head = Vec::new();
    let mut width = e;
    let hidden = cfg.hidden();
    for (i, &h) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
        let w = b.add(format!("head.{i}.weight"), (width, h), Init::Xavier);
        let bias = b.add(format!("head.{i}.bias"), (1, h), Init::Zeros);
        head.push((w, bias));
        width = h;
    }
    (Layout { emb, inst, block, head }, b)
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub names: Vec<String>,
    pub tensors: Vec<Mat<F>>,
}

impl<F: Real> Params<F> {
    pub fn zeros_like(&self) -> Vec<Mat<F>> {
        self.tensors.iter().map(|t| Mat::zeros(t.dim())).collect()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

pub type Grads<F> = Vec<Mat<F>>;

/// A clip reduced to its distinct instructions, trimmed to the longest
/// real token length.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// `unique × width` token indices.
    tokens: Vec<usize>,
    width: usize,
    unique: usize,
    /// Instruction position → unique row.
    map: Vec<usize>,
    key_mask: Vec<bool>,
    context: Vec<usize>,
    pub label: f64,
}

impl Prepared {
    pub fn n_inst(&self) -> usize {
        self.map.len()
    }

    pub fn unique(&self) -> usize {
        self.unique
    }
}

struct LayerCache<F> {
    xq: Mat<F>,
    xkv: Option<Mat<F>>,
    mha: MhaCache<F>,
    ln1: LnCache<F>,
    y1: Mat<F>,
    f_pre: Mat<F>,
    f_act: Mat<F>,
    ln2: LnCache<F>,
}

/// Activations kept for the backward pass.
pub struct Forward<F> {
    inst: Vec<LayerCache<F>>,
    block: Vec<LayerCache<F>>,
    head_in: Vec<Mat<F>>,
    head_pre: Vec<Mat<F>>,
    z: F,
    pub prediction: F,
}

impl<F> Forward<F> {
    /// Block-encoder attention weights of `layer`, `head` (M × N).
    pub fn context_attention(&self, layer: usize, head: usize) -> Option<&Mat<F>> {
        self.block.get(layer).map(|c| c.mha.weights(0, head))
    }
}

#[derive(Debug, Clone)]
pub struct Model<F: Real> {
    pub config: ModelConfig,
    pub params: Params<F>,
    /// Multiplies the softplus output; fixed, not trained.
    pub output_scale: F,
    layout: Layout,
    pe: Mat<F>,
}

impl<F: Real> Model<F> {
    pub fn new(config: ModelConfig) -> Result<Model<F>> {
        config.validate()?;
        let (layout, b) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tensors = b
            .shapes
            .iter()
            .zip(&b.inits)
            .map(|(&(r, c), init)| match init {
                Init::Zeros => Mat::zeros((r, c)),
                Init::Ones => Mat::ones((r, c)),
                Init::Embedding => Mat::from_shape_fn((r, c), |_| F::lit(rng.gen_range(-1.0..1.0))),
                Init::Xavier => {
                    let a = (6.0 / (r + c) as f64).sqrt();
                    Mat::from_shape_fn((r, c), |_| F::lit(rng.gen_range(-a..a)))
                }
            })
            .collect();
        let pe = nn::positional_encoding(config.l_clip_max, config.embed_dim);
        Ok(Model { config, params: Params { names: b.names, tensors }, output_scale: F::one(), layout, pe })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes.
    pub fn from_parts(config: ModelConfig, params: Params<F>, output_scale: F) -> Result<Model<F>> {
        config.validate()?;
        let (layout, b) = build_layout(&config);
        if params.names != b.names {
            return Err(PredictError::Shape("parameter names do not match the configuration".into()));
        }
        for ((name, t), &shape) in params.names.iter().zip(&params.tensors).zip(&b.shapes) {
            if t.dim() != shape {
                return Err(PredictError::Shape(format!("{name}: {:?}, expected {shape:?}", t.dim())));
            }
        }
        let pe = nn::positional_encoding(config.l_clip_max, config.embed_dim);
        Ok(Model { config, params, output_scale, layout, pe })
    }

    /// Expected parameter names and shapes for a configuration.
    pub fn layout_of(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
        let (_, b) = build_layout(config);
        b.names.into_iter().zip(b.shapes).collect()
    }

    pub fn prepare(&self, clip: &EncodedClip) -> Result<Prepared> {
        let cfg = &self.config;
        let shape_err = |m: String| Err(PredictError::Shape(format!("clip {}@{}: {m}", clip.interval_id, clip.start_idx)));
        if clip.n_inst == 0 || clip.n_inst > cfg.l_clip_max {
            return shape_err(format!("{} instructions, limit {}", clip.n_inst, cfg.l_clip_max));
        }
        if clip.l_token != cfg.l_token || clip.tokens.len() != clip.n_inst * clip.l_token {
            return shape_err(format!("l_token {} vs model {}", clip.l_token, cfg.l_token));
        }
        if clip.context.len() != cfg.m {
            return shape_err(format!("{} context rows, model expects {}", clip.context.len(), cfg.m));
        }
        let v = vocab().len();
        if clip.tokens.iter().chain(&clip.context).any(|&t| t as usize >= v) {
            return shape_err("token index outside vocabulary".into());
        }
        let pad = vocab().pad_index();
        let width = (0..clip.n_inst)
            .map(|i| clip.instruction(i).iter().rposition(|&t| t != pad).map_or(1, |p| p + 1))
            .max()
            .unwrap_or(1);
        let mut seen: HashMap<&[u16], usize> = HashMap::new();
        let mut tokens = Vec::new();
        let mut map = Vec::with_capacity(clip.n_inst);
        for i in 0..clip.n_inst {
            let row = &clip.instruction(i)[..width];
            let next = seen.len();
            let u = *seen.entry(row).or_insert_with(|| {
                tokens.extend(row.iter().map(|&t| t as usize));
                next
            });
            map.push(u);
        }
        let key_mask = tokens.iter().map(|&t| t != pad as usize).collect();
        Ok(Prepared {
            unique: seen.len(),
            tokens,
            width,
            map,
            key_mask,
            context: clip.context.iter().map(|&t| t as usize).collect(),
            label: clip.label,
        })
    }

    fn p(&self, i: usize) -> &Mat<F> {
        &self.params.tensors[i]
    }

    fn mha_weights(&self, li: &LayerIdx) -> MhaWeights<'_, F> {
        MhaWeights { wq: self.p(li.wq), wk: self.p(li.wk), wv: self.p(li.wv), wo: self.p(li.wo) }
    }

    fn gather(&self, rows: &[usize]) -> Mat<F> {
        let emb = self.p(self.layout.emb);
        let mut out = Mat::zeros((rows.len(), emb.ncols()));
        for (mut dst, &r) in out.rows_mut().into_iter().zip(rows) {
            dst.assign(&emb.row(r));
        }
        out
    }

    fn layer_fwd(
        &self,
        li: &LayerIdx,
        xq: Mat<F>,
        xkv: Option<Mat<F>>,
        groups: &[AttnGroup],
        mask: Option<&[bool]>,
    ) -> Result<(Mat<F>, LayerCache<F>)> {
        let kv = xkv.as_ref().unwrap_or(&xq);
        let (a, mha) = nn::mha(&xq, kv, &self.mha_weights(li), self.config.heads, groups, mask)?;
        let h1 = &xq + &a;
        let (y1, ln1) = nn::layer_norm(&h1, self.p(li.ln1_g), self.p(li.ln1_b));
        let mut f_pre = y1.dot(self.p(li.w1));
        nn::add_row(&mut f_pre, self.p(li.b1));
        let f_act = nn::gelu(&f_pre);
        let mut f = f_act.dot(self.p(li.w2));
        nn::add_row(&mut f, self.p(li.b2));
        let h2 = &y1 + &f;
        let (y2, ln2) = nn::layer_norm(&h2, self.p(li.ln2_g), self.p(li.ln2_b));
        Ok((y2, LayerCache { xq, xkv, mha, ln1, y1, f_pre, f_act, ln2 }))
    }

    /// Returns `(dxq, dxkv)`; for self-attention layers `dxkv` is already
    /// folded into `dxq` and returned as `None`.
    fn layer_bwd(&self, li: &LayerIdx, c: &LayerCache<F>, dy: &Mat<F>, groups: &[AttnGroup], g: &mut Grads<F>) -> (Mat<F>, Option<Mat<F>>) {
        let (mut dgain, mut dbias) = (std::mem::take(&mut g[li.ln2_g]), std::mem::take(&mut g[li.ln2_b]));
        let dh2 = nn::layer_norm_bwd(&c.ln2, self.p(li.ln2_g), dy, &mut dgain, &mut dbias);
        g[li.ln2_g] = dgain;
        g[li.ln2_b] = dbias;

        g[li.w2] += &nn::dot_tn(&c.f_act, &dh2);
        g[li.b2] += &nn::sum_rows(&dh2);
        let df_act = nn::dot_nt(&dh2, self.p(li.w2));
        let df_pre = nn::gelu_bwd(&c.f_pre, &df_act);
        g[li.w1] += &nn::dot_tn(&c.y1, &df_pre);
        g[li.b1] += &nn::sum_rows(&df_pre);
        let mut dy1 = dh2;
        dy1 += &nn::dot_nt(&df_pre, self.p(li.w1));

        let (mut dgain, mut dbias) = (std::mem::take(&mut g[li.ln1_g]), std::mem::take(&mut g[li.ln1_b]));
        let dh1 = nn::layer_norm_bwd(&c.ln1, self.p(li.ln1_g), &dy1, &mut dgain, &mut dbias);
        g[li.ln1_g] = dgain;
        g[li.ln1_b] = dbias;

        let mut wq = std::mem::take(&mut g[li.wq]);
        let mut wk = std::mem::take(&mut g[li.wk]);
        let mut wv = std::mem::take(&mut g[li.wv]);
        let mut wo = std::mem::take(&mut g[li.wo]);
        let kv = c.xkv.as_ref().unwrap_or(&c.xq);
        let (dxq_attn, dxkv) = nn::mha_bwd(
            &c.mha,
            &c.xq,
            kv,
            &self.mha_weights(li),
            self.config.heads,
            groups,
            &dh1,
            MhaGrads { wq: &mut wq, wk: &mut wk, wv: &mut wv, wo: &mut wo },
        );
        g[li.wq] = wq;
        g[li.wk] = wk;
        g[li.wv] = wv;
        g[li.wo] = wo;
        let mut dxq = dh1;
        dxq += &dxq_attn;
        if c.xkv.is_some() {
            (dxq, Some(dxkv))
        } else {
            dxq += &dxkv;
            (dxq, None)
        }
    }

    fn inst_groups(p: &Prepared) -> Vec<AttnGroup> {
        (0..p.unique)
            .map(|u| AttnGroup { q: u * p.width..(u + 1) * p.width, kv: u * p.width..(u + 1) * p.width })
            .collect()
    }

    pub fn forward(&self, p: &Prepared) -> Result<Forward<F>> {
        let groups = Self::inst_groups(p);
        let mut x = self.gather(&p.tokens);
        let mut inst = Vec::with_capacity(self.layout.inst.len());
        for li in &self.layout.inst {
            let (y, c) = self.layer_fwd(li, x, None, &groups, Some(&p.key_mask))?;
            x = y;
            inst.push(c);
        }
        let e = self.config.embed_dim;
        let mut tp = Mat::zeros((p.n_inst(), e));
        for (i, &u) in p.map.iter().enumerate() {
            let mut row = tp.row_mut(i);
            row.assign(&x.row(u * p.width));
            row += &self.pe.row(i);
        }

        let m = p.context.len();
        let cross = [AttnGroup { q: 0..m, kv: 0..p.n_inst() }];
        let mut c = self.gather(&p.context);
        let mut block = Vec::with_capacity(self.layout.block.len());
        for li in &self.layout.block {
            let (y, cache) = self.layer_fwd(li, c, Some(tp.clone()), &cross, None)?;
            c = y;
            block.push(cache);
        }

        let mut head_in = Vec::new();
        let mut head_pre = Vec::new();
        let mut h = c;
        let last = self.layout.head.len() - 1;
        for (k, &(w, b)) in self.layout.head.iter().enumerate() {
            let mut pre = h.dot(self.p(w));
            nn::add_row(&mut pre, self.p(b));
            head_in.push(h);
            h = if k < last { nn::gelu(&pre) } else { pre.clone() };
            head_pre.push(pre);
        }
        let z = h.sum() / F::lit(h.len() as f64);
        let prediction = self.output_scale * nn::softplus(z);
        if !prediction.is_finite() || prediction <= F::zero() {
            return Err(PredictError::NonFinite(format!("prediction {prediction}")));
        }
        Ok(Forward { inst, block, head_in, head_pre, z, prediction })
    }

    pub fn predict(&self, clip: &EncodedClip) -> Result<F> {
        Ok(self.forward(&self.prepare(clip)?)?.prediction)
    }

    /// Gradient of `dpred · prediction` with respect to every parameter.
    pub fn backward(&self, p: &Prepared, fw: &Forward<F>, dpred: F) -> Grads<F> {
        let mut g = self.params.zeros_like();
        let m = p.context.len();
        let dz = dpred * self.output_scale * nn::sigmoid(fw.z);
        let mut dh = Mat::from_elem((m, 1), dz / F::lit(m as f64));
        let last = self.layout.head.len() - 1;
        for k in (0..=last).rev() {
            let (w, b) = self.layout.head[k];
            let dpre = if k < last { nn::gelu_bwd(&fw.head_pre[k], &dh) } else { dh };
            g[w] += &nn::dot_tn(&fw.head_in[k], &dpre);
            g[b] += &nn::sum_rows(&dpre);
            dh = nn::dot_nt(&dpre, self.p(w));
        }

        let cross = [AttnGroup { q: 0..m, kv: 0..p.n_inst() }];
        let mut dc = dh;
        let mut dtp = Mat::zeros((p.n_inst(), self.config.embed_dim));
        for (li, cache) in self.layout.block.iter().zip(&fw.block).rev() {
            let (dq, dkv) = self.layer_bwd(li, cache, &dc, &cross, &mut g);
            dtp += &dkv.expect("cross layer");
            dc = dq;
        }
        let emb = self.layout.emb;
        for (r, &t) in p.context.iter().enumerate() {
            let mut row = g[emb].row_mut(t);
            row += &dc.row(r);
        }

        let mut dx = Mat::zeros((p.tokens.len(), self.config.embed_dim));
        for (i, &u) in p.map.iter().enumerate() {
            let mut row = dx.row_mut(u * p.width);
            row += &dtp.row(i);
        }
        let groups = Self::inst_groups(p);
        for (li, cache) in self.layout.inst.iter().zip(&fw.inst).rev() {
            dx = self.layer_bwd(li, cache, &dx, &groups, &mut g).0;
        }
        for (r, &t) in p.tokens.iter().enumerate() {
            let mut row = g[emb].row_mut(t);
            row += &dx.row(r);
        }
        g
    }

    /// REP vector of every distinct instruction of a prepared clip, before
    /// positional encoding (`unique × E`).
    pub fn instruction_vectors(&self, p: &Prepared) -> Result<Mat<F>> {
        let groups = Self::inst_groups(p);
        let mut x = self.gather(&p.tokens);
        for li in &self.layout.inst {
            x = self.layer_fwd(li, x, None, &groups, Some(&p.key_mask))?.0;
        }
        Ok(x.select(Axis(0), &(0..p.unique).map(|u| u * p.width).collect::<Vec<_>>()))
    }

    /// Positional encoding row `i`.
    pub fn positional_row(&self, i: usize) -> Mat<F> {
        self.pe.slice(s![i..i + 1, ..]).to_owned()
    }
}
