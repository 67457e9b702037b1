//! Dense building blocks with hand-written backward passes.

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::real::Real;
use crate::{PredictError, Result};

pub type Mat<F> = Array2<F>;

const LN_EPS: f64 = 1e-5;

/// `aᵀ b`
pub fn dot_tn<F: Real>(a: &Mat<F>, b: &Mat<F>) -> Mat<F> {
    a.t().dot(b)
}

/// `a bᵀ`
pub fn dot_nt<F: Real>(a: &Mat<F>, b: &Mat<F>) -> Mat<F> {
    a.dot(&b.t())
}

pub fn add_row<F: Real>(y: &mut Mat<F>, b: &Mat<F>) {
    *y += &b.row(0);
}

pub fn sum_rows<F: Real>(dy: &Mat<F>) -> Mat<F> {
    dy.sum_axis(Axis(0)).insert_axis(Axis(0))
}

pub struct LnCache<F> {
    xhat: Mat<F>,
    inv_std: Vec<F>,
}

/// Row-wise layer normalization with gain `g` and bias `b` (both 1×E).
pub fn layer_norm<F: Real>(x: &Mat<F>, g: &Mat<F>, b: &Mat<F>) -> (Mat<F>, LnCache<F>) {
    let n = F::lit(x.ncols() as f64);
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<F>() / n;
        let is = F::one() / (var + F::lit(LN_EPS)).sqrt();
        row.mapv_inplace(|v| v * is);
        inv_std.push(is);
    }
    let mut y = &xhat * &g.row(0);
    y += &b.row(0);
    (y, LnCache { xhat, inv_std })
}

pub fn layer_norm_bwd<F: Real>(c: &LnCache<F>, g: &Mat<F>, dy: &Mat<F>, dg: &mut Mat<F>, db: &mut Mat<F>) -> Mat<F> {
    *dg += &(dy * &c.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let n = F::lit(dy.ncols() as f64);
    let mut dx = dy * &g.row(0);
    for ((mut row, xh), &is) in dx.rows_mut().into_iter().zip(c.xhat.rows()).zip(&c.inv_std) {
        let mean_d = row.sum() / n;
        let mean_dx = row.iter().zip(xh.iter()).map(|(&d, &x)| d * x).sum::<F>() / n;
        Zip::from(&mut row).and(&xh).for_each(|d, &x| *d = (*d - mean_d - x * mean_dx) * is);
    }
    dx
}

fn gelu_parts<F: Real>(x: F) -> (F, F) {
    // tanh approximation; returns (value, derivative)
    let c = F::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = F::lit(0.044715);
    let half = F::lit(0.5);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (F::one() + F::lit(3.0) * k * x * x);
    (half * x * (F::one() + t), half * (F::one() + t) + half * x * (F::one() - t * t) * du)
}

pub fn gelu<F: Real>(x: &Mat<F>) -> Mat<F> {
    x.mapv(|v| gelu_parts(v).0)
}

pub fn gelu_bwd<F: Real>(x: &Mat<F>, dy: &Mat<F>) -> Mat<F> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|d, &v| *d *= gelu_parts(v).1);
    dx
}

pub fn softplus<F: Real>(z: F) -> F {
    if z > F::lit(30.0) {
        z
    } else if z < F::lit(-30.0) {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid<F: Real>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

/// Masked row softmax of `scores` in place; masked columns get exactly 0.
fn softmax_rows<F: Real>(scores: &mut Mat<F>, key_mask: Option<&[bool]>) {
    for mut row in scores.rows_mut() {
        let mut max = F::neg_infinity();
        for (j, &v) in row.iter().enumerate() {
            if key_mask.is_none_or(|m| m[j]) && v > max {
                max = v;
            }
        }
        let mut sum = F::zero();
        for (j, v) in row.iter_mut().enumerate() {
            if key_mask.is_none_or(|m| m[j]) {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = F::zero();
            }
        }
        row.mapv_inplace(|v| v / sum);
    }
}

fn check_attention_shapes(q: (usize, usize), k: (usize, usize), v: (usize, usize), mask: Option<&[bool]>) -> Result<()> {
    if q.1 != k.1 || k.0 != v.0 || q.1 == 0 || k.0 == 0 {
        return Err(PredictError::Shape(format!("attention Q {q:?}, K {k:?}, V {v:?}")));
    }
    if let Some(m) = mask {
        if m.len() != k.0 || !m.iter().any(|&b| b) {
            return Err(PredictError::Shape(format!("key mask of {} for {} keys (needs one open)", m.len(), k.0)));
        }
    }
    Ok(())
}

/// Attention weights `softmax(Q Kᵀ / √d)` with masked keys at zero.
pub fn attention_weights<F: Real>(q: ArrayView2<F>, k: ArrayView2<F>, key_mask: Option<&[bool]>) -> Mat<F> {
    let scale = F::one() / F::lit(q.ncols() as f64).sqrt();
    let mut s = q.dot(&k.t()) * scale;
    softmax_rows(&mut s, key_mask);
    s
}

/// Scaled dot-product attention.
pub fn attention<F: Real>(q: &Mat<F>, k: &Mat<F>, v: &Mat<F>, key_mask: Option<&[bool]>) -> Result<Mat<F>> {
    check_attention_shapes(q.dim(), k.dim(), v.dim(), key_mask)?;
    Ok(attention_weights(q.view(), k.view(), key_mask).dot(v))
}

/// Block of queries attending to a block of keys.
#[derive(Debug, Clone)]
pub struct AttnGroup {
    pub q: Range<usize>,
    pub kv: Range<usize>,
}

pub struct MhaWeights<'a, F> {
    pub wq: &'a Mat<F>,
    pub wk: &'a Mat<F>,
    pub wv: &'a Mat<F>,
    pub wo: &'a Mat<F>,
}

pub struct MhaGrads<'a, F> {
    pub wq: &'a mut Mat<F>,
    pub wk: &'a mut Mat<F>,
    pub wv: &'a mut Mat<F>,
    pub wo: &'a mut Mat<F>,
}

pub struct MhaCache<F> {
    q: Mat<F>,
    k: Mat<F>,
    v: Mat<F>,
    /// per group, per head
    probs: Vec<Vec<Mat<F>>>,
    concat: Mat<F>,
}

impl<F> MhaCache<F> {
    /// Attention weights of group `g`, head `h`.
    pub fn weights(&self, g: usize, h: usize) -> &Mat<F> {
        &self.probs[g][h]
    }
}

/// Multi-head attention. Head `h` uses columns `h*d..(h+1)*d` of the
/// projection matrices, `d = E / heads`. `key_mask` is indexed by key row.
pub fn mha<F: Real>(
    xq: &Mat<F>,
    xkv: &Mat<F>,
    w: &MhaWeights<F>,
    heads: usize,
    groups: &[AttnGroup],
    key_mask: Option<&[bool]>,
) -> Result<(Mat<F>, MhaCache<F>)> {
    let e = w.wq.ncols();
    if heads == 0 || e % heads != 0 || xq.ncols() != w.wq.nrows() || xkv.ncols() != w.wk.nrows() {
        return Err(PredictError::Shape(format!("mha: E={e}, heads={heads}, inputs {:?}/{:?}", xq.dim(), xkv.dim())));
    }
    let d = e / heads;
    let q = xq.dot(w.wq);
    let k = xkv.dot(w.wk);
    let v = xkv.dot(w.wv);
    let mut concat = Mat::zeros((xq.nrows(), e));
    let mut probs = Vec::with_capacity(groups.len());
    for g in groups {
        let mask = key_mask.map(|m| &m[g.kv.clone()]);
        let mut per_head = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = h * d..(h + 1) * d;
            let p = attention_weights(
                q.slice(s![g.q.clone(), cols.clone()]),
                k.slice(s![g.kv.clone(), cols.clone()]),
                mask,
            );
            let o = p.dot(&v.slice(s![g.kv.clone(), cols.clone()]));
            concat.slice_mut(s![g.q.clone(), cols]).assign(&o);
            per_head.push(p);
        }
        probs.push(per_head);
    }
    let out = concat.dot(w.wo);
    Ok((out, MhaCache { q, k, v, probs, concat }))
}

/// Returns `(dxq, dxkv)`; parameter gradients accumulate into `gr`.
pub fn mha_bwd<F: Real>(
    c: &MhaCache<F>,
    xq: &Mat<F>,
    xkv: &Mat<F>,
    w: &MhaWeights<F>,
    heads: usize,
    groups: &[AttnGroup],
    dout: &Mat<F>,
    gr: MhaGrads<F>,
) -> (Mat<F>, Mat<F>) {
    let e = w.wq.ncols();
    let d = e / heads;
    let scale = F::one() / F::lit(d as f64).sqrt();
    *gr.wo += &dot_tn(&c.concat, dout);
    let dconcat = dot_nt(dout, w.wo);
    let mut dq = Mat::zeros(c.q.dim());
    let mut dk = Mat::zeros(c.k.dim());
    let mut dv = Mat::zeros(c.v.dim());
    for (gi, g) in groups.iter().enumerate() {
        for h in 0..heads {
            let cols = h * d..(h + 1) * d;
            let p = &c.probs[gi][h];
            let doh = dconcat.slice(s![g.q.clone(), cols.clone()]);
            let vh = c.v.slice(s![g.kv.clone(), cols.clone()]);
            let dp = doh.dot(&vh.t());
            dv.slice_mut(s![g.kv.clone(), cols.clone()]).scaled_add(F::one(), &p.t().dot(&doh));
            let mut ds = &dp * p;
            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot: F = row.sum();
                Zip::from(&mut row).and(&prow).for_each(|x, &pv| *x = *x - pv * dot);
            }
            let kh = c.k.slice(s![g.kv.clone(), cols.clone()]);
            let qh = c.q.slice(s![g.q.clone(), cols.clone()]);
            dq.slice_mut(s![g.q.clone(), cols.clone()]).scaled_add(scale, &ds.dot(&kh));
            dk.slice_mut(s![g.kv.clone(), cols]).scaled_add(scale, &ds.t().dot(&qh));
        }
    }
    *gr.wq += &dot_tn(xq, &dq);
    *gr.wk += &dot_tn(xkv, &dk);
    *gr.wv += &dot_tn(xkv, &dv);
    let dxq = dot_nt(&dq, w.wq);
    let mut dxkv = dot_nt(&dk, w.wk);
    dxkv += &dot_nt(&dv, w.wv);
    (dxq, dxkv)
}

/// Sinusoidal positional encoding, `rows × dim`.
pub fn positional_encoding<F: Real>(rows: usize, dim: usize) -> Mat<F> {
    let mut pe = Mat::zeros((rows, dim));
    for pos in 0..rows {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            pe[[pos, i]] = F::lit(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}
